//! Target-type attribute masking with a learnable token.
//!
//! A fixed fraction of target nodes is selected uniformly without
//! replacement and their feature rows are replaced by the mask token. The
//! mask rate is either constant or linearly scheduled across epochs.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

/// Which rows to mask, reproducible from the seed that drew them.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    pub rate: f64,
    pub masked_ids: Vec<usize>,
    pub seed: u64,
}

/// Mask rate at epoch `t` of `total`: constant, or linear from `rate` to
/// `rate_final` when a final rate is configured.
pub fn scheduled_rate(rate: f64, rate_final: Option<f64>, t: usize, total: usize) -> f64 {
    match rate_final {
        Some(rf) if total > 1 => rate + (rf - rate) * (t as f64 / (total - 1) as f64),
        Some(rf) => rf,
        None => rate,
    }
}

/// Choose round(rate * n_target) node ids uniformly without replacement.
pub fn plan_mask(n_target: usize, rate: f64, master_seed: u64, epoch: u64) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("mask rate {rate} outside [0, 1]")));
    }
    let k = (rate * n_target as f64).round() as usize;
    let mut ids: Vec<usize> = (0..n_target).collect();
    let mut rng = rng_for(master_seed, Stream::Mask, epoch);
    ids.shuffle(&mut rng);
    let mut masked: Vec<usize> = ids.into_iter().take(k).collect();
    masked.sort_unstable();
    Ok(MaskPlan {
        rate,
        masked_ids: masked,
        seed: master_seed,
    })
}

/// Replace the rows in `plan.masked_ids` with `token`; all other rows are
/// copied bit-identically. The input is untouched.
pub fn mask_features(
    features: &Array2<f64>,
    plan: &MaskPlan,
    token: &Array2<f64>,
) -> Result<Array2<f64>> {
    if token.dim() != (1, features.ncols()) {
        return Err(Error::InvalidData(format!(
            "mask token shape {:?} does not match feature dim {}",
            token.dim(),
            features.ncols()
        )));
    }
    let mut masked = features.clone();
    for &i in &plan.masked_ids {
        masked.row_mut(i).assign(&token.row(0));
    }
    Ok(masked)
}

/// Column indicator (n x 1) of the masked rows; used to route mask-token
/// gradients on the tape.
pub fn mask_indicator(n_target: usize, plan: &MaskPlan) -> Array2<f64> {
    let mut ind = Array2::zeros((n_target, 1));
    for &i in &plan.masked_ids {
        ind[[i, 0]] = 1.0;
    }
    ind
}

/// Features with masked rows zeroed out (the constant part of the masked
/// matrix; token rows are added back via the indicator).
pub fn zero_masked_rows(features: &Array2<f64>, plan: &MaskPlan) -> Array2<f64> {
    let mut out = features.clone();
    for &i in &plan.masked_ids {
        out.row_mut(i).fill(0.0);
    }
    out
}
