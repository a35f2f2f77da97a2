//! Training losses: the InfoNCE contrastive objective over generated
//! negatives, the scaled cosine reconstruction error in two variants, the
//! scalar focal loss, and their weighted combination.
//!
//! Cosine similarity is the similarity measure throughout. The InfoNCE
//! denominator ranges over the negative set only by default; including the
//! positive term is a config switch. The reconstruction error is computed
//! over masked nodes only. Negative cosine values are clamped to 1e-6, and
//! every logarithm argument is floored at 1e-6.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::pnsg::NegativeBatch;
use crate::tape::{NodeId, Tape};

/// Added under the square root when normalizing rows; keeps cosines exact
/// to ~1e-12 for unit-scale rows.
const NORM_EPS: f64 = 1e-12;

/// Floor for cosine clamping and logarithm arguments.
pub const COS_FLOOR: f64 = 1e-6;

/// Reconstruction-error form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsceVariant {
    /// (1-c)^delta * log(1-c): non-monotone, with an interior minimum.
    Literal,
    /// (1-c)^delta * (-log c): down-weights easy rows, zero only at c = 1.
    Focal,
}

impl EsceVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "literal" => Ok(EsceVariant::Literal),
            "focal" => Ok(EsceVariant::Focal),
            other => Err(Error::Config(format!("unknown esce variant '{other}'"))),
        }
    }
}

/// Per-component losses, their weights, and the weighted total.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l_elbo: f64,
    pub l_pnsm: f64,
    pub l_esce: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// total = alpha * l_elbo + beta * l_pnsm + gamma * l_esce.
pub fn total_loss(
    l_elbo: f64,
    l_pnsm: f64,
    l_esce: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> LossBreakdown {
    LossBreakdown {
        l_elbo,
        l_pnsm,
        l_esce,
        total: alpha * l_elbo + beta * l_pnsm + gamma * l_esce,
        alpha,
        beta,
        gamma,
    }
}

/// InfoNCE over (anchor, positive, negatives): mean over anchors of
/// -log( exp(sim(h_u, h_u+)/tau) / sum_k exp(sim(h_u, neg_k)/tau) ).
///
/// Negatives enter as constants; gradients flow through anchor and positive
/// only. A constant log-sum-exp shift keeps large 1/tau values finite.
pub fn info_nce(
    tape: &mut Tape,
    anchor: NodeId,
    positive: NodeId,
    negatives: &NegativeBatch,
    tau: f64,
    denominator_includes_positive: bool,
) -> Result<NodeId> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature {tau} must be > 0")));
    }
    if negatives.samples.nrows() == 0 {
        return Err(Error::Config("empty negative set".into()));
    }
    assert_eq!(
        tape.value(anchor).dim(),
        tape.value(positive).dim(),
        "info_nce: anchor/positive shapes differ"
    );
    let n = tape.value(anchor).nrows();

    let anchor_n = tape.l2_normalize_rows(anchor, NORM_EPS);
    let positive_n = tape.l2_normalize_rows(positive, NORM_EPS);
    let sim_pos = tape.row_dot(anchor_n, positive_n);
    let pos_logits = tape.scale(sim_pos, 1.0 / tau);

    // negatives are constants: normalize as plain values
    let mut neg_norm = negatives.samples.clone();
    for mut row in neg_norm.rows_mut() {
        let r = (row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        row.mapv_inplace(|v| v / r);
    }
    let neg_t = tape.leaf(neg_norm.t().to_owned());
    let sims = tape.matmul(anchor_n, neg_t);
    let logits = tape.scale(sims, 1.0 / tau);

    // constant per-row shift for a numerically stable log-sum-exp
    let m = negatives.samples.nrows();
    let mut shift = Array2::zeros((n, 1));
    for i in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..m {
            mx = mx.max(tape.value(logits)[[i, j]]);
        }
        if denominator_includes_positive {
            mx = mx.max(tape.value(pos_logits)[[i, 0]]);
        }
        shift[[i, 0]] = mx;
    }
    let shift_wide = tape.leaf(Array2::from_shape_fn((n, m), |(i, _)| shift[[i, 0]]));
    let shift_col = tape.leaf(shift.clone());

    let shifted = tape.sub(logits, shift_wide);
    let exps = tape.exp(shifted);
    let mut denom = tape.sum_rows(exps);
    if denominator_includes_positive {
        let pos_shifted = tape.sub(pos_logits, shift_col);
        let pos_exp = tape.exp(pos_shifted);
        denom = tape.add(denom, pos_exp);
    }
    let log_denom_raw = tape.ln(denom);
    let log_denom = tape.add(log_denom_raw, shift_col);

    let neg_pos = tape.scale(pos_logits, -1.0);
    let per_anchor = tape.add(neg_pos, log_denom);
    Ok(tape.mean_all(per_anchor))
}

/// ESCE loss node plus the masked rows that had to be skipped for having a
/// zero-norm original or reconstruction.
pub struct EsceOutcome {
    pub loss: NodeId,
    pub skipped: Vec<usize>,
}

/// Reconstruction error over the masked node set. With
/// c_i = cos(x_i, x_hat_i) clamped to 1e-6 when negative:
/// literal is mean (1-c)^delta * log(max(1-c, 1e-6));
/// focal is mean (1-c)^delta * (-log(max(c, 1e-6))).
pub fn esce(
    tape: &mut Tape,
    x: &Array2<f64>,
    x_hat: NodeId,
    masked_ids: &[usize],
    delta: f64,
    variant: EsceVariant,
) -> Result<EsceOutcome> {
    if delta < 1.0 {
        return Err(Error::Config(format!("esce delta {delta} must be >= 1")));
    }
    if masked_ids.is_empty() {
        return Err(Error::InvalidData("esce: empty masked set".into()));
    }
    assert_eq!(
        tape.value(x_hat).dim(),
        x.dim(),
        "esce: reconstruction shape differs from input"
    );

    let mut kept = Vec::with_capacity(masked_ids.len());
    let mut skipped = Vec::new();
    for &i in masked_ids {
        let x_norm: f64 = x.row(i).iter().map(|v| v * v).sum();
        let xh_norm: f64 = tape.value(x_hat).row(i).iter().map(|v| v * v).sum();
        if x_norm == 0.0 || xh_norm == 0.0 {
            skipped.push(i);
        } else {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidData(
            "esce: every masked row has a zero-norm side".into(),
        ));
    }

    let mut x_sel = Array2::zeros((kept.len(), x.ncols()));
    for (k, &i) in kept.iter().enumerate() {
        x_sel.row_mut(k).assign(&x.row(i));
    }
    let x_leaf = tape.leaf(x_sel);
    let x_n = tape.l2_normalize_rows(x_leaf, NORM_EPS);
    let xh_sel = tape.select_rows(x_hat, Arc::new(kept));
    let xh_n = tape.l2_normalize_rows(xh_sel, NORM_EPS);
    let cos_raw = tape.row_dot(x_n, xh_n);
    let cos = tape.replace_below(cos_raw, 0.0, COS_FLOOR);
    let one_minus = tape.affine(cos, -1.0, 1.0);
    let weight = tape.powf(one_minus, delta);

    let per_row = match variant {
        EsceVariant::Literal => {
            let arg = tape.clamp_min(one_minus, COS_FLOOR);
            let log_term = tape.ln(arg);
            tape.mul(weight, log_term)
        }
        EsceVariant::Focal => {
            let arg = tape.clamp_min(cos, COS_FLOOR);
            let log_c = tape.ln(arg);
            let neg_log_c = tape.scale(log_c, -1.0);
            tape.mul(weight, neg_log_c)
        }
    };
    Ok(EsceOutcome {
        loss: tape.mean_all(per_row),
        skipped,
    })
}

/// Scalar focal loss -(1-p)^delta * log p for p in (0, 1].
pub fn focal_loss(p: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidData(format!(
            "focal loss probability {p} outside (0, 1]"
        )));
    }
    Ok(-(1.0 - p).powf(delta) * p.ln())
}
