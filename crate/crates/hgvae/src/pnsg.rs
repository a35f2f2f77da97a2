//! Progressive negative sample generation.
//!
//! Negatives come from two sources: dropout-corrupted rows of the anchor
//! view, and variational samples drawn around a shifted posterior mean
//! (mu* = kappa * mu, variance unchanged). Early in training the dropout
//! source dominates; the mix follows lambda = 1 - t / T, so by the final
//! epoch every negative is variational. Negatives are generated as plain
//! values, outside any gradient tape: they are targets, not trainable paths.

use ndarray::Array2;
use rand::distributions::Uniform;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::han::dropout_mask;
use crate::rng::{rng_for, Stream};
use crate::vi::PosteriorStats;

/// Assembled negative set with provenance counts.
#[derive(Debug, Clone)]
pub struct NegativeBatch {
    /// m x d negative samples.
    pub samples: Array2<f64>,
    pub n_dropout: usize,
    pub n_vi: usize,
    pub lambda: f64,
    pub kappa: f64,
}

/// Negative-construction variants; `Full` is the progressive mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    Full,
    Noise,
    DropoutOnly,
    ViOnly,
    Unshifted,
}

impl NegativeMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pnsg" | "full" => Ok(NegativeMode::Full),
            "noise" => Ok(NegativeMode::Noise),
            "dropout_only" => Ok(NegativeMode::DropoutOnly),
            "vi_only" => Ok(NegativeMode::ViOnly),
            "unshifted" => Ok(NegativeMode::Unshifted),
            other => Err(Error::Config(format!("unknown negative mode '{other}'"))),
        }
    }
}

/// lambda = 1 - t / T, decreasing from 1 at t = 0 to 0 at t = T.
pub fn lambda_schedule(t: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("total epochs must be >= 1".into()));
    }
    if t > total {
        return Err(Error::Config(format!(
            "epoch index {t} exceeds total epochs {total}"
        )));
    }
    Ok(1.0 - t as f64 / total as f64)
}

/// m rows sampled uniformly from `h1`, each corrupted by inverted dropout
/// at `rate`.
pub fn dropout_negatives(
    h1: &Array2<f64>,
    rate: f64,
    m: usize,
    master_seed: u64,
    epoch: u64,
) -> Result<Array2<f64>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!(
            "dropout negative rate {rate} outside (0, 1)"
        )));
    }
    let (n, d) = h1.dim();
    let mut rng = rng_for(master_seed, Stream::NegativeDropout, epoch);
    let row_dist = Uniform::new(0, n);
    let mut out = Array2::zeros((m, d));
    for k in 0..m {
        let src = rng.sample(row_dist);
        let mask = dropout_mask(&mut rng, 1, d, rate);
        for j in 0..d {
            out[[k, j]] = h1[[src, j]] * mask[[0, j]];
        }
    }
    Ok(out)
}

/// mu* = kappa * mu, elementwise.
pub fn shifted_mean(mu: &Array2<f64>, kappa: f64) -> Array2<f64> {
    mu.mapv(|v| kappa * v)
}

/// m variational negatives: for each row, pick a node uniformly and draw
/// mu*_i + sigma_i * eps with fresh eps.
pub fn vi_negatives(
    mu_star: &Array2<f64>,
    log_var: &Array2<f64>,
    m: usize,
    master_seed: u64,
    epoch: u64,
) -> Array2<f64> {
    assert_eq!(mu_star.dim(), log_var.dim(), "vi_negatives: shape mismatch");
    let (n, d) = mu_star.dim();
    let mut rng = rng_for(master_seed, Stream::NegativeVi, epoch);
    let row_dist = Uniform::new(0, n);
    let mut out = Array2::zeros((m, d));
    for k in 0..m {
        let i = rng.sample(row_dist);
        for j in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            out[[k, j]] = mu_star[[i, j]] + (0.5 * log_var[[i, j]]).exp() * eps;
        }
    }
    out
}

/// i.i.d. standard-normal rows (the pure-noise ablation).
pub fn noise_negatives(m: usize, d: usize, master_seed: u64, epoch: u64) -> Array2<f64> {
    let mut rng = rng_for(master_seed, Stream::NegativeNoise, epoch);
    Array2::from_shape_fn((m, d), |_| rng.sample(StandardNormal))
}

/// Mix round(lambda * m) dropout negatives with m - round(lambda * m)
/// variational negatives at an explicit lambda.
#[allow(clippy::too_many_arguments)]
pub fn assemble_with_lambda(
    h1: &Array2<f64>,
    stats: &PosteriorStats,
    lambda: f64,
    m: usize,
    kappa: f64,
    rate: f64,
    master_seed: u64,
    epoch: u64,
) -> Result<NegativeBatch> {
    if m == 0 {
        return Err(Error::Config("need at least one negative sample".into()));
    }
    let n_dropout = (lambda * m as f64).round() as usize;
    let n_vi = m - n_dropout;
    let d = h1.ncols();
    let mut samples = Array2::zeros((m, d));
    if n_dropout > 0 {
        let drop = dropout_negatives(h1, rate, n_dropout, master_seed, epoch)?;
        samples
            .slice_mut(ndarray::s![..n_dropout, ..])
            .assign(&drop);
    }
    if n_vi > 0 {
        let mu_star = shifted_mean(&stats.mu, kappa);
        let vi = vi_negatives(&mu_star, &stats.log_var, n_vi, master_seed, epoch);
        samples.slice_mut(ndarray::s![n_dropout.., ..]).assign(&vi);
    }
    Ok(NegativeBatch {
        samples,
        n_dropout,
        n_vi,
        lambda,
        kappa,
    })
}

/// The progressive mix at epoch t of T: lambda from the schedule.
#[allow(clippy::too_many_arguments)]
pub fn assemble_negatives(
    h1: &Array2<f64>,
    stats: &PosteriorStats,
    t: usize,
    total: usize,
    m: usize,
    kappa: f64,
    rate: f64,
    master_seed: u64,
) -> Result<NegativeBatch> {
    let lambda = lambda_schedule(t, total)?;
    assemble_with_lambda(h1, stats, lambda, m, kappa, rate, master_seed, t as u64)
}

/// Negative batch for any mode, sharing the seed streams of the full mix.
#[allow(clippy::too_many_arguments)]
pub fn negatives_for_mode(
    mode: NegativeMode,
    h1: &Array2<f64>,
    stats: &PosteriorStats,
    t: usize,
    total: usize,
    m: usize,
    kappa: f64,
    rate: f64,
    master_seed: u64,
) -> Result<NegativeBatch> {
    let epoch = t as u64;
    match mode {
        NegativeMode::Full => assemble_negatives(h1, stats, t, total, m, kappa, rate, master_seed),
        NegativeMode::Noise => {
            if m == 0 {
                return Err(Error::Config("need at least one negative sample".into()));
            }
            Ok(NegativeBatch {
                samples: noise_negatives(m, h1.ncols(), master_seed, epoch),
                n_dropout: 0,
                n_vi: 0,
                lambda: lambda_schedule(t, total)?,
                kappa,
            })
        }
        NegativeMode::DropoutOnly => {
            assemble_with_lambda(h1, stats, 1.0, m, kappa, rate, master_seed, epoch)
        }
        NegativeMode::ViOnly => {
            assemble_with_lambda(h1, stats, 0.0, m, kappa, rate, master_seed, epoch)
        }
        NegativeMode::Unshifted => {
            assemble_with_lambda(h1, stats, 0.0, m, 1.0, rate, master_seed, epoch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stats(n: usize, d: usize, mu_fill: f64, lv_fill: f64) -> PosteriorStats {
        PosteriorStats {
            mu: Array2::from_elem((n, d), mu_fill),
            log_var: Array2::from_elem((n, d), lv_fill),
        }
    }

    #[test]
    fn lambda_schedule_endpoints_and_midpoint() {
        assert_eq!(lambda_schedule(0, 10).unwrap(), 1.0);
        assert_eq!(lambda_schedule(10, 10).unwrap(), 0.0);
        assert_eq!(lambda_schedule(5, 10).unwrap(), 0.5);
        assert!(lambda_schedule(11, 10).is_err());
        assert!(lambda_schedule(0, 0).is_err());
    }

    #[test]
    fn dropout_negatives_near_zero_rate_reproduce_source_rows() {
        let h1 = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let neg = dropout_negatives(&h1, 1e-9, 8, 3, 0).unwrap();
        for k in 0..8 {
            let min_dist: f64 = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| (neg[[k, j]] - h1[[i, j]]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(min_dist < 1e-6, "row {k} does not match any source row");
        }
    }

    #[test]
    fn dropout_negatives_zero_fraction_matches_rate() {
        let h1 = Array2::from_elem((4, 40), 1.0);
        let neg = dropout_negatives(&h1, 0.5, 1000, 5, 0).unwrap();
        let zeros = neg.iter().filter(|v| **v == 0.0).count();
        let frac = zeros as f64 / neg.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "zero fraction {frac}");
        // survivors are rescaled by 1 / (1 - rate)
        for v in neg.iter().filter(|v| **v != 0.0) {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_negatives_same_seed_identical_and_rate_validated() {
        let h1 = array![[1.0, -2.0], [0.5, 3.0]];
        let a = dropout_negatives(&h1, 0.3, 6, 9, 2).unwrap();
        let b = dropout_negatives(&h1, 0.3, 6, 9, 2).unwrap();
        assert_eq!(a, b);
        assert!(dropout_negatives(&h1, 0.0, 2, 1, 0).is_err());
        assert!(dropout_negatives(&h1, 1.0, 2, 1, 0).is_err());
    }

    #[test]
    fn shifted_mean_cases() {
        let mu = array![[0.5, -1.0]];
        assert_eq!(shifted_mean(&mu, 1.0), mu);
        assert_eq!(shifted_mean(&mu, 2.0), array![[1.0, -2.0]]);
        assert_eq!(shifted_mean(&mu, 0.0), array![[0.0, 0.0]]);
    }

    #[test]
    fn vi_negatives_with_tiny_sigma_equal_shifted_means() {
        let s = PosteriorStats {
            mu: array![[1.0, -1.0], [2.0, 0.5], [0.0, 3.0]],
            log_var: Array2::from_elem((3, 2), -60.0),
        };
        let mu_star = shifted_mean(&s.mu, 2.0);
        let neg = vi_negatives(&mu_star, &s.log_var, 20, 7, 0);
        for k in 0..20 {
            let matches = (0..3).any(|i| {
                (0..2).all(|j| (neg[[k, j]] - mu_star[[i, j]]).abs() < 1e-10)
            });
            assert!(matches, "row {k} is not a shifted mean row");
        }
    }

    #[test]
    fn unshifted_tiny_sigma_negatives_coincide_with_mu() {
        // kappa = 1, sigma ~ 0: the degenerate false-negative regime.
        let s = PosteriorStats {
            mu: array![[0.7, -0.2]],
            log_var: Array2::from_elem((1, 2), -60.0),
        };
        let batch = negatives_for_mode(NegativeMode::Unshifted, &s.mu, &s, 3, 10, 5, 2.0, 0.5, 1)
            .unwrap();
        for k in 0..5 {
            assert!((batch.samples[[k, 0]] - 0.7).abs() < 1e-10);
            assert!((batch.samples[[k, 1]] + 0.2).abs() < 1e-10);
        }
        assert_eq!(batch.kappa, 1.0);
    }

    #[test]
    fn vi_negative_variance_matches_sigma_squared() {
        // single node so every draw uses its (mu, sigma)
        let s = PosteriorStats {
            mu: array![[0.5, -1.0, 2.0]],
            log_var: array![[0.2, -0.6, 0.9]],
        };
        let mu_star = shifted_mean(&s.mu, 2.0);
        let m = 10_000;
        let neg = vi_negatives(&mu_star, &s.log_var, m, 11, 0);
        for j in 0..3 {
            let mean = neg.column(j).sum() / m as f64;
            let var = neg.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / m as f64;
            let sigma_sq = s.log_var[[0, j]].exp();
            assert!(
                (var - sigma_sq).abs() / sigma_sq < 0.05,
                "dim {j}: var {var} vs {sigma_sq}"
            );
            assert!(
                (mean - mu_star[[0, j]]).abs() < 4.0 * sigma_sq.sqrt() / (m as f64).sqrt(),
                "dim {j}: mean {mean} vs {}",
                mu_star[[0, j]]
            );
        }
    }

    #[test]
    fn assembly_counts_follow_the_schedule() {
        let h1 = Array2::from_elem((5, 3), 1.0);
        let s = stats(5, 3, 0.3, 0.0);
        let b0 = assemble_negatives(&h1, &s, 0, 10, 20, 2.0, 0.5, 1).unwrap();
        assert_eq!((b0.n_dropout, b0.n_vi), (20, 0));
        let b_end = assemble_negatives(&h1, &s, 10, 10, 20, 2.0, 0.5, 1).unwrap();
        assert_eq!((b_end.n_dropout, b_end.n_vi), (0, 20));
        let b_mid = assemble_negatives(&h1, &s, 5, 10, 20, 2.0, 0.5, 1).unwrap();
        assert_eq!((b_mid.n_dropout, b_mid.n_vi), (10, 10));

        // counts always sum to m; dropout count nonincreasing in t
        let mut last = usize::MAX;
        for t in 0..=10 {
            let b = assemble_negatives(&h1, &s, t, 10, 13, 2.0, 0.5, 1).unwrap();
            assert_eq!(b.n_dropout + b.n_vi, 13);
            assert!(b.n_dropout <= last);
            last = b.n_dropout;
        }
    }

    #[test]
    fn assembly_is_bit_reproducible() {
        let h1 = array![[1.0, -2.0], [0.5, 3.0], [2.0, 2.0]];
        let s = stats(3, 2, 0.4, -0.3);
        let a = assemble_negatives(&h1, &s, 3, 10, 9, 2.0, 0.4, 77).unwrap();
        let b = assemble_negatives(&h1, &s, 3, 10, 9, 2.0, 0.4, 77).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn ablation_modes_pin_lambda_and_kappa() {
        let h1 = array![[1.0, -2.0], [0.5, 3.0], [2.0, 2.0]];
        let s = stats(3, 2, 0.4, -0.3);
        let t = 4;
        let dropout_only =
            negatives_for_mode(NegativeMode::DropoutOnly, &h1, &s, t, 10, 8, 2.0, 0.4, 5).unwrap();
        let pinned = assemble_with_lambda(&h1, &s, 1.0, 8, 2.0, 0.4, 5, t as u64).unwrap();
        assert_eq!(dropout_only.samples, pinned.samples);
        assert_eq!(dropout_only.n_vi, 0);

        let vi_only =
            negatives_for_mode(NegativeMode::ViOnly, &h1, &s, t, 10, 8, 2.0, 0.4, 5).unwrap();
        let pinned = assemble_with_lambda(&h1, &s, 0.0, 8, 2.0, 0.4, 5, t as u64).unwrap();
        assert_eq!(vi_only.samples, pinned.samples);
        assert_eq!(vi_only.n_dropout, 0);

        let unshifted =
            negatives_for_mode(NegativeMode::Unshifted, &h1, &s, t, 10, 8, 2.0, 0.4, 5).unwrap();
        let pinned = assemble_with_lambda(&h1, &s, 0.0, 8, 1.0, 0.4, 5, t as u64).unwrap();
        assert_eq!(unshifted.samples, pinned.samples);
    }

    #[test]
    fn noise_mode_has_standard_normal_moments() {
        let h1 = Array2::from_elem((3, 4), 1.0);
        let s = stats(3, 4, 0.0, 0.0);
        let batch =
            negatives_for_mode(NegativeMode::Noise, &h1, &s, 0, 10, 10_000, 2.0, 0.5, 3).unwrap();
        let vals = &batch.samples;
        let n = vals.len() as f64;
        let mean = vals.sum() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shifted_negatives_center_on_kappa_mu_not_mu() {
        // single node, moderate sigma: empirical mean over 1e4 draws is
        // kappa * mu, distinct from mu.
        let s = PosteriorStats {
            mu: array![[1.0, -0.5]],
            log_var: array![[0.0, 0.0]],
        };
        let kappa = 2.0;
        let mu_star = shifted_mean(&s.mu, kappa);
        let m = 10_000;
        let neg = vi_negatives(&mu_star, &s.log_var, m, 21, 0);
        for j in 0..2 {
            let mean = neg.column(j).sum() / m as f64;
            let target = kappa * s.mu[[0, j]];
            assert!((mean - target).abs() < 0.05, "dim {j}: mean {mean}");
            assert!(
                (mean - s.mu[[0, j]]).abs() > 0.3,
                "dim {j}: shifted mean should be away from mu"
            );
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(NegativeMode::parse("pnsg").unwrap(), NegativeMode::Full);
        assert_eq!(NegativeMode::parse("noise").unwrap(), NegativeMode::Noise);
        assert!(NegativeMode::parse("bogus").is_err());
    }
}
