//! Approximate posterior heads, reparameterized sampling, and the KL
//! regularizer against a standard-normal prior.
//!
//! Two attention layers map the encoded representation to a per-node mean
//! and log-variance; both are row-standardized to keep values moderate, and
//! the log-variance is clamped before exponentiation. Sampling uses
//! z = mu + exp(log_var / 2) * eps with eps ~ N(0, 1).

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::han::{han_layer, HanLayerNodes};
use crate::rng::{rng_for, Stream};
use crate::tape::{NodeId, Tape};

/// Per-node mean and log-variance of the approximate posterior.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
}

impl PosteriorStats {
    pub fn sigma(&self) -> Array2<f64> {
        self.log_var.mapv(|lv| (0.5 * lv).exp())
    }
}

/// Tape nodes of the posterior statistics (values live on the tape).
pub struct PosteriorNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
}

impl PosteriorNodes {
    pub fn detach(&self, tape: &Tape) -> PosteriorStats {
        PosteriorStats {
            mu: tape.value(self.mu).clone(),
            log_var: tape.value(self.log_var).clone(),
        }
    }
}

/// Map the encoded representation through the mean and log-variance heads.
/// Each head is a full attention layer over the same meta-path adjacencies,
/// row-standardized; the log-variance is clamped to [-clamp, clamp].
#[allow(clippy::too_many_arguments)]
pub fn infer_posterior(
    tape: &mut Tape,
    h: NodeId,
    adjacencies: &[Arc<Array2<bool>>],
    mu_head: &HanLayerNodes,
    logvar_head: &HanLayerNodes,
    norm_eps: f64,
    logvar_clamp: f64,
    mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> PosteriorNodes {
    let mu_raw = han_layer(tape, h, adjacencies, mu_head, rng.as_deref_mut()).h;
    let mu = tape.row_standardize(mu_raw, norm_eps);
    let lv_raw = han_layer(tape, h, adjacencies, logvar_head, rng).h;
    let lv_norm = tape.row_standardize(lv_raw, norm_eps);
    let log_var = tape.clamp(lv_norm, -logvar_clamp, logvar_clamp);
    PosteriorNodes { mu, log_var }
}

/// Standard-normal noise with the given shape.
pub fn sample_eps(rows: usize, cols: usize, master_seed: u64, epoch: u64) -> Array2<f64> {
    let mut rng = rng_for(master_seed, Stream::Reparam, epoch);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// z = mu + exp(log_var / 2) * eps on the tape; eps enters as a constant so
/// the sample stays differentiable w.r.t. mu and log_var.
pub fn reparameterize_nodes(
    tape: &mut Tape,
    stats: &PosteriorNodes,
    eps: Arc<Array2<f64>>,
) -> NodeId {
    let half_lv = tape.scale(stats.log_var, 0.5);
    let sigma = tape.exp(half_lv);
    let noise = tape.mul_const(sigma, eps);
    tape.add(stats.mu, noise)
}

/// Plain-value reparameterized sample with explicit noise (test hook).
pub fn reparameterize_with_eps(stats: &PosteriorStats, eps: &Array2<f64>) -> Array2<f64> {
    &stats.mu + &(stats.sigma() * eps)
}

/// Plain-value reparameterized sample with fresh seeded noise.
pub fn reparameterize(stats: &PosteriorStats, master_seed: u64, index: u64) -> Array2<f64> {
    let (n, d) = stats.mu.dim();
    reparameterize_with_eps(stats, &sample_eps(n, d, master_seed, index))
}

/// Mean over nodes of 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2),
/// the closed-form KL divergence from the posterior to N(0, I).
pub fn kl_standard_normal_node(tape: &mut Tape, stats: &PosteriorNodes) -> NodeId {
    let n = tape.value(stats.mu).nrows() as f64;
    let mu_sq = tape.mul(stats.mu, stats.mu);
    let var = tape.exp(stats.log_var);
    let lv_term = tape.affine(stats.log_var, -1.0, -1.0);
    let partial = tape.add(mu_sq, var);
    let terms = tape.add(partial, lv_term);
    let total = tape.sum_all(terms);
    tape.scale(total, 0.5 / n)
}

/// Plain-value KL divergence (same formula as the tape version).
pub fn kl_standard_normal(stats: &PosteriorStats) -> f64 {
    let n = stats.mu.nrows() as f64;
    let mut total = 0.0;
    for (m, lv) in stats.mu.iter().zip(stats.log_var.iter()) {
        total += m * m + lv.exp() - 1.0 - lv;
    }
    0.5 * total / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::han::{Activation, HanLayerParams};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(mu: Array2<f64>, log_var: Array2<f64>) -> PosteriorStats {
        PosteriorStats { mu, log_var }
    }

    #[test]
    fn kl_closed_forms() {
        // q = p
        let s = stats(Array2::zeros((3, 4)), Array2::zeros((3, 4)));
        assert_eq!(kl_standard_normal(&s), 0.0);
        // mu = 1, log_var = 0, d = 1: 0.5 * (1 + 1 - 1 - 0) = 0.5
        let s = stats(Array2::from_elem((5, 1), 1.0), Array2::zeros((5, 1)));
        assert!((kl_standard_normal(&s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mu = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-2.0..2.0));
            let lv = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-2.0..2.0));
            let s = stats(mu.clone(), lv.clone());
            let kl = kl_standard_normal(&s);
            assert!(kl >= 0.0);

            let perm = [3usize, 0, 5, 1, 4, 2];
            let mut mu_p = Array2::zeros((6, 3));
            let mut lv_p = Array2::zeros((6, 3));
            for (to, &from) in perm.iter().enumerate() {
                mu_p.row_mut(to).assign(&mu.row(from));
                lv_p.row_mut(to).assign(&lv.row(from));
            }
            let kl_p = kl_standard_normal(&stats(mu_p, lv_p));
            assert!((kl - kl_p).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_matches_monte_carlo_log_density_ratio() {
        // Single node, d = 3: E_q[log q - log p] estimated over 1e6 draws.
        let mu = array![[0.7, -0.3, 1.2]];
        let lv = array![[0.4, -0.8, 0.1]];
        let s = stats(mu.clone(), lv.clone());
        let analytic = kl_standard_normal(&s);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let mut term = 0.0;
            for d in 0..3 {
                let e: f64 = rng.sample(StandardNormal);
                let sigma = (0.5 * lv[[0, d]]).exp();
                let z = mu[[0, d]] + sigma * e;
                // log q - log p per dim: 0.5 * (z^2 - lv - e^2)
                term += 0.5 * (z * z - lv[[0, d]] - e * e);
            }
            acc += term;
        }
        let mc = acc / draws as f64;
        assert!(
            (mc - analytic).abs() / analytic.abs() < 0.01,
            "mc {mc} vs analytic {analytic}"
        );
    }

    #[test]
    fn near_zero_sigma_collapses_sample_to_mean() {
        let mu = array![[0.4, -1.1], [2.0, 0.3]];
        let s = stats(mu.clone(), Array2::from_elem((2, 2), -60.0));
        let z = reparameterize(&s, 9, 0);
        let diff = (&z - &mu).mapv(f64::abs).sum();
        assert!(diff < 1e-10);
    }

    #[test]
    fn fixed_unit_eps_gives_mu_plus_sigma() {
        let mu = array![[0.4, -1.1]];
        let lv = array![[0.6, -0.2]];
        let s = stats(mu.clone(), lv.clone());
        let eps = Array2::from_elem((1, 2), 1.0);
        let z = reparameterize_with_eps(&s, &eps);
        let expected = &mu + &s.sigma();
        let diff = (&z - &expected).mapv(f64::abs).sum();
        assert!(diff < 1e-14);
    }

    #[test]
    fn sample_moments_match_posterior_parameters() {
        let mu = array![[0.5, -0.8, 1.5, 0.0]];
        let lv = array![[0.3, -0.5, 0.0, 0.8]];
        let s = stats(mu.clone(), lv.clone());
        let n = 100_000;
        let mut sums = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        for i in 0..n {
            let z = reparameterize(&s, 1234, i as u64);
            for d in 0..4 {
                sums[d] += z[[0, d]];
                sq[d] += z[[0, d]] * z[[0, d]];
            }
        }
        for d in 0..4 {
            let mean = sums[d] / n as f64;
            let var = sq[d] / n as f64 - mean * mean;
            let sigma = (0.5f64 * lv[[0, d]]).exp();
            let tol_mean = 3.0 * sigma / (n as f64).sqrt();
            assert!(
                (mean - mu[[0, d]]).abs() < tol_mean,
                "dim {d}: mean {mean} vs {}",
                mu[[0, d]]
            );
            let rel_var = (var - sigma * sigma).abs() / (sigma * sigma);
            assert!(rel_var < 0.02, "dim {d}: var {var} vs {}", sigma * sigma);
        }
    }

    #[test]
    fn reparameterize_gradients_match_finite_differences() {
        let mu = array![[0.4, -0.9], [1.2, 0.1]];
        let lv = array![[0.5, -0.3], [-1.0, 0.7]];
        let eps = Arc::new(array![[0.8, -1.3], [0.4, 2.1]]);
        let readout = Arc::new(array![[0.3, 1.7], [-0.6, 0.9]]);

        let eval = |mu_v: &Array2<f64>, lv_v: &Array2<f64>| -> f64 {
            let mut tape = Tape::new();
            let nodes = PosteriorNodes {
                mu: tape.leaf(mu_v.clone()),
                log_var: tape.leaf(lv_v.clone()),
            };
            let z = reparameterize_nodes(&mut tape, &nodes, eps.clone());
            let w = tape.mul_const(z, readout.clone());
            let s = tape.sum_all(w);
            tape.scalar_value(s)
        };

        let mut tape = Tape::new();
        let nodes = PosteriorNodes {
            mu: tape.leaf(mu.clone()),
            log_var: tape.leaf(lv.clone()),
        };
        let z = reparameterize_nodes(&mut tape, &nodes, eps.clone());
        let w = tape.mul_const(z, readout.clone());
        let s = tape.sum_all(w);
        let grads = tape.backward(s);
        let g_mu = grads.wrt(&tape, nodes.mu);
        let g_lv = grads.wrt(&tape, nodes.log_var);

        // dz/dmu = I and dz/dlog_var = 0.5 * sigma * eps, elementwise.
        for i in 0..2 {
            for j in 0..2 {
                assert!((g_mu[[i, j]] - readout[[i, j]]).abs() < 1e-12);
                let expect = readout[[i, j]] * 0.5 * (0.5 * lv[[i, j]]).exp() * eps[[i, j]];
                assert!((g_lv[[i, j]] - expect).abs() < 1e-12);
            }
        }

        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut p = mu.clone();
                p[[i, j]] += h;
                let mut m = mu.clone();
                m[[i, j]] -= h;
                let fd = (eval(&p, &lv) - eval(&m, &lv)) / (2.0 * h);
                assert!((fd - g_mu[[i, j]]).abs() / fd.abs().max(1e-6) < 1e-4);

                let mut p = lv.clone();
                p[[i, j]] += h;
                let mut m = lv.clone();
                m[[i, j]] -= h;
                let fd = (eval(&mu, &p) - eval(&mu, &m)) / (2.0 * h);
                assert!((fd - g_lv[[i, j]]).abs() / fd.abs().max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn zero_input_and_zero_heads_give_zero_posterior() {
        let mut rng = crate::rng::rng_for(1, Stream::ParamInit, 0);
        let mut mu_head =
            HanLayerParams::init(1, 4, 4, 1, 3, 0.0, Activation::Elu, &mut rng).unwrap();
        let mut lv_head =
            HanLayerParams::init(1, 4, 4, 1, 3, 0.0, Activation::Elu, &mut rng).unwrap();
        mu_head.visit_mut("mu", &mut |_, m| m.fill(0.0));
        lv_head.visit_mut("lv", &mut |_, m| m.fill(0.0));

        let mut tape = Tape::new();
        let h = tape.leaf(Array2::zeros((5, 4)));
        let adj = Arc::new(Array2::from_elem((5, 5), true));
        let mu_nodes = mu_head.leaves(&mut tape);
        let lv_nodes = lv_head.leaves(&mut tape);
        let post = infer_posterior(
            &mut tape,
            h,
            &[adj],
            &mu_nodes,
            &lv_nodes,
            1e-5,
            10.0,
            None,
        );
        assert_eq!(tape.value(post.mu).mapv(f64::abs).sum(), 0.0);
        assert_eq!(tape.value(post.log_var).mapv(f64::abs).sum(), 0.0);
    }

    #[test]
    fn standardized_rows_have_zero_mean_unit_variance() {
        // Rows scaled so the eps in the denominator is negligible at 1e-6.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((6, 8), |_| rng.gen_range(-30.0..30.0));
        let mut tape = Tape::new();
        let id = tape.leaf(x);
        let norm = tape.row_standardize(id, 1e-5);
        let y = tape.value(norm);
        for i in 0..6 {
            let mean = y.row(i).sum() / 8.0;
            let var = y.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
    }

    #[test]
    fn posterior_gradcheck_on_small_graph() {
        let mut rng = crate::rng::rng_for(21, Stream::ParamInit, 0);
        let mu_head = HanLayerParams::init(1, 3, 3, 1, 3, 0.0, Activation::Elu, &mut rng).unwrap();
        let lv_head = HanLayerParams::init(1, 3, 3, 1, 3, 0.0, Activation::Elu, &mut rng).unwrap();
        let x = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        let mut adj = Array2::from_elem((8, 8), false);
        for i in 0..8 {
            adj[[i, i]] = true;
            adj[[i, (i + 3) % 8]] = true;
        }
        let adjs = vec![Arc::new(adj)];
        let readout = Arc::new(Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0)));

        let eval = |mu_p: &HanLayerParams, lv_p: &HanLayerParams| -> f64 {
            let mut tape = Tape::new();
            let h = tape.leaf(x.clone());
            let mu_nodes = mu_p.leaves(&mut tape);
            let lv_nodes = lv_p.leaves(&mut tape);
            let post = infer_posterior(&mut tape, h, &adjs, &mu_nodes, &lv_nodes, 1e-5, 10.0, None);
            let kl = kl_standard_normal_node(&mut tape, &post);
            let mu_w = tape.mul_const(post.mu, readout.clone());
            let mu_s = tape.sum_all(mu_w);
            let tot = tape.add(kl, mu_s);
            tape.scalar_value(tot)
        };

        let mut tape = Tape::new();
        let h = tape.leaf(x.clone());
        let mu_nodes = mu_head.leaves(&mut tape);
        let lv_nodes = lv_head.leaves(&mut tape);
        let post = infer_posterior(&mut tape, h, &adjs, &mu_nodes, &lv_nodes, 1e-5, 10.0, None);
        let kl = kl_standard_normal_node(&mut tape, &post);
        let mu_w = tape.mul_const(post.mu, readout.clone());
        let mu_s = tape.sum_all(mu_w);
        let tot = tape.add(kl, mu_s);
        let grads = tape.backward(tot);

        let mut analytic = Vec::new();
        mu_nodes.visit("mu", &mut |_, id| analytic.push(grads.wrt(&tape, id)));
        lv_nodes.visit("lv", &mut |_, id| analytic.push(grads.wrt(&tape, id)));

        let mut shapes = Vec::new();
        mu_head.visit("mu", &mut |n, m| shapes.push((n.to_string(), m.dim())));
        lv_head.visit("lv", &mut |n, m| shapes.push((n.to_string(), m.dim())));

        let h_step = 1e-5;
        for (pi, (name, dim)) in shapes.iter().enumerate() {
            // probe a handful of entries per tensor to keep the test quick
            let probes = [(0usize, 0usize), (dim.0 - 1, dim.1 - 1)];
            for &(i, j) in &probes {
                let perturb = |delta: f64| -> f64 {
                    let mut mu_c = mu_head.clone();
                    let mut lv_c = lv_head.clone();
                    let mut k = 0;
                    mu_c.visit_mut("mu", &mut |_, m| {
                        if k == pi {
                            m[[i, j]] += delta;
                        }
                        k += 1;
                    });
                    lv_c.visit_mut("lv", &mut |_, m| {
                        if k == pi {
                            m[[i, j]] += delta;
                        }
                        k += 1;
                    });
                    eval(&mu_c, &lv_c)
                };
                let fd = (perturb(h_step) - perturb(-h_step)) / (2.0 * h_step);
                let a = analytic[pi][[i, j]];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "{name}[{i},{j}]: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}
