//! Full-batch training loop: mask, encode twice, posterior, negatives,
//! losses, one optimizer step per epoch; plus checkpointing and loss
//! logging.
//!
//! Every stochastic draw is keyed by (seed, stream, epoch), so a run is
//! bit-deterministic for a fixed seed and resuming from a checkpoint
//! replays the uninterrupted trajectory exactly. Checkpoints are a
//! self-describing binary container (magic `HGV1`, little-endian, named
//! tensors with shape headers) holding the model, optimizer state, loss
//! history, and the resolved config.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval;
use crate::han::han_layer;
use crate::hin::{self, HeterogeneousGraph};
use crate::loss::{esce, info_nce, EsceVariant, LossBreakdown};
use crate::masking::{plan_mask, scheduled_rate};
use crate::model::{make_views, masked_features_node, ModelState};
pub use crate::model::embed;
use crate::pnsg::{lambda_schedule, negatives_for_mode, NegativeMode};
use crate::rng::{rng_for, Stream};
use crate::tape::Tape;
use crate::vi::{infer_posterior, kl_standard_normal_node, reparameterize_nodes, sample_eps};

/// Adam with bias correction; parameter order is the model's visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(state: &ModelState, lr: f64) -> Self {
        let mut m = Vec::new();
        state.visit(&mut |_, p| m.push(Array2::zeros(p.raw_dim())));
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn update(&mut self, state: &mut ModelState, grads: &[Array2<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        state.visit_mut(&mut |_, p| {
            let g = &grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(&mut *m).and(g).for_each(|mi, &gi| {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|vi, &gi| {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                *pi -= self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            });
            k += 1;
        });
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_elbo: f64,
    pub l_pnsm: f64,
    pub l_esce: f64,
    pub total: f64,
    pub lambda: f64,
}

impl EpochRecord {
    pub fn csv_header() -> &'static str {
        "epoch,l_elbo,l_pnsm,l_esce,total,lambda"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.l_elbo, self.l_pnsm, self.l_esce, self.total, self.lambda
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(EpochRecord::csv_header());
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Precomputed meta-path adjacencies shared across epochs.
pub fn prepare_adjacencies(graph: &HeterogeneousGraph) -> Result<Vec<Arc<Array2<bool>>>> {
    Ok(hin::all_adjacencies(graph)?
        .into_iter()
        .map(|a| Arc::new(a.adjacency))
        .collect())
}

fn check_finite(name: &str, value: f64, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!(
            "{name} is {value} at epoch {epoch}"
        )))
    }
}

/// One full-batch epoch: returns the loss breakdown and applies one
/// optimizer step in place.
pub fn train_epoch(
    state: &mut ModelState,
    adam: &mut Adam,
    graph: &HeterogeneousGraph,
    adjacencies: &[Arc<Array2<bool>>],
    cfg: &Config,
    t: usize,
) -> Result<EpochRecord> {
    let total_epochs = cfg.train.epochs;
    if t >= total_epochs {
        return Err(Error::Config(format!(
            "epoch index {t} out of range for {total_epochs} epochs"
        )));
    }
    let seed = cfg.train.seed;
    let n = graph.target_count();
    let x = graph.target_features();

    let rate = scheduled_rate(cfg.mask.rate, cfg.mask.rate_final, t, total_epochs);
    let plan = plan_mask(n, rate, cfg.mask_seed(), t as u64)?;

    let mut tape = Tape::new();
    let nodes = state.leaves(&mut tape);
    let x_tilde = masked_features_node(&mut tape, x, &plan, nodes.mask_token);

    let mut rng_anchor = rng_for(seed, Stream::DropoutAnchor, t as u64);
    let mut rng_positive = rng_for(seed, Stream::DropoutPositive, t as u64);
    let views = make_views(
        &mut tape,
        x_tilde,
        adjacencies,
        &nodes.encoder,
        &mut rng_anchor,
        &mut rng_positive,
    );

    let posterior = infer_posterior(
        &mut tape,
        views.h2,
        adjacencies,
        &nodes.mu_head,
        &nodes.logvar_head,
        cfg.vi.norm_eps,
        cfg.vi.logvar_clamp,
        Some(&mut rng_positive),
    );
    let kl = kl_standard_normal_node(&mut tape, &posterior);

    // negatives are generated from detached values and re-enter as constants
    let stats = posterior.detach(&tape);
    let h1_value = tape.value(views.h1).clone();
    let mode = NegativeMode::parse(&cfg.pnsg.mode)?;
    let negatives = negatives_for_mode(
        mode,
        &h1_value,
        &stats,
        t,
        total_epochs,
        cfg.pnsg.num_negatives,
        cfg.pnsg.kappa,
        cfg.pnsg.dropout_rate,
        seed,
    )?;
    let nce = info_nce(
        &mut tape,
        views.h1,
        views.h2,
        &negatives,
        cfg.loss.tau,
        cfg.loss.denominator_includes_positive,
    )?;

    let eps = sample_eps(n, state.hidden_dim, seed, t as u64);
    let z = reparameterize_nodes(&mut tape, &posterior, Arc::new(eps));
    let x_hat = han_layer(
        &mut tape,
        z,
        adjacencies,
        &nodes.decoder,
        Some(&mut rng_positive),
    )
    .h;

    let variant = EsceVariant::parse(&cfg.loss.esce_variant)?;
    let esce_node = if plan.masked_ids.is_empty() {
        None
    } else {
        let outcome = esce(&mut tape, x, x_hat, &plan.masked_ids, cfg.loss.delta, variant)?;
        if !outcome.skipped.is_empty() {
            eprintln!(
                "warning: epoch {t}: skipped {} zero-norm masked rows in reconstruction loss",
                outcome.skipped.len()
            );
        }
        Some(outcome.loss)
    };

    let l_elbo = check_finite("l_elbo", tape.scalar_value(kl), t)?;
    let l_pnsm = check_finite("l_pnsm", tape.scalar_value(nce), t)?;
    let l_esce = check_finite(
        "l_esce",
        esce_node.map_or(0.0, |id| tape.scalar_value(id)),
        t,
    )?;

    let weighted_kl = tape.scale(kl, cfg.loss.alpha);
    let weighted_nce = tape.scale(nce, cfg.loss.beta);
    let mut total = tape.add(weighted_kl, weighted_nce);
    if let Some(es) = esce_node {
        let weighted_esce = tape.scale(es, cfg.loss.gamma);
        total = tape.add(total, weighted_esce);
    }
    let total_value = check_finite("total", tape.scalar_value(total), t)?;

    let grads = tape.backward(total);
    let mut grad_list = Vec::new();
    nodes.visit(&mut |_, id| grad_list.push(grads.wrt(&tape, id)));
    adam.update(state, &grad_list);

    let breakdown = LossBreakdown {
        l_elbo,
        l_pnsm,
        l_esce,
        total: total_value,
        alpha: cfg.loss.alpha,
        beta: cfg.loss.beta,
        gamma: cfg.loss.gamma,
    };
    Ok(EpochRecord {
        epoch: t,
        l_elbo: breakdown.l_elbo,
        l_pnsm: breakdown.l_pnsm,
        l_esce: breakdown.l_esce,
        total: breakdown.total,
        lambda: lambda_schedule(t, total_epochs)?,
    })
}

/// A completed (or interrupted) training run.
pub struct TrainRun {
    pub state: ModelState,
    pub adam: Adam,
    pub history: Vec<EpochRecord>,
}

/// Training entry point. `out_dir` enables the loss CSV, the resolved
/// config echo, and rolling checkpoints; `resume_from` continues a prior
/// run; `stop_after` ends the loop early after that many total epochs
/// (used to simulate interruption).
pub fn train_with_options(
    graph: &HeterogeneousGraph,
    cfg: &Config,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<TrainRun> {
    train_with_callback(graph, cfg, out_dir, resume_from, stop_after, &mut |_| {})
}

/// As [`train_with_options`], invoking `on_epoch` after every epoch.
pub fn train_with_callback(
    graph: &HeterogeneousGraph,
    cfg: &Config,
    out_dir: Option<&Path>,
    resume_from: Option<&Path>,
    stop_after: Option<usize>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainRun> {
    cfg.validate()?;
    let adjacencies = prepare_adjacencies(graph)?;

    let (mut state, mut adam, mut history, start) = match resume_from {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config_hash != cfg.hash() {
                return Err(Error::Config(format!(
                    "checkpoint config hash {} does not match the active config {}",
                    ckpt.config_hash,
                    cfg.hash()
                )));
            }
            let (state, adam) = ckpt.restore(graph, cfg)?;
            let epoch = ckpt.epoch;
            (state, adam, ckpt.history, epoch)
        }
        None => {
            let state = ModelState::init(graph, cfg)?;
            let adam = Adam::new(&state, cfg.train.lr);
            (state, adam, Vec::new(), 0)
        }
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.resolved.json");
        std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| Error::io(&cfg_path, e))?;
    }

    let end = stop_after.unwrap_or(cfg.train.epochs).min(cfg.train.epochs);
    let mut best_val: Option<(f64, usize)> = None;
    for t in start..end {
        let record = train_epoch(&mut state, &mut adam, graph, &adjacencies, cfg, t)?;
        on_epoch(&record);
        history.push(record);

        if let Some(dir) = out_dir {
            let csv_path = dir.join("loss_history.csv");
            std::fs::write(&csv_path, history_csv(&history))
                .map_err(|e| Error::io(&csv_path, e))?;
            if (t + 1) % cfg.train.checkpoint_every == 0 || t + 1 == end {
                let ckpt = Checkpoint::capture(t + 1, cfg, &state, &adam, &history);
                ckpt.save(&dir.join("checkpoint.bin"))?;
            }
        }

        if let Some(patience) = cfg.train.early_stop_patience {
            if let Some(stop_epoch) = early_stop_check(
                &state,
                graph,
                &adjacencies,
                cfg,
                t,
                patience,
                &mut best_val,
            )? {
                eprintln!(
                    "early stop at epoch {t}: no validation improvement since epoch {stop_epoch}"
                );
                break;
            }
        }
    }
    Ok(TrainRun {
        state,
        adam,
        history,
    })
}

/// Run the configured number of epochs from scratch.
pub fn train(graph: &HeterogeneousGraph, cfg: &Config, out_dir: Option<&Path>) -> Result<TrainRun> {
    train_with_options(graph, cfg, out_dir, None, None)
}

fn early_stop_check(
    state: &ModelState,
    graph: &HeterogeneousGraph,
    adjacencies: &[Arc<Array2<bool>>],
    cfg: &Config,
    t: usize,
    patience: usize,
    best: &mut Option<(f64, usize)>,
) -> Result<Option<usize>> {
    let split = match graph.splits.first() {
        Some(s) => s,
        None => return Ok(None),
    };
    let labels = graph.dense_labels()?;
    let embeddings = embed(state, graph, adjacencies);
    let val_split = hin::LabelSplit {
        split_size: split.split_size,
        train_ids: split.train_ids.clone(),
        val_ids: split.val_ids.clone(),
        test_ids: split.val_ids.clone(), // validation score is what we track
    };
    let metrics = eval::linear_probe(
        &embeddings,
        &labels,
        &val_split,
        graph.num_classes,
        1,
        cfg.train.seed,
    )?;
    let score = metrics.micro_f1.mean;
    match best {
        Some((b, at)) if score <= *b => {
            if t - *at >= patience {
                return Ok(Some(*at));
            }
        }
        _ => *best = Some((score, t)),
    }
    Ok(None)
}

/// Self-describing binary snapshot of a run.
pub struct Checkpoint {
    pub epoch: usize,
    pub config_json: String,
    pub config_hash: String,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub history: Vec<EpochRecord>,
}

const MAGIC: &[u8; 4] = b"HGV1";

impl Checkpoint {
    pub fn capture(
        epoch: usize,
        cfg: &Config,
        state: &ModelState,
        adam: &Adam,
        history: &[EpochRecord],
    ) -> Self {
        let mut tensors = Vec::new();
        state.visit(&mut |name, p| tensors.push((name.to_string(), p.clone())));
        let mut names = Vec::new();
        state.visit(&mut |name, _| names.push(name.to_string()));
        for (k, name) in names.iter().enumerate() {
            tensors.push((format!("adam.m.{name}"), adam.m[k].clone()));
            tensors.push((format!("adam.v.{name}"), adam.v[k].clone()));
        }
        tensors.push((
            "adam.step".to_string(),
            Array2::from_elem((1, 1), adam.step as f64),
        ));
        Checkpoint {
            epoch,
            config_json: cfg.to_json(),
            config_hash: cfg.hash(),
            tensors,
            history: history.to_vec(),
        }
    }

    /// Rebuild the model and optimizer; every expected tensor must be
    /// present with a matching shape.
    pub fn restore(&self, graph: &HeterogeneousGraph, cfg: &Config) -> Result<(ModelState, Adam)> {
        let mut state = ModelState::init(graph, cfg)?;
        let lookup = |name: &str| -> Result<&Array2<f64>> {
            self.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::InvalidData(format!("checkpoint missing tensor '{name}'")))
        };
        let mut err: Option<Error> = None;
        state.visit_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match lookup(name) {
                Ok(t) if t.dim() == p.dim() => p.assign(t),
                Ok(t) => {
                    err = Some(Error::InvalidData(format!(
                        "checkpoint tensor '{name}' has shape {:?}, expected {:?}",
                        t.dim(),
                        p.dim()
                    )))
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mut adam = Adam::new(&state, cfg.train.lr);
        let mut names = Vec::new();
        state.visit(&mut |name, _| names.push(name.to_string()));
        for (k, name) in names.iter().enumerate() {
            adam.m[k].assign(lookup(&format!("adam.m.{name}"))?);
            adam.v[k].assign(lookup(&format!("adam.v.{name}"))?);
        }
        adam.step = lookup("adam.step")?[[0, 0]] as u64;
        Ok((state, adam))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        write_str(&mut buf, &self.config_hash);
        write_str(&mut buf, &self.config_json);
        buf.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for r in &self.history {
            buf.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            for v in [r.l_elbo, r.l_pnsm, r.l_esce, r.total, r.lambda] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, tensor) in &self.tensors {
            write_str(&mut buf, name);
            let (rows, cols) = tensor.dim();
            buf.extend_from_slice(&(rows as u64).to_le_bytes());
            buf.extend_from_slice(&(cols as u64).to_le_bytes());
            for v in tensor.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { buf: &buf, pos: 0, path };
        let magic = cur.bytes(4)?;
        if magic != MAGIC {
            return Err(Error::InvalidData(format!(
                "{}: bad magic {:?}, expected {:?}",
                path.display(),
                &magic[..magic.len().min(4)],
                MAGIC
            )));
        }
        let epoch = cur.u64()? as usize;
        let config_hash = cur.string()?;
        let config_json = cur.string()?;
        let n_history = cur.u64()? as usize;
        let mut history = Vec::with_capacity(n_history);
        for _ in 0..n_history {
            let epoch = cur.u64()? as usize;
            let l_elbo = cur.f64()?;
            let l_pnsm = cur.f64()?;
            let l_esce = cur.f64()?;
            let total = cur.f64()?;
            let lambda = cur.f64()?;
            history.push(EpochRecord {
                epoch,
                l_elbo,
                l_pnsm,
                l_esce,
                total,
                lambda,
            });
        }
        let n_tensors = cur.u64()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = cur.string()?;
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let mut data = Array2::zeros((rows, cols));
            for v in data.iter_mut() {
                *v = cur.f64()?;
            }
            tensors.push((name, data));
        }
        Ok(Checkpoint {
            epoch,
            config_json,
            config_hash,
            tensors,
            history,
        })
    }

    /// The config the checkpoint was produced with.
    pub fn config(&self) -> Result<Config> {
        serde_json::from_str(&self.config_json)
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::InvalidData(format!(
                "{}: truncated checkpoint at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()) as usize;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::InvalidData("checkpoint string is not utf-8".into()))
    }
}
