//! Downstream evaluation: linear-probe node classification (micro/macro
//! F1 over label splits) and k-means node clustering (NMI, ARI), plus
//! embedding export for external visualization.
//!
//! The probe is multinomial logistic regression on frozen embeddings with
//! an L2 sweep selected on validation micro-F1. Clustering runs k-means++
//! with ten restarts per repeat, keeping the best-inertia run.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::distributions::Uniform;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::LabelSplit;
use crate::rng::{rng_for, Stream};

/// L2 strengths swept on validation during probing.
pub const PROBE_REG_SWEEP: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Mean and standard deviation of a repeated measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Classification metrics for one label split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split_size: usize,
    pub micro_f1: MeanStd,
    pub macro_f1: MeanStd,
}

/// Full evaluation report, serialized as JSON and rendered as Markdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Vec<SplitMetrics>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.classification.is_empty() {
            out.push_str("| Split | Micro-F1 | Macro-F1 |\n|---|---|---|\n");
            for s in &self.classification {
                let _ = writeln!(
                    out,
                    "| {} | {:.2}±{:.2} | {:.2}±{:.2} |",
                    s.split_size,
                    100.0 * s.micro_f1.mean,
                    100.0 * s.micro_f1.std,
                    100.0 * s.macro_f1.mean,
                    100.0 * s.macro_f1.std,
                );
            }
        }
        if let (Some(nmi), Some(ari)) = (self.nmi, self.ari) {
            out.push_str("\n| NMI | ARI |\n|---|---|\n");
            let _ = writeln!(out, "| {:.2} | {:.2} |", 100.0 * nmi, 100.0 * ari);
        }
        out
    }
}

/// Micro- and macro-averaged F1. Micro pools TP/FP/FN over classes; macro
/// averages per-class F1, counting classes with an empty denominator as 0.
pub fn f1_scores(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<(f64, f64)> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::InvalidData(format!(
            "f1_scores: got {} truths and {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred.iter()) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidData(format!(
                "f1_scores: label {t}/{p} out of range for {n_classes} classes"
            )));
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let tp_sum: usize = tp.iter().sum();
    let fp_sum: usize = fp.iter().sum();
    let fn_sum: usize = fn_.iter().sum();
    let micro_denom = 2 * tp_sum + fp_sum + fn_sum;
    let micro = if micro_denom == 0 {
        0.0
    } else {
        2.0 * tp_sum as f64 / micro_denom as f64
    };
    let mut macro_sum = 0.0;
    for c in 0..n_classes {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            macro_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    Ok((micro, macro_sum / n_classes as f64))
}

/// Multinomial logistic regression weights.
struct Probe {
    w: Array2<f64>,
    b: Array2<f64>,
}

fn softmax_rows_inplace(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Full-batch Adam on softmax cross-entropy with L2 on the weights.
fn fit_probe(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    l2: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Probe {
    let (n, d) = x.dim();
    let mut w = Array2::from_shape_fn((d, n_classes), |_| {
        0.01 * rng.sample::<f64, _>(StandardNormal)
    });
    let mut b = Array2::zeros((1, n_classes));
    let mut onehot = Array2::zeros((n, n_classes));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }
    let (mut mw, mut vw) = (Array2::<f64>::zeros((d, n_classes)), Array2::<f64>::zeros((d, n_classes)));
    let (mut mb, mut vb) = (Array2::<f64>::zeros((1, n_classes)), Array2::<f64>::zeros((1, n_classes)));
    let (beta1, beta2, eps, lr): (f64, f64, f64, f64) = (0.9, 0.999, 1e-8, 0.1);
    for step in 1..=300u32 {
        let mut probs = x.dot(&w) + &b.row(0);
        softmax_rows_inplace(&mut probs);
        let diff = &probs - &onehot;
        let gw = x.t().dot(&diff) / n as f64 + &(&w * (2.0 * l2));
        let gb = diff
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|v| v / n as f64);
        let t = step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        mw = mw * beta1 + &(&gw * (1.0 - beta1));
        vw = vw * beta2 + &(gw.mapv(|g| g * g) * (1.0 - beta2));
        mb = mb * beta1 + &(&gb * (1.0 - beta1));
        vb = vb * beta2 + &(gb.mapv(|g| g * g) * (1.0 - beta2));
        ndarray::Zip::from(&mut w)
            .and(&mw)
            .and(&vw)
            .for_each(|wi, &m, &v| *wi -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
        ndarray::Zip::from(&mut b)
            .and(&mb)
            .and(&vb)
            .for_each(|bi, &m, &v| *bi -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
    }
    Probe { w, b }
}

fn probe_predict(probe: &Probe, x: &Array2<f64>) -> Vec<usize> {
    let logits = x.dot(&probe.w) + &probe.b.row(0);
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn gather_rows(x: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((ids.len(), x.ncols()));
    for (k, &i) in ids.iter().enumerate() {
        out.row_mut(k).assign(&x.row(i));
    }
    out
}

fn gather_labels(labels: &[usize], ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|&i| labels[i]).collect()
}

/// Center embeddings per dimension and scale by the global standard
/// deviation (a rotation-equivariant normalization).
fn normalize_embeddings(x: &Array2<f64>, train_ids: &[usize]) -> Array2<f64> {
    let train = gather_rows(x, train_ids);
    let mean = train.mean_axis(Axis(0)).expect("nonempty train set");
    let centered = x - &mean;
    let scale = {
        let train_centered = gather_rows(&centered, train_ids);
        let ms = train_centered.iter().map(|v| v * v).sum::<f64>()
            / train_centered.len().max(1) as f64;
        ms.sqrt().max(1e-12)
    };
    centered.mapv(|v| v / scale)
}

/// Linear-probe classification on frozen embeddings: per repeat, sweep the
/// L2 strength, select on validation micro-F1, report test metrics.
pub fn linear_probe(
    embeddings: &Array2<f64>,
    labels: &[usize],
    split: &LabelSplit,
    n_classes: usize,
    repeats: usize,
    master_seed: u64,
) -> Result<SplitMetrics> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut present = vec![false; n_classes];
    for &i in &split.train_ids {
        present[labels[i]] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::InvalidData(format!(
            "class {missing} absent from train split {}",
            split.split_size
        )));
    }
    let x = normalize_embeddings(embeddings, &split.train_ids);
    let x_train = gather_rows(&x, &split.train_ids);
    let y_train = gather_labels(labels, &split.train_ids);
    let x_val = gather_rows(&x, &split.val_ids);
    let y_val = gather_labels(labels, &split.val_ids);
    let x_test = gather_rows(&x, &split.test_ids);
    let y_test = gather_labels(labels, &split.test_ids);

    let mut micro = Vec::with_capacity(repeats);
    let mut macro_ = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut best: Option<(f64, Probe)> = None;
        for (ri, &l2) in PROBE_REG_SWEEP.iter().enumerate() {
            let mut rng = rng_for(master_seed, Stream::Probe, (r * 16 + ri) as u64);
            let probe = fit_probe(&x_train, &y_train, n_classes, l2, &mut rng);
            let (val_micro, _) = f1_scores(&y_val, &probe_predict(&probe, &x_val), n_classes)?;
            if best.as_ref().map_or(true, |(m, _)| val_micro > *m) {
                best = Some((val_micro, probe));
            }
        }
        let (_, probe) = best.expect("sweep is nonempty");
        let (mi, ma) = f1_scores(&y_test, &probe_predict(&probe, &x_test), n_classes)?;
        micro.push(mi);
        macro_.push(ma);
    }
    Ok(SplitMetrics {
        split_size: split.split_size,
        micro_f1: MeanStd::from_samples(&micro),
        macro_f1: MeanStd::from_samples(&macro_),
    })
}

/// Lloyd's algorithm with k-means++ seeding; returns assignments and inertia.
fn kmeans_once(
    data: &Array2<f64>,
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let (n, d) = data.dim();
    let sq_dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding
    let mut centers = Array2::zeros((k, d));
    let first = rng.sample(Uniform::new(0, n));
    centers.row_mut(0).assign(&data.row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            rng.sample(Uniform::new(0, n))
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.row_mut(c).assign(&data.row(next));
        for i in 0..n {
            let d2 = sq_dist(data.row(i), centers.row(c));
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = assign[i];
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d2 = sq_dist(data.row(i), centers.row(c));
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[assign[i]] += 1;
            let mut row = sums.row_mut(assign[i]);
            row += &data.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move an empty center onto the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(data.row(a), centers.row(assign[a]))
                            .partial_cmp(&sq_dist(data.row(b), centers.row(assign[b])))
                            .unwrap()
                    })
                    .unwrap();
                centers.row_mut(c).assign(&data.row(far));
                changed = true;
            } else {
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v / counts[c] as f64);
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = (0..n).map(|i| sq_dist(data.row(i), centers.row(assign[i]))).sum();
    (assign, inertia)
}

/// k-means with `restarts` independent seedings, keeping the best inertia.
pub fn kmeans(
    data: &Array2<f64>,
    k: usize,
    restarts: usize,
    master_seed: u64,
    repeat: u64,
) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts {
        let mut rng = rng_for(master_seed, Stream::Cluster, repeat * 1000 + r as u64);
        let (assign, inertia) = kmeans_once(data, k, &mut rng);
        if best.as_ref().map_or(true, |(_, bi)| inertia < *bi) {
            best = Some((assign, inertia));
        }
    }
    best.expect("at least one restart").0
}

fn contingency(a: &[usize], b: &[usize]) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::zeros((ka, kb));
    for (&x, &y) in a.iter().zip(b.iter()) {
        table[[x, y]] += 1.0;
    }
    let rows = table.sum_axis(Axis(1)).to_vec();
    let cols = table.sum_axis(Axis(0)).to_vec();
    (table, rows, cols)
}

/// Normalized mutual information with arithmetic-mean normalization:
/// NMI = MI / ((H(a) + H(b)) / 2). Two trivial identical partitions give 1;
/// a zero normalizer or zero MI gives 0.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "nmi: length mismatch");
    let n = a.len() as f64;
    let (table, rows, cols) = contingency(a, b);
    let entropy = |margin: &[f64]| -> f64 {
        margin
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&rows);
    let h_b = entropy(&cols);
    if h_a == 0.0 && h_b == 0.0 {
        return 1.0; // both partitions are a single cluster
    }
    let mut mi = 0.0;
    for ((i, j), &nij) in table.indexed_iter() {
        if nij > 0.0 {
            mi += (nij / n) * ((n * nij) / (rows[i] * cols[j])).ln();
        }
    }
    let normalizer = 0.5 * (h_a + h_b);
    if normalizer <= 0.0 || mi <= 0.0 {
        0.0
    } else {
        (mi / normalizer).min(1.0)
    }
}

/// Adjusted Rand index from the contingency table. Identical trivial
/// partitions give 1 by convention.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "ari: length mismatch");
    let n = a.len() as f64;
    let (table, rows, cols) = contingency(a, b);
    let comb2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_ij: f64 = table.iter().map(|&v| comb2(v)).sum();
    let sum_a: f64 = rows.iter().map(|&v| comb2(v)).sum();
    let sum_b: f64 = cols.iter().map(|&v| comb2(v)).sum();
    let total = comb2(n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-15 {
        // both partitions trivial (identical by construction)
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// k-means clustering of the embeddings followed by NMI/ARI against the
/// labels; metrics averaged over `repeats` clusterings.
pub fn cluster_eval(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
    repeats: usize,
    master_seed: u64,
) -> Result<(f64, f64)> {
    if k < 2 {
        return Err(Error::Config(format!("k = {k} must be >= 2")));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut nmi_sum = 0.0;
    let mut ari_sum = 0.0;
    for r in 0..repeats {
        let assign = kmeans(embeddings, k, 10, master_seed, r as u64);
        nmi_sum += nmi(labels, &assign);
        ari_sum += ari(labels, &assign);
    }
    Ok((nmi_sum / repeats as f64, ari_sum / repeats as f64))
}

/// Mean silhouette coefficient of a labeled embedding (Euclidean).
pub fn silhouette_score(data: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = data.nrows();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dist = |i: usize, j: usize| -> f64 {
        data.row(i)
            .iter()
            .zip(data.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut score = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            score += (b - a) / a.max(b);
        }
    }
    score / n as f64
}

/// Write embeddings as CSV: `node_id,label,dim_0..dim_{d-1}`. Unlabeled
/// nodes carry an empty label field.
pub fn export_embeddings(
    embeddings: &Array2<f64>,
    labels: &[Option<usize>],
    path: &Path,
) -> Result<()> {
    let (n, d) = embeddings.dim();
    let mut text = String::from("node_id,label");
    for j in 0..d {
        let _ = write!(text, ",dim_{j}");
    }
    text.push('\n');
    for i in 0..n {
        let label = labels
            .get(i)
            .and_then(|l| l.map(|c| c.to_string()))
            .unwrap_or_default();
        let _ = write!(text, "{i},{label}");
        for j in 0..d {
            let _ = write!(text, ",{}", embeddings[[i, j]]);
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read back an exported embedding file.
pub fn load_embeddings(path: &Path) -> Result<(Array2<f64>, Vec<Option<usize>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty embedding file".into(),
    })?;
    let dim = header.split(',').count().saturating_sub(2);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected {} fields, found {}", dim + 2, parts.len()),
            });
        }
        let label = if parts[1].is_empty() {
            None
        } else {
            Some(parts[1].parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("invalid label '{}'", parts[1]),
            })?)
        };
        labels.push(label);
        let row: Vec<f64> = parts[2..]
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("invalid float '{t}'"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    Ok((m, labels))
}

/// 2-D embeddings as an `Array1` pair helper for plotting.
pub fn column_pair(data: &Array2<f64>, cx: usize, cy: usize) -> (Array1<f64>, Array1<f64>) {
    (data.column(cx).to_owned(), data.column(cy).to_owned())
}
