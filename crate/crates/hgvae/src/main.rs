//! Command-line surface: train, embed, eval, gen-synthetic, sweep, plot.
//!
//! Exit codes: 1 for config/usage errors, 2 for data errors, 3 for
//! numerical divergence. Logs are line-oriented with ISO-8601 timestamps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};

use hgvae::config::Config;
use hgvae::error::{Error, Result};
use hgvae::{eval, hin, synth, train};

#[derive(Parser)]
#[command(
    name = "hgvae",
    version,
    about = "Self-supervised heterogeneous graph embeddings: variational meta-path attention with progressive hard negatives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        /// JSON config file; defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-key overrides, e.g. --set loss.tau=0.3 (repeatable).
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write deterministic embeddings from a trained checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate an embedding file: linear-probe classification or k-means
    /// clustering.
    Eval {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// classify | cluster | both
        #[arg(long, default_value = "both")]
        task: String,
        /// Comma-separated split sizes for classification.
        #[arg(long, default_value = "20,40,60")]
        splits: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here (also printed as Markdown).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic planted-partition dataset directory.
    GenSynthetic {
        /// JSON file with generator parameters.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train + evaluate across a parameter sweep, one report per value.
    Sweep {
        /// kappa | hidden_dim | num_negatives
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Scatter-plot a 2-D (or reduced) embedding file as a PNG.
    Plot {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which two dimensions to draw.
        #[arg(long, default_value = "0,1")]
        dims: String,
    },
}

fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn log_info(msg: &str) {
    eprintln!("{} INFO {msg}", timestamp());
}

fn log_error(kind: &str, msg: &str) {
    eprintln!("{} ERROR {kind}: {msg}", timestamp());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap already renders usage; route through stderr and exit 1
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.exit_code() {
                1 => "config",
                3 => "numerical",
                _ => "data",
            };
            log_error(kind, &e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data_dir,
            out_dir,
            seed,
            overrides,
            resume,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            for o in &overrides {
                cfg.apply_override(o)?;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let graph = hin::load_dataset(&data_dir)?;
            log_info(&format!(
                "training: {} target nodes, {} meta-paths, {} epochs, seed {}",
                graph.target_count(),
                graph.meta_paths.len(),
                cfg.train.epochs,
                cfg.train.seed
            ));
            let epochs = cfg.train.epochs;
            let run = train::train_with_callback(
                &graph,
                &cfg,
                Some(&out_dir),
                resume.as_deref(),
                None,
                &mut |rec| {
                    if rec.epoch % 20 == 0 || rec.epoch + 1 == epochs {
                        log_info(&format!(
                            "epoch {}: total {:.4} (elbo {:.4}, pnsm {:.4}, esce {:.4}, lambda {:.2})",
                            rec.epoch, rec.total, rec.l_elbo, rec.l_pnsm, rec.l_esce, rec.lambda
                        ));
                    }
                },
            )?;
            log_info(&format!(
                "done: {} epochs, final total loss {:.4}",
                run.history.len(),
                run.history.last().map_or(f64::NAN, |r| r.total)
            ));
            log_info(&format!(
                "artifacts in {}: loss_history.csv, checkpoint.bin, config.resolved.json",
                out_dir.display()
            ));
            Ok(())
        }
        Command::Embed {
            checkpoint,
            data_dir,
            out,
        } => {
            let ckpt = train::Checkpoint::load(&checkpoint)?;
            let cfg = ckpt.config()?;
            let graph = hin::load_dataset(&data_dir)?;
            let (state, _) = ckpt.restore(&graph, &cfg)?;
            let adjacencies = train::prepare_adjacencies(&graph)?;
            let embeddings = train::embed(&state, &graph, &adjacencies);
            eval::export_embeddings(&embeddings, &graph.labels, &out)?;
            log_info(&format!(
                "wrote {} x {} embeddings to {}",
                embeddings.nrows(),
                embeddings.ncols(),
                out.display()
            ));
            Ok(())
        }
        Command::Eval {
            embeddings,
            data_dir,
            task,
            splits,
            repeats,
            seed,
            out,
        } => {
            let graph = hin::load_dataset(&data_dir)?;
            let (emb, _) = eval::load_embeddings(&embeddings)?;
            if emb.nrows() != graph.target_count() {
                return Err(Error::InvalidData(format!(
                    "embedding rows {} do not match target count {}",
                    emb.nrows(),
                    graph.target_count()
                )));
            }
            let report = run_eval(&graph, &emb, &task, &splits, repeats, seed)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = &out {
                std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
                log_info(&format!("report written to {}", path.display()));
            }
            println!("{}", report.to_markdown());
            Ok(())
        }
        Command::GenSynthetic { spec, out } => {
            let spec = synth::SyntheticSpec::load(&spec)?;
            let graph = synth::gen_synthetic(&spec, &out)?;
            log_info(&format!(
                "wrote synthetic dataset: {} target nodes, {} aux types, {} meta-paths -> {}",
                graph.target_count(),
                graph.node_types.len() - 1,
                graph.meta_paths.len(),
                out.display()
            ));
            Ok(())
        }
        Command::Sweep {
            param,
            values,
            config,
            data_dir,
            out_dir,
            seed,
            repeats,
        } => {
            let key = match param.as_str() {
                "kappa" => "pnsg.kappa",
                "hidden_dim" => "model.hidden_dim",
                "num_negatives" => "pnsg.num_negatives",
                other => {
                    return Err(Error::Config(format!(
                        "unknown sweep parameter '{other}' (kappa | hidden_dim | num_negatives)"
                    )))
                }
            };
            let graph = hin::load_dataset(&data_dir)?;
            let base = {
                let mut cfg = load_config(config.as_deref())?;
                if let Some(s) = seed {
                    cfg.train.seed = s;
                }
                cfg
            };
            for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let mut cfg = base.clone();
                cfg.apply_override(&format!("{key}={value}"))?;
                let run_dir = out_dir.join(format!("sweep_{param}_{value}"));
                log_info(&format!("sweep {param}={value}: training"));
                let run = train::train(&graph, &cfg, Some(&run_dir))?;
                let adjacencies = train::prepare_adjacencies(&graph)?;
                let emb = train::embed(&run.state, &graph, &adjacencies);
                let split_list: String = graph
                    .splits
                    .iter()
                    .map(|s| s.split_size.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let mut report =
                    run_eval(&graph, &emb, "both", &split_list, repeats, cfg.train.seed)?;
                report.config_hash = cfg.hash();
                let path = run_dir.join("report.json");
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&report).expect("report serializes"),
                )
                .map_err(|e| Error::io(&path, e))?;
                let first = report.classification.first();
                log_info(&format!(
                    "sweep {param}={value}: micro-F1 {} nmi {}",
                    first.map_or("n/a".to_string(), |s| format!("{:.4}", s.micro_f1.mean)),
                    report.nmi.map_or("n/a".to_string(), |v| format!("{v:.4}")),
                ));
            }
            Ok(())
        }
        Command::Plot {
            embeddings,
            out,
            dims,
        } => plot_embeddings(&embeddings, &out, &dims),
    }
}

fn run_eval(
    graph: &hin::HeterogeneousGraph,
    emb: &ndarray::Array2<f64>,
    task: &str,
    splits: &str,
    repeats: usize,
    seed: u64,
) -> Result<eval::EvalReport> {
    let labels = graph.dense_labels()?;
    let mut classification = Vec::new();
    let mut nmi = None;
    let mut ari = None;
    let classify = task == "classify" || task == "both";
    let cluster = task == "cluster" || task == "both";
    if !classify && !cluster {
        return Err(Error::Config(format!(
            "unknown task '{task}' (classify | cluster | both)"
        )));
    }
    if classify {
        for part in splits.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let size: usize = part
                .parse()
                .map_err(|_| Error::Config(format!("bad split size '{part}'")))?;
            let split = graph.split(size).ok_or_else(|| {
                Error::InvalidData(format!("dataset has no split of size {size}"))
            })?;
            classification.push(eval::linear_probe(
                emb,
                &labels,
                split,
                graph.num_classes,
                repeats,
                seed,
            )?);
        }
    }
    if cluster {
        let (n, a) = eval::cluster_eval(emb, &labels, graph.num_classes, repeats, seed)?;
        nmi = Some(n);
        ari = Some(a);
    }
    let seeds = (0..repeats as u64).map(|r| seed.wrapping_add(r)).collect();
    Ok(eval::EvalReport {
        classification,
        nmi,
        ari,
        repeats,
        seeds,
        config_hash: String::new(),
    })
}

/// Color per class; grey for unlabeled points.
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn plot_embeddings(embeddings: &Path, out: &Path, dims: &str) -> Result<()> {
    let (emb, labels) = eval::load_embeddings(embeddings)?;
    let parts: Vec<usize> = dims
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --dims '{dims}'")))?;
    if parts.len() != 2 {
        return Err(Error::Config("--dims needs exactly two indices".into()));
    }
    let (cx, cy) = (parts[0], parts[1]);
    if cx >= emb.ncols() || cy >= emb.ncols() {
        return Err(Error::InvalidData(format!(
            "dims ({cx},{cy}) out of range for {}-dim embeddings",
            emb.ncols()
        )));
    }
    if emb.nrows() == 0 {
        return Err(Error::InvalidData("no points to plot".into()));
    }
    let (xs, ys) = eval::column_pair(&emb, cx, cy);
    let (min_x, max_x) = xs.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let (min_y, max_y) = ys.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let size = 800u32;
    let margin = 20.0;
    let scale = |v: f64, lo: f64, hi: f64| -> f64 {
        if hi > lo {
            margin + (v - lo) / (hi - lo) * (size as f64 - 2.0 * margin)
        } else {
            size as f64 / 2.0
        }
    };
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb([255, 255, 255]));
    for i in 0..emb.nrows() {
        let px = scale(xs[i], min_x, max_x) as i64;
        let py = (size as f64 - scale(ys[i], min_y, max_y)) as i64;
        let color = labels[i].map_or([160, 160, 160], |c| PALETTE[c % PALETTE.len()]);
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && (x as u32) < size && (y as u32) < size {
                    img.put_pixel(x as u32, y as u32, image::Rgb(color));
                }
            }
        }
    }
    img.save(out)
        .map_err(|e| Error::InvalidData(format!("writing {}: {e}", out.display())))?;
    log_info(&format!("plot written to {}", out.display()));
    Ok(())
}
