use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crvae::checkpoint;
use crvae::config::Config;
use crvae::data::{load_dataset, synthetic, DataFormat, Dataset};
use crvae::error::{Error, Result};
use crvae::metrics::{
    active_units, encode_dataset, eval_nll, export_latents, mutual_info, read_latents,
    MarginalKlConfig, ACTIVE_UNIT_THRESHOLD,
};
use crvae::probes::{accuracy, knn_classify, linear_probe, ProbeConfig};
use crvae::rng::{stream_rng, Stream};
use crvae::train::{ablate_gamma, env_data_dir, load_model, train, Trainer};
use crvae::tsne::{tsne_2d, TsneConfig};

#[derive(Parser)]
#[command(name = "crvae", version, about = "Contrastively regularized VAE: training and collapse diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write metrics.csv plus checkpoints to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's contrastive weight.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on a dataset split and print one JSON line.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (defaults to the one recorded in the checkpoint).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// idx, idx-emnist, cifar10-bin, or synthetic.
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a classifier on exported latents and print one JSON line.
    Probe {
        #[arg(long)]
        latents: PathBuf,
        /// linear or knn.
        #[arg(long)]
        kind: String,
        /// Neighbor count for the knn probe (clamped to the train size).
        #[arg(long, default_value_t = 200)]
        k: usize,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export posterior means to CSV, optionally with a 2-d t-SNE layout.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tsne: bool,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Keep only the first N samples (0 keeps all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train once per gamma in the config's ablate_gammas list.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Write the synthetic glyph corpus as IDX files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(path: &Path, seed: Option<u64>, gamma: Option<f64>) -> Result<Config> {
    let mut cfg = Config::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(g) = gamma {
        cfg.gamma = g;
        cfg.validate()?;
    }
    if cfg.data_format != DataFormat::Synthetic {
        if let Some(dir) = env_data_dir() {
            cfg.data_dir = dir;
        }
    }
    Ok(cfg)
}

fn pick_split(
    cfg: &Config,
    dataset: Option<PathBuf>,
    format: Option<String>,
    split: &str,
) -> Result<Dataset> {
    let format = match format {
        Some(f) => f.parse()?,
        None => cfg.data_format,
    };
    let dir = match dataset {
        Some(d) => d,
        None => match env_data_dir() {
            Some(d) if format != DataFormat::Synthetic => PathBuf::from(d),
            _ => PathBuf::from(&cfg.data_dir),
        },
    };
    let (train_set, test_set) = load_dataset(&dir, format)?;
    match split {
        "train" => Ok(train_set),
        "test" => Ok(test_set),
        other => Err(Error::Invalid(format!("unknown split {other:?} (expected train or test)"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, seed, gamma, out, resume, quiet } => {
            let report = match resume {
                Some(ckpt) => {
                    let mut trainer = Trainer::resume(&ckpt, &out)?;
                    if let Some(s) = seed {
                        if s != trainer.cfg.seed {
                            return Err(Error::Invalid(
                                "--seed cannot change when resuming; it is part of the checkpoint"
                                    .into(),
                            ));
                        }
                    }
                    if let Some(g) = gamma {
                        if g != trainer.cfg.gamma {
                            return Err(Error::Invalid(
                                "--gamma cannot change when resuming; it is part of the checkpoint"
                                    .into(),
                            ));
                        }
                    }
                    trainer.log = !quiet;
                    if !quiet {
                        let done = trainer.completed_epochs();
                        let total = trainer.cfg.epochs;
                        if done >= total {
                            println!(
                                "checkpoint already trained {done}/{total} epochs; nothing left to do"
                            );
                        } else {
                            println!(
                                "resuming at epoch {}/{total} with the checkpoint's configuration",
                                done + 1
                            );
                        }
                    }
                    trainer.run()?
                }
                None => train(load_config(&config, seed, gamma)?, &out, !quiet)?,
            };
            println!("wrote {}", report.metrics_path.display());
            println!("wrote {}", report.checkpoint_path.display());
            if let Some(row) = report.final_row("test") {
                println!(
                    "final test: nll {} kl {} mi {} nats ({} bits) au {}",
                    row.nll, row.kl, row.mi_nats, row.mi_bits, row.au
                );
            }
            Ok(())
        }
        Cmd::Eval { checkpoint: ckpt_path, dataset, format, split, seed } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let (cfg, mut model) = load_model(&ckpt)?;
            let ds = pick_split(&cfg, dataset, format, &split)?;
            let mut rng = stream_rng(seed.unwrap_or(cfg.seed), Stream::Eval);
            let mkl_cfg = MarginalKlConfig {
                samples: cfg.mkl_samples,
                max_components: cfg.mkl_components,
                batch: cfg.batch_size,
            };
            let nll = eval_nll(&mut model, &ds, cfg.likelihood, cfg.batch_size)?;
            let mi = mutual_info(&mut model, &ds, &mkl_cfg, &mut rng)?;
            let (au, _) = active_units(&mut model, &ds, cfg.batch_size, ACTIVE_UNIT_THRESHOLD)?;
            println!(
                "{{\"split\":\"{split}\",\"n\":{},\"nll\":{nll},\"kl\":{},\"marginal_kl\":{},\
                 \"marginal_se\":{},\"mi_nats\":{},\"mi_bits\":{},\"au\":{au}}}",
                ds.len(),
                mi.kl,
                mi.marginal_kl,
                mi.marginal_se,
                mi.nats,
                mi.bits
            );
            Ok(())
        }
        Cmd::Probe { latents, kind, k, train_frac, seed } => {
            let (labels, feats) = read_latents(&latents)?;
            let n = labels.len();
            if !(0.0 < train_frac && train_frac < 1.0) {
                return Err(Error::Invalid(format!(
                    "train_frac must lie in (0, 1), got {train_frac}"
                )));
            }
            let mut rng = stream_rng(seed, Stream::Probe);
            let order = crvae::data::epoch_order(n, &mut rng);
            let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
            let take = |idx: &[usize]| {
                let x = ndarray::Array2::from_shape_fn((idx.len(), feats.ncols()), |(i, j)| {
                    feats[[idx[i], j]]
                });
                let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                (x, y)
            };
            let (xtr, ytr) = take(&order[..n_train]);
            let (xte, yte) = take(&order[n_train..]);
            let classes = ytr.iter().copied().max().unwrap_or(0) as usize + 1;
            let (acc, k_used) = match kind.as_str() {
                "linear" => {
                    let acc =
                        linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default(), &mut rng)?;
                    (acc, 0)
                }
                "knn" => {
                    let k_used = k.min(xtr.nrows()).max(1);
                    let preds = knn_classify(&xtr, &ytr, &xte, k_used)?;
                    (accuracy(&preds, &yte), k_used)
                }
                other => {
                    return Err(Error::Invalid(format!(
                        "unknown probe kind {other:?} (expected linear or knn)"
                    )))
                }
            };
            if kind == "knn" {
                println!(
                    "{{\"kind\":\"knn\",\"accuracy\":{acc},\"k\":{k_used},\"n_train\":{n_train},\
                     \"n_test\":{},\"classes\":{classes}}}",
                    n - n_train
                );
            } else {
                println!(
                    "{{\"kind\":\"linear\",\"accuracy\":{acc},\"n_train\":{n_train},\
                     \"n_test\":{},\"classes\":{classes}}}",
                    n - n_train
                );
            }
            Ok(())
        }
        Cmd::Embed { checkpoint: ckpt_path, out, tsne, dataset, format, split, limit, perplexity, seed } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let (cfg, mut model) = load_model(&ckpt)?;
            let mut ds = pick_split(&cfg, dataset, format, &split)?;
            if limit > 0 && limit < ds.len() {
                let idx: Vec<usize> = (0..limit).collect();
                ds = ds.subset(&idx);
            }
            export_latents(&mut model, &ds, &out, cfg.batch_size)?;
            println!("wrote {}", out.display());
            if tsne {
                let (mu, _) = encode_dataset(&mut model, &ds, cfg.batch_size)?;
                let tsne_cfg = TsneConfig { perplexity, ..Default::default() };
                let mut rng = stream_rng(seed.unwrap_or(cfg.seed), Stream::Tsne);
                let result = tsne_2d(&mu, &tsne_cfg, &mut rng)?;
                let tsne_path = out.with_extension("tsne.csv");
                let mut text = String::from("index,label,tsne_0,tsne_1\n");
                for i in 0..ds.len() {
                    text.push_str(&format!(
                        "{},{},{},{}\n",
                        i,
                        ds.labels[i],
                        result.coords[[i, 0]],
                        result.coords[[i, 1]]
                    ));
                }
                std::fs::write(&tsne_path, text)?;
                println!(
                    "wrote {} (kl {} -> {})",
                    tsne_path.display(),
                    result.initial_kl,
                    result.final_kl
                );
            }
            Ok(())
        }
        Cmd::Ablate { config, out, seed, quiet } => {
            let cfg = load_config(&config, seed, None)?;
            let rows = ablate_gamma(&cfg, &out, !quiet)?;
            println!("wrote {}", out.join("ablation.csv").display());
            for row in &rows {
                println!(
                    "gamma {}: mi {} nats ({} bits), au {}, nll {}",
                    row.gamma, row.test.mi_nats, row.test.mi_bits, row.test.au, row.test.nll
                );
            }
            Ok(())
        }
        Cmd::Synth { out, train, test, seed } => {
            synthetic::synth_to_idx(&out, train, test, seed)?;
            println!("wrote {} train and {} test images to {}", train, test, out.display());
            Ok(())
        }
    }
}
