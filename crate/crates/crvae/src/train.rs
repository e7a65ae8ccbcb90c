use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{Config, ModelKind};
use crate::contrastive::{ema_update, info_nce, make_key_encoder};
use crate::data::{
    batch_ranges, epoch_order, gather, load_dataset, one_view, AugmentationSpec,
    Dataset,
};
use crate::error::{Error, Result};
use crate::metrics::{
    active_units, eval_nll, mutual_info, MarginalKlConfig, ACTIVE_UNIT_THRESHOLD,
};
use crate::model::{
    kl_to_prior, kl_to_prior_grad, recon_loss, recon_loss_grad, reparameterize,
    reparameterize_backward, ArchConfig, Encoder, Likelihood, Vae,
};
use crate::nn::optim::Sgd;
use crate::nn::{Element, Mode, Module};
use crate::rng::{restore, snapshot, stream_rng, RngState, Stream};

/// Directory override for on-disk datasets, letting tests and CI point at a
/// fixture without editing configs.
pub const DATA_DIR_ENV: &str = "CRVAE_DATA_DIR";

#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    /// None when the model has no key branch (plain VAE).
    pub nce: Option<f64>,
}

/// One combined gradient step's forward and backward passes.
///
/// The query view is encoded, a latent is drawn by reparameterization,
/// decoded, and scored with the reconstruction and KL terms. When a key
/// branch is given, the key view goes through the momentum encoder and the
/// InfoNCE term is computed between the two latent batches; only the query
/// side receives its gradient. Gradients accumulate into the model's
/// parameter grads, which the caller is expected to have zeroed. The key
/// encoder is never differentiated.
#[allow(clippy::too_many_arguments)]
pub fn cr_step<E: Element>(
    model: &mut Vae<E>,
    key_encoder: Option<&mut Encoder<E>>,
    x_q: &Array4<E>,
    x_k: Option<&Array4<E>>,
    eps_q: &Array2<E>,
    eps_k: Option<&Array2<E>>,
    gamma: f64,
    temperature: f64,
    likelihood: Likelihood,
) -> Result<StepLosses> {
    let post_q = model.encode(x_q, Mode::Train)?;
    let z_q = reparameterize(&post_q, eps_q);
    let xhat = model.decode(&z_q, Mode::Train)?;

    let recon = recon_loss(x_q, &xhat, likelihood)?;
    let kl = kl_to_prior(&post_q);

    let mut nce = None;
    let mut d_zq_nce = None;
    if let Some(key) = key_encoder {
        let x_k = x_k.ok_or_else(|| Error::Invalid("key branch needs a key view".into()))?;
        let eps_k = eps_k.ok_or_else(|| Error::Invalid("key branch needs key noise".into()))?;
        let post_k = key.forward(x_k, Mode::Train);
        let z_k = reparameterize(&post_k, eps_k);
        let (loss, d_zq) = info_nce(&z_q, &z_k, temperature)?;
        nce = Some(loss);
        d_zq_nce = Some(d_zq);
    }

    let total = match nce {
        Some(n) if gamma != 0.0 => recon + kl + gamma * n,
        _ => recon + kl,
    };
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (recon {recon}, kl {kl}, nce {nce:?})"
        )));
    }

    let d_xhat = recon_loss_grad(x_q, &xhat, likelihood);
    let mut d_z = model.decoder.backward(&d_xhat);
    if gamma != 0.0 {
        if let Some(d_zq) = d_zq_nce {
            let g = E::from_f64(gamma);
            for (dv, &nv) in d_z.iter_mut().zip(d_zq.iter()) {
                *dv = *dv + g * nv;
            }
        }
    }
    let (d_mu_r, d_lv_r) = reparameterize_backward(&post_q, eps_q, &d_z);
    let (d_mu_kl, d_lv_kl) = kl_to_prior_grad(&post_q);
    model.encoder.backward(&(&d_mu_r + &d_mu_kl), &(&d_lv_r + &d_lv_kl));

    Ok(StepLosses { total, recon, kl, nce })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub nll: f64,
    pub kl: f64,
    pub marginal_kl: f64,
    pub mi_nats: f64,
    pub mi_bits: f64,
    pub au: usize,
    pub lr: f64,
    pub gamma: f64,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "epoch,split,nll,kl,marginal_kl,mi_nats,mi_bits,au,lr,gamma,seed";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.nll,
            self.kl,
            self.marginal_kl,
            self.mi_nats,
            self.mi_bits,
            self.au,
            self.lr,
            self.gamma,
            self.seed
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub out_dir: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub rows: Vec<MetricRow>,
}

impl TrainReport {
    pub fn final_row(&self, split: &str) -> Option<&MetricRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

struct Rngs {
    shuffle: ChaCha8Rng,
    aug_q: ChaCha8Rng,
    aug_k: ChaCha8Rng,
    eps_q: ChaCha8Rng,
    eps_k: ChaCha8Rng,
    eval: ChaCha8Rng,
}

impl Rngs {
    fn fresh(seed: u64) -> Self {
        Self {
            shuffle: stream_rng(seed, Stream::Shuffle),
            aug_q: stream_rng(seed, Stream::AugQuery),
            aug_k: stream_rng(seed, Stream::AugKey),
            eps_q: stream_rng(seed, Stream::EpsQuery),
            eps_k: stream_rng(seed, Stream::EpsKey),
            eval: stream_rng(seed, Stream::Eval),
        }
    }

    fn named(&self) -> [(&'static str, &ChaCha8Rng); 6] {
        [
            ("rng.shuffle", &self.shuffle),
            ("rng.aug_q", &self.aug_q),
            ("rng.aug_k", &self.aug_k),
            ("rng.eps_q", &self.eps_q),
            ("rng.eps_k", &self.eps_k),
            ("rng.eval", &self.eval),
        ]
    }
}

pub struct Trainer {
    pub cfg: Config,
    pub log: bool,
    out_dir: PathBuf,
    model: Vae<f32>,
    key_encoder: Option<Encoder<f32>>,
    opt: Sgd<f32>,
    rngs: Rngs,
    lr: f64,
    best_loss: f64,
    since_best: usize,
    start_epoch: usize,
    train_set: Dataset,
    holdout: Dataset,
    test_set: Dataset,
    aug: AugmentationSpec,
}

/// Directory override used by the command-line entry points; library callers
/// pass the directory explicitly through the config.
pub fn env_data_dir() -> Option<String> {
    std::env::var(DATA_DIR_ENV).ok().filter(|d| !d.is_empty())
}

fn load_splits(cfg: &Config) -> Result<(Dataset, Dataset, Dataset)> {
    let (mut train, mut test) = load_dataset(Path::new(&cfg.data_dir), cfg.data_format)?;
    if cfg.train_subset > 0 && cfg.train_subset < train.len() {
        let idx: Vec<usize> = (0..cfg.train_subset).collect();
        train = train.subset(&idx);
    }
    if cfg.test_subset > 0 && cfg.test_subset < test.len() {
        let idx: Vec<usize> = (0..cfg.test_subset).collect();
        test = test.subset(&idx);
    }
    let (train, holdout) = train.split_holdout(cfg.holdout_frac);
    if train.len() < 2 {
        return Err(Error::Invalid(format!(
            "training split has {} samples after subsetting; need at least 2",
            train.len()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Invalid(
            "holdout split is empty; raise holdout_frac or the training subset".into(),
        ));
    }
    Ok((train, holdout, test))
}

fn sample_eps(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f32> {
    let mut eps = Array2::<f32>::zeros((n, d));
    for v in eps.iter_mut() {
        let draw: f64 = StandardNormal.sample(rng);
        *v = draw as f32;
    }
    eps
}

impl Trainer {
    pub fn new(cfg: Config, out_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let (train_set, holdout, test_set) = load_splits(&cfg)?;
        let (_, c, h, w) = train_set.images.dim();
        let arch = ArchConfig::for_input(c, h, w, cfg.latent_dim)?;
        let mut model = Vae::<f32>::new(arch.clone())?;
        model.init_params(&mut stream_rng(cfg.seed, Stream::Init));
        let key_encoder = match cfg.model {
            ModelKind::CrVae => Some(make_key_encoder(&arch, &model.encoder)),
            ModelKind::Vae => None,
        };
        let opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
        let aug = cfg.augmentation_spec(c);
        Ok(Self {
            rngs: Rngs::fresh(cfg.seed),
            lr: cfg.lr,
            best_loss: f64::INFINITY,
            since_best: 0,
            start_epoch: 0,
            out_dir: out_dir.to_path_buf(),
            log: false,
            model,
            key_encoder,
            opt,
            train_set,
            holdout,
            test_set,
            aug,
            cfg,
        })
    }

    pub fn resume(ckpt_path: &Path, out_dir: &Path) -> Result<Self> {
        let ckpt = checkpoint::load(ckpt_path)?;
        let cfg = Config::parse_str(&ckpt.config_text)?;
        let mut t = Self::new(cfg, out_dir)?;
        t.restore_state(&ckpt)?;
        Ok(t)
    }

    pub fn model(&mut self) -> &mut Vae<f32> {
        &mut self.model
    }

    pub fn completed_epochs(&self) -> usize {
        self.start_epoch
    }

    pub fn splits(&self) -> (&Dataset, &Dataset, &Dataset) {
        (&self.train_set, &self.holdout, &self.test_set)
    }

    fn mkl_config(&self) -> MarginalKlConfig {
        MarginalKlConfig {
            samples: self.cfg.mkl_samples,
            max_components: self.cfg.mkl_components,
            batch: self.cfg.batch_size,
        }
    }

    /// Input shape the model was built for, recorded so evaluation commands
    /// can rebuild the architecture without the dataset.
    fn input_shape(&self) -> [usize; 3] {
        [self.model.arch.in_c, self.model.arch.in_h, self.model.arch.in_w]
    }

    fn to_checkpoint(&self, epochs_done: usize) -> Checkpoint {
        let mut arrays = Vec::new();
        let shape = self.input_shape();
        arrays.push((
            "input_shape".to_string(),
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[3]),
                shape.iter().map(|&v| v as f64).collect(),
            )
            .unwrap(),
        ));
        for (name, p) in self.model.params_ref() {
            arrays.push((format!("q.{name}"), p.value.mapv(Element::to_f64)));
        }
        for (name, b) in self.model.buffers_ref() {
            arrays.push((format!("qb.{name}"), b.mapv(Element::to_f64)));
        }
        if let Some(key) = &self.key_encoder {
            for (name, p) in key.params_ref() {
                arrays.push((format!("k.{name}"), p.value.mapv(Element::to_f64)));
            }
            for (name, b) in key.buffers_ref() {
                arrays.push((format!("kb.{name}"), b.mapv(Element::to_f64)));
            }
        }
        for (name, _) in self.model.params_ref() {
            if let Some(buf) = self.opt.buffers.get(&name) {
                arrays.push((format!("opt.{name}"), buf.mapv(Element::to_f64)));
            }
        }
        arrays.push((
            "sched".to_string(),
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[3]),
                vec![self.lr, self.best_loss, self.since_best as f64],
            )
            .unwrap(),
        ));
        let blobs = self
            .rngs
            .named()
            .iter()
            .map(|(name, rng)| (name.to_string(), snapshot(rng).to_bytes().to_vec()))
            .collect();
        Checkpoint {
            epoch: epochs_done as u64,
            config_text: self.cfg.to_key_values(),
            arrays,
            blobs,
        }
    }

    fn restore_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let shape = ckpt.array("input_shape")?;
        let want = self.input_shape();
        let got: Vec<usize> = shape.iter().map(|&v| v as usize).collect();
        if got != want {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on input {got:?} but the dataset yields {want:?}"
            )));
        }
        assign_params(&mut self.model, "q", ckpt)?;
        assign_buffers(&mut self.model, "qb", ckpt)?;
        if let Some(key) = &mut self.key_encoder {
            assign_params(key, "k", ckpt)?;
            assign_buffers(key, "kb", ckpt)?;
        }
        self.opt.buffers.clear();
        for (name, p) in self.model.params_ref() {
            if let Ok(arr) = ckpt.array(&format!("opt.{name}")) {
                if arr.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer buffer {name} has shape {:?}, parameter is {:?}",
                        arr.shape(),
                        p.value.shape()
                    )));
                }
                self.opt.buffers.insert(name.clone(), arr.mapv(|v| v as f32));
            }
        }
        let sched = ckpt.array("sched")?;
        if sched.len() != 3 {
            return Err(Error::Checkpoint("scheduler state must have 3 entries".into()));
        }
        self.lr = sched[0];
        self.best_loss = sched[1];
        self.since_best = sched[2] as usize;
        let set = |name: &str, slot: &mut ChaCha8Rng| -> Result<()> {
            *slot = restore(&RngState::from_bytes(ckpt.blob(name)?)?);
            Ok(())
        };
        let Rngs { shuffle, aug_q, aug_k, eps_q, eps_k, eval } = &mut self.rngs;
        set("rng.shuffle", shuffle)?;
        set("rng.aug_q", aug_q)?;
        set("rng.aug_k", aug_k)?;
        set("rng.eps_q", eps_q)?;
        set("rng.eps_k", eps_k)?;
        set("rng.eval", eval)?;
        self.start_epoch = ckpt.epoch as usize;
        Ok(())
    }

    fn eval_split(&mut self, epoch: usize, name: &str, which: Split) -> Result<MetricRow> {
        let ds = match which {
            Split::Holdout => &self.holdout,
            Split::Test => &self.test_set,
        };
        let nll = eval_nll(&mut self.model, ds, self.cfg.likelihood, self.cfg.batch_size)?;
        let mkl_cfg = self.mkl_config();
        let mi = mutual_info(&mut self.model, ds, &mkl_cfg, &mut self.rngs.eval)?;
        let (au, _) =
            active_units(&mut self.model, ds, self.cfg.batch_size, ACTIVE_UNIT_THRESHOLD)?;
        Ok(MetricRow {
            epoch,
            split: name.to_string(),
            nll,
            kl: mi.kl,
            marginal_kl: mi.marginal_kl,
            mi_nats: mi.nats,
            mi_bits: mi.bits,
            au,
            lr: self.lr,
            gamma: self.cfg.gamma,
            seed: self.cfg.seed,
        })
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<(f64, f64)> {
        let order = epoch_order(self.train_set.len(), &mut self.rngs.shuffle);
        let d = self.cfg.latent_dim;
        let mut loss_weighted = 0.0;
        let mut nce_weighted = 0.0;
        let mut seen = 0usize;
        for (bi, (lo, hi)) in batch_ranges(self.train_set.len(), self.cfg.batch_size)
            .into_iter()
            .enumerate()
        {
            let idx = &order[lo..hi];
            let batch = gather(&self.train_set.images, idx);
            let b = idx.len();
            let x_q = one_view(&batch, &self.aug, &mut self.rngs.aug_q);
            let eps_q = sample_eps(&mut self.rngs.eps_q, b, d);
            let (x_k, eps_k) = if self.key_encoder.is_some() {
                (
                    Some(one_view(&batch, &self.aug, &mut self.rngs.aug_k)),
                    Some(sample_eps(&mut self.rngs.eps_k, b, d)),
                )
            } else {
                (None, None)
            };

            self.model.zero_grad();
            let losses = cr_step(
                &mut self.model,
                self.key_encoder.as_mut(),
                &x_q,
                x_k.as_ref(),
                &eps_q,
                eps_k.as_ref(),
                self.cfg.gamma,
                self.cfg.temperature,
                self.cfg.likelihood,
            )
            .map_err(|e| {
                Error::Numeric(format!(
                    "training aborted at epoch {epoch}, batch {bi}: {e}; latest state is in {}",
                    self.out_dir.join("last.ckpt").display()
                ))
            })?;

            self.opt.lr = self.lr;
            self.opt.step(self.model.params_mut());
            if self.cfg.ema_per_step {
                if let Some(key) = &mut self.key_encoder {
                    ema_update(key, &self.model.encoder, self.cfg.ema_momentum)?;
                }
            }
            loss_weighted += losses.total * b as f64;
            nce_weighted += losses.nce.unwrap_or(0.0) * b as f64;
            seen += b;
        }
        if !self.cfg.ema_per_step {
            if let Some(key) = &mut self.key_encoder {
                ema_update(key, &self.model.encoder, self.cfg.ema_momentum)?;
            }
        }
        let denom = seen.max(1) as f64;
        Ok((loss_weighted / denom, nce_weighted / denom))
    }

    fn update_schedule(&mut self, epoch_loss: f64) {
        if epoch_loss < self.best_loss - self.cfg.plateau_rel_tol * self.best_loss.abs() {
            self.best_loss = epoch_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.plateau_patience {
                self.lr *= self.cfg.plateau_factor;
                self.since_best = 0;
            }
        }
    }

    pub fn run(&mut self) -> Result<TrainReport> {
        std::fs::create_dir_all(&self.out_dir)?;
        let metrics_path = self.out_dir.join("metrics.csv");
        let ckpt_path = self.out_dir.join("last.ckpt");
        if self.start_epoch == 0 || !metrics_path.exists() {
            std::fs::write(self.out_dir.join("config.txt"), self.cfg.to_key_values())?;
            std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))?;
        }

        let mut rows = Vec::new();
        for epoch in self.start_epoch..self.cfg.epochs {
            let (loss, nce) = self.train_epoch(epoch)?;
            self.update_schedule(loss);
            if self.log {
                eprintln!(
                    "epoch {:>3}/{} loss {loss:.4} nce {nce:.4} lr {:.6}",
                    epoch + 1,
                    self.cfg.epochs,
                    self.lr
                );
            }

            let last = epoch + 1 == self.cfg.epochs;
            if (epoch + 1) % self.cfg.eval_every == 0 || last {
                let hold = self.eval_split(epoch + 1, "holdout", Split::Holdout)?;
                let test = self.eval_split(epoch + 1, "test", Split::Test)?;
                let mut file = std::fs::OpenOptions::new().append(true).open(&metrics_path)?;
                writeln!(file, "{}", hold.csv())?;
                writeln!(file, "{}", test.csv())?;
                rows.push(hold);
                rows.push(test);
            }

            checkpoint::save(&ckpt_path, &self.to_checkpoint(epoch + 1))?;
            if self.cfg.checkpoint_every > 0 && (epoch + 1) % self.cfg.checkpoint_every == 0 {
                let path = self.out_dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                checkpoint::save(&path, &self.to_checkpoint(epoch + 1))?;
            }
        }

        Ok(TrainReport {
            out_dir: self.out_dir.clone(),
            metrics_path,
            checkpoint_path: ckpt_path,
            rows,
        })
    }
}

#[derive(Clone, Copy)]
enum Split {
    Holdout,
    Test,
}

fn assign_params<E: Element, M: Module<E>>(
    module: &mut M,
    prefix: &str,
    ckpt: &Checkpoint,
) -> Result<()> {
    for (name, p) in module.params_mut() {
        let arr = ckpt.array(&format!("{prefix}.{name}"))?;
        if arr.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?} in the checkpoint, model expects {:?}",
                arr.shape(),
                p.value.shape()
            )));
        }
        p.value = arr.mapv(E::from_f64);
    }
    Ok(())
}

fn assign_buffers<E: Element, M: Module<E>>(
    module: &mut M,
    prefix: &str,
    ckpt: &Checkpoint,
) -> Result<()> {
    for (name, b) in module.buffers_mut() {
        let arr = ckpt.array(&format!("{prefix}.{name}"))?;
        if arr.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "buffer {name} has shape {:?} in the checkpoint, model expects {:?}",
                arr.shape(),
                b.shape()
            )));
        }
        *b = arr.mapv(E::from_f64);
    }
    Ok(())
}

/// Rebuild the trained query model from a checkpoint alone.
pub fn load_model(ckpt: &Checkpoint) -> Result<(Config, Vae<f32>)> {
    let cfg = Config::parse_str(&ckpt.config_text)?;
    let shape = ckpt.array("input_shape")?;
    if shape.len() != 3 {
        return Err(Error::Checkpoint("input_shape must have 3 entries".into()));
    }
    let (c, h, w) = (shape[0] as usize, shape[1] as usize, shape[2] as usize);
    let arch = ArchConfig::for_input(c, h, w, cfg.latent_dim)?;
    let mut model = Vae::<f32>::new(arch)?;
    assign_params(&mut model, "q", ckpt)?;
    assign_buffers(&mut model, "qb", ckpt)?;
    Ok((cfg, model))
}

pub fn train(cfg: Config, out_dir: &Path, log: bool) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg, out_dir)?;
    trainer.log = log;
    trainer.run()
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub gamma: f64,
    pub test: MetricRow,
}

/// Train once per gamma in `cfg.ablate_gammas` with everything else (seed
/// included) shared, and write a combined `ablation.csv` of the final test
/// metrics.
pub fn ablate_gamma(cfg: &Config, out_dir: &Path, log: bool) -> Result<Vec<AblationRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &gamma in &cfg.ablate_gammas {
        let mut run_cfg = cfg.clone();
        run_cfg.gamma = gamma;
        let sub = out_dir.join(format!("gamma_{gamma}"));
        let report = train(run_cfg, &sub, log)?;
        let test = report
            .final_row("test")
            .ok_or_else(|| Error::Invalid("ablation run produced no test metrics".into()))?
            .clone();
        rows.push(AblationRow { gamma, test });
    }
    let mut text = String::from("gamma,nll,kl,marginal_kl,mi_nats,mi_bits,au\n");
    for row in &rows {
        let t = &row.test;
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.gamma, t.nll, t.kl, t.marginal_kl, t.mi_nats, t.mi_bits, t.au
        ));
    }
    std::fs::write(out_dir.join("ablation.csv"), text)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synth_to_idx;
    use crate::data::DataFormat;

    fn tiny_cfg(dir: &Path) -> Config {
        let mut cfg = Config::default();
        cfg.data_format = DataFormat::Idx;
        cfg.data_dir = dir.to_string_lossy().into_owned();
        cfg.epochs = 2;
        cfg.batch_size = 16;
        cfg.latent_dim = 4;
        cfg.mkl_samples = 64;
        cfg.mkl_components = 32;
        cfg.seed = 5;
        cfg
    }

    fn fixture(dir: &Path) {
        synth_to_idx(dir, 64, 16, 3).unwrap();
    }

    #[test]
    fn short_run_writes_metrics_and_checkpoint() {
        let data = tempfile::tempdir().unwrap();
        fixture(data.path());
        let out = tempfile::tempdir().unwrap();
        let report = train(tiny_cfg(data.path()), out.path(), false).unwrap();
        assert_eq!(report.rows.len(), 4);
        let text = std::fs::read_to_string(&report.metrics_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(text.lines().count(), 5);
        assert!(report.checkpoint_path.exists());
        for row in &report.rows {
            assert!(row.nll.is_finite() && row.kl.is_finite());
            assert!(row.au <= 4);
        }
        assert_eq!(report.final_row("test").unwrap().epoch, 2);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let data = tempfile::tempdir().unwrap();
        fixture(data.path());
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(data.path());
        train(cfg.clone(), out1.path(), false).unwrap();
        train(cfg, out2.path(), false).unwrap();
        let a = std::fs::read(out1.path().join("metrics.csv")).unwrap();
        let b = std::fs::read(out2.path().join("metrics.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(out1.path().join("last.ckpt")).unwrap();
        let b = std::fs::read(out2.path().join("last.ckpt")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tempfile::tempdir().unwrap();
        fixture(data.path());
        let straight = tempfile::tempdir().unwrap();
        let split_a = tempfile::tempdir().unwrap();
        let split_b = tempfile::tempdir().unwrap();

        let mut cfg = tiny_cfg(data.path());
        cfg.epochs = 4;
        train(cfg.clone(), straight.path(), false).unwrap();

        let mut short = cfg.clone();
        short.epochs = 2;
        // Same run recipe, stopped halfway: the config embedded in the
        // checkpoint says 2 epochs, so patch it back up to 4 before resuming.
        train(short, split_a.path(), false).unwrap();
        let ckpt = checkpoint::load(&split_a.path().join("last.ckpt")).unwrap();
        let mut resumed_cfg = Config::parse_str(&ckpt.config_text).unwrap();
        resumed_cfg.epochs = 4;
        let patched = Checkpoint { config_text: resumed_cfg.to_key_values(), ..ckpt };
        let patched_path = split_b.path().join("patched.ckpt");
        checkpoint::save(&patched_path, &patched).unwrap();

        let mut trainer = Trainer::resume(&patched_path, split_b.path()).unwrap();
        trainer.run().unwrap();

        let full = checkpoint::load(&straight.path().join("last.ckpt")).unwrap();
        let resumed = checkpoint::load(&split_b.path().join("last.ckpt")).unwrap();
        assert_eq!(full.epoch, resumed.epoch);
        for ((n1, a1), (n2, a2)) in full.arrays.iter().zip(resumed.arrays.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a1, a2, "array {n1} differs after resume");
        }
        assert_eq!(full.blobs, resumed.blobs);
    }

    #[test]
    fn gamma_zero_crvae_matches_plain_vae() {
        let data = tempfile::tempdir().unwrap();
        fixture(data.path());
        let out_cr = tempfile::tempdir().unwrap();
        let out_vae = tempfile::tempdir().unwrap();

        let mut cfg = tiny_cfg(data.path());
        cfg.gamma = 0.0;
        train(cfg.clone(), out_cr.path(), false).unwrap();

        cfg.model = ModelKind::Vae;
        train(cfg, out_vae.path(), false).unwrap();

        let a = std::fs::read(out_cr.path().join("metrics.csv")).unwrap();
        let b = std::fs::read(out_vae.path().join("metrics.csv")).unwrap();
        assert_eq!(a, b);

        let cr = checkpoint::load(&out_cr.path().join("last.ckpt")).unwrap();
        let vae = checkpoint::load(&out_vae.path().join("last.ckpt")).unwrap();
        for (name, arr) in &vae.arrays {
            if name.starts_with("q.") || name.starts_with("qb.") || name.starts_with("opt.") {
                assert_eq!(cr.array(name).unwrap(), arr, "{name} differs");
            }
        }
    }

    #[test]
    fn checkpoint_rebuilds_the_model() {
        let data = tempfile::tempdir().unwrap();
        fixture(data.path());
        let out = tempfile::tempdir().unwrap();
        let report = train(tiny_cfg(data.path()), out.path(), false).unwrap();
        let ckpt = checkpoint::load(&report.checkpoint_path).unwrap();
        let (cfg, mut model) = load_model(&ckpt).unwrap();
        assert_eq!(cfg.latent_dim, 4);
        let (train_split, _, _) = load_splits(&cfg).unwrap();
        let nll = eval_nll(&mut model, &train_split, cfg.likelihood, 16).unwrap();
        assert!(nll.is_finite());
    }
}
