use std::fmt::Write as _;
use std::path::Path;

use crate::data::{AugmentationSpec, DataFormat};
use crate::error::{Error, Result};
use crate::model::Likelihood;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// ELBO plus the contrastive regularizer (a momentum key encoder is kept).
    CrVae,
    /// Plain ELBO; the key branch is never built.
    Vae,
}

/// Run configuration, read from a flat `key = value` file. Unknown and
/// duplicate keys are errors, so typos fail loudly instead of silently
/// training with a default.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelKind,
    pub likelihood: Likelihood,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub temperature: f64,
    pub ema_momentum: f64,
    pub ema_per_step: bool,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_rel_tol: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub data_dir: String,
    pub data_format: DataFormat,
    pub train_subset: usize,
    pub test_subset: usize,
    pub holdout_frac: f64,
    pub augment: bool,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub crop_ratio_min: f64,
    pub crop_ratio_max: f64,
    pub flip_p: f64,
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    /// None takes the per-channel default (0.2 for RGB, 0 for grayscale).
    pub grayscale_p: Option<f64>,
    pub mkl_samples: usize,
    pub mkl_components: usize,
    pub ablate_gammas: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelKind::CrVae,
            likelihood: Likelihood::Gaussian,
            latent_dim: 16,
            batch_size: 256,
            epochs: 50,
            gamma: 1.0,
            temperature: 1.0,
            ema_momentum: 0.999,
            ema_per_step: false,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-8,
            plateau_patience: 20,
            plateau_factor: 0.9,
            plateau_rel_tol: 1e-4,
            seed: 0,
            eval_every: 1,
            checkpoint_every: 0,
            data_dir: "data".into(),
            data_format: DataFormat::Synthetic,
            train_subset: 0,
            test_subset: 0,
            holdout_frac: 0.1,
            augment: true,
            crop_scale_min: 0.6,
            crop_scale_max: 1.0,
            crop_ratio_min: 0.75,
            crop_ratio_max: 4.0 / 3.0,
            flip_p: 0.5,
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_p: None,
            mkl_samples: 4096,
            mkl_components: 2048,
            ablate_gammas: vec![0.0, 0.5, 1.0],
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for key {key:?}"))),
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key:?} on line {}", lineno + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => {
                self.model = match value {
                    "crvae" => ModelKind::CrVae,
                    "vae" => ModelKind::Vae,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad model {value:?} (expected crvae or vae)"
                        )))
                    }
                }
            }
            "likelihood" => {
                self.likelihood = match value {
                    "gaussian" => Likelihood::Gaussian,
                    "bernoulli" => Likelihood::Bernoulli,
                    _ => {
                        return Err(Error::Config(format!(
                            "bad likelihood {value:?} (expected gaussian or bernoulli)"
                        )))
                    }
                }
            }
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "temperature" => self.temperature = parse_value(key, value)?,
            "ema_momentum" => self.ema_momentum = parse_value(key, value)?,
            "ema_per_step" => self.ema_per_step = parse_bool(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "plateau_patience" => self.plateau_patience = parse_value(key, value)?,
            "plateau_factor" => self.plateau_factor = parse_value(key, value)?,
            "plateau_rel_tol" => self.plateau_rel_tol = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "data_dir" => self.data_dir = value.to_string(),
            "data_format" => self.data_format = value.parse()?,
            "train_subset" => self.train_subset = parse_value(key, value)?,
            "test_subset" => self.test_subset = parse_value(key, value)?,
            "holdout_frac" => self.holdout_frac = parse_value(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "crop_scale_min" => self.crop_scale_min = parse_value(key, value)?,
            "crop_scale_max" => self.crop_scale_max = parse_value(key, value)?,
            "crop_ratio_min" => self.crop_ratio_min = parse_value(key, value)?,
            "crop_ratio_max" => self.crop_ratio_max = parse_value(key, value)?,
            "flip_p" => self.flip_p = parse_value(key, value)?,
            "jitter_p" => self.jitter_p = parse_value(key, value)?,
            "brightness" => self.brightness = parse_value(key, value)?,
            "contrast" => self.contrast = parse_value(key, value)?,
            "saturation" => self.saturation = parse_value(key, value)?,
            "hue" => self.hue = parse_value(key, value)?,
            "grayscale_p" => self.grayscale_p = Some(parse_value(key, value)?),
            "mkl_samples" => self.mkl_samples = parse_value(key, value)?,
            "mkl_components" => self.mkl_components = parse_value(key, value)?,
            "ablate_gammas" => {
                let mut out = Vec::new();
                for part in value.split(',') {
                    out.push(parse_value(key, part.trim())?);
                }
                self.ablate_gammas = out;
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (the contrastive term needs negatives)".into());
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return bad("epochs and eval_every must be positive".into());
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return bad(format!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if self.temperature <= 0.0 {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum must lie in [0, 1], got {}", self.ema_momentum));
        }
        if self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.plateau_patience == 0 {
            return bad("plateau_patience must be positive".into());
        }
        if !(0.0 < self.plateau_factor && self.plateau_factor <= 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1], got {}", self.plateau_factor));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return bad(format!("holdout_frac must lie in [0, 1), got {}", self.holdout_frac));
        }
        for (name, p) in [
            ("flip_p", self.flip_p),
            ("jitter_p", self.jitter_p),
            ("grayscale_p", self.grayscale_p.unwrap_or(0.0)),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        if self.crop_scale_min <= 0.0 || self.crop_scale_min > self.crop_scale_max {
            return bad("crop_scale_min must be positive and at most crop_scale_max".into());
        }
        if self.crop_ratio_min <= 0.0 || self.crop_ratio_min > self.crop_ratio_max {
            return bad("crop_ratio_min must be positive and at most crop_ratio_max".into());
        }
        if self.mkl_samples < 2 || self.mkl_components == 0 {
            return bad("mkl_samples must be at least 2 and mkl_components positive".into());
        }
        if self.ablate_gammas.is_empty() || self.ablate_gammas.iter().any(|g| *g < 0.0) {
            return bad("ablate_gammas must be a non-empty list of non-negative values".into());
        }
        Ok(())
    }

    pub fn augmentation_spec(&self, channels: usize) -> AugmentationSpec {
        if !self.augment {
            return AugmentationSpec::identity();
        }
        let auto = AugmentationSpec::default_for_channels(channels);
        AugmentationSpec {
            crop_scale: (self.crop_scale_min, self.crop_scale_max),
            crop_ratio: (self.crop_ratio_min, self.crop_ratio_max),
            flip_p: self.flip_p,
            jitter_p: self.jitter_p,
            brightness: self.brightness,
            contrast: self.contrast,
            saturation: self.saturation,
            hue: self.hue,
            grayscale_p: self.grayscale_p.unwrap_or(auto.grayscale_p),
        }
    }

    /// Canonical key = value rendering; `parse_str` of the output
    /// reconstructs the configuration exactly.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let model = match self.model {
            ModelKind::CrVae => "crvae",
            ModelKind::Vae => "vae",
        };
        let likelihood = match self.likelihood {
            Likelihood::Gaussian => "gaussian",
            Likelihood::Bernoulli => "bernoulli",
        };
        let format = match self.data_format {
            DataFormat::Idx => "idx",
            DataFormat::IdxEmnist => "idx-emnist",
            DataFormat::Cifar10Bin => "cifar10-bin",
            DataFormat::Synthetic => "synthetic",
        };
        let _ = writeln!(s, "model = {model}");
        let _ = writeln!(s, "likelihood = {likelihood}");
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "ema_momentum = {}", self.ema_momentum);
        let _ = writeln!(s, "ema_per_step = {}", self.ema_per_step);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "plateau_patience = {}", self.plateau_patience);
        let _ = writeln!(s, "plateau_factor = {}", self.plateau_factor);
        let _ = writeln!(s, "plateau_rel_tol = {}", self.plateau_rel_tol);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "data_dir = {}", self.data_dir);
        let _ = writeln!(s, "data_format = {format}");
        let _ = writeln!(s, "train_subset = {}", self.train_subset);
        let _ = writeln!(s, "test_subset = {}", self.test_subset);
        let _ = writeln!(s, "holdout_frac = {}", self.holdout_frac);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "crop_scale_min = {}", self.crop_scale_min);
        let _ = writeln!(s, "crop_scale_max = {}", self.crop_scale_max);
        let _ = writeln!(s, "crop_ratio_min = {}", self.crop_ratio_min);
        let _ = writeln!(s, "crop_ratio_max = {}", self.crop_ratio_max);
        let _ = writeln!(s, "flip_p = {}", self.flip_p);
        let _ = writeln!(s, "jitter_p = {}", self.jitter_p);
        let _ = writeln!(s, "brightness = {}", self.brightness);
        let _ = writeln!(s, "contrast = {}", self.contrast);
        let _ = writeln!(s, "saturation = {}", self.saturation);
        let _ = writeln!(s, "hue = {}", self.hue);
        if let Some(p) = self.grayscale_p {
            let _ = writeln!(s, "grayscale_p = {p}");
        }
        let _ = writeln!(s, "mkl_samples = {}", self.mkl_samples);
        let _ = writeln!(s, "mkl_components = {}", self.mkl_components);
        let gammas: Vec<String> = self.ablate_gammas.iter().map(|g| g.to_string()).collect();
        let _ = writeln!(s, "ablate_gammas = {}", gammas.join(","));
        s
    }
}
