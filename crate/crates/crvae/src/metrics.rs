use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{kl_per_sample, recon_per_image, Likelihood, Vae};
use crate::nn::tensor::pairwise_sum;
use crate::nn::{Element, Mode};

const LN_2PI: f64 = 1.8378770664093453;

/// Evaluation chunks cover every sample; unlike training batches a trailing
/// singleton is kept.
fn eval_chunks(n: usize, batch: usize) -> Vec<(usize, usize)> {
    assert!(batch >= 1);
    (0..n.div_ceil(batch))
        .map(|i| (i * batch, ((i + 1) * batch).min(n)))
        .collect()
}

fn batch_input<E: Element>(ds: &Dataset, lo: usize, hi: usize) -> Array4<E> {
    ds.images
        .slice(ndarray::s![lo..hi, .., .., ..])
        .mapv(|v| E::from_f64(f64::from(v)))
}

fn require_nonempty(ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Invalid(format!("{what} needs a non-empty dataset")));
    }
    Ok(())
}

/// Mean reconstruction loss per image with the posterior mean as the code,
/// in eval mode. For the Bernoulli likelihood this is the negative
/// log-likelihood in nats; for the Gaussian it is the squared error term.
pub fn eval_nll<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    likelihood: Likelihood,
    batch: usize,
) -> Result<f64> {
    require_nonempty(ds, "eval_nll")?;
    let mut per_image = Vec::with_capacity(ds.len());
    for (lo, hi) in eval_chunks(ds.len(), batch) {
        let x = batch_input::<E>(ds, lo, hi);
        let post = model.encode(&x, Mode::Eval)?;
        let xhat = model.decode(&post.mu, Mode::Eval)?;
        per_image.extend(recon_per_image(&x, &xhat, likelihood)?);
    }
    Ok(pairwise_sum(&per_image) / ds.len() as f64)
}

/// Mean KL(q(z|x) || p(z)) over the dataset, in eval mode.
pub fn eval_kl<E: Element>(model: &mut Vae<E>, ds: &Dataset, batch: usize) -> Result<f64> {
    require_nonempty(ds, "eval_kl")?;
    let mut per_image = Vec::with_capacity(ds.len());
    for (lo, hi) in eval_chunks(ds.len(), batch) {
        let x = batch_input::<E>(ds, lo, hi);
        let post = model.encode(&x, Mode::Eval)?;
        per_image.extend(kl_per_sample(&post));
    }
    Ok(pairwise_sum(&per_image) / ds.len() as f64)
}

/// Posterior means and log-variances for the whole dataset, in f64.
pub fn encode_dataset<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    batch: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    require_nonempty(ds, "encode_dataset")?;
    let mut mu_rows = Vec::new();
    let mut lv_rows = Vec::new();
    for (lo, hi) in eval_chunks(ds.len(), batch) {
        let x = batch_input::<E>(ds, lo, hi);
        let post = model.encode(&x, Mode::Eval)?;
        mu_rows.push(post.mu.mapv(Element::to_f64));
        lv_rows.push(post.logvar.mapv(Element::to_f64));
    }
    let views: Vec<_> = mu_rows.iter().map(|a| a.view()).collect();
    let mu = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let views: Vec<_> = lv_rows.iter().map(|a| a.view()).collect();
    let lv = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((mu, lv))
}

#[derive(Clone, Copy, Debug)]
pub struct MarginalKlEstimate {
    pub value: f64,
    pub se: f64,
    pub samples: usize,
    pub components: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct MarginalKlConfig {
    pub samples: usize,
    pub max_components: usize,
    pub batch: usize,
}

impl Default for MarginalKlConfig {
    fn default() -> Self {
        Self { samples: 4096, max_components: 2048, batch: 256 }
    }
}

/// Scoring S samples against M mixture components costs S*M*d work; refuse
/// configurations past this many (sample, component) pairs.
pub const MARGINAL_KL_MAX_PAIRS: usize = 1 << 26;

/// Monte Carlo estimate of KL(q(z) || p(z)) where q(z) is the uniform
/// mixture of the given diagonal-Gaussian posteriors and p is the standard
/// normal prior.
///
/// Ancestral sampling: each of `samples` draws picks a component uniformly,
/// samples z from it, and scores log q(z) - log p(z) by log-sum-exp over all
/// components. Returns the mean and its standard error.
pub fn marginal_kl_from_posteriors(
    mu: &Array2<f64>,
    logvar: &Array2<f64>,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MarginalKlEstimate> {
    let (m, d) = mu.dim();
    if logvar.dim() != (m, d) {
        return Err(Error::Shape(format!(
            "posterior means {:?} vs log-variances {:?}",
            mu.dim(),
            logvar.dim()
        )));
    }
    if m == 0 || d == 0 {
        return Err(Error::Invalid("marginal KL needs at least one posterior".into()));
    }
    if samples < 2 {
        return Err(Error::Invalid("marginal KL needs at least two samples".into()));
    }
    if samples * m > MARGINAL_KL_MAX_PAIRS {
        return Err(Error::Invalid(format!(
            "marginal KL budget exceeded: {samples} samples x {m} components > {MARGINAL_KL_MAX_PAIRS} \
             pairs; lower the sample count or cap the component set"
        )));
    }

    // Per-component constants: inverse variances and the log-density offset.
    let inv_var = logvar.mapv(|lv| (-lv).exp());
    let log_const: Vec<f64> = (0..m)
        .map(|i| {
            let sum_lv: f64 = logvar.row(i).sum();
            -0.5 * (sum_lv + d as f64 * LN_2PI) - (m as f64).ln()
        })
        .collect();

    let mut ratios = Vec::with_capacity(samples);
    let mut z = vec![0.0f64; d];
    for _ in 0..samples {
        let comp = rng.random_range(0..m);
        for (j, zj) in z.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            *zj = mu[[comp, j]] + (0.5 * logvar[[comp, j]]).exp() * eps;
        }
        let mut max_term = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(m);
        for i in 0..m {
            let mut quad = 0.0;
            for j in 0..d {
                let diff = z[j] - mu[[i, j]];
                quad += diff * diff * inv_var[[i, j]];
            }
            let t = log_const[i] - 0.5 * quad;
            max_term = max_term.max(t);
            terms.push(t);
        }
        let log_q = max_term + terms.iter().map(|t| (t - max_term).exp()).sum::<f64>().ln();
        let log_p = -0.5 * (d as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>());
        ratios.push(log_q - log_p);
    }

    let mean = pairwise_sum(&ratios) / samples as f64;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (samples - 1) as f64;
    Ok(MarginalKlEstimate {
        value: mean,
        se: (var / samples as f64).sqrt(),
        samples,
        components: m,
    })
}

/// Marginal KL of the aggregate posterior over `ds` (subsampled to
/// `max_components` posteriors when the dataset is larger).
pub fn marginal_kl<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    cfg: &MarginalKlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MarginalKlEstimate> {
    let (mut mu, mut lv) = encode_dataset(model, ds, cfg.batch)?;
    let n = mu.nrows();
    if n > cfg.max_components {
        let order = crate::data::epoch_order(n, rng);
        let picks = &order[..cfg.max_components];
        mu = ndarray::Array2::from_shape_fn((picks.len(), mu.ncols()), |(i, j)| mu[[picks[i], j]]);
        lv = ndarray::Array2::from_shape_fn((picks.len(), lv.ncols()), |(i, j)| lv[[picks[i], j]]);
    }
    marginal_kl_from_posteriors(&mu, &lv, cfg.samples, rng)
}

#[derive(Clone, Copy, Debug)]
pub struct MutualInfo {
    pub nats: f64,
    pub bits: f64,
    pub kl: f64,
    pub marginal_kl: f64,
    pub marginal_se: f64,
}

/// Estimator of I(x; z) under the encoder: mean posterior KL minus the
/// marginal KL. Both terms are against the same prior, so the difference is
/// E_x KL(q(z|x) || q(z)).
pub fn mutual_info<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    cfg: &MarginalKlConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MutualInfo> {
    let kl = eval_kl(model, ds, cfg.batch)?;
    let mkl = marginal_kl(model, ds, cfg, rng)?;
    let nats = kl - mkl.value;
    Ok(MutualInfo {
        nats,
        bits: nats / std::f64::consts::LN_2,
        kl,
        marginal_kl: mkl.value,
        marginal_se: mkl.se,
    })
}

pub const ACTIVE_UNIT_THRESHOLD: f64 = 0.01;

/// Number of latent coordinates whose posterior-mean variance across the
/// dataset exceeds `threshold`, plus the per-coordinate variances.
pub fn active_units_from_mu(mu: &Array2<f64>, threshold: f64) -> (usize, Vec<f64>) {
    let (n, d) = mu.dim();
    let mut vars = vec![0.0; d];
    if n > 1 {
        for j in 0..d {
            let col = mu.column(j);
            let mean = col.sum() / n as f64;
            vars[j] = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        }
    }
    let count = vars.iter().filter(|&&v| v > threshold).count();
    (count, vars)
}

pub fn active_units<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    batch: usize,
    threshold: f64,
) -> Result<(usize, Vec<f64>)> {
    let (mu, _) = encode_dataset(model, ds, batch)?;
    Ok(active_units_from_mu(&mu, threshold))
}

/// Write posterior means to CSV as `index,label,mu_0,...,mu_{d-1}`. The
/// output is a pure function of the model and dataset, so re-export yields
/// byte-identical files.
pub fn export_latents<E: Element>(
    model: &mut Vae<E>,
    ds: &Dataset,
    path: &Path,
    batch: usize,
) -> Result<()> {
    let (mu, _) = encode_dataset(model, ds, batch)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "index,label")?;
    for j in 0..mu.ncols() {
        write!(out, ",mu_{j}")?;
    }
    writeln!(out)?;
    for i in 0..mu.nrows() {
        write!(out, "{},{}", i, ds.labels[i])?;
        for j in 0..mu.ncols() {
            write!(out, ",{}", E::from_f64(mu[[i, j]]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a CSV produced by `export_latents` back into (labels, features).
pub fn read_latents(path: &Path) -> Result<(Vec<u8>, Array2<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { offset: 0, msg: "empty latent CSV".into() })?;
    let dim = header.split(',').filter(|c| c.starts_with("mu_")).count();
    if dim == 0 {
        return Err(Error::Parse { offset: 0, msg: "latent CSV header has no mu_ columns".into() });
    }
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Parse {
                offset: (lineno + 2) as u64,
                msg: format!("expected {} fields, got {}", dim + 2, fields.len()),
            });
        }
        let label: u8 = fields[1].parse().map_err(|_| Error::Parse {
            offset: (lineno + 2) as u64,
            msg: format!("bad label {:?}", fields[1]),
        })?;
        labels.push(label);
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                offset: (lineno + 2) as u64,
                msg: format!("bad float {f:?}"),
            })?;
            feats.push(v);
        }
    }
    let n = labels.len();
    let feats = Array2::from_shape_vec((n, dim), feats).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((labels, feats))
}
