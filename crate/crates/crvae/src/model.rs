use ndarray::{Array2, Array4, ArrayD};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{Relu, Sigmoid};
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::linear::Linear;
use crate::nn::norm::BatchNorm2d;
use crate::nn::param::{with_prefix, Mode, Module, Param};
use crate::nn::tensor::{conv_out_len, conv_transpose_out_len, pairwise_sum};
use crate::nn::Element;

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;
const BERNOULLI_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    Gaussian,
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeconvSpec {
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

/// Layer plan for the asymmetric encoder/decoder pair.
///
/// Encoder: `enc` conv blocks (conv + batchnorm + relu), flatten, then two
/// linear heads for mu and logvar. Decoder: linear from the latent to
/// `dec_seed`, then `dec` transposed-conv blocks where every block except the
/// last is deconv + batchnorm + relu and the last is deconv + sigmoid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub latent_dim: usize,
    pub enc: Vec<ConvSpec>,
    pub dec_seed: (usize, usize, usize),
    pub dec: Vec<DeconvSpec>,
}

impl ArchConfig {
    /// Default stack for a given input geometry. 28x28 and 32x32 inputs get
    /// the full asymmetric architecture (the two padding variants); 4x4 gets
    /// the hand-sized stack used by gradient checks.
    pub fn for_input(in_c: usize, in_h: usize, in_w: usize, latent_dim: usize) -> Result<Self> {
        match (in_h, in_w) {
            (28, 28) => Ok(Self::preset(in_c, 28, latent_dim)),
            (32, 32) => Ok(Self::preset(in_c, 32, latent_dim)),
            (4, 4) => Ok(Self::toy(in_c, latent_dim)),
            _ => Err(Error::Config(format!(
                "no architecture preset for {in_h}x{in_w} inputs (supported: 28x28, 32x32, 4x4)"
            ))),
        }
    }

    fn preset(in_c: usize, side: usize, latent_dim: usize) -> Self {
        let enc = vec![
            ConvSpec { out_c: 32, k: 3, stride: 2, pad: 0 },
            ConvSpec { out_c: 64, k: 3, stride: 2, pad: 1 },
            ConvSpec { out_c: 128, k: 3, stride: 2, pad: 1 },
        ];
        // Decoder paddings [1,1,0] with output paddings [0,0,1] rebuild
        // 4 -> 7 -> 13 -> 28; [1,1,1]/[1,1,1] rebuild 4 -> 8 -> 16 -> 32.
        // A final stride-1 deconv maps 32 feature channels to the image.
        let (pads, out_pads) = if side == 28 {
            ([1, 1, 0], [0, 0, 1])
        } else {
            ([1, 1, 1], [1, 1, 1])
        };
        let chans = [128, 64, 32];
        let mut dec: Vec<DeconvSpec> = (0..3)
            .map(|i| DeconvSpec {
                out_c: chans[i],
                k: 3,
                stride: 2,
                pad: pads[i],
                out_pad: out_pads[i],
            })
            .collect();
        dec.push(DeconvSpec { out_c: in_c, k: 3, stride: 1, pad: 1, out_pad: 0 });
        Self {
            in_c,
            in_h: side,
            in_w: side,
            latent_dim,
            enc,
            dec_seed: (256, 4, 4),
            dec,
        }
    }

    /// Small 4x4 model for finite-difference tests.
    pub fn toy(in_c: usize, latent_dim: usize) -> Self {
        Self {
            in_c,
            in_h: 4,
            in_w: 4,
            latent_dim,
            enc: vec![ConvSpec { out_c: 3, k: 3, stride: 2, pad: 1 }],
            dec_seed: (4, 2, 2),
            dec: vec![
                DeconvSpec { out_c: 3, k: 3, stride: 2, pad: 1, out_pad: 1 },
                DeconvSpec { out_c: in_c, k: 3, stride: 1, pad: 1, out_pad: 0 },
            ],
        }
    }

    /// (channels, h, w) after each encoder block.
    pub fn enc_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.enc.len());
        let (mut h, mut w) = (self.in_h, self.in_w);
        for spec in &self.enc {
            h = conv_out_len(h, spec.k, spec.stride, spec.pad);
            w = conv_out_len(w, spec.k, spec.stride, spec.pad);
            out.push((spec.out_c, h, w));
        }
        out
    }

    pub fn flat_dim(&self) -> usize {
        let (c, h, w) = *self.enc_shapes().last().expect("empty encoder");
        c * h * w
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be >= 1".into()));
        }
        if self.enc.is_empty() || self.dec.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one block".into()));
        }
        for (c, h, w) in self.enc_shapes() {
            if c == 0 || h == 0 || w == 0 {
                return Err(Error::Config("encoder block collapses to zero size".into()));
            }
        }
        let (mut c, mut h, mut w) = self.dec_seed;
        for spec in &self.dec {
            if spec.out_pad >= spec.stride {
                return Err(Error::Config("out_pad must be < stride".into()));
            }
            h = conv_transpose_out_len(h, spec.k, spec.stride, spec.pad, spec.out_pad);
            w = conv_transpose_out_len(w, spec.k, spec.stride, spec.pad, spec.out_pad);
            c = spec.out_c;
        }
        if (c, h, w) != (self.in_c, self.in_h, self.in_w) {
            return Err(Error::Config(format!(
                "decoder produces {c}x{h}x{w}, input is {}x{}x{}",
                self.in_c, self.in_h, self.in_w
            )));
        }
        Ok(())
    }
}

/// Per-sample latent mean and log-variance, q(z|x).
#[derive(Clone, Debug)]
pub struct GaussianPosterior<E: Element> {
    pub mu: Array2<E>,
    pub logvar: Array2<E>,
}

impl<E: Element> GaussianPosterior<E> {
    pub fn dim(&self) -> (usize, usize) {
        self.mu.dim()
    }
}

struct EncBlock<E: Element> {
    conv: Conv2d<E>,
    bn: BatchNorm2d<E>,
    relu: Relu<E>,
}

pub struct Encoder<E: Element> {
    blocks: Vec<EncBlock<E>>,
    mu_head: Linear<E>,
    logvar_head: Linear<E>,
    feat_shape: (usize, usize, usize),
    pub in_shape: (usize, usize, usize),
    clamp_mask: Option<Array2<E>>,
}

impl<E: Element> Encoder<E> {
    pub fn new(arch: &ArchConfig) -> Self {
        let mut blocks = Vec::with_capacity(arch.enc.len());
        let mut in_c = arch.in_c;
        for spec in &arch.enc {
            blocks.push(EncBlock {
                conv: Conv2d::new(in_c, spec.out_c, spec.k, spec.stride, spec.pad),
                bn: BatchNorm2d::new(spec.out_c),
                relu: Relu::new(),
            });
            in_c = spec.out_c;
        }
        let feat_shape = *arch.enc_shapes().last().unwrap();
        let flat = arch.flat_dim();
        Self {
            blocks,
            mu_head: Linear::new(flat, arch.latent_dim),
            logvar_head: Linear::new(flat, arch.latent_dim),
            feat_shape,
            in_shape: (arch.in_c, arch.in_h, arch.in_w),
            clamp_mask: None,
        }
    }

    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        for b in &mut self.blocks {
            b.conv.init_params(rng);
        }
        self.mu_head.init_params(rng);
        self.logvar_head.init_params(rng);
    }

    pub fn forward(&mut self, x: &Array4<E>, mode: Mode) -> GaussianPosterior<E> {
        let (b, c, h, w) = x.dim();
        assert_eq!(
            (c, h, w),
            self.in_shape,
            "Encoder: input shape does not match architecture"
        );
        let mut t = x.clone();
        for blk in &mut self.blocks {
            t = blk.conv.forward(&t);
            t = blk.bn.forward(&t, mode);
            t = blk.relu.forward(&t);
        }
        let (fc, fh, fw) = self.feat_shape;
        debug_assert_eq!(t.dim(), (b, fc, fh, fw));
        let flat = t.into_shape_with_order((b, fc * fh * fw)).unwrap();
        let mu = self.mu_head.forward(&flat);
        let raw = self.logvar_head.forward(&flat);

        let lo = E::from_f64(LOGVAR_MIN);
        let hi = E::from_f64(LOGVAR_MAX);
        let one = E::one();
        let mut mask = Array2::<E>::zeros(raw.dim());
        let mut logvar = raw;
        for (v, m) in logvar.iter_mut().zip(mask.iter_mut()) {
            if *v < lo {
                *v = lo;
            } else if *v > hi {
                *v = hi;
            } else {
                *m = one;
            }
        }
        self.clamp_mask = Some(mask);
        GaussianPosterior { mu, logvar }
    }

    pub fn backward(&mut self, d_mu: &Array2<E>, d_logvar: &Array2<E>) -> Array4<E> {
        let mask = self
            .clamp_mask
            .take()
            .expect("Encoder: backward without forward");
        let d_lv = d_logvar * &mask;
        let mut d_flat = self.mu_head.backward(d_mu);
        d_flat = d_flat + self.logvar_head.backward(&d_lv);
        let b = d_flat.dim().0;
        let (fc, fh, fw) = self.feat_shape;
        let mut t = d_flat.into_shape_with_order((b, fc, fh, fw)).unwrap();
        for blk in self.blocks.iter_mut().rev() {
            t = blk.relu.backward(&t);
            t = blk.bn.backward(&t);
            t = blk.conv.backward(&t);
        }
        t
    }
}

impl<E: Element> Module<E> for Encoder<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("block{i}.conv"), b.conv.params_mut()));
            out.extend(with_prefix(&format!("block{i}.bn"), b.bn.params_mut()));
        }
        out.extend(with_prefix("mu", self.mu_head.params_mut()));
        out.extend(with_prefix("logvar", self.logvar_head.params_mut()));
        out
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(with_prefix(&format!("block{i}.conv"), b.conv.params_ref()));
            out.extend(with_prefix(&format!("block{i}.bn"), b.bn.params_ref()));
        }
        out.extend(with_prefix("mu", self.mu_head.params_ref()));
        out.extend(with_prefix("logvar", self.logvar_head.params_ref()));
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut ArrayD<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("block{i}.bn"), b.bn.buffers_mut()));
        }
        out
    }

    fn buffers_ref(&self) -> Vec<(String, &ArrayD<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(with_prefix(&format!("block{i}.bn"), b.bn.buffers_ref()));
        }
        out
    }
}

enum DecAct<E: Element> {
    Relu(Relu<E>),
    Sigmoid(Sigmoid<E>),
}

struct DecBlock<E: Element> {
    deconv: ConvTranspose2d<E>,
    bn: Option<BatchNorm2d<E>>,
    act: DecAct<E>,
}

pub struct Decoder<E: Element> {
    seed: Linear<E>,
    seed_shape: (usize, usize, usize),
    blocks: Vec<DecBlock<E>>,
    pub out_shape: (usize, usize, usize),
}

impl<E: Element> Decoder<E> {
    pub fn new(arch: &ArchConfig) -> Self {
        let (sc, sh, sw) = arch.dec_seed;
        let mut blocks = Vec::with_capacity(arch.dec.len());
        let mut in_c = sc;
        let last = arch.dec.len() - 1;
        for (i, spec) in arch.dec.iter().enumerate() {
            let deconv =
                ConvTranspose2d::new(in_c, spec.out_c, spec.k, spec.stride, spec.pad, spec.out_pad);
            let (bn, act) = if i == last {
                (None, DecAct::Sigmoid(Sigmoid::new()))
            } else {
                (Some(BatchNorm2d::new(spec.out_c)), DecAct::Relu(Relu::new()))
            };
            blocks.push(DecBlock { deconv, bn, act });
            in_c = spec.out_c;
        }
        Self {
            seed: Linear::new(arch.latent_dim, sc * sh * sw),
            seed_shape: arch.dec_seed,
            blocks,
            out_shape: (arch.in_c, arch.in_h, arch.in_w),
        }
    }

    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        self.seed.init_params(rng);
        for b in &mut self.blocks {
            b.deconv.init_params(rng);
        }
    }

    pub fn forward(&mut self, z: &Array2<E>, mode: Mode) -> Array4<E> {
        let b = z.dim().0;
        let (sc, sh, sw) = self.seed_shape;
        let flat = self.seed.forward(z);
        let mut t = flat.into_shape_with_order((b, sc, sh, sw)).unwrap();
        for blk in &mut self.blocks {
            t = blk.deconv.forward(&t);
            if let Some(bn) = &mut blk.bn {
                t = bn.forward(&t, mode);
            }
            t = match &mut blk.act {
                DecAct::Relu(a) => a.forward(&t),
                DecAct::Sigmoid(a) => a.forward(&t),
            };
        }
        let (oc, oh, ow) = self.out_shape;
        debug_assert_eq!(t.dim(), (b, oc, oh, ow));
        t
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array2<E> {
        let mut t = g.clone();
        for blk in self.blocks.iter_mut().rev() {
            t = match &mut blk.act {
                DecAct::Relu(a) => a.backward(&t),
                DecAct::Sigmoid(a) => a.backward(&t),
            };
            if let Some(bn) = &mut blk.bn {
                t = bn.backward(&t);
            }
            t = blk.deconv.backward(&t);
        }
        let b = t.dim().0;
        let (sc, sh, sw) = self.seed_shape;
        let flat = t.into_shape_with_order((b, sc * sh * sw)).unwrap();
        self.seed.backward(&flat)
    }
}

impl<E: Element> Module<E> for Decoder<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut out = with_prefix("seed", self.seed.params_mut());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(with_prefix(&format!("block{i}.deconv"), b.deconv.params_mut()));
            if let Some(bn) = &mut b.bn {
                out.extend(with_prefix(&format!("block{i}.bn"), bn.params_mut()));
            }
        }
        out
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        let mut out = with_prefix("seed", self.seed.params_ref());
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(with_prefix(&format!("block{i}.deconv"), b.deconv.params_ref()));
            if let Some(bn) = &b.bn {
                out.extend(with_prefix(&format!("block{i}.bn"), bn.params_ref()));
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut ArrayD<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            if let Some(bn) = &mut b.bn {
                out.extend(with_prefix(&format!("block{i}.bn"), bn.buffers_mut()));
            }
        }
        out
    }

    fn buffers_ref(&self) -> Vec<(String, &ArrayD<E>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(bn) = &b.bn {
                out.extend(with_prefix(&format!("block{i}.bn"), bn.buffers_ref()));
            }
        }
        out
    }
}

pub struct Vae<E: Element> {
    pub arch: ArchConfig,
    pub encoder: Encoder<E>,
    pub decoder: Decoder<E>,
}

impl<E: Element> Vae<E> {
    pub fn new(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let encoder = Encoder::new(&arch);
        let decoder = Decoder::new(&arch);
        Ok(Self { arch, encoder, decoder })
    }

    /// Draw order is fixed: encoder blocks front to back, then the mu and
    /// logvar heads, then the decoder seed and its blocks.
    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        self.encoder.init_params(rng);
        self.decoder.init_params(rng);
    }

    pub fn encode(&mut self, x: &Array4<E>, mode: Mode) -> Result<GaussianPosterior<E>> {
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (self.arch.in_c, self.arch.in_h, self.arch.in_w) {
            return Err(Error::Config(format!(
                "input {c}x{h}x{w} does not match model input {}x{}x{}",
                self.arch.in_c, self.arch.in_h, self.arch.in_w
            )));
        }
        Ok(self.encoder.forward(x, mode))
    }

    pub fn decode(&mut self, z: &Array2<E>, mode: Mode) -> Result<Array4<E>> {
        if z.dim().1 != self.arch.latent_dim {
            return Err(Error::Config(format!(
                "latent dim {} does not match model latent dim {}",
                z.dim().1,
                self.arch.latent_dim
            )));
        }
        Ok(self.decoder.forward(z, mode))
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.param_count()
    }
}

impl<E: Element> Module<E> for Vae<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut out = with_prefix("enc", self.encoder.params_mut());
        out.extend(with_prefix("dec", self.decoder.params_mut()));
        out
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        let mut out = with_prefix("enc", self.encoder.params_ref());
        out.extend(with_prefix("dec", self.decoder.params_ref()));
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut ArrayD<E>)> {
        let mut out = with_prefix("enc", self.encoder.buffers_mut());
        out.extend(with_prefix("dec", self.decoder.buffers_mut()));
        out
    }

    fn buffers_ref(&self) -> Vec<(String, &ArrayD<E>)> {
        let mut out = with_prefix("enc", self.encoder.buffers_ref());
        out.extend(with_prefix("dec", self.decoder.buffers_ref()));
        out
    }
}

pub fn reparameterize<E: Element>(
    post: &GaussianPosterior<E>,
    eps: &Array2<E>,
) -> Array2<E> {
    assert_eq!(post.mu.dim(), eps.dim(), "reparameterize: eps shape mismatch");
    let half = E::from_f64(0.5);
    let mut z = post.mu.clone();
    for ((zv, &lv), &e) in z.iter_mut().zip(post.logvar.iter()).zip(eps.iter()) {
        *zv = *zv + (half * lv).exp() * e;
    }
    z
}

/// Gradients of a loss through z = mu + exp(logvar/2) * eps:
/// returns (d_mu, d_logvar) given d_z.
pub fn reparameterize_backward<E: Element>(
    post: &GaussianPosterior<E>,
    eps: &Array2<E>,
    d_z: &Array2<E>,
) -> (Array2<E>, Array2<E>) {
    let half = E::from_f64(0.5);
    let d_mu = d_z.clone();
    let mut d_lv = Array2::<E>::zeros(post.logvar.dim());
    for (((d, &g), &lv), &e) in d_lv
        .iter_mut()
        .zip(d_z.iter())
        .zip(post.logvar.iter())
        .zip(eps.iter())
    {
        *d = g * e * half * (half * lv).exp();
    }
    (d_mu, d_lv)
}

/// Per-image reconstruction error: sum over pixels of squared error
/// (gaussian) or binary cross entropy (bernoulli).
pub fn recon_per_image<E: Element>(
    x: &Array4<E>,
    xhat: &Array4<E>,
    kind: Likelihood,
) -> Result<Vec<f64>> {
    if x.dim() != xhat.dim() {
        return Err(Error::Shape(format!(
            "recon: x {:?} vs xhat {:?}",
            x.dim(),
            xhat.dim()
        )));
    }
    let (b, c, h, w) = x.dim();
    let px = c * h * w;
    let xs = x.as_slice().expect("recon: x must be contiguous");
    let hs = xhat.as_slice().expect("recon: xhat must be contiguous");
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut acc = 0f64;
        for i in bi * px..(bi + 1) * px {
            let xv = xs[i].to_f64();
            let hv = hs[i].to_f64();
            if !xv.is_finite() || !hv.is_finite() {
                return Err(Error::Numeric(format!(
                    "recon: non-finite value at flat index {i}"
                )));
            }
            match kind {
                Likelihood::Gaussian => {
                    let d = xv - hv;
                    acc += d * d;
                }
                Likelihood::Bernoulli => {
                    let p = hv.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
                    acc -= xv * p.ln() + (1.0 - xv) * (1.0 - p).ln();
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Mean over images of the per-image reconstruction error.
pub fn recon_loss<E: Element>(x: &Array4<E>, xhat: &Array4<E>, kind: Likelihood) -> Result<f64> {
    let per = recon_per_image(x, xhat, kind)?;
    if per.is_empty() {
        return Err(Error::Invalid("recon: empty batch".into()));
    }
    Ok(pairwise_sum(&per) / per.len() as f64)
}

/// d recon_loss / d xhat.
pub fn recon_loss_grad<E: Element>(x: &Array4<E>, xhat: &Array4<E>, kind: Likelihood) -> Array4<E> {
    let b = x.dim().0 as f64;
    let mut g = Array4::<E>::zeros(x.dim());
    for ((d, &xv), &hv) in g.iter_mut().zip(x.iter()).zip(xhat.iter()) {
        let xf = xv.to_f64();
        let hf = hv.to_f64();
        let val = match kind {
            Likelihood::Gaussian => 2.0 * (hf - xf) / b,
            Likelihood::Bernoulli => {
                if hf < BERNOULLI_CLAMP || hf > 1.0 - BERNOULLI_CLAMP {
                    0.0
                } else {
                    (-xf / hf + (1.0 - xf) / (1.0 - hf)) / b
                }
            }
        };
        *d = E::from_f64(val);
    }
    g
}

/// Per-sample KL(q(z|x) || N(0, I)) in nats.
pub fn kl_per_sample<E: Element>(post: &GaussianPosterior<E>) -> Vec<f64> {
    let (b, _) = post.dim();
    let mut out = Vec::with_capacity(b);
    for (mu_row, lv_row) in post.mu.outer_iter().zip(post.logvar.outer_iter()) {
        let mut acc = 0f64;
        for (&m, &lv) in mu_row.iter().zip(lv_row.iter()) {
            let mf = m.to_f64();
            let lf = lv.to_f64();
            acc += 0.5 * (mf * mf + lf.exp() - 1.0 - lf);
        }
        out.push(acc);
    }
    out
}

/// Batch mean of the closed-form KL to the standard normal prior.
pub fn kl_to_prior<E: Element>(post: &GaussianPosterior<E>) -> f64 {
    let per = kl_per_sample(post);
    pairwise_sum(&per) / per.len() as f64
}

/// (d_mu, d_logvar) of kl_to_prior.
pub fn kl_to_prior_grad<E: Element>(post: &GaussianPosterior<E>) -> (Array2<E>, Array2<E>) {
    let b = E::from_f64(post.dim().0 as f64);
    let half = E::from_f64(0.5);
    let one = E::one();
    let d_mu = post.mu.mapv(|m| m / b);
    let d_lv = post.logvar.mapv(|lv| half * (lv.exp() - one) / b);
    (d_mu, d_lv)
}

pub fn vae_loss<E: Element>(
    x: &Array4<E>,
    xhat: &Array4<E>,
    post: &GaussianPosterior<E>,
    kind: Likelihood,
) -> Result<f64> {
    Ok(recon_loss(x, xhat, kind)? + kl_to_prior(post))
}
