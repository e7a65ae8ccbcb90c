use std::path::Path;

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::{stream_rng, Stream};

use super::idx;

pub const SYNTH_SIDE: usize = 28;
pub const SYNTH_CLASSES: usize = 10;

struct Glyph {
    cx: f64,
    cy: f64,
    radius: f64,
    rot: f64,
    thick: f64,
    bright: f64,
}

fn sd_disk(x: f64, y: f64, r: f64) -> f64 {
    (x * x + y * y).sqrt() - r
}

fn sd_bar(x: f64, y: f64, half_len: f64, half_w: f64) -> f64 {
    (x.abs() - half_len).max(y.abs() - half_w)
}

/// Signed distance (negative inside) of glyph class `label` at point (x, y)
/// in the glyph frame.
fn shape_dist(label: u8, x: f64, y: f64, r: f64, t: f64) -> f64 {
    match label {
        0 => sd_disk(x, y, r),
        1 => (sd_disk(x, y, 0.0) - r).abs() - t,
        2 => sd_bar(x, y, r, t),
        3 => sd_bar(y, x, r, t),
        4 => sd_bar(x, y, r, t).min(sd_bar(y, x, r, t)),
        5 => {
            let c = std::f64::consts::FRAC_1_SQRT_2;
            let (u, v) = (c * (x + y), c * (y - x));
            sd_bar(u, v, r, t).min(sd_bar(v, u, r, t))
        }
        6 => (x.abs().max(y.abs()) - r).abs() - t,
        7 => {
            // Filled triangle with a flat bottom edge.
            let d1 = y - r * 0.8;
            let d2 = -y - 0.9 * x - r * 0.8;
            let d3 = -y + 0.9 * x - r * 0.8;
            d1.max(d2).max(d3)
        }
        8 => {
            let rr = 1.6 * t;
            sd_disk(x + r * 0.7, y, rr).min(sd_disk(x - r * 0.7, y, rr))
        }
        _ => {
            let d1 = sd_bar(x + r, y, t, r);
            let d2 = sd_bar(x, y - r, r, t);
            d1.min(d2)
        }
    }
}

fn render(label: u8, g: &Glyph, noise: &mut impl FnMut() -> f64) -> Vec<f32> {
    let (sin, cos) = g.rot.sin_cos();
    let mut out = Vec::with_capacity(SYNTH_SIDE * SYNTH_SIDE);
    for i in 0..SYNTH_SIDE {
        for j in 0..SYNTH_SIDE {
            let px = j as f64 + 0.5 - g.cx;
            let py = i as f64 + 0.5 - g.cy;
            let x = cos * px + sin * py;
            let y = -sin * px + cos * py;
            let d = shape_dist(label, x, y, g.radius, g.thick);
            let cov = (0.5 - d).clamp(0.0, 1.0);
            let v = (g.bright * cov + noise()).clamp(0.0, 1.0);
            out.push(v as f32);
        }
    }
    out
}

/// Deterministic stand-in corpus: ten parametric glyph classes with jittered
/// position, scale, rotation, stroke width, brightness, and pixel noise.
/// Sample i carries label i % 10.
pub fn synthetic_images(n: usize, seed: u64) -> (Array4<f32>, Vec<u8>) {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let gauss = Normal::new(0.0, 0.02).unwrap();
    let mut pixels = Vec::with_capacity(n * SYNTH_SIDE * SYNTH_SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % SYNTH_CLASSES) as u8;
        let g = Glyph {
            cx: 14.0 + 4.0 * (rng.random::<f64>() - 0.5),
            cy: 14.0 + 4.0 * (rng.random::<f64>() - 0.5),
            radius: 7.0 + 3.0 * rng.random::<f64>(),
            rot: 0.6 * (rng.random::<f64>() - 0.5),
            thick: 1.2 + 1.0 * rng.random::<f64>(),
            bright: 0.7 + 0.3 * rng.random::<f64>(),
        };
        let mut noise = || gauss.sample(&mut rng);
        pixels.extend(render(label, &g, &mut noise));
        labels.push(label);
    }
    let images = Array4::from_shape_vec((n, 1, SYNTH_SIDE, SYNTH_SIDE), pixels).unwrap();
    (images, labels)
}

/// Write a synthetic train/test pair into `dir` under the standard MNIST
/// file names, so the IDX loading path can be exercised end to end.
pub fn synth_to_idx(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    let (images, labels) = synthetic_images(n_train + n_test, seed);
    let to_u8 = |arr: ndarray::ArrayView4<f32>| -> ndarray::Array3<u8> {
        let (n, _, h, w) = arr.dim();
        ndarray::Array3::from_shape_fn((n, h, w), |(s, i, j)| {
            (arr[[s, 0, i, j]] * 255.0).round() as u8
        })
    };
    std::fs::create_dir_all(dir)?;
    let train = to_u8(images.slice(ndarray::s![..n_train, .., .., ..]));
    let test = to_u8(images.slice(ndarray::s![n_train.., .., .., ..]));
    idx::write_idx_images(&dir.join("train-images-idx3-ubyte"), &train)?;
    idx::write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &labels[..n_train])?;
    idx::write_idx_images(&dir.join("t10k-images-idx3-ubyte"), &test)?;
    idx::write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &labels[n_train..])?;
    Ok(())
}
