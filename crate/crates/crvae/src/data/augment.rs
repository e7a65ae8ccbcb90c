use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Parameters of the stochastic view pipeline: random resized crop, then
/// horizontal flip, then color jitter, then (3-channel only) random
/// grayscale. All intensity math runs in f64 on [0,1] images.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub crop_scale: (f64, f64),
    pub crop_ratio: (f64, f64),
    pub flip_p: f64,
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_p: f64,
}

impl AugmentationSpec {
    pub fn default_for_channels(c: usize) -> Self {
        Self {
            crop_scale: (0.6, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            flip_p: 0.5,
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_p: if c == 3 { 0.2 } else { 0.0 },
        }
    }

    /// No-op pipeline: unit crop, all probabilities zero.
    pub fn identity() -> Self {
        Self {
            crop_scale: (1.0, 1.0),
            crop_ratio: (1.0, 1.0),
            flip_p: 0.0,
            jitter_p: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            grayscale_p: 0.0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn horizontal_flip(img: &Array3<f64>, p: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    if p > 0.0 && rng.random::<f64>() < p {
        let (c, h, w) = img.dim();
        Array3::from_shape_fn((c, h, w), |(ci, i, j)| img[[ci, i, w - 1 - j]])
    } else {
        img.clone()
    }
}

/// Bilinear resample of the window `[top..top+ch, left..left+cw]` back to the
/// full image size. Sample positions follow the half-pixel convention
/// (align_corners = false), clamped at the window border.
pub fn bilinear_crop_resize(
    img: &Array3<f64>,
    top: usize,
    left: usize,
    ch: usize,
    cw: usize,
) -> Array3<f64> {
    let (c, h, w) = img.dim();
    debug_assert!(top + ch <= h && left + cw <= w && ch >= 1 && cw >= 1);
    let sy = ch as f64 / h as f64;
    let sx = cw as f64 / w as f64;
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let y0i = (y0 as isize).clamp(0, ch as isize - 1) as usize;
        let y1i = (y0 as isize + 1).clamp(0, ch as isize - 1) as usize;
        for x in 0..w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let x0i = (x0 as isize).clamp(0, cw as isize - 1) as usize;
            let x1i = (x0 as isize + 1).clamp(0, cw as isize - 1) as usize;
            for ci in 0..c {
                let v00 = img[[ci, top + y0i, left + x0i]];
                let v01 = img[[ci, top + y0i, left + x1i]];
                let v10 = img[[ci, top + y1i, left + x0i]];
                let v11 = img[[ci, top + y1i, left + x1i]];
                out[[ci, y, x]] = (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01)
                    + ty * ((1.0 - tx) * v10 + tx * v11);
            }
        }
    }
    out
}

/// Random resized crop: sample an area fraction from `crop_scale` and an
/// aspect ratio log-uniform in `crop_ratio` (10 attempts, then a center-crop
/// fallback), and resize the window back to the input size.
pub fn random_resized_crop(
    img: &Array3<f64>,
    spec: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let (_, h, w) = img.dim();
    if h < 2 || w < 2 {
        return img.clone();
    }
    let area = (h * w) as f64;
    let (r0, r1) = spec.crop_ratio;
    for _ in 0..10 {
        let target = area * uniform(rng, spec.crop_scale.0, spec.crop_scale.1);
        let aspect = uniform(rng, r0.ln(), r1.ln()).exp();
        let cw = (target * aspect).sqrt().round() as i64;
        let ch = (target / aspect).sqrt().round() as i64;
        if cw >= 1 && cw <= w as i64 && ch >= 1 && ch <= h as i64 {
            let (ch, cw) = (ch as usize, cw as usize);
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return bilinear_crop_resize(img, top, left, ch, cw);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < r0 {
        (((w as f64 / r0).round() as usize).clamp(1, h), w)
    } else if in_ratio > r1 {
        (h, ((h as f64 * r1).round() as usize).clamp(1, w))
    } else {
        (h, w)
    };
    bilinear_crop_resize(img, (h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn clamp01(img: &mut Array3<f64>) {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

fn luminance(img: &Array3<f64>) -> Array3<f64> {
    let (_, h, w) = img.dim();
    let mut out = Array3::<f64>::zeros((1, h, w));
    for i in 0..h {
        for j in 0..w {
            out[[0, i, j]] =
                0.299 * img[[0, i, j]] + 0.587 * img[[1, i, j]] + 0.114 * img[[2, i, j]];
        }
    }
    out
}

pub fn adjust_brightness(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    let mut out = img.mapv(|v| v * factor);
    clamp01(&mut out);
    out
}

pub fn adjust_contrast(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    let c = img.dim().0;
    let mean = if c == 3 {
        let lum = luminance(img);
        lum.iter().sum::<f64>() / lum.len() as f64
    } else {
        img.iter().sum::<f64>() / img.len() as f64
    };
    let mut out = img.mapv(|v| mean + factor * (v - mean));
    clamp01(&mut out);
    out
}

pub fn adjust_saturation(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    if img.dim().0 != 3 {
        return img.clone();
    }
    let lum = luminance(img);
    let (_, h, w) = img.dim();
    let mut out = img.clone();
    for ci in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let g = lum[[0, i, j]];
                out[[ci, i, j]] = g + factor * (img[[ci, i, j]] - g);
            }
        }
    }
    clamp01(&mut out);
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / d) % 6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor() as i64 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Shift hue by `delta` turns (delta in [-0.5, 0.5]).
pub fn adjust_hue(img: &Array3<f64>, delta: f64) -> Array3<f64> {
    if img.dim().0 != 3 {
        return img.clone();
    }
    let (_, h, w) = img.dim();
    let mut out = img.clone();
    for i in 0..h {
        for j in 0..w {
            let (hh, ss, vv) =
                rgb_to_hsv(img[[0, i, j]], img[[1, i, j]], img[[2, i, j]]);
            let (r, g, b) = hsv_to_rgb(hh + delta, ss, vv);
            out[[0, i, j]] = r;
            out[[1, i, j]] = g;
            out[[2, i, j]] = b;
        }
    }
    clamp01(&mut out);
    out
}

/// With probability p, apply brightness/contrast (and for 3-channel images
/// saturation/hue) perturbations in a randomly shuffled order. All four
/// factors are drawn whenever the jitter fires, so the stream layout does not
/// depend on the channel count.
pub fn color_jitter(img: &Array3<f64>, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Array3<f64> {
    if spec.jitter_p <= 0.0 || rng.random::<f64>() >= spec.jitter_p {
        return img.clone();
    }
    let mut order = [0usize, 1, 2, 3];
    for i in (1..4).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let fb = uniform(rng, (1.0 - spec.brightness).max(0.0), 1.0 + spec.brightness);
    let fc = uniform(rng, (1.0 - spec.contrast).max(0.0), 1.0 + spec.contrast);
    let fs = uniform(rng, (1.0 - spec.saturation).max(0.0), 1.0 + spec.saturation);
    let fh = uniform(rng, -spec.hue, spec.hue);
    let rgb = img.dim().0 == 3;
    let mut out = img.clone();
    for op in order {
        out = match op {
            0 => adjust_brightness(&out, fb),
            1 => adjust_contrast(&out, fc),
            2 if rgb => adjust_saturation(&out, fs),
            3 if rgb => adjust_hue(&out, fh),
            _ => out,
        };
    }
    out
}

pub fn random_grayscale(img: &Array3<f64>, p: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    if img.dim().0 != 3 || p <= 0.0 || rng.random::<f64>() >= p {
        return img.clone();
    }
    let lum = luminance(img);
    let (_, h, w) = img.dim();
    Array3::from_shape_fn((3, h, w), |(_, i, j)| lum[[0, i, j]])
}

/// The full view pipeline g(x) in the order crop, flip, jitter, grayscale.
pub fn augment(img: &Array3<f64>, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let t = random_resized_crop(img, spec, rng);
    let t = horizontal_flip(&t, spec.flip_p, rng);
    let t = color_jitter(&t, spec, rng);
    random_grayscale(&t, spec.grayscale_p, rng)
}
