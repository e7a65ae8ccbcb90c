use ndarray::{Array2, Array4};

use super::Element;

/// Spatial output size of a strided convolution.
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Spatial output size of a strided transposed convolution.
pub fn conv_transpose_out_len(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> usize {
    (input - 1) * stride + k + out_pad - 2 * pad
}

/// Index range `lo..hi` of grid positions `o` for which
/// `o*stride + tap - pad` lands inside `[0, len)`.
fn valid_range(tap: usize, pad: usize, stride: usize, len: usize, grid: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > tap {
        (((len + pad - tap - 1) / stride) + 1).min(grid)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfold `x` `[B, C, H, W]` into patch columns `[C*k*k, B*oh*ow]` where
/// column `(b*oh + oi)*ow + oj` holds the receptive field of grid position
/// `(oi, oj)`. Out-of-bounds taps (zero padding) stay zero.
pub fn im2col<E: Element>(
    x: &Array4<E>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<E> {
    let (b, c, h, w) = x.dim();
    let n_cols = b * oh * ow;
    let mut cols = Array2::<E>::zeros((c * k * k, n_cols));
    let xs = x.as_slice().expect("im2col: input must be contiguous");
    let cs = cols.as_slice_mut().unwrap();

    for ci in 0..c {
        for ki in 0..k {
            let (oi_lo, oi_hi) = valid_range(ki, pad, stride, h, oh);
            for kj in 0..k {
                let (oj_lo, oj_hi) = valid_range(kj, pad, stride, w, ow);
                let row_off = ((ci * k + ki) * k + kj) * n_cols;
                for bi in 0..b {
                    let x_plane = ((bi * c + ci) * h) * w;
                    for oi in oi_lo..oi_hi {
                        let ii = oi * stride + ki - pad;
                        let src = x_plane + ii * w;
                        let dst = row_off + (bi * oh + oi) * ow;
                        for oj in oj_lo..oj_hi {
                            cs[dst + oj] = xs[src + oj * stride + kj - pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into a
/// `[B, C, H, W]` tensor. Also the spatial kernel of the transposed
/// convolution forward pass.
pub fn col2im<E: Element>(
    cols: &Array2<E>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<E> {
    let n_cols = b * oh * ow;
    debug_assert_eq!(cols.dim(), (c * k * k, n_cols));
    let mut out = Array4::<E>::zeros((b, c, h, w));
    let os = out.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("col2im: columns must be contiguous");

    for ci in 0..c {
        for ki in 0..k {
            let (oi_lo, oi_hi) = valid_range(ki, pad, stride, h, oh);
            for kj in 0..k {
                let (oj_lo, oj_hi) = valid_range(kj, pad, stride, w, ow);
                let row_off = ((ci * k + ki) * k + kj) * n_cols;
                for bi in 0..b {
                    let o_plane = ((bi * c + ci) * h) * w;
                    for oi in oi_lo..oi_hi {
                        let ii = oi * stride + ki - pad;
                        let dst = o_plane + ii * w;
                        let src = row_off + (bi * oh + oi) * ow;
                        for oj in oj_lo..oj_hi {
                            let d = dst + oj * stride + kj - pad;
                            os[d] = os[d] + cs[src + oj];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Copy `[B, C, H, W]` into the `[C, B*H*W]` matrix layout used as the GEMM
/// operand, column `(b*h + i)*w + j`.
pub fn to_channel_major<E: Element>(x: &Array4<E>) -> Array2<E> {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let mut m = Array2::<E>::zeros((c, b * hw));
    let xs = x.as_slice().expect("to_channel_major: input must be contiguous");
    let ms = m.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let src = (bi * c + ci) * hw;
            let dst = ci * (b * hw) + bi * hw;
            ms[dst..dst + hw].copy_from_slice(&xs[src..src + hw]);
        }
    }
    m
}

/// Inverse of [`to_channel_major`].
pub fn from_channel_major<E: Element>(m: &Array2<E>, b: usize, h: usize, w: usize) -> Array4<E> {
    let (c, n) = m.dim();
    let hw = h * w;
    debug_assert_eq!(n, b * hw);
    let mut x = Array4::<E>::zeros((b, c, h, w));
    let ms = m.as_slice().expect("from_channel_major: input must be contiguous");
    let xs = x.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let src = ci * n + bi * hw;
            let dst = (bi * c + ci) * hw;
            xs[dst..dst + hw].copy_from_slice(&ms[src..src + hw]);
        }
    }
    x
}

/// Deterministic pairwise (tree) summation. Used for dataset-level metric
/// reductions so results do not depend on accumulation chunking.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_im2col(
        x: &Array4<f64>,
        k: usize,
        stride: usize,
        pad: usize,
        oh: usize,
        ow: usize,
    ) -> Array2<f64> {
        let (b, c, h, w) = x.dim();
        let mut cols = Array2::<f64>::zeros((c * k * k, b * oh * ow));
        for bi in 0..b {
            for ci in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let ii = (oi * stride + ki) as isize - pad as isize;
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                                    cols[[
                                        (ci * k + ki) * k + kj,
                                        (bi * oh + oi) * ow + oj,
                                    ]] = x[[bi, ci, ii as usize, jj as usize]];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn random_input(rng: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
        Array4::from_shape_fn((b, c, h, w), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn im2col_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(b, c, h, w, k, s, p) in &[
            (2usize, 3usize, 5usize, 5usize, 3usize, 1usize, 0usize),
            (1, 1, 7, 6, 3, 2, 1),
            (3, 2, 4, 4, 3, 2, 0),
            (2, 2, 6, 5, 2, 2, 1),
            (1, 4, 1, 1, 3, 2, 1),
        ] {
            let oh = conv_out_len(h, k, s, p);
            let ow = conv_out_len(w, k, s, p);
            let x = random_input(&mut rng, b, c, h, w);
            let got = im2col(&x, k, s, p, oh, ow);
            let want = naive_im2col(&x, k, s, p, oh, ow);
            assert_eq!(got, want, "b={b} c={c} h={h} w={w} k={k} s={s} p={p}");
        }
    }

    // col2im is defined as the adjoint of im2col, so the inner products
    // <im2col(x), c> and <x, col2im(c)> must agree.
    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(b, c, h, w, k, s, p) in &[
            (2usize, 2usize, 5usize, 4usize, 3usize, 2usize, 1usize),
            (1, 3, 6, 6, 3, 1, 0),
            (2, 1, 4, 5, 2, 2, 1),
        ] {
            let oh = conv_out_len(h, k, s, p);
            let ow = conv_out_len(w, k, s, p);
            let x = random_input(&mut rng, b, c, h, w);
            let cols = Array2::from_shape_fn((c * k * k, b * oh * ow), |_| {
                rng.random::<f64>() - 0.5
            });
            let lhs: f64 = im2col(&x, k, s, p, oh, ow)
                .iter()
                .zip(cols.iter())
                .map(|(a, b)| a * b)
                .sum();
            let y = col2im(&cols, b, c, h, w, k, s, p, oh, ow);
            let rhs: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "lhs={lhs} rhs={rhs}");
        }
    }

    #[test]
    fn channel_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_input(&mut rng, 3, 4, 2, 5);
        let m = to_channel_major(&x);
        assert_eq!(m[[2, 1 * 10 + 7]], x[[1, 2, 1, 2]]);
        let back = from_channel_major(&m, 3, 2, 5);
        assert_eq!(back, x);
    }

    #[test]
    fn pairwise_sum_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..1001).map(|_| rng.random::<f64>() - 0.5).collect();
        let seq: f64 = vals.iter().sum();
        assert!((pairwise_sum(&vals) - seq).abs() < 1e-9);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[2.5]), 2.5);
    }
}
