use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;

use super::init::uniform_fan_in;
use super::param::{Module, Param};
use super::tensor::{
    col2im, conv_out_len, conv_transpose_out_len, from_channel_major, im2col, to_channel_major,
};
use super::Element;

/// Strided 2-D convolution with zero padding.
///
/// Weight layout `[out_c, in_c, k, k]`. The forward pass keeps the unfolded
/// input columns so the backward pass can reuse them for the weight gradient.
pub struct Conv2d<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache<E>>,
}

struct ConvCache<E> {
    cols: Array2<E>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl<E: Element> Conv2d<E> {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::new(ArrayD::zeros(IxDyn(&[out_c, in_c, k, k]))),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_c]))),
            in_c,
            out_c,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = self.in_c * self.k * self.k;
        uniform_fan_in(&mut self.weight.value, fan_in, rng);
        uniform_fan_in(&mut self.bias.value, fan_in, rng);
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_len(h, self.k, self.stride, self.pad),
            conv_out_len(w, self.k, self.stride, self.pad),
        )
    }

    pub fn forward(&mut self, x: &Array4<E>) -> Array4<E> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "Conv2d: channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(x, self.k, self.stride, self.pad, oh, ow);
        let ckk = self.in_c * self.k * self.k;
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, ckk))
            .unwrap();
        let mut out_mat = Array2::<E>::zeros((self.out_c, b * oh * ow));
        general_mat_mul(E::one(), &w_mat, &cols, E::zero(), &mut out_mat);
        for (ci, mut row) in out_mat.axis_iter_mut(Axis(0)).enumerate() {
            let bc = self.bias.value[[ci]];
            row.mapv_inplace(|v| v + bc);
        }
        self.cache = Some(ConvCache {
            cols,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
        });
        from_channel_major(&out_mat, b, oh, ow)
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array4<E> {
        let cache = self.cache.take().expect("Conv2d: backward without forward");
        let (b, oc, oh, ow) = g.dim();
        assert_eq!((oc, oh, ow), (self.out_c, cache.out_h, cache.out_w));
        let ckk = self.in_c * self.k * self.k;
        let g_mat = to_channel_major(g);

        let mut dw_mat = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_c, ckk))
            .unwrap();
        general_mat_mul(E::one(), &g_mat, &cache.cols.t(), E::one(), &mut dw_mat);
        for (ci, row) in g_mat.axis_iter(Axis(0)).enumerate() {
            let s = row.iter().fold(E::zero(), |acc, &v| acc + v);
            self.bias.grad[[ci]] = self.bias.grad[[ci]] + s;
        }

        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, ckk))
            .unwrap();
        let mut d_cols = Array2::<E>::zeros((ckk, b * oh * ow));
        general_mat_mul(E::one(), &w_mat.t(), &g_mat, E::zero(), &mut d_cols);
        col2im(
            &d_cols,
            b,
            self.in_c,
            cache.in_h,
            cache.in_w,
            self.k,
            self.stride,
            self.pad,
            oh,
            ow,
        )
    }
}

impl<E: Element> Module<E> for Conv2d<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }
}

/// Strided 2-D transposed convolution with zero padding and output padding.
///
/// Weight layout `[in_c, out_c, k, k]`, matching the convention where a
/// transposed convolution is the gradient of a convolution that maps the
/// output shape back to the input shape.
pub struct ConvTranspose2d<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    cache: Option<(Array2<E>, usize, usize)>,
}

impl<E: Element> ConvTranspose2d<E> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Self {
        assert!(out_pad < stride, "ConvTranspose2d: out_pad must be < stride");
        Self {
            weight: Param::new(ArrayD::zeros(IxDyn(&[in_c, out_c, k, k]))),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_c]))),
            in_c,
            out_c,
            k,
            stride,
            pad,
            out_pad,
            cache: None,
        }
    }

    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = self.out_c * self.k * self.k;
        uniform_fan_in(&mut self.weight.value, fan_in, rng);
        uniform_fan_in(&mut self.bias.value, fan_in, rng);
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_transpose_out_len(h, self.k, self.stride, self.pad, self.out_pad),
            conv_transpose_out_len(w, self.k, self.stride, self.pad, self.out_pad),
        )
    }

    pub fn forward(&mut self, x: &Array4<E>) -> Array4<E> {
        let (b, c, ih, iw) = x.dim();
        assert_eq!(c, self.in_c, "ConvTranspose2d: channel mismatch");
        let (oh, ow) = self.out_hw(ih, iw);
        let okk = self.out_c * self.k * self.k;
        let x_mat = to_channel_major(x);
        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.in_c, okk))
            .unwrap();
        let mut cols = Array2::<E>::zeros((okk, b * ih * iw));
        general_mat_mul(E::one(), &w_mat.t(), &x_mat, E::zero(), &mut cols);
        let mut out = col2im(
            &cols,
            b,
            self.out_c,
            oh,
            ow,
            self.k,
            self.stride,
            self.pad,
            ih,
            iw,
        );
        for ci in 0..self.out_c {
            let bc = self.bias.value[[ci]];
            out.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + bc);
        }
        self.cache = Some((x_mat, ih, iw));
        out
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array4<E> {
        let (x_mat, ih, iw) = self
            .cache
            .take()
            .expect("ConvTranspose2d: backward without forward");
        let (b, oc, _, _) = g.dim();
        assert_eq!(oc, self.out_c);
        let okk = self.out_c * self.k * self.k;
        let g_cols = im2col(g, self.k, self.stride, self.pad, ih, iw);

        let mut dw_mat = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.in_c, okk))
            .unwrap();
        general_mat_mul(E::one(), &x_mat, &g_cols.t(), E::one(), &mut dw_mat);
        for ci in 0..self.out_c {
            let s = g
                .index_axis(Axis(1), ci)
                .iter()
                .fold(E::zero(), |acc, &v| acc + v);
            self.bias.grad[[ci]] = self.bias.grad[[ci]] + s;
        }

        let w_mat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.in_c, okk))
            .unwrap();
        let mut dx_mat = Array2::<E>::zeros((self.in_c, b * ih * iw));
        general_mat_mul(E::one(), &w_mat, &g_cols, E::zero(), &mut dx_mat);
        from_channel_major(&dx_mat, b, ih, iw)
    }
}

impl<E: Element> Module<E> for ConvTranspose2d<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(
        x: &Array4<f64>,
        w: &Array4<f64>,
        bias: &Array1<f64>,
        stride: usize,
        pad: usize,
    ) -> Array4<f64> {
        let (b, in_c, h, wd) = x.dim();
        let (out_c, ic2, k, _) = w.dim();
        assert_eq!(in_c, ic2);
        let oh = conv_out_len(h, k, stride, pad);
        let ow = conv_out_len(wd, k, stride, pad);
        let mut out = Array4::<f64>::zeros((b, out_c, oh, ow));
        for bi in 0..b {
            for oc in 0..out_c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..in_c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (oi * stride + ki) as isize - pad as isize;
                                    let jj = (oj * stride + kj) as isize - pad as isize;
                                    if ii >= 0
                                        && (ii as usize) < h
                                        && jj >= 0
                                        && (jj as usize) < wd
                                    {
                                        acc += x[[bi, ic, ii as usize, jj as usize]]
                                            * w[[oc, ic, ki, kj]];
                                    }
                                }
                            }
                        }
                        out[[bi, oc, oi, oj]] = acc;
                    }
                }
            }
        }
        out
    }

    fn naive_conv_transpose(
        x: &Array4<f64>,
        w: &Array4<f64>,
        bias: &Array1<f64>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Array4<f64> {
        let (b, in_c, ih, iw) = x.dim();
        let (ic2, out_c, k, _) = w.dim();
        assert_eq!(in_c, ic2);
        let oh = conv_transpose_out_len(ih, k, stride, pad, out_pad);
        let ow = conv_transpose_out_len(iw, k, stride, pad, out_pad);
        let mut out = Array4::<f64>::zeros((b, out_c, oh, ow));
        for bi in 0..b {
            for oc in 0..out_c {
                for i in 0..oh {
                    for j in 0..ow {
                        out[[bi, oc, i, j]] = bias[oc];
                    }
                }
            }
        }
        for bi in 0..b {
            for ic in 0..in_c {
                for oi in 0..ih {
                    for oj in 0..iw {
                        for oc in 0..out_c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let ii = (oi * stride + ki) as isize - pad as isize;
                                    let jj = (oj * stride + kj) as isize - pad as isize;
                                    if ii >= 0
                                        && (ii as usize) < oh
                                        && jj >= 0
                                        && (jj as usize) < ow
                                    {
                                        out[[bi, oc, ii as usize, jj as usize]] +=
                                            x[[bi, ic, oi, oj]] * w[[ic, oc, ki, kj]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn rand4(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(d, |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn conv_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(b, ic, h, w, oc, k, s, p) in &[
            (2usize, 3usize, 7usize, 7usize, 4usize, 3usize, 2usize, 0usize),
            (1, 1, 28, 28, 2, 3, 2, 0),
            (2, 2, 5, 6, 3, 3, 2, 1),
            (3, 2, 4, 4, 2, 3, 1, 1),
        ] {
            let mut layer = Conv2d::<f64>::new(ic, oc, k, s, p);
            layer.init_params(&mut rng);
            let x = rand4(&mut rng, (b, ic, h, w));
            let got = layer.forward(&x);
            let w4 = layer
                .weight
                .value
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .to_owned();
            let b1 = layer
                .bias
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
                .to_owned();
            let want = naive_conv(&x, &w4, &b1, s, p);
            let diff = (&got - &want).iter().fold(0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-11, "max diff {diff}");
        }
    }

    #[test]
    fn conv_transpose_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for &(b, ic, h, w, oc, k, s, p, op) in &[
            (2usize, 3usize, 4usize, 4usize, 2usize, 3usize, 2usize, 1usize, 1usize),
            (1, 2, 4, 4, 3, 3, 2, 1, 0),
            (2, 2, 4, 5, 2, 3, 2, 0, 1),
            (1, 3, 7, 7, 2, 3, 1, 1, 0),
        ] {
            let mut layer = ConvTranspose2d::<f64>::new(ic, oc, k, s, p, op);
            layer.init_params(&mut rng);
            let x = rand4(&mut rng, (b, ic, h, w));
            let got = layer.forward(&x);
            let w4 = layer
                .weight
                .value
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .to_owned();
            let b1 = layer
                .bias
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
                .to_owned();
            let want = naive_conv_transpose(&x, &w4, &b1, s, p, op);
            let diff = (&got - &want).iter().fold(0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-11, "max diff {diff}");
        }
    }

    // Finite-difference check of input, weight, and bias gradients under the
    // scalar loss L = sum(forward(x) * r) for a fixed random r.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (b, ic, h, w, oc, k, s, p) = (2, 2, 5, 5, 3, 3, 2, 1);
        let mut layer = Conv2d::<f64>::new(ic, oc, k, s, p);
        layer.init_params(&mut rng);
        let x = rand4(&mut rng, (b, ic, h, w));
        let r = rand4(&mut rng, {
            let (oh, ow) = layer.out_hw(h, w);
            (b, oc, oh, ow)
        });

        let out = layer.forward(&x);
        let dx = layer.backward(&r);
        let _ = out;
        let dw = layer.weight.grad.clone();
        let db = layer.bias.grad.clone();

        let eps = 1e-5;
        let mut xp = x.clone();
        for idx in 0..xp.len() {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "dx[{idx}]: fd={fd} an={an}");
        }
        for idx in 0..layer.weight.value.len() {
            let orig = layer.weight.value.as_slice().unwrap()[idx];
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = dw.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "dw[{idx}]: fd={fd} an={an}");
        }
        for idx in 0..layer.bias.value.len() {
            let orig = layer.bias.value.as_slice().unwrap()[idx];
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = db.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "db[{idx}]: fd={fd} an={an}");
        }
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let (b, ic, h, w, oc, k, s, p, op) = (2, 3, 4, 4, 2, 3, 2, 1, 1);
        let mut layer = ConvTranspose2d::<f64>::new(ic, oc, k, s, p, op);
        layer.init_params(&mut rng);
        let x = rand4(&mut rng, (b, ic, h, w));
        let (oh, ow) = layer.out_hw(h, w);
        let r = rand4(&mut rng, (b, oc, oh, ow));

        let _ = layer.forward(&x);
        let dx = layer.backward(&r);
        let dw = layer.weight.grad.clone();
        let db = layer.bias.grad.clone();

        let eps = 1e-5;
        let mut xp = x.clone();
        for idx in 0..xp.len() {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = dx.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "dx[{idx}]: fd={fd} an={an}");
        }
        for idx in 0..layer.weight.value.len() {
            let orig = layer.weight.value.as_slice().unwrap()[idx];
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = dw.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "dw[{idx}]: fd={fd} an={an}");
        }
        for idx in 0..layer.bias.value.len() {
            let orig = layer.bias.value.as_slice().unwrap()[idx];
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = db.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-7, "db[{idx}]: fd={fd} an={an}");
        }
    }

    // The 28x28 and 32x32 decoder geometries from the model presets, checked
    // here at the layer level: stride-2 stacks invert the encoder shapes.
    #[test]
    fn transpose_geometry_for_presets() {
        let t1 = ConvTranspose2d::<f32>::new(256, 128, 3, 2, 1, 0);
        assert_eq!(t1.out_hw(4, 4), (7, 7));
        let t2 = ConvTranspose2d::<f32>::new(128, 64, 3, 2, 1, 0);
        assert_eq!(t2.out_hw(7, 7), (13, 13));
        let t3 = ConvTranspose2d::<f32>::new(64, 32, 3, 2, 0, 1);
        assert_eq!(t3.out_hw(13, 13), (28, 28));

        let c1 = ConvTranspose2d::<f32>::new(256, 128, 3, 2, 1, 1);
        assert_eq!(c1.out_hw(4, 4), (8, 8));
        let c2 = ConvTranspose2d::<f32>::new(128, 64, 3, 2, 1, 1);
        assert_eq!(c2.out_hw(8, 8), (16, 16));
        let c3 = ConvTranspose2d::<f32>::new(64, 32, 3, 2, 1, 1);
        assert_eq!(c3.out_hw(16, 16), (32, 32));
    }
}
