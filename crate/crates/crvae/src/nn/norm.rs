use ndarray::{Array4, ArrayD, Axis, IxDyn};

use super::param::{Mode, Module, Param};
use super::Element;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the channel axis of `[B, C, H, W]` tensors.
///
/// Training mode normalizes with the biased batch variance and updates the
/// running estimates with the unbiased one (`running = 0.9 * running +
/// 0.1 * batch`). Eval mode normalizes with the running estimates. Channel
/// statistics are accumulated in f64 before being cast back to `E`.
pub struct BatchNorm2d<E: Element> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub running_mean: ArrayD<E>,
    pub running_var: ArrayD<E>,
    pub c: usize,
    cache: Option<BnCache<E>>,
}

struct BnCache<E> {
    x_hat: Array4<E>,
    inv_std: Vec<E>,
    n: usize,
    mode: Mode,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[c]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[c]))),
            running_mean: ArrayD::zeros(IxDyn(&[c])),
            running_var: ArrayD::ones(IxDyn(&[c])),
            c,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<E>, mode: Mode) -> Array4<E> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.c, "BatchNorm2d: channel mismatch");
        let n = b * h * w;
        let mut x_hat = Array4::<E>::zeros((b, c, h, w));
        let mut inv_std = vec![E::zero(); c];

        for ci in 0..c {
            let plane = x.index_axis(Axis(1), ci);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut s = 0f64;
                    for &v in plane.iter() {
                        s += v.to_f64();
                    }
                    let mean = s / n as f64;
                    let mut sq = 0f64;
                    for &v in plane.iter() {
                        let d = v.to_f64() - mean;
                        sq += d * d;
                    }
                    let var = sq / n as f64;
                    let unbiased = if n > 1 {
                        sq / (n - 1) as f64
                    } else {
                        var
                    };
                    let rm = self.running_mean[[ci]].to_f64();
                    let rv = self.running_var[[ci]].to_f64();
                    self.running_mean[[ci]] =
                        E::from_f64((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean);
                    self.running_var[[ci]] =
                        E::from_f64((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean[[ci]].to_f64(),
                    self.running_var[[ci]].to_f64(),
                ),
            };
            let istd = 1.0 / (var + BN_EPS).sqrt();
            let m_e = E::from_f64(mean);
            let istd_e = E::from_f64(istd);
            inv_std[ci] = istd_e;
            let mut dst = x_hat.index_axis_mut(Axis(1), ci);
            dst.zip_mut_with(&plane, |d, &s| *d = (s - m_e) * istd_e);
        }

        let mut out = x_hat.clone();
        for ci in 0..c {
            let gc = self.gamma.value[[ci]];
            let bc = self.beta.value[[ci]];
            out.index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| gc * v + bc);
        }
        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            n,
            mode,
        });
        out
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array4<E> {
        let cache = self
            .cache
            .take()
            .expect("BatchNorm2d: backward without forward");
        let (b, c, h, w) = g.dim();
        assert_eq!(c, self.c);
        let n = cache.n as f64;
        let mut dx = Array4::<E>::zeros((b, c, h, w));

        for ci in 0..c {
            let g_plane = g.index_axis(Axis(1), ci);
            let xh_plane = cache.x_hat.index_axis(Axis(1), ci);
            let mut s1 = 0f64;
            let mut s2 = 0f64;
            for (&gv, &xv) in g_plane.iter().zip(xh_plane.iter()) {
                s1 += gv.to_f64();
                s2 += gv.to_f64() * xv.to_f64();
            }
            self.beta.grad[[ci]] = self.beta.grad[[ci]] + E::from_f64(s1);
            self.gamma.grad[[ci]] = self.gamma.grad[[ci]] + E::from_f64(s2);

            let gc = self.gamma.value[[ci]];
            let istd = cache.inv_std[ci];
            let mut dst = dx.index_axis_mut(Axis(1), ci);
            match cache.mode {
                Mode::Train => {
                    let m1 = E::from_f64(s1 / n);
                    let m2 = E::from_f64(s2 / n);
                    for ((d, &gv), &xv) in
                        dst.iter_mut().zip(g_plane.iter()).zip(xh_plane.iter())
                    {
                        *d = gc * istd * (gv - m1 - xv * m2);
                    }
                }
                Mode::Eval => {
                    for (d, &gv) in dst.iter_mut().zip(g_plane.iter()) {
                        *d = gc * istd * gv;
                    }
                }
            }
        }
        dx
    }
}

impl<E: Element> Module<E> for BatchNorm2d<E> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }

    fn params_ref(&self) -> Vec<(String, &Param<E>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut ArrayD<E>)> {
        vec![
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }

    fn buffers_ref(&self) -> Vec<(String, &ArrayD<E>)> {
        vec![
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }
}
