use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;

use super::init::uniform_fan_in;
use super::param::{Module, Param};
use super::Element;

/// Fully connected layer, `y = x W^T + b` with weight `[out, in]`.
pub struct Linear<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    pub in_f: usize,
    pub out_f: usize,
    cache: Option<Array2<E>>,
}

impl<E: Element> Linear<E> {
    pub fn new(in_f: usize, out_f: usize) -> Self {
        Self {
            weight: Param::new(ArrayD::zeros(IxDyn(&[out_f, in_f]))),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_f]))),
            in_f,
            out_f,
            cache: None,
        }
    }

    pub fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        uniform_fan_in(&mut self.weight.value, self.in_f, rng);
        uniform_fan_in(&mut self.bias.value, self.in_f, rng);
    }

    pub fn forward(&mut self, x: &Array2<E>) -> Array2<E> {
        let (b, f) = x.dim();
        assert_eq!(f, self.in_f, "Linear: feature mismatch");
        let w = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_f, self.in_f))
            .unwrap();
        let mut out = Array2::<E>::zeros((b, self.out_f));
        general_mat_mul(E::one(), x, &w.t(), E::zero(), &mut out);
        for (ci, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let bc = self.bias.value[[ci]];
            col.mapv_inplace(|v| v + bc);
        }
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Array2<E>) -> Array2<E> {
        let x = self.cache.take().expect("Linear: backward without forward");
        let (b, of) = g.dim();
        assert_eq!(of, self.out_f);
        let mut dw = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((self.out_f, self.in_f))
            .unwrap();
        general_mat_mul(E::one(), &g.t(), &x, E::one(), &mut dw);
        for (ci, col) in g.axis_iter(Axis(1)).enumerate() {
            let s = col.iter().fold(E::zero(), |acc, &v| acc + v);
            self.bias.grad[[ci]] = self.bias.grad[[ci]] + s;
        }
        let w = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_f, self.in_f))
            .unwrap();
        let mut dx = Array2::<E>::zeros((b, self.in_f));
        general_mat_mul(E::one(), g, &w, E::zero(), &mut dx);
        dx
    }
}

impl<E: Element> Module<E> for Linear<E> {
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
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut layer = Linear::<f64>::new(7, 4);
        layer.init_params(&mut rng);
        let x = Array2::from_shape_fn((3, 7), |_| rng.random::<f64>() - 0.5);
        let got = layer.forward(&x);
        for bi in 0..3 {
            for o in 0..4 {
                let mut acc = layer.bias.value[[o]];
                for i in 0..7 {
                    acc += x[[bi, i]] * layer.weight.value[[o, i]];
                }
                assert!((got[[bi, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut layer = Linear::<f64>::new(5, 3);
        layer.init_params(&mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.random::<f64>() - 0.5);
        let r = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() - 0.5);

        let _ = layer.forward(&x);
        let dx = layer.backward(&r);
        let dw = layer.weight.grad.clone();
        let db = layer.bias.grad.clone();

        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in 0..xp.len() {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dx.as_slice().unwrap()[idx]).abs() < 1e-8);
        }
        for idx in 0..layer.weight.value.len() {
            let orig = layer.weight.value.as_slice().unwrap()[idx];
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dw.as_slice().unwrap()[idx]).abs() < 1e-8);
        }
        for idx in 0..layer.bias.value.len() {
            let orig = layer.bias.value.as_slice().unwrap()[idx];
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = layer.forward(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            layer.bias.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - db.as_slice().unwrap()[idx]).abs() < 1e-8);
        }
    }
}
