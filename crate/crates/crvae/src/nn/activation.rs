use ndarray::Array4;

use super::Element;

pub struct Relu<E: Element> {
    mask: Option<Array4<E>>,
}

impl<E: Element> Relu<E> {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn forward(&mut self, x: &Array4<E>) -> Array4<E> {
        let zero = E::zero();
        let one = E::one();
        let mask = x.mapv(|v| if v > zero { one } else { zero });
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array4<E> {
        let mask = self.mask.take().expect("Relu: backward without forward");
        g * &mask
    }
}

impl<E: Element> Default for Relu<E> {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Sigmoid<E: Element> {
    out: Option<Array4<E>>,
}

impl<E: Element> Sigmoid<E> {
    pub fn new() -> Self {
        Self { out: None }
    }

    pub fn forward(&mut self, x: &Array4<E>) -> Array4<E> {
        let one = E::one();
        let out = x.mapv(|v| one / (one + (-v).exp()));
        self.out = Some(out.clone());
        out
    }

    pub fn backward(&mut self, g: &Array4<E>) -> Array4<E> {
        let y = self.out.take().expect("Sigmoid: backward without forward");
        let one = E::one();
        let dydx = y.mapv(|v| v * (one - v));
        g * &dydx
    }
}

impl<E: Element> Default for Sigmoid<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.random::<f64>() - 0.5);
        let r = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.random::<f64>() - 0.5);
        let mut act = Relu::new();
        let _ = act.forward(&x);
        let dx = act.backward(&r);
        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in 0..xp.len() {
            let orig = xp.as_slice().unwrap()[idx];
            if orig.abs() < 10.0 * eps {
                continue;
            }
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = act.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = act.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dx.as_slice().unwrap()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Array4::from_shape_fn((2, 2, 3, 3), |_| 4.0 * (rng.random::<f64>() - 0.5));
        let r = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.random::<f64>() - 0.5);
        let mut act = Sigmoid::new();
        let _ = act.forward(&x);
        let dx = act.backward(&r);
        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in 0..xp.len() {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + eps;
            let lp: f64 = act.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm: f64 = act.forward(&xp).iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dx.as_slice().unwrap()[idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_output_range() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| {
            (i as f32 - 0.5) * 100.0 + j as f32
        });
        let mut act = Sigmoid::new();
        let y = act.forward(&x);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
