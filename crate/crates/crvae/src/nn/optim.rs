use std::collections::HashMap;

use ndarray::ArrayD;

use super::param::Param;
use super::Element;

/// SGD with classical momentum and L2 weight decay:
///
/// ```text
/// d = g + wd * theta
/// buf = momentum * buf + d
/// theta -= lr * buf
/// ```
///
/// Momentum buffers are keyed by parameter name and created lazily on the
/// first step, so the same optimizer can be restored from a checkpoint by
/// reinserting its buffers.
pub struct Sgd<E: Element> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: HashMap<String, ArrayD<E>>,
}

impl<E: Element> Sgd<E> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: HashMap::new(),
        }
    }

    pub fn step(&mut self, params: Vec<(String, &mut Param<E>)>) {
        let lr = E::from_f64(self.lr);
        let mom = E::from_f64(self.momentum);
        let wd = E::from_f64(self.weight_decay);
        let use_momentum = self.momentum != 0.0;
        let use_wd = self.weight_decay != 0.0;

        for (name, p) in params {
            if use_momentum {
                let buf = self
                    .buffers
                    .entry(name)
                    .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
                for ((b, &g), v) in buf
                    .iter_mut()
                    .zip(p.grad.iter())
                    .zip(p.value.iter_mut())
                {
                    let d = if use_wd { g + wd * *v } else { g };
                    *b = mom * *b + d;
                    *v = *v - lr * *b;
                }
            } else {
                for (&g, v) in p.grad.iter().zip(p.value.iter_mut()) {
                    let d = if use_wd { g + wd * *v } else { g };
                    *v = *v - lr * d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn matches_reference_momentum_trajectory() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 1.0f64));
        let mut opt = Sgd::new(0.1, 0.9, 0.01);
        let grads = [0.5, -0.3, 0.2, 0.0];

        let mut theta = 1.0f64;
        let mut buf = 0.0f64;
        for &g in &grads {
            p.grad[[0]] = g;
            opt.step(vec![("w".into(), &mut p)]);
            let d = g + 0.01 * theta;
            buf = 0.9 * buf + d;
            theta -= 0.1 * buf;
            assert!((p.value[[0]] - theta).abs() < 1e-15);
            p.zero_grad();
        }
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[2]), 2.0f32));
        let mut opt = Sgd::new(0.5, 0.0, 0.0);
        p.grad[[0]] = 1.0;
        p.grad[[1]] = -2.0;
        opt.step(vec![("w".into(), &mut p)]);
        assert_eq!(p.value[[0]], 1.5);
        assert_eq!(p.value[[1]], 3.0);
        assert!(opt.buffers.is_empty());
    }

    #[test]
    fn lr_change_keeps_buffers() {
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 0.0f64));
        let mut opt = Sgd::new(1.0, 0.5, 0.0);
        p.grad[[0]] = 1.0;
        opt.step(vec![("w".into(), &mut p)]);
        assert!((p.value[[0]] + 1.0).abs() < 1e-15);
        opt.lr = 0.1;
        p.zero_grad();
        p.grad[[0]] = 0.0;
        opt.step(vec![("w".into(), &mut p)]);
        // buf = 0.5 * 1.0 = 0.5, step = 0.1 * 0.5
        assert!((p.value[[0]] + 1.05).abs() < 1e-15);
    }
}
