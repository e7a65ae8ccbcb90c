use ndarray::ArrayD;

use super::Element;

/// A trainable array together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub value: ArrayD<E>,
    pub grad: ArrayD<E>,
}

impl<E: Element> Param<E> {
    pub fn new(value: ArrayD<E>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(E::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters and non-trainable buffers (running
/// statistics). Names are stable across runs; checkpointing, the optimizer
/// and the EMA update all rely on the visiting order being deterministic.
pub trait Module<E: Element> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)>;
    fn params_ref(&self) -> Vec<(String, &Param<E>)>;

    /// Non-trainable state (e.g. batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<(String, &mut ArrayD<E>)> {
        Vec::new()
    }
    fn buffers_ref(&self) -> Vec<(String, &ArrayD<E>)> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params_ref().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Prefix every name produced by a child module, preserving order.
pub fn with_prefix<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(name, v)| (format!("{prefix}.{name}"), v))
        .collect()
}

/// Whether the network is computing with batch statistics (training) or
/// running statistics (evaluation). Only batch norm distinguishes the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
