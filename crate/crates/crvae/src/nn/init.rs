use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Element;

/// Fill `arr` with draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
///
/// Draws happen in f64 regardless of `E` so that f32 and f64 models built
/// from the same seed share the same underlying random stream.
pub fn uniform_fan_in<E: Element>(arr: &mut ArrayD<E>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in arr.iter_mut() {
        *v = E::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound);
    }
}
