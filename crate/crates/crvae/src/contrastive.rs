use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, Encoder};
use crate::nn::{Element, Module};

const NORM_FLOOR: f64 = 1e-12;

/// Cosine similarity with norms floored at 1e-12, so the result is defined
/// (and zero) even for zero vectors.
pub fn cosine_sim<E: Element>(a: ArrayView1<E>, b: ArrayView1<E>) -> E {
    let floor = E::from_f64(NORM_FLOOR);
    let mut dot = E::zero();
    let mut na = E::zero();
    let mut nb = E::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    let na = na.sqrt().max(floor);
    let nb = nb.sqrt().max(floor);
    dot / (na * nb)
}

/// InfoNCE over a batch of query/key latents. Row i of `zk` is the positive
/// for row i of `zq`; the other K-1 rows are its negatives. Similarities are
/// cosine, scaled by 1/temperature.
///
/// Returns the scalar loss and its gradient with respect to `zq`. The keys
/// deliberately get no gradient: the key encoder is updated by EMA only.
pub fn info_nce<E: Element>(
    zq: &Array2<E>,
    zk: &Array2<E>,
    temperature: f64,
) -> Result<(f64, Array2<E>)> {
    let (k, d) = zq.dim();
    if zk.dim() != (k, d) {
        return Err(Error::Shape(format!(
            "info_nce: zq {:?} vs zk {:?}",
            zq.dim(),
            zk.dim()
        )));
    }
    if k < 2 {
        return Err(Error::Invalid(
            "info_nce needs a batch of at least 2 (no negatives otherwise)".into(),
        ));
    }
    if temperature <= 0.0 {
        return Err(Error::Invalid("info_nce temperature must be > 0".into()));
    }
    let floor = E::from_f64(NORM_FLOOR);
    let inv_tau = E::from_f64(1.0 / temperature);

    let mut qn = zq.clone();
    let mut q_norm = vec![E::zero(); k];
    let mut q_floored = vec![false; k];
    for (i, mut row) in qn.outer_iter_mut().enumerate() {
        let mut n = E::zero();
        for &v in row.iter() {
            n = n + v * v;
        }
        let n = n.sqrt();
        q_floored[i] = n < floor;
        let n = n.max(floor);
        q_norm[i] = n;
        row.mapv_inplace(|v| v / n);
    }
    let mut kn = zk.clone();
    for mut row in kn.outer_iter_mut() {
        let mut n = E::zero();
        for &v in row.iter() {
            n = n + v * v;
        }
        let n = n.sqrt().max(floor);
        row.mapv_inplace(|v| v / n);
    }

    let logits = qn.dot(&kn.t()).mapv(|v| v * inv_tau);

    let mut loss_acc = 0f64;
    let mut p = Array2::<E>::zeros((k, k));
    for i in 0..k {
        let row = logits.row(i);
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut z = 0f64;
        for &v in row.iter() {
            z += (v - m).to_f64().exp();
        }
        let lse = m.to_f64() + z.ln();
        loss_acc += lse - row[i].to_f64();
        for (j, &v) in row.iter().enumerate() {
            p[[i, j]] = E::from_f64(((v - m).to_f64().exp()) / z);
        }
    }
    let loss = loss_acc / k as f64;

    // dL/d logits = (softmax - I) / K; chain through the 1/tau scale, the
    // key matrix, and the query normalization.
    let scale = inv_tau / E::from_f64(k as f64);
    for i in 0..k {
        p[[i, i]] = p[[i, i]] - E::one();
    }
    let c = p.mapv(|v| v * scale);
    let d_qn = c.dot(&kn);

    let mut d_zq = Array2::<E>::zeros((k, d));
    for i in 0..k {
        let gi = d_qn.row(i);
        let qi = qn.row(i);
        let mut dst = d_zq.row_mut(i);
        if q_floored[i] {
            for (o, &g) in dst.iter_mut().zip(gi.iter()) {
                *o = g / q_norm[i];
            }
        } else {
            let mut proj = E::zero();
            for (&g, &q) in gi.iter().zip(qi.iter()) {
                proj = proj + g * q;
            }
            for ((o, &g), &q) in dst.iter_mut().zip(gi.iter()).zip(qi.iter()) {
                *o = (g - proj * q) / q_norm[i];
            }
        }
    }
    Ok((loss, d_zq))
}

/// MI lower bound log(K) - L_InfoNCE, returned as (nats, bits).
pub fn mi_lower_bound(nce_loss: f64, k: usize) -> (f64, f64) {
    let nats = (k as f64).ln() - nce_loss;
    (nats, nats / std::f64::consts::LN_2)
}

pub fn cr_loss(vae: f64, nce: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        vae
    } else {
        vae + gamma * nce
    }
}

/// Fresh key encoder initialized as an exact copy of the query encoder,
/// parameters and normalization buffers both.
pub fn make_key_encoder<E: Element>(arch: &ArchConfig, query: &Encoder<E>) -> Encoder<E> {
    let mut key = Encoder::new(arch);
    for ((_, kp), (_, qp)) in key.params_mut().into_iter().zip(query.params_ref()) {
        kp.value.assign(&qp.value);
    }
    for ((_, kb), (_, qb)) in key.buffers_mut().into_iter().zip(query.buffers_ref()) {
        kb.assign(qb);
    }
    key
}

/// key <- m * key + (1 - m) * query, element-wise over all parameters.
pub fn ema_update<E: Element>(key: &mut Encoder<E>, query: &Encoder<E>, m: f64) -> Result<()> {
    let me = E::from_f64(m);
    let one_m = E::from_f64(1.0 - m);
    let q_params = query.params_ref();
    let k_params = key.params_mut();
    if q_params.len() != k_params.len() {
        return Err(Error::Shape("ema_update: parameter sets differ".into()));
    }
    for ((kn, kp), (qn, qp)) in k_params.into_iter().zip(q_params) {
        if kn != qn || kp.value.shape() != qp.value.shape() {
            return Err(Error::Shape(format!(
                "ema_update: {kn} {:?} vs {qn} {:?}",
                kp.value.shape(),
                qp.value.shape()
            )));
        }
        for (kv, &qv) in kp.value.iter_mut().zip(qp.value.iter()) {
            *kv = me * *kv + one_m * qv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_closed_forms() {
        let a = array![1.0f64, 2.0, 3.0];
        assert!((cosine_sim(a.view(), a.view()) - 1.0).abs() < 1e-12);
        let b = array![0.0f64, 0.0, 1.0];
        let c = array![0.0f64, 1.0, 0.0];
        assert!(cosine_sim(b.view(), c.view()).abs() < 1e-12);
        let d = array![1.0f64, 0.0];
        let e = array![-1.0f64, 0.0];
        assert!((cosine_sim(d.view(), e.view()) + 1.0).abs() < 1e-12);
        let z = array![0.0f64, 0.0];
        assert_eq!(cosine_sim(z.view(), d.view()), 0.0);
    }

    #[test]
    fn all_equal_similarities_give_log_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for k in [2usize, 50, 256] {
            // Every key row identical: each query sees the same similarity
            // for the positive and all negatives.
            let key_row: Vec<f64> = (0..8).map(|_| rng.random::<f64>() - 0.5).collect();
            let zq = Array2::from_shape_fn((k, 8), |_| rng.random::<f64>() - 0.5);
            let zk = Array2::from_shape_fn((k, 8), |(_, j)| key_row[j]);
            let (loss, _) = info_nce(&zq, &zk, 1.0).unwrap();
            assert!(
                (loss - (k as f64).ln()).abs() < 1e-6,
                "K={k}: {loss} vs {}",
                (k as f64).ln()
            );
        }
    }

    #[test]
    fn hand_computed_two_sample_cases() {
        // s_ii = 1, s_ij = 0, tau = 1.
        let zq = array![[1.0f64, 0.0], [0.0, 1.0]];
        let (loss, _) = info_nce(&zq, &zq.clone(), 1.0).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-6, "{loss} vs {want}");

        // s_ii = 1, s_ij = -1, tau = 0.1.
        let zq = array![[1.0f64, 0.0], [-1.0, 0.0]];
        let (loss, _) = info_nce(&zq, &zq.clone(), 0.1).unwrap();
        let want = (-20.0f64).exp().ln_1p();
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn rejects_degenerate_batches() {
        let zq = array![[1.0f64, 0.0]];
        assert!(info_nce(&zq, &zq.clone(), 1.0).is_err());
        let zq = array![[1.0f64, 0.0], [0.0, 1.0]];
        let zk = array![[1.0f64, 0.0]];
        assert!(info_nce(&zq, &zk, 1.0).is_err());
        assert!(info_nce(&zq, &zq.clone(), 0.0).is_err());
    }

    #[test]
    fn loss_is_scale_invariant_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let zq = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>() - 0.5);
        let zk = Array2::from_shape_fn((6, 5), |_| rng.random::<f64>() - 0.5);
        let (base, _) = info_nce(&zq, &zk, 0.5).unwrap();
        let mut scaled = zq.clone();
        for mut row in scaled.outer_iter_mut() {
            let a = 0.1 + 5.0 * rng.random::<f64>();
            row.mapv_inplace(|v| a * v);
        }
        let (loss, _) = info_nce(&scaled, &zk, 0.5).unwrap();
        assert!((base - loss).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for tau in [1.0, 0.7] {
            let mut zq = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() - 0.5);
            let zk = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() - 0.5);
            let (_, g) = info_nce(&zq, &zk, tau).unwrap();
            let eps = 1e-6;
            for idx in 0..zq.len() {
                let orig = zq.as_slice().unwrap()[idx];
                zq.as_slice_mut().unwrap()[idx] = orig + eps;
                let (lp, _) = info_nce(&zq, &zk, tau).unwrap();
                zq.as_slice_mut().unwrap()[idx] = orig - eps;
                let (lm, _) = info_nce(&zq, &zk, tau).unwrap();
                zq.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() < 1e-8, "tau={tau} [{idx}]: fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn mi_bound_values() {
        let (nats, _) = mi_lower_bound(256f64.ln(), 256);
        assert!(nats.abs() < 1e-12);
        let (_, bits) = mi_lower_bound(0.0, 256);
        assert!((bits - 8.0).abs() < 1e-12);
        let (_, bits) = mi_lower_bound(0.0, 50);
        assert!((bits - 5.643856).abs() < 1e-5);
    }

    #[test]
    fn cr_loss_combines() {
        assert_eq!(cr_loss(2.0, 3.0, 1.0), 5.0);
        assert_eq!(cr_loss(2.0, 3.0, 0.4), 2.0 + 0.4 * 3.0);
        let v = 1.234567890123;
        assert_eq!(cr_loss(v, f64::MAX, 0.0), v);
    }

    #[test]
    fn ema_closed_forms_and_convergence() {
        let arch = ArchConfig::toy(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let mut query = Encoder::<f64>::new(&arch);
        query.init_params(&mut rng);
        let mut key = make_key_encoder(&arch, &query);

        for ((_, kp), (_, qp)) in key.params_ref().into_iter().zip(query.params_ref()) {
            assert_eq!(kp.value, qp.value);
        }

        // Perturb the query, then track it geometrically.
        for (_, p) in query.params_mut() {
            p.value.mapv_inplace(|v| v + 1.0);
        }
        let gap0: f64 = key
            .params_ref()
            .iter()
            .zip(query.params_ref())
            .map(|((_, kp), (_, qp))| {
                kp.value
                    .iter()
                    .zip(qp.value.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let m = 0.9;
        for step in 1..=5 {
            ema_update(&mut key, &query, m).unwrap();
            let gap: f64 = key
                .params_ref()
                .iter()
                .zip(query.params_ref())
                .map(|((_, kp), (_, qp))| {
                    kp.value
                        .iter()
                        .zip(qp.value.iter())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            assert!((gap - gap0 * m.powi(step)).abs() < 1e-9, "step {step}");
        }

        // m = 1 freezes, m = 0 copies.
        let before: Vec<f64> = key.params_ref()[0].1.value.iter().cloned().collect();
        ema_update(&mut key, &query, 1.0).unwrap();
        let after: Vec<f64> = key.params_ref()[0].1.value.iter().cloned().collect();
        assert_eq!(before, after);
        ema_update(&mut key, &query, 0.0).unwrap();
        for ((_, kp), (_, qp)) in key.params_ref().into_iter().zip(query.params_ref()) {
            assert_eq!(kp.value, qp.value);
        }
    }
}
