use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::data::epoch_order;
use crate::error::{Error, Result};

const COS_EPS: f64 = 1e-8;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 1e-3, momentum: 0.9, batch: 256 }
    }
}

fn check_features(x: &Array2<f64>, y: &[u8], what: &str) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Invalid(format!("{what} set is empty")));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{what}: {} feature rows vs {} labels",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

/// Train a multinomial logistic regression on (xtr, ytr) from zero weights
/// with momentum SGD and return its accuracy on (xte, yte).
pub fn linear_probe(
    xtr: &Array2<f64>,
    ytr: &[u8],
    xte: &Array2<f64>,
    yte: &[u8],
    cfg: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    check_features(xtr, ytr, "train")?;
    check_features(xte, yte, "test")?;
    if xtr.ncols() != xte.ncols() {
        return Err(Error::Shape(format!(
            "train features have dim {} but test features have dim {}",
            xtr.ncols(),
            xte.ncols()
        )));
    }
    let classes = ytr.iter().copied().max().unwrap() as usize + 1;
    if ytr.iter().all(|&l| l == ytr[0]) {
        return Err(Error::Invalid(
            "probe training labels contain a single class; nothing to separate".into(),
        ));
    }
    let (n, d) = xtr.dim();

    let mut w = Array2::<f64>::zeros((classes, d));
    let mut b = Array1::<f64>::zeros(classes);
    let mut vw = Array2::<f64>::zeros((classes, d));
    let mut vb = Array1::<f64>::zeros(classes);

    for _ in 0..cfg.epochs {
        let order = epoch_order(n, rng);
        for chunk in order.chunks(cfg.batch) {
            let bs = chunk.len() as f64;
            let mut gw = Array2::<f64>::zeros((classes, d));
            let mut gb = Array1::<f64>::zeros(classes);
            for &i in chunk {
                let probs = softmax_row(xtr, i, &w, &b);
                for c in 0..classes {
                    let delta = (probs[c] - f64::from(c as u8 == ytr[i])) / bs;
                    gb[c] += delta;
                    for j in 0..d {
                        gw[[c, j]] += delta * xtr[[i, j]];
                    }
                }
            }
            for c in 0..classes {
                vb[c] = cfg.momentum * vb[c] + gb[c];
                b[c] -= cfg.lr * vb[c];
                for j in 0..d {
                    vw[[c, j]] = cfg.momentum * vw[[c, j]] + gw[[c, j]];
                    w[[c, j]] -= cfg.lr * vw[[c, j]];
                }
            }
        }
    }

    let mut correct = 0usize;
    for i in 0..xte.nrows() {
        let probs = softmax_row(xte, i, &w, &b);
        let pred = argmax_smallest(&probs);
        if pred as u8 == yte[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / xte.nrows() as f64)
}

fn softmax_row(x: &Array2<f64>, i: usize, w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    let classes = w.nrows();
    let mut logits = vec![0.0; classes];
    for c in 0..classes {
        let mut acc = b[c];
        for j in 0..x.ncols() {
            acc += w[[c, j]] * x[[i, j]];
        }
        logits[c] = acc;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits
}

fn argmax_smallest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Classify each test row by its k nearest training rows under cosine
/// similarity, votes weighted by 1/(1 - cos + 1e-8). Ties in the vote go to
/// the smallest label.
pub fn knn_classify(
    train: &Array2<f64>,
    labels: &[u8],
    test: &Array2<f64>,
    k: usize,
) -> Result<Vec<u8>> {
    check_features(train, labels, "train")?;
    if train.ncols() != test.ncols() {
        return Err(Error::Shape(format!(
            "train features have dim {} but test features have dim {}",
            train.ncols(),
            test.ncols()
        )));
    }
    if k == 0 || k > train.nrows() {
        return Err(Error::Invalid(format!(
            "k = {k} out of range for {} training points",
            train.nrows()
        )));
    }
    let classes = labels.iter().copied().max().unwrap() as usize + 1;
    let tr = normalize_rows(train);
    let te = normalize_rows(test);

    let mut preds = Vec::with_capacity(te.nrows());
    for i in 0..te.nrows() {
        let mut sims: Vec<(f64, usize)> = (0..tr.nrows())
            .map(|j| {
                let mut cos = 0.0;
                for c in 0..tr.ncols() {
                    cos += te[[i, c]] * tr[[j, c]];
                }
                (cos, j)
            })
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0f64; classes];
        for &(cos, j) in &sims[..k] {
            votes[labels[j] as usize] += 1.0 / (1.0 - cos + COS_EPS);
        }
        preds.push(argmax_smallest(&votes) as u8);
    }
    Ok(preds)
}

pub fn accuracy(preds: &[u8], truth: &[u8]) -> f64 {
    assert_eq!(preds.len(), truth.len());
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / preds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand_distr::{Distribution, Normal};

    fn blobs(
        n_per: usize,
        centers: &[[f64; 4]],
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, Vec<u8>) {
        let n = n_per * centers.len();
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut x = Array2::<f64>::zeros((n, 4));
        let mut y = Vec::with_capacity(n);
        for (c, center) in centers.iter().enumerate() {
            for i in 0..n_per {
                let r = c * n_per + i;
                for j in 0..4 {
                    x[[r, j]] = center[j] + noise.sample(rng);
                }
                y.push(c as u8);
            }
        }
        (x, y)
    }

    const CENTERS: [[f64; 4]; 3] =
        [[3.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0], [0.0, 0.0, 3.0, 3.0]];

    #[test]
    fn probe_separates_blobs() {
        let mut rng = stream_rng(1, Stream::Probe);
        let (xtr, ytr) = blobs(20, &CENTERS, 0.2, &mut rng);
        let (xte, yte) = blobs(10, &CENTERS, 0.2, &mut rng);
        let acc =
            linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default(), &mut rng).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn probe_on_constant_features_predicts_majority() {
        let mut rng = stream_rng(2, Stream::Probe);
        let xtr = Array2::<f64>::ones((30, 4));
        let mut ytr = vec![0u8; 20];
        ytr.extend(vec![1u8; 10]);
        let xte = Array2::<f64>::ones((10, 4));
        let yte = vec![0u8, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let acc = linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default(), &mut rng).unwrap();
        assert_eq!(acc, 0.6);
    }

    #[test]
    fn probe_rejects_single_class() {
        let mut rng = stream_rng(3, Stream::Probe);
        let x = Array2::<f64>::ones((8, 2));
        let y = vec![4u8; 8];
        assert!(linear_probe(&x, &y, &x, &y, &ProbeConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn knn_separates_blobs_and_ignores_scale() {
        let mut rng = stream_rng(4, Stream::Probe);
        let (xtr, ytr) = blobs(20, &CENTERS, 0.2, &mut rng);
        let (xte, yte) = blobs(10, &CENTERS, 0.2, &mut rng);
        let preds = knn_classify(&xtr, &ytr, &xte, 5).unwrap();
        assert_eq!(accuracy(&preds, &yte), 1.0);

        let scaled = &xte * 3.0;
        assert_eq!(knn_classify(&xtr, &ytr, &scaled, 5).unwrap(), preds);
        let scaled_tr = &xtr * 0.25;
        assert_eq!(knn_classify(&scaled_tr, &ytr, &xte, 5).unwrap(), preds);
    }

    // Re-derive the weighted vote with independent scalar code.
    #[test]
    fn knn_matches_naive_oracle() {
        let mut rng = stream_rng(5, Stream::Probe);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let xtr = Array2::<f64>::from_shape_fn((30, 3), |_| norm.sample(&mut rng));
        let ytr: Vec<u8> = (0..30).map(|i| (i % 4) as u8).collect();
        let xte = Array2::<f64>::from_shape_fn((12, 3), |_| norm.sample(&mut rng));

        for k in [1usize, 5] {
            let got = knn_classify(&xtr, &ytr, &xte, k).unwrap();
            let mut want = Vec::new();
            for i in 0..12 {
                let qn = (0..3).map(|c| xte[[i, c]] * xte[[i, c]]).sum::<f64>().sqrt();
                let mut sims: Vec<(f64, usize)> = (0..30)
                    .map(|j| {
                        let dot: f64 = (0..3).map(|c| xte[[i, c]] * xtr[[j, c]]).sum();
                        let tn = (0..3).map(|c| xtr[[j, c]] * xtr[[j, c]]).sum::<f64>().sqrt();
                        (dot / (qn * tn), j)
                    })
                    .collect();
                sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let mut votes = [0.0f64; 4];
                for &(cos, j) in &sims[..k] {
                    votes[ytr[j] as usize] += 1.0 / (1.0 - cos + 1e-8);
                }
                let mut best = 0;
                for c in 1..4 {
                    if votes[c] > votes[best] {
                        best = c;
                    }
                }
                want.push(best as u8);
            }
            assert_eq!(got, want, "k={k}");
        }
    }

    #[test]
    fn knn_self_classification_is_perfect() {
        let mut rng = stream_rng(6, Stream::Probe);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::<f64>::from_shape_fn((25, 5), |_| norm.sample(&mut rng));
        let y: Vec<u8> = (0..25).map(|i| (i % 7) as u8).collect();
        let preds = knn_classify(&x, &y, &x, 1).unwrap();
        assert_eq!(accuracy(&preds, &y), 1.0);
    }

    #[test]
    fn knn_input_validation() {
        let x = Array2::<f64>::ones((5, 2));
        let y = vec![0u8, 1, 0, 1, 0];
        assert!(knn_classify(&x, &y, &x, 0).is_err());
        assert!(knn_classify(&x, &y, &x, 6).is_err());
        assert!(knn_classify(&Array2::<f64>::zeros((0, 2)), &[], &x, 1).is_err());
        let bad = Array2::<f64>::ones((5, 3));
        assert!(knn_classify(&x, &y, &bad, 1).is_err());
    }
}
