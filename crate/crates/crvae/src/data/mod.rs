pub mod augment;
pub mod cifar;
pub mod idx;
pub mod synthetic;

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use augment::{augment, AugmentationSpec};

/// An image classification dataset held in memory. Pixels are f32 in [0,1],
/// laid out [N, C, H, W].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Array4<f32>,
    pub labels: Vec<u8>,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Array4<f32>, labels: Vec<u8>, name: &str) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.dim().0,
                labels.len()
            )));
        }
        Ok(Self { images, labels, name: name.to_string() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    pub fn image_f64(&self, i: usize) -> Array3<f64> {
        self.images.index_axis(Axis(0), i).mapv(f64::from)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let images = gather(&self.images, indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { images, labels, name: self.name.clone() }
    }

    /// Split off the trailing `frac` of samples as a holdout set.
    pub fn split_holdout(&self, frac: f64) -> (Dataset, Dataset) {
        let n = self.len();
        let keep = n - ((n as f64 * frac).ceil() as usize).min(n);
        let head: Vec<usize> = (0..keep).collect();
        let tail: Vec<usize> = (keep..n).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    IdxEmnist,
    Cifar10Bin,
    Synthetic,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(Self::Idx),
            "idx-emnist" => Ok(Self::IdxEmnist),
            "cifar10-bin" => Ok(Self::Cifar10Bin),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!(
                "unknown data format {other:?} (expected idx, idx-emnist, cifar10-bin, or synthetic)"
            ))),
        }
    }
}

fn find_file(dir: &Path, want: &[&str], ext: &str) -> Result<PathBuf> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        if want.iter().any(|w| name.contains(w)) && name.contains(ext) {
            return Ok(dir.join(name));
        }
    }
    Err(Error::Config(format!(
        "no {ext} file matching {want:?} in {} (found: {names:?})",
        dir.display()
    )))
}

fn idx_pair(dir: &Path, want: &[&str], transpose: bool, name: &str) -> Result<Dataset> {
    let images_raw = idx::read_idx_images(&find_file(dir, want, "idx3")?)?;
    let labels = idx::read_idx_labels(&find_file(dir, want, "idx1")?)?;
    let (n, h, w) = images_raw.dim();
    let (oh, ow) = if transpose { (w, h) } else { (h, w) };
    let images = Array4::from_shape_fn((n, 1, oh, ow), |(s, _, i, j)| {
        let v = if transpose { images_raw[[s, j, i]] } else { images_raw[[s, i, j]] };
        f32::from(v) / 255.0
    });
    Dataset::new(images, labels, name)
}

/// Load a (train, test) pair from `dir`.
///
/// `Idx` expects MNIST-style file names (train-*/t10k-* with idx3/idx1
/// magic); `IdxEmnist` additionally transposes each image, matching how the
/// EMNIST archive stores pixels. `Cifar10Bin` reads data_batch_*.bin and
/// test_batch.bin. `Synthetic` ignores `dir` and generates the built-in
/// glyph corpus.
pub fn load_dataset(dir: &Path, format: DataFormat) -> Result<(Dataset, Dataset)> {
    match format {
        DataFormat::Idx | DataFormat::IdxEmnist => {
            let t = format == DataFormat::IdxEmnist;
            let name = if t { "emnist" } else { "idx" };
            let train = idx_pair(dir, &["train"], t, name)?;
            let test = idx_pair(dir, &["t10k", "test"], t, name)?;
            Ok((train, test))
        }
        DataFormat::Cifar10Bin => {
            let mut images: Option<Array4<f32>> = None;
            let mut labels = Vec::new();
            for i in 1..=5 {
                let path = dir.join(format!("data_batch_{i}.bin"));
                if !path.exists() && i > 1 {
                    break;
                }
                let (imgs, labs) = cifar::read_cifar_bin(&path)?;
                labels.extend(labs);
                images = Some(match images {
                    None => imgs,
                    Some(acc) => ndarray::concatenate(Axis(0), &[acc.view(), imgs.view()])
                        .map_err(|e| Error::Shape(e.to_string()))?,
                });
            }
            let train = Dataset::new(images.unwrap(), labels, "cifar10")?;
            let (timgs, tlabs) = cifar::read_cifar_bin(&dir.join("test_batch.bin"))?;
            let test = Dataset::new(timgs, tlabs, "cifar10")?;
            Ok((train, test))
        }
        DataFormat::Synthetic => {
            let (imgs, labs) = synthetic::synthetic_images(6000, 17);
            let train = Dataset::new(imgs, labs, "synthetic")?;
            let (imgs, labs) = synthetic::synthetic_images(1000, 18);
            let test = Dataset::new(imgs, labs, "synthetic")?;
            Ok((train, test))
        }
    }
}

/// A shuffled pass order over `n` samples.
pub fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Half-open batch ranges over `n` samples. A trailing batch of fewer than
/// two samples is dropped, so every batch can feed the contrastive term.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    assert!(batch >= 2, "batch size must be at least 2");
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        if end - start >= 2 {
            out.push((start, end));
        }
        start = end;
    }
    out
}

pub fn gather(images: &Array4<f32>, indices: &[usize]) -> Array4<f32> {
    let (_, c, h, w) = images.dim();
    Array4::from_shape_fn((indices.len(), c, h, w), |(s, ci, i, j)| {
        images[[indices[s], ci, i, j]]
    })
}

/// Produce the query and key views of a batch by running the augmentation
/// pipeline twice per image, one RNG stream per view. Row i of both outputs
/// derives from row i of the input.
pub fn two_views(
    batch: &Array4<f32>,
    spec: &AugmentationSpec,
    rng_q: &mut ChaCha8Rng,
    rng_k: &mut ChaCha8Rng,
) -> (Array4<f32>, Array4<f32>) {
    (one_view(batch, spec, rng_q), one_view(batch, spec, rng_k))
}

/// A single augmented view of a batch (the query path of a plain VAE).
pub fn one_view(batch: &Array4<f32>, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Array4<f32> {
    let (n, c, h, w) = batch.dim();
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for s in 0..n {
        let img = batch.index_axis(Axis(0), s).mapv(f64::from);
        let view = augment(&img, spec, rng);
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[[s, ci, i, j]] = view[[ci, i, j]] as f32;
                }
            }
        }
    }
    out
}
