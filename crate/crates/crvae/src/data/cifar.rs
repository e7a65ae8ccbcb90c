use std::fs;
use std::path::Path;

use ndarray::Array4;

use crate::error::{Error, Result};

const RECORD: usize = 1 + 3 * 1024;

/// One CIFAR-10 binary batch file: records of 1 label byte followed by 3072
/// channel-planar RGB bytes (32x32 each).
pub fn read_cifar_bin(path: &Path) -> Result<(Array4<f32>, Vec<u8>)> {
    let buf = fs::read(path)?;
    if buf.is_empty() || buf.len() % RECORD != 0 {
        return Err(Error::Parse {
            offset: (buf.len() - buf.len() % RECORD) as u64,
            msg: format!(
                "file length {} is not a multiple of the {RECORD}-byte record",
                buf.len()
            ),
        });
    }
    let n = buf.len() / RECORD;
    let mut images = Array4::<f32>::zeros((n, 3, 32, 32));
    let mut labels = Vec::with_capacity(n);
    {
        let im = images.as_slice_mut().unwrap();
        for r in 0..n {
            let base = r * RECORD;
            let label = buf[base];
            if label > 9 {
                return Err(Error::Parse {
                    offset: base as u64,
                    msg: format!("label {label} out of range 0..=9"),
                });
            }
            labels.push(label);
            for (i, &b) in buf[base + 1..base + RECORD].iter().enumerate() {
                im[r * 3072 + i] = b as f32 / 255.0;
            }
        }
    }
    Ok((images, labels))
}
