use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > buf.len() {
        return Err(Error::Parse {
            offset: offset as u64,
            msg: format!("need 4 bytes, file has {}", buf.len()),
        });
    }
    Ok(u32::from_be_bytes([buf[offset], buf[offset + 1], buf[offset + 2], buf[offset + 3]]))
}

/// IDX3 image file: big-endian magic 0x00000803, then N, H, W, then N*H*W
/// raw bytes.
pub fn read_idx_images(path: &Path) -> Result<Array3<u8>> {
    let buf = fs::read(path)?;
    let magic = be_u32(&buf, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = be_u32(&buf, 4)? as usize;
    let h = be_u32(&buf, 8)? as usize;
    let w = be_u32(&buf, 12)? as usize;
    let expected = 16 + n * h * w;
    if buf.len() != expected {
        return Err(Error::Parse {
            offset: buf.len().min(expected) as u64,
            msg: format!(
                "image payload truncated or oversized: {} bytes for {n}x{h}x{w} (want {expected})",
                buf.len()
            ),
        });
    }
    Ok(Array3::from_shape_vec((n, h, w), buf[16..].to_vec()).unwrap())
}

/// IDX1 label file: big-endian magic 0x00000801, then N, then N raw bytes.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = fs::read(path)?;
    let magic = be_u32(&buf, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n = be_u32(&buf, 4)? as usize;
    let expected = 8 + n;
    if buf.len() != expected {
        return Err(Error::Parse {
            offset: buf.len().min(expected) as u64,
            msg: format!("label payload truncated: {} bytes for n={n}", buf.len()),
        });
    }
    Ok(buf[8..].to_vec())
}

pub fn write_idx_images(path: &Path, images: &Array3<u8>) -> Result<()> {
    let (n, h, w) = images.dim();
    let mut f = fs::File::create(path)?;
    f.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&(h as u32).to_be_bytes())?;
    f.write_all(&(w as u32).to_be_bytes())?;
    f.write_all(images.as_slice().expect("images must be contiguous"))?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}
