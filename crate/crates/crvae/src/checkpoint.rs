use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CRVAECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_ARRAY: u8 = 0;
const KIND_BLOB: u8 = 1;

/// On-disk training state: named f64 arrays (parameters, momentum buffers,
/// scheduler scalars) plus named byte blobs (config text, RNG states). All
/// integers and floats are little-endian. f32 model parameters are widened
/// to f64 before writing, which round-trips exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub config_text: String,
    pub arrays: Vec<(String, ArrayD<f64>)>,
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing blob {name:?}")))
    }
}

fn write_bytes(out: &mut impl Write, bytes: &[u8]) -> Result<()> {
    out.write_all(&(bytes.len() as u64).to_le_bytes())?;
    out.write_all(bytes)?;
    Ok(())
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&ckpt.epoch.to_le_bytes())?;
    write_bytes(&mut out, ckpt.config_text.as_bytes())?;
    let count = (ckpt.arrays.len() + ckpt.blobs.len()) as u64;
    out.write_all(&count.to_le_bytes())?;
    for (name, arr) in &ckpt.arrays {
        write_bytes(&mut out, name.as_bytes())?;
        out.write_all(&[KIND_ARRAY])?;
        out.write_all(&(arr.ndim() as u32).to_le_bytes())?;
        for d in arr.shape() {
            out.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in arr.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for (name, blob) in &ckpt.blobs {
        write_bytes(&mut out, name.as_bytes())?;
        out.write_all(&[KIND_BLOB])?;
        write_bytes(&mut out, blob)?;
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Parse {
            offset: self.offset,
            msg: format!("checkpoint truncated: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn bytes(&mut self) -> Result<Vec<u8>> {
        let len = self.u64()?;
        if len > (1 << 33) {
            return Err(Error::Parse {
                offset: self.offset,
                msg: format!("implausible field length {len}"),
            });
        }
        let mut buf = vec![0u8; len as usize];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn string(&mut self) -> Result<String> {
        let at = self.offset;
        String::from_utf8(self.bytes()?)
            .map_err(|_| Error::Parse { offset: at, msg: "invalid utf-8 in name".into() })
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader { inner: std::io::BufReader::new(file), offset: 0 };

    let mut magic = [0u8; 8];
    r.fill(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic {magic:02x?})",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} unsupported (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let epoch = r.u64()?;
    let config_text = r.string()?;
    let count = r.u64()?;
    let mut arrays = Vec::new();
    let mut blobs = Vec::new();
    for _ in 0..count {
        let name = r.string()?;
        match r.u8()? {
            KIND_ARRAY => {
                let ndim = r.u32()? as usize;
                if ndim > 8 {
                    return Err(Error::Parse {
                        offset: r.offset,
                        msg: format!("array {name:?} has implausible rank {ndim}"),
                    });
                }
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(r.u64()? as usize);
                }
                let len: usize = shape.iter().product();
                let mut data = Vec::with_capacity(len);
                let mut b = [0u8; 8];
                for _ in 0..len {
                    r.fill(&mut b)?;
                    data.push(f64::from_le_bytes(b));
                }
                let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
                    .map_err(|e| Error::Checkpoint(format!("array {name:?}: {e}")))?;
                arrays.push((name, arr));
            }
            KIND_BLOB => blobs.push((name, r.bytes()?)),
            kind => {
                return Err(Error::Parse {
                    offset: r.offset,
                    msg: format!("unknown section kind {kind}"),
                })
            }
        }
    }
    Ok(Checkpoint { epoch, config_text, arrays, blobs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn sample() -> Checkpoint {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.5, -2.0, 0.0, 3.25, 1e-30, 7.0])
            .unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[4]), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        Checkpoint {
            epoch: 12,
            config_text: "gamma = 1\nseed = 3\n".into(),
            arrays: vec![("q.enc.w".into(), a), ("opt.q.enc.w".into(), b)],
            blobs: vec![("rng.shuffle".into(), vec![9u8; 56])],
        }
    }

    #[test]
    fn round_trip_is_exact_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        save(&p1, &ckpt).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        save(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn f32_parameters_survive_the_f64_widening() {
        let vals: Vec<f32> = vec![1.0e-37, -3.3333333, 0.1, f32::MIN_POSITIVE, 1234567.0];
        let widened = ArrayD::from_shape_vec(
            IxDyn(&[5]),
            vals.iter().map(|&v| f64::from(v)).collect(),
        )
        .unwrap();
        let ckpt = Checkpoint {
            epoch: 0,
            config_text: String::new(),
            arrays: vec![("w".into(), widened)],
            blobs: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        save(&path, &ckpt).unwrap();
        let loaded = load(&path).unwrap();
        let narrowed: Vec<f32> = loaded.array("w").unwrap().iter().map(|&v| v as f32).collect();
        assert_eq!(narrowed, vals);
    }

    #[test]
    fn rejects_foreign_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");

        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        let good = dir.path().join("good.ckpt");
        save(&good, &sample()).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();

        let mut wrong_version = bytes.clone();
        wrong_version[8] = 99;
        std::fs::write(&path, &wrong_version).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn missing_sections_are_reported_by_name() {
        let ckpt = sample();
        assert!(ckpt.array("q.enc.w").is_ok());
        let err = ckpt.array("nope").unwrap_err();
        assert!(err.to_string().contains("nope"));
        let err = ckpt.blob("also.nope").unwrap_err();
        assert!(err.to_string().contains("also.nope"));
    }
}
