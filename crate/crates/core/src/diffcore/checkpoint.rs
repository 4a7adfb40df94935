//! `VCRM` model checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VCRM" | version u32 | scalar width u32 | param count u32
//! per param: name len u32 | UTF-8 name | ndim u32 | dims u64 × ndim | values
//! meta count u32
//! per entry: key len u32 | UTF-8 key | value len u32 | UTF-8 value
//! ```
//!
//! Models put hyperparameters, provenance, speaker tables and similar
//! non-tensor state in the metadata block.

use std::path::Path;

use crate::scalar::Scalar;

use super::params::ParamSet;
use super::tensor::Tensor;
use super::DiffError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCRM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamSet<T>,
    pub meta: Vec<(String, String)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffError> {
        if self.pos + n > self.buf.len() {
            return Err(DiffError::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, DiffError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| DiffError::Format(format!("bad UTF-8: {e}")))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ParamSet<T>) -> Self {
        Self {
            params,
            meta: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Metadata value or a format error naming the missing key.
    pub fn require(&self, key: &str) -> Result<&str, DiffError> {
        self.meta(key)
            .ok_or_else(|| DiffError::Format(format!("missing metadata `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, T::BYTES as u32);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, DiffError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(DiffError::Format("bad magic, expected VCRM".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DiffError::Format(format!("unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        if width != T::BYTES {
            return Err(DiffError::Format(format!(
                "scalar width {width} does not match requested {}",
                T::BYTES
            )));
        }
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * T::BYTES)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            params.push(name, Tensor::new(shape, data)?);
        }
        let meta_count = r.u32()? as usize;
        let mut meta = Vec::with_capacity(meta_count);
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        if r.pos != buf.len() {
            return Err(DiffError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        let mut p = ParamSet::new();
        p.push("enc.w1", Tensor::matrix(2, 2, vec![1.0, -0.5, f64::MIN_POSITIVE, 3.0]));
        p.push("enc.b1", Tensor::new(vec![2], vec![0.0, -0.0]).unwrap());
        Checkpoint::new(p)
            .with_meta("kind", "vae")
            .with_meta("speakers", "a,b,ü")
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"VCRM");
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("speakers"), Some("a,b,ü"));
        // -0.0 survives bit for bit
        assert!(back.params.tensor(1).data()[1].is_sign_negative());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
    }
}
