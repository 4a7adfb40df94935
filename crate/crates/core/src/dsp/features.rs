//! Frame-level acoustic features and the `VCFT` feature file.

use std::path::Path;

use crate::{Error, Result};

/// Where a feature track came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Extracted from recorded speech.
    Natural,
    /// VAE output decoded with the input speaker's own code.
    Reconstructed,
    /// VAE output decoded with another speaker's code.
    Converted,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Natural => "natural",
            FeatureKind::Reconstructed => "reconstructed",
            FeatureKind::Converted => "converted",
        }
    }

    fn tag(self) -> u8 {
        match self {
            FeatureKind::Natural => 0,
            FeatureKind::Reconstructed => 1,
            FeatureKind::Converted => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FeatureKind::Natural),
            1 => Some(FeatureKind::Reconstructed),
            2 => Some(FeatureKind::Converted),
            _ => None,
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-frame mel-cepstra, log-f0, voicing and energy.
///
/// `mcc[t][0]` is the cepstral level term of the unit-sum spectrum;
/// `energy[t]` is the removed normalizer. `log_f0[t]` is `Some` exactly on
/// voiced frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub mcc: Vec<Vec<f64>>,
    pub log_f0: Vec<Option<f64>>,
    pub energy: Vec<f64>,
    pub frame_shift_ms: f64,
    pub kind: FeatureKind,
    /// Set once a GV post-filter has been applied.
    pub postfiltered: bool,
}

pub const FEATURE_MAGIC: &[u8; 4] = b"VCFT";
pub const FEATURE_VERSION: u32 = 1;
const POSTFILTER_BIT: u8 = 0x80;

impl FeatureTrack {
    pub fn frames(&self) -> usize {
        self.mcc.len()
    }

    pub fn dims(&self) -> usize {
        self.mcc.first().map_or(0, Vec::len)
    }

    pub fn voiced(&self, t: usize) -> bool {
        self.log_f0[t].is_some()
    }

    pub fn voiced_count(&self) -> usize {
        self.log_f0.iter().filter(|v| v.is_some()).count()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.mcc.len();
        if self.log_f0.len() != n || self.energy.len() != n {
            return Err(Error::invalid(format!(
                "feature track lengths differ: mcc {n}, log_f0 {}, energy {}",
                self.log_f0.len(),
                self.energy.len()
            )));
        }
        let d = self.dims();
        if let Some(t) = self.mcc.iter().position(|f| f.len() != d) {
            return Err(Error::invalid(format!(
                "frame {t} has {} dims, expected {d}",
                self.mcc[t].len()
            )));
        }
        if let Some(t) = self.energy.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::invalid(format!(
                "frame {t} has non-positive energy {}",
                self.energy[t]
            )));
        }
        let finite =
            self.mcc.iter().flatten().all(|v| v.is_finite()) && self.log_f0.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("feature track holds non-finite values"));
        }
        if !(self.frame_shift_ms > 0.0) {
            return Err(Error::invalid("frame shift must be positive"));
        }
        Ok(())
    }

    /// Frame `t`'s MCC dims `1..` (the part the VAE models).
    pub fn spectral(&self, t: usize) -> &[f64] {
        &self.mcc[t][1..]
    }

    /// Serializes to the `VCFT` layout (little-endian):
    ///
    /// ```text
    /// "VCFT" | version u32 | frames u32 | dims u32 | frame_shift_ms f32 | kind u8
    /// mcc f32 × frames × dims | energy f32 × frames | log_f0 f32 × frames | voiced u8 × frames
    /// ```
    ///
    /// Values are stored as `f32`; unvoiced log-f0 slots hold 0. The kind
    /// byte's high bit marks post-filtered tracks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.frames();
        let d = self.dims();
        let mut out = Vec::with_capacity(21 + n * (d * 4 + 9));
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.frame_shift_ms as f32).to_le_bytes());
        let tag = self.kind.tag() | if self.postfiltered { POSTFILTER_BIT } else { 0 };
        out.push(tag);
        for frame in &self.mcc {
            for &v in frame {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        for &e in &self.energy {
            out.extend_from_slice(&(e as f32).to_le_bytes());
        }
        for lf in &self.log_f0 {
            out.extend_from_slice(&(lf.unwrap_or(0.0) as f32).to_le_bytes());
        }
        out.extend(self.log_f0.iter().map(|v| v.is_some() as u8));
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("VCFT: {m}"));
        if buf.len() < 21 || &buf[..4] != FEATURE_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64;
        let version = u32_at(4);
        if version != FEATURE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u32_at(8) as usize;
        let d = u32_at(12) as usize;
        let frame_shift_ms = f32_at(16);
        let tag = buf[20];
        let kind = FeatureKind::from_tag(tag & !POSTFILTER_BIT).ok_or_else(|| bad("unknown kind tag"))?;
        let expected = 21 + n * d * 4 + n * 4 * 2 + n;
        if buf.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, got {}", buf.len())));
        }
        let mut off = 21;
        let mut mcc = Vec::with_capacity(n);
        for _ in 0..n {
            mcc.push((0..d).map(|j| f32_at(off + 4 * j)).collect());
            off += 4 * d;
        }
        let energy: Vec<f64> = (0..n).map(|t| f32_at(off + 4 * t)).collect();
        off += 4 * n;
        let lf0: Vec<f64> = (0..n).map(|t| f32_at(off + 4 * t)).collect();
        off += 4 * n;
        let log_f0 = (0..n)
            .map(|t| match buf[off + t] {
                0 => Ok(None),
                1 => Ok(Some(lf0[t])),
                v => Err(bad(&format!("voicing byte {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mcc,
            log_f0,
            energy,
            frame_shift_ms,
            kind,
            postfiltered: tag & POSTFILTER_BIT != 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
