//! Mu-law companding onto 256 categorical sample codes.

use crate::scalar::Scalar;

pub const MU_LAW_LEVELS: usize = 256;

/// One quantized sample, `0..=255`. Code 128 holds the bin just above 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MuLawCode(pub u8);

impl MuLawCode {
    /// Code fed to the vocoder before the first real sample.
    pub const START: MuLawCode = MuLawCode(128);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuLaw {
    pub mu: f64,
}

impl Default for MuLaw {
    fn default() -> Self {
        Self { mu: 255.0 }
    }
}

/// Codes for a sample sequence plus how many inputs had to be clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub codes: Vec<MuLawCode>,
    pub clipped: usize,
}

impl MuLaw {
    /// Encodes `x`, clamping to `[-1, 1]` first.
    pub fn encode<T: Scalar>(&self, x: T) -> MuLawCode {
        self.encode_checked(x).0
    }

    /// Encodes `x`; the flag reports whether it was outside `[-1, 1]`.
    pub fn encode_checked<T: Scalar>(&self, x: T) -> (MuLawCode, bool) {
        let raw = x.to_f64_lossless();
        let clipped = !(raw.abs() <= 1.0);
        let x = if raw.is_nan() { 0.0 } else { raw.clamp(-1.0, 1.0) };
        let y = x.signum() * (1.0 + self.mu * x.abs()).ln() / (1.0 + self.mu).ln();
        let y = if x == 0.0 { 0.0 } else { y };
        let code = ((y + 1.0) / 2.0 * MU_LAW_LEVELS as f64).floor();
        let code = code.clamp(0.0, (MU_LAW_LEVELS - 1) as f64) as u8;
        (MuLawCode(code), clipped)
    }

    /// Expands the companded centre of the code's bin.
    pub fn decode<T: Scalar>(&self, code: MuLawCode) -> T {
        let y = (code.0 as f64 + 0.5) / MU_LAW_LEVELS as f64 * 2.0 - 1.0;
        let x = y.signum() * ((1.0 + self.mu).powf(y.abs()) - 1.0) / self.mu;
        T::of(x)
    }

    pub fn encode_slice<T: Scalar>(&self, xs: &[T]) -> Encoded {
        let mut clipped = 0;
        let codes = xs
            .iter()
            .map(|&x| {
                let (c, clip) = self.encode_checked(x);
                clipped += clip as usize;
                c
            })
            .collect();
        Encoded { codes, clipped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let m = MuLaw::default();
        assert_eq!(m.encode(1.0f64), MuLawCode(255));
        assert_eq!(m.encode(-1.0f64), MuLawCode(0));
    }

    #[test]
    fn zero_round_trip() {
        let m = MuLaw::default();
        let back: f64 = m.decode(m.encode(0.0f64));
        assert!(back.abs() <= 1.0 / (128.0 * 256f64.ln()), "{back}");
    }

    #[test]
    fn grid_round_trip_error() {
        let m = MuLaw::default();
        let mut worst: f64 = 0.0;
        for i in 0..=20_000 {
            let x = -1.0 + i as f64 * 1e-4;
            let back: f64 = m.decode(m.encode(x));
            worst = worst.max((back - x).abs());
        }
        assert!(worst <= 0.03, "{worst}");
    }

    #[test]
    fn decode_then_encode_is_identity() {
        let m = MuLaw::default();
        for c in 0..=255u8 {
            let x: f64 = m.decode(MuLawCode(c));
            assert_eq!(m.encode(x), MuLawCode(c));
            let x32: f32 = m.decode(MuLawCode(c));
            assert_eq!(m.encode(x32), MuLawCode(c));
        }
    }

    #[test]
    fn out_of_range_is_clamped_and_counted() {
        let m = MuLaw::default();
        let e = m.encode_slice(&[0.5f64, 1.5, -2.0, f64::NAN]);
        assert_eq!(e.clipped, 3);
        assert_eq!(e.codes[1], MuLawCode(255));
        assert_eq!(e.codes[2], MuLawCode(0));
    }
}
