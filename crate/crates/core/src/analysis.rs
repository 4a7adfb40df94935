//! Objective evaluation: mel-cepstral distortion, DTW alignment, the three
//! feature distances and global-variance reports, with their CSV forms.
//!
//! MCD is always computed over MCC dims 1..=34; the level term is excluded
//! because energy compensation copies it from the source.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::dsp::FeatureTrack;
use crate::pipeline::utterance_variance;
use crate::vae::{ForwardMode, LatentChoice, VaeModel};
use crate::{Error, Result};

/// `10 / ln 10 · sqrt(2)`.
const MCD_SCALE: f64 = 6.141_851_463_713_754;

/// MCD in dB between two spectral frames (level term already removed).
pub fn mcd_frame(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("MCD of {} vs {} dims", a.len(), b.len())));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if !ss.is_finite() {
        return Err(Error::invalid("MCD of non-finite frames"));
    }
    Ok(MCD_SCALE * ss.sqrt())
}

/// Monotone alignment with steps (1,0), (0,1), (1,1).
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl AlignmentPath {
    pub fn mean_cost(&self) -> f64 {
        self.cost / self.pairs.len() as f64
    }
}

/// Minimal-total-cost path under frame MCD. Ties prefer the diagonal step.
pub fn dtw_align(a: &[&[f64]], b: &[&[f64]]) -> Result<AlignmentPath> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::invalid("DTW of an empty sequence"));
    }
    let mut local = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            local[i * m + j] = mcd_frame(a[i], b[j])?;
        }
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + local[i * m + j];
        }
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let cand = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        let (bi, bj) = cand
            .into_iter()
            .flatten()
            .fold(None, |best: Option<(usize, usize)>, c| match best {
                Some(b) if acc[b.0 * m + b.1] <= acc[c.0 * m + c.1] => Some(b),
                _ => Some(c),
            })
            .expect("a non-origin cell has a predecessor");
        i = bi;
        j = bj;
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(AlignmentPath {
        pairs,
        cost: acc[n * m - 1],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    None,
    Dtw,
}

fn spectral_frames(t: &FeatureTrack) -> Vec<&[f64]> {
    (0..t.frames()).map(|i| t.spectral(i)).collect()
}

/// Mean frame MCD between two tracks, frame by frame or along the DTW path.
pub fn mean_mcd(a: &FeatureTrack, b: &FeatureTrack, align: Align) -> Result<f64> {
    mean_mcd_frames(&spectral_frames(a), &spectral_frames(b), align)
}

pub fn mean_mcd_frames(a: &[&[f64]], b: &[&[f64]], align: Align) -> Result<f64> {
    match align {
        Align::None => {
            if a.len() != b.len() || a.is_empty() {
                return Err(Error::invalid(format!(
                    "frame-aligned MCD needs equal non-zero lengths, got {} and {}",
                    a.len(),
                    b.len()
                )));
            }
            let mut s = 0.0;
            for (x, y) in a.iter().zip(b) {
                s += mcd_frame(x, y)?;
            }
            Ok(s / a.len() as f64)
        }
        Align::Dtw => Ok(dtw_align(a, b)?.mean_cost()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRow {
    /// `source->target`.
    pub pair: String,
    pub utterance: String,
    pub dist_id: u8,
    pub mcd_db: f64,
}

/// Per-utterance mean MCD of the three distances:
/// 1 natural target vs converted (DTW), 2 natural target vs reconstructed
/// target (frame-aligned), 3 reconstructed target vs converted (DTW).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistanceReport {
    pub rows: Vec<DistanceRow>,
}

impl DistanceReport {
    pub fn values(&self, dist_id: u8) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.dist_id == dist_id)
            .map(|r| r.mcd_db)
            .collect()
    }

    pub fn median(&self, dist_id: u8) -> f64 {
        median(&self.values(dist_id))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,utterance,dist_id,mcd_db\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6}", r.pair, r.utterance, r.dist_id, r.mcd_db);
        }
        s
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

/// One speaker's parallel test utterances, as `(name, natural track)`.
pub type TestSet = Vec<(String, FeatureTrack)>;

/// Computes the three distances for every conversion pair over their
/// parallel test utterances (matched by position).
pub fn distance_experiment(
    vae: &VaeModel<f64>,
    tests: &BTreeMap<String, TestSet>,
    pairs: &[(String, String)],
) -> Result<DistanceReport> {
    let mut report = DistanceReport::default();
    let mut recon_cache: BTreeMap<&str, Vec<FeatureTrack>> = BTreeMap::new();
    for (src, tgt) in pairs {
        let get = |s: &String| {
            tests
                .get(s)
                .ok_or_else(|| Error::invalid(format!("no test features for speaker {s}")))
        };
        let (src_set, tgt_set) = (get(src)?, get(tgt)?);
        let tgt_code = vae.speaker_code(tgt)?;
        if !recon_cache.contains_key(tgt.as_str()) {
            let rec = tgt_set
                .iter()
                .map(|(_, t)| vae.forward(t, &tgt_code, ForwardMode::Reconstruct, LatentChoice::Mean))
                .collect::<Result<Vec<_>>>()?;
            recon_cache.insert(tgt.as_str(), rec);
        }
        let recs = &recon_cache[tgt.as_str()];
        let label = format!("{src}->{tgt}");
        for (((_, src_track), (name, natural)), rec) in src_set.iter().zip(tgt_set).zip(recs) {
            let conv = vae.forward(src_track, &tgt_code, ForwardMode::Convert, LatentChoice::Mean)?;
            let d = [
                mean_mcd(natural, &conv, Align::Dtw)?,
                mean_mcd(natural, rec, Align::None)?,
                mean_mcd(rec, &conv, Align::Dtw)?,
            ];
            for (k, v) in d.into_iter().enumerate() {
                report.rows.push(DistanceRow {
                    pair: label.clone(),
                    utterance: name.clone(),
                    dist_id: k as u8 + 1,
                    mcd_db: v,
                });
            }
        }
    }
    Ok(report)
}

/// Per-dimension GV keyed by feature kind or system id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GvReport {
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl GvReport {
    /// Mean over dimensions of one key's GV.
    pub fn mean(&self, key: &str) -> Option<f64> {
        self.entries.get(key).map(|g| g.iter().sum::<f64>() / g.len() as f64)
    }

    /// `key,dim,gv` with `dim` the MCC index (1-based).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,dim,gv\n");
        for (k, g) in &self.entries {
            for (d, v) in g.iter().enumerate() {
                let _ = writeln!(s, "{k},{},{v:.6}", d + 1);
            }
        }
        s
    }
}

/// Averages per-utterance variances within each key.
pub fn gv_report(sets: &[(String, Vec<&FeatureTrack>)]) -> Result<GvReport> {
    let mut report = GvReport::default();
    for (key, tracks) in sets {
        if tracks.is_empty() {
            return Err(Error::invalid(format!("GV key {key} has no utterances")));
        }
        let mut acc: Vec<f64> = Vec::new();
        for t in tracks {
            let v = utterance_variance(t);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            } else if acc.len() != v.len() {
                return Err(Error::invalid(format!("GV key {key} mixes dimensionalities")));
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x / tracks.len() as f64;
            }
        }
        report.entries.insert(key.clone(), acc);
    }
    Ok(report)
}
