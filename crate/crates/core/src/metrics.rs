//! Realized-pattern estimates and signal-to-distortion ratio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::mask::Mask;
use crate::pattern::PatternSource;
use crate::stft::Spectrogram;

/// SDR reported for an exact reconstruction.
pub const SDR_CAP_DB: f64 = 100.0;

fn check_shapes(mask: &Mask, source: &Spectrogram) -> Result<()> {
    if mask.data.dim() != source.data.dim() {
        return Err(shape_err(
            "pattern estimate",
            format!("{:?}", source.data.dim()),
            format!("{:?}", mask.data.dim()),
        ));
    }
    Ok(())
}

/// Masked-to-unmasked energy of one source over all bins and frames.
pub fn wideband_ratio(mask: &Mask, source: &Spectrogram) -> Result<f64> {
    check_shapes(mask, source)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, x) in mask.data.iter().zip(source.data.iter()) {
        let e = x.norm_sqr();
        num += m.norm_sqr() * e;
        den += e;
    }
    if den <= 0.0 {
        return Err(invalid("source has zero energy"));
    }
    Ok(num / den)
}

/// Per-bin ratio over frames; `None` where the source has no energy.
pub fn narrowband_ratio(mask: &Mask, source: &Spectrogram) -> Result<Vec<Option<f64>>> {
    check_shapes(mask, source)?;
    let bins = source.bins();
    let mut num = vec![0.0; bins];
    let mut den = vec![0.0; bins];
    for ((t, f), x) in source.data.indexed_iter() {
        let e = x.norm_sqr();
        num[f] += mask.data[[t, f]].norm_sqr() * e;
        den[f] += e;
    }
    Ok(num
        .into_iter()
        .zip(den)
        .map(|(n, d)| (d > 0.0).then(|| n / d))
        .collect())
}

/// Mean ratio of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub angle_deg: f64,
    pub ratio: f64,
    /// `10 log10(ratio)`.
    pub ratio_db: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatternEstimate {
    /// Sorted by angle.
    pub directions: Vec<DirectionEstimate>,
}

/// Direction key: micro-degree resolution keeps grid angles distinct while
/// merging values that differ only by rounding.
fn angle_key(theta: f64) -> i64 {
    (crate::pattern::wrap_angle(theta).to_degrees() * 1e6).round() as i64 % 360_000_000
}

fn key_deg(k: i64) -> f64 {
    k as f64 / 1e6
}

/// Arithmetic mean of ratios per distinct direction (`theta` in radians).
pub fn aggregate_pattern(samples: &[(f64, f64)]) -> Result<PatternEstimate> {
    if samples.is_empty() {
        return Err(invalid("no samples to aggregate"));
    }
    let mut groups: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for &(theta, ratio) in samples {
        if !(ratio >= 0.0) {
            return Err(invalid(format!("ratio must be non-negative, got {ratio}")));
        }
        let e = groups.entry(angle_key(theta)).or_insert((0.0, 0));
        e.0 += ratio;
        e.1 += 1;
    }
    Ok(PatternEstimate {
        directions: groups
            .into_iter()
            .map(|(k, (sum, count))| {
                let ratio = sum / count as f64;
                DirectionEstimate {
                    angle_deg: key_deg(k),
                    ratio,
                    ratio_db: 10.0 * ratio.log10(),
                    count,
                }
            })
            .collect(),
    })
}

/// Per-direction, per-bin means over the bins present in each sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NarrowbandEstimate {
    pub angles_deg: Vec<f64>,
    /// `[angle][bin]`.
    pub ratios: Vec<Vec<Option<f64>>>,
}

pub fn aggregate_narrowband(samples: &[(f64, Vec<Option<f64>>)]) -> Result<NarrowbandEstimate> {
    let bins = samples
        .first()
        .map(|s| s.1.len())
        .ok_or_else(|| invalid("no samples to aggregate"))?;
    let mut groups: BTreeMap<i64, Vec<(f64, usize)>> = BTreeMap::new();
    for (theta, r) in samples {
        if r.len() != bins {
            return Err(invalid("narrowband samples differ in bin count"));
        }
        let g = groups.entry(angle_key(*theta)).or_insert_with(|| vec![(0.0, 0); bins]);
        for (acc, v) in g.iter_mut().zip(r) {
            if let Some(v) = v {
                acc.0 += v;
                acc.1 += 1;
            }
        }
    }
    let mut out = NarrowbandEstimate::default();
    for (k, g) in groups {
        out.angles_deg.push(key_deg(k));
        out.ratios
            .push(g.into_iter().map(|(s, c)| (c > 0).then(|| s / c as f64)).collect());
    }
    Ok(out)
}

impl PatternEstimate {
    /// CSV with the estimate in power dB next to the target `20 log10`
    /// pattern gain, when a target is given.
    pub fn to_csv(&self, target: Option<&PatternSource>) -> String {
        let mut out = String::from("angle_deg,ratio,ratio_db,target_gain_db,count\n");
        for d in &self.directions {
            let target_db = target
                .map(|p| format!("{}", 20.0 * p.gain(d.angle_deg.to_radians()).log10()))
                .unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", d.angle_deg, d.ratio, d.ratio_db, target_db, d.count));
        }
        out
    }
}

impl NarrowbandEstimate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_deg,bin,ratio\n");
        for (a, row) in self.angles_deg.iter().zip(&self.ratios) {
            for (f, r) in row.iter().enumerate() {
                let r = r.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{a},{f},{r}\n"));
            }
        }
        out
    }
}

/// `10 log10(|z|^2 / |z - zhat|^2)`, capped for exact matches.
pub fn sdr(target: &[f64], estimate: &[f64]) -> Result<f64> {
    if target.len() != estimate.len() {
        return Err(invalid(format!(
            "target has {} samples, estimate {}",
            target.len(),
            estimate.len()
        )));
    }
    let signal: f64 = target.iter().map(|v| v * v).sum();
    if signal <= 0.0 {
        return Err(invalid("target has zero energy"));
    }
    let err: f64 = target.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    if err <= 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (signal / err).log10()).min(SDR_CAP_DB))
}
