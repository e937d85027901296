//! Oracle-DOA parametric filter.
//!
//! Each time-frequency bin takes the pattern gain of its dominant source,
//! the one with the largest reference-mic magnitude there. Equal
//! magnitudes resolve to the lowest source index.

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::mask::Mask;
use crate::pattern::PatternSource;
use crate::scene::{source_spectrograms, RenderedScene};
use crate::stft::{Spectrogram, Stft};

/// Per-source reference spectrograms with their true directions.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScene {
    pub sources: Vec<Spectrogram>,
    pub doas: Vec<f64>,
}

impl OracleScene {
    pub fn new(sources: Vec<Spectrogram>, doas: Vec<f64>) -> Result<Self> {
        let first = sources.first().ok_or_else(|| invalid("oracle scene needs at least one source"))?;
        if doas.len() != sources.len() {
            return Err(invalid("one DOA per source is required"));
        }
        for s in &sources[1..] {
            first.ensure_compatible(s, "oracle scene")?;
        }
        Ok(OracleScene { sources, doas })
    }

    pub fn from_scene(scene: &RenderedScene, stft: &Stft) -> Result<Self> {
        OracleScene::new(source_spectrograms(scene, stft)?, scene.doas.clone())
    }

    pub fn frames(&self) -> usize {
        self.sources[0].frames()
    }

    pub fn bins(&self) -> usize {
        self.sources[0].bins()
    }

    /// Index of the dominant source in every bin.
    pub fn dominant(&self) -> Array2<usize> {
        Array2::from_shape_fn((self.frames(), self.bins()), |(t, f)| {
            let mut best = 0;
            let mut best_mag = self.sources[0].data[[t, f]].norm();
            for (n, s) in self.sources.iter().enumerate().skip(1) {
                let m = s.data[[t, f]].norm();
                if m > best_mag {
                    best = n;
                    best_mag = m;
                }
            }
            best
        })
    }
}

/// Real, non-negative mask for a static (`patterns.len() == 1`) or
/// per-frame pattern sequence.
pub fn oracle_filter(oracle: &OracleScene, patterns: &[PatternSource]) -> Result<Mask> {
    let frames = oracle.frames();
    if patterns.len() != 1 && patterns.len() != frames {
        return Err(invalid(format!(
            "expected 1 or {frames} patterns, got {}",
            patterns.len()
        )));
    }
    let dominant = oracle.dominant();
    let gains: Vec<Vec<f64>> = patterns
        .iter()
        .map(|p| oracle.doas.iter().map(|d| p.gain(*d)).collect())
        .collect();
    let mask = Array2::from_shape_fn((frames, oracle.bins()), |(t, f)| {
        let row = if gains.len() == 1 { &gains[0] } else { &gains[t] };
        row[dominant[[t, f]]]
    });
    Ok(Mask::from_real(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{combine, AnalyticPattern, SimplifiedDma};
    use crate::stft::StftConfig;
    use std::f64::consts::PI;

    fn tone(k: usize, n: usize, win: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * k as f64 * i as f64 / win as f64).cos()).collect()
    }

    #[test]
    fn single_source_gives_constant_mask() {
        let stft = Stft::new(StftConfig::with_window(16_000, 64)).unwrap();
        let x = stft.stft(&tone(5, 640, 64)).unwrap();
        let card: PatternSource = combine(vec![SimplifiedDma::cardioid(0.0).into()]).unwrap().into();
        let oracle = OracleScene::new(vec![x], vec![PI / 2.0]).unwrap();
        let m = oracle_filter(&oracle, &[card]).unwrap();
        assert!(m.data.iter().all(|g| g.re == 0.5 && g.im == 0.0));
        let omni: PatternSource = AnalyticPattern::omni().into();
        let m = oracle_filter(&oracle, &[omni]).unwrap();
        assert!(m.data.iter().all(|g| g.re == 1.0));
    }

    #[test]
    fn disjoint_tones_carry_their_own_gain() {
        let win = 64;
        let stft = Stft::new(StftConfig::with_window(16_000, win)).unwrap();
        let a = stft.stft(&tone(4, 1280, win)).unwrap();
        let b = stft.stft(&tone(20, 1280, win)).unwrap();
        let card: PatternSource = combine(vec![SimplifiedDma::cardioid(0.0).into()]).unwrap().into();
        let oracle = OracleScene::new(vec![a.clone(), b.clone()], vec![0.0, PI]).unwrap();
        let m = oracle_filter(&oracle, &[card]).unwrap();
        for t in 2..a.frames() - 2 {
            assert_eq!(m.data[[t, 4]].re, 1.0);
            assert_eq!(m.data[[t, 20]].re, 0.1);
        }
    }

    #[test]
    fn ties_go_to_lowest_index_and_lengths_are_checked() {
        let stft = Stft::new(StftConfig::with_window(16_000, 64)).unwrap();
        let x = stft.stft(&tone(3, 640, 64)).unwrap();
        let oracle = OracleScene::new(vec![x.clone(), x], vec![0.0, PI]).unwrap();
        assert!(oracle.dominant().iter().all(|n| *n == 0));
        let omni: PatternSource = AnalyticPattern::omni().into();
        assert!(oracle_filter(&oracle, &[omni.clone(), omni]).is_err());
        assert!(OracleScene::new(vec![], vec![]).is_err());
    }
}
