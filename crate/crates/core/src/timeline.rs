//! Time-varying patterns and frame-accurate processing.
//!
//! A timeline is a list of `(start_frame, pattern)` segments; the pattern
//! active at STFT frame `t` is the last segment starting at or before `t`.
//! Both processors condition frame `t` on exactly that pattern, and
//! neither lets later frames influence earlier ones.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baseline::{oracle_filter, OracleScene};
use crate::dataset::{pattern_rows, scene_features};
use crate::error::{invalid, Result};
use crate::mask::{apply_mask, Mask};
use crate::nn::{forward_item, ArchConfig, ModelParams};
use crate::pattern::{PatternSource, PatternVector};
use crate::scene::RenderedScene;
use crate::stft::{Spectrogram, Stft};

/// Wire form of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start_frame: usize,
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    segments: Vec<(usize, PatternVector)>,
}

impl Timeline {
    /// Validates segments: non-empty, starting at frame 0, strictly
    /// increasing starts, `l` gains in `[0, 1]` each.
    pub fn new(entries: Vec<TimelineEntry>, l: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid("timeline needs at least one segment"));
        }
        if entries[0].start_frame != 0 {
            return Err(invalid("the first timeline segment must start at frame 0"));
        }
        let mut segments = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            if let Some((prev, _)) = segments.last() {
                if e.start_frame <= *prev {
                    return Err(invalid(format!(
                        "segment {i} starts at frame {} which overlaps the previous segment (frame {prev})",
                        e.start_frame
                    )));
                }
            }
            if e.gains.len() != l {
                return Err(invalid(format!(
                    "segment {i} has {} gains, expected {l}",
                    e.gains.len()
                )));
            }
            let v = PatternVector::new(e.gains).map_err(|err| invalid(format!("segment {i}: {err}")))?;
            segments.push((e.start_frame, v));
        }
        Ok(Timeline { segments })
    }

    pub fn constant(pattern: PatternVector) -> Self {
        Timeline {
            segments: vec![(0, pattern)],
        }
    }

    /// Splits `frames` into `patterns.len()` equal periods.
    pub fn equal_periods(patterns: Vec<PatternVector>, frames: usize) -> Result<Self> {
        let k = patterns.len();
        if k == 0 || k > frames.max(1) {
            return Err(invalid("need between 1 and `frames` patterns"));
        }
        let l = patterns[0].len();
        let entries = patterns
            .into_iter()
            .enumerate()
            .map(|(i, p)| TimelineEntry {
                start_frame: i * frames / k,
                gains: p.gains().to_vec(),
            })
            .collect();
        Timeline::new(entries, l)
    }

    pub fn segments(&self) -> &[(usize, PatternVector)] {
        &self.segments
    }

    pub fn entries(&self) -> Vec<TimelineEntry> {
        self.segments
            .iter()
            .map(|(s, v)| TimelineEntry {
                start_frame: *s,
                gains: v.gains().to_vec(),
            })
            .collect()
    }

    pub fn l(&self) -> usize {
        self.segments[0].1.len()
    }

    /// Index of the segment active at frame `t`.
    pub fn active_segment(&self, t: usize) -> usize {
        self.segments.partition_point(|(s, _)| *s <= t) - 1
    }

    pub fn pattern_at(&self, t: usize) -> &PatternVector {
        &self.segments[self.active_segment(t)].1
    }

    /// One pattern per frame.
    pub fn per_frame(&self, frames: usize) -> Vec<PatternSource> {
        (0..frames)
            .map(|t| PatternSource::Vector(self.pattern_at(t).clone()))
            .collect()
    }

    /// `[T, L]` gains applied at each frame.
    pub fn frame_gains(&self, frames: usize) -> Array2<f64> {
        let l = self.l();
        Array2::from_shape_fn((frames, l), |(t, i)| self.pattern_at(t).gains()[i])
    }
}

/// What produces the mask.
#[derive(Debug, Clone)]
pub enum Processor {
    /// Dominant-source oracle gains; needs per-source components.
    ParametricOracle,
    /// A trained network; parameters are shared read-only.
    Neural {
        params: Arc<ModelParams>,
        cfg: ArchConfig,
    },
}

#[derive(Debug, Clone)]
pub struct TimelineRender {
    pub mask: Mask,
    pub unprocessed: Spectrogram,
    pub processed: Spectrogram,
    /// Time-domain output at the reference microphone.
    pub signal: Vec<f64>,
}

/// Filters the reference channel of `scene` following `timeline`.
pub fn process_timeline(
    scene: &RenderedScene,
    timeline: &Timeline,
    processor: &Processor,
    stft: &Stft,
) -> Result<TimelineRender> {
    let (features, reference) = scene_features(scene, stft)?;
    let frames = reference.frames();
    let mask = match processor {
        Processor::ParametricOracle => {
            if scene.ref_components.is_empty() {
                return Err(invalid(
                    "the parametric oracle needs per-source components, which this scene lacks",
                ));
            }
            let oracle = OracleScene::from_scene(scene, stft)?;
            oracle_filter(&oracle, &timeline.per_frame(frames))?
        }
        Processor::Neural { params, cfg } => {
            if timeline.l() != cfg.l {
                return Err(invalid(format!(
                    "timeline patterns have {} gains, the model expects {}",
                    timeline.l(),
                    cfg.l
                )));
            }
            let rows = pattern_rows(&timeline.per_frame(frames), cfg.l)?;
            forward_item(params, cfg, &features.view(), Some(&rows))?.0
        }
    };
    let processed = apply_mask(&mask, &reference)?;
    let signal = stft.istft(&processed)?;
    Ok(TimelineRender {
        mask,
        unprocessed: reference,
        processed,
        signal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(start: usize, g: f64) -> TimelineEntry {
        TimelineEntry {
            start_frame: start,
            gains: vec![g; 8],
        }
    }

    #[test]
    fn validation() {
        assert!(Timeline::new(vec![], 8).is_err());
        assert!(Timeline::new(vec![entry(1, 0.5)], 8).is_err());
        assert!(Timeline::new(vec![entry(0, 0.5), entry(4, 0.5), entry(4, 0.2)], 8).is_err());
        assert!(Timeline::new(vec![entry(0, 0.5), entry(3, 0.5), entry(2, 0.2)], 8).is_err());
        assert!(Timeline::new(vec![entry(0, 1.5)], 8).is_err());
        assert!(Timeline::new(vec![entry(0, 0.5)], 72).is_err());
        assert!(Timeline::new(vec![entry(0, 0.5), entry(4, 0.2)], 8).is_ok());
    }

    #[test]
    fn active_segments() {
        let tl = Timeline::new(vec![entry(0, 1.0), entry(3, 0.5), entry(7, 0.2)], 8).unwrap();
        let active: Vec<usize> = (0..10).map(|t| tl.active_segment(t)).collect();
        assert_eq!(active, vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(tl.frame_gains(10)[[5, 0]], 0.5);
        let thirds = Timeline::equal_periods(
            vec![
                PatternVector::constant(8, 1.0).unwrap(),
                PatternVector::constant(8, 0.5).unwrap(),
                PatternVector::constant(8, 0.2).unwrap(),
            ],
            9,
        )
        .unwrap();
        let starts: Vec<usize> = thirds.segments().iter().map(|s| s.0).collect();
        assert_eq!(starts, vec![0, 3, 6]);
    }
}
