//! Test-set evaluation: SDR against the pattern-weighted target and
//! realized-pattern estimates for either processor.

use serde::{Deserialize, Serialize};

use crate::baseline::{oracle_filter, OracleScene};
use crate::dataset::{pattern_rows, scene_features, Setup};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::mask::{apply_mask, Mask};
use crate::metrics::{aggregate_narrowband, aggregate_pattern, narrowband_ratio, sdr, wideband_ratio, NarrowbandEstimate, PatternEstimate};
use crate::nn::forward_item;
use crate::pattern::PatternSource;
use crate::scene::{source_spectrograms, target_spectrogram, RenderedScene};
use crate::stft::{Spectrogram, Stft};
use crate::timeline::Processor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ParametricOracle,
    Neural,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric-oracle" => Ok(Method::ParametricOracle),
            "neural" => Ok(Method::Neural),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Mask for a static pattern.
pub fn static_mask(scene: &RenderedScene, pattern: &PatternSource, processor: &Processor, stft: &Stft) -> Result<(Mask, Spectrogram)> {
    let (features, reference) = scene_features(scene, stft)?;
    let mask = match processor {
        Processor::ParametricOracle => {
            let oracle = OracleScene::from_scene(scene, stft)?;
            oracle_filter(&oracle, std::slice::from_ref(pattern))?
        }
        Processor::Neural { params, cfg } => {
            let rows = pattern_rows(std::slice::from_ref(pattern), cfg.l)?;
            forward_item(params, cfg, &features.view(), Some(&rows))?.0
        }
    };
    Ok((mask, reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRatio {
    pub doa_deg: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub setup: usize,
    pub pattern: usize,
    pub sdr_db: f64,
    /// SDR of the unfiltered reference mixture against the same target.
    pub sdr_unprocessed_db: f64,
    pub sources: Vec<SourceRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub samples: Vec<SampleMetrics>,
    pub mean_sdr_db: f64,
    pub mean_sdr_unprocessed_db: f64,
    pub wideband: PatternEstimate,
    pub narrowband: NarrowbandEstimate,
}

impl EvalReport {
    pub fn sdr_csv(&self) -> String {
        let mut out = String::from("setup,pattern,sdr_db,sdr_unprocessed_db\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.setup, s.pattern, s.sdr_db, s.sdr_unprocessed_db));
        }
        out
    }
}

struct Evaluated {
    metrics: SampleMetrics,
    narrow: Vec<(f64, Vec<Option<f64>>)>,
}

fn evaluate_one(setup_idx: usize, pattern_idx: usize, scene: &RenderedScene, pattern: &PatternSource, processor: &Processor, stft: &Stft) -> Result<Evaluated> {
    let (mask, reference) = static_mask(scene, pattern, processor, stft)?;
    let sources = source_spectrograms(scene, stft)?;
    let target = stft.istft(&target_spectrogram(&sources, &scene.doas, std::slice::from_ref(pattern))?)?;
    let estimate = stft.istft(&apply_mask(&mask, &reference)?)?;
    let unprocessed = stft.istft(&reference)?;
    let mut ratios = Vec::new();
    let mut narrow = Vec::new();
    for (x, doa) in sources.iter().zip(&scene.doas) {
        ratios.push(SourceRatio {
            doa_deg: doa.to_degrees(),
            ratio: wideband_ratio(&mask, x)?,
        });
        narrow.push((*doa, narrowband_ratio(&mask, x)?));
    }
    Ok(Evaluated {
        metrics: SampleMetrics {
            setup: setup_idx,
            pattern: pattern_idx,
            sdr_db: sdr(&target, &estimate)?,
            sdr_unprocessed_db: sdr(&target, &unprocessed)?,
            sources: ratios,
        },
        narrow,
    })
}

/// Evaluates every (setup, pattern) pair. `patterns` replaces each
/// setup's own draws when given.
pub fn evaluate(
    method: Method,
    setups: &[Setup],
    patterns: Option<&[PatternSource]>,
    processor: &Processor,
    stft: &Stft,
    exec: Execution,
) -> Result<EvalReport> {
    let pairs: Vec<(usize, usize)> = setups
        .iter()
        .enumerate()
        .flat_map(|(s, setup)| {
            let n = patterns.map_or(setup.patterns.len(), <[_]>::len);
            (0..n).map(move |p| (s, p))
        })
        .collect();
    if pairs.is_empty() {
        return Err(invalid("nothing to evaluate"));
    }
    let results = exec.try_map(&pairs, |&(s, p)| {
        let pattern = match patterns {
            Some(ps) => &ps[p],
            None => &setups[s].patterns[p],
        };
        evaluate_one(s, p, &setups[s].scene, pattern, processor, stft)
    })?;
    let n = results.len() as f64;
    let mean_sdr_db = results.iter().map(|r| r.metrics.sdr_db).sum::<f64>() / n;
    let mean_sdr_unprocessed_db = results.iter().map(|r| r.metrics.sdr_unprocessed_db).sum::<f64>() / n;
    let wide: Vec<(f64, f64)> = results
        .iter()
        .flat_map(|r| r.metrics.sources.iter().map(|s| (s.doa_deg.to_radians(), s.ratio)))
        .collect();
    let narrow: Vec<(f64, Vec<Option<f64>>)> = results.iter().flat_map(|r| r.narrow.iter().cloned()).collect();
    Ok(EvalReport {
        method,
        mean_sdr_db,
        mean_sdr_unprocessed_db,
        wideband: aggregate_pattern(&wide)?,
        narrowband: aggregate_narrowband(&narrow)?,
        samples: results.into_iter().map(|r| r.metrics).collect(),
    })
}
