//! Source material: synthetic generators and a registry of ingested WAVs.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::delay::resample;
use crate::error::{Error, Result};
use crate::wav::read_wav;

/// Reproducible synthetic source signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    /// Low-pass tilted noise with a syllable-rate envelope.
    SpeechShapedNoise { seed: u64 },
    /// Harmonic tone with slight vibrato.
    Harmonic {
        seed: u64,
        #[serde(default = "default_f0")]
        f0_hz: f64,
    },
}

fn default_f0() -> f64 {
    220.0
}

impl SyntheticSpec {
    /// Unit-RMS signal of `len` samples.
    pub fn generate(&self, sample_rate: u32, len: usize) -> Vec<f64> {
        let fs = sample_rate as f64;
        let mut out = match *self {
            SyntheticSpec::SpeechShapedNoise { seed } => speech_shaped_noise(seed, fs, len),
            SyntheticSpec::Harmonic { seed, f0_hz } => harmonic(seed, f0_hz, fs, len),
        };
        normalize_rms(&mut out);
        out
    }
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

fn speech_shaped_noise(seed: u64, fs: f64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // two cascaded one-pole low-passes around 800 Hz give a speech-like tilt
    let a = (-2.0 * PI * 800.0 / fs).exp();
    let syllable_hz = rng.random_range(3.0..5.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut prev_white = 0.0;
    (0..len)
        .map(|n| {
            let white: f64 = rng.sample(StandardNormal);
            // first difference keeps some high-frequency content
            let pre = white - 0.5 * prev_white;
            prev_white = white;
            s1 = a * s1 + (1.0 - a) * pre;
            s2 = a * s2 + (1.0 - a) * s1;
            let shaped = 0.7 * s2 + 0.3 * pre * 0.2;
            let env = 0.5 * (1.0 + (2.0 * PI * syllable_hz * n as f64 / fs + phase).sin());
            shaped * (0.15 + env * env)
        })
        .collect()
}

fn harmonic(seed: u64, f0: f64, fs: f64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_harm = ((0.45 * fs / f0).floor() as usize).clamp(1, 40);
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let vib_rate = rng.random_range(4.0..6.0);
    let mut phase = 0.0;
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let f_inst = f0 * (1.0 + 0.01 * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f_inst / fs;
            phases
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let h = (k + 1) as f64;
                    (h * phase + p).sin() / h
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    pub path: Option<PathBuf>,
    pub sample_rate: u32,
    /// Rate of the file before conversion.
    pub original_rate: u32,
    pub resampled: bool,
    pub downmixed: bool,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Mono sources at a common sample rate, in deterministic (sorted file
/// name) order.
#[derive(Debug, Clone, Default)]
pub struct SourceRegistry {
    pub entries: Vec<SourceEntry>,
}

impl SourceRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Synthetic spec file contents: the spec plus a duration.
#[derive(Debug, Clone, Deserialize)]
struct SyntheticFile {
    #[serde(flatten)]
    spec: SyntheticSpec,
    #[serde(default = "default_duration")]
    duration_s: f64,
}

fn default_duration() -> f64 {
    4.0
}

fn load_entry(path: &Path, sample_rate: u32) -> Result<SourceEntry> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "wav" => {
            let audio = read_wav(path)?;
            if audio.is_empty() {
                return Err(Error::Validation("file contains no samples".into()));
            }
            let downmixed = audio.channels.len() > 1;
            let n_ch = audio.channels.len() as f64;
            let mono: Vec<f64> = (0..audio.len())
                .map(|i| audio.channels.iter().map(|c| c[i]).sum::<f64>() / n_ch)
                .collect();
            let resampled = audio.sample_rate != sample_rate;
            let samples = resample(&mono, audio.sample_rate, sample_rate)?;
            Ok(SourceEntry {
                name,
                path: Some(path.to_path_buf()),
                sample_rate,
                original_rate: audio.sample_rate,
                resampled,
                downmixed,
                samples,
            })
        }
        "json" => {
            let file: SyntheticFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if !(file.duration_s > 0.0) {
                return Err(Error::Validation("duration_s must be positive".into()));
            }
            let len = (file.duration_s * sample_rate as f64).round() as usize;
            Ok(SourceEntry {
                name,
                path: Some(path.to_path_buf()),
                sample_rate,
                original_rate: sample_rate,
                resampled: false,
                downmixed: false,
                samples: file.spec.generate(sample_rate, len),
            })
        }
        other => Err(Error::Validation(format!("unsupported source type `.{other}`"))),
    }
}

/// Loads a directory of WAV files and synthetic-spec JSON files (or a
/// single such file), converting everything to mono at `sample_rate`.
pub fn ingest_sources(path: impl AsRef<Path>, sample_rate: u32) -> Result<SourceRegistry> {
    let path = path.as_ref();
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::Ingestion {
                offenders: vec![(path.to_path_buf(), e.to_string())],
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| matches!(e.to_string_lossy().to_ascii_lowercase().as_str(), "wav" | "json"))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();
        files
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(Error::Ingestion {
            offenders: vec![(path.to_path_buf(), "no such file or directory".into())],
        });
    };
    if files.is_empty() {
        return Err(Error::Ingestion {
            offenders: vec![(path.to_path_buf(), "no WAV or synthetic-spec files found".into())],
        });
    }
    let mut entries = Vec::new();
    let mut offenders = Vec::new();
    for f in files {
        match load_entry(&f, sample_rate) {
            Ok(e) => entries.push(e),
            Err(e) => offenders.push((f, e.to_string())),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    Ok(SourceRegistry { entries })
}
