//! Anechoic multi-source scenes recorded by a compact planar array.
//!
//! Propagation is direct-path only: every source reaches microphone `q`
//! after `d_q / c` seconds with amplitude `1 / (4π d_q)`. Fractional delays
//! are applied in the time domain with a windowed-sinc filter, so each
//! microphone signal is exactly the sum of its per-source components plus
//! optional white sensor noise.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::delay::{fractional_delay, DELAY_TAPS};
use crate::error::{invalid, Result};
use crate::pattern::{wrap_angle, PatternSource};
use crate::sources::{SourceRegistry, SyntheticSpec};
use crate::stft::{Spectrogram, Stft};
use crate::wav::read_wav;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Radius of the default uniform circular array (3 cm diameter).
pub const DEFAULT_ARRAY_RADIUS: f64 = 0.015;
pub const DEFAULT_DISTANCE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    pub reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_index: usize) -> Result<Self> {
        let g = ArrayGeometry {
            mic_positions,
            reference_index,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.mic_positions.len();
        if q < 2 {
            return Err(invalid(format!("an array needs at least 2 microphones, got {q}")));
        }
        if self.reference_index >= q {
            return Err(invalid(format!("reference index {} out of range", self.reference_index)));
        }
        for i in 0..q {
            if self.mic_positions[i].iter().any(|v| !v.is_finite()) {
                return Err(invalid("microphone positions must be finite"));
            }
            for j in 0..i {
                if dist(&self.mic_positions[i], &self.mic_positions[j]) < 1e-9 {
                    return Err(invalid(format!("microphones {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let q = self.num_mics() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for k in 0..3 {
                c[k] += p[k] / q;
            }
        }
        c
    }

    /// Largest microphone distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.mic_positions
            .iter()
            .map(|p| dist(p, &c))
            .fold(0.0, f64::max)
    }

    /// Position of a source at azimuth `doa` and range `distance` from the
    /// centroid, in the array plane.
    pub fn source_position(&self, doa: f64, distance: f64) -> [f64; 3] {
        let c = self.centroid();
        [c[0] + distance * doa.cos(), c[1] + distance * doa.sin(), c[2]]
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Center microphone (the reference, index 0) plus three microphones at
/// 0°, 120° and 240° on a 1.5 cm radius circle.
pub fn build_default_array() -> ArrayGeometry {
    let mut mics = vec![[0.0, 0.0, 0.0]];
    for k in 0..3 {
        let a = TAU * k as f64 / 3.0;
        mics.push([DEFAULT_ARRAY_RADIUS * a.cos(), DEFAULT_ARRAY_RADIUS * a.sin(), 0.0]);
    }
    ArrayGeometry {
        mic_positions: mics,
        reference_index: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPath {
    /// Seconds.
    pub delay: f64,
    /// 1 / meters.
    pub gain: f64,
}

/// Per-microphone propagation from a source at (`doa`, `distance`).
pub fn direct_path(geom: &ArrayGeometry, doa: f64, distance: f64) -> Result<Vec<DirectPath>> {
    if !(distance > geom.radius()) || !distance.is_finite() {
        return Err(invalid(format!(
            "source at {distance} m lies inside the array (radius {} m)",
            geom.radius()
        )));
    }
    let s = geom.source_position(doa, distance);
    Ok(geom
        .mic_positions
        .iter()
        .map(|m| {
            let d = dist(&s, m);
            DirectPath {
                delay: d / SPEED_OF_SOUND,
                gain: 1.0 / (4.0 * PI * d),
            }
        })
        .collect())
}

/// Where a source's samples come from; kept for scene files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceMaterial {
    Wav { wav_path: String },
    Synthetic { synthetic: SyntheticSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    /// Azimuth in radians.
    pub doa: f64,
    pub distance: f64,
    pub signal: Vec<f64>,
    pub material: Option<SourceMaterial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    pub noise_snr_db: Option<f64>,
    pub sample_rate: u32,
    /// Seconds.
    pub duration: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn doas(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.doa).collect()
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            sources: self
                .sources
                .iter()
                .map(|s| SourceFileEntry {
                    doa_deg: s.doa.to_degrees(),
                    distance_m: s.distance,
                    material: s.material.clone(),
                })
                .collect(),
            noise_snr_db: self.noise_snr_db,
            seed: self.rng_seed,
            duration_s: self.duration,
        }
    }
}

/// JSON form of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub sources: Vec<SourceFileEntry>,
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFileEntry {
    pub doa_deg: f64,
    #[serde(default = "default_distance")]
    pub distance_m: f64,
    #[serde(flatten)]
    pub material: Option<SourceMaterial>,
}

fn default_distance() -> f64 {
    DEFAULT_DISTANCE
}

impl SceneFile {
    /// Materializes source signals; relative WAV paths resolve against
    /// `base_dir`. WAVs must already be mono at `sample_rate`, and are
    /// truncated or zero-padded to the scene duration.
    pub fn load(&self, sample_rate: u32, base_dir: &Path) -> Result<SceneSpec> {
        if !(self.duration_s > 0.0) {
            return Err(invalid("scene duration must be positive"));
        }
        let len = (self.duration_s * sample_rate as f64).round() as usize;
        let sources = self
            .sources
            .iter()
            .map(|e| {
                let signal = match &e.material {
                    Some(SourceMaterial::Synthetic { synthetic }) => synthetic.generate(sample_rate, len),
                    Some(SourceMaterial::Wav { wav_path }) => {
                        let audio = read_wav(base_dir.join(wav_path))?;
                        if audio.sample_rate != sample_rate || audio.channels.len() != 1 {
                            return Err(invalid(format!(
                                "{wav_path}: expected mono audio at {sample_rate} Hz"
                            )));
                        }
                        let mut s = audio.channels.into_iter().next().unwrap_or_default();
                        s.resize(len, 0.0);
                        s
                    }
                    None => return Err(invalid("every source needs wav_path or synthetic")),
                };
                Ok(SourceSpec {
                    doa: wrap_angle(e.doa_deg.to_radians()),
                    distance: e.distance_m,
                    signal,
                    material: e.material.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneSpec {
            sources,
            noise_snr_db: self.noise_snr_db,
            sample_rate,
            duration: self.duration_s,
            rng_seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub sample_rate: u32,
    pub mic_signals: Vec<Vec<f64>>,
    /// Noiseless per-source signals at the reference microphone.
    pub ref_components: Vec<Vec<f64>>,
    pub doas: Vec<f64>,
    pub reference_index: usize,
    /// Sensor noise added at each microphone, when any.
    pub noise: Option<Vec<Vec<f64>>>,
}

impl RenderedScene {
    pub fn len(&self) -> usize {
        self.mic_signals.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reference(&self) -> &[f64] {
        &self.mic_signals[self.reference_index]
    }

    /// Sum of the noiseless reference components.
    pub fn clean_reference(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for c in &self.ref_components {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }
}

/// Renders every microphone signal.
pub fn render_mics(scene: &SceneSpec, geom: &ArrayGeometry) -> Result<RenderedScene> {
    geom.validate()?;
    let len = scene.num_samples();
    if len == 0 {
        return Err(invalid("scene duration must be positive"));
    }
    let noisy = matches!(scene.noise_snr_db, Some(snr) if snr.is_finite());
    if scene.sources.is_empty() && !noisy {
        return Err(invalid("a scene needs at least one source or sensor noise"));
    }
    let fs = scene.sample_rate as f64;
    let q = geom.num_mics();
    // components[n][q]
    let mut components = Vec::with_capacity(scene.sources.len());
    for (n, src) in scene.sources.iter().enumerate() {
        if src.signal.len() != len {
            return Err(invalid(format!(
                "source {n} has {} samples, scene expects {len}",
                src.signal.len()
            )));
        }
        if src.signal.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("source {n} contains non-finite samples")));
        }
        let paths = direct_path(geom, src.doa, src.distance)?;
        let per_mic = paths
            .iter()
            .map(|p| fractional_delay(&src.signal, p.delay * fs, p.gain, DELAY_TAPS))
            .collect::<Result<Vec<_>>>()?;
        components.push(per_mic);
    }
    let mut mic_signals = vec![vec![0.0; len]; q];
    for per_mic in &components {
        for (mic, comp) in mic_signals.iter_mut().zip(per_mic) {
            for (m, v) in mic.iter_mut().zip(comp) {
                *m += v;
            }
        }
    }
    let ref_components: Vec<Vec<f64>> = components
        .iter()
        .map(|per_mic| per_mic[geom.reference_index].clone())
        .collect();

    let noise = match scene.noise_snr_db {
        Some(snr) if snr.is_finite() => {
            let ref_power = mic_signals[geom.reference_index].iter().map(|v| v * v).sum::<f64>() / len as f64;
            let ref_power = if scene.sources.is_empty() { 1.0 } else { ref_power };
            let sigma = (ref_power / 10f64.powf(snr / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
            let noise: Vec<Vec<f64>> = (0..q)
                .map(|_| (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            for (mic, nz) in mic_signals.iter_mut().zip(&noise) {
                for (m, v) in mic.iter_mut().zip(nz) {
                    *m += v;
                }
            }
            Some(noise)
        }
        _ => None,
    };
    Ok(RenderedScene {
        sample_rate: scene.sample_rate,
        mic_signals,
        ref_components,
        doas: scene.doas(),
        reference_index: geom.reference_index,
        noise,
    })
}

/// Per-frame patterns: one static entry or one per STFT frame.
fn frame_gains(patterns: &[PatternSource], frames: usize, doas: &[f64]) -> Result<Array2<f64>> {
    if patterns.len() != 1 && patterns.len() != frames {
        return Err(invalid(format!(
            "expected 1 or {frames} patterns, got {}",
            patterns.len()
        )));
    }
    Ok(Array2::from_shape_fn((frames, doas.len()), |(t, n)| {
        let p = if patterns.len() == 1 { &patterns[0] } else { &patterns[t] };
        p.gain(doas[n])
    }))
}

/// Per-source reference spectrograms.
pub fn source_spectrograms(scene: &RenderedScene, stft: &Stft) -> Result<Vec<Spectrogram>> {
    scene.ref_components.iter().map(|c| stft.stft(c)).collect()
}

/// Target spectrogram `Z[t, f] = sum_n gain_t(doa_n) X_n[t, f]`.
pub fn target_spectrogram(
    source_specs: &[Spectrogram],
    doas: &[f64],
    patterns: &[PatternSource],
) -> Result<Spectrogram> {
    let first = source_specs
        .first()
        .ok_or_else(|| invalid("target needs at least one source"))?;
    if doas.len() != source_specs.len() {
        return Err(invalid("one DOA per source spectrogram is required"));
    }
    let frames = first.frames();
    let gains = frame_gains(patterns, frames, doas)?;
    let mut z = Spectrogram::zeros(first.config, first.len);
    for (n, x) in source_specs.iter().enumerate() {
        first.ensure_compatible(x, "target_spectrogram")?;
        for ((t, f), v) in z.data.indexed_iter_mut() {
            *v += x.data[[t, f]] * Complex64::new(gains[[t, n]], 0.0);
        }
    }
    Ok(z)
}

/// Time-domain target for a static (`patterns.len() == 1`) or per-frame
/// pattern sequence.
pub fn render_target(scene: &RenderedScene, patterns: &[PatternSource], stft: &Stft) -> Result<Vec<f64>> {
    let specs = source_spectrograms(scene, stft)?;
    let z = target_spectrogram(&specs, &scene.doas, patterns)?;
    stft.istft(&z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl Split {
    /// Candidate DOAs in degrees.
    pub fn doa_grid_deg(self) -> Vec<f64> {
        match self {
            Split::Train => (0..72).map(|k| 5.0 * k as f64).collect(),
            Split::Val => (0..72).map(|k| 2.5 + 5.0 * k as f64).collect(),
            Split::Test => (0..144).map(|k| 1.25 + 2.5 * k as f64).collect(),
        }
    }

    fn default_sources(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Split::Train | Split::Val => 1..=3,
            Split::Test => 2..=2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSamplerConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub distance_m: f64,
    /// Overrides the split's source count.
    #[serde(default)]
    pub num_sources: Option<usize>,
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
}

impl Default for SceneSamplerConfig {
    fn default() -> Self {
        SceneSamplerConfig {
            sample_rate: 16_000,
            duration_s: 4.0,
            distance_m: DEFAULT_DISTANCE,
            num_sources: None,
            noise_snr_db: None,
        }
    }
}

/// Draws a source-array setup: DOAs without replacement from the split's
/// grid and one source signal each (synthetic, or a random excerpt from
/// `registry` when given).
pub fn sample_scene<R: Rng + ?Sized>(
    split: Split,
    rng: &mut R,
    cfg: &SceneSamplerConfig,
    registry: Option<&SourceRegistry>,
) -> Result<SceneSpec> {
    let grid = split.doa_grid_deg();
    let n = match cfg.num_sources {
        Some(n) => n,
        None => rng.random_range(split.default_sources()),
    };
    if n == 0 || n > grid.len() {
        return Err(invalid(format!("cannot place {n} sources on the {split:?} grid")));
    }
    let len = (cfg.duration_s * cfg.sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(invalid("scene duration must be positive"));
    }
    let picked = sample(rng, grid.len(), n);
    let mut sources = Vec::with_capacity(n);
    for idx in picked {
        let (signal, material) = match registry {
            Some(reg) if !reg.is_empty() => {
                let e = &reg.entries[rng.random_range(0..reg.len())];
                let mut s = if e.samples.len() > len {
                    let start = rng.random_range(0..=e.samples.len() - len);
                    e.samples[start..start + len].to_vec()
                } else {
                    e.samples.clone()
                };
                s.resize(len, 0.0);
                let material = e.path.as_ref().map(|p| SourceMaterial::Wav {
                    wav_path: p.to_string_lossy().into_owned(),
                });
                (s, material)
            }
            _ => {
                let spec = SyntheticSpec::SpeechShapedNoise { seed: rng.random() };
                (spec.generate(cfg.sample_rate, len), Some(SourceMaterial::Synthetic { synthetic: spec }))
            }
        };
        sources.push(SourceSpec {
            doa: grid[idx].to_radians(),
            distance: cfg.distance_m,
            signal,
            material,
        });
    }
    Ok(SceneSpec {
        sources,
        noise_snr_db: cfg.noise_snr_db,
        sample_rate: cfg.sample_rate,
        duration: cfg.duration_s,
        rng_seed: rng.random(),
    })
}
