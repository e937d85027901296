//! Supervised examples: rendered scenes paired with patterns and targets.
//!
//! Every scene and every pattern draw has its own generator seeded from
//! `(seed, scene index)`, so an example never depends on the order in which
//! examples are built or on the execution mode.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::nn::Example;
use crate::pattern::{PatternSource, RecipeConfig, DEFAULT_L};
use crate::scene::{render_mics, render_target, sample_scene, ArrayGeometry, RenderedScene, SceneSamplerConfig, Split};
use crate::sources::SourceRegistry;
use crate::stft::{stack_features, Spectrogram, Stft};

/// SplitMix64 finalizer over `base` and `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// Network input `[T, F, 2Q]` and the reference-mic spectrum of a scene.
pub fn scene_features(scene: &RenderedScene, stft: &Stft) -> Result<(Array3<f64>, Spectrogram)> {
    let specs: Vec<Spectrogram> = scene
        .mic_signals
        .iter()
        .map(|s| stft.stft(s))
        .collect::<Result<_>>()?;
    let block = stack_features(&specs)?;
    let features = block.data.index_axis_move(Axis(0), 0);
    Ok((features, specs[scene.reference_index].clone()))
}

/// `[1, L]` or `[T, L]` conditioning rows for a pattern sequence.
pub fn pattern_rows(patterns: &[PatternSource], l: usize) -> Result<Array2<f64>> {
    if patterns.is_empty() {
        return Err(invalid("at least one pattern is required"));
    }
    let mut rows = Array2::zeros((patterns.len(), l));
    for (i, p) in patterns.iter().enumerate() {
        let v = p.to_vector(l)?;
        rows.row_mut(i).assign(&ndarray::ArrayView1::from(v.gains()));
    }
    Ok(rows)
}

/// Builds one example for a static pattern or per-frame sequence.
pub fn build_example(scene: &RenderedScene, patterns: &[PatternSource], l: usize, stft: &Stft) -> Result<Example> {
    let (features, reference) = scene_features(scene, stft)?;
    let target = render_target(scene, patterns, stft)?;
    Ok(Example {
        features,
        reference,
        pattern: pattern_rows(patterns, l)?,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub split: Split,
    /// Source-array setups.
    pub scenes: usize,
    pub sampler: SceneSamplerConfig,
    pub recipe: RecipeConfig,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_l() -> usize {
    DEFAULT_L
}

/// One rendered setup and the patterns drawn for it.
#[derive(Debug, Clone)]
pub struct Setup {
    pub scene: RenderedScene,
    pub patterns: Vec<PatternSource>,
}

/// Renders `cfg.scenes` setups with their pattern draws.
pub fn build_setups(
    cfg: &DatasetConfig,
    geom: &ArrayGeometry,
    registry: Option<&SourceRegistry>,
    exec: Execution,
) -> Result<Vec<Setup>> {
    cfg.recipe.validate()?;
    exec.try_map_indices(cfg.scenes, |i| {
        let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[i as u64, 0]));
        let spec = sample_scene(cfg.split, &mut scene_rng, &cfg.sampler, registry)?;
        let scene = render_mics(&spec, geom)?;
        let mut pat_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[i as u64, 1]));
        let patterns = cfg
            .recipe
            .patterns_for_setup(&mut pat_rng)?
            .into_iter()
            .map(PatternSource::from)
            .collect();
        Ok(Setup { scene, patterns })
    })
}

/// One static-pattern example per (setup, pattern), setup-major.
pub fn build_examples(setups: &[Setup], l: usize, stft: &Stft, exec: Execution) -> Result<Vec<Example>> {
    let pairs: Vec<(usize, usize)> = setups
        .iter()
        .enumerate()
        .flat_map(|(s, setup)| (0..setup.patterns.len()).map(move |p| (s, p)))
        .collect();
    exec.try_map(&pairs, |&(s, p)| {
        build_example(&setups[s].scene, std::slice::from_ref(&setups[s].patterns[p]), l, stft)
    })
}
