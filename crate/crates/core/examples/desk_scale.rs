//! Desk-scale overfit run: a reduced FiLM-JNF trained on two scenes with
//! four first-order patterns, then evaluated on fresh signals from the same
//! setups.

use std::time::Instant;

use dirpat_core::dataset::{build_example, derive_seed, scene_features};
use dirpat_core::mask::apply_mask;
use dirpat_core::metrics::sdr;
use dirpat_core::nn::{estimate, train, Arch, ArchConfig, ModelParams, TrainConfig};
use dirpat_core::pattern::{gen_recipe_a, PatternSource};
use dirpat_core::scene::{build_default_array, render_mics, sample_scene, SceneSamplerConfig, SceneSpec, Split};
use dirpat_core::sources::SyntheticSpec;
use dirpat_core::stft::{Stft, StftConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dirpat_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let dur: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let stft = Stft::new(StftConfig::with_window(16_000, 128))?;
    let geom = build_default_array();
    let sampler = SceneSamplerConfig {
        duration_s: dur,
        num_sources: Some(2),
        ..Default::default()
    };
    let recipe_a = gen_recipe_a();
    let patterns: Vec<PatternSource> = [3usize, 16, 28, 43]
        .iter()
        .map(|&i| recipe_a[i].clone().into())
        .collect();
    let mut specs: Vec<SceneSpec> = Vec::new();
    for s in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(42, &[s]));
        specs.push(sample_scene(Split::Train, &mut rng, &sampler, None)?);
    }
    let mut train_set = Vec::new();
    for spec in &specs {
        let scene = render_mics(spec, &geom)?;
        for p in &patterns {
            train_set.push(build_example(&scene, std::slice::from_ref(p), 72, &stft)?);
        }
    }
    let mut cfg = ArchConfig::new(Arch::FilmJnf, 4, 72, 65).with_hidden(32, 16);
    cfg.input_width = 16;
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut params = ModelParams::init(&cfg, seed)?;
    let tc = TrainConfig {
        learning_rate: lr,
        batch_size: 8,
        epochs: steps,
        max_steps: Some(steps),
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let hist = train(&mut params, &cfg, &tc, &stft, &train_set)?;
    println!("trained {} steps in {:.1}s", hist.per_step.len(), t0.elapsed().as_secs_f64());
    for (i, l) in hist.per_step.iter().enumerate() {
        if i % 25 == 0 || i + 1 == hist.per_step.len() {
            println!("step {i}: {l:.4}");
        }
    }
    // fresh signals, same setups
    let (mut proc_sum, mut unproc_sum, mut n) = (0.0, 0.0, 0);
    for (si, spec) in specs.iter().enumerate() {
        for k in 0..3u64 {
            let mut held = spec.clone();
            for (j, src) in held.sources.iter_mut().enumerate() {
                let syn = SyntheticSpec::SpeechShapedNoise { seed: derive_seed(999, &[si as u64, k, j as u64]) };
                src.signal = syn.generate(16_000, src.signal.len());
            }
            let scene = render_mics(&held, &geom)?;
            for p in &patterns {
                let ex = build_example(&scene, std::slice::from_ref(p), 72, &stft)?;
                let (_, zhat) = estimate(&params, &cfg, &stft, &ex)?;
                let (_, reference) = scene_features(&scene, &stft)?;
                let unproc = stft.istft(&reference)?;
                let _ = apply_mask;
                proc_sum += sdr(&ex.target, &zhat)?;
                unproc_sum += sdr(&ex.target, &unproc)?;
                n += 1;
            }
        }
    }
    println!(
        "held-out: processed {:.2} dB, unprocessed {:.2} dB",
        proc_sum / n as f64,
        unproc_sum / n as f64
    );
    Ok(())
}
