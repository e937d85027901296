//! Command-line entry points.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dirpat_core::config::ExperimentConfig;
use dirpat_core::dataset::{build_examples, build_setups, derive_seed};
use dirpat_core::eval::{evaluate, EvalReport, Method};
use dirpat_core::nn::{batch_loss, load_checkpoint, save_checkpoint, train, Checkpoint, ModelParams};
use dirpat_core::pattern::{gen_recipe, gen_recipe_a, sample_pattern, AnalyticPattern, PatternSource, Recipe, RecipeConfig, DEFAULT_L};
use dirpat_core::scene::{render_mics, sample_scene, RenderedScene, SceneFile, SceneSpec, Split};
use dirpat_core::sources::{ingest_sources, SourceRegistry};
use dirpat_core::stft::Stft;
use dirpat_core::timeline::{process_timeline, Processor, Timeline, TimelineEntry};
use dirpat_core::wav::{read_wav, write_wav, Audio, SampleEncoding};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::service::{self, LoadedModel, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "dirpat", version, about = "Directional filtering with user-defined directivity patterns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate or draw training patterns and export them.
    Patterns(PatternsArgs),
    /// Render array recordings of sampled or described scenes.
    Simulate(SimulateArgs),
    /// Train a pattern-conditioned mask network.
    Train(TrainArgs),
    /// Evaluate a processor on the test split.
    Eval(EvalArgs),
    /// Process one recording with a pattern timeline.
    Filter(FilterArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct PatternsArgs {
    /// a, b-, b or b+.
    #[arg(long)]
    pub recipe: Recipe,
    #[arg(long, value_enum, default_value = "csv")]
    pub export: ExportFormat,
    /// Draws for the random recipes; recipe A always has 60.
    #[arg(long, default_value_t = 60)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_components: usize,
    #[arg(long, default_value_t = DEFAULT_L)]
    pub l: usize,
    #[arg(long, default_value = "patterns")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene description to render instead of sampling.
    #[arg(long, conflicts_with_all = ["split", "scenes"])]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Directory of WAV or synthetic-spec sources.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long, default_value = "scenes")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sources: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "parametric-oracle")]
    pub method: Method,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required for the neural method.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Pattern JSON (analytic or vector); repeat to evaluate several.
    /// Without it each setup's own recipe draws are used.
    #[arg(long)]
    pub pattern: Vec<PathBuf>,
    /// Overrides the configured number of test setups.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct FilterArgs {
    /// Scene description (simulated, with per-source components).
    #[arg(long, required_unless_present = "wav", conflicts_with = "wav")]
    pub scene: Option<PathBuf>,
    /// Multichannel recording, one channel per microphone.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub timeline: PathBuf,
    #[arg(long, default_value = "parametric-oracle")]
    pub method: Method,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "filtered.wav")]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Patterns(a) => patterns(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Filter(a) => filter(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_registry(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<Option<SourceRegistry>> {
    path.map(|p| ingest_sources(p, cfg.sampler.sample_rate).with_context(|| format!("ingesting {}", p.display())))
        .transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<LoadedModel> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let (q, f) = (cfg.array.num_mics(), cfg.stft.bins());
    ensure!(
        ckpt.arch.q == q && ckpt.arch.f == f && ckpt.arch.l == cfg.l,
        "checkpoint expects Q={}, F={}, L={} but the configuration gives Q={q}, F={f}, L={}",
        ckpt.arch.q,
        ckpt.arch.f,
        ckpt.arch.l,
        cfg.l
    );
    Ok(LoadedModel {
        params: Arc::new(ckpt.params),
        cfg: ckpt.arch,
    })
}

fn processor(method: Method, checkpoint: Option<&Path>, cfg: &ExperimentConfig) -> Result<Processor> {
    Ok(match method {
        Method::ParametricOracle => Processor::ParametricOracle,
        Method::Neural => {
            let path = checkpoint.context("the neural method needs --checkpoint")?;
            let m = load_model(path, cfg)?;
            Processor::Neural {
                params: m.params,
                cfg: m.cfg,
            }
        }
    })
}

// ---- patterns

fn patterns(a: PatternsArgs) -> Result<()> {
    let drawn: Vec<AnalyticPattern> = match a.recipe {
        Recipe::A => gen_recipe_a(),
        recipe => {
            let cfg = RecipeConfig {
                recipe,
                max_components: a.max_components,
                ..Default::default()
            };
            cfg.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            (0..a.count)
                .map(|_| gen_recipe(&cfg, &mut rng))
                .collect::<Result<_, _>>()?
        }
    };
    fs::create_dir_all(&a.out)?;
    for (i, p) in drawn.iter().enumerate() {
        match a.export {
            ExportFormat::Csv => {
                let path = a.out.join(format!("pattern_{i:03}.csv"));
                fs::write(&path, sample_pattern(p, a.l)?.to_csv())?;
            }
            ExportFormat::Json => write_json(&a.out.join(format!("pattern_{i:03}.json")), p)?,
        }
    }
    println!("wrote {} patterns to {}", drawn.len(), a.out.display());
    Ok(())
}

// ---- simulate

/// Scene description plus the realized DOAs, as written next to the audio.
#[derive(Debug, Serialize)]
struct SimulatedScene<'a> {
    #[serde(flatten)]
    scene: SceneFile,
    sample_rate: u32,
    samples: usize,
    reference_index: usize,
    mic_positions: &'a [[f64; 3]],
}

fn write_scene(dir: &Path, spec: &SceneSpec, scene: &RenderedScene, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rate = scene.sample_rate;
    let mics = Audio {
        sample_rate: rate,
        channels: scene.mic_signals.clone(),
    };
    write_wav(dir.join("mics.wav"), &mics, SampleEncoding::Float32)?;
    write_wav(dir.join("reference.wav"), &Audio::mono(rate, scene.reference().to_vec()), SampleEncoding::Float32)?;
    for (n, c) in scene.ref_components.iter().enumerate() {
        write_wav(dir.join(format!("source_{n}.wav")), &Audio::mono(rate, c.clone()), SampleEncoding::Float32)?;
    }
    write_json(
        &dir.join("scene.json"),
        &SimulatedScene {
            scene: spec.to_file(),
            sample_rate: rate,
            samples: scene.len(),
            reference_index: scene.reference_index,
            mic_positions: &cfg.array.mic_positions,
        },
    )
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if let Some(path) = &a.scene {
        let file: SceneFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let spec = file.load(cfg.sampler.sample_rate, base)?;
        let scene = render_mics(&spec, &cfg.array)?;
        write_scene(&a.out, &spec, &scene, &cfg)?;
        println!("wrote {}", a.out.display());
        return Ok(());
    }
    let registry = load_registry(a.sources.as_deref(), &cfg)?;
    // same seeding as the dataset builder, so simulated scenes match the
    // setups used by `train` and `eval`
    let seed = cfg.dataset(a.split).seed;
    for i in 0..a.scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64, 0]));
        let spec = sample_scene(a.split, &mut rng, &cfg.sampler, registry.as_ref())?;
        let scene = render_mics(&spec, &cfg.array)?;
        write_scene(&a.out.join(format!("scene_{i:03}")), &spec, &scene, &cfg)?;
    }
    println!("wrote {} scenes to {}", a.scenes, a.out.display());
    Ok(())
}

// ---- train

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_config(Some(&a.config))?;
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let registry = load_registry(a.sources.as_deref(), &cfg)?;
    let stft = Stft::new(cfg.stft)?;
    let exec = cfg.train.execution;
    let arch = cfg.arch_config();

    let train_setups = build_setups(&cfg.dataset(Split::Train), &cfg.array, registry.as_ref(), exec)?;
    let train_set = build_examples(&train_setups, cfg.l, &stft, exec)?;
    ensure!(!train_set.is_empty(), "the training split is empty");
    let mut params = ModelParams::init(&arch, cfg.model.init_seed)?;
    eprintln!(
        "training {:?} ({} parameters) on {} examples",
        arch.arch,
        params.num_parameters(),
        train_set.len()
    );
    let history = train(&mut params, &arch, &cfg.train, &stft, &train_set)?;

    let val_loss = if cfg.splits.val > 0 {
        let setups = build_setups(&cfg.dataset(Split::Val), &cfg.array, registry.as_ref(), exec)?;
        let val = build_examples(&setups, cfg.l, &stft, exec)?;
        let refs: Vec<_> = val.iter().collect();
        Some(batch_loss(&params, &arch, &stft, &refs, cfg.train.epsilon, exec)?)
    } else {
        None
    };

    fs::create_dir_all(&out)?;
    fs::write(out.join("loss_epochs.csv"), history.to_csv())?;
    fs::write(out.join("loss_steps.csv"), history.steps_csv())?;
    write_json(&out.join("config.json"), &cfg)?;
    let ckpt = Checkpoint {
        arch,
        params,
        metadata: serde_json::json!({
            "config": cfg,
            "steps": history.per_step.len(),
            "final_train_loss": history.last(),
            "val_loss": val_loss,
        }),
    };
    save_checkpoint(out.join("model.ckpt"), &ckpt)?;
    println!(
        "trained {} steps; final loss {:.4}{}; wrote {}",
        history.per_step.len(),
        history.last().unwrap_or(f64::NAN),
        val_loss.map(|v| format!(", validation loss {v:.4}")).unwrap_or_default(),
        out.display()
    );
    Ok(())
}

// ---- eval

fn write_report(dir: &Path, report: &EvalReport, target: Option<&PatternSource>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), report)?;
    fs::write(dir.join("sdr.csv"), report.sdr_csv())?;
    fs::write(dir.join("pattern_wideband.csv"), report.wideband.to_csv(target))?;
    fs::write(dir.join("pattern_narrowband.csv"), report.narrowband.to_csv())?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.scenes {
        cfg.splits.test = n;
    }
    let registry = load_registry(a.sources.as_deref(), &cfg)?;
    let stft = Stft::new(cfg.stft)?;
    let exec = cfg.train.execution;
    let proc = processor(a.method, a.checkpoint.as_deref(), &cfg)?;
    let setups = build_setups(&cfg.dataset(Split::Test), &cfg.array, registry.as_ref(), exec)?;

    if a.pattern.is_empty() {
        let report = evaluate(a.method, &setups, None, &proc, &stft, exec)?;
        write_report(&a.out, &report, None)?;
        println!("mean SDR {:.2} dB (unprocessed {:.2} dB)", report.mean_sdr_db, report.mean_sdr_unprocessed_db);
        return Ok(());
    }
    let several = a.pattern.len() > 1;
    for path in &a.pattern {
        let pattern: PatternSource = read_json(path)?;
        let report = evaluate(a.method, &setups, Some(std::slice::from_ref(&pattern)), &proc, &stft, exec)?;
        let dir = if several {
            a.out.join(path.file_stem().context("pattern path has no file name")?)
        } else {
            a.out.clone()
        };
        write_report(&dir, &report, Some(&pattern))?;
        println!(
            "{}: mean SDR {:.2} dB (unprocessed {:.2} dB)",
            path.display(),
            report.mean_sdr_db,
            report.mean_sdr_unprocessed_db
        );
    }
    Ok(())
}

// ---- filter

/// Either explicit segments or patterns spread over equal periods.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimelineFile {
    Segments { segments: Vec<TimelineEntry> },
    EqualPeriods { equal_periods: Vec<PatternSource> },
}

impl TimelineFile {
    pub fn resolve(self, l: usize, frames: usize) -> Result<Timeline> {
        let timeline = match self {
            TimelineFile::Segments { segments } => Timeline::new(segments, l)?,
            TimelineFile::EqualPeriods { equal_periods } => {
                let vectors = equal_periods
                    .iter()
                    .map(|p| p.to_vector(l))
                    .collect::<Result<Vec<_>, _>>()?;
                Timeline::equal_periods(vectors, frames)?
            }
        };
        if let Some((start, _)) = timeline.segments().iter().find(|(s, _)| *s >= frames) {
            bail!("segment starting at frame {start} lies past the last frame ({})", frames.saturating_sub(1));
        }
        Ok(timeline)
    }
}

fn filter(a: FilterArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let scene = if let Some(path) = &a.scene {
        let file: SceneFile = read_json(path)?;
        let spec = file.load(cfg.sampler.sample_rate, path.parent().unwrap_or(Path::new(".")))?;
        render_mics(&spec, &cfg.array)?
    } else {
        let path = a.wav.as_deref().context("give --scene or --wav")?;
        let audio = read_wav(path)?;
        ensure!(
            audio.sample_rate == cfg.stft.sample_rate,
            "{} is sampled at {} Hz, expected {} Hz",
            path.display(),
            audio.sample_rate,
            cfg.stft.sample_rate
        );
        ensure!(
            audio.channels.len() == cfg.array.num_mics(),
            "{} has {} channels, the array has {} microphones",
            path.display(),
            audio.channels.len(),
            cfg.array.num_mics()
        );
        RenderedScene {
            sample_rate: audio.sample_rate,
            mic_signals: audio.channels,
            ref_components: Vec::new(),
            doas: Vec::new(),
            reference_index: cfg.array.reference_index,
            noise: None,
        }
    };
    let stft = Stft::new(cfg.stft)?;
    let frames = cfg.stft.frames_for(scene.len());
    let timeline = read_json::<TimelineFile>(&a.timeline)?.resolve(cfg.l, frames)?;
    let proc = processor(a.method, a.checkpoint.as_deref(), &cfg)?;
    let out = process_timeline(&scene, &timeline, &proc, &stft)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_wav(&a.out, &Audio::mono(scene.sample_rate, out.signal), SampleEncoding::Float32)?;
    let hop = cfg.stft.hop as f64 / cfg.stft.sample_rate as f64;
    for (i, (start, _)) in timeline.segments().iter().enumerate() {
        println!("segment {i}: frame {start} ({:.3} s)", *start as f64 * hop);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---- serve

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let model = a.checkpoint.as_deref().map(|p| load_model(p, &cfg)).transpose()?;
    let svc = ServiceConfig {
        stft: cfg.stft,
        array: cfg.array.clone(),
        l: cfg.l,
        model,
    };
    tokio::runtime::Runtime::new()?.block_on(service::serve(a.addr, svc))
}
