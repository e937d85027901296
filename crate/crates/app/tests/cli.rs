use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dirpat_core::config::ExperimentConfig;
use dirpat_core::nn::load_checkpoint;
use dirpat_core::stft::StftConfig;
use dirpat_core::wav::read_wav;
use serde_json::{json, Value};

fn dirpat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirpat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = dirpat(args, cwd);
    assert!(
        out.status.success(),
        "dirpat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.stft = StftConfig::with_window(16_000, 128);
    cfg.sampler.duration_s = 0.1;
    cfg.splits.train = 1;
    cfg.splits.val = 1;
    cfg.splits.test = 2;
    cfg.recipe.patterns_per_setup = 2;
    cfg.model.input_width = 4;
    cfg.model.bilstm_hidden = 4;
    cfg.model.unilstm_hidden = 4;
    cfg.train.batch_size = 2;
    cfg.train.epochs = 2;
    cfg.seed = 3;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn recipe_a_exports_sixty_patterns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["patterns", "--recipe", "a", "--export", "csv", "--out", "a"], dir.path());
    let mut files: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 60);
    let text = fs::read_to_string(&files[0]).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "angle_deg,gain_linear,gain_db");
    assert_eq!(lines.len(), 73);

    ok(&["patterns", "--recipe", "b+", "--export", "json", "--count", "5", "--seed", "9", "--out", "bp"], dir.path());
    let p = read_json(&dir.path().join("bp/pattern_004.json"));
    assert!(p["components"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn usage_errors_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!dirpat(&["patterns"], dir.path()).status.success());
    assert!(!dirpat(&["patterns", "--recipe", "z"], dir.path()).status.success());
    assert!(!dirpat(&["frobnicate"], dir.path()).status.success());
    let out = dirpat(&["eval", "--method", "neural"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    ok(&["simulate", "--config", cfg, "--scenes", "2", "--out", "s1"], dir.path());
    ok(&["simulate", "--config", cfg, "--scenes", "2", "--out", "s2"], dir.path());
    for f in ["scene_000/mics.wav", "scene_001/scene.json", "scene_001/source_1.wav"] {
        assert_eq!(fs::read(dir.path().join("s1").join(f)).unwrap(), fs::read(dir.path().join("s2").join(f)).unwrap());
    }
    let mics = read_wav(dir.path().join("s1/scene_000/mics.wav")).unwrap();
    assert_eq!(mics.channels.len(), 4);
    assert_eq!(mics.len(), 1600);
    let scene = read_json(&dir.path().join("s1/scene_000/scene.json"));
    assert_eq!(scene["sources"].as_array().unwrap().len(), 2);

    // the written description re-renders to the same audio
    ok(
        &["simulate", "--config", cfg, "--scene", "s1/scene_000/scene.json", "--out", "again"],
        dir.path(),
    );
    assert_eq!(
        fs::read(dir.path().join("again/mics.wav")).unwrap(),
        fs::read(dir.path().join("s1/scene_000/mics.wav")).unwrap()
    );
}

#[test]
fn oracle_eval_reports_per_direction_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cardioid = json!({"components": [{"kind": "dma_simplified", "mu": 0.5, "theta_s": 0.0, "order_j": 1}]});
    fs::write(dir.path().join("cardioid.json"), cardioid.to_string()).unwrap();
    ok(
        &[
            "eval", "--method", "parametric-oracle", "--config", cfg.to_str().unwrap(), "--pattern", "cardioid.json",
            "--out", "ev",
        ],
        dir.path(),
    );
    let m = read_json(&dir.path().join("ev/metrics.json"));
    assert_eq!(m["method"], "parametric-oracle");
    assert_eq!(m["samples"].as_array().unwrap().len(), 2);
    let dirs = m["wideband"]["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 4);
    for d in dirs {
        assert!(d["ratio"].as_f64().unwrap() > 0.0);
    }
    let csv = fs::read_to_string(dir.path().join("ev/sdr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("ev/pattern_wideband.csv").exists());
    assert!(dir.path().join("ev/pattern_narrowband.csv").exists());
}

#[test]
fn filter_follows_equal_periods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let scene = json!({
        "sources": [
            {"doa_deg": 0.0, "synthetic": {"kind": "speech-shaped-noise", "seed": 1}},
            {"doa_deg": 180.0, "synthetic": {"kind": "harmonic", "seed": 2}}
        ],
        "duration_s": 0.3
    });
    fs::write(dir.path().join("scene.json"), scene.to_string()).unwrap();
    let dma = |t: f64| json!({"components": [{"kind": "dma_simplified", "mu": 0.5, "theta_s": t, "order_j": 1}]});
    let timeline = json!({"equal_periods": [dma(0.0), dma(std::f64::consts::PI), {"components": [{"kind": "dma_simplified", "mu": 1.0, "theta_s": 0.0, "order_j": 1}]}]});
    fs::write(dir.path().join("timeline.json"), timeline.to_string()).unwrap();
    let stdout = ok(
        &["filter", "--config", cfg, "--scene", "scene.json", "--timeline", "timeline.json", "--out", "out/f.wav"],
        dir.path(),
    );
    // 4800 samples at hop 64 give 76 frames
    assert!(stdout.contains("segment 1: frame 25"), "{stdout}");
    assert!(stdout.contains("segment 2: frame 50"), "{stdout}");
    let out = read_wav(dir.path().join("out/f.wav")).unwrap();
    assert_eq!(out.len(), 4800);

    // explicit segments must fit the recording
    let late = json!({"segments": [{"start_frame": 0, "gains": vec![1.0; 72]}, {"start_frame": 500, "gains": vec![1.0; 72]}]});
    fs::write(dir.path().join("late.json"), late.to_string()).unwrap();
    let res = dirpat(&["filter", "--config", cfg, "--scene", "scene.json", "--timeline", "late.json"], dir.path());
    assert!(!res.status.success());
}

#[test]
fn train_then_neural_eval_and_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(dir.path());
    let cfg = cfg_path.to_str().unwrap();
    ok(&["train", "--config", cfg, "--out", "run"], dir.path());
    let run = dir.path().join("run");
    let ckpt = load_checkpoint(run.join("model.ckpt")).unwrap();
    let loaded = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(ckpt.arch, loaded.arch_config());
    assert!(ckpt.metadata["val_loss"].as_f64().is_some());
    let epochs = fs::read_to_string(run.join("loss_epochs.csv")).unwrap();
    assert_eq!(epochs.lines().next(), Some("epoch,mean_loss"));
    assert_eq!(epochs.lines().count(), 3);

    // fixed seeds give byte-identical artifacts
    ok(&["train", "--config", cfg, "--out", "run2"], dir.path());
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), fs::read(dir.path().join("run2/model.ckpt")).unwrap());

    ok(
        &["eval", "--method", "neural", "--config", cfg, "--checkpoint", "run/model.ckpt", "--out", "nev"],
        dir.path(),
    );
    let m = read_json(&dir.path().join("nev/metrics.json"));
    assert_eq!(m["method"], "neural");
    assert_eq!(m["samples"].as_array().unwrap().len(), 4);

    ok(&["simulate", "--config", cfg, "--out", "sc"], dir.path());
    let timeline = json!({"segments": [{"start_frame": 0, "gains": vec![1.0; 72]}, {"start_frame": 10, "gains": vec![0.5; 72]}]});
    fs::write(dir.path().join("tl.json"), timeline.to_string()).unwrap();
    ok(
        &[
            "filter", "--config", cfg, "--wav", "sc/scene_000/mics.wav", "--timeline", "tl.json", "--method", "neural",
            "--checkpoint", "run/model.ckpt", "--out", "nf.wav",
        ],
        dir.path(),
    );
    assert_eq!(read_wav(dir.path().join("nf.wav")).unwrap().len(), 1600);

    // recordings carry no components, so the oracle cannot run on them
    let res = dirpat(&["filter", "--config", cfg, "--wav", "sc/scene_000/mics.wav", "--timeline", "tl.json"], dir.path());
    assert!(!res.status.success());
}
