mod common;

use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use common::*;
use fegan_cli::cli::{Cli, EXIT_DIMENSION_MISMATCH, EXIT_MISSING_FILE};
use fegan_core::data::{io, BinaryMask, MaskKind, DEFAULT_NUM_CLASSES};
use fegan_core::metrics::{masked_psnr, psnr, MetricsReport};
use fegan_core::training::{evaluate, Checkpoint, Stage, TrainConfig};

fn fegan(args: &[&str], ckpt_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fegan")).args(args).env("FEGAN_CHECKPOINT_DIR", ckpt_dir).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_layers(dir: &Path, l: &Layers) {
    std::fs::write(dir.join("image.png"), &l.image_png).unwrap();
    std::fs::write(dir.join("mask.png"), &l.mask_png).unwrap();
    std::fs::write(dir.join("sketch.png"), &l.sketch_png).unwrap();
    std::fs::write(dir.join("strokes.png"), &l.strokes_png).unwrap();
    std::fs::write(dir.join("parsing.png"), &l.parsing_png).unwrap();
}

fn edit_args<'a>(dir: &'a Path, out: &'a str) -> Vec<String> {
    let p = |n: &str| dir.join(n).to_str().unwrap().to_string();
    vec![
        "edit".into(),
        "--image".into(),
        p("image.png"),
        "--mask".into(),
        p("mask.png"),
        "--sketch".into(),
        p("sketch.png"),
        "--strokes".into(),
        p("strokes.png"),
        "--out".into(),
        p(out),
    ]
}

fn run_edit(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = edit_args(dir, out);
    args.extend(extra.iter().map(|a| a.to_string()));
    fegan(&args.iter().map(String::as_str).collect::<Vec<_>>(), checkpoint_dir())
}

#[test]
fn help_exits_zero() {
    Cli::command().debug_assert();
    let out = fegan(&["--help"], Path::new("."));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["preprocess", "train-parser", "train-inpainter", "eval", "edit", "serve"] {
        assert!(text.contains(sub), "{sub} missing from help");
        assert_eq!(fegan(&[sub, "--help"], Path::new(".")).status.code(), Some(0));
    }
}

#[test]
fn invalid_config_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = tiny(Stage::Parser).to_toml().unwrap();
    text.push_str("\nbogus_key = 3\n");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = fegan(&["train-parser", "--config", s(&path)], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("configuration error") && err.contains("bogus_key"), "{err}");
}

#[test]
fn stage_mismatch_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("parser.toml");
    std::fs::write(&path, tiny(Stage::Parser).to_toml().unwrap()).unwrap();
    let out = fegan(&["train-inpainter", "--config", s(&path)], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected inpainter"));
}

#[test]
fn train_then_eval_produces_a_metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    let ckpts = dir.path().join("ckpt");
    let data = dir.path().join("data");
    let out = fegan(&["synth", "--out", s(&data), "--count", "2", "--height", "32", "--width", "32", "--seed", "11"], &ckpts);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.jsonl");

    let mut parser = tiny(Stage::Parser);
    parser.data.source = fegan_core::training::DataSource::Manifest { path: "data/manifest.jsonl".into() };
    std::fs::write(dir.path().join("parser.toml"), parser.to_toml().unwrap()).unwrap();
    let mut inpainter = tiny(Stage::Inpainter);
    inpainter.data.source = parser.data.source.clone();
    std::fs::write(dir.path().join("inpainter.toml"), inpainter.to_toml().unwrap()).unwrap();

    let out = fegan(&["train-parser", "--config", s(&dir.path().join("parser.toml"))], &ckpts);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpts.join("parser.fegan").exists());
    let out = fegan(&["train-inpainter", "--config", s(&dir.path().join("inpainter.toml")), "--max-steps", "3"], &ckpts);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = Checkpoint::load(&ckpts.join("inpainter.fegan")).unwrap();
    assert_eq!(ckpt.step, 3);

    let report_path = dir.path().join("report.json");
    let out = fegan(&["eval", "--manifest", s(&manifest), "--seed", "4", "--out", s(&report_path)], &ckpts);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_stdout: MetricsReport = serde_json::from_slice(&out.stdout).unwrap();
    let from_file: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(from_stdout, from_file);
    assert_eq!(from_file.images.len(), 2);
    assert_eq!(from_file, evaluate(&ckpt, &manifest, 4).unwrap());
    let mean = from_file.images.iter().map(|m| m.psnr).sum::<f64>() / 2.0;
    assert!((from_file.mean_psnr - mean).abs() < 1e-12);
    assert!(from_file.images.iter().all(|m| m.psnr.is_finite() && m.masked_psnr.is_finite()));
}

#[test]
fn edit_zero_mask_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let l = layers(40, 24, &BinaryMask::zeros(40, 24, MaskKind::Edit), 2);
    write_layers(dir.path(), &l);
    let out = run_edit(dir.path(), "out.png", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read(dir.path().join("out.png")).unwrap();
    assert!(max_u8_diff(&written, &l.image_png) <= 1);
    let back = io::decode_image(&written).unwrap();
    assert!(psnr(&back, &l.image).unwrap() > 48.0);
}

#[test]
fn edit_is_deterministic_and_writes_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (32, 32);
    let mask = rect_mask(h, w, 8, 8, 24, 24);
    let l = layers(h, w, &mask, 3);
    write_layers(dir.path(), &l);
    let parsing = dir.path().join("parsing.png");
    for (out, p) in [("a.png", "pa.png"), ("b.png", "pb.png")] {
        let o = run_edit(dir.path(), out, &["--seed", "12", "--parsing", s(&parsing), "--parsing-out", s(&dir.path().join(p))]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.png"), read("b.png"));
    assert_eq!(read("pa.png"), read("pb.png"));
    let edited = io::decode_image(&read("a.png")).unwrap();
    let outside = BinaryMask::new(h, w, MaskKind::Edit, mask.values().iter().map(|&m| 1 - m).collect()).unwrap();
    assert!(masked_psnr(&edited, &l.image, &outside).unwrap() > 48.0);
    let completed = io::decode_parsing(&read("pa.png"), DEFAULT_NUM_CLASSES).unwrap();
    assert_eq!(completed.dims(), (h, w));
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let l = layers(32, 32, &BinaryMask::zeros(32, 32, MaskKind::Edit), 2);
    write_layers(dir.path(), &l);
    std::fs::remove_file(dir.path().join("sketch.png")).unwrap();
    let out = run_edit(dir.path(), "out.png", &[]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_FILE));
    assert!(!dir.path().join("out.png").exists());

    write_layers(dir.path(), &l);
    let out = run_edit(dir.path(), "out.png", &["--checkpoint", s(&dir.path().join("nowhere.fegan"))]);
    assert_eq!(out.status.code(), Some(EXIT_MISSING_FILE));
}

#[test]
fn dimension_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let l = layers(32, 32, &BinaryMask::zeros(32, 32, MaskKind::Edit), 2);
    write_layers(dir.path(), &l);
    io::save_mask(&BinaryMask::zeros(32, 30, MaskKind::Edit), &dir.path().join("mask.png")).unwrap();
    let out = run_edit(dir.path(), "out.png", &[]);
    assert_eq!(out.status.code(), Some(EXIT_DIMENSION_MISMATCH), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out.png").exists());
}

#[test]
fn preprocess_resizes_to_the_model_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("raw");
    let manifest = fegan_core::data::synthetic::write_dataset(&data, 2, 40, 24, 3).unwrap();
    let out_dir = dir.path().join("prep");
    let out = fegan(&["preprocess", "--manifest", s(&manifest), "--out", s(&out_dir), "--height", "32", "--width", "16"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let items = io::load_dataset(&out_dir.join("manifest.jsonl"), DEFAULT_NUM_CLASSES).unwrap();
    assert_eq!(items.len(), 2);
    assert!(items.iter().all(|(i, p)| i.dims() == (32, 16) && p.dims() == (32, 16)));
    let sketch = io::load_mask(&out_dir.join("sketch_00000.png"), MaskKind::Sketch).unwrap();
    assert_eq!(sketch.dims(), (32, 16));
    assert!(out_dir.join("colors_00001.png").exists());
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.toml");
    let out = fegan(&["init-config", "--stage", "inpainter", "--toy", "--out", s(&path)], dir.path());
    assert!(out.status.success());
    assert_eq!(TrainConfig::load(&path).unwrap(), TrainConfig::toy(Stage::Inpainter));
}
