use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csiam_core::frontend::{load_wav, read_features, save_wav, Waveform};
use csiam_core::Features;

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn csiam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csiam"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&csiam(
            d,
            &["gen-data", "--out", "a", "--num", "10", "--seed", "3"]
        )),
        0
    );
    let csft = fs::read_dir(d.join("a"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csft")
        })
        .count();
    assert_eq!(csft, 10);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["utterances"].as_array().unwrap().len(), 10);
    let first = &manifest["utterances"][0];
    let x: Features = read_features(
        fs::File::open(d.join("a").join(first["features"].as_str().unwrap())).unwrap(),
    )
    .unwrap();
    assert_eq!(x.len() as u64, first["frames"].as_u64().unwrap());

    assert_eq!(
        code(&csiam(
            d,
            &["gen-data", "--out", "b", "--num", "10", "--seed", "3"]
        )),
        0
    );
    for name in [
        "manifest.json",
        "utt_00000.csft",
        "utt_00009.csft",
        "utt_00004.labels.json",
    ] {
        assert_eq!(
            fs::read(d.join("a").join(name)).unwrap(),
            fs::read(d.join("b").join(name)).unwrap()
        );
    }
}

#[test]
fn gen_data_with_zero_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let o = csiam(dir.path(), &["gen-data", "--out", "empty", "--num", "0"]);
    assert_eq!(code(&o), 0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("empty/manifest.json")).unwrap()).unwrap();
    assert!(manifest["utterances"].as_array().unwrap().is_empty());
}

#[test]
fn train_single_step_writes_one_metrics_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let o = csiam(
        dir.path(),
        &["train", "--config", cfg.to_str().unwrap(), "--steps", "1"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let r: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(r["step"], 1);
    assert!(r["total_loss"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("checkpoints/step_000001.csck").exists());
}

#[test]
fn train_resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["train", "--config", cfg];
        args.extend_from_slice(extra);
        assert_eq!(code(&csiam(d, &args)), 0);
    };
    run(&[
        "--steps",
        "6",
        "--metrics-path",
        "full.jsonl",
        "--ckpt-dir",
        "full",
    ]);
    run(&[
        "--steps",
        "3",
        "--metrics-path",
        "split.jsonl",
        "--ckpt-dir",
        "split",
        "--ckpt-every",
        "1",
    ]);
    run(&[
        "--steps",
        "6",
        "--metrics-path",
        "split.jsonl",
        "--ckpt-dir",
        "split",
        "--resume",
        "split/step_000003.csck",
    ]);
    assert_eq!(
        fs::read(d.join("full.jsonl")).unwrap(),
        fs::read(d.join("split.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("full/step_000006.csck")).unwrap(),
        fs::read(d.join("split/step_000006.csck")).unwrap()
    );
    assert!(d.join("split/step_000002.csck").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = csiam(d, &["train", "--config", "missing.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
    fs::write(d.join("bad.toml"), "[train]\npeak_rate = 1.0\n").unwrap();
    assert_eq!(code(&csiam(d, &["train", "--config", "bad.toml"])), 2);
}

#[test]
fn resume_with_a_different_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config();
    assert_eq!(
        code(&csiam(
            d,
            &["train", "--config", cfg.to_str().unwrap(), "--steps", "1"]
        )),
        0
    );
    let other = fs::read_to_string(&cfg)
        .unwrap()
        .replace("d_joint = 32", "d_joint = 16");
    fs::write(d.join("other.toml"), other).unwrap();
    let o = csiam(
        d,
        &[
            "train",
            "--config",
            "other.toml",
            "--steps",
            "2",
            "--resume",
            "checkpoints/step_000001.csck",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn grad_check_passes_and_detects_a_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let o = csiam(dir.path(), &["grad-check"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for c in ["joint", "contrastive", "rnnt", "composite"] {
        assert!(
            out.lines().any(|l| l.starts_with(c) && l.ends_with("PASS")),
            "{out}"
        );
    }
    let o = csiam(dir.path(), &["grad-check", "--component", "rnnt"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("rnnt"));
    assert_eq!(
        code(&csiam(dir.path(), &["grad-check", "--inject-sign-flip"])),
        1
    );
    assert_eq!(
        code(&csiam(dir.path(), &["grad-check", "--component", "lstm"])),
        2
    );
}

fn one_utterance(d: &Path) -> PathBuf {
    assert_eq!(
        code(&csiam(d, &["gen-data", "--out", "data", "--num", "1"])),
        0
    );
    d.join("data/utt_00000.csft")
}

#[test]
fn augment_identity_copies_features() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = one_utterance(d);
    let o = csiam(
        d,
        &[
            "augment",
            "--input",
            input.to_str().unwrap(),
            "--output",
            "same.csft",
            "--identity",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(&input).unwrap(),
        fs::read(d.join("same.csft")).unwrap()
    );
}

#[test]
fn augment_warp_alignment_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = one_utterance(d);
    let o = csiam(
        d,
        &[
            "augment",
            "--input",
            input.to_str().unwrap(),
            "--output",
            "w.csft",
            "--warp-seed",
            "3",
            "--emit-alignment",
            "align.csv",
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(d.join("align.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t_ds,target_t_ds"));
    let rows: Vec<(usize, usize)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().enumerate().all(|(i, r)| r.0 == i));
    assert!(rows.windows(2).all(|p| p[1].1 >= p[0].1));
}

#[test]
fn augment_tempo_on_wav_shortens_duration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sr = 16_000;
    let samples = (0..sr).map(|i| (i as f32 * 0.172).sin() * 0.3).collect();
    save_wav(
        d.join("in.wav"),
        &Waveform::new(samples, sr as u32).unwrap(),
    )
    .unwrap();
    let o = csiam(
        d,
        &[
            "augment",
            "--input",
            "in.wav",
            "--output",
            "out.wav",
            "--alpha",
            "1.25",
            "--emit-alignment",
            "a.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = load_wav(d.join("out.wav")).unwrap();
    assert!(
        (out.duration_s() / 1.0 - 0.8).abs() < 0.01,
        "{}",
        out.duration_s()
    );
    assert!(fs::read_to_string(d.join("a.csv")).unwrap().lines().count() > 1);
}

#[test]
fn augment_flag_conflicts_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = one_utterance(d);
    let input = input.to_str().unwrap();
    assert_eq!(
        code(&csiam(
            d,
            &[
                "augment",
                "--input",
                input,
                "--output",
                "o.csft",
                "--warp-seed",
                "1",
                "--alpha",
                "1.1"
            ]
        )),
        2
    );
    assert_eq!(
        code(&csiam(
            d,
            &[
                "augment",
                "--input",
                input,
                "--output",
                "o.csft",
                "--identity",
                "--mask-seed",
                "1"
            ]
        )),
        2
    );
    save_wav(
        d.join("in.wav"),
        &Waveform::new(vec![0.0; 800], 16_000).unwrap(),
    )
    .unwrap();
    assert_eq!(
        code(&csiam(
            d,
            &[
                "augment",
                "--input",
                "in.wav",
                "--output",
                "o.wav",
                "--warp-seed",
                "1"
            ]
        )),
        2
    );
}

#[test]
fn augment_masking_zeroes_whole_frames() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = one_utterance(d);
    let o = csiam(
        d,
        &[
            "augment",
            "--input",
            input.to_str().unwrap(),
            "--output",
            "m.csft",
            "--mask-seed",
            "5",
            "--mask-prob",
            "0.2",
            "--mask-span",
            "4",
        ],
    );
    assert_eq!(code(&o), 0);
    let x: Features = read_features(fs::File::open(&input).unwrap()).unwrap();
    let y: Features = read_features(fs::File::open(d.join("m.csft")).unwrap()).unwrap();
    assert_eq!(x.len(), y.len());
    let masked = (0..y.len())
        .filter(|&t| y.frame(t).iter().all(|&v| v == 0.0))
        .count();
    assert!(masked > 0 && masked < y.len());
    assert!((0..y.len()).all(|t| y.frame(t).iter().all(|&v| v == 0.0) || y.frame(t) == x.frame(t)));
}

#[test]
fn probe_and_eval_run_on_a_short_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        code(&csiam(d, &["train", "--config", cfg, "--steps", "5"])),
        0
    );
    assert_eq!(
        code(&csiam(
            d,
            &[
                "gen-data",
                "--config",
                cfg,
                "--out",
                "probe",
                "--num",
                "12",
                "--noise-std",
                "0"
            ]
        )),
        0
    );
    let o = csiam(
        d,
        &[
            "probe",
            "--ckpt",
            "checkpoints/step_000005.csck",
            "--data",
            "probe",
            "--out",
            "curve.csv",
            "--steps",
            "50",
            "--hidden-dim",
            "16",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(d.join("curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "layer,train_acc,val_acc");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));

    let o = csiam(
        d,
        &[
            "eval",
            "--ckpt",
            "checkpoints/step_000005.csck",
            "--config",
            cfg,
            "--utterances",
            "4",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["utterances"], 4);
    for k in [
        "retrieval_clean",
        "retrieval_noise",
        "retrieval_chance",
        "symbol_error_rate",
    ] {
        assert!(report[k].as_f64().unwrap() >= 0.0, "{k}");
    }
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = csiam(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    for sub in [
        "gen-data",
        "train",
        "probe",
        "augment",
        "grad-check",
        "eval",
    ] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
    let o = csiam(dir.path(), &["train", "--help"]);
    for flag in [
        "--config",
        "--steps",
        "--resume",
        "--metrics-path",
        "--ckpt-every",
        "--ckpt-dir",
        "--seed",
    ] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
    let o = csiam(dir.path(), &["augment", "--help"]);
    for flag in [
        "--warp-seed",
        "--alpha",
        "--identity",
        "--mask-seed",
        "--emit-alignment",
    ] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
    assert_eq!(
        code(&csiam(
            dir.path(),
            &["train", "--config", "x.toml", "--bogus"]
        )),
        2
    );
    assert_eq!(code(&csiam(dir.path(), &["frobnicate"])), 2);
}
