use std::path::Path;
use std::process::{Command, Output};

use biasforge_core::dataset::{synthetic_dataset, SyntheticDatasetSpec};
use biasforge_core::image::{save_image, Image, RangeTag};

const COMMANDS: [&str; 8] = [
    "analyze",
    "train-skin",
    "train-ergan",
    "train-enhance",
    "generate",
    "enhance",
    "evaluate",
    "assemble",
];

fn biasforge(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasforge"))
        .args(args)
        .current_dir(root)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 24 synthetic 16x16 faces under `data/`, plus `config.txt` with `extra` appended.
fn fixture(root: &Path, extra: &str) {
    let (m, images) = synthetic_dataset(&SyntheticDatasetSpec {
        count: 24,
        height: 16,
        width: 16,
        glasses_rate: 0.1,
        dark_rate: 0.5,
        noise_sigma: 0.02,
        seed: 3,
    })
    .unwrap();
    std::fs::create_dir_all(root.join("data/images")).unwrap();
    for (r, img) in m.records.iter().zip(&images) {
        save_image(img, root.join("data/images").join(&r.image_id)).unwrap();
    }
    std::fs::write(root.join("data/list_attr.txt"), m.to_text()).unwrap();
    let config = format!(
        "seed = 2\ndata.manifest = data/list_attr.txt\ndata.images = data/images\nskin.image_size = 16\nskin.batch_size = 4\n{extra}"
    );
    std::fs::write(root.join("config.txt"), config).unwrap();
}

#[test]
fn help_for_every_command_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(biasforge(dir.path(), &["--help"]).status.code(), Some(0));
    for cmd in COMMANDS {
        let o = biasforge(dir.path(), &[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd} --help");
        assert!(stdout(&o).contains("--config"), "{cmd} help lists flags");
    }
}

#[test]
fn unknown_flags_and_missing_config_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in COMMANDS {
        assert_eq!(biasforge(dir.path(), &[cmd, "--bogus"]).status.code(), Some(1), "{cmd}");
    }
    let o = biasforge(dir.path(), &["train-skin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
    assert_eq!(biasforge(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn empty_manifest_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "");
    std::fs::write(root.join("data/list_attr.txt"), "").unwrap();
    let o = biasforge(root, &["analyze", "--config", "config.txt"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("list_attr.txt"), "{}", stderr(&o));
}

#[test]
fn analyze_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "");
    let first = biasforge(root, &["analyze", "--config", "config.txt", "--out", "a"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = biasforge(root, &["analyze", "--config", "config.txt", "--out", "b"]);
    assert!(second.status.success());
    for f in ["bias_report.txt", "bias_report.csv"] {
        let a = std::fs::read(root.join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(root.join("b").join(f)).unwrap(), "{f}");
    }
    assert!(root.join("a/run_analyze.txt").exists());
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "skin.lamda_gp = 10\nfrobnicate = 1\n");
    let o = biasforge(root, &["analyze", "--config", "config.txt"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("skin.lamda_gp") && err.contains("frobnicate"), "{err}");
}

#[test]
fn checkpoint_hash_mismatch_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "skin.steps = 2\nskin.checkpoint_every = 2\n");
    let o = biasforge(root, &["train-skin", "--config", "config.txt", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = "run/checkpoints/skin_000002.manifest";
    assert!(root.join(ck).exists());

    let changed = std::fs::read_to_string(root.join("config.txt")).unwrap() + "skin.lambda_gp = 5\n";
    std::fs::write(root.join("changed.txt"), changed).unwrap();
    let args = ["generate", "--config", "changed.txt", "--checkpoint", ck, "--input", "data/images", "--out", "gen"];
    let o = biasforge(root, &args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("hash"));

    let mut forced = args.to_vec();
    forced.push("--override-hash");
    let o = biasforge(root, &forced);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(root.join("gen/pairs.csv").exists());

    let o = biasforge(root, &["generate", "--config", "config.txt", "--checkpoint", ck, "--out", "gen2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "skin.steps = 10\nskin.checkpoint_every = 5\n");
    let o = biasforge(root, &["train-skin", "--config", "config.txt", "--out", "straight"]);
    assert!(o.status.success(), "{}", stderr(&o));

    std::fs::write(
        root.join("half.txt"),
        std::fs::read_to_string(root.join("config.txt")).unwrap().replace("skin.steps = 10", "skin.steps = 5"),
    )
    .unwrap();
    // The step count is part of the config hash, so the resume needs the override.
    let o = biasforge(root, &["train-skin", "--config", "half.txt", "--out", "first"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = biasforge(
        root,
        &[
            "train-skin",
            "--config",
            "config.txt",
            "--out",
            "resumed",
            "--checkpoint",
            "first/checkpoints/skin_000005.manifest",
            "--override-hash",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!root.join("resumed/checkpoints/skin_000005.ckpt").exists());
    let a = std::fs::read(root.join("straight/checkpoints/skin_000010.ckpt")).unwrap();
    let b = std::fs::read(root.join("resumed/checkpoints/skin_000010.ckpt")).unwrap();
    assert!(a == b, "resumed parameters and optimiser state differ from the straight run");
}

fn write_constant(path: &Path, v: f64) {
    save_image(&Image::filled(16, 16, &[v; 3], RangeTag::Unit).unwrap(), path).unwrap();
}

#[test]
fn evaluate_reports_known_values() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_constant(&root.join("half.png"), 128.0 / 255.0);
    write_constant(&root.join("quarter.png"), 64.0 / 255.0);
    std::fs::write(root.join("same.csv"), "generated,reference,category\nhalf.png,half.png,skin\n").unwrap();
    let o = biasforge(root, &["evaluate", "--pairs", "same.csv", "--out", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("skin.ssim.mean=1\n"), "{out}");
    let csv = std::fs::read_to_string(root.join("a/metrics.csv")).unwrap();
    assert!(csv.starts_with("category,metric,"), "{csv}");

    std::fs::write(root.join("pair.csv"), "generated,reference,category\nhalf.png,quarter.png,eyeglasses\n").unwrap();
    let o = biasforge(root, &["evaluate", "--pairs", "pair.csv", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("eyeglasses.psnr.mean=")).unwrap().to_string();
    let v: f64 = line.split('=').nth(1).unwrap().parse().unwrap();
    // 128/255 vs 64/255 is a gap of 64/255, not exactly 1/4.
    let expect = 10.0 * (1.0 / (64.0f64 / 255.0).powi(2)).log10();
    assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");

    std::fs::write(
        root.join("missing.csv"),
        "generated,reference,category\nhalf.png,half.png,skin\nnope.png,half.png,skin\n",
    )
    .unwrap();
    let o = biasforge(root, &["evaluate", "--pairs", "missing.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv line 3"), "{}", stderr(&o));

    let o = biasforge(root, &["evaluate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn assemble_reaches_target_rate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut manifest = String::from("10\nEyeglasses Male\n");
    for i in 0..10 {
        manifest.push_str(&format!("{i:02}.png {} 1\n", if i == 0 { 1 } else { -1 }));
    }
    std::fs::write(root.join("list.txt"), manifest).unwrap();
    std::fs::write(root.join("config.txt"), "data.manifest = list.txt\n").unwrap();
    std::fs::write(root.join("report.txt"), "flagged_attributes = Eyeglasses:0.100000\n").unwrap();
    std::fs::create_dir_all(root.join("syn/Eyeglasses")).unwrap();
    for i in 0..12 {
        write_constant(&root.join(format!("syn/Eyeglasses/s{i:02}.png")), 0.5);
    }
    let o = biasforge(
        root,
        &["assemble", "--config", "config.txt", "--report", "report.txt", "--synthetic", "syn", "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rate.Eyeglasses=0.5"), "{}", stdout(&o));
    let balanced = std::fs::read_to_string(root.join("out/balanced_attributes.txt")).unwrap();
    let lines: Vec<&str> = balanced.lines().collect();
    assert_eq!(lines[0], "18");
    assert_eq!(lines.len(), 20);
    assert!(lines[12..].iter().all(|l| l.ends_with(" 1 -1") && l.contains("Eyeglasses")));
    let report = std::fs::read_to_string(root.join("out/assembly_report.txt")).unwrap();
    assert!(report.contains("Eyeglasses.added = 8"), "{report}");
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fixture(root, "skin.steps = 50\nskin.checkpoint_every = 50\nskin.lr_critic = 1e200\nskin.lr_generator = 1e200\n");
    let o = biasforge(root, &["train-skin", "--config", "config.txt", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("non-finite") || stderr(&o).contains("NaN"), "{}", stderr(&o));
    let record = std::fs::read_to_string(root.join("run/run_train-skin.txt")).unwrap();
    assert!(record.contains("error"));
}
