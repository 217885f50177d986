use std::path::Path;
use std::process::{Command, Output};

fn mefem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mefem"))
        .args(args)
        .env_remove("MEFEM_SEED")
        .output()
        .expect("spawn mefem")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn coverage_writes_square_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov.csv");
    let o = mefem(&["coverage", "--strategy", "multiblock", "--samples", "50000", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 14);
    for r in rows {
        let vals: Vec<f64> = r.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 14);
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(stdout(&o).contains("seed=0"));
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = mefem(&["train", "--config", "missing.cfg", "--out", "/tmp/unused-mefem"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"));
}

#[test]
fn probe_pairing_rule_is_enforced() {
    let o = mefem(&["probe", "--features", "cls", "--head", "attentive_pooler"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}

#[test]
fn unknown_flags_and_values_exit_one() {
    assert_eq!(mefem(&["coverage", "--bogus"]).status.code(), Some(1));
    assert_eq!(mefem(&["nonsense"]).status.code(), Some(1));
    let o = mefem(&["weights-viz", "--scheme", "square", "--out", "/tmp/unused.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = mefem(&["coverage", "--strategy", "spiral", "--out", "/tmp/unused.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for cmd in ["preprocess", "synth", "train", "probe", "mask-viz", "weights-viz", "coverage"] {
        let o = mefem(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("--seed"), "{cmd}");
    }
}

#[test]
fn seed_env_fallback_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    let o = mefem(&["--seed", "5", "coverage", "--samples", "500", "--out", p(&a)]);
    assert!(stdout(&o).contains("seed=5"));
    let o = Command::new(env!("CARGO_BIN_EXE_mefem"))
        .args(["coverage", "--samples", "500", "--out", p(&b)])
        .env("MEFEM_SEED", "5")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("seed=5"));
    mefem(&["coverage", "--samples", "500", "--strategy", "multiblock", "--seed", "6", "--out", p(&c)]);
    let read = |x: &Path| std::fs::read_to_string(x).unwrap();
    assert_eq!(read(&a), read(&b));
    let o = Command::new(env!("CARGO_BIN_EXE_mefem"))
        .args(["coverage", "--out", p(&c)])
        .env("MEFEM_SEED", "five")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn weights_viz_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.pgm");
    let o = mefem(&["weights-viz", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P5\n14 14\n255\n"));
    assert_eq!(bytes.len(), b"P5\n14 14\n255\n".len() + 196);
}

#[test]
fn mask_viz_prints_stripes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mefem(&["mask-viz", "--count", "2", "--set", "stripe_width=3", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("42 source"));
    assert!(dir.path().join("mask_001.pgm").exists());
}

#[test]
fn preprocess_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_pixel(1000, 1000, image::Rgb([120, 90, 60]));
    img.save(dir.path().join("frame.png")).unwrap();
    let manifest = dir.path().join("boxes.csv");
    std::fs::write(
        &manifest,
        "path,x,y,w,h\nframe.png,400,400,100,120\nframe.png,0,0,150,150\nframe.png,500,500,50,60\n",
    )
    .unwrap();
    let out = dir.path().join("crops");
    let o = mefem(&["preprocess", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("total: 3"));
    assert!(summary.contains("accepted: 1"));
    assert!(summary.contains("rejected_boundary: 1"));
    assert!(summary.contains("rejected_resolution: 1"));
    let crop = image::open(out.join("crop_000000.png")).unwrap();
    assert_eq!((crop.width(), crop.height()), (224, 224));
}

#[test]
fn synth_train_resume_probe() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = mefem(&["--seed", "3", "synth", "--count", "24", "--image-size", "32", "--patch-size", "8", "--out", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(data.join("attributes.csv").exists());

    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "model = micro\nimage_size = 32\npatch_size = 8\nstripe_width = 2\nbatch_size = 8\nepochs = 3\nstats_samples = 4\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = mefem(&["--seed", "9", "train", "--config", p(&cfg), "--data", p(&data), "--epochs", "2", "--out", p(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("seed=9"));
    assert!(text.contains("epochs = 2"), "flag overrides file");
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6);

    let resumed = dir.path().join("resumed");
    let o = mefem(&[
        "train",
        "--resume",
        p(&run.join("epoch-0001.mefe")),
        "--data",
        p(&data),
        "--out",
        p(&resumed),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tail: Vec<String> = metrics.lines().skip(4).map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect();
    let again: Vec<String> = std::fs::read_to_string(resumed.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect();
    assert_eq!(tail, again);

    let results = dir.path().join("results.csv");
    let latest = run.join("latest.mefe");
    for extra in [&[][..], &["--random-init"][..]] {
        let mut args = vec![
            "probe",
            "--features",
            "patches",
            "--checkpoint",
            p(&latest),
            "--data",
            p(&data),
            "--epochs",
            "3",
            "--out",
            p(&results),
        ];
        args.extend_from_slice(extra);
        let o = mefem(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("r_squared"));
    }
    let rows = std::fs::read_to_string(&results).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let o = mefem(&["probe", "--features", "cls", "--checkpoint", p(&run.join("latest.mefe")), "--data", p(&data), "--attribute", "nose"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mefe");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = mefem(&["probe", "--features", "cls", "--checkpoint", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}
