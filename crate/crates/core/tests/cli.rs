use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vv"))
        .args(args)
        .env("VV_THREADS", "1")
        .output()
        .expect("vv runs")
}

fn ok(args: &[&str]) -> String {
    let out = vv(args);
    assert!(
        out.status.success(),
        "vv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CONFIG: &str = "mode = \"impbovw\"\nvocab_size = 32\n";

fn tiny_corpus(dir: &Path) {
    ok(&[
        "synth", "--out", p(dir), "--classes", "3", "--per-class", "8", "--identities", "4", "--seed", "3",
    ]);
    ok(&["split", "--manifest", p(&dir.join("manifest.csv")), "--seed", "1"]);
}

#[test]
fn train_eval_cv_bench_and_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    fs::write(d.join("run.toml"), CONFIG).unwrap();
    let timings = ok(&[
        "train", "--config", p(&d.join("run.toml")), "--manifest", p(&d.join("train.csv")), "--out",
        p(&d.join("bundle")),
    ]);
    assert!(timings.starts_with("phase,seconds\n"));
    for f in ["bundle.json", "config.toml", "model.bin", "model.json", "codebook.bin", "gram.bin", "gram.ids"] {
        assert!(d.join("bundle").join(f).exists(), "{f}");
    }
    let summary = ok(&["eval", "--bundle", p(&d.join("bundle")), "--manifest", p(&d.join("test.csv")), "--svg"]);
    assert!(summary.contains('%'), "{summary}");
    let report = fs::read_to_string(d.join("bundle/eval/report.csv")).unwrap();
    assert!(report.starts_with("image_id,true_label,predicted_label,status,score_class0"));
    assert!(d.join("bundle/eval/recall.svg").exists());

    fs::write(d.join("grid.toml"), format!("[base]\n{CONFIG}\n[grid]\nc = [1.0, 10.0]\n")).unwrap();
    ok(&["cv", "--config-grid", p(&d.join("grid.toml")), "--manifest", p(&d.join("train.csv")), "--out", p(&d.join("cv"))]);
    let folds = fs::read_to_string(d.join("cv/cv_folds.csv")).unwrap();
    // Header plus one row per (grid point, identity).
    let ids: std::collections::BTreeSet<String> = fs::read_to_string(d.join("train.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect();
    assert_eq!(folds.lines().count(), 1 + 2 * ids.len());
    assert!(d.join("cv/best_config.toml").exists());

    fs::write(
        d.join("bench.toml"),
        format!("runs = 1\n[base]\n{CONFIG}\n[[variant]]\nlabel = \"a\"\n[[variant]]\nlabel = \"b\"\nclustering = \"kmeans\"\n"),
    )
    .unwrap();
    let bench = ok(&["bench", "--configs", p(&d.join("bench.toml")), "--manifest", p(&d.join("train.csv"))]);
    assert_eq!(bench.lines().count(), 3);

    let image = d.join("images/c0_s00_000.pgm");
    ok(&["keypoints", "--image", p(&image), "--out", p(&d.join("kp.csv"))]);
    assert!(fs::read_to_string(d.join("kp.csv")).unwrap().starts_with("x,y,scale,orientation,response\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "mode = \"impbovw\"\nvocab_sise = 10\n").unwrap();
    fs::write(d.join("sp.toml"), "mode = \"sp\"\nkernel = \"intersection\"\n").unwrap();
    fs::write(d.join("good.toml"), CONFIG).unwrap();
    let code = |args: &[&str]| vv(args).status.code();

    assert_eq!(code(&["train", "--config", p(&d.join("bad.toml")), "--manifest", "x.csv", "--out", p(d)]), Some(2));
    assert_eq!(code(&["train", "--config", p(&d.join("sp.toml")), "--manifest", "x.csv", "--out", p(d)]), Some(2));
    let missing = d.join("missing.csv");
    assert_eq!(code(&["train", "--config", p(&d.join("good.toml")), "--manifest", p(&missing), "--out", p(d)]), Some(3));
    fs::write(d.join("empty.csv"), "path,label,identity\n").unwrap();
    assert_eq!(
        code(&["train", "--config", p(&d.join("good.toml")), "--manifest", p(&d.join("empty.csv")), "--out", p(d)]),
        Some(3)
    );
    assert_eq!(
        Command::new(env!("CARGO_BIN_EXE_vv"))
            .args(["synth", "--out", p(&d.join("s")), "--per-class", "1"])
            .env("VV_THREADS", "zero")
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn eval_rejects_overlapping_identities() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    fs::write(d.join("run.toml"), "mode = \"sbovw\"\nvocab_size = 16\n").unwrap();
    ok(&["train", "--config", p(&d.join("run.toml")), "--manifest", p(&d.join("train.csv")), "--out", p(&d.join("b"))]);
    let out = vv(&["eval", "--bundle", p(&d.join("b")), "--manifest", p(&d.join("manifest.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
}
