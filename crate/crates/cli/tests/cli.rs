use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn wsd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsd")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Value {
    let out = wsd(args, cwd);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let v: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["command"], args[0]);
    v
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SMALL: &str = r#"
preset = "desk"
seed = 2

[fit]
iterations = 4

[diffusion.train]
epochs = 3

[eval]
poses = 2
cameras = 2
resolution = 32
"#;

#[test]
fn gen_data_counts_determinism_and_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--identities", "2", "--frames", "4", "--cameras", "4", "--res", "64", "--seed", "3"];
    let mut a = args.to_vec();
    a.extend(["--out", "one"]);
    let v = ok(&a, d.path());
    assert_eq!(v["images"], 32);
    assert!(d.path().join("one/manifest.json").is_file());
    let mut b = args.to_vec();
    b.extend(["--out", "two"]);
    ok(&b, d.path());
    assert_eq!(snapshot(&d.path().join("one")), snapshot(&d.path().join("two")));
    let pngs = snapshot(&d.path().join("one")).keys().filter(|p| p.to_string_lossy().contains("cam_")).count();
    assert_eq!(pngs, 32);

    assert_eq!(wsd(&args, d.path()).status.code(), Some(2));
    assert_eq!(wsd(&["fit", "--data", "one"], d.path()).status.code(), Some(2));
    assert_eq!(wsd(&["no-such-command"], d.path()).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_with_a_summary() {
    let d = tempfile::tempdir().unwrap();
    let out = wsd(&["fit", "--data", "missing", "--identity", "0", "--out", "x.wsdw"], d.path());
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(v["status"], "error");
    assert!(v["error"].as_str().unwrap().contains("manifest.json"));

    std::fs::write(d.path().join("bad.toml"), "preset = \"huge\"\n").unwrap();
    let out = wsd(&["gen-data", "--config", "bad.toml", "--out", "x"], d.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("run.toml"), SMALL).unwrap();
    let cfg = ["--config", "run.toml"];
    let with = |base: &[&'static str]| -> Vec<&'static str> { base.iter().chain(cfg.iter()).copied().collect() };

    ok(&with(&["gen-data", "--identities", "3", "--frames", "2", "--cameras", "2", "--out", "data"]), p);
    let data = snapshot(&p.join("data"));

    let v = ok(&with(&["fit-all", "--data", "data", "--out", "ckpts"]), p);
    assert_eq!(v["checkpoints"], 3);
    for i in 0..3 {
        assert!(p.join(format!("ckpts/identity_{i}.wsdw")).is_file());
        let csv = std::fs::read_to_string(p.join(format!("ckpts/identity_{i}.csv"))).unwrap();
        assert!(csv.starts_with("iteration,total,l1,ssim,perc,mask\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    // Zero iterations writes the shared initialization for every identity.
    ok(&with(&["fit", "--data", "data", "--identity", "0", "--iterations", "0", "--out", "init/a.wsdw"]), p);
    ok(&with(&["fit", "--data", "data", "--identity", "2", "--iterations", "0", "--out", "init/b.wsdw"]), p);
    assert_eq!(std::fs::read(p.join("init/a.wsdw")).unwrap(), std::fs::read(p.join("init/b.wsdw")).unwrap());

    let v = ok(&["pack", "--ckpts", "ckpts/*.wsdw", "--out", "pack.wsds"], p);
    assert_eq!(v["records"], 3);
    let v = ok(&with(&["train-diffusion", "--pack", "pack.wsds", "--out", "model.wsdm"]), p);
    assert_eq!(v["epochs"], 3);
    assert!(std::fs::read_to_string(p.join("model.csv")).unwrap().starts_with("epoch,loss\n"));

    let args = ["sample", "--model", "model.wsdm", "--count", "2", "--ddim-steps", "8", "--eta", "0", "--seed", "1"];
    let mut a = args.to_vec();
    a.extend(["--out", "s1"]);
    ok(&a, p);
    let mut b = args.to_vec();
    b.extend(["--out", "s2"]);
    ok(&b, p);
    assert_eq!(snapshot(&p.join("s1")), snapshot(&p.join("s2")));

    let v = ok(
        &with(&[
            "render",
            "--weights",
            "s1/sample_000.wsdw",
            "--pose",
            "data/identity_0/frame_1/pose.json",
            "--camera",
            "data/cameras.json",
            "--camera-index",
            "1",
            "--out",
            "img.png",
        ]),
        p,
    );
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(64), Some(64)));
    let (w, h, rgb) = wsd_splat::load_rgb_png(&p.join("img.png")).unwrap();
    assert_eq!((w, h), (64, 64));
    assert!(rgb.iter().all(|v| v.is_finite()));

    let v = ok(&with(&["eval", "--generated", "s1", "--reference", "ckpts", "--out", "report.json"]), p);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report, v["report"]);
    assert_eq!(report["n_generated"], 2);
    assert_eq!(report["n_reference"], 3);
    assert_eq!(report["seed"], 2);

    // Inputs are never modified.
    assert_eq!(snapshot(&p.join("data")), data);
}
