use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn modelprint(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_modelprint")).args(args).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let record = serde_json::from_str(stdout.trim()).unwrap_or(Value::Null);
    (out.status.code().unwrap(), record)
}

fn ok(args: &[&str]) -> Value {
    let (code, record) = modelprint(args);
    assert_eq!(code, 0, "{args:?} -> {record}");
    record
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> String {
        p(&self.root, name)
    }
}

/// Two toy models, a perturbed copy of the first, a corpus and an
/// untrained 16-anchor encoder.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_owned();
    let f = Fixture { _dir: dir, root };
    for (seed, name) in [("1", "a.hrfc"), ("2", "b.hrfc")] {
        ok(&["toy-model", "--layers", "2", "--dim", "32", "--heads", "2", "--vocab", "128", "--seed", seed, "--out", &f.path(name)]);
    }
    ok(&["perturb", "--ckpt", &f.path("a.hrfc"), "--relative", "0.01", "--seed", "3", "--out", &f.path("a2.hrfc")]);
    ok(&["corpus", "--vocab", "128", "--tokens", "5000", "--seed", "4", "--out", &f.path("corpus.hrtc")]);
    ok(&["train-fpm", "--k", "16", "--layers", "2", "--epochs", "0", "--out", &f.path("enc.hrfe")]);
    f
}

fn fingerprint(f: &Fixture, ckpt: &str, out: &str) -> Value {
    ok(&[
        "fingerprint",
        "--ckpt",
        &f.path(ckpt),
        "--corpus",
        &f.path("corpus.hrtc"),
        "--encoder",
        &f.path("enc.hrfe"),
        "--size",
        "32",
        "--out",
        &f.path(out),
    ])
}

#[test]
fn fingerprint_writes_all_artifacts_deterministically() {
    let f = fixture();
    fingerprint(&f, "a.hrfc", "fa");
    fingerprint(&f, "a.hrfc", "fb");
    for name in ["invariants.hrit", "fingerprint.png", "fingerprint.json", "metadata.json"] {
        let a = std::fs::read(f.root.join("fa").join(name)).unwrap();
        let b = std::fs::read(f.root.join("fb").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let hrit = std::fs::read(f.root.join("fa/invariants.hrit")).unwrap();
    assert_eq!(&hrit[..4], b"HRIT");
    let meta: Value = serde_json::from_slice(&std::fs::read(f.root.join("fa/metadata.json")).unwrap()).unwrap();
    for key in ["checkpoint_hash", "corpus_hash", "anchor_hash", "encoder_hash", "renderer_version"] {
        assert!(meta["metadata"][key].as_str().is_some_and(|s| !s.is_empty()), "{key}");
    }
}

#[test]
fn compare_reports_same_and_different_bases() {
    let f = fixture();
    for (ckpt, out) in [("a.hrfc", "fa"), ("a2.hrfc", "fa2"), ("b.hrfc", "fb")] {
        fingerprint(&f, ckpt, out);
    }
    let inv = |d: &str| p(&f.root.join(d), "invariants.hrit");
    let same = ok(&["compare", &inv("fa"), &inv("fa")]);
    assert_eq!(same["verdict"]["ics"], 100.0);
    let kin = ok(&["compare", &inv("fa"), &inv("fa2")]);
    assert!(kin["verdict"]["ics"].as_f64().unwrap() > 95.0, "{kin}");
    let (code, other) = modelprint(&["compare", &inv("fa"), &inv("fb")]);
    assert_eq!(code, 1);
    assert!(other["verdict"]["ics"].as_f64().unwrap().abs() < 10.0, "{other}");
}

#[test]
fn compare_rejects_mismatched_k() {
    let f = fixture();
    fingerprint(&f, "a.hrfc", "fa");
    ok(&["train-fpm", "--k", "8", "--layers", "2", "--epochs", "0", "--out", &f.path("enc8.hrfe")]);
    ok(&[
        "fingerprint",
        "--ckpt",
        &f.path("a.hrfc"),
        "--corpus",
        &f.path("corpus.hrtc"),
        "--encoder",
        &f.path("enc8.hrfe"),
        "--size",
        "16",
        "--out",
        &f.path("f8"),
    ]);
    let (code, record) = modelprint(&["compare", &p(&f.root.join("fa"), "invariants.hrit"), &p(&f.root.join("f8"), "invariants.hrit")]);
    assert_eq!(code, 2, "{record}");
}

#[test]
fn attack_then_verify_passes_and_unrelated_fails() {
    let f = fixture();
    ok(&["attack", "--ckpt", &f.path("a.hrfc"), "--seed", "9", "--out", &f.path("attacked.hrfc")]);
    assert!(Path::new(&f.path("attacked.recipe.json")).exists());
    ok(&["verify", "--ckpt", &f.path("a.hrfc"), "--against", &f.path("attacked.hrfc")]);
    let (code, _) = modelprint(&["verify", "--ckpt", &f.path("a.hrfc"), "--against", &f.path("b.hrfc")]);
    assert_eq!(code, 1);
    let pcs = ok(&["pcs", "--ckpt", &f.path("a.hrfc"), "--against", &f.path("attacked.hrfc")]);
    assert!(pcs["pcs"].as_f64().unwrap() < 50.0, "{pcs}");
}

#[test]
fn select_tokens_and_train_with_zero_epochs() {
    let f = fixture();
    let rec = ok(&["select-tokens", "--corpus", &f.path("corpus.hrtc"), "--k", "10"]);
    assert_eq!(rec["k"], 10);
    assert!(Path::new(&f.path("enc.hrfe")).exists());
    let (code, _) = modelprint(&["select-tokens", "--corpus", &f.path("missing.hrtc")]);
    assert_eq!(code, 2);
}
