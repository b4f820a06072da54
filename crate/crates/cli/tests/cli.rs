use std::path::Path;
use std::process::{Command, Output};

use maskinfer_core::harness::io;
use serde_json::Value;

fn maskinfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskinfer"))
        .args(args)
        .env_remove("MASKINFER_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_mlp_at_f64_agrees_on_every_row() {
    let out = maskinfer(&[
        "verify",
        "--arch",
        "mlp",
        "--trials",
        "100",
        "--precision",
        "f64",
        "--json",
    ]);
    let doc = json(&out);
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["report"]["argmax_agreement"], 1.0);
    assert!(doc["report"]["max_deviation"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn probe_reports_all_three_sections() {
    let doc = json(&maskinfer(&["probe", "--rounds", "2", "--json"]));
    let r = &doc["report"];
    assert_eq!(r["masked_input_pairs"].as_array().unwrap().len(), 1);
    assert!(r["zero_round"]["within_3_se"].is_boolean());
    assert!(!r["weight_correlations"].as_array().unwrap().is_empty());
}

#[test]
fn reports_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("report.json");
    let args = [
        "report",
        "--arch",
        "cnn",
        "--seed",
        "7",
        "--json",
        "--out",
        p(&file),
    ];
    let a = maskinfer(&args);
    let b = maskinfer(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(&file).unwrap(), a.stdout);

    let other = maskinfer(&["report", "--arch", "cnn", "--seed", "8", "--json"]);
    assert_ne!(other.stdout, a.stdout);
}

#[test]
fn seed_defaults_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_maskinfer"))
        .args(["stats", "--json"])
        .env("MASKINFER_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(json(&out)["seed"], 42);
}

#[test]
fn generate_obfuscate_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = (dir.path().join("m.bin"), dir.path().join("x.bin"));
    let (bundle, secrets) = (dir.path().join("b.bin"), dir.path().join("s.bin"));
    json(&maskinfer(&[
        "gen",
        "--arch",
        "transformer",
        p(&model),
        "--input",
        p(&input),
        "--json",
    ]));
    json(&maskinfer(&[
        "obfuscate",
        p(&model),
        p(&bundle),
        "--export-secrets",
        p(&secrets),
        "--json",
    ]));

    let plain = io::load_model::<f64>(&model).unwrap().value;
    let x = io::load_input::<f64>(&input).unwrap().value;
    let expected = plain.forward(&x).unwrap().to_rows().argmax_rows();

    for inference in 0..2u64 {
        let doc = json(&maskinfer(&[
            "infer",
            p(&bundle),
            p(&input),
            "--secrets",
            p(&secrets),
            "--json",
        ]));
        let r = &doc["report"];
        assert_eq!(r["inference"], inference);
        assert_eq!(r["counts"]["tee_crossings"], 2);
        assert_eq!(r["counts"]["total"]["mults"], 12);
        let labels: Vec<usize> = serde_json::from_value(r["labels"].clone()).unwrap();
        assert_eq!(labels, expected);
    }
}

#[test]
fn obfuscate_writes_no_enclave_state_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let (model, bundle) = (dir.path().join("m.bin"), dir.path().join("b.bin"));
    json(&maskinfer(&["gen", p(&model), "--json"]));
    json(&maskinfer(&["obfuscate", p(&model), p(&bundle), "--json"]));
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert_eq!(files, ["b.bin", "m.bin"]);
}

#[test]
fn infer_rejects_a_mismatched_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    json(&maskinfer(&[
        "gen",
        "--arch",
        "transformer",
        p(&d("t.bin")),
        "--json",
    ]));
    json(&maskinfer(&[
        "gen",
        "--arch",
        "mlp",
        p(&d("m.bin")),
        "--input",
        p(&d("x.bin")),
        "--json",
    ]));
    json(&maskinfer(&[
        "obfuscate",
        p(&d("t.bin")),
        p(&d("b.bin")),
        "--export-secrets",
        p(&d("s.bin")),
        "--json",
    ]));
    let out = maskinfer(&[
        "infer",
        p(&d("b.bin")),
        p(&d("x.bin")),
        "--secrets",
        p(&d("s.bin")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn infer_rejects_a_bundle_from_another_enclave() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    json(&maskinfer(&[
        "gen",
        p(&d("m.bin")),
        "--input",
        p(&d("x.bin")),
        "--json",
    ]));
    json(&maskinfer(&[
        "obfuscate",
        p(&d("m.bin")),
        p(&d("b1.bin")),
        "--seed",
        "1",
        "--json",
    ]));
    json(&maskinfer(&[
        "obfuscate",
        p(&d("m.bin")),
        p(&d("b2.bin")),
        "--seed",
        "2",
        "--export-secrets",
        p(&d("s.bin")),
        "--json",
    ]));
    let out = maskinfer(&[
        "infer",
        p(&d("b1.bin")),
        p(&d("x.bin")),
        "--secrets",
        p(&d("s.bin")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("was not produced"));
}

#[test]
fn loading_at_another_precision_prints_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    let (model, bundle) = (dir.path().join("m.bin"), dir.path().join("b.bin"));
    json(&maskinfer(&["gen", p(&model), "--json"]));
    let out = maskinfer(&[
        "obfuscate",
        p(&model),
        p(&bundle),
        "--precision",
        "f32",
        "--json",
    ]);
    assert_eq!(json(&out)["precision"], "f32");
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_nonzero() {
    assert_eq!(maskinfer(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        maskinfer(&["verify", "--precision", "f16"]).status.code(),
        Some(2)
    );
    let out = maskinfer(&["verify", "--arch", "lstm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown architecture"));
}

#[test]
fn failed_checks_exit_nonzero() {
    let out = maskinfer(&[
        "verify", "--arch", "mlp", "--trials", "3", "--tol", "0", "--json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["passed"], false);
}
