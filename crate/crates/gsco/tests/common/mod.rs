#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const N_SAMPLES: usize = 20;
pub const N_SPECIALISTS: usize = 10;
/// Sample whose specialists split 5-5; the truth is Positive, which plain
/// voting loses to the earlier label.
pub const TIE_SAMPLE: usize = 7;
/// Sample where most specialists are wrong.
pub const MISLED_SAMPLE: usize = 12;

pub fn truth(i: usize) -> &'static str {
    if i.is_multiple_of(3) || i == TIE_SAMPLE {
        "Positive"
    } else {
        "Negative"
    }
}

fn other(label: &str) -> &'static str {
    if label == "Positive" {
        "Negative"
    } else {
        "Positive"
    }
}

/// Answer of specialist `j` on sample `i`.
pub fn specialist_answer(i: usize, j: usize) -> &'static str {
    let t = truth(i);
    match i {
        TIE_SAMPLE => if j.is_multiple_of(2) { t } else { other(t) },
        MISLED_SAMPLE => if j < 7 { other(t) } else { t },
        // three wrong specialists, rotating with the sample
        _ => if (j + i) % N_SPECIALISTS < 3 { other(t) } else { t },
    }
}

pub fn image(i: usize) -> String {
    format!("img-{i:02}")
}

pub fn embedding(i: usize) -> Vec<f32> {
    let a = i as f32 * 0.7;
    let pos = if truth(i) == "Positive" { 1.0 } else { 0.0 };
    vec![a.cos(), a.sin(), 0.5 + pos, 0.25]
}

pub fn manifest_text() -> String {
    let mut out = json!({"name": "fixture", "task": "cls-binary", "label_set": ["Negative", "Positive"]}).to_string();
    out.push('\n');
    for i in 0..N_SAMPLES {
        let line = json!({"id": format!("s{i:02}"), "image": image(i), "modality": "chest X-ray", "labels": [truth(i)]});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn backends_json() -> Value {
    let specialists: Vec<Value> = (0..N_SPECIALISTS)
        .map(|j| {
            let table: serde_json::Map<String, Value> =
                (0..N_SAMPLES).map(|i| (image(i), json!({"labels": [specialist_answer(i, j)]}))).collect();
            json!({"id": format!("spec-{j}"), "stub": {"table": table}})
        })
        .collect();
    let vectors: serde_json::Map<String, Value> = (0..N_SAMPLES).map(|i| (image(i), json!(embedding(i)))).collect();
    json!({
        "max_concurrency": 4,
        "generator": {"id": "gfm", "stub": {"rule": "moed-majority", "table": {image(TIE_SAMPLE): "Positive"}}},
        "specialists": specialists,
        "embedder": {"id": "enc", "dimension": 4, "stub": {"table": vectors}}
    })
}

pub struct Fixture {
    pub manifest: PathBuf,
    pub backends: PathBuf,
}

pub fn write_fixture(dir: &Path) -> Fixture {
    let manifest = dir.join("manifest.jsonl");
    let backends = dir.join("backends.json");
    std::fs::write(&manifest, manifest_text()).unwrap();
    std::fs::write(&backends, serde_json::to_string_pretty(&backends_json()).unwrap()).unwrap();
    Fixture { manifest, backends }
}

pub fn gsco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsco")).args(args).output().expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}
