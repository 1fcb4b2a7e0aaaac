#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use nasforge_core::backend::Artifact;
use nasforge_core::{parse_spec, SearchSpaceSpec, Tensor};

pub const CONV_CLASSIFIER: &str = include_str!("../fixtures/conv_classifier.yaml");

pub fn conv_classifier() -> SearchSpaceSpec {
    parse_spec(CONV_CLASSIFIER).unwrap()
}

/// The classifier space with its feature depth domain replaced.
pub fn conv_classifier_depths(depths: &str) -> SearchSpaceSpec {
    parse_spec(&CONV_CLASSIFIER.replace("[1, 2, 3, 4, 5, 6]", depths)).unwrap()
}

pub const CFLAGS: &[&str] = &[
    "-std=c99",
    "-pedantic",
    "-Wall",
    "-Wextra",
    "-Werror",
    "-O2",
    "-ffp-contract=off",
];

/// Compiles a generated bundle into `dir/model_bench`.
pub fn compile(artifact: &Artifact, dir: &Path) -> PathBuf {
    artifact.write_to(dir).unwrap();
    let exe = dir.join("model_bench");
    let out = Command::new("cc")
        .args(CFLAGS)
        .arg("-o")
        .arg(&exe)
        .args(["model.c", "weights.c", "bench_main.c"].map(|f| dir.join(f)))
        .output()
        .expect("a C compiler on PATH");
    assert!(
        out.status.success(),
        "cc failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    exe
}

/// Runs the compiled harness in `--eval` mode on one input.
pub fn run_eval(exe: &Path, input: &Tensor) -> Vec<f32> {
    let mut child = Command::new(exe)
        .arg("--eval")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        let text: Vec<String> = input.data.iter().map(|v| format!("{v:?}")).collect();
        stdin.write_all(text.join(" ").as_bytes()).unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .map(|s| s.parse().unwrap())
        .collect()
}

pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (x, y) = (*x as f64, *y as f64);
            (x - y).abs() / y.abs().max(1e-6)
        })
        .fold(0.0, f64::max)
}
