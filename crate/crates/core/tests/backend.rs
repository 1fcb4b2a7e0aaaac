mod common;

use std::sync::Arc;

use common::*;
use nasforge_core::backend::{
    benchmark, export_json, import_json, BackendError, CGenerator, Generator, GeneratorPipeline,
    JsonGenerator, PipelineError,
};
use nasforge_core::builder::build_model;
use nasforge_core::estimators::{estimate_latency, estimate_memory};
use nasforge_core::registry::LayerConfig;
use nasforge_core::runtime::{forward, init_params};
use nasforge_core::{
    sample_architecture, DeviceModel, ModelGraph, RandomSource, Registry, Tensor, TensorShape,
};

fn graph_for(seed: u64) -> ModelGraph {
    let spec = conv_classifier_depths("[1, 2, 3]");
    let ir = sample_architecture(&spec, &mut RandomSource::new(seed)).unwrap();
    build_model(
        &ir,
        &spec.input_shape,
        &spec.output_shape,
        &Registry::builtin(),
        None,
    )
    .unwrap()
}

fn identity_graph(n: usize) -> ModelGraph {
    let shape = TensorShape::flat(n).unwrap();
    let layer = LayerConfig::new("identity", shape.clone(), shape.clone());
    ModelGraph {
        input: shape.clone(),
        output: shape,
        layers: vec![layer],
    }
}

#[test]
fn c_reflection_lists_the_template_ops() {
    let ops: Vec<String> = CGenerator::new()
        .reflect()
        .ops()
        .map(String::from)
        .collect();
    assert_eq!(
        ops,
        ["conv1d", "flatten", "identity", "linear", "maxpool", "relu"]
    );
}

#[test]
fn identity_graph_copies_input() {
    let g = identity_graph(10);
    let artifact = CGenerator::new().generate(&g, &init_params(&g, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let exe = compile(&artifact, dir.path());
    let x = Tensor::random(vec![10], 4);
    assert_eq!(run_eval(&exe, &x), x.data);
}

#[test]
fn compiled_model_matches_interpreter() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph_for(5);
    let params = init_params(&g, 11);
    let exe = compile(
        &CGenerator::new().generate(&g, &params).unwrap(),
        dir.path(),
    );
    for i in 0..20 {
        let x = Tensor::random(g.input.dims().to_vec(), 100 + i);
        let want = forward(&g, &params, &x).unwrap();
        let got = run_eval(&exe, &x);
        assert!(max_rel_err(&got, &want.data) <= 1e-5);
    }
}

#[test]
fn bench_harness_prints_latency() {
    let dir = tempfile::tempdir().unwrap();
    let g = graph_for(2);
    let exe = compile(
        &CGenerator::new().generate(&g, &init_params(&g, 0)).unwrap(),
        dir.path(),
    );
    let out = std::process::Command::new(exe).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("latency_s "));
}

#[test]
fn unsupported_op_is_rejected() {
    let g = graph_for(3);
    let params = init_params(&g, 0);
    let narrow = CGenerator::new().without("linear");
    assert!(matches!(
        narrow.generate(&g, &params),
        Err(BackendError::Capability { .. })
    ));
    let mut bad = identity_graph(4);
    bad.layers[0].op = "gelu".into();
    assert!(matches!(
        CGenerator::new().generate(&bad, &init_params(&bad, 0)),
        Err(BackendError::Capability { .. })
    ));
}

#[test]
fn template_override() {
    let g = identity_graph(3);
    let doubled = CGenerator::new().with_template(
        "identity",
        Arc::new(|_, l: &LayerConfig| {
            format!(
                "    int i;\n    for (i = 0; i < {}; ++i) y[i] = 2.0f * x[i];\n",
                l.output.numel()
            )
        }),
    );
    let dir = tempfile::tempdir().unwrap();
    let exe = compile(
        &doubled.generate(&g, &init_params(&g, 0)).unwrap(),
        dir.path(),
    );
    assert_eq!(
        run_eval(&exe, &Tensor::new(vec![3], vec![1.0, -2.0, 0.5])),
        [2.0, -4.0, 1.0]
    );
}

#[test]
fn json_round_trip() {
    let registry = Registry::builtin();
    for seed in 0..20 {
        let g = graph_for(seed);
        let params = init_params(&g, seed);
        let text = serde_json::to_string(&export_json(&g, Some(&params))).unwrap();
        let (back, weights) = import_json(&text, &registry).unwrap();
        assert_eq!(back, g);
        assert_eq!(weights.unwrap(), params);

        let bare = serde_json::to_string(&export_json(&g, None)).unwrap();
        let (back, weights) = import_json(&bare, &registry).unwrap();
        assert!(weights.is_none());
        let x = Tensor::random(g.input.dims().to_vec(), 1);
        assert_eq!(
            forward(&back, &init_params(&back, 7), &x)
                .unwrap()
                .data
                .len(),
            6
        );
    }
}

#[test]
fn json_schema_fields() {
    let g = graph_for(1);
    let doc = serde_json::to_value(export_json(&g, None)).unwrap();
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["input_shape"], serde_json::json!([4, 1250]));
    assert_eq!(doc["output_shape"], serde_json::json!([6]));
    let first = &doc["layers"][0];
    for field in ["op", "params", "in_shape", "out_shape", "weight_refs"] {
        assert!(first.get(field).is_some(), "{field}");
    }
    assert!(doc.get("weights").is_none());
}

#[test]
fn unknown_format_version() {
    let g = identity_graph(2);
    let mut doc = serde_json::to_value(export_json(&g, None)).unwrap();
    doc["format_version"] = 2.into();
    let err = import_json(&doc.to_string(), &Registry::builtin()).unwrap_err();
    assert_eq!(err, BackendError::Version(2));
}

#[test]
fn json_generator_embeds_weights() {
    let g = graph_for(4);
    let params = init_params(&g, 2);
    let artifact = JsonGenerator::new(&Registry::builtin())
        .generate(&g, &params)
        .unwrap();
    let (_, weights) =
        import_json(artifact.file("model.json").unwrap(), &Registry::builtin()).unwrap();
    assert_eq!(weights.unwrap(), params);
}

#[test]
fn benchmark_bounds_over_graphs() {
    let dev = DeviceModel {
        jitter: 0.05,
        memory_capacity: u64::MAX,
        ..DeviceModel::default()
    };
    for seed in 0..50 {
        let g = graph_for(seed);
        let est = estimate_latency(&g, &dev).value;
        let m = benchmark(&g, &dev, seed).unwrap();
        assert!(est <= m.latency_s && m.latency_s <= 1.05 * est);
        assert_eq!(m.peak_memory_bytes as f64, estimate_memory(&g).value);
    }
}

#[test]
fn benchmark_is_monotone_in_layers() {
    let dev = DeviceModel {
        jitter: 0.05,
        memory_capacity: u64::MAX,
        ..DeviceModel::default()
    };
    let mut g = identity_graph(8);
    let mut last = 0.0;
    for _ in 0..5 {
        let l = benchmark(&g, &dev, 3).unwrap().latency_s;
        assert!(l >= last);
        last = l;
        let extra = g.layers[0].clone();
        g.layers.push(extra);
    }
}

#[test]
fn pipeline_separates_generation_from_deployment() {
    let spec = conv_classifier_depths("[1]");
    let ir = sample_architecture(&spec, &mut RandomSource::new(0)).unwrap();
    let tiny = DeviceModel {
        memory_capacity: 1024,
        ..DeviceModel::default()
    };
    let pipeline = GeneratorPipeline::simulated(
        Arc::new(Registry::builtin()),
        Arc::new(CGenerator::new()),
        tiny,
    );
    let g = build_model(
        &ir,
        &spec.input_shape,
        &spec.output_shape,
        &Registry::builtin(),
        None,
    )
    .unwrap();
    let params = init_params(&g, 0);
    // the compiler stage succeeds on its own
    assert!(CGenerator::new().generate(&g, &params).is_ok());
    let err = pipeline
        .run(&ir, &spec.input_shape, &spec.output_shape, 0)
        .unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Backend(BackendError::Capacity { .. })
    ));

    let roomy = DeviceModel {
        memory_capacity: u64::MAX,
        ..DeviceModel::default()
    };
    let pipeline = GeneratorPipeline::simulated(
        Arc::new(Registry::builtin()),
        Arc::new(CGenerator::new()),
        roomy,
    );
    let out = pipeline
        .run(&ir, &spec.input_shape, &spec.output_shape, 0)
        .unwrap();
    assert_eq!(out.artifact.files.len(), 4);
    assert_eq!(
        out.measurement.latency_s,
        estimate_latency(&out.graph, &roomy).value
    );
}
