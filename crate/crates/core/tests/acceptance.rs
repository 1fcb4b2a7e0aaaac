//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! binary exits non-zero if any check fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use nasforge_core::backend::{CGenerator, Generator};
use nasforge_core::dsl::count_configurations;
use nasforge_core::estimators::{
    estimate_flops, estimate_latency, estimate_params, scalarize, CountingEstimator, CriteriaSet,
    Criterion, CriterionKind, EvalContext, Flops, Normalizer, ParamCount, ScoreTerm,
    SyntheticProxy, TrialOutcome, WeightedSum,
};
use nasforge_core::preproc::{apply_preproc, preproc_output_shape};
use nasforge_core::runtime::forward_counted;
use nasforge_core::search::{
    write_history, CriterionConfig, EvolutionConfig, SamplerConfig, Study, TrialStatus,
};
use nasforge_core::{
    build_model, enumerate_space, forward, init_params, parse_spec, replay, sample_architecture,
    ArchitectureIR, DeviceModel, Direction, ModelGraph, RandomSource, Registry, SearchSpaceSpec,
    StudyConfig, Tensor,
};
use num_bigint::BigUint;

type Check = Result<String, String>;
type NamedCheck = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn build(spec: &SearchSpaceSpec, ir: &ArchitectureIR) -> ModelGraph {
    build_model(
        ir,
        &spec.input_shape,
        &spec.output_shape,
        &Registry::builtin(),
        None,
    )
    .unwrap()
}

fn study_config(
    budget: usize,
    sampler: SamplerConfig,
    seed: u64,
    criteria: Vec<CriterionConfig>,
) -> StudyConfig {
    StudyConfig {
        budget,
        sampler,
        seed,
        criteria,
        device: None,
        parallelism: 1,
        hardware_in_loop: false,
        proxy: Default::default(),
        record_wall_time: false,
    }
}

fn objective(metric: &str, bounds: Option<[f64; 2]>) -> CriterionConfig {
    CriterionConfig {
        metric: metric.into(),
        kind: CriterionKind::Objective,
        weight: Some(1.0),
        threshold: None,
        bounds,
    }
}

fn cardinality() -> Check {
    let small = conv_classifier_depths("[1, 2, 3]");
    let counted = count_configurations(&small);
    ensure!(counted == BigUint::from(1752u32), "count {counted}");
    let distinct: HashSet<String> = enumerate_space(&small, 10_000)
        .map_err(|e| e.to_string())?
        .map(|ir| serde_json::to_string(&ir).unwrap())
        .collect();
    ensure!(distinct.len() == 1752, "enumerated {}", distinct.len());
    let full = count_configurations(&conv_classifier());
    ensure!(full == BigUint::from(898_776u32), "full count {full}");
    Ok(format!(
        "count 1752, enumerated {}, full {full}",
        distinct.len()
    ))
}

fn repeat_modes() -> Check {
    let mode = |ty: &str| {
        parse_spec(&format!(
            "
input: [4, 64]
output: 2
sequence:
  - block: c
    op_candidates: [conv1d, maxpool]
    type_repeat: {{type: {ty}, depth: [2, 3]}}
    conv1d: {{kernel_size: [3, 5], out_channels: [4, 8]}}
  - block: h
    op_candidates: linear
    linear: {{width: 4}}
"
        ))
        .unwrap()
    };
    let layers = |ir: &ArchitectureIR, block: &str| {
        ir.layers
            .iter()
            .filter(|l| l.path[0] == block)
            .cloned()
            .collect::<Vec<_>>()
    };

    let s = mode("repeat_params");
    for ir in enumerate_space(&s, 10_000).unwrap() {
        let c = layers(&ir, "c");
        ensure!(
            c.iter().all(|l| l.op == c[0].op && l.params == c[0].params),
            "repeat_params varied"
        );
    }
    let s = mode("repeat_op");
    for ir in enumerate_space(&s, 10_000).unwrap() {
        let c = layers(&ir, "c");
        ensure!(c.iter().all(|l| l.op == c[0].op), "repeat_op varied the op");
    }
    let s = mode("vary_all");
    let varied = enumerate_space(&s, 100_000).unwrap().any(|ir| {
        let c = layers(&ir, "c");
        c.iter().any(|l| l.op != c[0].op || l.params != c[0].params)
    });
    ensure!(varied, "vary_all never varied");

    let s = parse_spec(
        "
input: [4, 64]
output: 2
sequence:
  - block: a
    op_candidates: [conv1d, maxpool]
    conv1d: {kernel_size: [3, 5], out_channels: [4, 8]}
  - block: b
    type_repeat: {type: repeat_block, ref_block: a}
  - block: h
    op_candidates: linear
    linear: {width: 4}
",
    )
    .unwrap();
    let differs = enumerate_space(&s, 10_000).unwrap().any(|ir| {
        let (a, b) = (&layers(&ir, "a")[0], &layers(&ir, "b")[0]);
        a.op != b.op || a.params != b.params
    });
    ensure!(differs, "repeat_block always copied the original");
    Ok("all four modes behave".into())
}

fn shape_safety() -> Check {
    let spec = conv_classifier();
    let registry = Registry::builtin();
    let mut layers = 0;
    for seed in 0..1000 {
        let ir = sample_architecture(&spec, &mut RandomSource::new(seed)).unwrap();
        let g = build_model(&ir, &spec.input_shape, &spec.output_shape, &registry, None)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        ensure!(g.layers[0].input == spec.input_shape, "seed {seed}: input");
        ensure!(
            g.layers.windows(2).all(|w| w[0].output == w[1].input),
            "seed {seed}: chain"
        );
        ensure!(
            g.layers.last().unwrap().output.dims() == [6],
            "seed {seed}: output"
        );
        layers += g.layers.len();
    }
    Ok(format!("1000 graphs, {layers} layers, 0 shape errors"))
}

fn estimator_oracles() -> Check {
    let spec = conv_classifier();
    for seed in 0..50 {
        let ir = sample_architecture(&spec, &mut RandomSource::new(1000 + seed)).unwrap();
        let g = build(&spec, &ir);
        let params = init_params(&g, seed);
        let x = Tensor::random(g.input.dims().to_vec(), seed);
        let (_, stats) = forward_counted(&g, &params, &x).map_err(|e| e.to_string())?;
        let flops = estimate_flops(&g).value;
        ensure!(
            flops == 2.0 * stats.macs as f64,
            "seed {seed}: flops {flops} vs macs {}",
            stats.macs
        );
        let p = estimate_params(&g).value;
        ensure!(p == params.scalar_count() as f64, "seed {seed}: params {p}");
    }
    Ok("50 architectures exact".into())
}

fn staged_evaluation() -> Check {
    let spec = conv_classifier_depths("[1, 2, 3]");
    let irs: Vec<_> = enumerate_space(&spec, 10_000).unwrap().collect();
    let graphs: Vec<_> = irs.iter().map(|ir| build(&spec, ir)).collect();
    let mut counts: Vec<f64> = graphs.iter().map(|g| estimate_params(g).value).collect();
    counts.sort_by(f64::total_cmp);
    let threshold = counts[counts.len() / 2];

    let mut pruned = 0;
    for (ir, g) in irs.iter().zip(&graphs) {
        let objective = Arc::new(CountingEstimator::new(Arc::new(Flops)));
        let set = CriteriaSet::new(vec![
            Criterion::hard(Arc::new(ParamCount), threshold),
            Criterion::objective(objective.clone(), 1.0, Normalizer::new(0.0, 1e9).unwrap()),
        ])
        .unwrap();
        let ctx = EvalContext {
            graph: g,
            ir,
            device: None,
            seed: 0,
            inputs: &[],
        };
        let outcome = nasforge_core::estimators::evaluate_trial(&ctx, &set).unwrap();
        let brute = estimate_params(g).value > threshold;
        match outcome {
            TrialOutcome::Pruned { .. } => {
                ensure!(brute, "pruned a feasible trial");
                ensure!(objective.calls() == 0, "objective ran on a pruned trial");
                pruned += 1;
            }
            TrialOutcome::Complete { .. } => {
                ensure!(!brute, "kept an infeasible trial");
                ensure!(
                    objective.calls() == 1,
                    "objective ran {} times",
                    objective.calls()
                );
            }
            TrialOutcome::Failed { error, .. } => return Err(error.message),
        }
    }
    let frac = pruned as f64 / irs.len() as f64;
    ensure!((0.3..=0.7).contains(&frac), "pruned fraction {frac}");
    Ok(format!(
        "{pruned}/{} pruned, zero objective calls on pruned",
        irs.len()
    ))
}

fn scalarization() -> Check {
    let t = [
        ScoreTerm::objective("acc", 0.9, 0.7, Direction::Maximize),
        ScoreTerm::objective("latency", 0.5, 0.3, Direction::Minimize),
    ];
    let s = scalarize(&t, &WeightedSum).unwrap();
    ensure!((s - 0.78).abs() <= 1e-12, "weighted sum {s}");
    let t = [
        ScoreTerm::objective("a", 0.25, 2.0, Direction::Maximize),
        ScoreTerm::objective("b", 0.125, 0.5, Direction::Minimize),
        ScoreTerm::objective("c", 0.6, 1.5, Direction::Maximize),
    ];
    let want = 2.0 * 0.25 + 0.5 * (1.0 - 0.125) + 1.5 * 0.6;
    let s = scalarize(&t, &WeightedSum).unwrap();
    ensure!((s - want).abs() <= 1e-12, "weighted sum {s} vs {want}");

    // argmax is unchanged when every weight is multiplied by the same c > 0
    let mut rng = RandomSource::new(5);
    let mut draw = || {
        use nasforge_core::sampler::TrialSource;
        let choices: Vec<_> = (0..1000).map(nasforge_core::Scalar::Int).collect();
        rng.choose("x", &choices).unwrap() as f64 / 1000.0
    };
    for round in 0..200 {
        let trials: Vec<[f64; 2]> = (0..8).map(|_| [draw(), draw()]).collect();
        let weights = [draw() + 0.01, draw() + 0.01];
        let best = |c: f64| {
            let scores: Vec<f64> = trials
                .iter()
                .map(|v| {
                    let terms = [
                        ScoreTerm::objective("a", v[0], c * weights[0], Direction::Maximize),
                        ScoreTerm::objective("b", v[1], c * weights[1], Direction::Minimize),
                    ];
                    scalarize(&terms, &WeightedSum).unwrap()
                })
                .collect();
            (0..scores.len())
                .max_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(j.cmp(&i)))
                .unwrap()
        };
        let base = best(1.0);
        for c in [0.001, 0.5, 3.0, 1e4] {
            ensure!(
                best(c) == base,
                "round {round}: scaling by {c} moved the argmax"
            );
        }
    }

    // two trials: the default prefers the small model, an accuracy-only
    // aggregator prefers the accurate one
    let a = [
        ScoreTerm::objective("accuracy", 0.9, 1.0, Direction::Maximize),
        ScoreTerm::objective("params", 0.9, 1.0, Direction::Minimize),
    ];
    let b = [
        ScoreTerm::objective("accuracy", 0.6, 1.0, Direction::Maximize),
        ScoreTerm::objective("params", 0.1, 1.0, Direction::Minimize),
    ];
    let accuracy_only = |ts: &[ScoreTerm]| ts.iter().find(|t| t.name == "accuracy").unwrap().value;
    let pick = |agg: &dyn nasforge_core::estimators::Aggregator| {
        if scalarize(&a, agg).unwrap() > scalarize(&b, agg).unwrap() {
            "a"
        } else {
            "b"
        }
    };
    ensure!(pick(&WeightedSum) == "b", "default picked a");
    ensure!(pick(&accuracy_only) == "a", "injected aggregator picked b");
    Ok("sums exact, argmax invariant over 200 cases, injected aggregator flips best".into())
}

fn codegen_equivalence() -> Check {
    let spec = conv_classifier_depths("[1]");
    let irs: Vec<_> = enumerate_space(&spec, 100).unwrap().collect();
    ensure!(irs.len() == 24, "{} architectures", irs.len());
    let gen = CGenerator::new();
    let mut worst: f64 = 0.0;
    for (i, ir) in irs.iter().enumerate() {
        let g = build(&spec, ir);
        let params = init_params(&g, i as u64);
        let dir = tempfile::tempdir().unwrap();
        let exe = compile(
            &gen.generate(&g, &params).map_err(|e| e.to_string())?,
            dir.path(),
        );
        for k in 0..5 {
            let x = Tensor::random(g.input.dims().to_vec(), 31 * i as u64 + k);
            let want = forward(&g, &params, &x).unwrap();
            let err = max_rel_err(&run_eval(&exe, &x), &want.data);
            ensure!(err <= 1e-5, "architecture {i}: relative error {err}");
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "24 architectures x 5 inputs, max relative error {worst:.2e}"
    ))
}

fn reflection_filtering() -> Check {
    let spec = conv_classifier();
    let caps = CGenerator::new()
        .reflect()
        .without("maxpool")
        .map_err(|e| e.to_string())?;
    let study = Study::new(
        spec.clone(),
        study_config(
            1000,
            SamplerConfig::Random,
            3,
            vec![objective("params", Some([0.0, 1e6]))],
        ),
    )
    .with_capabilities(caps.clone());
    let narrowed = study.effective_space().map_err(|e| e.to_string())?;
    let result = study.run().map_err(|e| e.to_string())?;
    let mut maxpools = 0;
    for rec in &result.history {
        ensure!(
            rec.status == TrialStatus::Complete,
            "trial {} not complete",
            rec.id
        );
        let (_, g) = study.materialize(rec).map_err(|e| e.to_string())?;
        maxpools += g.ops().filter(|op| *op == "maxpool").count();
    }
    ensure!(maxpools == 0, "{maxpools} maxpool layers");

    let enumerated = enumerate_space(&narrowed, 100_000).unwrap().count();
    let counted = count_configurations(&narrowed);
    let expected: u64 = (1..=6).map(|d| 4u64.pow(d) * 3).sum();
    ensure!(counted == BigUint::from(expected), "count {counted}");
    ensure!(enumerated as u64 == expected, "enumerated {enumerated}");
    ensure!(
        counted < count_configurations(&spec),
        "space did not shrink"
    );
    Ok(format!(
        "0 maxpool layers in 1000 trials, space 898776 -> {enumerated}"
    ))
}

/// Per study: the first trial (1-based) whose proxy score reaches the
/// top-1% score of the enumerated space, if any.
fn first_hits(sampler: SamplerConfig, budget: usize) -> Result<Vec<Option<usize>>, String> {
    let spec = conv_classifier_depths("[1, 2, 3]");
    let all: Vec<_> = enumerate_space(&spec, 10_000).unwrap().collect();
    let mut hits = Vec::new();
    for study_idx in 0..20u64 {
        let mut config = study_config(
            budget,
            sampler,
            1000 + study_idx,
            vec![objective("accuracy_proxy", None)],
        );
        config.proxy.planted_seed = 77 + study_idx;
        config.proxy.seed = study_idx;
        let proxy = SyntheticProxy::new(&spec, config.proxy.seed, config.proxy.planted_seed)
            .map_err(|e| e.to_string())?;
        let mut scores: Vec<f64> = all.iter().map(|ir| proxy.score(ir)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let cutoff = scores[(all.len() as f64 * 0.01).ceil() as usize - 1];
        let result = Study::new(spec.clone(), config)
            .run()
            .map_err(|e| e.to_string())?;
        let hit = result
            .history
            .iter()
            .position(|r| r.score.is_some_and(|s| s >= cutoff))
            .map(|i| i + 1);
        hits.push(hit);
    }
    Ok(hits)
}

fn search_effectiveness() -> Check {
    let random = first_hits(SamplerConfig::Random, 500)?;
    let found = random.iter().filter(|h| h.is_some()).count();
    let evo = first_hits(SamplerConfig::Evolutionary(EvolutionConfig::default()), 500)?;
    let mean = evo.iter().map(|h| h.unwrap_or(500) as f64).sum::<f64>() / evo.len() as f64;
    let detail = format!(
        "random reached top 1% in {found}/20 studies; evolutionary mean first hit {mean:.1} trials"
    );
    ensure!(found as f64 >= 0.99 * 20.0, "{detail}");
    ensure!(mean <= 250.0, "{detail}");
    Ok(detail)
}

fn determinism() -> Check {
    let spec = conv_classifier();
    let dir = tempfile::tempdir().unwrap();
    let criteria = vec![
        objective("accuracy_proxy", None),
        CriterionConfig {
            metric: "params".into(),
            kind: CriterionKind::SoftConstraint,
            weight: Some(0.5),
            threshold: Some(20_000.0),
            bounds: Some([0.0, 200_000.0]),
        },
    ];
    for sampler in [
        SamplerConfig::Random,
        SamplerConfig::Evolutionary(EvolutionConfig::default()),
    ] {
        let mut bytes = Vec::new();
        for (run, parallelism) in [1, 1, 4, 4].into_iter().enumerate() {
            let mut config = study_config(64, sampler, 11, criteria.clone());
            config.parallelism = parallelism;
            let result = Study::new(spec.clone(), config)
                .run()
                .map_err(|e| e.to_string())?;
            let path = dir.path().join(format!("h{run}.jsonl"));
            write_history(&path, &result.history).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        ensure!(
            bytes.iter().all(|b| *b == bytes[0]),
            "{sampler:?}: histories differ"
        );
    }
    Ok("random and evolutionary histories byte-identical at parallelism 1 and 4".into())
}

fn preprocessing_joint_search() -> Check {
    let yaml = format!(
        "{CONV_CLASSIFIER}
preprocessing:
  - block: rate
    op_candidates: downsample
    downsample: {{factor: [1, 2, 4, 5]}}
  - block: scale
    op_candidates: normalize
    normalize: {{method: zscore}}
"
    )
    .replace("[1, 2, 3, 4, 5, 6]", "[1, 2]");
    let spec = parse_spec(&yaml).map_err(|e| e.to_string())?;
    let result = Study::new(
        spec.clone(),
        study_config(
            100,
            SamplerConfig::Random,
            4,
            vec![objective("params", Some([0.0, 1e6]))],
        ),
    )
    .run()
    .map_err(|e| e.to_string())?;
    let mut factors = HashSet::new();
    let mut complete = 0;
    for rec in result
        .history
        .iter()
        .filter(|r| r.status == TrialStatus::Complete)
    {
        let ir = replay(&spec, &rec.trace).unwrap();
        let rp = ir.preproc.as_ref().unwrap();
        let want = preproc_output_shape(rp, &spec.input_shape).unwrap();
        ensure!(
            rec.model_input_shape.as_ref() == Some(&want),
            "trial {}: model input shape",
            rec.id
        );
        factors.insert(want.dims()[1]);
        complete += 1;
        for t in apply_preproc(
            rp,
            &Tensor::random(spec.input_shape.dims().to_vec(), rec.seed),
        )
        .unwrap()
        {
            let (c, l) = (t.shape[0], t.shape[1]);
            for ch in 0..c {
                let row: Vec<f64> = t.data[ch * l..(ch + 1) * l]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let mean = row.iter().sum::<f64>() / l as f64;
                let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64).sqrt();
                ensure!(
                    mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6,
                    "trial {}: mean {mean}, sd {sd}",
                    rec.id
                );
            }
        }
    }
    ensure!(
        complete > 0 && factors.len() > 1,
        "{complete} complete trials, lengths {factors:?}"
    );
    Ok(format!("{complete} complete trials, input lengths {:?}", {
        let mut f: Vec<_> = factors.into_iter().collect();
        f.sort();
        f
    }))
}

fn hardware_in_loop() -> Check {
    let spec = conv_classifier();
    let device = DeviceModel {
        jitter: 0.05,
        memory_capacity: 1 << 40,
        ..DeviceModel::default()
    };
    let run = |hil: bool| {
        let mut config = study_config(
            200,
            SamplerConfig::Random,
            21,
            vec![
                objective("accuracy_proxy", None),
                objective("latency", Some([0.0, 0.01])),
                objective("params", Some([0.0, 1e6])),
            ],
        );
        config.device = Some(device);
        config.hardware_in_loop = hil;
        let study = Study::new(spec.clone(), config);
        study.run().map(|r| (study, r)).map_err(|e| e.to_string())
    };
    let (_, analytic) = run(false)?;
    let (study, measured) = run(true)?;
    for (a, m) in analytic.history.iter().zip(&measured.history) {
        ensure!(a.trace == m.trace, "trial {}: traces differ", a.id);
        for name in ["accuracy_proxy", "params"] {
            ensure!(
                a.metric(name) == m.metric(name),
                "trial {}: {name} changed",
                a.id
            );
        }
        let (_, g) = study.materialize(m).map_err(|e| e.to_string())?;
        let est = estimate_latency(&g, &device).value;
        let lat = m.metric("latency").unwrap();
        ensure!(
            a.metric("latency") == Some(est),
            "trial {}: analytic latency",
            a.id
        );
        ensure!(
            est <= lat && lat <= 1.05 * est,
            "trial {}: {lat} outside [{est}, {}]",
            a.id,
            1.05 * est
        );
    }
    Ok("200 trials: latencies within [est, 1.05 est], traces identical".into())
}

fn main() {
    let checks: [NamedCheck; 12] = [
        ("cardinality oracle", cardinality),
        ("repeat-mode semantics", repeat_modes),
        ("shape safety", shape_safety),
        ("flops/params oracle equivalence", estimator_oracles),
        ("staged evaluation", staged_evaluation),
        ("scalarization", scalarization),
        ("codegen equivalence", codegen_equivalence),
        ("reflection filtering", reflection_filtering),
        ("search effectiveness", search_effectiveness),
        ("determinism", determinism),
        ("pre-processing joint search", preprocessing_joint_search),
        ("simulated hardware-in-the-loop", hardware_in_loop),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]",
                i + 1
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {:>2} {name}: FAIL ({detail}) [{secs:.1}s]",
                    i + 1
                );
            }
        }
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
