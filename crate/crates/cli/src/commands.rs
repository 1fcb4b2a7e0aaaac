use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nasforge_core::backend::{export_json, import_json, CGenerator, Generator, JsonGenerator};
use nasforge_core::builder::describe;
use nasforge_core::sampler::parameter_keys;
use nasforge_core::search::{trial_seed, write_history, Study, StudyResult, TrialStatus};
use nasforge_core::{
    count_configurations, init_params, parse_spec, sample_architecture, ModelGraph, RandomSource,
    Registry, SearchSpaceSpec,
};

use crate::study::{self, Overrides};
use crate::Target;

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_space(path: &Path) -> anyhow::Result<SearchSpaceSpec> {
    let text = read(path)?;
    parse_spec(&text).with_context(|| path.display().to_string())
}

pub fn inspect(path: &Path, sample: Option<usize>, seed: u64) -> anyhow::Result<()> {
    if path.extension().is_some_and(|e| e == "json") {
        let (graph, weights) = import_json(&read(path)?, &Registry::builtin())
            .with_context(|| path.display().to_string())?;
        println!(
            "valid graph; {} layers, weights {}",
            graph.layers.len(),
            if weights.is_some() {
                "embedded"
            } else {
                "absent"
            }
        );
        print!("{}", layer_table(&graph));
        return Ok(());
    }

    let spec = load_space(path)?;
    println!("valid; {} configurations", count_configurations(&spec));
    print!("{}", key_tree(&spec));
    for i in 0..sample.unwrap_or(0) {
        let ir = sample_architecture(&spec, &mut RandomSource::new(trial_seed(seed, i)))?;
        println!("sample {i}: {}", ir.summary());
    }
    Ok(())
}

/// Decision keys as an indented tree of their dotted segments.
fn key_tree(spec: &SearchSpaceSpec) -> String {
    let mut out = String::new();
    let mut prev: Vec<&str> = Vec::new();
    let keys = parameter_keys(spec);
    for key in &keys {
        let segs: Vec<&str> = key.key.split('.').collect();
        let shared = prev.iter().zip(&segs).take_while(|(a, b)| a == b).count();
        let shared = shared.min(segs.len() - 1);
        for (depth, seg) in segs.iter().enumerate().skip(shared) {
            let indent = "  ".repeat(depth + 1);
            if depth + 1 == segs.len() {
                let choices: Vec<String> = key.choices.iter().map(|c| c.to_string()).collect();
                writeln!(out, "{indent}{seg}: {{{}}}", choices.join(", ")).unwrap();
            } else {
                writeln!(out, "{indent}{seg}").unwrap();
            }
        }
        prev = segs;
    }
    out
}

fn layer_table(graph: &ModelGraph) -> String {
    let summary = describe(graph);
    let mut out = String::new();
    writeln!(
        out,
        "{:>3}  {:<10} {:<10} {:<14} {:<14} {:>10} {:>12}  params",
        "#", "op", "role", "input", "output", "weights", "flops"
    )
    .unwrap();
    for row in &summary.rows {
        writeln!(
            out,
            "{:>3}  {:<10} {:<10} {:<14} {:<14} {:>10} {:>12}  {}",
            row.index,
            row.op,
            format!("{:?}", row.role).to_lowercase(),
            row.input.to_string(),
            row.output.to_string(),
            row.param_count,
            row.flops,
            row.params
        )
        .unwrap();
    }
    writeln!(
        out,
        "total: {} parameters, {} flops",
        summary.total_params, summary.total_flops
    )
    .unwrap();
    out
}

pub fn explore(path: &Path, overrides: &Overrides) -> anyhow::Result<()> {
    let file = study::load(path, overrides)?;
    let spec = load_space(&file.space)?;
    let out = file.out.unwrap_or_else(|| PathBuf::from("nasforge-out"));
    let study = Study::new(spec, file.config);
    log::info!("running {} trials", study.config().budget);
    let result = study.run()?;

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    write_history(&out.join("history.jsonl"), &result.history).context("cannot write history")?;
    let (_, graph) = study.materialize(&result.best)?;
    let params = init_params(&graph, result.best.seed);
    let doc = export_json(&graph, Some(&params));
    fs::write(
        out.join("best.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )
    .context("cannot write best.json")?;

    let summary = summary(&result, &graph);
    fs::write(out.join("summary.txt"), &summary).context("cannot write summary")?;
    print!("{summary}");
    Ok(())
}

fn summary(result: &StudyResult, graph: &ModelGraph) -> String {
    let count = |s: TrialStatus| result.history.iter().filter(|r| r.status == s).count();
    let best = &result.best;
    let mut out = format!(
        "trials: {} ({} complete, {} pruned, {} failed)\nbest: trial {} score {:.6}\n",
        result.history.len(),
        count(TrialStatus::Complete),
        count(TrialStatus::Pruned),
        count(TrialStatus::Failed),
        best.id,
        best.score.unwrap_or(f64::NAN),
    );
    for m in &best.metrics {
        writeln!(out, "  {:<16} {:>14.6e} {}", m.name, m.value, m.unit).unwrap();
    }
    out.push_str(&layer_table(graph));
    out
}

pub fn emit(path: &Path, target: Target, out: &Path, without: &[String]) -> anyhow::Result<()> {
    let registry = Registry::builtin();
    let (graph, weights) =
        import_json(&read(path)?, &registry).with_context(|| path.display().to_string())?;
    let params = weights.unwrap_or_else(|| {
        log::warn!(
            "{} carries no weights; initializing with seed 0",
            path.display()
        );
        init_params(&graph, 0)
    });
    let generator: Box<dyn Generator> = match target {
        Target::C => Box::new(
            without
                .iter()
                .fold(CGenerator::new(), |g, op| g.without(op)),
        ),
        Target::Json => {
            let mut g = JsonGenerator::new(&registry);
            for op in without {
                g = g.without(op)?;
            }
            Box::new(g)
        }
    };
    let artifact = generator.generate(&graph, &params)?;
    artifact
        .write_to(out)
        .with_context(|| format!("cannot write to {}", out.display()))?;
    for (name, _) in &artifact.files {
        log::info!("wrote {}", out.join(name).display());
    }
    Ok(())
}
