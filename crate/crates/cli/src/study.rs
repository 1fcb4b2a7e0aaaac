//! Study files: a search-space path, an output directory and the study
//! configuration, all in one YAML document.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use nasforge_core::search::{EvolutionConfig, SamplerConfig};
use nasforge_core::StudyConfig;
use serde_yaml::{Mapping, Value};

pub struct StudyFile {
    /// Search-space YAML, resolved against the study file's directory.
    pub space: PathBuf,
    pub out: Option<PathBuf>,
    pub config: StudyConfig,
}

#[derive(Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<usize>,
    pub sampler: Option<String>,
    pub parallelism: Option<usize>,
    pub hardware_in_loop: bool,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<StudyFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut doc: Mapping = serde_yaml::from_str(&text)
        .with_context(|| format!("{}: not a YAML mapping", path.display()))?;

    let space = match doc.remove("space") {
        Some(Value::String(s)) => PathBuf::from(s),
        Some(_) => bail!("{}: `space` must be a path", path.display()),
        None => bail!("{}: missing `space`", path.display()),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let space = base.join(space);
    if !space.is_file() {
        bail!(
            "{}: search space {} does not exist",
            path.display(),
            space.display()
        );
    }
    let out = match doc.remove("out") {
        Some(Value::String(s)) => Some(base.join(s)),
        Some(_) => bail!("{}: `out` must be a path", path.display()),
        None => None,
    };

    if let Some(Value::String(kind)) = doc.get("sampler").cloned() {
        doc.insert("sampler".into(), sampler_value(&kind)?);
    }
    if let Some(kind) = &overrides.sampler {
        doc.insert("sampler".into(), sampler_value(kind)?);
    }
    if let Some(seed) = overrides.seed {
        doc.insert("seed".into(), seed.into());
    }
    if let Some(budget) = overrides.budget {
        doc.insert("budget".into(), budget.into());
    }
    if let Some(p) = overrides.parallelism {
        doc.insert("parallelism".into(), p.into());
    }
    if overrides.hardware_in_loop {
        doc.insert("hardware_in_loop".into(), true.into());
    }

    let config: StudyConfig = serde_yaml::from_value(Value::Mapping(doc))
        .with_context(|| format!("{}: invalid study", path.display()))?;
    config
        .validate()
        .with_context(|| format!("{}: invalid study", path.display()))?;
    Ok(StudyFile {
        space,
        out: overrides.out.clone().or(out),
        config,
    })
}

/// `random` / `evolutionary` as shorthand for a sampler with defaults.
fn sampler_value(kind: &str) -> anyhow::Result<Value> {
    let sampler = match kind {
        "random" => SamplerConfig::Random,
        "evolutionary" => SamplerConfig::Evolutionary(EvolutionConfig::default()),
        other => {
            return Err(anyhow!(
                "unknown sampler `{other}` (random or evolutionary)"
            ))
        }
    };
    Ok(serde_yaml::to_value(sampler)?)
}
