//! Resolution of preset names and configuration files.

use std::path::{Path, PathBuf};

use headwise::harness::{ToyTask, TrainConfig, REGISTERED_TASKS};
use headwise::planner::{builtin_plan, custom_plan, REGISTERED_PLANS};
use headwise::{BudgetPlan, Error, ModelDims};
use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses JSON, reporting the failing field path.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Parse {
            path: path.to_path_buf(),
            message: format!("at `{field}`: {}", e.into_inner()),
        }
    })
}

/// A preset name (`gpt2-small`, `toy`), an inline JSON object, or a JSON file.
pub fn dims(spec: &str) -> Result<ModelDims> {
    let trimmed = spec.trim_start();
    if trimmed.starts_with('{') {
        return parse_json(Path::new("--dims"), spec);
    }
    match ModelDims::preset(spec) {
        Ok(d) => Ok(d),
        Err(lookup) if !Path::new(spec).is_file() => Err(lookup.into()),
        Err(_) => parse_json(Path::new(spec), &read(Path::new(spec))?),
    }
}

/// Whether `spec` names a file rather than a preset.
pub fn is_path(spec: &str) -> bool {
    Path::new(spec).is_file()
}

/// A registered plan built at `dims`, or a plan file re-validated at `dims`
/// when given.
pub fn plan(spec: &str, dims: Option<ModelDims>) -> Result<BudgetPlan> {
    if REGISTERED_PLANS.contains(&spec) {
        return Ok(builtin_plan(spec, dims.unwrap_or_else(ModelDims::gpt2_small))?);
    }
    if is_path(spec) {
        let plan = custom_plan(&read(Path::new(spec))?).map_err(|e| in_file(spec, e))?;
        return Ok(match dims {
            Some(d) => plan.with_dims(d)?,
            None => plan,
        });
    }
    Err(Error::Lookup {
        what: "plan preset",
        name: spec.to_string(),
        registered: REGISTERED_PLANS.iter().map(|s| s.to_string()).collect(),
    }
    .into())
}

fn in_file(path: &str, e: Error) -> CliError {
    match e {
        Error::Config { .. } => CliError::Parse {
            path: PathBuf::from(path),
            message: e.to_string(),
        },
        other => other.into(),
    }
}

/// A registered task name or a task file.
pub fn task(spec: &str) -> Result<ToyTask> {
    let task = if is_path(spec) {
        parse_json(Path::new(spec), &read(Path::new(spec))?)?
    } else if REGISTERED_TASKS.contains(&spec) {
        ToyTask::preset(spec)?
    } else {
        return Err(Error::Lookup {
            what: "task",
            name: spec.to_string(),
            registered: REGISTERED_TASKS.iter().map(|s| s.to_string()).collect(),
        }
        .into());
    };
    task.validate().map_err(|e| in_file(spec, e))?;
    Ok(task)
}

/// Training settings from a file, or the defaults.
pub fn train_config(path: Option<&Path>) -> Result<TrainConfig> {
    let cfg: TrainConfig = match path {
        Some(p) => parse_json(p, &read(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.validate()
        .map_err(|e| in_file(&path.map_or("train config".into(), |p| p.display().to_string()), e))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_from_preset_and_inline_json() {
        assert_eq!(dims("toy").unwrap(), ModelDims::toy());
        let d = dims(r#"{"n_layers": 1, "n_heads": 2, "head_dim": 3}"#).unwrap();
        assert_eq!((d.n_layers, d.n_heads, d.head_dim, d.model_dim), (1, 2, 3, 6));
        assert!(matches!(dims("huge"), Err(CliError::Core(Error::Lookup { .. }))));
    }

    #[test]
    fn inline_dims_report_the_field() {
        let err = dims(r#"{"n_layers": 1, "n_heads": "two", "head_dim": 3}"#).unwrap_err();
        assert!(err.to_string().contains("n_heads"), "{err}");
    }

    #[test]
    fn registered_plans_take_the_requested_dims() {
        let p = plan("lora-4", Some(ModelDims::toy())).unwrap();
        assert_eq!(p.dims, ModelDims::toy());
        assert_eq!(plan("lora-4", None).unwrap().dims, ModelDims::gpt2_small());
        let err = plan("lora-5", None).unwrap_err();
        assert!(err.to_string().contains("kernel-wise-mq"), "{err}");
    }

    #[test]
    fn registered_tasks_and_default_config() {
        assert_eq!(task("null").unwrap().teacher_scale, 0.0);
        assert!(task("nonsense").is_err());
        assert_eq!(train_config(None).unwrap(), TrainConfig::default());
    }
}
