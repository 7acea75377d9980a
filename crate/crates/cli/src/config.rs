//! Run configuration: a JSON file plus dotted-key overrides.

use std::path::Path;

use pcc_core::data::GenConfig;
use pcc_core::training::TrainConfig;
use pcc_core::{Error, PipelineConfig, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.pipeline.validate()?;
        self.train.validate()
    }

    /// Defaults, overlaid with `file` (if any) and then each `key=value`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let file_value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, file_value);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        // Left for deserialisation to reject as unknown.
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON, or taken as a string
/// when it is not valid JSON. Every key on the path must already exist.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for part in key.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
    }
    *cur = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = RunConfig::load(None, &["pipeline.tau=0.05".into(), "gen.count=12".into()]).unwrap();
        assert_eq!(cfg.pipeline.tau, 0.05);
        assert_eq!(cfg.gen.count, 12);
        let cfg = RunConfig::load(None, &["pipeline.ablation.disable_symnet=true".into()]).unwrap();
        assert!(cfg.pipeline.ablation.disable_symnet);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in ["pipeline.nope=1", "gen.count", "pipeline.tau=-1", "gen.families=[\"blob\"]"] {
            assert!(matches!(RunConfig::load(None, &[o.into()]), Err(Error::Config(_))), "{o}");
        }
    }

    #[test]
    fn file_then_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"steps": 7, "lr": 0.01}}"#).unwrap();
        let cfg = RunConfig::load(Some(&p), &["train.steps=9".into()]).unwrap();
        assert_eq!((cfg.train.steps, cfg.train.lr), (9, 0.01));
        std::fs::write(&p, r#"{"train": {"stepz": 7}}"#).unwrap();
        assert!(matches!(RunConfig::load(Some(&p), &[]), Err(Error::Config(_))));
    }
}
