//! The single serializable run configuration: a TOML file merged over the
//! defaults, then `section.key=value` overrides. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{EvalConfig, Split, SuiteSpec, TrainConfig};
use crate::models::ModelConfig;
use crate::scheduler::{CostModel, PipelineConfig};
use crate::world::{CameraModel, ExpertConfig, ScenarioKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct WorldConfig {
    pub camera: CameraModel,
    pub expert: ExpertConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kinds: Vec<ScenarioKind>,
    pub episodes: usize,
    /// Staleness of the training pairs, in world ticks.
    pub delta_ticks: usize,
    /// Truncates every episode; 0 plays each to its end.
    pub max_ticks: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kinds: ScenarioKind::ALL.to_vec(),
            episodes: 50,
            delta_ticks: 5,
            max_ticks: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub kinds: Vec<ScenarioKind>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub tick_ms: f64,
    pub delta_ms: f64,
    pub threaded: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            kinds: ScenarioKind::ALL.to_vec(),
            episodes: 50,
            seeds: vec![0, 1, 2],
            tick_ms: e.pipeline.tick_ms,
            delta_ms: e.pipeline.delta_ms,
            threaded: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub costs: CostModel,
    /// Scheduler settings for `bench`.
    pub schedule: PipelineConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the value of a `--set` override: TOML syntax when it parses,
/// otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then `text`, then each `key=value` in order.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(text) = text {
            let file: toml::Table = toml::from_str(text).map_err(config_err)?;
            merge(&mut tree, toml::Value::Table(file));
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form section.key=value")))?;
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let leaf = path
                .pop()
                .filter(|l| !l.is_empty())
                .ok_or_else(|| Error::Config(format!("empty key in `{o}`")))?;
            let mut node = &mut tree;
            for p in path {
                node = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a section")))?
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            node.as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a section key")))?
                .insert(leaf.to_string(), parse_value(raw.trim()));
        }
        // Round-trip through text so errors point at the offending key.
        let text = toml::to_string(&tree).map_err(config_err)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(Error::Config)?;
        self.costs.validate().map_err(Error::Config)?;
        self.schedule.validate().map_err(Error::Config)?;
        self.train.validate().map_err(Error::Config)?;
        self.eval_config().pipeline.validate().map_err(Error::Config)?;
        if !self.world.camera.is_valid() {
            return Err(Error::Config("world.camera is degenerate".into()));
        }
        if self.data.delta_ticks == 0 {
            return Err(Error::Config("data.delta_ticks must be at least 1".into()));
        }
        if self.data.kinds.is_empty() || self.eval.kinds.is_empty() {
            return Err(Error::Config("scenario kind lists must not be empty".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            costs: self.costs.clone(),
            pipeline: PipelineConfig::new(self.eval.tick_ms, self.eval.delta_ms),
            camera: self.world.camera,
            threaded: self.eval.threaded,
        }
    }

    pub fn train_suite(&self) -> SuiteSpec {
        SuiteSpec {
            kinds: self.data.kinds.clone(),
            episodes: self.data.episodes,
            split: Split::Train,
        }
    }

    pub fn eval_suite(&self) -> SuiteSpec {
        SuiteSpec {
            kinds: self.eval.kinds.clone(),
            episodes: self.eval.episodes,
            split: Split::Eval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let a = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(a, RunConfig::default());
        let b = RunConfig::resolve(Some(&a.to_toml()), &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = RunConfig::resolve(
            Some("[train]\nlr = 1e-3\n"),
            &[
                "train.lr=2e-3".into(),
                "data.kinds=[\"hard_brake\"]".into(),
                "train.steps=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.lr, 2e-3);
        assert_eq!(c.train.steps, Some(7));
        assert_eq!(c.data.kinds, vec![ScenarioKind::HardBrake]);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, set) in [
            (Some("[train]\nlrr = 1.0\n"), vec![]),
            (None, vec!["train.lrr=1".to_string()]),
        ] {
            let err = RunConfig::resolve(text, &set).unwrap_err().to_string();
            assert!(err.contains("lrr"), "{err}");
        }
        assert!(RunConfig::resolve(None, &["nosection=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::resolve(None, &["train.epochs=0".into()]).is_err());
        assert!(RunConfig::resolve(None, &["model.heads=5".into()]).is_err());
    }
}
