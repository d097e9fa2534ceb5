//! One TOML file configures every stage:
//!
//! ```toml
//! [synth]       # synthetic generator (also accepted as a flat file)
//! [data]        # bundle descriptor to load instead of synthesizing
//! [split]       # train/validation/test fractions and seed
//! [cocluster]   # user clustering and cluster-similarity solver
//! [train]       # translation scorer and SGD
//! [deep]        # feed-forward variant and its optimizer
//! [experiment]  # model kind, runs, n, q grid
//! ```
//!
//! Every key is optional. Command-line overrides use dotted paths such as
//! `train.q=20` and are applied after the file is read.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::coclustering::CoclusterConfig;
use crate::data::{SplitSpec, SynthConfig};
use crate::deep::DeepConfig;
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, PipelineSettings};
use crate::model::TrainConfig;

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "CDT_CONFIG";

const SECTIONS: [&str; 7] = ["synth", "data", "split", "cocluster", "train", "deep", "experiment"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Bundle descriptor (`bundle.toml`); relative paths resolve against the
    /// config file's directory.
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub cocluster: CoclusterConfig,
    pub train: TrainConfig,
    pub deep: DeepConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    /// Parses a sectioned config, or a flat file of synthetic-generator keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let table = if !table.is_empty() && table.keys().all(|k| !SECTIONS.contains(&k.as_str())) {
            let mut wrapped = Table::new();
            wrapped.insert("synth".into(), Value::Table(table));
            wrapped
        } else {
            table
        };
        Self::from_table(table)
    }

    fn from_table(table: Table) -> Result<Self> {
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let (Some(bundle), Some(dir)) = (&cfg.data.bundle, path.parent()) {
            if bundle.is_relative() {
                cfg.data.bundle = Some(dir.join(bundle));
            }
        }
        Ok(cfg)
    }

    /// Loads `path`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let chosen = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match chosen {
            Some(p) => Ok((Self::load(&p)?, Some(p))),
            None => Ok((Self::default(), None)),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value` overrides. Values are read as TOML
    /// literals, falling back to plain strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut root: Table = Value::try_from(&*self)
            .map_err(|e| Error::Config(e.to_string()))?
            .as_table()
            .cloned()
            .unwrap_or_default();
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!(
                    "override key {key:?} must look like section.key"
                )));
            }
            let value = parse_literal(value.trim());
            let mut table = &mut root;
            for part in &parts[..parts.len() - 1] {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Table(Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key:?} does not name a table")))?;
            }
            table.insert(parts[parts.len() - 1].to_string(), value);
        }
        *self = Self::from_table(root)?;
        Ok(())
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            split: self.split,
            cocluster: self.cocluster.clone(),
            train: self.train.clone(),
            deep: self.deep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.split.validate()?;
        self.cocluster.validate()?;
        self.train.validate()?;
        self.deep.validate()?;
        self.experiment.validate()
    }
}

fn parse_literal(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}
