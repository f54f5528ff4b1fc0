//! Config files and the provenance hash written into every output table.

use std::path::{Path, PathBuf};

use miwols::data::{ColumnRoles, ModelSpec, Term};
use miwols::estimators::{select_methods, Method};
use miwols::weights::WeightKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Reads TOML, or JSON when the file name ends in `.json`.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDecl {
    pub treatment: Vec<Term>,
    pub treatment_free: Vec<Term>,
    #[serde(default)]
    pub blip: Vec<Term>,
}

impl ModelDecl {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.treatment.clone(), self.treatment_free.clone(), self.blip.clone())
    }
}

/// Config of `estimate` and of the optional dataset in `balance-check`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// CSV path, relative to the config file.
    pub input: PathBuf,
    pub columns: ColumnRoles,
    pub model: ModelDecl,
    #[serde(default)]
    pub estimators: Option<Vec<String>>,
    #[serde(default)]
    pub schemes: Option<Vec<WeightKind>>,
}

impl EstimateConfig {
    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        Ok(select_methods(self.estimators.as_deref(), self.schemes.as_deref())?)
    }

    pub fn input_path(&self, config_path: &Path) -> PathBuf {
        match config_path.parent() {
            Some(dir) if self.input.is_relative() => dir.join(&self.input),
            _ => self.input.clone(),
        }
    }
}

/// Run size of `replicate-table1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Config {
    pub n: usize,
    pub reps: usize,
    pub base_seed: u64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            n: 500,
            reps: 1000,
            base_seed: miwols::sim::ScenarioConfig::default().base_seed,
        }
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`. Worker count and
/// output directory never enter it, so runs that differ only in those
/// carry the same hash.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes to JSON");
    hex::encode(Sha256::digest(&json))
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
