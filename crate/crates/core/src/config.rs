//! Global configuration file shared by the CLI subcommands.
//!
//! TOML or JSON, auto-detected. Every section is optional; flags override
//! file values, which override built-in defaults. Table paths are resolved
//! relative to the working directory unless absolute.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::qa::{AffordanceTable, ClassTable, Palette, QaConfig, QaTables, RoomRules};
use crate::unprocess::{CcmBank, SamplingConfig, SensorProfile};

/// Optional overrides for the built-in data tables.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct TablePaths {
    pub sensor_profile: Option<PathBuf>,
    pub ccm_bank: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub rooms: Option<PathBuf>,
    pub affordances: Option<PathBuf>,
    pub palette: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default)]
pub struct Config {
    pub sampling: SamplingConfig,
    pub qa: QaConfig,
    pub tables: TablePaths,
}

impl Config {
    /// Parses TOML first, then JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Config = match toml::from_str(&text) {
            Ok(config) => config,
            Err(toml_err) => serde_json::from_str(&text).map_err(|json_err| {
                Error::Config(format!(
                    "{} parses as neither TOML ({toml_err}) nor JSON ({json_err})",
                    path.display()
                ))
            })?,
        };
        config.sampling.validate()?;
        Ok(config)
    }

    pub fn sensor_profile(&self) -> Result<SensorProfile> {
        match &self.tables.sensor_profile {
            Some(path) => SensorProfile::load(path),
            None => Ok(SensorProfile::builtin()),
        }
    }

    pub fn ccm_bank(&self) -> Result<CcmBank> {
        match &self.tables.ccm_bank {
            Some(path) => CcmBank::load(path),
            None => Ok(CcmBank::builtin()),
        }
    }

    pub fn qa_tables(&self) -> Result<QaTables> {
        let tables = QaTables {
            classes: match &self.tables.classes {
                Some(path) => ClassTable::load(path)?,
                None => ClassTable::builtin(),
            },
            rooms: match &self.tables.rooms {
                Some(path) => RoomRules::load(path)?,
                None => RoomRules::builtin(),
            },
            affordances: match &self.tables.affordances {
                Some(path) => AffordanceTable::load(path)?,
                None => AffordanceTable::builtin(),
            },
            palette: match &self.tables.palette {
                Some(path) => Palette::load(path)?,
                None => Palette::builtin(),
            },
        };
        tables.validate()?;
        Ok(tables)
    }
}
