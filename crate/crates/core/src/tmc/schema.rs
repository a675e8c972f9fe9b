//! Column layout of count files.
//!
//! A [`SchemaMapping`] names the id and timestamp columns and one column per
//! [`MovementKey`]. Layouts are shipped as JSON data (see
//! `data/toronto_tmc_schema.json`) and expanded from a column-name template.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MovementKey, TmcError};
use crate::mapper::Cardinal;
use crate::tmc::{Turn, VehicleClass};

const TORONTO_SCHEMA_JSON: &str = include_str!("../../data/toronto_tmc_schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub id_column: String,
    pub timestamp_column: String,
    /// chrono format string; `None` tries the common ISO-8601 variants.
    pub timestamp_format: Option<String>,
    pub bin_seconds: u32,
    pub lon_column: Option<String>,
    pub lat_column: Option<String>,
    /// `None` marks a movement the source does not record; it reads as zero.
    pub columns: BTreeMap<MovementKey, Option<String>>,
}

/// Template form of a schema, as stored on disk.
#[derive(Debug, Clone, Deserialize)]
pub struct SchemaSpec {
    pub id_column: String,
    pub timestamp_column: String,
    #[serde(default)]
    pub timestamp_format: Option<String>,
    #[serde(default = "default_bin_seconds")]
    pub bin_seconds: u32,
    #[serde(default)]
    pub lon_column: Option<String>,
    #[serde(default)]
    pub lat_column: Option<String>,
    /// e.g. `"{approach}b_{vclass}_{turn}"`.
    pub movement_template: String,
    pub approach_tokens: BTreeMap<Cardinal, String>,
    pub turn_tokens: BTreeMap<Turn, String>,
    pub vclass_tokens: BTreeMap<VehicleClass, String>,
    #[serde(default)]
    pub absent: Vec<MovementKey>,
    #[serde(default)]
    pub overrides: BTreeMap<MovementKey, String>,
}

fn default_bin_seconds() -> u32 {
    900
}

impl SchemaSpec {
    pub fn resolve(&self) -> Result<SchemaMapping, TmcError> {
        if self.bin_seconds == 0 {
            return Err(TmcError::InvalidSchema("bin_seconds must be positive".into()));
        }
        let mut columns = BTreeMap::new();
        for key in MovementKey::all() {
            if self.absent.contains(&key) {
                columns.insert(key, None);
                continue;
            }
            if let Some(name) = self.overrides.get(&key) {
                columns.insert(key, Some(name.clone()));
                continue;
            }
            let token = |found: Option<&String>, what: &str| {
                found.cloned().ok_or_else(|| TmcError::InvalidSchema(format!("no {what} token for movement {key}")))
            };
            let name = self
                .movement_template
                .replace("{approach}", &token(self.approach_tokens.get(&key.approach), "approach")?)
                .replace("{turn}", &token(self.turn_tokens.get(&key.turn), "turn")?)
                .replace("{vclass}", &token(self.vclass_tokens.get(&key.vclass), "vclass")?);
            columns.insert(key, Some(name));
        }
        Ok(SchemaMapping {
            id_column: self.id_column.clone(),
            timestamp_column: self.timestamp_column.clone(),
            timestamp_format: self.timestamp_format.clone(),
            bin_seconds: self.bin_seconds,
            lon_column: self.lon_column.clone(),
            lat_column: self.lat_column.clone(),
            columns,
        })
    }
}

impl SchemaMapping {
    /// Accepts either the template form or a fully expanded mapping.
    pub fn from_json(text: &str) -> Result<SchemaMapping, TmcError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TmcError::InvalidSchema(e.to_string()))?;
        let mapping = if value.get("movement_template").is_some() {
            serde_json::from_value::<SchemaSpec>(value)
                .map_err(|e| TmcError::InvalidSchema(e.to_string()))?
                .resolve()?
        } else {
            serde_json::from_value::<SchemaMapping>(value).map_err(|e| TmcError::InvalidSchema(e.to_string()))?
        };
        mapping.validate()?;
        Ok(mapping)
    }

    /// The bundled City of Toronto turning-movement-count layout.
    pub fn toronto() -> SchemaMapping {
        SchemaMapping::from_json(TORONTO_SCHEMA_JSON).expect("bundled schema is valid")
    }

    /// The layout written by [`super::write_tmc_csv`] by default: one column
    /// per movement named after the key (`NL_car`, ...).
    pub fn canonical() -> SchemaMapping {
        SchemaMapping {
            id_column: "intersection_id".into(),
            timestamp_column: "bin_start".into(),
            timestamp_format: None,
            bin_seconds: 900,
            lon_column: Some("lon".into()),
            lat_column: Some("lat".into()),
            columns: MovementKey::all().map(|k| (k, Some(k.to_string()))).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), TmcError> {
        if self.bin_seconds == 0 {
            return Err(TmcError::InvalidSchema("bin_seconds must be positive".into()));
        }
        for key in MovementKey::all() {
            if !self.columns.contains_key(&key) {
                return Err(TmcError::InvalidSchema(format!("movement {key} neither mapped nor declared absent")));
            }
        }
        Ok(())
    }

    pub fn column_for(&self, key: &MovementKey) -> Option<&str> {
        self.columns.get(key).and_then(|c| c.as_deref())
    }
}
