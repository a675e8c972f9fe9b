//! Directory-backed scenario store: `<root>/<id>/record.json`, uploaded
//! inputs under `inputs/`, build output under `artifacts/`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tmcsim::pipeline::PipelineManifest;
use tmcsim::ErrorCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioStatus {
    Draft,
    Built,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub category: ErrorCategory,
    pub exit_code: i32,
    pub message: String,
    pub hint: String,
}

impl From<&tmcsim::PipelineError> for ErrorInfo {
    fn from(e: &tmcsim::PipelineError) -> Self {
        ErrorInfo { category: e.category(), exit_code: e.category().exit_code(), message: e.to_string(), hint: e.hint() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub manifest: PipelineManifest,
    pub status: ScenarioStatus,
    /// Artifact kind to file path.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown scenario '{0}'")]
    NotFound(String),
    #[error("invalid name '{0}'")]
    InvalidName(String),
    #[error("scenario store i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt scenario record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Ids and upload names are single path components of plain characters.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    building: Mutex<HashSet<String>>,
}

/// Held while a build runs; dropping it frees the slot.
pub struct BuildSlot {
    store: Arc<Store>,
    id: String,
}

impl Drop for BuildSlot {
    fn drop(&mut self) {
        self.store.building.lock().unwrap().remove(&self.id);
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Arc<Store>, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Arc::new(Store { root, locks: Mutex::new(HashMap::new()), building: Mutex::new(HashSet::new()) }))
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    pub fn scenario_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn inputs_dir(&self, id: &str) -> PathBuf {
        self.scenario_dir(id).join("inputs")
    }

    pub fn artifacts_dir(&self, id: &str) -> PathBuf {
        self.scenario_dir(id).join("artifacts")
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.scenario_dir(id).join("record.json")
    }

    fn check_id(id: &str) -> Result<(), StoreError> {
        if valid_name(id) {
            Ok(())
        } else {
            Err(StoreError::InvalidName(id.to_string()))
        }
    }

    fn read_unlocked(&self, id: &str) -> Result<ScenarioRecord, StoreError> {
        let path = self.record_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { path, message: e.to_string() })
    }

    fn write_unlocked(&self, record: &ScenarioRecord) -> Result<(), StoreError> {
        let dir = self.scenario_dir(&record.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = self.record_path(&record.id);
        let tmp = dir.join("record.json.tmp");
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn create(&self, manifest: PipelineManifest) -> Result<ScenarioRecord, StoreError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let record = ScenarioRecord {
            id: id.clone(),
            manifest,
            status: ScenarioStatus::Draft,
            artifacts: BTreeMap::new(),
            diagnostics: Vec::new(),
            error: None,
        };
        let lock = self.lock_for(&id);
        let _g = lock.lock().unwrap();
        self.write_unlocked(&record)?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<ScenarioRecord, StoreError> {
        Self::check_id(id).map_err(|_| StoreError::NotFound(id.to_string()))?;
        let lock = self.lock_for(id);
        let _g = lock.lock().unwrap();
        self.read_unlocked(id)
    }

    pub fn list(&self) -> Result<Vec<ScenarioRecord>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("record.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        ids.iter().map(|id| self.get(id)).collect()
    }

    /// Read-modify-write under the scenario's lock.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut ScenarioRecord) -> T) -> Result<T, StoreError> {
        Self::check_id(id).map_err(|_| StoreError::NotFound(id.to_string()))?;
        let lock = self.lock_for(id);
        let _g = lock.lock().unwrap();
        let mut record = self.read_unlocked(id)?;
        let out = f(&mut record);
        self.write_unlocked(&record)?;
        Ok(out)
    }

    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        Self::check_id(id).map_err(|_| StoreError::NotFound(id.to_string()))?;
        let lock = self.lock_for(id);
        let _g = lock.lock().unwrap();
        self.read_unlocked(id)?;
        let dir = self.scenario_dir(id);
        fs::remove_dir_all(&dir).map_err(io_err(&dir))
    }

    pub fn save_input(&self, id: &str, name: &str, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        self.get(id)?;
        let dir = self.inputs_dir(id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn is_building(&self, id: &str) -> bool {
        self.building.lock().unwrap().contains(id)
    }

    /// Claim the build slot, or `None` if a build is already running.
    pub fn try_start_build(self: &Arc<Self>, id: &str) -> Option<BuildSlot> {
        if self.building.lock().unwrap().insert(id.to_string()) {
            Some(BuildSlot { store: Arc::clone(self), id: id.to_string() })
        } else {
            None
        }
    }
}
