//! HTTP facade over the pipeline. Every handler delegates to
//! `tmcsim::pipeline`; the only state kept here is the scenario store.

pub mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tmcsim::capability::{HttpFetcher, ProcessRunner};
use tmcsim::pipeline::{
    build_scenario, load_dataset, time_range, validate_live, validate_offline, BuildEnv, DataSource,
    PipelineManifest,
};
use tmcsim::validation::traci::TraciOptions;
use tmcsim::{ErrorCategory, PipelineError};
use tower_http::services::ServeDir;

pub use store::{ErrorInfo, ScenarioRecord, ScenarioStatus, Store, StoreError};

const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Compiled web UI, served for every path no route claims.
    pub static_dir: Option<PathBuf>,
    /// Count data used by `/intersections/timerange` when no scenario is named.
    pub timerange_data: Option<DataSource>,
    pub timerange_schema: Option<String>,
    /// Needed for auto-fetch manifests; `None` refuses them.
    pub http: Option<Arc<dyn HttpFetcher>>,
    /// Needed for map conversion; `None` refuses it.
    pub runner: Option<Arc<dyn ProcessRunner>>,
}

impl ServiceConfig {
    pub fn offline(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            static_dir: None,
            timerange_data: None,
            timerange_schema: None,
            http: None,
            runner: None,
        }
    }

    fn env(&self) -> BuildEnv<'_> {
        let mut env = BuildEnv::offline();
        env.http = self.http.as_deref();
        env.runner = self.runner.as_deref();
        env
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, StoreError> {
        let store = Store::open(config.data_dir.join("scenarios"))?;
        Ok(AppState { store, config: Arc::new(config) })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    category: Option<ErrorCategory>,
    hint: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), category: None, hint: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(c) = self.category {
            body["category"] = json!(c);
            body["exit_code"] = json!(c.exit_code());
        }
        if let Some(h) = self.hint {
            body["hint"] = json!(h);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::InvalidName(_) => StatusCode::BAD_REQUEST,
            StoreError::Io { .. } | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

pub fn status_for(category: ErrorCategory) -> StatusCode {
    match category {
        ErrorCategory::Upstream | ErrorCategory::Protocol | ErrorCategory::Process => StatusCode::BAD_GATEWAY,
        ErrorCategory::Io => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let category = e.category();
        ApiError { status: status_for(category), message: e.to_string(), category: Some(category), hint: Some(e.hint()) }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/scenarios", post(create_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario).put(replace_manifest).delete(delete_scenario))
        .route("/scenarios/{id}/build", post(start_build))
        .route("/scenarios/{id}/inputs/{name}", put(upload_input))
        .route("/scenarios/{id}/artifacts/{kind}", get(get_artifact))
        .route("/scenarios/{id}/validate", post(validate))
        .route("/intersections/timerange", get(get_timerange))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn parse_manifest(body: &[u8]) -> Result<PipelineManifest, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("manifest is not UTF-8"))?;
    PipelineManifest::from_json(text).map_err(ApiError::from)
}

#[derive(Serialize)]
struct RecordView {
    #[serde(flatten)]
    record: ScenarioRecord,
    building: bool,
}

fn view(state: &AppState, record: ScenarioRecord) -> Json<RecordView> {
    let building = state.store.is_building(&record.id);
    Json(RecordView { record, building })
}

async fn create_scenario(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<RecordView>), ApiError> {
    let manifest = parse_manifest(&body)?;
    let record = state.store.create(manifest)?;
    Ok((StatusCode::CREATED, view(&state, record)))
}

async fn list_scenarios(State(state): State<AppState>) -> Result<Json<Vec<RecordView>>, ApiError> {
    let records = state.store.list()?;
    Ok(Json(records.into_iter().map(|r| view(&state, r).0).collect()))
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RecordView>, ApiError> {
    let record = state.store.get(&id)?;
    Ok(view(&state, record))
}

fn conflict_if_building(state: &AppState, id: &str) -> Result<(), ApiError> {
    if state.store.is_building(id) {
        Err(ApiError::new(StatusCode::CONFLICT, format!("a build of scenario '{id}' is running")))
    } else {
        Ok(())
    }
}

async fn replace_manifest(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RecordView>, ApiError> {
    let manifest = parse_manifest(&body)?;
    conflict_if_building(&state, &id)?;
    let record = state.store.update(&id, |r| {
        r.manifest = manifest;
        r.status = ScenarioStatus::Draft;
        r.artifacts.clear();
        r.diagnostics.clear();
        r.error = None;
        r.clone()
    })?;
    let _ = std::fs::remove_dir_all(state.store.artifacts_dir(&id));
    Ok(view(&state, record))
}

async fn delete_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    conflict_if_building(&state, &id)?;
    state.store.delete(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn upload_input(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let path = state.store.save_input(&id, &name, &body)?;
    Ok((StatusCode::CREATED, Json(json!({ "name": name, "bytes": body.len(), "path": path }))))
}

fn run_build(state: &AppState, id: &str, manifest: &PipelineManifest) -> Result<(), StoreError> {
    let out_dir = state.store.artifacts_dir(id);
    let _ = std::fs::remove_dir_all(&out_dir);
    let result = build_scenario(manifest, &state.store.inputs_dir(id), &out_dir, &state.config.env());
    state.store.update(id, |r| match &result {
        Ok(built) => {
            r.status = ScenarioStatus::Built;
            r.artifacts = BTreeMap::from([
                ("network".to_string(), built.artifacts.network.to_string_lossy().into_owned()),
                ("routes".to_string(), built.artifacts.routes.to_string_lossy().into_owned()),
                ("config".to_string(), built.artifacts.config.to_string_lossy().into_owned()),
            ]);
            r.diagnostics = built.notes.clone();
            r.diagnostics.extend(built.dropped.iter().map(|d| {
                format!("dropped {} {} bin {} ({} vehicles): {}", d.intersection_id, d.key, d.bin_index, d.count, d.message)
            }));
            r.error = None;
        }
        Err(e) => {
            r.status = ScenarioStatus::Failed;
            r.artifacts.clear();
            r.diagnostics = vec![format!("[{}] {e}", e.category())];
            r.error = Some(ErrorInfo::from(e));
        }
    })
}

async fn start_build(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<RecordView>), ApiError> {
    let record = state.store.get(&id)?;
    let slot = state
        .store
        .try_start_build(&id)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("a build of scenario '{id}' is already running")))?;
    let worker_state = state.clone();
    let manifest = record.manifest.clone();
    let worker_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let _slot = slot;
        if let Err(e) = run_build(&worker_state, &worker_id, &manifest) {
            eprintln!("build of {worker_id}: could not record result: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(RecordView { record, building: true })))
}

fn content_type(kind: &str) -> &'static str {
    match kind {
        "report" => "application/json",
        _ => "application/xml",
    }
}

async fn get_artifact(
    State(state): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let record = state.store.get(&id)?;
    let path = record
        .artifacts
        .get(&kind)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("scenario '{id}' has no '{kind}' artifact")))?;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("artifact '{kind}' unreadable: {e}")))?;
    let file_name = std::path::Path::new(path).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok((
        [
            (header::CONTENT_TYPE, content_type(&kind).to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file_name}\"")),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateRequest {
    #[serde(default)]
    vehroute_xml: Option<String>,
    #[serde(default)]
    traci_endpoint: Option<String>,
    #[serde(default)]
    steps: Option<u32>,
}

/// JSON bodies name a TraCI endpoint or embed the vehroute XML; any other
/// body is taken as the vehroute file itself.
async fn validate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let record = state.store.get(&id)?;
    let routes_path = record
        .artifacts
        .get("routes")
        .cloned()
        .ok_or_else(|| ApiError::bad_request(format!("scenario '{id}' is not built")))?;
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let request = if is_json {
        serde_json::from_slice::<ValidateRequest>(&body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))?
    } else {
        let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("vehroute upload is not UTF-8"))?;
        ValidateRequest { vehroute_xml: Some(text), traci_endpoint: None, steps: None }
    };
    let duration = record.manifest.window.map(|w| w.duration_s()).unwrap_or(0);
    let steps = request.steps.unwrap_or_else(|| (duration as f64 / record.manifest.step_length).ceil() as u32);

    let report_path = state.store.artifacts_dir(&id).join("report.json");
    let outcome = blocking(move || -> Result<_, PipelineError> {
        let routes = std::fs::read_to_string(&routes_path).map_err(|e| PipelineError::io(&routes_path, e))?;
        let outcome = match (request.vehroute_xml, request.traci_endpoint) {
            (Some(xml), None) => validate_offline(&routes, &xml)?,
            (None, Some(endpoint)) => validate_live(&routes, &endpoint, steps, &TraciOptions::default())?,
            _ => return Err(PipelineError::Usage("give exactly one of vehroute_xml and traci_endpoint".into())),
        };
        let json = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
        std::fs::write(&report_path, json).map_err(|e| PipelineError::io(&report_path, e))?;
        Ok((outcome, report_path))
    })
    .await??;
    let (outcome, report_path) = outcome;
    state.store.update(&id, |r| {
        r.artifacts.insert("report".into(), report_path.to_string_lossy().into_owned());
    })?;
    Ok(Json(outcome).into_response())
}

#[derive(Debug, Deserialize)]
struct TimeRangeQuery {
    ids: String,
    #[serde(default)]
    scenario: Option<String>,
}

async fn get_timerange(State(state): State<AppState>, Query(q): Query<TimeRangeQuery>) -> Result<Response, ApiError> {
    let ids: Vec<String> = q.ids.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if ids.is_empty() {
        return Err(ApiError::bad_request("ids must list at least one intersection"));
    }
    let (manifest, base_dir) = match &q.scenario {
        Some(sid) => {
            let mut m = state.store.get(sid)?.manifest;
            m.intersection_ids = ids;
            (m, state.store.inputs_dir(sid))
        }
        None => {
            let data = state
                .config
                .timerange_data
                .clone()
                .ok_or_else(|| ApiError::bad_request("no default data source configured; pass scenario=<id>"))?;
            let m = PipelineManifest::from_json(
                &json!({ "intersection_ids": ids, "data": data, "schema": state.config.timerange_schema }).to_string(),
            )?;
            (m, state.config.data_dir.clone())
        }
    };
    let worker = state.clone();
    let report = blocking(move || -> Result<_, PipelineError> {
        let ds = load_dataset(&manifest, &base_dir, &worker.config.env())?;
        Ok(time_range(&ds, &manifest.intersection_ids))
    })
    .await??;
    Ok(Json(report).into_response())
}
