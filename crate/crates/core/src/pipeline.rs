//! End-to-end operations driven by a JSON manifest: time-range lookup,
//! scenario build, map fetch and validation. The command line and the HTTP
//! service are thin wrappers over these.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::capability::{HttpFetcher, ProcessRunner};
use crate::demand::{
    compile_scenario, default_vtypes, emit_routes_xml, emit_sumocfg, CarFollowModel, DemandDiagnostic, ScenarioConfig,
    VehicleTypeConfig,
};
use crate::error::PipelineError;
use crate::mapper::{bind_intersection, EdgeFilterPolicy, IntersectionBinding, DEFAULT_TOLERANCE_M};
use crate::net::{parse_network, RoadNetwork};
use crate::osm::{compute_bbox, convert_network, fetch_osm, NetconvertConfig, OsmFetchConfig, DEFAULT_BUFFER_M};
use crate::tmc::{
    available_time_range, common_spans, fetch_toronto_tmc, parse_tmc_csv, scale_counts, slice_window, ScaleFactor,
    SchemaMapping, TimeSpan, TmcDataset, TorontoApiConfig, VehicleClass,
};
use crate::validation::traci::{traci_collect_with, union_ids, TraciOptions};
use crate::validation::{
    bin_count_of, compare_all, counts_from_flows, monitored_edges, parse_route_flows, parse_vehroutes, reconstruct_counts,
    ComparisonReport,
};

pub const NET_FILE: &str = "scenario.net.xml";
pub const ROUTE_FILE: &str = "scenario.rou.xml";
pub const CONFIG_FILE: &str = "scenario.sumocfg";
pub const OSM_FILE: &str = "map.osm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Path(String),
    AutoFetch {
        #[serde(default = "default_buffer")]
        buffer_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path(String),
    AutoFetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl Window {
    pub fn duration_s(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }
}

/// Partial vehicle type; unset fields keep the class defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleTypeOverride {
    pub vclass: VehicleClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car_follow_model: Option<CarFollowModel>,
}

fn default_buffer() -> f64 {
    DEFAULT_BUFFER_M
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_M
}

fn default_step_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    pub intersection_ids: Vec<String>,
    pub network: Option<NetworkSource>,
    pub data: DataSource,
    /// `toronto`, `canonical`, or a path to a schema JSON file. Defaults to
    /// `toronto` for auto-fetched data and `canonical` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vtypes: Vec<VehicleTypeOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default = "default_tolerance")]
    pub tolerance_m: f64,
    /// Accept matches up to this distance even when beyond `tolerance_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allow_distance_m: Option<f64>,
    #[serde(default)]
    pub include_untyped_edges: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleFactor>,
    /// `[lon, lat]` per intersection id; wins over coordinates in the data.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coordinates: BTreeMap<String, [f64; 2]>,
    #[serde(default = "default_step_length")]
    pub step_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehroute_output: Option<String>,
}

impl PipelineManifest {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let m: PipelineManifest =
            serde_json::from_str(text).map_err(|e| PipelineError::Usage(format!("invalid manifest: {e}")))?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Checks that hold for every command.
    pub fn check(&self) -> Result<(), PipelineError> {
        let usage = |m: String| Err(PipelineError::Usage(m));
        if self.intersection_ids.is_empty() {
            return usage("intersection_ids must not be empty".into());
        }
        if let Some(id) = self.intersection_ids.iter().find(|id| id.trim().is_empty()) {
            return usage(format!("intersection id '{id}' is blank"));
        }
        if let Some(w) = &self.window {
            if w.start >= w.end {
                return usage(format!("window start {} must precede end {}", w.start, w.end));
            }
        }
        if !(self.tolerance_m.is_finite() && self.tolerance_m >= 0.0) {
            return usage(format!("tolerance_m must be a non-negative distance, got {}", self.tolerance_m));
        }
        if let Some(a) = self.allow_distance_m {
            if !(a.is_finite() && a >= 0.0) {
                return usage(format!("allow_distance_m must be a non-negative distance, got {a}"));
            }
        }
        if !(self.step_length > 0.0) {
            return usage(format!("step_length must be positive, got {}", self.step_length));
        }
        if let Some(NetworkSource::AutoFetch { buffer_m }) = &self.network {
            if !(buffer_m.is_finite() && *buffer_m >= 0.0) {
                return usage(format!("network buffer must be non-negative, got {buffer_m}"));
            }
        }
        Ok(())
    }

    pub fn effective_tolerance(&self) -> f64 {
        self.tolerance_m.max(self.allow_distance_m.unwrap_or(0.0))
    }

    pub fn vehicle_types(&self) -> Result<Vec<VehicleTypeConfig>, PipelineError> {
        let mut types: BTreeMap<VehicleClass, VehicleTypeConfig> =
            default_vtypes().into_iter().map(|vt| (vt.vclass, vt)).collect();
        for o in &self.vtypes {
            let vt = types.get_mut(&o.vclass).expect("defaults cover every class");
            if let Some(id) = &o.type_id {
                vt.type_id = id.clone();
            }
            if let Some(l) = o.length {
                vt.length = l;
            }
            if let Some(s) = o.sigma {
                vt.sigma = s;
            }
            if let Some(m) = o.car_follow_model {
                vt.car_follow_model = m;
            }
            vt.validate()?;
        }
        Ok(types.into_values().collect())
    }
}

/// External capabilities. Auto-fetch needs `http`; map conversion and
/// simulator launch need `runner`. Absent capabilities make those paths fail
/// instead of silently touching the network or spawning processes.
#[derive(Clone, Default)]
pub struct BuildEnv<'a> {
    pub http: Option<&'a dyn HttpFetcher>,
    pub runner: Option<&'a dyn ProcessRunner>,
    pub toronto: TorontoApiConfig,
    pub osm: OsmFetchConfig,
    pub netconvert: NetconvertConfig,
}

impl<'a> BuildEnv<'a> {
    pub fn offline() -> Self {
        BuildEnv::default()
    }

    fn http(&self, what: &str) -> Result<&'a dyn HttpFetcher, PipelineError> {
        self.http.ok_or_else(|| PipelineError::Usage(format!("{what} needs network access, which is not enabled")))
    }

    fn runner(&self, what: &str) -> Result<&'a dyn ProcessRunner, PipelineError> {
        self.runner.ok_or_else(|| PipelineError::Usage(format!("{what} needs to run an external process, which is not enabled")))
    }
}

fn resolve(base_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn load_schema(name: Option<&str>, auto_fetch: bool, base_dir: &Path) -> Result<SchemaMapping, PipelineError> {
    match name {
        None if auto_fetch => Ok(SchemaMapping::toronto()),
        None | Some("canonical") => Ok(SchemaMapping::canonical()),
        Some("toronto") => Ok(SchemaMapping::toronto()),
        Some(path) => Ok(SchemaMapping::from_json(&read_text(&resolve(base_dir, path))?)?),
    }
}

/// Count data for the manifest's intersections, from file or the open data API.
pub fn load_dataset(manifest: &PipelineManifest, base_dir: &Path, env: &BuildEnv) -> Result<TmcDataset, PipelineError> {
    let auto = matches!(manifest.data, DataSource::AutoFetch);
    let schema = load_schema(manifest.schema.as_deref(), auto, base_dir)?;
    match &manifest.data {
        DataSource::Path(p) => Ok(parse_tmc_csv(&read_text(&resolve(base_dir, p))?, &schema)?),
        DataSource::AutoFetch => {
            Ok(fetch_toronto_tmc(&manifest.intersection_ids, env.http("count data auto-fetch")?, &env.toronto, &schema)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRangeReport {
    pub ranges: BTreeMap<String, Vec<TimeSpan>>,
    /// Spans covered by every requested intersection.
    pub common: Vec<TimeSpan>,
}

impl TimeRangeReport {
    pub fn has_data(&self) -> bool {
        self.ranges.values().any(|v| !v.is_empty())
    }
}

pub fn time_range(ds: &TmcDataset, ids: &[String]) -> TimeRangeReport {
    let ranges = available_time_range(ds, ids);
    let lists: Vec<Vec<TimeSpan>> = ranges.values().cloned().collect();
    TimeRangeReport { common: common_spans(&lists), ranges }
}

fn coordinates_for(manifest: &PipelineManifest, ds: &TmcDataset, id: &str) -> Result<(f64, f64), PipelineError> {
    if let Some([lon, lat]) = manifest.coordinates.get(id) {
        return Ok((*lon, *lat));
    }
    ds.locations.get(id).copied().ok_or_else(|| {
        PipelineError::Mapping(format!(
            "no coordinates for intersection '{id}': the count data has no location for it and the manifest lists none"
        ))
    })
}

/// Download the map around every intersection and convert it into a network
/// file inside `out_dir`.
pub fn fetch_network(
    manifest: &PipelineManifest,
    ds: &TmcDataset,
    buffer_m: f64,
    out_dir: &Path,
    env: &BuildEnv,
) -> Result<PathBuf, PipelineError> {
    let points = manifest
        .intersection_ids
        .iter()
        .map(|id| coordinates_for(manifest, ds, id))
        .collect::<Result<Vec<_>, _>>()?;
    let bbox = compute_bbox(&points, buffer_m)?;
    let osm = fetch_osm(&bbox, env.http("map auto-fetch")?, &env.osm)?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let osm_path = out_dir.join(OSM_FILE);
    write_text(&osm_path, &osm)?;
    let converted = convert_network(&osm_path, env.runner("map conversion")?, &env.netconvert)?;
    Ok(converted.net_path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub network: PathBuf,
    pub routes: PathBuf,
    pub config: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts { network: dir.join(NET_FILE), routes: dir.join(ROUTE_FILE), config: dir.join(CONFIG_FILE) }
    }

    pub fn get(&self, kind: &str) -> Option<&Path> {
        match kind {
            "network" | "net" => Some(&self.network),
            "routes" | "route" => Some(&self.routes),
            "config" | "sumocfg" => Some(&self.config),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOutput {
    pub artifacts: Artifacts,
    pub bindings: Vec<IntersectionBinding>,
    pub flow_count: usize,
    pub vehicle_count: u64,
    pub dropped: Vec<DemandDiagnostic>,
    /// Data-quality and mapping notes that did not stop the build.
    pub notes: Vec<String>,
}

/// Build the network, route and configuration files into `out_dir`.
///
/// Equal inputs give byte-identical files.
pub fn build_scenario(
    manifest: &PipelineManifest,
    base_dir: &Path,
    out_dir: &Path,
    env: &BuildEnv,
) -> Result<BuildOutput, PipelineError> {
    manifest.check()?;
    let window = manifest.window.ok_or_else(|| PipelineError::Usage("build needs a window (start, end)".into()))?;
    let vtypes = manifest.vehicle_types()?;
    let ds = load_dataset(manifest, base_dir, env)?;
    let mut notes: Vec<String> = ds.diagnostics.iter().map(|d| format!("row {}: {}", d.row, d.message)).collect();

    let mut bins = slice_window(&ds, &manifest.intersection_ids, window.start, window.end)?;
    if let Some(scale) = &manifest.scale {
        bins = scale_counts(&bins, scale)?;
    }

    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let net_source = match &manifest.network {
        Some(NetworkSource::Path(p)) => resolve(base_dir, p),
        Some(NetworkSource::AutoFetch { buffer_m }) => fetch_network(manifest, &ds, *buffer_m, out_dir, env)?,
        None => return Err(PipelineError::Usage("build needs a network (path or auto_fetch)".into())),
    };
    let net_text = read_text(&net_source)?;
    let net = parse_network(&net_text)?;

    let bindings = bind_all(manifest, &ds, &net)?;
    for b in &bindings {
        notes.extend(b.mapping.notes.iter().cloned());
    }

    let compiled = compile_scenario(&bindings, &bins, &vtypes, window.start)?;
    let routes = emit_routes_xml(&compiled.flows, &vtypes)?;
    let mut config = ScenarioConfig::for_duration(NET_FILE, ROUTE_FILE, window.duration_s() as f64);
    config.step_length = manifest.step_length;
    config.vehroute_output = manifest.vehroute_output.clone();
    let cfg = emit_sumocfg(&config)?;

    let artifacts = Artifacts::in_dir(out_dir);
    if net_source != artifacts.network {
        write_text(&artifacts.network, &net_text)?;
    }
    write_text(&artifacts.routes, &routes)?;
    write_text(&artifacts.config, &cfg)?;

    Ok(BuildOutput {
        artifacts,
        bindings,
        flow_count: compiled.flows.len(),
        vehicle_count: compiled.flows.iter().map(|f| u64::from(f.count)).sum(),
        dropped: compiled.diagnostics,
        notes,
    })
}

fn bind_all(manifest: &PipelineManifest, ds: &TmcDataset, net: &RoadNetwork) -> Result<Vec<IntersectionBinding>, PipelineError> {
    let filter = EdgeFilterPolicy { include_untyped: manifest.include_untyped_edges };
    let tol = manifest.effective_tolerance();
    manifest
        .intersection_ids
        .iter()
        .map(|id| {
            let (lon, lat) = coordinates_for(manifest, ds, id)?;
            Ok(bind_intersection(net, id, lon, lat, tol, &filter)?)
        })
        .collect()
}

/// Reference instant for validation: bins are positioned by their offsets
/// in the route file, so any fixed origin works.
fn validation_origin() -> NaiveDateTime {
    NaiveDateTime::default()
}

/// Compare the counts a route file was built from with the vehicles recorded
/// in a vehroute output file.
pub fn validate_offline(route_xml: &str, vehroute_xml: &str) -> Result<ValidationOutcome, PipelineError> {
    let route = parse_route_flows(route_xml)?;
    let vehicles = parse_vehroutes(vehroute_xml)?;
    let t0 = validation_origin();
    let real = counts_from_flows(&route.flows, t0)?;
    let recon = reconstruct_counts(vehicles.records.iter().map(|r| r.vehicle_id.as_str()), bin_count_of(&route.flows));
    let report = compare_all(&real, t0, &recon)?;
    let mut diagnostics = vehicles.diagnostics;
    diagnostics.extend(recon.diagnostics);
    Ok(ValidationOutcome { report, diagnostics })
}

/// Same comparison with ids collected live from a TraCI server over
/// `steps` simulation steps.
pub fn validate_live(route_xml: &str, endpoint: &str, steps: u32, options: &TraciOptions) -> Result<ValidationOutcome, PipelineError> {
    let route = parse_route_flows(route_xml)?;
    let per_edge = traci_collect_with(endpoint, &monitored_edges(&route.flows), steps, options)?;
    let ids = union_ids(&per_edge);
    let t0 = validation_origin();
    let real = counts_from_flows(&route.flows, t0)?;
    let recon = reconstruct_counts(ids.iter().map(String::as_str), bin_count_of(&route.flows));
    let report = compare_all(&real, t0, &recon)?;
    Ok(ValidationOutcome { report, diagnostics: recon.diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub report: ComparisonReport,
    pub diagnostics: Vec<String>,
}

/// Run the simulator on a built configuration (opt-in).
pub fn launch_simulator(program: &str, config: &Path, runner: &dyn ProcessRunner) -> Result<String, PipelineError> {
    let cfg = config.to_string_lossy().into_owned();
    let out = runner
        .run(program, &["-c".to_string(), cfg])
        .map_err(|e| PipelineError::Osm(crate::osm::OsmError::Spawn(format!("{program}: {e}"))))?;
    if !out.success() {
        return Err(PipelineError::Osm(crate::osm::OsmError::ToolFailed { code: out.exit_code, stderr: out.stderr }));
    }
    Ok(out.stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"intersection_ids": ["13446"], "network": {"path": "a.net.xml"}, "data": {"path": "c.csv"},
            "window": {"start": "2023-05-01T08:00:00", "end": "2023-05-01T08:15:00"}}"#
    }

    #[test]
    fn manifest_defaults() {
        let m = PipelineManifest::from_json(minimal()).unwrap();
        assert_eq!(m.tolerance_m, 5.0);
        assert_eq!(m.step_length, 1.0);
        assert_eq!(m.window.unwrap().duration_s(), 900);
        assert_eq!(m.vehicle_types().unwrap(), default_vtypes());
        let again = PipelineManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn manifest_rejects_bad_fields() {
        assert!(PipelineManifest::from_json(r#"{"intersection_ids": [], "data": "auto_fetch"}"#).is_err());
        assert!(PipelineManifest::from_json(r#"{"intersection_ids": ["1"], "data": "auto_fetch", "bogus": 1}"#).is_err());
        let auto = PipelineManifest::from_json(r#"{"intersection_ids": ["1"], "network": {"auto_fetch": {}}, "data": "auto_fetch"}"#)
            .unwrap();
        assert_eq!(auto.network, Some(NetworkSource::AutoFetch { buffer_m: 5000.0 }));
    }

    #[test]
    fn overrides_apply_to_one_class() {
        let mut m = PipelineManifest::from_json(minimal()).unwrap();
        m.vtypes.push(VehicleTypeOverride {
            vclass: VehicleClass::Truck,
            type_id: None,
            length: Some(9.0),
            sigma: None,
            car_follow_model: Some(CarFollowModel::Idm),
        });
        let vts = m.vehicle_types().unwrap();
        let truck = vts.iter().find(|v| v.vclass == VehicleClass::Truck).unwrap();
        assert_eq!((truck.length, truck.sigma, truck.car_follow_model), (9.0, 0.5, CarFollowModel::Idm));
        m.vtypes[0].sigma = Some(1.5);
        assert!(m.vehicle_types().is_err());
    }

    #[test]
    fn auto_fetch_without_capability_is_refused() {
        let m = PipelineManifest::from_json(r#"{"intersection_ids": ["1"], "data": "auto_fetch"}"#).unwrap();
        let err = load_dataset(&m, Path::new("."), &BuildEnv::offline()).unwrap_err();
        assert_eq!(err.category(), crate::error::ErrorCategory::Usage);
    }

    #[test]
    fn allow_distance_widens_tolerance() {
        let mut m = PipelineManifest::from_json(minimal()).unwrap();
        assert_eq!(m.effective_tolerance(), 5.0);
        m.allow_distance_m = Some(12.0);
        assert_eq!(m.effective_tolerance(), 12.0);
    }
}
