//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists (serialized through JSON), so Python sees the same field names
//! as the manifest and the HTTP API.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use tmcsim::demand::{emit_sumocfg as core_emit_sumocfg, encode_flow_id as core_encode_flow_id, ScenarioConfig};
use tmcsim::mapper::{self, EdgeFilterPolicy, NearestJunction};
use tmcsim::net;
use tmcsim::pipeline::{self, BuildEnv, PipelineManifest};
use tmcsim::tmc::{self, MovementKey, SchemaMapping};
use tmcsim::{validation, PipelineError};

create_exception!(tmcsim, TmcsimError, PyException, "Pipeline failure; args are (message, category, exit_code).");

fn raise(e: impl Into<PipelineError>) -> PyErr {
    let e = e.into();
    let category = e.category();
    TmcsimError::new_err((e.to_string(), category.name(), category.exit_code()))
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accept a JSON string or any object `json.dumps` understands.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s);
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn schema_named(name: &str) -> PyResult<SchemaMapping> {
    pipeline::load_schema(Some(name), false, &PathBuf::from(".")).map_err(raise)
}

#[pyclass(name = "RoadNetwork", module = "tmcsim", frozen)]
struct PyRoadNetwork {
    inner: net::RoadNetwork,
}

#[pymethods]
impl PyRoadNetwork {
    #[staticmethod]
    fn from_xml(text: &str) -> PyResult<Self> {
        Ok(PyRoadNetwork { inner: net::parse_network(text).map_err(raise)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| raise(PipelineError::io(&path, e)))?;
        Self::from_xml(&text)
    }

    #[getter]
    fn junction_ids(&self) -> Vec<String> {
        self.inner.junctions.keys().cloned().collect()
    }

    #[getter]
    fn edge_ids(&self) -> Vec<String> {
        self.inner.edges.keys().cloned().collect()
    }

    fn junction<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let j = self.inner.junction(id).ok_or_else(|| PyValueError::new_err(format!("unknown junction '{id}'")))?;
        to_py(
            py,
            &serde_json::json!({
                "id": j.id, "x": j.x, "y": j.y, "type": j.junction_type,
                "incoming_edges": j.incoming_edges, "outgoing_edges": j.outgoing_edges,
            }),
        )
    }

    fn lonlat_to_xy(&self, lon: f64, lat: f64) -> PyResult<(f64, f64)> {
        self.inner.lonlat_to_xy(lon, lat).map_err(raise)
    }

    /// `(junction_id, distance, within_tolerance)`.
    #[pyo3(signature = (lon, lat, tolerance = mapper::DEFAULT_TOLERANCE_M))]
    fn nearest_junction(&self, lon: f64, lat: f64, tolerance: f64) -> PyResult<(String, f64, bool)> {
        let hit = mapper::find_nearest_junction(&self.inner, lon, lat, tolerance).map_err(raise)?;
        let within = matches!(hit, NearestJunction::Within { .. });
        Ok((hit.junction_id().to_string(), hit.distance(), within))
    }

    #[pyo3(signature = (junction_id, include_untyped = false))]
    fn map_edges<'py>(&self, py: Python<'py>, junction_id: &str, include_untyped: bool) -> PyResult<Bound<'py, PyAny>> {
        let m = mapper::map_intersection_edges(&self.inner, junction_id, &EdgeFilterPolicy { include_untyped })
            .map_err(raise)?;
        to_py(py, &m)
    }

    #[pyo3(signature = (source_id, lon, lat, tolerance = mapper::DEFAULT_TOLERANCE_M, include_untyped = false))]
    fn bind<'py>(
        &self,
        py: Python<'py>,
        source_id: &str,
        lon: f64,
        lat: f64,
        tolerance: f64,
        include_untyped: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let b = mapper::bind_intersection(&self.inner, source_id, lon, lat, tolerance, &EdgeFilterPolicy { include_untyped })
            .map_err(raise)?;
        to_py(py, &b)
    }

    fn to_xml(&self) -> String {
        self.inner.to_xml()
    }

    fn __len__(&self) -> usize {
        self.inner.junctions.len()
    }

    fn __repr__(&self) -> String {
        format!("RoadNetwork({} junctions, {} edges)", self.inner.junctions.len(), self.inner.edges.len())
    }
}

#[pyclass(name = "TmcDataset", module = "tmcsim", frozen)]
struct PyTmcDataset {
    inner: tmc::TmcDataset,
}

#[pymethods]
impl PyTmcDataset {
    /// `schema` is `canonical`, `toronto` or a path to a schema JSON file.
    #[staticmethod]
    #[pyo3(signature = (text, schema = "canonical"))]
    fn from_csv(text: &str, schema: &str) -> PyResult<Self> {
        Ok(PyTmcDataset { inner: tmc::parse_tmc_csv(text, &schema_named(schema)?).map_err(raise)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, schema = "canonical"))]
    fn load(path: PathBuf, schema: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| raise(PipelineError::io(&path, e)))?;
        Self::from_csv(&text, schema)
    }

    #[getter]
    fn intersection_ids(&self) -> Vec<String> {
        self.inner.intersection_ids().map(String::from).collect()
    }

    #[getter]
    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.diagnostics)
    }

    fn time_range<'py>(&self, py: Python<'py>, ids: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &pipeline::time_range(&self.inner, &ids))
    }

    /// Bins for one intersection, or all bins.
    #[pyo3(signature = (intersection_id = None))]
    fn bins<'py>(&self, py: Python<'py>, intersection_id: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        match intersection_id {
            Some(id) => to_py(py, &self.inner.bins_for(id).collect::<Vec<_>>()),
            None => to_py(py, &self.inner.bins),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.bins.len()
    }
}

#[pyfunction]
fn classify_direction(angle: f64) -> String {
    mapper::classify_direction(angle).name().to_string()
}

#[pyfunction]
#[pyo3(signature = (lon, lat, zone, northern_hemisphere = true))]
fn utm_forward(lon: f64, lat: f64, zone: u8, northern_hemisphere: bool) -> PyResult<(f64, f64)> {
    if !(1..=60).contains(&zone) {
        return Err(PyValueError::new_err(format!("UTM zone must be 1..=60, got {zone}")));
    }
    Ok(net::utm_forward(lon, lat, zone, northern_hemisphere))
}

#[pyfunction]
fn encode_flow_id(intersection_id: &str, movement: &str, bin_index: u32) -> PyResult<String> {
    let key: MovementKey = movement.parse().map_err(PyValueError::new_err)?;
    core_encode_flow_id(intersection_id, key, bin_index).map_err(raise)
}

/// `(intersection_id, movement, bin_index)`.
#[pyfunction]
fn parse_vehicle_id(vehicle_id: &str) -> PyResult<(String, String, u32)> {
    let p = tmcsim::demand::parse_vehicle_id(vehicle_id).map_err(raise)?;
    Ok((p.intersection_id, p.key.to_string(), p.bin_index))
}

#[pyfunction]
#[pyo3(signature = (points, buffer_m = tmcsim::osm::DEFAULT_BUFFER_M))]
fn compute_bbox(points: Vec<(f64, f64)>, buffer_m: f64) -> PyResult<(f64, f64, f64, f64)> {
    let b = tmcsim::osm::compute_bbox(&points, buffer_m).map_err(raise)?;
    Ok((b.lon_min, b.lat_min, b.lon_max, b.lat_max))
}

#[pyfunction]
#[pyo3(signature = (network_path, route_path, duration_s, step_length = 1.0))]
fn emit_sumocfg(network_path: &str, route_path: &str, duration_s: f64, step_length: f64) -> PyResult<String> {
    let mut sc = ScenarioConfig::for_duration(network_path, route_path, duration_s);
    sc.step_length = step_length;
    core_emit_sumocfg(&sc).map_err(raise)
}

#[pyfunction]
fn parse_vehroutes<'py>(py: Python<'py>, xml_text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &validation::parse_vehroutes(xml_text).map_err(raise)?.records)
}

#[pyfunction]
fn reconstruct_counts<'py>(py: Python<'py>, vehicle_ids: Vec<String>, bin_count: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &validation::reconstruct_counts(vehicle_ids.iter().map(String::as_str), bin_count))
}

#[pyfunction]
fn validate_offline<'py>(py: Python<'py>, route_xml: &str, vehroute_xml: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &pipeline::validate_offline(route_xml, vehroute_xml).map_err(raise)?)
}

/// Build from a manifest (JSON text or dict). Only local files are used;
/// auto-fetch manifests raise.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, base_dir = None))]
fn build_scenario<'py>(
    py: Python<'py>,
    manifest: &Bound<'py, PyAny>,
    out_dir: PathBuf,
    base_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = PipelineManifest::from_json(&json_text(manifest)?).map_err(raise)?;
    let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
    let built = pipeline::build_scenario(&m, &base, &out_dir, &BuildEnv::offline()).map_err(raise)?;
    to_py(py, &built)
}

#[pymodule]
#[pyo3(name = "tmcsim")]
fn tmcsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TmcsimError", m.py().get_type::<TmcsimError>())?;
    m.add("DEFAULT_TOLERANCE_M", mapper::DEFAULT_TOLERANCE_M)?;
    m.add_class::<PyRoadNetwork>()?;
    m.add_class::<PyTmcDataset>()?;
    m.add_function(wrap_pyfunction!(classify_direction, m)?)?;
    m.add_function(wrap_pyfunction!(utm_forward, m)?)?;
    m.add_function(wrap_pyfunction!(encode_flow_id, m)?)?;
    m.add_function(wrap_pyfunction!(parse_vehicle_id, m)?)?;
    m.add_function(wrap_pyfunction!(compute_bbox, m)?)?;
    m.add_function(wrap_pyfunction!(emit_sumocfg, m)?)?;
    m.add_function(wrap_pyfunction!(parse_vehroutes, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_counts, m)?)?;
    m.add_function(wrap_pyfunction!(validate_offline, m)?)?;
    m.add_function(wrap_pyfunction!(build_scenario, m)?)?;
    Ok(())
}
