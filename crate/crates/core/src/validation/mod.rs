//! Simulated-versus-real count comparison.
//!
//! Simulated turning movement counts are rebuilt from vehicle ids alone: the
//! flow id grammar encodes intersection, movement and bin, so each distinct
//! vehicle id observed (live over TraCI or in a vehroute output file) adds
//! one to its movement.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{parse_vehicle_id, vclass_from_sumo, CarFollowModel, FlowSpec, VehicleTypeConfig};
use crate::tmc::{CountBin, MovementKey};

pub mod traci;

pub use traci::{traci_collect, TraciClient, TraciError};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("<{element}> is missing attribute '{attribute}'")]
    MissingAttribute { element: String, attribute: &'static str },
    #[error("<{element}> has invalid {attribute}=\"{value}\"")]
    InvalidAttribute { element: String, attribute: &'static str, value: String },
    #[error("bin structure mismatch: {0}")]
    BinMismatch(String),
    #[error("report export failed: {0}")]
    Export(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRoute {
    pub vehicle_id: String,
    pub depart: f64,
    pub edges: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VehrouteParse {
    pub records: Vec<VehicleRoute>,
    pub diagnostics: Vec<String>,
}

/// Parse simulator vehroute output. Vehicles without a usable route or
/// departure are skipped with a diagnostic.
pub fn parse_vehroutes(xml_text: &str) -> Result<VehrouteParse, ValidationError> {
    let mut out = VehrouteParse::default();
    if xml_text.trim().is_empty() {
        return Ok(out);
    }
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| ValidationError::Xml(e.to_string()))?;
    for vehicle in doc.root_element().children().filter(|n| n.has_tag_name("vehicle")) {
        let Some(id) = vehicle.attribute("id") else {
            out.diagnostics.push("vehicle element without id skipped".into());
            continue;
        };
        let depart = match vehicle.attribute("depart").map(|d| d.trim().parse::<f64>()) {
            Some(Ok(d)) if d.is_finite() => d,
            _ => {
                out.diagnostics.push(format!("vehicle '{id}' has no numeric depart; skipped"));
                continue;
            }
        };
        // With exit times enabled the final route is the last <route> child
        // (earlier ones are replaced routes).
        let route = vehicle
            .descendants()
            .filter(|n| n.has_tag_name("route"))
            .filter_map(|n| n.attribute("edges"))
            .next_back();
        match route {
            Some(edges) if !edges.trim().is_empty() => out.records.push(VehicleRoute {
                vehicle_id: id.to_string(),
                depart,
                edges: edges.split_whitespace().map(String::from).collect(),
            }),
            _ => out.diagnostics.push(format!("vehicle '{id}' has no route; skipped")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCounts {
    pub intersection_id: String,
    /// Indexed by bin; absent keys are zero.
    pub bins: Vec<BTreeMap<MovementKey, u32>>,
}

impl SimulatedCounts {
    pub fn zeros(intersection_id: &str, bin_count: usize) -> Self {
        SimulatedCounts { intersection_id: intersection_id.to_string(), bins: vec![BTreeMap::new(); bin_count] }
    }

    pub fn count(&self, bin_index: usize, key: &MovementKey) -> u32 {
        self.bins.get(bin_index).and_then(|m| m.get(key)).copied().unwrap_or(0)
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub intersections: BTreeMap<String, SimulatedCounts>,
    pub bin_count: usize,
    /// Ids that do not follow the flow grammar or fall outside the bins.
    pub diagnostics: Vec<String>,
}

impl Reconstruction {
    /// Counts for one intersection; all zero if no vehicle was seen there.
    pub fn counts_for(&self, intersection_id: &str) -> SimulatedCounts {
        self.intersections
            .get(intersection_id)
            .cloned()
            .unwrap_or_else(|| SimulatedCounts::zeros(intersection_id, self.bin_count))
    }
}

/// Count distinct vehicle ids per intersection, movement and bin.
pub fn reconstruct_counts<'a>(vehicle_ids: impl IntoIterator<Item = &'a str>, bin_count: usize) -> Reconstruction {
    let mut out = Reconstruction { bin_count, ..Default::default() };
    let unique: BTreeSet<&str> = vehicle_ids.into_iter().collect();
    for vid in unique {
        match parse_vehicle_id(vid) {
            Ok(parts) => {
                let bin = parts.bin_index as usize;
                if bin >= bin_count {
                    out.diagnostics.push(format!("vehicle '{vid}' is in bin {bin}, beyond the {bin_count} simulated bins"));
                    continue;
                }
                let counts = out
                    .intersections
                    .entry(parts.intersection_id.clone())
                    .or_insert_with(|| SimulatedCounts::zeros(&parts.intersection_id, bin_count));
                *counts.bins[bin].entry(parts.key).or_insert(0) += 1;
            }
            Err(e) => out.diagnostics.push(e.to_string()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub intersection_id: String,
    pub bin_index: usize,
    pub key: MovementKey,
    pub real: u32,
    pub simulated: u32,
    pub abs_diff: u32,
    /// `None` when the real count is zero.
    pub pct_diff: Option<f64>,
}

impl ComparisonRow {
    fn new(intersection_id: &str, bin_index: usize, key: MovementKey, real: u32, simulated: u32) -> Self {
        let abs_diff = real.abs_diff(simulated);
        let pct_diff = (real > 0).then(|| f64::from(abs_diff) / f64::from(real) * 100.0);
        ComparisonRow { intersection_id: intersection_id.to_string(), bin_index, key, real, simulated, abs_diff, pct_diff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionTotals {
    pub intersection_id: String,
    pub real: u64,
    pub simulated: u64,
    pub abs_diff: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub totals: Vec<IntersectionTotals>,
}

impl ComparisonReport {
    pub fn is_exact_match(&self) -> bool {
        self.rows.iter().all(|r| r.abs_diff == 0)
    }

    pub fn max_abs_diff(&self) -> u32 {
        self.rows.iter().map(|r| r.abs_diff).max().unwrap_or(0)
    }

    fn push_totals(&mut self, intersection_id: &str, from_row: usize) {
        let rows = &self.rows[from_row..];
        let real: u64 = rows.iter().map(|r| u64::from(r.real)).sum();
        let simulated: u64 = rows.iter().map(|r| u64::from(r.simulated)).sum();
        self.totals.push(IntersectionTotals {
            intersection_id: intersection_id.to_string(),
            real,
            simulated,
            abs_diff: real.abs_diff(simulated),
        });
    }

    pub fn to_json(&self) -> Result<String, ValidationError> {
        serde_json::to_string_pretty(self).map_err(|e| ValidationError::Export(e.to_string()))
    }

    /// One line per row; undefined percentages are written as `n/a`.
    pub fn to_csv(&self) -> Result<String, ValidationError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| ValidationError::Export(e.to_string());
        w.write_record([
            "intersection_id", "bin_index", "movement", "approach", "turn", "vclass", "real", "simulated", "abs_diff", "pct_diff",
        ])
        .map_err(err)?;
        for r in &self.rows {
            let turn = serde_json::to_value(r.key.turn).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            w.write_record([
                r.intersection_id.clone(),
                r.bin_index.to_string(),
                r.key.to_string(),
                r.key.approach.to_string(),
                turn,
                r.key.vclass.to_string(),
                r.real.to_string(),
                r.simulated.to_string(),
                r.abs_diff.to_string(),
                r.pct_diff.map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}")),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| ValidationError::Export(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ValidationError::Export(e.to_string()))
    }
}

/// Bin index of `bin` on the grid starting at `t0`.
fn bin_index_of(bin: &CountBin, t0: NaiveDateTime) -> Result<usize, ValidationError> {
    let offset = (bin.bin_start - t0).num_seconds();
    let d = i64::from(bin.duration_s);
    if d <= 0 || offset < 0 || offset % d != 0 {
        return Err(ValidationError::BinMismatch(format!(
            "bin at {} is not on the {d} s grid from {t0}",
            bin.bin_start
        )));
    }
    Ok((offset / d) as usize)
}

fn compare_into(
    report: &mut ComparisonReport,
    real: &[&CountBin],
    t0: NaiveDateTime,
    sim: &SimulatedCounts,
) -> Result<(), ValidationError> {
    let mut real_by_bin: BTreeMap<usize, &CountBin> = BTreeMap::new();
    for bin in real {
        if bin.intersection_id != sim.intersection_id {
            return Err(ValidationError::BinMismatch(format!(
                "real bin for '{}' compared against simulation of '{}'",
                bin.intersection_id, sim.intersection_id
            )));
        }
        let idx = bin_index_of(bin, t0)?;
        if idx >= sim.bin_count() {
            return Err(ValidationError::BinMismatch(format!(
                "real bin {idx} has no simulated counterpart ({} bins simulated)",
                sim.bin_count()
            )));
        }
        if real_by_bin.insert(idx, bin).is_some() {
            return Err(ValidationError::BinMismatch(format!("two real bins map to index {idx}")));
        }
    }

    let start = report.rows.len();
    for idx in 0..sim.bin_count() {
        let mut keys: BTreeSet<MovementKey> = sim.bins[idx].keys().copied().collect();
        if let Some(bin) = real_by_bin.get(&idx) {
            keys.extend(bin.counts.keys().copied());
        }
        for key in keys {
            let r = real_by_bin.get(&idx).map_or(0, |b| b.count(&key));
            report.rows.push(ComparisonRow::new(&sim.intersection_id, idx, key, r, sim.count(idx, &key)));
        }
    }
    report.push_totals(&sim.intersection_id, start);
    Ok(())
}

/// Compare one intersection's real bins against its simulated counts. Bins
/// are placed on the grid starting at `t0`; a movement missing on one side
/// counts as zero there.
pub fn compare(real: &[CountBin], t0: NaiveDateTime, sim: &SimulatedCounts) -> Result<ComparisonReport, ValidationError> {
    let mut report = ComparisonReport::default();
    compare_into(&mut report, &real.iter().collect::<Vec<_>>(), t0, sim)?;
    Ok(report)
}

/// Compare every intersection present in either the real bins or the
/// reconstruction.
pub fn compare_all(real: &[CountBin], t0: NaiveDateTime, sim: &Reconstruction) -> Result<ComparisonReport, ValidationError> {
    let mut ids: BTreeSet<&str> = real.iter().map(|b| b.intersection_id.as_str()).collect();
    ids.extend(sim.intersections.keys().map(String::as_str));
    let mut report = ComparisonReport::default();
    for id in ids {
        let own: Vec<&CountBin> = real.iter().filter(|b| b.intersection_id == id).collect();
        compare_into(&mut report, &own, t0, &sim.counts_for(id))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteFile {
    pub vtypes: Vec<VehicleTypeConfig>,
    pub flows: Vec<FlowSpec>,
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, attribute: &'static str) -> Result<&'a str, ValidationError> {
    node.attribute(attribute).ok_or_else(|| ValidationError::MissingAttribute {
        element: format!("{} id=\"{}\"", node.tag_name().name(), node.attribute("id").unwrap_or("?")),
        attribute,
    })
}

fn num<T: std::str::FromStr>(node: roxmltree::Node, attribute: &'static str) -> Result<T, ValidationError> {
    let raw = attr(node, attribute)?;
    raw.trim().parse().map_err(|_| ValidationError::InvalidAttribute {
        element: node.tag_name().name().to_string(),
        attribute,
        value: raw.to_string(),
    })
}

/// Read back a route file written by [`crate::demand::emit_routes_xml`].
pub fn parse_route_flows(xml_text: &str) -> Result<RouteFile, ValidationError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| ValidationError::Xml(e.to_string()))?;
    let mut out = RouteFile::default();
    for node in doc.root_element().children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "vType" => {
                let vclass_raw = attr(node, "vClass")?;
                let vclass = vclass_from_sumo(vclass_raw).ok_or_else(|| ValidationError::InvalidAttribute {
                    element: "vType".into(),
                    attribute: "vClass",
                    value: vclass_raw.to_string(),
                })?;
                let model_raw = node.attribute("carFollowModel").unwrap_or("Krauss");
                let car_follow_model = model_raw.parse::<CarFollowModel>().map_err(|_| ValidationError::InvalidAttribute {
                    element: "vType".into(),
                    attribute: "carFollowModel",
                    value: model_raw.to_string(),
                })?;
                out.vtypes.push(VehicleTypeConfig {
                    type_id: attr(node, "id")?.to_string(),
                    vclass,
                    length: num(node, "length")?,
                    sigma: num(node, "sigma")?,
                    car_follow_model,
                });
            }
            "flow" => out.flows.push(FlowSpec {
                flow_id: attr(node, "id")?.to_string(),
                from_edge: attr(node, "from")?.to_string(),
                to_edge: attr(node, "to")?.to_string(),
                begin: num(node, "begin")?,
                end: num(node, "end")?,
                count: num(node, "number")?,
                vtype: attr(node, "type")?.to_string(),
            }),
            _ => {}
        }
    }
    Ok(out)
}

/// Rebuild the real count bins encoded in a route file's flows (each flow
/// carries its intersection, movement and bin in its id and its count in
/// `number`). Bins start at `t0 + begin`.
pub fn counts_from_flows(flows: &[FlowSpec], t0: NaiveDateTime) -> Result<Vec<CountBin>, ValidationError> {
    let mut bins: BTreeMap<(String, u32), CountBin> = BTreeMap::new();
    for f in flows {
        let parts = parse_vehicle_id(&f.flow_id).map_err(|e| ValidationError::BinMismatch(e.to_string()))?;
        let duration = f.end - f.begin;
        if !(duration > 0.0 && duration.fract() == 0.0 && f.begin.fract() == 0.0) {
            return Err(ValidationError::BinMismatch(format!("flow '{}' does not span whole seconds", f.flow_id)));
        }
        let bin_start = t0 + Duration::seconds(f.begin as i64);
        let bin = bins.entry((parts.intersection_id.clone(), parts.bin_index)).or_insert_with(|| CountBin {
            intersection_id: parts.intersection_id.clone(),
            bin_start,
            duration_s: duration as u32,
            counts: BTreeMap::new(),
        });
        if bin.bin_start != bin_start || bin.duration_s != duration as u32 {
            return Err(ValidationError::BinMismatch(format!("flow '{}' disagrees with its bin's time span", f.flow_id)));
        }
        *bin.counts.entry(parts.key).or_insert(0) += f.count;
    }
    Ok(bins.into_values().collect())
}

/// Number of bins a flow set spans (highest bin index + 1).
pub fn bin_count_of(flows: &[FlowSpec]) -> usize {
    flows
        .iter()
        .filter_map(|f| parse_vehicle_id(&f.flow_id).ok())
        .map(|p| p.bin_index as usize + 1)
        .max()
        .unwrap_or(0)
}

/// Edges whose vehicles must be watched to observe every flow.
pub fn monitored_edges(flows: &[FlowSpec]) -> Vec<String> {
    let set: BTreeSet<&str> = flows.iter().flat_map(|f| [f.from_edge.as_str(), f.to_edge.as_str()]).collect();
    set.into_iter().map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::Cardinal;
    use crate::tmc::{parse_timestamp, Turn, VehicleClass};

    fn t0() -> NaiveDateTime {
        parse_timestamp("2023-10-11T08:00:00", None).unwrap()
    }

    fn nl_car() -> MovementKey {
        MovementKey::new(Cardinal::North, Turn::Left, VehicleClass::Car)
    }

    #[test]
    fn vehroutes_fixture() {
        let xml = r#"<routes>
            <vehicle id="f_1_NL_car_0.0" depart="0.00"><route edges="in_n out_w"/></vehicle>
            <vehicle id="f_1_NL_car_0.1" depart="6.00" arrival="20"><route edges="in_n out_w"/></vehicle>
            <vehicle id="f_1_ST_bus_1.0" depart="900.00"><routeDistribution><route edges="a"/><route edges="in_s out_s"/></routeDistribution></vehicle>
            <vehicle id="lost" depart="3"/>
        </routes>"#;
        let parsed = parse_vehroutes(xml).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.records.iter().map(|r| r.depart).collect::<Vec<_>>(), vec![0.0, 6.0, 900.0]);
        assert_eq!(parsed.records[2].edges, vec!["in_s", "out_s"]);
        assert_eq!(parsed.diagnostics.len(), 1);
    }

    #[test]
    fn empty_vehroutes() {
        assert!(parse_vehroutes("").unwrap().records.is_empty());
        assert!(parse_vehroutes("<routes/>").unwrap().records.is_empty());
        assert!(parse_vehroutes("<routes>").is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let r = reconstruct_counts(["f_1_NL_car_0.0", "f_1_NL_car_0.1", "f_1_NL_car_0.1"], 1);
        assert_eq!(r.counts_for("1").count(0, &nl_car()), 2);
        assert!(r.diagnostics.is_empty());
    }

    #[test]
    fn foreign_ids_are_diagnosed() {
        let r = reconstruct_counts(["veh9", "f_1_NL_car_5.0"], 2);
        assert!(r.intersections.is_empty());
        assert_eq!(r.diagnostics.len(), 2);
        let empty = reconstruct_counts(std::iter::empty(), 3);
        assert_eq!(empty.counts_for("1"), SimulatedCounts::zeros("1", 3));
    }

    fn real_bin(n: u32) -> CountBin {
        CountBin { intersection_id: "1".into(), bin_start: t0(), duration_s: 900, counts: BTreeMap::from([(nl_car(), n)]) }
    }

    #[test]
    fn percent_difference() {
        let mut sim = SimulatedCounts::zeros("1", 1);
        sim.bins[0].insert(nl_car(), 147);
        let report = compare(&[real_bin(150)], t0(), &sim).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].abs_diff, 3);
        assert_eq!(report.rows[0].pct_diff, Some(2.0));
        assert_eq!(report.totals[0].abs_diff, 3);
    }

    #[test]
    fn identical_and_sim_only() {
        let mut sim = SimulatedCounts::zeros("1", 1);
        sim.bins[0].insert(nl_car(), 150);
        assert!(compare(&[real_bin(150)], t0(), &sim).unwrap().is_exact_match());

        let st_bus = MovementKey::new(Cardinal::South, Turn::Through, VehicleClass::Bus);
        sim.bins[0].insert(st_bus, 2);
        let report = compare(&[real_bin(150)], t0(), &sim).unwrap();
        let row = report.rows.iter().find(|r| r.key == st_bus).unwrap();
        assert_eq!((row.real, row.simulated, row.pct_diff), (0, 2, None));
        assert!(report.to_csv().unwrap().contains("n/a"));
        assert!(report.to_json().unwrap().contains("null"));
    }

    #[test]
    fn structure_mismatch() {
        let sim = SimulatedCounts::zeros("other", 1);
        assert!(matches!(compare(&[real_bin(1)], t0(), &sim), Err(ValidationError::BinMismatch(_))));
        let short = SimulatedCounts::zeros("1", 0);
        assert!(compare(&[real_bin(1)], t0(), &short).is_err());
    }

    #[test]
    fn counts_from_flow_ids() {
        let flows = vec![FlowSpec {
            flow_id: "f_1_NL_car_2".into(),
            from_edge: "a".into(),
            to_edge: "b".into(),
            begin: 1800.0,
            end: 2700.0,
            count: 150,
            vtype: "car".into(),
        }];
        let bins = counts_from_flows(&flows, t0()).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count(&nl_car()), 150);
        assert_eq!(bins[0].bin_start, t0() + Duration::seconds(1800));
        assert_eq!(bin_count_of(&flows), 3);
        assert_eq!(monitored_edges(&flows), vec!["a", "b"]);
    }
}
