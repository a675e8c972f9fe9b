//! Count bins plus intersection bindings → simulator flows.
//!
//! Every non-zero movement count in a bin becomes one `<flow>` spanning that
//! bin, from the approach's incoming edge to the exit direction's outgoing
//! edge. The simulator spaces the `number` departures evenly over
//! `[begin, end)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::{Cardinal, EdgeRole, IntersectionBinding};
use crate::tmc::{CountBin, MovementKey, Turn, VehicleClass};

mod emit;
mod flow_id;

pub use emit::{emit_routes_xml, emit_sumocfg};
pub use flow_id::{encode_flow_id, parse_vehicle_id, FlowIdParts};

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("'{0}' cannot be used in a flow id (empty, or contains '_', '.' or whitespace)")]
    InvalidIdComponent(String),
    #[error("'{0}' does not match the flow id grammar f_<id>_<movement>_<class>_<bin>")]
    NonConformingId(String),
    #[error("duplicate flow id '{0}'")]
    DuplicateFlowId(String),
    #[error("invalid vehicle type: {0}")]
    InvalidVehicleType(String),
    #[error("bin for '{found}' passed while compiling '{expected}'")]
    ForeignBin { expected: String, found: String },
    #[error("bin at {bin_start} is not on the {duration_s} s grid starting at {t0}")]
    MisalignedBin { bin_start: NaiveDateTime, t0: NaiveDateTime, duration_s: u32 },
    #[error("invalid flow '{0}': {1}")]
    InvalidFlow(String, String),
    #[error("invalid scenario config: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CarFollowModel {
    #[default]
    Krauss,
    KraussOrig,
    #[serde(rename = "IDM")]
    Idm,
    Wiedemann,
}

impl CarFollowModel {
    /// Attribute value understood by the simulator.
    pub fn sumo_name(self) -> &'static str {
        match self {
            CarFollowModel::Krauss => "Krauss",
            CarFollowModel::KraussOrig => "KraussOrig1",
            CarFollowModel::Idm => "IDM",
            CarFollowModel::Wiedemann => "Wiedemann",
        }
    }
}

impl FromStr for CarFollowModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Krauss" => Ok(CarFollowModel::Krauss),
            "KraussOrig" | "KraussOrig1" => Ok(CarFollowModel::KraussOrig),
            "IDM" | "Idm" => Ok(CarFollowModel::Idm),
            "Wiedemann" => Ok(CarFollowModel::Wiedemann),
            other => Err(format!("unknown car-following model '{other}'")),
        }
    }
}

impl fmt::Display for CarFollowModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.sumo_name())
    }
}

/// Simulator vehicle class for each counted class.
pub fn sumo_vclass(vclass: VehicleClass) -> &'static str {
    match vclass {
        VehicleClass::Car => "passenger",
        VehicleClass::Truck => "truck",
        VehicleClass::Bus => "bus",
    }
}

pub fn vclass_from_sumo(name: &str) -> Option<VehicleClass> {
    VehicleClass::ALL.into_iter().find(|v| sumo_vclass(*v) == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTypeConfig {
    pub type_id: String,
    pub vclass: VehicleClass,
    /// metres
    pub length: f64,
    pub sigma: f64,
    #[serde(default)]
    pub car_follow_model: CarFollowModel,
}

pub const DEFAULT_SIGMA: f64 = 0.5;

impl VehicleTypeConfig {
    pub fn default_for(vclass: VehicleClass) -> Self {
        let length = match vclass {
            VehicleClass::Car => 5.0,
            VehicleClass::Truck => 7.1,
            VehicleClass::Bus => 12.0,
        };
        VehicleTypeConfig {
            type_id: vclass.name().to_string(),
            vclass,
            length,
            sigma: DEFAULT_SIGMA,
            car_follow_model: CarFollowModel::Krauss,
        }
    }

    pub fn validate(&self) -> Result<(), DemandError> {
        let bad = |m: String| Err(DemandError::InvalidVehicleType(m));
        if self.type_id.is_empty() {
            return bad("empty type id".into());
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return bad(format!("{}: length must be positive, got {}", self.type_id, self.length));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("{}: sigma must lie in [0, 1], got {}", self.type_id, self.sigma));
        }
        Ok(())
    }
}

/// The default car, truck and bus types.
pub fn default_vtypes() -> Vec<VehicleTypeConfig> {
    VehicleClass::ALL.into_iter().map(VehicleTypeConfig::default_for).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: String,
    pub from_edge: String,
    pub to_edge: String,
    /// Seconds from simulation start.
    pub begin: f64,
    pub end: f64,
    pub count: u32,
    pub vtype: String,
}

impl FlowSpec {
    pub fn validate(&self) -> Result<(), DemandError> {
        let bad = |m: &str| Err(DemandError::InvalidFlow(self.flow_id.clone(), m.to_string()));
        if !(self.begin < self.end) {
            return bad("begin must precede end");
        }
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if self.from_edge == self.to_edge {
            return bad("from and to edge are the same");
        }
        Ok(())
    }
}

/// Sort order used for emission: by `begin`, then id.
pub fn sort_flows(flows: &mut [FlowSpec]) {
    flows.sort_by(|a, b| a.begin.total_cmp(&b.begin).then_with(|| a.flow_id.cmp(&b.flow_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub network_path: String,
    pub route_path: String,
    pub begin: f64,
    pub end: f64,
    pub step_length: f64,
    /// Where the simulator writes per-vehicle routes; `None` disables it.
    pub vehroute_output: Option<String>,
}

impl ScenarioConfig {
    pub fn for_duration(network_path: &str, route_path: &str, duration_s: f64) -> Self {
        ScenarioConfig {
            network_path: network_path.to_string(),
            route_path: route_path.to_string(),
            begin: 0.0,
            end: duration_s,
            step_length: 1.0,
            vehroute_output: None,
        }
    }
}

/// Exit direction of a movement: through keeps the heading, left rotates it
/// a quarter turn counter-clockwise, right clockwise.
pub fn movement_exit_direction(approach: Cardinal, turn: Turn) -> Cardinal {
    match turn {
        Turn::Through => approach,
        Turn::Left => approach.ccw(),
        Turn::Right => approach.cw(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandDiagnostic {
    pub intersection_id: String,
    pub bin_index: u32,
    pub key: MovementKey,
    /// Vehicles not emitted because of this problem.
    pub count: u32,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompiledDemand {
    pub flows: Vec<FlowSpec>,
    pub diagnostics: Vec<DemandDiagnostic>,
}

fn bin_index(bin: &CountBin, t0: NaiveDateTime) -> Result<u32, DemandError> {
    let offset = (bin.bin_start - t0).num_seconds();
    let duration = i64::from(bin.duration_s);
    let misaligned = || DemandError::MisalignedBin { bin_start: bin.bin_start, t0, duration_s: bin.duration_s };
    if duration <= 0 || offset < 0 || offset % duration != 0 {
        return Err(misaligned());
    }
    u32::try_from(offset / duration).map_err(|_| misaligned())
}

/// Compile the flows of one intersection.
///
/// Movements whose entry or exit leg is missing (e.g. the absent leg of a
/// T-junction) are dropped and reported in the diagnostics.
pub fn compile_flows(
    binding: &IntersectionBinding,
    bins: &[CountBin],
    vtypes: &[VehicleTypeConfig],
    t0: NaiveDateTime,
) -> Result<CompiledDemand, DemandError> {
    let mut type_for = BTreeMap::new();
    for vt in vtypes {
        vt.validate()?;
        type_for.entry(vt.vclass).or_insert(vt.type_id.as_str());
    }

    let mut out = CompiledDemand::default();
    for bin in bins {
        if bin.intersection_id != binding.source_id {
            return Err(DemandError::ForeignBin { expected: binding.source_id.clone(), found: bin.intersection_id.clone() });
        }
        let index = bin_index(bin, t0)?;
        let begin = (bin.bin_start - t0).num_seconds() as f64;
        let end = begin + f64::from(bin.duration_s);
        for (key, &count) in &bin.counts {
            if count == 0 {
                continue;
            }
            let exit = movement_exit_direction(key.approach, key.turn);
            let from = binding.mapping.representative(EdgeRole::Incoming, key.approach);
            let to = binding.mapping.representative(EdgeRole::Outgoing, exit);
            let vtype = type_for.get(&key.vclass);
            let problem = match (from, to, vtype) {
                (None, _, _) => Some(format!("no incoming edge for cardinal {}", key.approach)),
                (_, None, _) => Some(format!("no outgoing edge for cardinal {exit}")),
                (_, _, None) => Some(format!("no vehicle type configured for class {}", key.vclass)),
                (Some(f), Some(t), _) if f == t => Some(format!("incoming and outgoing edge coincide ('{f}')")),
                _ => None,
            };
            if let Some(message) = problem {
                out.diagnostics.push(DemandDiagnostic {
                    intersection_id: binding.source_id.clone(),
                    bin_index: index,
                    key: *key,
                    count,
                    message,
                });
                continue;
            }
            out.flows.push(FlowSpec {
                flow_id: encode_flow_id(&binding.source_id, *key, index)?,
                from_edge: from.unwrap().to_string(),
                to_edge: to.unwrap().to_string(),
                begin,
                end,
                count,
                vtype: vtype.unwrap().to_string(),
            });
        }
    }
    sort_flows(&mut out.flows);
    Ok(out)
}

/// Compile several intersections in parallel and merge the results.
/// `bins` may hold bins of all intersections; each binding takes its own.
pub fn compile_scenario(
    bindings: &[IntersectionBinding],
    bins: &[CountBin],
    vtypes: &[VehicleTypeConfig],
    t0: NaiveDateTime,
) -> Result<CompiledDemand, DemandError> {
    let parts: Vec<CompiledDemand> = bindings
        .par_iter()
        .map(|b| {
            let own: Vec<CountBin> = bins.iter().filter(|c| c.intersection_id == b.source_id).cloned().collect();
            compile_flows(b, &own, vtypes, t0)
        })
        .collect::<Result<_, _>>()?;
    let mut merged = CompiledDemand::default();
    let mut seen = BTreeSet::new();
    for part in parts {
        for flow in part.flows {
            if !seen.insert(flow.flow_id.clone()) {
                return Err(DemandError::DuplicateFlowId(flow.flow_id));
            }
            merged.flows.push(flow);
        }
        merged.diagnostics.extend(part.diagnostics);
    }
    sort_flows(&mut merged.flows);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::EdgeMapping;
    use chrono::Duration;

    fn t0() -> NaiveDateTime {
        crate::tmc::parse_timestamp("2023-10-11T08:00:00", None).unwrap()
    }

    fn four_way_binding() -> IntersectionBinding {
        let mut mapping = EdgeMapping::default();
        for c in Cardinal::ALL {
            mapping.incoming.insert(c, vec![format!("in_{c}")]);
            mapping.outgoing.insert(c, vec![format!("out_{c}")]);
        }
        IntersectionBinding { source_id: "13463414".into(), junction_id: "C".into(), match_distance: 0.0, mapping }
    }

    fn bin_with(offset_bins: i64, key: MovementKey, n: u32) -> CountBin {
        CountBin {
            intersection_id: "13463414".into(),
            bin_start: t0() + Duration::seconds(900 * offset_bins),
            duration_s: 900,
            counts: BTreeMap::from([(key, n)]),
        }
    }

    #[test]
    fn exit_directions() {
        assert_eq!(movement_exit_direction(Cardinal::North, Turn::Through), Cardinal::North);
        assert_eq!(movement_exit_direction(Cardinal::North, Turn::Left), Cardinal::West);
        assert_eq!(movement_exit_direction(Cardinal::East, Turn::Right), Cardinal::South);
        for c in Cardinal::ALL {
            let mut d = c;
            for _ in 0..4 {
                d = movement_exit_direction(d, Turn::Left);
            }
            assert_eq!(d, c);
            assert_eq!(movement_exit_direction(movement_exit_direction(c, Turn::Left), Turn::Right), c);
        }
    }

    #[test]
    fn northbound_left_150() {
        let key = MovementKey::new(Cardinal::North, Turn::Left, VehicleClass::Car);
        let out = compile_flows(&four_way_binding(), &[bin_with(0, key, 150)], &default_vtypes(), t0()).unwrap();
        assert_eq!(out.flows.len(), 1);
        let f = &out.flows[0];
        assert_eq!((f.from_edge.as_str(), f.to_edge.as_str(), f.count), ("in_north", "out_west", 150));
        assert_eq!((f.begin, f.end), (0.0, 900.0));
        assert_eq!(f.flow_id, "f_13463414_NL_car_0");
    }

    #[test]
    fn zero_bins_emit_nothing() {
        let key = MovementKey::new(Cardinal::South, Turn::Through, VehicleClass::Truck);
        let bins: Vec<CountBin> = [10, 0, 7, 3].iter().enumerate().map(|(i, &n)| bin_with(i as i64, key, n)).collect();
        let out = compile_flows(&four_way_binding(), &bins, &default_vtypes(), t0()).unwrap();
        let begins: Vec<f64> = out.flows.iter().map(|f| f.begin).collect();
        assert_eq!(begins, vec![0.0, 1800.0, 2700.0]);
        assert_eq!(out.flows.iter().map(|f| f.count).sum::<u32>(), 20);
    }

    #[test]
    fn missing_leg_is_diagnosed() {
        let mut binding = four_way_binding();
        binding.mapping.incoming.remove(&Cardinal::North);
        binding.mapping.outgoing.remove(&Cardinal::South);
        let key = MovementKey::new(Cardinal::East, Turn::Right, VehicleClass::Car);
        let out = compile_flows(&binding, &[bin_with(0, key, 4)], &default_vtypes(), t0()).unwrap();
        assert!(out.flows.is_empty());
        assert_eq!(out.diagnostics[0].message, "no outgoing edge for cardinal south");
        assert_eq!(out.diagnostics[0].count, 4);
    }

    #[test]
    fn foreign_and_misaligned_bins() {
        let key = MovementKey::new(Cardinal::East, Turn::Right, VehicleClass::Car);
        let mut foreign = bin_with(0, key, 1);
        foreign.intersection_id = "other".into();
        assert!(matches!(
            compile_flows(&four_way_binding(), &[foreign], &default_vtypes(), t0()),
            Err(DemandError::ForeignBin { .. })
        ));
        let mut odd = bin_with(0, key, 1);
        odd.bin_start += Duration::seconds(60);
        assert!(matches!(
            compile_flows(&four_way_binding(), &[odd], &default_vtypes(), t0()),
            Err(DemandError::MisalignedBin { .. })
        ));
    }

    #[test]
    fn vtype_validation() {
        let mut vt = VehicleTypeConfig::default_for(VehicleClass::Car);
        vt.sigma = 1.5;
        assert!(vt.validate().is_err());
        vt.sigma = 0.0;
        vt.length = 0.0;
        assert!(vt.validate().is_err());
    }
}
