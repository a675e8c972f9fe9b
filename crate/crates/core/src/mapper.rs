//! Binding a geographic intersection to a network junction and labelling
//! its edges by cardinal travel direction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{angular_distance, bearing_degrees, NetError, RoadNetwork};

/// Default node-matching tolerance in metres.
pub const DEFAULT_TOLERANCE_M: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cardinal {
    East,
    North,
    West,
    South,
}

impl Cardinal {
    pub const ALL: [Cardinal; 4] = [Cardinal::East, Cardinal::North, Cardinal::West, Cardinal::South];

    /// Bearing of the direction's axis in the mathematical convention.
    pub fn axis_degrees(self) -> f64 {
        match self {
            Cardinal::East => 0.0,
            Cardinal::North => 90.0,
            Cardinal::West => 180.0,
            Cardinal::South => 270.0,
        }
    }

    /// Quarter turn counter-clockwise (a left turn for a vehicle heading this way).
    pub fn ccw(self) -> Cardinal {
        match self {
            Cardinal::East => Cardinal::North,
            Cardinal::North => Cardinal::West,
            Cardinal::West => Cardinal::South,
            Cardinal::South => Cardinal::East,
        }
    }

    pub fn cw(self) -> Cardinal {
        match self {
            Cardinal::East => Cardinal::South,
            Cardinal::South => Cardinal::West,
            Cardinal::West => Cardinal::North,
            Cardinal::North => Cardinal::East,
        }
    }

    pub fn opposite(self) -> Cardinal {
        self.ccw().ccw()
    }

    pub fn letter(self) -> char {
        match self {
            Cardinal::East => 'E',
            Cardinal::North => 'N',
            Cardinal::West => 'W',
            Cardinal::South => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Cardinal> {
        match c {
            'E' => Some(Cardinal::East),
            'N' => Some(Cardinal::North),
            'W' => Some(Cardinal::West),
            'S' => Some(Cardinal::South),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cardinal::East => "east",
            Cardinal::North => "north",
            Cardinal::West => "west",
            Cardinal::South => "south",
        }
    }
}

impl fmt::Display for Cardinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cardinal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cardinal::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown direction '{s}'"))
    }
}

/// Half-open quadrant classification:
/// east `[315,360) ∪ [0,45)`, north `[45,135)`, west `[135,225)`, south `[225,315)`.
pub fn classify_direction(angle: f64) -> Cardinal {
    let angle = if (0.0..360.0).contains(&angle) { angle } else { angle.rem_euclid(360.0) };
    if !(45.0..315.0).contains(&angle) {
        Cardinal::East
    } else if angle < 135.0 {
        Cardinal::North
    } else if angle < 225.0 {
        Cardinal::West
    } else {
        Cardinal::South
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("network has no junctions to match against")]
    EmptyNetwork,
    #[error("unknown junction '{0}'")]
    UnknownJunction(String),
    #[error("junction '{0}' is internal")]
    InternalJunction(String),
    #[error(
        "nearest junction to '{source_id}' is '{junction_id}' at {distance:.2} m, beyond the {tolerance} m tolerance"
    )]
    ToleranceExceeded { source_id: String, junction_id: String, distance: f64, tolerance: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NearestJunction {
    Within { junction_id: String, distance: f64 },
    ToleranceExceeded { junction_id: String, distance: f64 },
}

impl NearestJunction {
    pub fn junction_id(&self) -> &str {
        match self {
            NearestJunction::Within { junction_id, .. } | NearestJunction::ToleranceExceeded { junction_id, .. } => {
                junction_id
            }
        }
    }

    pub fn distance(&self) -> f64 {
        match self {
            NearestJunction::Within { distance, .. } | NearestJunction::ToleranceExceeded { distance, .. } => *distance,
        }
    }
}

/// Closest non-internal junction to a geographic point, gated by `tol`.
///
/// A candidate beyond the tolerance is still returned, wrapped in
/// [`NearestJunction::ToleranceExceeded`], so the caller can ask for
/// confirmation instead of failing outright.
pub fn find_nearest_junction(net: &RoadNetwork, lon: f64, lat: f64, tol: f64) -> Result<NearestJunction, MapError> {
    let (x, y) = net.lonlat_to_xy(lon, lat)?;
    let (id, distance) = net.junction_index().nearest(x, y).ok_or(MapError::EmptyNetwork)?;
    let junction_id = id.to_string();
    Ok(if distance > tol {
        NearestJunction::ToleranceExceeded { junction_id, distance }
    } else {
        NearestJunction::Within { junction_id, distance }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EdgeFilterPolicy {
    /// Admit edges with an empty type string (hand-built networks carry none).
    pub include_untyped: bool,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NotHighway,
    Footway,
    Internal,
    DegenerateGeometry,
}

impl EdgeFilterPolicy {
    pub fn check(&self, type_string: &str) -> Result<(), SkipReason> {
        if type_string.is_empty() && self.include_untyped {
            return Ok(());
        }
        if !type_string.contains("highway") {
            return Err(SkipReason::NotHighway);
        }
        if type_string.contains("footway") {
            return Err(SkipReason::Footway);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEdge {
    pub edge_id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRole {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeMapping {
    pub incoming: BTreeMap<Cardinal, Vec<String>>,
    pub outgoing: BTreeMap<Cardinal, Vec<String>>,
    pub skipped_edges: Vec<SkippedEdge>,
    pub notes: Vec<String>,
}

impl EdgeMapping {
    pub fn edges(&self, role: EdgeRole, dir: Cardinal) -> &[String] {
        let map = match role {
            EdgeRole::Incoming => &self.incoming,
            EdgeRole::Outgoing => &self.outgoing,
        };
        map.get(&dir).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The edge that receives demand for a direction: the list head.
    pub fn representative(&self, role: EdgeRole, dir: Cardinal) -> Option<&str> {
        self.edges(role, dir).first().map(String::as_str)
    }
}

/// Classify every edge touching `junction_id` by the bearing of its far
/// endpoint. Incoming edges use the bearing from their origin toward the
/// junction (travel direction); outgoing edges the bearing from the junction
/// to their destination.
pub fn map_intersection_edges(
    net: &RoadNetwork,
    junction_id: &str,
    filter: &EdgeFilterPolicy,
) -> Result<EdgeMapping, MapError> {
    let junction = net.junction(junction_id).ok_or_else(|| MapError::UnknownJunction(junction_id.to_string()))?;
    if junction.is_internal() {
        return Err(MapError::InternalJunction(junction_id.to_string()));
    }
    let center = junction.coord();

    let mut mapping = EdgeMapping::default();
    for role in [EdgeRole::Incoming, EdgeRole::Outgoing] {
        let edge_ids = match role {
            EdgeRole::Incoming => &junction.incoming_edges,
            EdgeRole::Outgoing => &junction.outgoing_edges,
        };
        let mut classified: BTreeMap<Cardinal, Vec<(f64, &str)>> = BTreeMap::new();
        for edge_id in edge_ids {
            let edge = &net.edges[edge_id];
            if !edge.is_normal() {
                mapping.skipped_edges.push(SkippedEdge { edge_id: edge_id.clone(), reason: SkipReason::Internal });
                continue;
            }
            if let Err(reason) = filter.check(&edge.type_string) {
                mapping.skipped_edges.push(SkippedEdge { edge_id: edge_id.clone(), reason });
                continue;
            }
            let far_id = match role {
                EdgeRole::Incoming => edge.from_junction.as_deref(),
                EdgeRole::Outgoing => edge.to_junction.as_deref(),
            };
            let far = far_id.and_then(|id| net.junction(id)).map(|j| j.coord());
            let bearing = far.and_then(|p| match role {
                EdgeRole::Incoming => bearing_degrees(p, center).ok(),
                EdgeRole::Outgoing => bearing_degrees(center, p).ok(),
            });
            let Some(angle) = bearing else {
                mapping
                    .skipped_edges
                    .push(SkippedEdge { edge_id: edge_id.clone(), reason: SkipReason::DegenerateGeometry });
                continue;
            };
            let dir = classify_direction(angle);
            classified.entry(dir).or_default().push((angular_distance(angle, dir.axis_degrees()), edge_id));
        }
        let target = match role {
            EdgeRole::Incoming => &mut mapping.incoming,
            EdgeRole::Outgoing => &mut mapping.outgoing,
        };
        for (dir, mut edges) in classified {
            edges.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            if edges.len() > 1 {
                mapping.notes.push(format!(
                    "{} {role:?} edges classified {dir}; using '{}'",
                    edges.len(),
                    edges[0].1
                ));
            }
            target.insert(dir, edges.into_iter().map(|(_, id)| id.to_string()).collect());
        }
    }
    let legs = Cardinal::ALL
        .iter()
        .filter(|&&c| !mapping.edges(EdgeRole::Incoming, c).is_empty() || !mapping.edges(EdgeRole::Outgoing, c).is_empty())
        .count();
    let approaches = junction.incoming_edges.len().max(junction.outgoing_edges.len());
    if approaches > 4 {
        mapping.notes.push(format!("junction '{junction_id}' has more than four legs ({approaches} edges on one side, {legs} directions populated)"));
    }
    Ok(mapping)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionBinding {
    pub source_id: String,
    pub junction_id: String,
    pub match_distance: f64,
    pub mapping: EdgeMapping,
}

/// Nearest-junction search followed by edge classification.
pub fn bind_intersection(
    net: &RoadNetwork,
    source_id: &str,
    lon: f64,
    lat: f64,
    tol: f64,
    filter: &EdgeFilterPolicy,
) -> Result<IntersectionBinding, MapError> {
    let (junction_id, distance) = match find_nearest_junction(net, lon, lat, tol)? {
        NearestJunction::Within { junction_id, distance } => (junction_id, distance),
        NearestJunction::ToleranceExceeded { junction_id, distance } => {
            return Err(MapError::ToleranceExceeded { source_id: source_id.to_string(), junction_id, distance, tolerance: tol })
        }
    };
    let mapping = map_intersection_edges(net, &junction_id, filter)?;
    Ok(IntersectionBinding { source_id: source_id.to_string(), junction_id, match_distance: distance, mapping })
}
