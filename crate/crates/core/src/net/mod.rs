//! Road network model read from simulator `.net.xml` files.
//!
//! Only the parts needed to place intersections are kept: the `location`
//! header, junction coordinates and edge endpoints. Lane geometry,
//! connections and signal programs are ignored.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::xmlfmt::{empty_element, open_tag, XML_DECL};

mod geometry;
mod index;
mod projection;

pub use geometry::{angular_distance, bearing_degrees, distance};
pub use index::JunctionIndex;
pub use projection::{utm_forward, GeoProjection, ProjectionKind};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("malformed network XML: {0}")]
    Xml(String),
    #[error("network has no location element")]
    MissingLocation,
    #[error("missing junctions")]
    MissingJunctions,
    #[error("<{element}> is missing attribute '{attribute}'")]
    MissingAttribute { element: String, attribute: &'static str },
    #[error("<{element}> has invalid {attribute}=\"{value}\"")]
    InvalidAttribute { element: String, attribute: &'static str, value: String },
    #[error("edge '{edge}' references unknown junction '{junction}'")]
    DanglingEdge { edge: String, junction: String },
    #[error("edge '{0}' starts and ends at the same junction")]
    SelfLoop(String),
    #[error("duplicate {kind} id '{id}'")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unsupported projection '{0}'")]
    UnsupportedProjection(String),
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    CoordinateOutOfRange { lon: f64, lat: f64 },
    #[error("degenerate bearing")]
    DegenerateBearing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeFunction {
    Normal,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub junction_type: String,
    pub incoming_edges: Vec<String>,
    pub outgoing_edges: Vec<String>,
}

impl Junction {
    pub fn is_internal(&self) -> bool {
        self.junction_type == "internal"
    }

    pub fn coord(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    /// Absent for internal edges, which live inside a junction.
    pub from_junction: Option<String>,
    pub to_junction: Option<String>,
    pub type_string: String,
    pub lane_count: u32,
    pub function: EdgeFunction,
}

impl Edge {
    pub fn is_normal(&self) -> bool {
        self.function == EdgeFunction::Normal
    }
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub projection: GeoProjection,
    pub junctions: BTreeMap<String, Junction>,
    pub edges: BTreeMap<String, Edge>,
    index: OnceLock<JunctionIndex>,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.projection == other.projection
            && self.junctions == other.junctions
            && self.edges == other.edges
    }
}

impl RoadNetwork {
    /// Assemble a network from parts, deriving each junction's incoming and
    /// outgoing edge lists from the edge endpoints.
    pub fn from_parts(
        projection: GeoProjection,
        junctions: impl IntoIterator<Item = Junction>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self, NetError> {
        let mut junction_map = BTreeMap::new();
        for mut j in junctions {
            if !j.x.is_finite() || !j.y.is_finite() {
                return Err(NetError::InvalidAttribute {
                    element: format!("junction id=\"{}\"", j.id),
                    attribute: "x/y",
                    value: format!("{},{}", j.x, j.y),
                });
            }
            j.incoming_edges.clear();
            j.outgoing_edges.clear();
            let id = j.id.clone();
            if junction_map.insert(id.clone(), j).is_some() {
                return Err(NetError::DuplicateId { kind: "junction", id });
            }
        }
        if junction_map.is_empty() {
            return Err(NetError::MissingJunctions);
        }

        let mut edge_map = BTreeMap::new();
        for e in edges {
            if e.is_normal() && e.from_junction.is_some() && e.from_junction == e.to_junction {
                return Err(NetError::SelfLoop(e.id));
            }
            for endpoint in [&e.from_junction, &e.to_junction].into_iter().flatten() {
                if !junction_map.contains_key(endpoint) {
                    return Err(NetError::DanglingEdge { edge: e.id.clone(), junction: endpoint.clone() });
                }
            }
            let id = e.id.clone();
            if edge_map.insert(id.clone(), e).is_some() {
                return Err(NetError::DuplicateId { kind: "edge", id });
            }
        }

        // BTreeMap iteration keeps both lists sorted by edge id.
        for e in edge_map.values() {
            if let Some(from) = &e.from_junction {
                junction_map.get_mut(from).unwrap().outgoing_edges.push(e.id.clone());
            }
            if let Some(to) = &e.to_junction {
                junction_map.get_mut(to).unwrap().incoming_edges.push(e.id.clone());
            }
        }

        Ok(RoadNetwork {
            projection,
            junctions: junction_map,
            edges: edge_map,
            index: OnceLock::new(),
        })
    }

    pub fn junction(&self, id: &str) -> Option<&Junction> {
        self.junctions.get(id)
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn normal_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(|e| e.is_normal())
    }

    pub fn lonlat_to_xy(&self, lon: f64, lat: f64) -> Result<(f64, f64), NetError> {
        self.projection.lonlat_to_xy(lon, lat)
    }

    /// Spatial index over non-internal junctions, built on first use.
    pub fn junction_index(&self) -> &JunctionIndex {
        self.index.get_or_init(|| {
            JunctionIndex::build(
                self.junctions
                    .values()
                    .filter(|j| !j.is_internal())
                    .map(|j| (j.id.as_str(), j.x, j.y)),
            )
        })
    }

    /// Serialize the model back to network XML. Re-parsing the output gives
    /// an equal model.
    pub fn to_xml(&self) -> String {
        let mut out = String::from(XML_DECL);
        out.push_str("<net version=\"1.20\">\n");
        let p = &self.projection;
        let offset = format!("{},{}", p.net_offset.0, p.net_offset.1);
        let conv = join_floats(&p.conv_boundary);
        let orig = join_floats(&p.orig_boundary);
        let proj = p.proj_parameter();
        empty_element(
            &mut out,
            1,
            "location",
            &[("netOffset", &offset), ("convBoundary", &conv), ("origBoundary", &orig), ("projParameter", &proj)],
        );
        for e in self.edges.values() {
            let mut attrs: Vec<(&str, &str)> = vec![("id", &e.id)];
            if let Some(from) = &e.from_junction {
                attrs.push(("from", from));
            }
            if let Some(to) = &e.to_junction {
                attrs.push(("to", to));
            }
            if !e.type_string.is_empty() {
                attrs.push(("type", &e.type_string));
            }
            if e.function == EdgeFunction::Internal {
                attrs.push(("function", "internal"));
            }
            open_tag(&mut out, 1, "edge", &attrs);
            out.push_str(">\n");
            for lane in 0..e.lane_count {
                let lane_id = format!("{}_{lane}", e.id);
                let index = lane.to_string();
                empty_element(&mut out, 2, "lane", &[("id", &lane_id), ("index", &index)]);
            }
            out.push_str("    </edge>\n");
        }
        for j in self.junctions.values() {
            let x = j.x.to_string();
            let y = j.y.to_string();
            empty_element(&mut out, 1, "junction", &[("id", &j.id), ("type", &j.junction_type), ("x", &x), ("y", &y)]);
        }
        out.push_str("</net>\n");
        out
    }
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn element_label(node: roxmltree::Node) -> String {
    match node.attribute("id") {
        Some(id) => format!("{} id=\"{id}\"", node.tag_name().name()),
        None => node.tag_name().name().to_string(),
    }
}

fn required_attr<'a>(node: roxmltree::Node<'a, '_>, attribute: &'static str) -> Result<&'a str, NetError> {
    node.attribute(attribute).ok_or_else(|| NetError::MissingAttribute { element: element_label(node), attribute })
}

fn parse_float(node: roxmltree::Node, attribute: &'static str, value: &str) -> Result<f64, NetError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| NetError::InvalidAttribute { element: element_label(node), attribute, value: value.to_string() })
}

fn parse_float_list<const N: usize>(
    node: roxmltree::Node,
    attribute: &'static str,
) -> Result<Option<[f64; N]>, NetError> {
    let Some(raw) = node.attribute(attribute) else {
        return Ok(None);
    };
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != N {
        return Err(NetError::InvalidAttribute { element: element_label(node), attribute, value: raw.to_string() });
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = parse_float(node, attribute, part)?;
    }
    Ok(Some(out))
}

/// Parse a simulator network file.
pub fn parse_network(xml_text: &str) -> Result<RoadNetwork, NetError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| NetError::Xml(e.to_string()))?;
    let root = doc.root_element();

    let location = root
        .children()
        .find(|n| n.has_tag_name("location"))
        .ok_or(NetError::MissingLocation)?;
    let kind = GeoProjection::parse_proj_parameter(required_attr(location, "projParameter")?)?;
    let net_offset = parse_float_list::<2>(location, "netOffset")?.unwrap_or([0.0, 0.0]);
    let conv_boundary = parse_float_list::<4>(location, "convBoundary")?.unwrap_or([0.0; 4]);
    let orig_boundary = parse_float_list::<4>(location, "origBoundary")?.unwrap_or([0.0; 4]);
    if conv_boundary[0] > conv_boundary[2] || conv_boundary[1] > conv_boundary[3] {
        return Err(NetError::InvalidAttribute {
            element: "location".into(),
            attribute: "convBoundary",
            value: join_floats(&conv_boundary),
        });
    }
    let projection = GeoProjection {
        kind,
        net_offset: (net_offset[0], net_offset[1]),
        conv_boundary,
        orig_boundary,
    };

    let mut junctions = Vec::new();
    let mut edges = Vec::new();
    for node in root.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "junction" => {
                let id = required_attr(node, "id")?;
                junctions.push(Junction {
                    id: id.to_string(),
                    x: parse_float(node, "x", required_attr(node, "x")?)?,
                    y: parse_float(node, "y", required_attr(node, "y")?)?,
                    junction_type: node.attribute("type").unwrap_or_default().to_string(),
                    incoming_edges: Vec::new(),
                    outgoing_edges: Vec::new(),
                });
            }
            "edge" => {
                let id = required_attr(node, "id")?;
                let function = match node.attribute("function") {
                    Some("internal" | "crossing" | "walkingarea") => EdgeFunction::Internal,
                    _ => EdgeFunction::Normal,
                };
                let (from, to) = match function {
                    EdgeFunction::Normal => (
                        Some(required_attr(node, "from")?.to_string()),
                        Some(required_attr(node, "to")?.to_string()),
                    ),
                    EdgeFunction::Internal => (
                        node.attribute("from").map(str::to_string),
                        node.attribute("to").map(str::to_string),
                    ),
                };
                let lanes = node.children().filter(|c| c.has_tag_name("lane")).count();
                edges.push(Edge {
                    id: id.to_string(),
                    from_junction: from,
                    to_junction: to,
                    type_string: node.attribute("type").unwrap_or_default().to_string(),
                    lane_count: u32::try_from(lanes.max(1)).unwrap_or(u32::MAX),
                    function,
                });
            }
            _ => {}
        }
    }

    RoadNetwork::from_parts(projection, junctions, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"<net>
        <location netOffset="0.00,0.00" convBoundary="0,0,10,10" origBoundary="0,0,10,10" projParameter="!"/>
        <edge id=":c_0" function="internal"><lane id=":c_0_0" index="0"/></edge>
        <edge id="a" from="j1" to="j2" type="highway.primary"><lane id="a_0"/><lane id="a_1"/></edge>
        <junction id="j1" type="priority" x="0" y="0"/>
        <junction id="j2" type="priority" x="10" y="0"/>
        <junction id=":c" type="internal" x="5" y="0"/>
    </net>"#;

    #[test]
    fn parses_minimal_network() {
        let net = parse_network(TINY).unwrap();
        assert_eq!(net.junctions.len(), 3);
        assert_eq!(net.edges.len(), 2);
        assert_eq!(net.normal_edges().count(), 1);
        let a = net.edge("a").unwrap();
        assert_eq!(a.lane_count, 2);
        assert_eq!(net.junction("j2").unwrap().incoming_edges, vec!["a"]);
        assert_eq!(net.edge(":c_0").unwrap().function, EdgeFunction::Internal);
        assert_eq!(net.junction_index().len(), 2);
    }

    #[test]
    fn zero_junctions() {
        let xml = r#"<net><location projParameter="!"/></net>"#;
        let err = parse_network(xml).unwrap_err();
        assert!(matches!(err, NetError::MissingJunctions));
        assert_eq!(err.to_string(), "missing junctions");
    }

    #[test]
    fn missing_location() {
        let xml = r#"<net><junction id="a" x="0" y="0"/></net>"#;
        assert!(matches!(parse_network(xml), Err(NetError::MissingLocation)));
    }

    #[test]
    fn dangling_edge_names_the_edge() {
        let xml = r#"<net><location projParameter="!"/>
            <junction id="a" x="0" y="0"/>
            <edge id="bad" from="a" to="ghost"/></net>"#;
        let err = parse_network(xml).unwrap_err();
        assert!(matches!(&err, NetError::DanglingEdge { edge, .. } if edge == "bad"));
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn malformed_xml() {
        assert!(matches!(parse_network("<net><location"), Err(NetError::Xml(_))));
    }

    #[test]
    fn unsupported_projection_is_a_parse_error() {
        let xml = r#"<net><location projParameter="+proj=lcc"/><junction id="a" x="0" y="0"/></net>"#;
        assert!(matches!(parse_network(xml), Err(NetError::UnsupportedProjection(p)) if p == "+proj=lcc"));
    }

    #[test]
    fn serialize_is_a_fixed_point() {
        let net = parse_network(TINY).unwrap();
        let again = parse_network(&net.to_xml()).unwrap();
        assert_eq!(net, again);
    }
}
