//! Shared helpers for the integration tests: fixture paths, a scripted
//! TraCI server, a vehroute synthesizer and synthetic networks.
#![allow(dead_code)]

pub mod mock_traci;

use std::path::PathBuf;

use tmcsim::demand::FlowSpec;
use tmcsim::net::{Edge, EdgeFunction, GeoProjection, Junction, RoadNetwork};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// A vehroute document holding exactly `count` vehicles per flow, named the
/// way the simulator names flow members (`<flow id>.<n>`).
pub fn synthesize_vehroutes(flows: &[FlowSpec]) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<routes>\n");
    for f in flows {
        let gap = (f.end - f.begin) / f64::from(f.count);
        for n in 0..f.count {
            let depart = f.begin + gap * f64::from(n);
            out.push_str(&format!(
                "    <vehicle id=\"{}.{n}\" depart=\"{depart:.2}\" arrival=\"{:.2}\">\n        <route edges=\"{} {}\"/>\n    </vehicle>\n",
                f.flow_id,
                depart + 20.0,
                f.from_edge,
                f.to_edge
            ));
        }
    }
    out.push_str("</routes>\n");
    out
}

fn junction(id: &str, x: f64, y: f64, ty: &str) -> Junction {
    Junction {
        id: id.into(),
        x,
        y,
        junction_type: ty.into(),
        incoming_edges: vec![],
        outgoing_edges: vec![],
    }
}

fn edge(id: String, from: &str, to: &str) -> Edge {
    Edge {
        id,
        from_junction: Some(from.into()),
        to_junction: Some(to.into()),
        type_string: "highway.primary".into(),
        lane_count: 1,
        function: EdgeFunction::Normal,
    }
}

/// One isolated four-way junction per `(name, x, y)`, legs 50 m long.
/// Edges are `<leg><name>in` and `<leg><name>out` where the leg letter is
/// the compass side of the stub.
pub fn four_way_network(centres: &[(String, f64, f64)]) -> RoadNetwork {
    let mut junctions = Vec::new();
    let mut edges = Vec::new();
    for (name, x, y) in centres {
        junctions.push(junction(name, *x, *y, "priority"));
        for (leg, dx, dy) in [("n", 0.0, 50.0), ("s", 0.0, -50.0), ("e", 50.0, 0.0), ("w", -50.0, 0.0)] {
            let stub = format!("{name}{leg}");
            junctions.push(junction(&stub, x + dx, y + dy, "dead_end"));
            edges.push(edge(format!("{leg}{name}in"), &stub, name));
            edges.push(edge(format!("{leg}{name}out"), name, &stub));
        }
    }
    RoadNetwork::from_parts(GeoProjection::identity((0.0, 0.0)), junctions, edges).expect("valid synthetic network")
}

/// Point-only network for nearest-junction checks.
pub fn point_network(points: &[(String, f64, f64)], offset: (f64, f64)) -> RoadNetwork {
    let junctions = points.iter().map(|(id, x, y)| junction(id, *x, *y, "priority"));
    RoadNetwork::from_parts(GeoProjection::identity(offset), junctions, Vec::new()).expect("valid point network")
}
