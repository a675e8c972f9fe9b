use std::collections::BTreeSet;

use super::{sort_flows, DemandError, FlowSpec, ScenarioConfig, VehicleTypeConfig};
use crate::demand::sumo_vclass;
use crate::xmlfmt::{empty_element, XML_DECL};

/// Route file with one `vType` per configured type and one `flow` per spec,
/// flows ordered by begin time then id.
pub fn emit_routes_xml(flows: &[FlowSpec], vtypes: &[VehicleTypeConfig]) -> Result<String, DemandError> {
    let mut seen = BTreeSet::new();
    for f in flows {
        if !seen.insert(f.flow_id.as_str()) {
            return Err(DemandError::DuplicateFlowId(f.flow_id.clone()));
        }
        f.validate()?;
    }
    for vt in vtypes {
        vt.validate()?;
    }

    let mut sorted = flows.to_vec();
    sort_flows(&mut sorted);

    let mut out = String::from(XML_DECL);
    out.push_str("<routes>\n");
    for vt in vtypes {
        let length = vt.length.to_string();
        let sigma = vt.sigma.to_string();
        empty_element(
            &mut out,
            1,
            "vType",
            &[
                ("id", &vt.type_id),
                ("vClass", sumo_vclass(vt.vclass)),
                ("length", &length),
                ("sigma", &sigma),
                ("carFollowModel", vt.car_follow_model.sumo_name()),
            ],
        );
    }
    for f in &sorted {
        let begin = f.begin.to_string();
        let end = f.end.to_string();
        let number = f.count.to_string();
        empty_element(
            &mut out,
            1,
            "flow",
            &[
                ("id", &f.flow_id),
                ("from", &f.from_edge),
                ("to", &f.to_edge),
                ("begin", &begin),
                ("end", &end),
                ("number", &number),
                ("type", &f.vtype),
            ],
        );
    }
    out.push_str("</routes>\n");
    Ok(out)
}

/// Simulator configuration linking the network and route files.
pub fn emit_sumocfg(sc: &ScenarioConfig) -> Result<String, DemandError> {
    if sc.network_path.is_empty() || sc.route_path.is_empty() {
        return Err(DemandError::InvalidScenario("network and route paths must be non-empty".into()));
    }
    if !(sc.begin < sc.end) {
        return Err(DemandError::InvalidScenario(format!("begin {} must precede end {}", sc.begin, sc.end)));
    }
    if !(sc.step_length > 0.0) {
        return Err(DemandError::InvalidScenario(format!("step length must be positive, got {}", sc.step_length)));
    }
    let mut out = String::from(XML_DECL);
    out.push_str("<configuration>\n    <input>\n");
    empty_element(&mut out, 2, "net-file", &[("value", &sc.network_path)]);
    empty_element(&mut out, 2, "route-files", &[("value", &sc.route_path)]);
    out.push_str("    </input>\n    <time>\n");
    empty_element(&mut out, 2, "begin", &[("value", &sc.begin.to_string())]);
    empty_element(&mut out, 2, "end", &[("value", &sc.end.to_string())]);
    empty_element(&mut out, 2, "step-length", &[("value", &sc.step_length.to_string())]);
    out.push_str("    </time>\n");
    if let Some(path) = &sc.vehroute_output {
        out.push_str("    <output>\n");
        empty_element(&mut out, 2, "vehroute-output", &[("value", path)]);
        out.push_str("    </output>\n");
    }
    out.push_str("</configuration>\n");
    Ok(out)
}
