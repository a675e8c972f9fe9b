//! Flow and vehicle identifiers.
//!
//! Grammar: `f_<intersectionId>_<approach><turn>_<vclass>_<binIndex>`, e.g.
//! `f_13463414_NL_car_2`. The simulator names each vehicle of a flow
//! `<flowId>.<n>`; [`parse_vehicle_id`] accepts both forms.

use serde::{Deserialize, Serialize};

use super::DemandError;
use crate::tmc::MovementKey;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowIdParts {
    pub intersection_id: String,
    pub key: MovementKey,
    pub bin_index: u32,
}

fn valid_component(s: &str) -> bool {
    !s.is_empty() && !s.contains(['_', '.']) && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

pub fn encode_flow_id(intersection_id: &str, key: MovementKey, bin_index: u32) -> Result<String, DemandError> {
    if !valid_component(intersection_id) {
        return Err(DemandError::InvalidIdComponent(intersection_id.to_string()));
    }
    Ok(format!("f_{intersection_id}_{}{}_{}_{bin_index}", key.approach.letter(), key.turn.letter(), key.vclass))
}

pub fn parse_vehicle_id(vehicle_id: &str) -> Result<FlowIdParts, DemandError> {
    let bad = || DemandError::NonConformingId(vehicle_id.to_string());
    let flow_id = match vehicle_id.rsplit_once('.') {
        Some((flow, ordinal)) if !ordinal.is_empty() && ordinal.bytes().all(|b| b.is_ascii_digit()) => flow,
        Some(_) => return Err(bad()),
        None => vehicle_id,
    };
    let parts: Vec<&str> = flow_id.split('_').collect();
    let [prefix, intersection_id, movement, vclass, bin] = parts[..] else {
        return Err(bad());
    };
    if prefix != "f" || !valid_component(intersection_id) || !bin.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let key: MovementKey = format!("{movement}_{vclass}").parse().map_err(|_| bad())?;
    let bin_index = bin.parse().map_err(|_| bad())?;
    Ok(FlowIdParts { intersection_id: intersection_id.to_string(), key, bin_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::Cardinal;
    use crate::tmc::{Turn, VehicleClass};
    use proptest::prelude::*;

    #[test]
    fn grammar_examples() {
        let key = MovementKey::new(Cardinal::North, Turn::Left, VehicleClass::Car);
        assert_eq!(encode_flow_id("13463414", key, 2).unwrap(), "f_13463414_NL_car_2");
        let parsed = parse_vehicle_id("f_13463414_NL_car_2.17").unwrap();
        assert_eq!(parsed, FlowIdParts { intersection_id: "13463414".into(), key, bin_index: 2 });
        assert!(parse_vehicle_id("veh42").is_err());
    }

    #[test]
    fn rejects_near_misses() {
        for id in ["g_1_NL_car_0", "f_1_NX_car_0", "f_1_NL_van_0", "f_1_NL_car_x", "f_1_NL_car_0.", "f_1_NL_car_0.a", "f__NL_car_0", "f_1_NL_car"] {
            assert!(parse_vehicle_id(id).is_err(), "{id}");
        }
        let key = MovementKey::new(Cardinal::North, Turn::Left, VehicleClass::Car);
        assert!(encode_flow_id("a_b", key, 0).is_err());
        assert!(encode_flow_id("a.b", key, 0).is_err());
        assert!(encode_flow_id("", key, 0).is_err());
    }

    proptest! {
        #[test]
        fn parse_inverts_encode(
            id in "[A-Za-z0-9-]{1,12}",
            key_idx in 0usize..36,
            bin in 0u32..10_000,
            ordinal in proptest::option::of(0u32..100_000),
        ) {
            let key = MovementKey::all().nth(key_idx).unwrap();
            let mut vid = encode_flow_id(&id, key, bin).unwrap();
            if let Some(n) = ordinal {
                vid = format!("{vid}.{n}");
            }
            prop_assert_eq!(parse_vehicle_id(&vid).unwrap(), FlowIdParts { intersection_id: id, key, bin_index: bin });
        }
    }
}
