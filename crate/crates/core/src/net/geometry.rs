use super::NetError;

/// Planar bearing from `from` to `to` in degrees, in `[0, 360)`.
///
/// Mathematical convention: 0° points along +x (east), 90° along +y (north).
pub fn bearing_degrees(from: (f64, f64), to: (f64, f64)) -> Result<f64, NetError> {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(NetError::DegenerateBearing);
    }
    let deg = dy.atan2(dx).to_degrees().rem_euclid(360.0);
    // rem_euclid can round a tiny negative angle up to exactly 360
    Ok(if deg >= 360.0 { 0.0 } else { deg })
}

/// Smallest absolute angular difference between two bearings, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axis_bearings() {
        assert_eq!(bearing_degrees((0.0, 0.0), (10.0, 0.0)).unwrap(), 0.0);
        assert_eq!(bearing_degrees((0.0, 0.0), (0.0, 5.0)).unwrap(), 90.0);
        assert_eq!(bearing_degrees((0.0, 0.0), (-1.0, -1.0)).unwrap(), 225.0);
    }

    #[test]
    fn zero_length_is_degenerate() {
        assert!(matches!(
            bearing_degrees((1.0, 1.0), (1.0, 1.0)),
            Err(NetError::DegenerateBearing)
        ));
    }

    proptest! {
        #[test]
        fn reverse_bearing_differs_by_half_turn(
            px in -1e4f64..1e4, py in -1e4f64..1e4, qx in -1e4f64..1e4, qy in -1e4f64..1e4,
        ) {
            prop_assume!((px, py) != (qx, qy));
            let forward = bearing_degrees((px, py), (qx, qy)).unwrap();
            let back = bearing_degrees((qx, qy), (px, py)).unwrap();
            prop_assert!((0.0..360.0).contains(&forward));
            prop_assert!(angular_distance(forward, (back + 180.0) % 360.0) < 1e-9);
        }
    }
}
