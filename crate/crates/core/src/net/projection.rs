//! Geographic to network-frame conversion.
//!
//! Networks produced from OSM extracts are stored in UTM metres shifted by
//! a `netOffset`; hand-built networks use the identity projection (`"!"`),
//! where the coordinates are taken verbatim and only the offset applies.

use serde::{Deserialize, Serialize};

use super::NetError;

/// WGS84 semi-major axis in metres.
const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const UTM_SCALE: f64 = 0.9996;
const UTM_FALSE_EASTING: f64 = 500_000.0;
const UTM_FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionKind {
    Identity,
    Utm { zone: u8, northern_hemisphere: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoProjection {
    pub kind: ProjectionKind,
    pub net_offset: (f64, f64),
    /// `(xmin, ymin, xmax, ymax)` in metres.
    pub conv_boundary: [f64; 4],
    /// `(lonmin, latmin, lonmax, latmax)` in degrees.
    pub orig_boundary: [f64; 4],
}

impl GeoProjection {
    pub fn identity(net_offset: (f64, f64)) -> Self {
        GeoProjection {
            kind: ProjectionKind::Identity,
            net_offset,
            conv_boundary: [0.0; 4],
            orig_boundary: [0.0; 4],
        }
    }

    pub fn utm(zone: u8, northern_hemisphere: bool, net_offset: (f64, f64)) -> Result<Self, NetError> {
        if !(1..=60).contains(&zone) {
            return Err(NetError::UnsupportedProjection(format!("utm zone {zone}")));
        }
        Ok(GeoProjection {
            kind: ProjectionKind::Utm { zone, northern_hemisphere },
            net_offset,
            conv_boundary: [0.0; 4],
            orig_boundary: [0.0; 4],
        })
    }

    /// Parse a `projParameter` value. Only `"!"` and PROJ-style UTM strings
    /// are understood.
    pub fn parse_proj_parameter(param: &str) -> Result<ProjectionKind, NetError> {
        let trimmed = param.trim();
        if trimmed == "!" {
            return Ok(ProjectionKind::Identity);
        }
        let mut is_utm = false;
        let mut zone = None;
        let mut south = false;
        for token in trimmed.split_whitespace() {
            let token = token.trim_start_matches('+');
            match token.split_once('=') {
                Some(("proj", "utm")) => is_utm = true,
                Some(("zone", z)) => zone = z.parse::<u8>().ok(),
                None if token == "south" => south = true,
                _ => {}
            }
        }
        match (is_utm, zone) {
            (true, Some(z)) if (1..=60).contains(&z) => Ok(ProjectionKind::Utm {
                zone: z,
                northern_hemisphere: !south,
            }),
            _ => Err(NetError::UnsupportedProjection(param.to_string())),
        }
    }

    pub fn proj_parameter(&self) -> String {
        match self.kind {
            ProjectionKind::Identity => "!".to_string(),
            ProjectionKind::Utm { zone, northern_hemisphere } => format!(
                "+proj=utm +zone={zone}{} +ellps=WGS84 +datum=WGS84 +units=m +no_defs",
                if northern_hemisphere { "" } else { " +south" }
            ),
        }
    }

    /// Convert `(lon, lat)` in degrees to network-frame metres.
    pub fn lonlat_to_xy(&self, lon: f64, lat: f64) -> Result<(f64, f64), NetError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(NetError::CoordinateOutOfRange { lon, lat });
        }
        let (x, y) = match self.kind {
            ProjectionKind::Identity => (lon, lat),
            ProjectionKind::Utm { zone, northern_hemisphere } => {
                utm_forward(lon, lat, zone, northern_hemisphere)
            }
        };
        Ok((x + self.net_offset.0, y + self.net_offset.1))
    }
}

/// Series coefficients for the Krüger forward transform, to sixth order in
/// the third flattening `n`.
struct KruegerSeries {
    rectifying_radius: f64,
    alpha: [f64; 6],
    eccentricity: f64,
}

fn krueger_series() -> KruegerSeries {
    let n = WGS84_F / (2.0 - WGS84_F);
    let n2 = n * n;
    let n3 = n2 * n;
    let n4 = n3 * n;
    let n5 = n4 * n;
    let n6 = n5 * n;
    let rectifying_radius = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
    let alpha = [
        n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5
            + 7891.0 / 37800.0 * n6,
        13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
            - 1_983_433.0 / 1_935_360.0 * n6,
        61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5
            + 167_603.0 / 181_440.0 * n6,
        49561.0 / 161_280.0 * n4 - 179.0 / 168.0 * n5 + 6_601_661.0 / 7_257_600.0 * n6,
        34729.0 / 80640.0 * n5 - 3_418_889.0 / 1_995_840.0 * n6,
        212_378_941.0 / 319_334_400.0 * n6,
    ];
    KruegerSeries {
        rectifying_radius,
        alpha,
        eccentricity: (WGS84_F * (2.0 - WGS84_F)).sqrt(),
    }
}

/// UTM easting/northing (no offset) for a WGS84 coordinate in the given zone.
pub fn utm_forward(lon: f64, lat: f64, zone: u8, northern_hemisphere: bool) -> (f64, f64) {
    let series = krueger_series();
    let central_meridian = (6.0 * f64::from(zone) - 183.0).to_radians();
    let phi = lat.to_radians();
    let lambda = lon.to_radians() - central_meridian;

    let e = series.eccentricity;
    let sin_phi = phi.sin();
    // tangent of the conformal latitude
    let t = (sin_phi.atanh() - e * (e * sin_phi).atanh()).sinh();
    let xi_prime = t.atan2(lambda.cos());
    let eta_prime = (lambda.sin() / (1.0 + t * t).sqrt()).atanh();

    let mut xi = xi_prime;
    let mut eta = eta_prime;
    for (j, alpha) in series.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += alpha * (k * xi_prime).sin() * (k * eta_prime).cosh();
        eta += alpha * (k * xi_prime).cos() * (k * eta_prime).sinh();
    }

    let easting = UTM_FALSE_EASTING + UTM_SCALE * series.rectifying_radius * eta;
    let mut northing = UTM_SCALE * series.rectifying_radius * xi;
    if !northern_hemisphere {
        northing += UTM_FALSE_NORTHING_SOUTH;
    }
    (easting, northing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_adds_offset() {
        let proj = GeoProjection::identity((100.0, 200.0));
        assert_eq!(proj.lonlat_to_xy(3.0, 4.0).unwrap(), (103.0, 204.0));
    }

    #[test]
    fn latitude_out_of_range_is_rejected() {
        let proj = GeoProjection::utm(17, true, (0.0, 0.0)).unwrap();
        assert!(matches!(
            proj.lonlat_to_xy(-79.0, 91.0),
            Err(NetError::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn central_meridian_on_equator_is_false_origin() {
        let (e, n) = utm_forward(3.0, 0.0, 31, true);
        assert!((e - 500_000.0).abs() < 1e-6);
        assert!(n.abs() < 1e-6);
    }

    #[test]
    fn proj_parameter_round_trip() {
        for kind in [
            ProjectionKind::Identity,
            ProjectionKind::Utm { zone: 17, northern_hemisphere: true },
            ProjectionKind::Utm { zone: 56, northern_hemisphere: false },
        ] {
            let proj = GeoProjection { kind, ..GeoProjection::identity((0.0, 0.0)) };
            assert_eq!(GeoProjection::parse_proj_parameter(&proj.proj_parameter()).unwrap(), kind);
        }
    }

    #[test]
    fn unknown_projection_is_echoed() {
        let err = GeoProjection::parse_proj_parameter("+proj=merc +lat_ts=0").unwrap_err();
        assert!(err.to_string().contains("+proj=merc"));
    }

    #[test]
    fn easting_increases_with_longitude_within_zone() {
        let mut last = f64::NEG_INFINITY;
        for i in 0..=60 {
            let lon = -84.0 + 0.1 * f64::from(i);
            let (e, _) = utm_forward(lon, 43.65, 17, true);
            assert!(e > last);
            last = e;
        }
    }
}
