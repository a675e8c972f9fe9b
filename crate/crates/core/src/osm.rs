//! Map extract download around intersections and conversion to a
//! simulator network with an external tool.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{HttpFetcher, ProcessRunner};

/// Metres per degree of latitude on the spherical approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;
pub const DEFAULT_BUFFER_M: f64 = 5000.0;

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("no points to enclose")]
    EmptyPoints,
    #[error("buffer must be a non-negative distance, got {0}")]
    InvalidBuffer(f64),
    #[error("invalid coordinate ({0}, {1})")]
    InvalidPoint(f64, f64),
    #[error("zero-area box")]
    ZeroAreaBox,
    #[error("bounding box spans {area:.4} square degrees, above the {limit} limit")]
    OverLimit { area: f64, limit: f64 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("map API rate limit hit (HTTP 429) for {0}")]
    RateLimited(String),
    #[error("map API returned HTTP {status} for {url}")]
    HttpStatus { status: u16, url: String },
    #[error("map API response is not UTF-8 text")]
    NotText,
    #[error("input file '{0}' does not exist")]
    MissingInput(PathBuf),
    #[error("conversion tool '{0}' not found")]
    ToolMissing(String),
    #[error("conversion tool exited with {code:?}: {stderr}")]
    ToolFailed { code: Option<i32>, stderr: String },
    #[error("failed to run conversion tool: {0}")]
    Spawn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    pub fn area_deg2(&self) -> f64 {
        (self.lon_max - self.lon_min) * (self.lat_max - self.lat_min)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }
}

/// Axis-aligned box around `points` (`(lon, lat)` degrees) grown by
/// `buffer_m` on every side.
///
/// The longitude margin uses the cosine of the highest-magnitude input
/// latitude, so each point keeps at least `buffer_m` of clearance east and
/// west at its own latitude.
pub fn compute_bbox(points: &[(f64, f64)], buffer_m: f64) -> Result<BoundingBox, OsmError> {
    if points.is_empty() {
        return Err(OsmError::EmptyPoints);
    }
    if !(buffer_m.is_finite() && buffer_m >= 0.0) {
        return Err(OsmError::InvalidBuffer(buffer_m));
    }
    for &(lon, lat) in points {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(OsmError::InvalidPoint(lon, lat));
        }
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| points.iter().map(sel).fold(init, f);
    let lon_min = fold(f64::min, f64::INFINITY, |p| p.0);
    let lon_max = fold(f64::max, f64::NEG_INFINITY, |p| p.0);
    let lat_min = fold(f64::min, f64::INFINITY, |p| p.1);
    let lat_max = fold(f64::max, f64::NEG_INFINITY, |p| p.1);

    let dlat = buffer_m / METERS_PER_DEGREE;
    let widest = lat_min.abs().max(lat_max.abs()).to_radians().cos();
    let dlon = if widest > 1e-12 { dlat / widest } else { 360.0 };

    let bbox = BoundingBox {
        lon_min: (lon_min - dlon).max(-180.0),
        lat_min: (lat_min - dlat).max(-90.0),
        lon_max: (lon_max + dlon).min(180.0),
        lat_max: (lat_max + dlat).min(90.0),
    };
    if !(bbox.lon_min < bbox.lon_max && bbox.lat_min < bbox.lat_max) {
        return Err(OsmError::ZeroAreaBox);
    }
    Ok(bbox)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OsmFetchConfig {
    /// Placeholders: `{lon_min}`, `{lat_min}`, `{lon_max}`, `{lat_max}`.
    pub url_template: String,
    /// Pre-flight guard on box size, square degrees.
    pub max_area_deg2: f64,
}

impl Default for OsmFetchConfig {
    fn default() -> Self {
        OsmFetchConfig {
            url_template: "https://overpass-api.de/api/map?bbox={lon_min},{lat_min},{lon_max},{lat_max}".into(),
            max_area_deg2: 0.25,
        }
    }
}

impl OsmFetchConfig {
    pub fn url_for(&self, bbox: &BoundingBox) -> String {
        self.url_template
            .replace("{lon_min}", &format!("{:.7}", bbox.lon_min))
            .replace("{lat_min}", &format!("{:.7}", bbox.lat_min))
            .replace("{lon_max}", &format!("{:.7}", bbox.lon_max))
            .replace("{lat_max}", &format!("{:.7}", bbox.lat_max))
    }
}

/// Download the raw OSM XML for a box.
pub fn fetch_osm(bbox: &BoundingBox, http: &dyn HttpFetcher, config: &OsmFetchConfig) -> Result<String, OsmError> {
    let area = bbox.area_deg2();
    if area > config.max_area_deg2 {
        return Err(OsmError::OverLimit { area, limit: config.max_area_deg2 });
    }
    let url = config.url_for(bbox);
    let resp = http.get(&url).map_err(|e| OsmError::Transport(e.to_string()))?;
    match resp.status {
        429 => Err(OsmError::RateLimited(url)),
        s if !(200..300).contains(&s) => Err(OsmError::HttpStatus { status: s, url }),
        _ => String::from_utf8(resp.body).map_err(|_| OsmError::NotText),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetconvertConfig {
    pub program: String,
    pub input_flag: String,
    pub output_flag: String,
    /// Extra options; the defaults mirror the simulator's OSM wizard import.
    pub extra_args: Vec<String>,
}

impl Default for NetconvertConfig {
    fn default() -> Self {
        NetconvertConfig {
            program: "netconvert".into(),
            input_flag: "--osm-files".into(),
            output_flag: "--output-file".into(),
            extra_args: [
                "--geometry.remove",
                "--ramps.guess",
                "--junctions.join",
                "--tls.guess-signals",
                "--tls.discard-simple",
                "--tls.join",
                "--output.original-names",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedNetwork {
    pub net_path: PathBuf,
    /// Tool stderr (warnings), one entry per non-empty line.
    pub diagnostics: Vec<String>,
}

/// `foo.osm.xml` / `foo.osm` → `foo.net.xml`.
pub fn default_net_path(osm_path: &Path) -> PathBuf {
    let name = osm_path.file_name().and_then(|n| n.to_str()).unwrap_or("network");
    let stem = name.strip_suffix(".osm.xml").or_else(|| name.strip_suffix(".osm")).unwrap_or(name);
    osm_path.with_file_name(format!("{stem}.net.xml"))
}

/// Run the conversion tool on an OSM file.
pub fn convert_network(
    osm_path: &Path,
    runner: &dyn ProcessRunner,
    config: &NetconvertConfig,
) -> Result<ConvertedNetwork, OsmError> {
    if !runner.file_exists(osm_path) {
        return Err(OsmError::MissingInput(osm_path.to_path_buf()));
    }
    let net_path = default_net_path(osm_path);
    let mut args = vec![
        config.input_flag.clone(),
        osm_path.display().to_string(),
        config.output_flag.clone(),
        net_path.display().to_string(),
    ];
    args.extend(config.extra_args.iter().cloned());
    let out = runner.run(&config.program, &args).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => OsmError::ToolMissing(config.program.clone()),
        _ => OsmError::Spawn(e.to_string()),
    })?;
    if !out.success() {
        return Err(OsmError::ToolFailed { code: out.exit_code, stderr: out.stderr });
    }
    let diagnostics = out.stderr.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    Ok(ConvertedNetwork { net_path, diagnostics })
}
