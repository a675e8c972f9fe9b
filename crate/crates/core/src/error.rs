//! Error categories shared by the command line and the HTTP service.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandError;
use crate::mapper::MapError;
use crate::net::NetError;
use crate::osm::OsmError;
use crate::tmc::TmcError;
use crate::validation::{TraciError, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    Usage,
    Io,
    Parse,
    NoData,
    Tolerance,
    Mapping,
    Upstream,
    Process,
    Protocol,
    Validation,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 10] = [
        ErrorCategory::Usage,
        ErrorCategory::Io,
        ErrorCategory::Parse,
        ErrorCategory::NoData,
        ErrorCategory::Tolerance,
        ErrorCategory::Mapping,
        ErrorCategory::Upstream,
        ErrorCategory::Process,
        ErrorCategory::Protocol,
        ErrorCategory::Validation,
    ];

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Parse => 4,
            ErrorCategory::NoData => 5,
            ErrorCategory::Tolerance => 6,
            ErrorCategory::Mapping => 7,
            ErrorCategory::Upstream => 8,
            ErrorCategory::Process => 9,
            ErrorCategory::Protocol => 10,
            ErrorCategory::Validation => 11,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Io => "io",
            ErrorCategory::Parse => "parse",
            ErrorCategory::NoData => "no-data",
            ErrorCategory::Tolerance => "tolerance",
            ErrorCategory::Mapping => "mapping",
            ErrorCategory::Upstream => "upstream",
            ErrorCategory::Process => "process",
            ErrorCategory::Protocol => "protocol",
            ErrorCategory::Validation => "validation",
        }
    }

    /// Generic remediation advice for the category.
    pub fn hint(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "check the manifest fields and command-line flags",
            ErrorCategory::Io => "check that the path exists and is readable/writable",
            ErrorCategory::Parse => "check the input file format and the column schema",
            ErrorCategory::NoData => "run `timerange` to see which windows have complete data",
            ErrorCategory::Tolerance => {
                "inspect the match; rerun with --allow-distance <m> to accept it, or fix the intersection coordinates"
            }
            ErrorCategory::Mapping => "check that the network covers the intersection and its approaches are typed highways",
            ErrorCategory::Upstream => "the remote service failed; retry later or supply local files instead of auto-fetch",
            ErrorCategory::Process => "check that the external tool is installed and on PATH",
            ErrorCategory::Protocol => "check that the endpoint is a TraCI server and that the session was not interrupted",
            ErrorCategory::Validation => "inspect the route and vehroute files; they must come from the same scenario",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    NoData(String),
    #[error("{0}")]
    Mapping(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Tmc(#[from] TmcError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Osm(#[from] OsmError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Traci(#[from] TraciError),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        use ErrorCategory as C;
        match self {
            PipelineError::Usage(_) => C::Usage,
            PipelineError::Io { .. } => C::Io,
            PipelineError::NoData(_) => C::NoData,
            PipelineError::Mapping(_) => C::Mapping,
            PipelineError::Net(e) => net_category(e),
            PipelineError::Map(e) => match e {
                MapError::ToleranceExceeded { .. } => C::Tolerance,
                MapError::Net(inner) => net_category(inner),
                _ => C::Mapping,
            },
            PipelineError::Tmc(e) => match e {
                TmcError::MissingHeader | TmcError::UnresolvableColumn { .. } | TmcError::InvalidSchema(_) | TmcError::Csv(_) => {
                    C::Parse
                }
                TmcError::InvalidWindow { .. } | TmcError::MisalignedWindow { .. } | TmcError::NegativeFactor(_) => C::Usage,
                TmcError::NoDataInWindow { .. } => C::NoData,
                TmcError::Transport(_) | TmcError::HttpStatus { .. } | TmcError::SchemaDrift { .. } | TmcError::Payload(_) => {
                    C::Upstream
                }
            },
            PipelineError::Demand(e) => match e {
                DemandError::InvalidIdComponent(_) | DemandError::InvalidVehicleType(_) | DemandError::InvalidScenario(_) => {
                    C::Usage
                }
                _ => C::Mapping,
            },
            PipelineError::Osm(e) => match e {
                OsmError::EmptyPoints
                | OsmError::InvalidBuffer(_)
                | OsmError::InvalidPoint(..)
                | OsmError::ZeroAreaBox
                | OsmError::OverLimit { .. } => C::Usage,
                OsmError::Transport(_) | OsmError::RateLimited(_) | OsmError::HttpStatus { .. } | OsmError::NotText => C::Upstream,
                OsmError::MissingInput(_) => C::Io,
                OsmError::ToolMissing(_) | OsmError::ToolFailed { .. } | OsmError::Spawn(_) => C::Process,
            },
            PipelineError::Validation(e) => match e {
                ValidationError::Xml(_) | ValidationError::MissingAttribute { .. } | ValidationError::InvalidAttribute { .. } => {
                    C::Parse
                }
                ValidationError::BinMismatch(_) => C::Validation,
                ValidationError::Export(_) => C::Io,
            },
            PipelineError::Traci(_) => C::Protocol,
        }
    }

    /// Remediation hint, specialised where the error says more than its category.
    pub fn hint(&self) -> String {
        match self {
            PipelineError::Map(MapError::ToleranceExceeded { distance, .. }) => {
                format!("if the match is correct, rerun with --allow-distance {:.1}", distance.ceil())
            }
            PipelineError::Tmc(TmcError::MisalignedWindow { before, after, .. }) => {
                format!("use a bin boundary such as {before} or {after}")
            }
            PipelineError::Osm(OsmError::OverLimit { .. }) => "reduce the buffer or split the intersection list".into(),
            PipelineError::Osm(OsmError::RateLimited(_)) => "wait before retrying the map download".into(),
            other => other.category().hint().to_string(),
        }
    }
}

fn net_category(e: &NetError) -> ErrorCategory {
    match e {
        NetError::CoordinateOutOfRange { .. } | NetError::DegenerateBearing => ErrorCategory::Mapping,
        _ => ErrorCategory::Parse,
    }
}
