//! Turn turning-movement counts into microsimulation scenarios.
//!
//! The pipeline: read a road network ([`net`]), bind each counted
//! intersection to a junction and classify its approaches ([`mapper`]), load
//! and window the counts ([`tmc`]), compile flows and write the route and
//! configuration files ([`demand`]), then compare simulated vehicles against
//! the input counts ([`validation`]). [`pipeline`] drives all of it from a
//! JSON manifest.

pub mod capability;
pub mod demand;
pub mod error;
pub mod mapper;
pub mod net;
pub mod osm;
pub mod pipeline;
pub mod tmc;
pub mod validation;
mod xmlfmt;

pub use error::{ErrorCategory, PipelineError};
