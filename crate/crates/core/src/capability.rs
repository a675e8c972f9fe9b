//! Injected I/O capabilities. Library operations that talk to the network or
//! spawn processes only do so through these traits, so tests can script them.

use std::io;
use std::path::Path;
use std::process::Command;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error)]
#[error("transport failure for {url}: {message}")]
pub struct TransportError {
    pub url: String,
    pub message: String,
}

pub trait HttpFetcher: Send + Sync {
    /// Issue a GET. Non-2xx statuses are returned as responses, not errors.
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessOutput {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

impl ProcessOutput {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0)
    }
}

pub trait ProcessRunner: Send + Sync {
    fn run(&self, program: &str, args: &[String]) -> io::Result<ProcessOutput>;

    fn file_exists(&self, path: &Path) -> bool {
        path.is_file()
    }
}

/// Runs programs with `std::process::Command`, waiting for completion.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemRunner;

impl ProcessRunner for SystemRunner {
    fn run(&self, program: &str, args: &[String]) -> io::Result<ProcessOutput> {
        let out = Command::new(program).args(args).output()?;
        Ok(ProcessOutput {
            exit_code: out.status.code(),
            stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        })
    }
}

#[cfg(feature = "http")]
pub use self::ureq_fetcher::UreqFetcher;

#[cfg(feature = "http")]
mod ureq_fetcher {
    use std::io::Read;
    use std::time::Duration;

    use super::{HttpFetcher, HttpResponse, TransportError};

    /// Blocking fetcher over `ureq`.
    #[derive(Debug, Clone)]
    pub struct UreqFetcher {
        agent: ureq::Agent,
    }

    impl UreqFetcher {
        pub fn new(timeout: Duration) -> Self {
            let config = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .user_agent(concat!("tmcsim/", env!("CARGO_PKG_VERSION")))
                .build();
            UreqFetcher { agent: config.into() }
        }
    }

    impl Default for UreqFetcher {
        fn default() -> Self {
            Self::new(Duration::from_secs(300))
        }
    }

    impl HttpFetcher for UreqFetcher {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            let err = |message: String| TransportError { url: url.to_string(), message };
            let mut resp = self.agent.get(url).call().map_err(|e| err(e.to_string()))?;
            let status = resp.status().as_u16();
            let mut body = Vec::new();
            resp.body_mut()
                .as_reader()
                .read_to_end(&mut body)
                .map_err(|e| err(e.to_string()))?;
            Ok(HttpResponse { status, body })
        }
    }
}
