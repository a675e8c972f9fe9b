//! Minimal TraCI client: version handshake, simulation step, per-edge
//! last-step vehicle ids, close.
//!
//! Wire format: every message is a big-endian `u32` total length (including
//! itself) followed by commands. A command is `u8 length, u8 id, payload`,
//! or `0u8, u32 length, u8 id, payload` when it does not fit in a byte.
//! Strings are a `u32` byte length plus UTF-8 bytes; doubles are IEEE-754
//! big-endian.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use thiserror::Error;

pub const CMD_GETVERSION: u8 = 0x00;
pub const CMD_SIMSTEP: u8 = 0x02;
pub const CMD_CLOSE: u8 = 0x7F;
pub const CMD_GET_EDGE_VARIABLE: u8 = 0xAA;
pub const RESPONSE_GET_EDGE_VARIABLE: u8 = 0xBA;
pub const LAST_STEP_VEHICLE_ID_LIST: u8 = 0x12;
pub const TYPE_STRINGLIST: u8 = 0x0E;
pub const RTYPE_OK: u8 = 0x00;

#[derive(Debug, Error)]
pub enum TraciError {
    #[error("could not connect to TraCI server at {endpoint}: {source}")]
    Connect { endpoint: String, source: io::Error },
    #[error("TraCI protocol violation: {0}")]
    Protocol(String),
    #[error("TraCI command 0x{command:02x} failed (status 0x{status:02x}): {description}")]
    Command { command: u8, status: u8, description: String },
}

impl From<io::Error> for TraciError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => TraciError::Protocol("connection closed mid-message".into()),
            _ => TraciError::Protocol(format!("i/o failure: {e}")),
        }
    }
}

/// Cursor over a received message body.
struct Payload<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Payload<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraciError> {
        if self.buf.len() - self.pos < n {
            return Err(TraciError::Protocol(format!(
                "truncated message: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TraciError> {
        Ok(self.take(1)?[0])
    }

    fn i32(&mut self) -> Result<i32, TraciError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, TraciError> {
        let len = self.i32()?;
        let len = usize::try_from(len).map_err(|_| TraciError::Protocol(format!("negative string length {len}")))?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| TraciError::Protocol("string is not UTF-8".into()))
    }

    /// Reads a command header, returning `(command id, payload end offset)`.
    fn command_header(&mut self) -> Result<(u8, usize), TraciError> {
        let start = self.pos;
        let short = self.u8()?;
        let len = if short == 0 {
            let l = self.i32()?;
            usize::try_from(l).map_err(|_| TraciError::Protocol(format!("bad command length {l}")))?
        } else {
            usize::from(short)
        };
        let id = self.u8()?;
        let end = start + len;
        if end > self.buf.len() || end < self.pos {
            return Err(TraciError::Protocol(format!("command 0x{id:02x} length {len} overruns message")));
        }
        Ok((id, end))
    }

    /// Status response for `expected`; non-OK statuses become errors.
    fn status(&mut self, expected: u8) -> Result<(), TraciError> {
        let (id, end) = self.command_header()?;
        if id != expected {
            return Err(TraciError::Protocol(format!("status for 0x{id:02x}, expected 0x{expected:02x}")));
        }
        let status = self.u8()?;
        let description = self.string()?;
        if self.pos != end {
            return Err(TraciError::Protocol("status response length mismatch".into()));
        }
        if status != RTYPE_OK {
            return Err(TraciError::Command { command: expected, status, description });
        }
        Ok(())
    }
}

fn encode_command(id: u8, content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len() + 6);
    if content.len() + 2 <= 255 {
        out.push((content.len() + 2) as u8);
    } else {
        out.push(0);
        out.extend_from_slice(&((content.len() + 6) as u32).to_be_bytes());
    }
    out.push(id);
    out.extend_from_slice(content);
    out
}

fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

#[derive(Debug, Clone, Copy)]
pub struct TraciOptions {
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
    /// Extra connection attempts while the server is starting.
    pub connect_retries: u32,
    pub retry_delay: Duration,
}

impl Default for TraciOptions {
    fn default() -> Self {
        TraciOptions {
            connect_timeout: Duration::from_secs(5),
            io_timeout: Duration::from_secs(60),
            connect_retries: 0,
            retry_delay: Duration::from_millis(500),
        }
    }
}

pub struct TraciClient {
    stream: TcpStream,
}

impl TraciClient {
    pub fn connect(endpoint: &str, options: &TraciOptions) -> Result<Self, TraciError> {
        let connect_err = |source: io::Error| TraciError::Connect { endpoint: endpoint.to_string(), source };
        let addrs: Vec<_> = endpoint.to_socket_addrs().map_err(connect_err)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "endpoint resolved to no addresses");
        for attempt in 0..=options.connect_retries {
            if attempt > 0 {
                thread::sleep(options.retry_delay);
            }
            for addr in &addrs {
                match TcpStream::connect_timeout(addr, options.connect_timeout) {
                    Ok(stream) => {
                        stream.set_read_timeout(Some(options.io_timeout)).map_err(connect_err)?;
                        stream.set_write_timeout(Some(options.io_timeout)).map_err(connect_err)?;
                        stream.set_nodelay(true).map_err(connect_err)?;
                        return Ok(TraciClient { stream });
                    }
                    Err(e) => last = e,
                }
            }
        }
        Err(connect_err(last))
    }

    fn send(&mut self, command: &[u8]) -> Result<(), TraciError> {
        let total = (command.len() + 4) as u32;
        let mut msg = Vec::with_capacity(command.len() + 4);
        msg.extend_from_slice(&total.to_be_bytes());
        msg.extend_from_slice(command);
        self.stream.write_all(&msg)?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Vec<u8>, TraciError> {
        let mut len = [0u8; 4];
        self.stream.read_exact(&mut len)?;
        let total = u32::from_be_bytes(len) as usize;
        if total < 4 {
            return Err(TraciError::Protocol(format!("message length {total} below header size")));
        }
        let mut body = vec![0u8; total - 4];
        self.stream.read_exact(&mut body)?;
        Ok(body)
    }

    /// Returns `(api version, server identifier)`.
    pub fn get_version(&mut self) -> Result<(i32, String), TraciError> {
        self.send(&encode_command(CMD_GETVERSION, &[]))?;
        let body = self.receive()?;
        let mut p = Payload { buf: &body, pos: 0 };
        p.status(CMD_GETVERSION)?;
        let (id, _) = p.command_header()?;
        if id != CMD_GETVERSION {
            return Err(TraciError::Protocol(format!("version response has id 0x{id:02x}")));
        }
        let api = p.i32()?;
        let ident = p.string()?;
        Ok((api, ident))
    }

    /// Advance one step (`target_time` 0) or up to `target_time` seconds.
    pub fn simulation_step(&mut self, target_time: f64) -> Result<(), TraciError> {
        self.send(&encode_command(CMD_SIMSTEP, &target_time.to_be_bytes()))?;
        let body = self.receive()?;
        let mut p = Payload { buf: &body, pos: 0 };
        p.status(CMD_SIMSTEP)?;
        // Subscription results follow; this client never subscribes.
        let subscriptions = p.i32()?;
        if subscriptions < 0 {
            return Err(TraciError::Protocol(format!("negative subscription count {subscriptions}")));
        }
        Ok(())
    }

    pub fn edge_last_step_vehicle_ids(&mut self, edge_id: &str) -> Result<Vec<String>, TraciError> {
        let mut content = vec![LAST_STEP_VEHICLE_ID_LIST];
        put_string(&mut content, edge_id);
        self.send(&encode_command(CMD_GET_EDGE_VARIABLE, &content))?;
        let body = self.receive()?;
        let mut p = Payload { buf: &body, pos: 0 };
        p.status(CMD_GET_EDGE_VARIABLE)?;
        let (id, end) = p.command_header()?;
        if id != RESPONSE_GET_EDGE_VARIABLE {
            return Err(TraciError::Protocol(format!("edge variable response has id 0x{id:02x}")));
        }
        let var = p.u8()?;
        let object = p.string()?;
        if var != LAST_STEP_VEHICLE_ID_LIST || object != edge_id {
            return Err(TraciError::Protocol(format!("response for variable 0x{var:02x} of '{object}'")));
        }
        let ty = p.u8()?;
        if ty != TYPE_STRINGLIST {
            return Err(TraciError::Protocol(format!("expected string list, got type 0x{ty:02x}")));
        }
        let n = p.i32()?;
        let n = usize::try_from(n).map_err(|_| TraciError::Protocol(format!("negative list length {n}")))?;
        let ids = (0..n).map(|_| p.string()).collect::<Result<Vec<_>, _>>()?;
        if p.pos != end {
            return Err(TraciError::Protocol("edge variable response length mismatch".into()));
        }
        Ok(ids)
    }

    pub fn close(mut self) -> Result<(), TraciError> {
        self.send(&encode_command(CMD_CLOSE, &[]))?;
        let body = self.receive()?;
        Payload { buf: &body, pos: 0 }.status(CMD_CLOSE)?;
        Ok(())
    }
}

/// Step the simulation `steps` times, recording every vehicle id seen on
/// each monitored edge after each step. Any failure discards what was
/// collected so far.
pub fn traci_collect(endpoint: &str, edge_ids: &[String], steps: u32) -> Result<BTreeMap<String, BTreeSet<String>>, TraciError> {
    traci_collect_with(endpoint, edge_ids, steps, &TraciOptions::default())
}

pub fn traci_collect_with(
    endpoint: &str,
    edge_ids: &[String],
    steps: u32,
    options: &TraciOptions,
) -> Result<BTreeMap<String, BTreeSet<String>>, TraciError> {
    let mut client = TraciClient::connect(endpoint, options)?;
    client.get_version()?;
    let mut seen: BTreeMap<String, BTreeSet<String>> =
        edge_ids.iter().map(|e| (e.clone(), BTreeSet::new())).collect();
    for _ in 0..steps {
        client.simulation_step(0.0)?;
        for edge in edge_ids {
            let ids = client.edge_last_step_vehicle_ids(edge)?;
            seen.get_mut(edge).expect("edge pre-seeded").extend(ids);
        }
    }
    client.close()?;
    Ok(seen)
}

/// Union of the per-edge id sets.
pub fn union_ids(per_edge: &BTreeMap<String, BTreeSet<String>>) -> BTreeSet<String> {
    per_edge.values().flatten().cloned().collect()
}
