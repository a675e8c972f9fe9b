//! Scripted TraCI server. It answers exactly the commands the client uses
//! and records every command id it receives.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::{self, JoinHandle};

#[derive(Debug, Clone, Default)]
pub struct Script {
    /// Per step, the vehicle ids on each edge after that step.
    pub steps: Vec<BTreeMap<String, Vec<String>>>,
    /// Drop the connection instead of answering the n-th (0-based) step.
    pub close_at_step: Option<usize>,
    /// Answer the n-th step with an error status and this description.
    pub error_at_step: Option<(usize, String)>,
}

impl Script {
    pub fn from_steps(steps: &[&[(&str, &[&str])]]) -> Self {
        Script {
            steps: steps
                .iter()
                .map(|s| s.iter().map(|(e, ids)| (e.to_string(), ids.iter().map(|i| i.to_string()).collect())).collect())
                .collect(),
            ..Default::default()
        }
    }
}

pub struct MockServer {
    pub endpoint: String,
    handle: JoinHandle<Vec<u8>>,
}

impl MockServer {
    pub fn spawn(script: Script) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let endpoint = listener.local_addr().unwrap().to_string();
        let handle = thread::spawn(move || {
            let (stream, _) = listener.accept().expect("accept");
            serve(stream, &script)
        });
        MockServer { endpoint, handle }
    }

    /// Command ids received, in order.
    pub fn finish(self) -> Vec<u8> {
        self.handle.join().expect("mock server thread")
    }
}

fn be_i32(v: i32) -> [u8; 4] {
    v.to_be_bytes()
}

fn string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&be_i32(s.len() as i32));
    out.extend_from_slice(s.as_bytes());
}

fn command(out: &mut Vec<u8>, id: u8, body: &[u8]) {
    let len = body.len() + 2;
    if len <= 255 {
        out.push(len as u8);
    } else {
        out.push(0);
        out.extend_from_slice(&be_i32((len + 4) as i32));
    }
    out.push(id);
    out.extend_from_slice(body);
}

fn status(out: &mut Vec<u8>, id: u8, code: u8, description: &str) {
    let mut body = vec![code];
    string(&mut body, description);
    command(out, id, &body);
}

fn send(stream: &mut TcpStream, payload: &[u8]) {
    let mut msg = be_i32((payload.len() + 4) as i32).to_vec();
    msg.extend_from_slice(payload);
    let _ = stream.write_all(&msg);
}

fn serve(mut stream: TcpStream, script: &Script) -> Vec<u8> {
    let mut log = Vec::new();
    let mut step = 0usize;
    loop {
        let mut len = [0u8; 4];
        if stream.read_exact(&mut len).is_err() {
            return log;
        }
        let total = u32::from_be_bytes(len) as usize;
        let mut buf = vec![0u8; total - 4];
        stream.read_exact(&mut buf).expect("message body");
        let (id, body) = if buf[0] == 0 { (buf[5], &buf[6..]) } else { (buf[1], &buf[2..usize::from(buf[0])]) };
        log.push(id);
        let mut out = Vec::new();
        match id {
            0x00 => {
                status(&mut out, 0x00, 0x00, "");
                let mut v = be_i32(21).to_vec();
                string(&mut v, "mock TraCI");
                command(&mut out, 0x00, &v);
            }
            0x02 => {
                assert_eq!(body.len(), 8, "simulationStep carries one double");
                if script.close_at_step == Some(step) {
                    return log;
                }
                if let Some((at, msg)) = &script.error_at_step {
                    if *at == step {
                        status(&mut out, 0x02, 0xFF, msg);
                        send(&mut stream, &out);
                        step += 1;
                        continue;
                    }
                }
                step += 1;
                status(&mut out, 0x02, 0x00, "");
                out.extend_from_slice(&be_i32(0));
            }
            0xAA => {
                let var = body[0];
                let n = i32::from_be_bytes(body[1..5].try_into().unwrap()) as usize;
                let edge = std::str::from_utf8(&body[5..5 + n]).unwrap().to_string();
                let ids: Vec<String> = step
                    .checked_sub(1)
                    .and_then(|s| script.steps.get(s))
                    .and_then(|m| m.get(&edge))
                    .cloned()
                    .unwrap_or_default();
                status(&mut out, 0xAA, 0x00, "");
                let mut r = vec![var];
                string(&mut r, &edge);
                r.push(0x0E);
                r.extend_from_slice(&be_i32(ids.len() as i32));
                for i in &ids {
                    string(&mut r, i);
                }
                command(&mut out, 0xBA, &r);
            }
            0x7F => {
                status(&mut out, 0x7F, 0x00, "");
                send(&mut stream, &out);
                return log;
            }
            other => {
                status(&mut out, other, 0x01, "not implemented by mock");
            }
        }
        send(&mut stream, &out);
    }
}
