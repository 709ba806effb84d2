//! The attester agent: stateless apart from its world slice. Answers
//! attestation requests by producing claims over its local elements; every
//! problem is answered in-band as an error message and the connection stays
//! open.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use trustkit_core::evidence::{attest_claim, ClaimId, EvidenceError, World};

use crate::messages::{salvage_cid, Envelope, WireMessage};
use crate::WireError;

pub struct AgentHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl AgentHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

fn handle_request(world: &World, envelope: &Envelope) -> WireMessage {
    match &envelope.body {
        WireMessage::AttestRequest {
            element,
            mechanism,
            nonce,
        } => {
            let Some(nonce_hex) = nonce else {
                return WireMessage::Error {
                    code: "malformed".into(),
                    message: "attestation requests to an agent must carry a nonce".into(),
                };
            };
            let Ok(nonce) = hex::decode(nonce_hex) else {
                return WireMessage::Error {
                    code: "malformed".into(),
                    message: format!("nonce `{nonce_hex}` is not hex"),
                };
            };
            // The agent has no clock of its own; identity comes from the
            // verifier-issued nonce.
            let claim_id = ClaimId {
                nonce,
                timestamp: 0,
            };
            match attest_claim(world, element, mechanism, claim_id) {
                Ok(claim) => WireMessage::AttestResponse {
                    claim_ref: None,
                    claim,
                },
                Err(EvidenceError::UnknownElement(id)) => WireMessage::Error {
                    code: "unknown-element".into(),
                    message: format!("no element `{id}` in this agent's world"),
                },
                Err(EvidenceError::UnknownMechanism(id)) => WireMessage::Error {
                    code: "unknown-mechanism".into(),
                    message: format!("no mechanism `{id}` registered"),
                },
                Err(other) => WireMessage::Error {
                    code: "internal".into(),
                    message: other.to_string(),
                },
            }
        }
        _ => WireMessage::Error {
            code: "malformed".into(),
            message: "agents only answer attestation requests".into(),
        },
    }
}

fn serve_connection(world: &World, stream: TcpStream) {
    let peer = stream.try_clone();
    let Ok(mut writer) = peer else { return };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Envelope>(&line) {
            Ok(envelope) => Envelope::new(envelope.cid.clone(), handle_request(world, &envelope)),
            Err(e) => Envelope::new(
                salvage_cid(&line),
                WireMessage::Error {
                    code: "malformed".into(),
                    message: e.to_string(),
                },
            ),
        };
        if writer.write_all(response.to_line().as_bytes()).is_err() {
            break;
        }
    }
}

/// Serve attestation requests over the world slice. Binds immediately;
/// `endpoint` may use port 0 to pick a free port.
pub fn agent_serve(world: World, endpoint: &str) -> Result<AgentHandle, WireError> {
    let listener = TcpListener::bind(endpoint)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let world = Arc::new(world);

    let join = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let world = Arc::clone(&world);
                    std::thread::spawn(move || serve_connection(&world, stream));
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(_) => break,
            }
        }
    });

    Ok(AgentHandle {
        addr,
        stop,
        join: Some(join),
    })
}
