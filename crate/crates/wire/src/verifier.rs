//! The verifier service: owns the context, talks to an agent for evidence,
//! and enforces the staged split — a decision may only reference an outcome
//! this verifier produced. Also exposes the composite evaluation running
//! all three stages at once.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use trustkit_core::capability::Environment;
use trustkit_core::decision::decide_with_trace;
use trustkit_core::evidence::{Claim, Context, ElementId, MechanismId};
use trustkit_core::pipeline::{assemble_report, PipelinePoint};
use trustkit_core::verdict::{verify, Severity, VerdictOutcome};

use crate::client::WireClient;
use crate::messages::{salvage_cid, Envelope, WireMessage};
use crate::WireError;

pub struct VerifierHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl VerifierHandle {
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

impl Drop for VerifierHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// All context mutation and the staged stores sit behind one lock: a single
/// writer, many connections.
struct State {
    ctx: Context,
    claims: BTreeMap<String, (ElementId, MechanismId, Claim)>,
    outcomes: BTreeMap<String, VerdictOutcome>,
    reports: BTreeMap<String, trustkit_core::pipeline::ForensicReport>,
    seq: u64,
}

impl State {
    fn next_ref(&mut self, prefix: &str) -> String {
        self.seq += 1;
        format!("{prefix}{}", self.seq)
    }
}

struct Verifier {
    env: Environment,
    agent_addr: String,
    state: Mutex<State>,
}

fn error(code: &str, message: impl Into<String>) -> WireMessage {
    WireMessage::Error {
        code: code.into(),
        message: message.into(),
    }
}

impl Verifier {
    #[allow(clippy::result_large_err)]
    fn attest_via_agent(
        &self,
        element: &ElementId,
        mechanism: &MechanismId,
        nonce_hex: &str,
    ) -> Result<Claim, WireMessage> {
        let mut client = WireClient::connect(&self.agent_addr)
            .map_err(|e| error("agent-unreachable", e.to_string()))?;
        let response = client
            .request(WireMessage::AttestRequest {
                element: element.clone(),
                mechanism: mechanism.clone(),
                nonce: Some(nonce_hex.to_string()),
            })
            .map_err(|e| error("agent-unreachable", e.to_string()))?;
        match response {
            WireMessage::AttestResponse { claim, .. } => Ok(claim),
            WireMessage::Error { code, message } => Err(error(&code, message)),
            other => Err(error(
                "malformed",
                format!("unexpected agent response {other:?}"),
            )),
        }
    }

    fn handle_attest(
        &self,
        element: &ElementId,
        mechanism: &MechanismId,
        nonce: &Option<String>,
    ) -> WireMessage {
        let nonce_hex = {
            let mut state = self.state.lock().unwrap();
            match nonce {
                Some(hex_str) => match hex::decode(hex_str) {
                    Ok(bytes) => {
                        state.ctx.register_nonce(&bytes);
                        hex_str.clone()
                    }
                    Err(_) => return error("malformed", format!("nonce `{hex_str}` is not hex")),
                },
                None => hex::encode(state.ctx.mint_claim_id().nonce),
            }
        };
        match self.attest_via_agent(element, mechanism, &nonce_hex) {
            Ok(claim) => {
                let mut state = self.state.lock().unwrap();
                let claim_ref = state.next_ref("c");
                state.claims.insert(
                    claim_ref.clone(),
                    (element.clone(), mechanism.clone(), claim.clone()),
                );
                WireMessage::AttestResponse {
                    claim_ref: Some(claim_ref),
                    claim,
                }
            }
            Err(e) => e,
        }
    }

    fn handle_verify(&self, claim_ref: &str, verify_policy: &str) -> WireMessage {
        let Some(policy) = self.env.verify_policies.get(verify_policy) else {
            return error("unknown-policy", format!("no verify policy `{verify_policy}`"));
        };
        let mut state = self.state.lock().unwrap();
        let Some((_, mechanism, claim)) = state.claims.get(claim_ref).cloned() else {
            return error("unknown-ref", format!("no claim `{claim_ref}` here"));
        };
        if !self.env.rho_verify(&mechanism).contains(verify_policy) {
            return error(
                "restriction",
                format!("policy `{verify_policy}` is not admitted for mechanism `{mechanism}`"),
            );
        }
        match verify(policy, claim, &mut state.ctx) {
            Ok(outcome) => {
                let outcome_ref = state.next_ref("o");
                let response = WireMessage::VerifyResponse {
                    outcome_ref: outcome_ref.clone(),
                    class: outcome.class.label.clone(),
                    is_error: outcome.class.is_error,
                    atom_values: outcome.atom_values.clone(),
                };
                state.outcomes.insert(outcome_ref, outcome);
                response
            }
            Err(e) => error("internal", e.to_string()),
        }
    }

    fn handle_decide(&self, outcome_ref: &str, decide_policy: &str) -> WireMessage {
        let Some(policy) = self.env.decide_policies.get(decide_policy) else {
            return error("unknown-policy", format!("no decide policy `{decide_policy}`"));
        };
        let mut state = self.state.lock().unwrap();
        let Some(outcome) = state.outcomes.get(outcome_ref).cloned() else {
            return error("unknown-ref", format!("no outcome `{outcome_ref}` here"));
        };
        if !self.env.rho_decide(&outcome.policy).contains(decide_policy) {
            return error(
                "restriction",
                format!(
                    "policy `{decide_policy}` is not admitted after verify policy `{}`",
                    outcome.policy
                ),
            );
        }
        match decide_with_trace(policy, &outcome) {
            Ok((level, matched_rule)) => {
                let element = outcome.ctx_snapshot.element.clone();
                let point = PipelinePoint {
                    mechanism: outcome.claim.mechanism.clone(),
                    verify_policy: outcome.policy.clone(),
                    decide_policy: decide_policy.to_string(),
                };
                let report = assemble_report(
                    &self.env,
                    element,
                    point,
                    outcome,
                    level.clone(),
                    matched_rule,
                );
                let report_ref = state.next_ref("r");
                state.reports.insert(report_ref.clone(), report);
                WireMessage::DecideResponse {
                    level: level.name().to_string(),
                    report_ref,
                }
            }
            Err(e) => error("internal", e.to_string()),
        }
    }

    fn handle_eval(&self, element: &ElementId, point_spec: &str) -> WireMessage {
        let point: PipelinePoint = match point_spec.parse() {
            Ok(point) => point,
            Err(e) => return error("malformed", e),
        };
        if !self
            .env
            .rho_verify(&point.mechanism)
            .contains(&point.verify_policy)
            || !self
                .env
                .rho_decide(&point.verify_policy)
                .contains(&point.decide_policy)
        {
            return error("restriction", format!("point `{point}` is not admitted"));
        }
        let attest = self.handle_attest(element, &point.mechanism, &None);
        let claim_ref = match &attest {
            WireMessage::AttestResponse {
                claim_ref: Some(claim_ref),
                ..
            } => claim_ref.clone(),
            WireMessage::Error { .. } => return attest,
            other => return error("internal", format!("unexpected {other:?}")),
        };
        let verify_response = self.handle_verify(&claim_ref, &point.verify_policy);
        let (outcome_ref, class, atom_values) = match verify_response {
            WireMessage::VerifyResponse {
                outcome_ref,
                class,
                atom_values,
                ..
            } => (outcome_ref, class, atom_values),
            other => return other,
        };
        let decide_response = self.handle_decide(&outcome_ref, &point.decide_policy);
        match decide_response {
            WireMessage::DecideResponse { level, report_ref } => WireMessage::EvalResponse {
                level,
                class,
                atom_values,
                claim_ref,
                outcome_ref,
                report_ref,
            },
            other => other,
        }
    }

    fn handle(&self, envelope: &Envelope) -> WireMessage {
        match &envelope.body {
            WireMessage::AttestRequest {
                element,
                mechanism,
                nonce,
            } => self.handle_attest(element, mechanism, nonce),
            WireMessage::VerifyRequest {
                claim_ref,
                verify_policy,
            } => self.handle_verify(claim_ref, verify_policy),
            WireMessage::DecideRequest {
                outcome_ref,
                decide_policy,
            } => self.handle_decide(outcome_ref, decide_policy),
            WireMessage::EvalRequest { element, point } => self.handle_eval(element, point),
            other => error("malformed", format!("not a request: {other:?}")),
        }
    }
}

fn serve_connection(verifier: &Verifier, stream: TcpStream) {
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Envelope>(&line) {
            Ok(envelope) => Envelope::new(envelope.cid.clone(), verifier.handle(&envelope)),
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

/// Start the verifier. Refuses to serve unchecked policies: the environment
/// is re-checked here and error diagnostics abort the start.
pub fn verifier_serve(
    env: Environment,
    ctx: Context,
    endpoint: &str,
    agent_addr: impl Into<String>,
) -> Result<VerifierHandle, WireError> {
    let diagnostics = env.check_policies();
    let errors: Vec<String> = diagnostics
        .iter()
        .filter(|(_, d)| d.severity() == Severity::Error)
        .map(|(name, d)| format!("{name}: {d:?}"))
        .collect();
    if !errors.is_empty() {
        return Err(WireError::Policy(errors.join("; ")));
    }

    let listener = TcpListener::bind(endpoint)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let verifier = Arc::new(Verifier {
        env,
        agent_addr: agent_addr.into(),
        state: Mutex::new(State {
            ctx,
            claims: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            reports: BTreeMap::new(),
            seq: 0,
        }),
    });

    let join = std::thread::spawn(move || {
        while !stop_flag.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let verifier = Arc::clone(&verifier);
                    std::thread::spawn(move || serve_connection(&verifier, stream));
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(_) => break,
            }
        }
    });

    Ok(VerifierHandle {
        addr,
        stop,
        join: Some(join),
    })
}
