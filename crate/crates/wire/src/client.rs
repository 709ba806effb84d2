//! Minimal blocking client used by the verifier (towards agents), the CLI
//! and the test suites. Supports pipelining: responses are matched to
//! requests by correlation id.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;

use crate::messages::{Envelope, WireMessage};
use crate::WireError;

pub struct WireClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    seq: u64,
    /// Responses read while waiting for a different correlation id.
    pending: BTreeMap<String, WireMessage>,
}

impl WireClient {
    pub fn connect(addr: &str) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        let writer = stream.try_clone()?;
        Ok(WireClient {
            reader: BufReader::new(stream),
            writer,
            seq: 0,
            pending: BTreeMap::new(),
        })
    }

    /// Send a request, returning its correlation id without waiting.
    pub fn send(&mut self, body: WireMessage) -> Result<String, WireError> {
        self.seq += 1;
        let cid = format!("q{}", self.seq);
        let envelope = Envelope::new(cid.clone(), body);
        self.writer.write_all(envelope.to_line().as_bytes())?;
        Ok(cid)
    }

    /// Wait for the response with the given correlation id.
    pub fn wait(&mut self, cid: &str) -> Result<WireMessage, WireError> {
        if let Some(found) = self.pending.remove(cid) {
            return Ok(found);
        }
        loop {
            let mut line = String::new();
            let n = self.reader.read_line(&mut line)?;
            if n == 0 {
                return Err(WireError::Frame("connection closed".into()));
            }
            if line.trim().is_empty() {
                continue;
            }
            let envelope: Envelope = serde_json::from_str(&line)
                .map_err(|e| WireError::Frame(format!("bad response line: {e}")))?;
            if envelope.cid == cid {
                return Ok(envelope.body);
            }
            self.pending.insert(envelope.cid, envelope.body);
        }
    }

    /// Round-trip one request.
    pub fn request(&mut self, body: WireMessage) -> Result<WireMessage, WireError> {
        let cid = self.send(body)?;
        self.wait(&cid)
    }

    /// Round-trip and treat a peer error as a client error.
    pub fn expect_ok(&mut self, body: WireMessage) -> Result<WireMessage, WireError> {
        match self.request(body)? {
            WireMessage::Error { code, message } => Err(WireError::Remote { code, message }),
            other => Ok(other),
        }
    }
}
