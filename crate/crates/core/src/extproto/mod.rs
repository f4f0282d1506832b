//! Line-delimited JSON protocol for out-of-process fitness evaluators.
//!
//! Every message is one UTF-8 JSON object terminated by `\n`. The client
//! opens with
//!
//! ```text
//! {"hello":{"protocol":1,"genes":["f1","f2",...]}}
//! ```
//!
//! and the evaluator answers `{"ready":{"protocol":1}}`. Each evaluation is a
//! request `{"id":7,"genes":{"f1":"64",...}}` answered by either
//! `{"id":7,"fitness":0.47}` or `{"id":7,"error":"OOM"}`. Responses are
//! matched to requests by id only, so an evaluator may answer pipelined
//! requests in any order. Unknown fields are ignored on both sides.

mod echo;
mod selftest;
mod session;

pub use echo::{serve_echo, EchoMode, EchoOptions};
pub use selftest::{run_fixture_suite, run_selftest, CheckResult, SelftestReport};
pub use session::{ExternalEvaluator, Session, SessionOptions, StderrSink};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::GeneAssignment;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtoError {
    #[error("failed to start evaluator {command:?}: {message}")]
    Spawn { command: String, message: String },
    #[error("evaluator did not complete the handshake within {0:?}")]
    HandshakeTimeout(std::time::Duration),
    #[error("malformed handshake reply {line:?}: {reason}")]
    MalformedHandshake { line: String, reason: String },
    #[error("protocol mismatch: expected version {expected}, evaluator speaks {got}")]
    ProtocolMismatch { expected: u32, got: u64 },
    #[error("request {id} timed out after {timeout:?}")]
    RequestTimeout { id: u64, timeout: std::time::Duration },
    #[error("response id {got} does not match any outstanding request (expected one of {expected:?})")]
    IdMismatch { expected: Vec<u64>, got: u64 },
    #[error("framing violation in {line:?}: {reason}")]
    Framing { line: String, reason: String },
    #[error("malformed response {line:?}: {reason}")]
    MalformedResponse { line: String, reason: String },
    #[error("request {id}: fitness {value} is outside [0, 1]")]
    FitnessOutOfRange { id: u64, value: f64 },
    #[error("evaluator process exited{}", .status.as_ref().map(|s| format!(" ({s})")).unwrap_or_default())]
    ProcessExited { status: Option<String> },
    #[error("evaluator i/o error: {0}")]
    Io(String),
    #[error("session already failed: {0}")]
    Poisoned(String),
}

#[derive(Serialize)]
struct Hello<'a> {
    hello: HelloBody<'a>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HelloBody<'a> {
    protocol: u32,
    #[serde(borrow)]
    genes: Vec<&'a str>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Ready {
    ready: ReadyBody,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReadyBody {
    protocol: u64,
}

/// Client-side request; genes serialize as a `name -> token` map in gene order.
#[derive(Serialize)]
pub struct EvalRequest<'a> {
    pub id: u64,
    pub genes: GeneAssignment<'a>,
}

/// Exactly one of `fitness` and `error` is present in a well-formed response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalResponse {
    pub fn fitness(id: u64, fitness: f64) -> Self {
        Self { id, fitness: Some(fitness), error: None }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        Self { id, fitness: None, error: Some(message.into()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LineError {
    Framing(String),
    Malformed(String),
}

/// Decodes one raw line (without its `\n`) that must hold exactly one JSON
/// object of type `T`.
pub(crate) fn decode_line<T: DeserializeOwned>(raw: &[u8]) -> Result<T, LineError> {
    let text = std::str::from_utf8(raw).map_err(|e| LineError::Framing(format!("invalid UTF-8: {e}")))?;
    if text.starts_with('\u{feff}') {
        return Err(LineError::Framing("byte-order mark".into()));
    }
    if text.contains('\r') {
        return Err(LineError::Framing("carriage return; lines must end with a bare \\n".into()));
    }
    let mut values = serde_json::Deserializer::from_str(text).into_iter::<serde_json::Value>();
    let value = match values.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(LineError::Malformed(e.to_string())),
        None => return Err(LineError::Malformed("empty line".into())),
    };
    match values.next() {
        None => {}
        Some(Ok(_)) => return Err(LineError::Framing("more than one JSON value on one line".into())),
        Some(Err(e)) => return Err(LineError::Malformed(e.to_string())),
    }
    if !value.is_object() {
        return Err(LineError::Malformed("expected a JSON object".into()));
    }
    serde_json::from_value(value).map_err(|e| LineError::Malformed(e.to_string()))
}

pub(crate) fn encode_line<T: Serialize>(msg: &T) -> Vec<u8> {
    let mut line = serde_json::to_vec(msg).expect("protocol messages serialize");
    line.push(b'\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::default_cnn_space;
    use crate::space::Chromosome;

    #[test]
    fn request_wire_format() {
        let space = default_cnn_space();
        let c = Chromosome::new(vec![1, 1, 0, 0, 0, 1, 2, 1, 1, 0]);
        let line = encode_line(&EvalRequest { id: 7, genes: space.assignment(&c) });
        assert_eq!(
            std::str::from_utf8(&line).unwrap(),
            "{\"id\":7,\"genes\":{\"f1\":\"64\",\"f2\":\"128\",\"k\":\"3\",\"a1\":\"relu\",\"a2\":\"relu\",\
             \"d1\":\"0.3\",\"d2\":\"0.4\",\"f3\":\"512\",\"optimizer\":\"adam\",\"epochs\":\"10\"}}\n"
        );
    }

    #[test]
    fn hello_wire_format() {
        let line = encode_line(&Hello { hello: HelloBody { protocol: 1, genes: vec!["k", "a1"] } });
        assert_eq!(line, b"{\"hello\":{\"protocol\":1,\"genes\":[\"k\",\"a1\"]}}\n");
    }

    #[test]
    fn responses_decode() {
        let r: EvalResponse = decode_line(br#"{"id":7,"fitness":0.470}"#).unwrap();
        assert_eq!(r, EvalResponse::fitness(7, 0.470));
        let r: EvalResponse = decode_line(br#"{"id":7,"error":"OOM","extra":[1,2]}"#).unwrap();
        assert_eq!(r, EvalResponse::error(7, "OOM"));
    }

    #[test]
    fn framing_violations() {
        let two = decode_line::<EvalResponse>(br#"{"id":1,"fitness":0.1}{"id":2,"fitness":0.2}"#);
        assert!(matches!(two, Err(LineError::Framing(_))));
        let crlf = decode_line::<EvalResponse>(b"{\"id\":1,\"fitness\":0.1}\r");
        assert!(matches!(crlf, Err(LineError::Framing(_))));
        let bom = decode_line::<EvalResponse>("\u{feff}{\"id\":1}".as_bytes());
        assert!(matches!(bom, Err(LineError::Framing(_))));
        let junk = decode_line::<EvalResponse>(b"training epoch 1/10");
        assert!(matches!(junk, Err(LineError::Malformed(_))));
        let array = decode_line::<EvalResponse>(b"[1]");
        assert!(matches!(array, Err(LineError::Malformed(_))));
    }
}
