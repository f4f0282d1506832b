//! Reference evaluator: answers every request with a hash of its gene tokens.
//!
//! Besides the conforming behaviour it can misbehave in scripted ways, which
//! the self-test uses as fixtures.

use std::io::{self, BufRead, Write};
use std::str::FromStr;
use std::time::Duration;

use serde_json::{json, Value};

use super::{decode_line, encode_line, EvalResponse, LineError, Ready, ReadyBody, PROTOCOL_VERSION};
use crate::landscapes::token_fitness;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoMode {
    Conforming,
    /// Answers requests in pairs, second one first. An odd trailing request
    /// is answered at end of input.
    Reorder,
    /// Writes each response twice on the same line.
    TwoPerLine,
    /// Answers every request with a line that is not JSON.
    MalformedResponse,
    /// Replies to the handshake with a line that is not JSON.
    MalformedHandshake,
    /// Claims protocol version 2 in the handshake.
    WrongProtocol,
    /// Answers request `n` with id `n + 1`.
    WrongId,
    /// Answers every request with `{"error":"OOM"}`.
    ErrorResponse,
    /// Reports fitness 1.5.
    OutOfRange,
    /// Adds unknown fields to every message.
    ExtraFields,
    /// Sleeps before reading each request.
    SlowReader,
    /// Completes the handshake, then exits without answering.
    ExitEarly,
    /// Logs a line to stderr per request.
    Chatty,
}

impl EchoMode {
    pub const ALL: [(&'static str, EchoMode); 13] = [
        ("conforming", EchoMode::Conforming),
        ("reorder", EchoMode::Reorder),
        ("two-per-line", EchoMode::TwoPerLine),
        ("malformed-response", EchoMode::MalformedResponse),
        ("malformed-handshake", EchoMode::MalformedHandshake),
        ("wrong-protocol", EchoMode::WrongProtocol),
        ("wrong-id", EchoMode::WrongId),
        ("error-response", EchoMode::ErrorResponse),
        ("out-of-range", EchoMode::OutOfRange),
        ("extra-fields", EchoMode::ExtraFields),
        ("slow-reader", EchoMode::SlowReader),
        ("exit-early", EchoMode::ExitEarly),
        ("chatty", EchoMode::Chatty),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, m)| *m == self).map(|(n, _)| *n).unwrap()
    }
}

impl FromStr for EchoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().find(|(n, _)| *n == s).map(|(_, m)| *m).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|(n, _)| *n).collect();
            format!("unknown echo mode {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoOptions {
    pub seed: u64,
    pub mode: EchoMode,
    pub slow_delay: Duration,
}

impl Default for EchoOptions {
    fn default() -> Self {
        Self { seed: 0, mode: EchoMode::Conforming, slow_delay: Duration::from_millis(2) }
    }
}

#[derive(serde::Deserialize)]
struct HelloOwned {
    hello: HelloOwnedBody,
}

#[derive(serde::Deserialize)]
struct HelloOwnedBody {
    protocol: u64,
    genes: Vec<String>,
}

/// Serves the protocol until end of input. Returns an error (and the caller
/// should exit nonzero) when a line cannot be attributed to any request.
pub fn serve_echo<R: BufRead, W: Write, E: Write>(
    mut input: R,
    mut output: W,
    mut diagnostics: E,
    options: EchoOptions,
) -> io::Result<()> {
    let mut first = Vec::new();
    if input.read_until(b'\n', &mut first)? == 0 {
        return Ok(());
    }
    strip_newline(&mut first);
    let hello: HelloOwned = decode_line(&first).map_err(|e| {
        let reason = match e {
            LineError::Framing(r) | LineError::Malformed(r) => r,
        };
        invalid(format!("bad hello {:?}: {reason}", String::from_utf8_lossy(&first)))
    })?;
    if hello.hello.protocol != u64::from(PROTOCOL_VERSION) {
        writeln!(diagnostics, "echo: client speaks protocol {}", hello.hello.protocol)?;
    }
    let genes = hello.hello.genes;

    match options.mode {
        EchoMode::MalformedHandshake => output.write_all(b"ready? yes\n")?,
        EchoMode::WrongProtocol => output.write_all(&encode_line(&Ready { ready: ReadyBody { protocol: 2 } }))?,
        EchoMode::ExtraFields => output.write_all(&encode_line(&json!({
            "ready": {"protocol": PROTOCOL_VERSION, "name": "echo"},
            "capabilities": ["pipelining"],
        })))?,
        _ => output.write_all(&encode_line(&Ready { ready: ReadyBody { protocol: u64::from(PROTOCOL_VERSION) } }))?,
    }
    output.flush()?;
    if options.mode == EchoMode::ExitEarly {
        return Ok(());
    }

    let mut held: Option<Vec<u8>> = None;
    loop {
        if options.mode == EchoMode::SlowReader {
            std::thread::sleep(options.slow_delay);
        }
        let mut raw = Vec::new();
        if input.read_until(b'\n', &mut raw)? == 0 {
            break;
        }
        strip_newline(&mut raw);
        let value: Value = match decode_line(&raw) {
            Ok(v) => v,
            Err(_) => {
                writeln!(diagnostics, "echo: unparseable request {:?}", String::from_utf8_lossy(&raw))?;
                return Err(invalid("unparseable request".into()));
            }
        };
        let Some(id) = value.get("id").and_then(Value::as_u64) else {
            writeln!(diagnostics, "echo: request without id: {value}")?;
            return Err(invalid("request without id".into()));
        };
        let response = match score(&genes, &value, options.seed) {
            Ok(f) => EvalResponse::fitness(id, f),
            Err(msg) => EvalResponse::error(id, msg),
        };
        let line = match options.mode {
            EchoMode::TwoPerLine => {
                let mut l = serde_json::to_vec(&response).unwrap();
                l.extend(encode_line(&response));
                l
            }
            EchoMode::MalformedResponse => b"this is not json\n".to_vec(),
            EchoMode::WrongId => encode_line(&EvalResponse { id: id + 1, ..response }),
            EchoMode::ErrorResponse => encode_line(&EvalResponse::error(id, "OOM")),
            EchoMode::OutOfRange => encode_line(&EvalResponse::fitness(id, 1.5)),
            EchoMode::ExtraFields => {
                let mut v = serde_json::to_value(&response).unwrap();
                v["elapsed_s"] = json!(0.25);
                v["history"] = json!({"val_accuracy": [0.1, 0.2]});
                encode_line(&v)
            }
            _ => encode_line(&response),
        };
        if options.mode == EchoMode::Chatty {
            writeln!(diagnostics, "echo: scored request {id}")?;
        }
        if options.mode == EchoMode::Reorder {
            match held.take() {
                None => {
                    held = Some(line);
                    continue;
                }
                Some(previous) => {
                    output.write_all(&line)?;
                    output.write_all(&previous)?;
                }
            }
        } else {
            output.write_all(&line)?;
        }
        output.flush()?;
    }
    if let Some(previous) = held {
        output.write_all(&previous)?;
        output.flush()?;
    }
    Ok(())
}

fn score(genes: &[String], request: &Value, seed: u64) -> Result<f64, String> {
    let map = request.get("genes").and_then(Value::as_object).ok_or("request has no `genes` object")?;
    if map.len() != genes.len() {
        return Err(format!("expected {} genes, got {}", genes.len(), map.len()));
    }
    let mut tokens = Vec::with_capacity(genes.len());
    for name in genes {
        let token = map
            .get(name)
            .ok_or_else(|| format!("missing gene {name}"))?
            .as_str()
            .ok_or_else(|| format!("gene {name} is not a string token"))?;
        tokens.push(token);
    }
    Ok(token_fitness(seed, tokens))
}

fn strip_newline(buf: &mut Vec<u8>) {
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}
