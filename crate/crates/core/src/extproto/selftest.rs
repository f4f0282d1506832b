use std::time::Duration;

use super::{EchoMode, ProtoError, Session, SessionOptions};
use crate::landscapes::{default_cnn_space, token_fitness};
use crate::seeded_rng;
use crate::space::{random_chromosome, Chromosome, SearchSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn record(&mut self, name: &str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(CheckResult { name: name.to_owned(), passed, detail });
    }
}

impl std::fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn fixture_options() -> SessionOptions {
    SessionOptions { handshake_timeout: Duration::from_secs(20), request_timeout: Duration::from_secs(20), window: 1 }
}

fn scripted_batch(space: &SearchSpace, n: usize, seed: u64) -> Vec<Chromosome> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| random_chromosome(space, &mut rng)).collect()
}

fn check_values(
    space: &SearchSpace,
    batch: &[Chromosome],
    results: &[Result<f64, String>],
    echo_seed: Option<u64>,
) -> Result<String, String> {
    for (c, r) in batch.iter().zip(results) {
        let value = r.as_ref().map_err(|e| format!("evaluator returned error {e:?}"))?;
        if let Some(seed) = echo_seed {
            let expected = token_fitness(seed, space.tokens(c).map(|(_, t)| t));
            if *value != expected {
                return Err(format!("fitness {value} for {:?}, expected {expected}", c.alleles()));
            }
        }
    }
    Ok(format!("{} responses", results.len()))
}

/// Handshake plus sequential and pipelined requests over the default CNN
/// genes. With `echo_seed`, every fitness must equal the reference echo value,
/// which also proves that tokens crossed the wire unchanged.
pub fn run_selftest(argv: &[String], echo_seed: Option<u64>, options: SessionOptions) -> SelftestReport {
    let mut report = SelftestReport::default();
    let space = default_cnn_space();
    let names: Vec<&str> = space.gene_names().collect();

    let mut session = match Session::spawn(argv, &names, SessionOptions { window: 1, ..options }) {
        Ok(s) => {
            report.record("handshake", Ok("protocol 1".into()));
            s
        }
        Err(e) => {
            report.record("handshake", Err(e.to_string()));
            return report;
        }
    };

    let batch = scripted_batch(&space, 8, 1);
    let outcome = session
        .evaluate_many(&space, &batch)
        .map_err(|e| e.to_string())
        .and_then(|r| check_values(&space, &batch, &r, echo_seed));
    report.record("sequential requests", outcome);

    let batch = scripted_batch(&space, 16, 2);
    session.set_window(options.window.max(8));
    let outcome = session
        .evaluate_many(&space, &batch)
        .map_err(|e| e.to_string())
        .and_then(|r| check_values(&space, &batch, &r, echo_seed));
    report.record("pipelined requests", outcome);
    session.shutdown();
    report
}

type Expectation = fn(&Result<Vec<Result<f64, String>>, ProtoError>) -> bool;

/// Runs the scripted misbehaving-evaluator fixtures. `echo_argv` launches
/// the reference echo evaluator; `--mode <name>` is appended per fixture.
pub fn run_fixture_suite(echo_argv: &[String]) -> SelftestReport {
    let mut report = SelftestReport::default();
    let space = default_cnn_space();
    let names: Vec<&str> = space.gene_names().collect();
    let batch = scripted_batch(&space, 8, 3);

    let cases: Vec<(&str, EchoMode, usize, Expectation)> = vec![
        ("out-of-order responses", EchoMode::Reorder, 8, |r| r.is_ok()),
        ("unknown fields ignored", EchoMode::ExtraFields, 1, |r| r.is_ok()),
        ("two objects on one line", EchoMode::TwoPerLine, 1, |r| matches!(r, Err(ProtoError::Framing { .. }))),
        ("malformed response line", EchoMode::MalformedResponse, 1, |r| {
            matches!(r, Err(ProtoError::MalformedResponse { .. }))
        }),
        ("response id mismatch", EchoMode::WrongId, 1, |r| matches!(r, Err(ProtoError::IdMismatch { .. }))),
        (
            "error response",
            EchoMode::ErrorResponse,
            1,
            |r| matches!(r, Ok(v) if v.iter().all(|x| x.as_ref().err().map(String::as_str) == Some("OOM"))),
        ),
        ("fitness out of range", EchoMode::OutOfRange, 1, |r| matches!(r, Err(ProtoError::FitnessOutOfRange { .. }))),
        ("evaluator exits", EchoMode::ExitEarly, 1, |r| matches!(r, Err(ProtoError::ProcessExited { .. }))),
    ];

    for (name, mode, window, expect) in cases {
        let argv = with_mode(echo_argv, mode);
        let options = SessionOptions { window, ..fixture_options() };
        let outcome = match Session::spawn(&argv, &names, options) {
            Err(e) => Err(format!("handshake failed: {e}")),
            Ok(mut session) => {
                let result = session.evaluate_many(&space, &batch);
                let ok = expect(&result);
                let summary = match &result {
                    Ok(v) if matches!(mode, EchoMode::Reorder | EchoMode::ExtraFields) => {
                        check_values(&space, &batch, v, Some(0)).unwrap_or_else(|e| e)
                    }
                    Ok(v) => format!("{} responses", v.len()),
                    Err(e) => e.to_string(),
                };
                session.shutdown();
                if ok {
                    Ok(summary)
                } else {
                    Err(format!("unexpected outcome: {summary}"))
                }
            }
        };
        report.record(name, outcome);
    }

    for (name, mode, expect) in [
        ("malformed handshake", EchoMode::MalformedHandshake, "MalformedHandshake"),
        ("protocol mismatch", EchoMode::WrongProtocol, "ProtocolMismatch"),
    ] {
        let argv = with_mode(echo_argv, mode);
        let outcome = match Session::spawn(&argv, &names, fixture_options()) {
            Ok(s) => {
                s.shutdown();
                Err("handshake unexpectedly succeeded".into())
            }
            Err(e @ ProtoError::MalformedHandshake { .. }) if expect == "MalformedHandshake" => Ok(e.to_string()),
            Err(e @ ProtoError::ProtocolMismatch { got: 2, .. }) if expect == "ProtocolMismatch" => Ok(e.to_string()),
            Err(e) => Err(format!("unexpected error: {e}")),
        };
        report.record(name, outcome);
    }

    // Thousands of pipelined requests against a slow reader: both pipes fill
    // up, which deadlocks any client that does not drain stdout while writing.
    let flood = scripted_batch(&space, 2000, 4);
    let mut argv = with_mode(echo_argv, EchoMode::SlowReader);
    argv.extend(["--delay-us".to_owned(), "50".to_owned()]);
    let options = SessionOptions { window: flood.len(), ..fixture_options() };
    let outcome = Session::spawn(&argv, &names, options)
        .map_err(|e| e.to_string())
        .and_then(|mut s| {
            let r = s.evaluate_many(&space, &flood).map_err(|e| e.to_string());
            s.shutdown();
            r
        })
        .and_then(|r| check_values(&space, &flood, &r, Some(0)));
    report.record("slow reader, deep pipeline", outcome);

    let argv = with_mode(echo_argv, EchoMode::Chatty);
    let outcome = Session::spawn(&argv, &names, fixture_options()).map_err(|e| e.to_string()).and_then(|mut s| {
        s.evaluate_many(&space, &batch[..3]).map_err(|e| e.to_string())?;
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        while s.stderr_lines().len() < 3 && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(10));
        }
        let lines = s.stderr_lines();
        s.shutdown();
        if lines.len() == 3 {
            Ok(format!("{} stderr lines captured", lines.len()))
        } else {
            Err(format!("captured {} stderr lines, expected 3", lines.len()))
        }
    });
    report.record("stderr passthrough", outcome);
    report
}

fn with_mode(echo_argv: &[String], mode: EchoMode) -> Vec<String> {
    let mut argv = echo_argv.to_vec();
    argv.extend(["--mode".to_owned(), mode.name().to_owned()]);
    argv
}
