use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{
    decode_line, encode_line, EvalRequest, EvalResponse, Hello, HelloBody, LineError, ProtoError, Ready,
    PROTOCOL_VERSION,
};
use crate::landscapes::{EvalError, FitnessEvaluator};
use crate::par::Execution;
use crate::space::{Chromosome, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
    /// Maximum number of outstanding requests; 1 disables pipelining.
    pub window: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: Duration::from_secs(60),
            request_timeout: Duration::from_secs(6 * 60 * 60),
            window: 1,
        }
    }
}

enum LineEvent {
    Line(Vec<u8>),
    Unterminated(Vec<u8>),
    Eof,
    Error(String),
}

pub type StderrSink = Box<dyn Fn(&str) + Send>;

/// A running evaluator process that completed the handshake.
///
/// stdout is drained by a dedicated thread, so writes never deadlock against
/// an evaluator that is blocked writing its responses.
pub struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<LineEvent>,
    stderr: Arc<Mutex<Vec<String>>>,
    next_id: u64,
    options: SessionOptions,
    failure: Option<ProtoError>,
}

impl Session {
    /// Spawns `argv[0]` with the remaining arguments and performs the handshake.
    pub fn spawn(argv: &[String], gene_names: &[&str], options: SessionOptions) -> Result<Self, ProtoError> {
        Self::spawn_with_stderr(argv, gene_names, options, None)
    }

    /// Like [`Session::spawn`], additionally forwarding each evaluator stderr
    /// line to `sink` as it arrives.
    pub fn spawn_with_stderr(
        argv: &[String],
        gene_names: &[&str],
        options: SessionOptions,
        sink: Option<StderrSink>,
    ) -> Result<Self, ProtoError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| ProtoError::Spawn { command: String::new(), message: "empty command line".into() })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ProtoError::Spawn { command: argv.join(" "), message: e.to_string() })?;

        let stdout = child.stdout.take().expect("stdout piped");
        let stderr = child.stderr.take().expect("stderr piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || read_lines(stdout, tx));

        let stderr_lines = Arc::new(Mutex::new(Vec::new()));
        let buffer = Arc::clone(&stderr_lines);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines() {
                let Ok(line) = line else { break };
                if let Some(sink) = &sink {
                    sink(&line);
                }
                buffer.lock().unwrap().push(line);
            }
        });

        let mut session = Session {
            stdin: child.stdin.take(),
            child,
            lines,
            stderr: stderr_lines,
            next_id: 1,
            options,
            failure: None,
        };
        session.handshake(gene_names)?;
        Ok(session)
    }

    fn handshake(&mut self, gene_names: &[&str]) -> Result<u32, ProtoError> {
        let hello = Hello { hello: HelloBody { protocol: PROTOCOL_VERSION, genes: gene_names.to_vec() } };
        self.write(&encode_line(&hello))?;
        let timeout = self.options.handshake_timeout;
        let raw = match self.lines.recv_timeout(timeout) {
            Ok(LineEvent::Line(raw)) | Ok(LineEvent::Unterminated(raw)) => raw,
            Ok(LineEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                return Err(self.exited());
            }
            Ok(LineEvent::Error(e)) => return Err(ProtoError::Io(e)),
            Err(RecvTimeoutError::Timeout) => return Err(ProtoError::HandshakeTimeout(timeout)),
        };
        let ready: Ready = decode_line(&raw).map_err(|e| ProtoError::MalformedHandshake {
            line: String::from_utf8_lossy(&raw).into_owned(),
            reason: match e {
                LineError::Framing(r) | LineError::Malformed(r) => r,
            },
        })?;
        if ready.ready.protocol != u64::from(PROTOCOL_VERSION) {
            return Err(ProtoError::ProtocolMismatch { expected: PROTOCOL_VERSION, got: ready.ready.protocol });
        }
        Ok(PROTOCOL_VERSION)
    }

    /// Lines the evaluator has written to stderr so far.
    pub fn stderr_lines(&self) -> Vec<String> {
        self.stderr.lock().unwrap().clone()
    }

    pub fn options(&self) -> SessionOptions {
        self.options
    }

    pub fn set_window(&mut self, window: usize) {
        self.options.window = window.max(1);
    }

    /// Evaluates one chromosome. The outer error is a session failure; the
    /// inner one is an `error` response for this chromosome.
    pub fn evaluate(&mut self, space: &SearchSpace, c: &Chromosome) -> Result<Result<f64, String>, ProtoError> {
        Ok(self.evaluate_many(space, std::slice::from_ref(c))?.remove(0))
    }

    /// Sends the batch keeping at most `window` requests in flight and
    /// returns results in input order.
    pub fn evaluate_many(
        &mut self,
        space: &SearchSpace,
        batch: &[Chromosome],
    ) -> Result<Vec<Result<f64, String>>, ProtoError> {
        if let Some(f) = &self.failure {
            return Err(ProtoError::Poisoned(f.to_string()));
        }
        let result = self.pipeline(space, batch);
        if let Err(e) = &result {
            self.failure = Some(e.clone());
        }
        result
    }

    fn pipeline(&mut self, space: &SearchSpace, batch: &[Chromosome]) -> Result<Vec<Result<f64, String>>, ProtoError> {
        let window = self.options.window.max(1);
        let mut results: Vec<Option<Result<f64, String>>> = vec![None; batch.len()];
        // id -> (batch index, send time)
        let mut outstanding: BTreeMap<u64, (usize, Instant)> = BTreeMap::new();
        let mut queue: VecDeque<usize> = (0..batch.len()).collect();

        while !queue.is_empty() || !outstanding.is_empty() {
            while outstanding.len() < window {
                let Some(index) = queue.pop_front() else { break };
                let id = self.next_id;
                self.next_id += 1;
                let line = encode_line(&EvalRequest { id, genes: space.assignment(&batch[index]) });
                self.write(&line)?;
                outstanding.insert(id, (index, Instant::now()));
            }

            // Ids grow with send order, so the smallest id is the oldest request.
            let (&oldest_id, &(_, sent)) = outstanding.first_key_value().expect("at least one request in flight");
            let deadline = sent + self.options.request_timeout;
            let wait = deadline.saturating_duration_since(Instant::now());
            let raw = match self.lines.recv_timeout(wait) {
                Ok(LineEvent::Line(raw)) => raw,
                Ok(LineEvent::Unterminated(raw)) => {
                    return Err(ProtoError::Framing {
                        line: String::from_utf8_lossy(&raw).into_owned(),
                        reason: "line not terminated by \\n".into(),
                    })
                }
                Ok(LineEvent::Eof) | Err(RecvTimeoutError::Disconnected) => return Err(self.exited()),
                Ok(LineEvent::Error(e)) => return Err(ProtoError::Io(e)),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ProtoError::RequestTimeout { id: oldest_id, timeout: self.options.request_timeout })
                }
            };
            let line = || String::from_utf8_lossy(&raw).into_owned();
            let response: EvalResponse = decode_line(&raw).map_err(|e| match e {
                LineError::Framing(reason) => ProtoError::Framing { line: line(), reason },
                LineError::Malformed(reason) => ProtoError::MalformedResponse { line: line(), reason },
            })?;
            let Some((index, _)) = outstanding.remove(&response.id) else {
                return Err(ProtoError::IdMismatch {
                    expected: outstanding.keys().copied().collect(),
                    got: response.id,
                });
            };
            results[index] = Some(match (response.fitness, response.error) {
                (Some(value), None) => {
                    if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                        return Err(ProtoError::FitnessOutOfRange { id: response.id, value });
                    }
                    Ok(value)
                }
                (None, Some(message)) => Err(message),
                _ => {
                    return Err(ProtoError::MalformedResponse {
                        line: line(),
                        reason: "exactly one of `fitness` and `error` must be present".into(),
                    })
                }
            });
        }
        Ok(results.into_iter().map(|r| r.expect("every request answered")).collect())
    }

    fn write(&mut self, line: &[u8]) -> Result<(), ProtoError> {
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(ProtoError::Io("stdin already closed".into()));
        };
        match stdin.write_all(line).and_then(|()| stdin.flush()) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Err(self.exited()),
            Err(e) => Err(ProtoError::Io(e.to_string())),
        }
    }

    fn exited(&mut self) -> ProtoError {
        // Give the process a moment to be reaped so the status can be reported.
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return ProtoError::ProcessExited { status: Some(status.to_string()) },
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => return ProtoError::ProcessExited { status: None },
            }
        }
    }

    /// Closes stdin and waits briefly for the evaluator to exit, killing it otherwise.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.stdin.is_some() {
            self.close();
        }
    }
}

fn read_lines<R: Read>(stdout: R, tx: mpsc::Sender<LineEvent>) {
    let mut reader = BufReader::new(stdout);
    loop {
        let mut buf = Vec::new();
        let event = match reader.read_until(b'\n', &mut buf) {
            Ok(0) => LineEvent::Eof,
            Ok(_) if buf.last() == Some(&b'\n') => {
                buf.pop();
                LineEvent::Line(buf)
            }
            Ok(_) => LineEvent::Unterminated(buf),
            Err(e) => LineEvent::Error(e.to_string()),
        };
        let stop = matches!(event, LineEvent::Eof | LineEvent::Error(_));
        if tx.send(event).is_err() || stop {
            break;
        }
    }
}

/// [`FitnessEvaluator`] backed by an evaluator process.
///
/// `error` responses become [`EvalError::Failed`]; every other protocol
/// problem becomes [`EvalError::Session`] and poisons the session.
pub struct ExternalEvaluator {
    space: SearchSpace,
    session: Mutex<Session>,
    deterministic: bool,
}

impl ExternalEvaluator {
    pub fn new(space: SearchSpace, session: Session, deterministic: bool) -> Self {
        Self { space, session: Mutex::new(session), deterministic }
    }

    pub fn spawn(
        space: SearchSpace,
        argv: &[String],
        options: SessionOptions,
        deterministic: bool,
        sink: Option<StderrSink>,
    ) -> Result<Self, ProtoError> {
        let names: Vec<&str> = space.gene_names().collect();
        let session = Session::spawn_with_stderr(argv, &names, options, sink)?;
        Ok(Self::new(space, session, deterministic))
    }

    pub fn stderr_lines(&self) -> Vec<String> {
        self.session.lock().unwrap().stderr_lines()
    }
}

impl FitnessEvaluator for ExternalEvaluator {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        let mut session = self.session.lock().unwrap();
        match session.evaluate(&self.space, c) {
            Ok(Ok(v)) => Ok(v),
            Ok(Err(message)) => Err(EvalError::Failed(message)),
            Err(e) => Err(EvalError::Session(e.to_string())),
        }
    }

    fn evaluate_many(&self, batch: &[Chromosome], _exec: Execution) -> Vec<Result<f64, EvalError>> {
        let mut session = self.session.lock().unwrap();
        match session.evaluate_many(&self.space, batch) {
            Ok(results) => results.into_iter().map(|r| r.map_err(EvalError::Failed)).collect(),
            Err(e) => vec![Err(EvalError::Session(e.to_string())); batch.len()],
        }
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }
}
