use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::debug;
use serde_json::{Map, Value};

use super::wire::{self, ReplyEnvelope, Request, RequestEnvelope};
use super::{
    Backend, BackendError, Capabilities, Capability, MaskedQuery, TokenInfo, PROTOCOL_VERSION,
};

const STDERR_TAIL: usize = 50;

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Maximum number of requests outstanding on the connection.
    pub window: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(300),
            window: 8,
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    replies: Receiver<std::io::Result<String>>,
    next_id: u64,
    stash: HashMap<u64, ReplyEnvelope>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    child: Option<Child>,
}

impl Connection {
    fn new(
        reader: impl Read + Send + 'static,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        stderr_tail: Arc<Mutex<VecDeque<String>>>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            writer,
            replies: rx,
            next_id: 1,
            stash: HashMap::new(),
            stderr_tail,
            child,
        }
    }

    fn diagnostics(&mut self) -> String {
        let mut out = String::new();
        if let Some(child) = self.child.as_mut() {
            if let Ok(Some(status)) = child.try_wait() {
                out.push_str(&format!("exit status: {status}\n"));
            }
        }
        let tail = self.stderr_tail.lock().expect("stderr buffer");
        for line in tail.iter() {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    fn send(&mut self, request: Request) -> Result<u64, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        let env = RequestEnvelope { id, request };
        let mut line = serde_json::to_vec(&env).map_err(|e| BackendError::Malformed(e.to_string()))?;
        line.push(b'\n');
        let written = self.writer.write_all(&line).and_then(|_| self.writer.flush());
        if let Err(e) = written {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(BackendError::Crashed {
                    diagnostics: self.diagnostics(),
                });
            }
            return Err(e.into());
        }
        Ok(id)
    }

    fn receive(&mut self, timeout: Duration) -> Result<ReplyEnvelope, BackendError> {
        match self.replies.recv_timeout(timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line)
                .map_err(|e| BackendError::Malformed(format!("{e}: {line}"))),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                // Give the process a moment to exit so its status is reported.
                thread::sleep(Duration::from_millis(20));
                Err(BackendError::Crashed {
                    diagnostics: self.diagnostics(),
                })
            }
        }
    }

    fn await_reply(&mut self, id: u64, timeout: Duration) -> Result<ReplyEnvelope, BackendError> {
        loop {
            if let Some(reply) = self.stash.remove(&id) {
                return Ok(reply);
            }
            let reply = self.receive(timeout)?;
            self.stash.insert(reply.id, reply);
        }
    }

    /// Sends all requests with at most `window` outstanding; replies may
    /// arrive in any order and are matched by id.
    fn call_many(
        &mut self,
        requests: Vec<Request>,
        options: &RemoteOptions,
    ) -> Result<Vec<Result<Map<String, Value>, BackendError>>, BackendError> {
        let window = options.window.max(1);
        let mut ids = Vec::with_capacity(requests.len());
        let mut results = Vec::with_capacity(requests.len());
        let mut pending = requests.into_iter();
        for request in pending.by_ref().take(window) {
            ids.push(self.send(request)?);
        }
        let mut next_to_collect = 0;
        while next_to_collect < ids.len() {
            let reply = self.await_reply(ids[next_to_collect], options.timeout)?;
            results.push(reply.into_result());
            next_to_collect += 1;
            if let Some(request) = pending.next() {
                ids.push(self.send(request)?);
            }
        }
        Ok(results)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.send(Request::Shutdown);
        if let Some(mut child) = self.child.take() {
            let _ = self.replies.recv_timeout(Duration::from_millis(500));
            if !matches!(child.try_wait(), Ok(Some(_))) {
                thread::sleep(Duration::from_millis(50));
                if !matches!(child.try_wait(), Ok(Some(_))) {
                    let _ = child.kill();
                }
            }
            let _ = child.wait();
        }
    }
}

/// A backend in another process, reached over stdio or TCP.
pub struct RemoteBackend {
    backend_id: String,
    capabilities: Capabilities,
    options: RemoteOptions,
    conn: Mutex<Connection>,
}

impl RemoteBackend {
    /// Launches `program` and handshakes over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], options: RemoteOptions) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let tail = Arc::new(Mutex::new(VecDeque::new()));
        let sink = Arc::clone(&tail);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                let mut buf = sink.lock().expect("stderr buffer");
                if buf.len() == STDERR_TAIL {
                    buf.pop_front();
                }
                buf.push_back(line);
            }
        });
        let conn = Connection::new(stdout, Box::new(stdin), Some(child), tail);
        Self::handshake(conn, options)
    }

    /// Connects to a backend listening on `addr` (`host:port`).
    pub fn connect(addr: &str, options: RemoteOptions) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let conn = Connection::new(reader, Box::new(stream), None, Arc::default());
        Self::handshake(conn, options)
    }

    /// Wraps an already-open duplex stream (mostly useful for tests).
    pub fn over_stream(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        options: RemoteOptions,
    ) -> Result<Self, BackendError> {
        let conn = Connection::new(reader, Box::new(writer), None, Arc::default());
        Self::handshake(conn, options)
    }

    fn handshake(mut conn: Connection, options: RemoteOptions) -> Result<Self, BackendError> {
        let id = conn.send(Request::Hello {
            protocol_version: PROTOCOL_VERSION,
        })?;
        let reply = conn.await_reply(id, options.timeout)?;
        let body = reply
            .into_result()
            .map_err(|e| BackendError::Handshake(e.to_string()))?;
        let (version, backend_id, capabilities) = wire::parse_hello(body)?;
        if version != PROTOCOL_VERSION {
            return Err(BackendError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: version,
            });
        }
        debug!("connected to {backend_id} with {capabilities}");
        Ok(Self {
            backend_id,
            capabilities,
            options,
            conn: Mutex::new(conn),
        })
    }

    fn call(&self, request: Request) -> Result<Map<String, Value>, BackendError> {
        let mut results = self.call_many(vec![request])?;
        results.pop().expect("one reply per request")
    }

    /// Pipelines a batch of requests and returns per-request outcomes in order.
    pub fn call_many(
        &self,
        requests: Vec<Request>,
    ) -> Result<Vec<Result<Map<String, Value>, BackendError>>, BackendError> {
        let mut conn = self.conn.lock().expect("connection lock");
        conn.call_many(requests, &self.options)
    }
}

impl Backend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    fn score_strings(&self, strings: &[String]) -> Result<Vec<f64>, BackendError> {
        self.capabilities.require(Capability::FullString)?;
        let body = self.call(Request::ScoreStrings {
            strings: strings.to_vec(),
        })?;
        wire::parse_scores(body, strings.len())
    }

    fn score_masked(
        &self,
        left: &str,
        right: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        self.capabilities.require(Capability::Masked)?;
        let body = self.call(Request::ScoreMasked {
            left: left.to_string(),
            right: right.to_string(),
            candidates: candidates.to_vec(),
        })?;
        wire::parse_scores(body, candidates.len())
    }

    fn score_masked_many(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.capabilities.require(Capability::Masked)?;
        let requests = queries
            .iter()
            .map(|q| Request::ScoreMasked {
                left: q.left.clone(),
                right: q.right.clone(),
                candidates: q.candidates.clone(),
            })
            .collect();
        self.call_many(requests)?
            .into_iter()
            .zip(queries)
            .map(|(body, q)| wire::parse_scores(body?, q.candidates.len()))
            .collect()
    }

    fn tokenize(&self, words: &[String]) -> Result<Vec<TokenInfo>, BackendError> {
        self.capabilities.require(Capability::Tokenize)?;
        let body = self.call(Request::Tokenize {
            words: words.to_vec(),
        })?;
        wire::parse_tokens(body, words.len())
    }

    fn fine_tune(&mut self, sentences: &[String], epochs: u32) -> Result<(), BackendError> {
        self.capabilities.require(Capability::FineTune)?;
        self.call(Request::FineTune {
            sentences: sentences.to_vec(),
            epochs,
        })
        .map(|_| ())
    }

    fn add_token(&mut self, surface: &str) -> Result<(), BackendError> {
        self.capabilities.require(Capability::AddToken)?;
        self.call(Request::AddToken {
            surface: surface.to_string(),
        })
        .map(|_| ())
    }

    fn reset(&mut self) -> Result<(), BackendError> {
        self.capabilities.require(Capability::Reset)?;
        self.call(Request::Reset).map(|_| ())
    }
}
