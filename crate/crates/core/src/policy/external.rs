//! Out-of-process policies speaking newline-delimited JSON.
//!
//! Session: the host sends `{"type":"hello","schema_version":1}` and expects
//! the same message back. Each decision is one request line
//!
//! ```text
//! {"type":"decide","id":7,"ego":{"px":..,"py":..,"theta":..,"v":..},
//!  "history":[{"frame":12,"ego":{..},"raster":"<base64 tensor>"}, ..]}
//! ```
//!
//! answered by exactly one line, either
//! `{"type":"decision","id":7,"waypoints":[[x,y], ..40 rows]}` or
//! `{"type":"error","code":"..","message":".."}`. History entries carry
//! either an inline base64 tensor (`raster`), a path to a tensor file
//! (`raster_ref`), or neither.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{constant_velocity_waypoints, Decision, Observation, OracleView, Policy, PolicyError};
use crate::bev::io::{tensor_base64, write_tensor};
use crate::flat_vehicle::VehicleState;
use crate::geometry::Vec2;
use crate::DECISION_HORIZON;

pub const PROTOCOL_VERSION: u32 = 1;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

/// How history rasters travel to the policy process.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum RasterTransfer {
    /// Ego states only.
    None,
    /// Base64 of the binary tensor format, inline in the request.
    #[default]
    Inline,
    /// Tensor files written under the directory, referenced by path.
    Files(PathBuf),
}

impl FromStr for RasterTransfer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "inline" => Ok(Self::Inline),
            _ => match s.strip_prefix("files:") {
                Some(dir) if !dir.is_empty() => Ok(Self::Files(PathBuf::from(dir))),
                _ => Err(format!("expected none, inline or files:<dir>, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    pub timeout: Duration,
    pub rasters: RasterTransfer,
    /// Number of most recent history frames sent per request.
    pub history_len: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            rasters: RasterTransfer::Inline,
            history_len: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireRef {
    path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireFrame {
    frame: usize,
    ego: VehicleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raster: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raster_ref: Option<WireRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Request {
    Hello {
        schema_version: u32,
    },
    Decide {
        id: u64,
        ego: VehicleState,
        history: Vec<WireFrame>,
    },
}

#[derive(Debug, Deserialize)]
struct DecisionReply {
    #[serde(default)]
    id: Option<u64>,
    waypoints: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct ErrorReply {
    code: String,
    message: String,
}

/// A bidirectional line channel to a policy process.
pub trait LineTransport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), PolicyError>;
    fn recv_line(&mut self, timeout: Duration) -> Result<String, PolicyError>;
}

/// Child process reached through its standard streams. A reader thread feeds
/// stdout lines into a channel so reads can time out.
pub struct SubprocessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl SubprocessTransport {
    /// Run `cmd` through `sh -c`.
    pub fn spawn(cmd: &str) -> Result<Self, PolicyError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PolicyError::Process(format!("spawning `{cmd}`: {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }
}

impl LineTransport for SubprocessTransport {
    fn send_line(&mut self, line: &str) -> Result<(), PolicyError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| PolicyError::Process("stdin closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| PolicyError::Process(format!("writing request: {e}")))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, PolicyError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(PolicyError::Process(format!("reading response: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(PolicyError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(PolicyError::Process("policy process closed its output".into())),
        }
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-process peer on a thread, connected by channels. Used as a test double
/// for real policy processes.
pub struct ChannelTransport {
    tx: Option<Sender<String>>,
    rx: Receiver<String>,
    handle: Option<JoinHandle<()>>,
}

impl ChannelTransport {
    pub fn spawn<F>(server: F) -> Self
    where
        F: FnOnce(Receiver<String>, Sender<String>) + Send + 'static,
    {
        let (to_server, server_in) = mpsc::channel();
        let (server_out, from_server) = mpsc::channel();
        let handle = thread::spawn(move || server(server_in, server_out));
        Self {
            tx: Some(to_server),
            rx: from_server,
            handle: Some(handle),
        }
    }

    /// Peer running [`stub::serve`].
    pub fn stub(behavior: stub::Behavior) -> Self {
        Self::spawn(move |rx, tx| stub::serve(rx.into_iter(), behavior, |line| tx.send(line).is_ok()))
    }
}

impl LineTransport for ChannelTransport {
    fn send_line(&mut self, line: &str) -> Result<(), PolicyError> {
        self.tx
            .as_ref()
            .and_then(|tx| tx.send(line.to_string()).ok())
            .ok_or_else(|| PolicyError::Process("peer hung up".into()))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<String, PolicyError> {
        match self.rx.recv_timeout(timeout) {
            Ok(line) => Ok(line),
            Err(RecvTimeoutError::Timeout) => Err(PolicyError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(PolicyError::Process("peer hung up".into())),
        }
    }
}

impl Drop for ChannelTransport {
    fn drop(&mut self) {
        drop(self.tx.take());
        if let Some(h) = self.handle.take() {
            // a stalled peer would block here; those only exist in tests
            // that hold it on purpose, so detach instead of joining
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}

pub struct ExternalPolicy {
    transport: Box<dyn LineTransport>,
    config: ExternalConfig,
    next_id: u64,
    files_written: usize,
}

impl ExternalPolicy {
    /// Open a session over `transport`, performing the hello handshake.
    pub fn connect(transport: Box<dyn LineTransport>, config: ExternalConfig) -> Result<Self, PolicyError> {
        let mut p = Self {
            transport,
            config,
            next_id: 0,
            files_written: 0,
        };
        p.handshake()?;
        Ok(p)
    }

    pub fn spawn(cmd: &str, config: ExternalConfig) -> Result<Self, PolicyError> {
        Self::connect(Box::new(SubprocessTransport::spawn(cmd)?), config)
    }

    fn handshake(&mut self) -> Result<(), PolicyError> {
        let hello = serde_json::to_string(&Request::Hello {
            schema_version: PROTOCOL_VERSION,
        })
        .expect("hello serializes");
        self.transport.send_line(&hello)?;
        let line = self.transport.recv_line(self.config.timeout)?;
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| PolicyError::Protocol(format!("handshake reply is not JSON: {e}")))?;
        match (
            v.get("type").and_then(Value::as_str),
            v.get("schema_version").and_then(Value::as_u64),
        ) {
            (Some("hello"), Some(ver)) if ver == PROTOCOL_VERSION as u64 => Ok(()),
            (Some("hello"), ver) => Err(PolicyError::Protocol(format!(
                "schema version mismatch: host {PROTOCOL_VERSION}, policy {ver:?}"
            ))),
            _ => Err(PolicyError::Protocol(format!(
                "expected hello, got `{}`",
                truncate(&line)
            ))),
        }
    }

    fn wire_frames(&mut self, obs: &Observation) -> Result<Vec<WireFrame>, PolicyError> {
        let history = obs.history();
        let from = history.len().saturating_sub(self.config.history_len.max(1));
        let mut out = Vec::with_capacity(history.len() - from);
        for h in &history[from..] {
            let mut wf = WireFrame {
                frame: h.frame,
                ego: h.ego,
                raster: None,
                raster_ref: None,
            };
            if let Some(raster) = &h.raster {
                match &self.config.rasters {
                    RasterTransfer::None => {}
                    RasterTransfer::Inline => wf.raster = Some(tensor_base64(raster)),
                    RasterTransfer::Files(dir) => {
                        let path = dir.join(format!("raster_{:06}.bin", self.files_written));
                        self.files_written += 1;
                        write_tensor(raster, &path).map_err(|e| PolicyError::Process(e.to_string()))?;
                        wf.raster_ref = Some(WireRef {
                            path: path.display().to_string(),
                        });
                    }
                }
            }
            out.push(wf);
        }
        Ok(out)
    }
}

fn truncate(line: &str) -> String {
    const MAX: usize = 120;
    if line.len() <= MAX {
        line.to_string()
    } else {
        let mut end = MAX;
        while !line.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &line[..end])
    }
}

/// Interpret one reply line to the request `id`.
fn parse_reply(line: &str, id: u64) -> Result<Decision, PolicyError> {
    let v: Value = serde_json::from_str(line)
        .map_err(|e| PolicyError::Protocol(format!("reply is not JSON ({e}): `{}`", truncate(line))))?;
    match v.get("type").and_then(Value::as_str) {
        Some("decision") => {
            let reply: DecisionReply =
                serde_json::from_value(v).map_err(|e| PolicyError::MalformedDecision(e.to_string()))?;
            if let Some(got) = reply.id {
                if got != id {
                    return Err(PolicyError::Protocol(format!("reply id {got} for request {id}")));
                }
            }
            let mut waypoints = Vec::with_capacity(reply.waypoints.len());
            for (k, row) in reply.waypoints.iter().enumerate() {
                match row.as_slice() {
                    [x, y] => waypoints.push(Vec2::new(*x, *y)),
                    _ => {
                        return Err(PolicyError::MalformedDecision(format!(
                            "row {k} has {} columns",
                            row.len()
                        )))
                    }
                }
            }
            Decision::new(waypoints)
        }
        Some("error") => {
            let e: ErrorReply =
                serde_json::from_value(v).map_err(|e| PolicyError::Protocol(format!("bad error reply: {e}")))?;
            Err(PolicyError::Remote {
                code: e.code,
                message: e.message,
            })
        }
        other => Err(PolicyError::Protocol(format!("unexpected reply type {other:?}"))),
    }
}

impl Policy for ExternalPolicy {
    fn name(&self) -> &str {
        "external"
    }

    fn needs_rasters(&self) -> bool {
        self.config.rasters != RasterTransfer::None
    }

    fn decide(&mut self, obs: &Observation, _oracle: Option<OracleView<'_>>) -> Result<Decision, PolicyError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = Request::Decide {
            id,
            ego: *obs.ego(),
            history: self.wire_frames(obs)?,
        };
        let line =
            serde_json::to_string(&request).map_err(|e| PolicyError::Protocol(format!("encoding request: {e}")))?;
        self.transport.send_line(&line)?;
        let reply = self.transport.recv_line(self.config.timeout)?;
        parse_reply(&reply, id)
    }
}

/// Minimal protocol server, used as an in-process test double and behind the
/// command line's hidden `policy-stub` subcommand.
pub mod stub {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Behavior {
        /// Straight ahead at the request's ego speed.
        ConstantVelocity,
        Zeros,
        /// Zeros, with the given number of rows.
        Rows(usize),
        /// Answers decide requests with a line that is not JSON.
        Garbage,
        /// Answers decide requests with an error reply.
        Refuse,
        /// Completes the handshake, then never answers.
        Silent,
    }

    impl FromStr for Behavior {
        type Err = String;

        fn from_str(s: &str) -> Result<Self, String> {
            match s {
                "cv" => Ok(Self::ConstantVelocity),
                "zeros" => Ok(Self::Zeros),
                "garbage" => Ok(Self::Garbage),
                "refuse" => Ok(Self::Refuse),
                "silent" => Ok(Self::Silent),
                _ => s
                    .strip_prefix("rows:")
                    .and_then(|n| n.parse().ok())
                    .map(Self::Rows)
                    .ok_or_else(|| format!("unknown stub behavior `{s}`")),
            }
        }
    }

    fn error_line(code: &str, message: String) -> String {
        serde_json::json!({"type": "error", "code": code, "message": message}).to_string()
    }

    fn rows(w: &[Vec2]) -> Vec<[f64; 2]> {
        w.iter().map(|p| [p.x, p.y]).collect()
    }

    /// Reply to one request line; `None` means stay silent.
    pub fn respond(line: &str, behavior: Behavior) -> Option<String> {
        let request: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return Some(error_line("E_BAD_REQUEST", e.to_string())),
        };
        let (id, ego) = match request {
            Request::Hello { schema_version } => {
                return Some(serde_json::json!({"type": "hello", "schema_version": schema_version}).to_string())
            }
            Request::Decide { id, ego, .. } => (id, ego),
        };
        let waypoints = match behavior {
            Behavior::ConstantVelocity => rows(&constant_velocity_waypoints(ego.v)),
            Behavior::Zeros => vec![[0.0; 2]; DECISION_HORIZON],
            Behavior::Rows(n) => vec![[0.0; 2]; n],
            Behavior::Garbage => return Some("this is not json".into()),
            Behavior::Refuse => return Some(error_line("E_REFUSED", "stub refuses to decide".into())),
            Behavior::Silent => return None,
        };
        Some(serde_json::json!({"type": "decision", "id": id, "waypoints": waypoints}).to_string())
    }

    /// Serve until the input ends or `emit` reports the peer is gone.
    pub fn serve<I, F>(lines: I, behavior: Behavior, mut emit: F)
    where
        I: Iterator<Item = String>,
        F: FnMut(String) -> bool,
    {
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(reply) = respond(&line, behavior) {
                if !emit(reply) {
                    break;
                }
            }
        }
    }
}
