//! Client for the optional model sidecar: newline-delimited JSON over the
//! child's stdin/stdout, replies in request order.
//!
//! See `docs/sidecar-protocol.md` for the wire format.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::imageprep::encode_jpeg;

pub const PROTOCOL_VERSION: &str = "vps/1";
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_READ_DEADLINE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("cannot start sidecar {command}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("sidecar i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar did not answer {op} within {secs:.1}s")]
    Timeout { op: String, secs: f64 },
    #[error("sidecar closed its output")]
    Closed,
    #[error("sidecar protocol violation: {0}")]
    Protocol(String),
    #[error("sidecar error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("sidecar does not support {0}")]
    Unsupported(&'static str),
    #[error("image encoding for sidecar: {0}")]
    Encode(String),
}

impl SidecarError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            SidecarError::Io(_) | SidecarError::Timeout { .. } | SidecarError::Closed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub version: String,
    pub embedding_dim: usize,
    #[serde(default)]
    pub supports_shot_scores: bool,
    #[serde(default)]
    pub supports_transcribe: bool,
    #[serde(default)]
    pub model_ids: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    v: &'a str,
    id: u64,
    op: &'a str,
    payload: Value,
}

#[derive(Debug, Deserialize)]
struct Reply {
    id: u64,
    ok: bool,
    #[serde(default)]
    body: Value,
    #[serde(default)]
    error: Option<RemoteError>,
}

#[derive(Debug, Deserialize)]
struct RemoteError {
    code: String,
    #[serde(default)]
    message: String,
}

/// One sidecar process with pipelined, FIFO-ordered requests.
pub struct SidecarProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    pending: VecDeque<(u64, String)>,
    read_deadline: Duration,
    caps: Option<Capabilities>,
}

impl SidecarProcess {
    /// Launches `program args... --stdio`.
    pub fn spawn(command: &[String], read_deadline: Duration) -> Result<Self, SidecarError> {
        let (program, args) = command.split_first().ok_or_else(|| SidecarError::Spawn {
            command: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--stdio")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| SidecarError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            pending: VecDeque::new(),
            read_deadline,
            caps: None,
        })
    }

    pub fn capabilities(&self) -> Option<&Capabilities> {
        self.caps.as_ref()
    }

    /// Writes one request without waiting for its reply; returns its id.
    pub fn send(&mut self, op: &str, payload: Value) -> Result<u64, SidecarError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request {
            v: PROTOCOL_VERSION,
            id,
            op,
            payload,
        })
        .map_err(|e| SidecarError::Protocol(e.to_string()))?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        self.pending.push_back((id, op.to_string()));
        Ok(id)
    }

    /// Waits for the oldest outstanding reply.
    pub fn recv(&mut self) -> Result<(u64, Value), SidecarError> {
        self.recv_within(self.read_deadline)
    }

    fn recv_within(&mut self, deadline: Duration) -> Result<(u64, Value), SidecarError> {
        let (expected, op) = self
            .pending
            .pop_front()
            .ok_or_else(|| SidecarError::Protocol("no request outstanding".into()))?;
        let line = match self.lines.recv_timeout(deadline) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(SidecarError::Io(e)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(SidecarError::Timeout {
                    op,
                    secs: deadline.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => return Err(SidecarError::Closed),
        };
        let reply: Reply = serde_json::from_str(&line)
            .map_err(|e| SidecarError::Protocol(format!("bad reply frame: {e}")))?;
        if reply.id != expected {
            return Err(SidecarError::Protocol(format!(
                "reply id {} arrived while waiting for {expected}",
                reply.id
            )));
        }
        if !reply.ok {
            let err = reply.error.unwrap_or(RemoteError {
                code: "unknown".into(),
                message: String::new(),
            });
            return Err(SidecarError::Remote {
                code: err.code,
                message: err.message,
            });
        }
        Ok((reply.id, reply.body))
    }

    pub fn call(&mut self, op: &str, payload: Value) -> Result<Value, SidecarError> {
        self.send(op, payload)?;
        self.recv().map(|(_, body)| body)
    }

    pub fn handshake(&mut self) -> Result<Capabilities, SidecarError> {
        self.send("hello", json!({ "version": PROTOCOL_VERSION }))?;
        let (_, body) = self.recv_within(HANDSHAKE_TIMEOUT.min(self.read_deadline))?;
        let caps: Capabilities = serde_json::from_value(body)
            .map_err(|e| SidecarError::Protocol(format!("bad hello body: {e}")))?;
        if caps.version != PROTOCOL_VERSION {
            return Err(SidecarError::Remote {
                code: "version_mismatch".into(),
                message: format!("sidecar speaks {}", caps.version),
            });
        }
        if caps.embedding_dim == 0 {
            return Err(SidecarError::Protocol("embedding_dim must be > 0".into()));
        }
        self.caps = Some(caps.clone());
        Ok(caps)
    }
}

impl Drop for SidecarProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub(crate) fn frames_payload(frames: &[&RgbImage]) -> Result<Value, SidecarError> {
    let encoded: Result<Vec<String>, SidecarError> = frames
        .iter()
        .map(|f| {
            encode_jpeg(f, 85)
                .map(|bytes| B64.encode(bytes))
                .map_err(|e| SidecarError::Encode(e.to_string()))
        })
        .collect();
    Ok(json!({ "frames": encoded? }))
}

/// Thread-safe handle that serializes calls to one sidecar process.
pub struct Sidecar {
    inner: Mutex<SidecarProcess>,
    caps: Capabilities,
}

impl Sidecar {
    /// Spawns and handshakes; fails if the hello exchange fails.
    pub fn start(command: &[String], read_deadline: Duration) -> Result<Self, SidecarError> {
        let mut process = SidecarProcess::spawn(command, read_deadline)?;
        let caps = process.handshake()?;
        Ok(Self {
            inner: Mutex::new(process),
            caps,
        })
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn call(&self, op: &str, payload: Value) -> Result<Value, SidecarError> {
        let mut guard = self
            .inner
            .lock()
            .map_err(|_| SidecarError::Protocol("sidecar lock poisoned".into()))?;
        guard.call(op, payload)
    }

    pub fn shot_scores(&self, frames: &[&RgbImage]) -> Result<Vec<f64>, SidecarError> {
        if !self.caps.supports_shot_scores {
            return Err(SidecarError::Unsupported("shot_scores"));
        }
        let body = self.call("shot_scores", frames_payload(frames)?)?;
        let scores: Vec<f64> = serde_json::from_value(body["scores"].clone())
            .map_err(|e| SidecarError::Protocol(format!("bad scores: {e}")))?;
        if scores
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0 || *s > 1.0)
        {
            return Err(SidecarError::Protocol("scores must lie in [0, 1]".into()));
        }
        Ok(scores)
    }

    pub fn embed(&self, frames: &[&RgbImage]) -> Result<Vec<Vec<f64>>, SidecarError> {
        let body = self.call("embed", frames_payload(frames)?)?;
        let vectors: Vec<Vec<f64>> = serde_json::from_value(body["vectors"].clone())
            .map_err(|e| SidecarError::Protocol(format!("bad vectors: {e}")))?;
        if vectors.len() != frames.len() {
            return Err(SidecarError::Protocol(format!(
                "{} vectors for {} frames",
                vectors.len(),
                frames.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != self.caps.embedding_dim) {
            return Err(SidecarError::Protocol(format!(
                "vector of length {} but handshake said {}",
                v.len(),
                self.caps.embedding_dim
            )));
        }
        Ok(vectors)
    }

    /// Returns `(text, detected_language)`.
    pub fn transcribe(
        &self,
        pcm_le: &[u8],
        sample_rate: u32,
        language: &str,
    ) -> Result<(String, String), SidecarError> {
        if !self.caps.supports_transcribe {
            return Err(SidecarError::Unsupported("transcribe"));
        }
        let body = self.call(
            "transcribe",
            json!({ "pcm": B64.encode(pcm_le), "sample_rate": sample_rate, "language": language }),
        )?;
        let text = body["text"]
            .as_str()
            .ok_or_else(|| SidecarError::Protocol("transcribe reply lacks text".into()))?;
        let lang = body["language"].as_str().unwrap_or(language);
        Ok((text.to_string(), lang.to_string()))
    }
}

impl crate::shots::TransitionScorer for Sidecar {
    fn transition_scores(&self, frames: &[&RgbImage]) -> Result<Vec<f64>, SidecarError> {
        self.shot_scores(frames)
    }
}
