//! Scripted stand-in for the model sidecar, used by tests.
//!
//! Speaks the NDJSON stdio protocol with deterministic answers:
//! embeddings are hashes of the frame payload, shot scores are 0.02 for
//! identical neighbouring frames and 0.97 otherwise.
//!
//! Flags:
//!   --stdio               required, mirrors the real sidecar launch
//!   --dim N               embedding dimension (default 8)
//!   --protocol V          protocol version this fake speaks (default vps/1)
//!   --fail-hello CODE     answer hello with an error reply
//!   --die-after N         exit after answering N requests
//!   --hang-after N        stop answering after N requests
//!   --no-shot-scores      advertise no shot scoring
//!   --transcribe          advertise transcription
//!   --replies FILE        JSON object mapping op name to a fixed reply body

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

struct Script {
    dim: usize,
    protocol: String,
    fail_hello: Option<String>,
    die_after: Option<usize>,
    hang_after: Option<usize>,
    shot_scores: bool,
    transcribe: bool,
    replies: Value,
}

fn parse_args() -> Result<Script, String> {
    let mut s = Script {
        dim: 8,
        protocol: "vps/1".into(),
        fail_hello: None,
        die_after: None,
        hang_after: None,
        shot_scores: true,
        transcribe: false,
        replies: Value::Null,
    };
    let mut stdio = false;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = || args.next().ok_or(format!("{a} needs a value"));
        match a.as_str() {
            "--stdio" => stdio = true,
            "--dim" => s.dim = value()?.parse().map_err(|e| format!("--dim: {e}"))?,
            "--protocol" => s.protocol = value()?,
            "--fail-hello" => s.fail_hello = Some(value()?),
            "--die-after" => s.die_after = Some(value()?.parse().map_err(|e| format!("{e}"))?),
            "--hang-after" => s.hang_after = Some(value()?.parse().map_err(|e| format!("{e}"))?),
            "--no-shot-scores" => s.shot_scores = false,
            "--transcribe" => s.transcribe = true,
            "--replies" => {
                let path = value()?;
                let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
                s.replies = serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
            }
            other => return Err(format!("unknown flag {other}")),
        }
    }
    if !stdio {
        return Err("only --stdio mode is supported".into());
    }
    Ok(s)
}

fn vector_for(frame: &str, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let h = Sha256::digest(format!("{i}:{frame}").as_bytes());
            u32::from_le_bytes([h[0], h[1], h[2], h[3]]) as f64 / u32::MAX as f64
        })
        .collect()
}

fn error(id: &Value, code: &str, message: &str) -> Value {
    json!({ "id": id, "ok": false, "error": { "code": code, "message": message } })
}

fn answer(s: &Script, req: &Value) -> Value {
    let id = &req["id"];
    let op = req["op"].as_str().unwrap_or("");
    if req["v"].as_str() != Some(s.protocol.as_str()) {
        return error(id, "version_mismatch", &format!("expected {}", s.protocol));
    }
    if let Some(body) = s.replies.get(op) {
        return json!({ "id": id, "ok": true, "body": body });
    }
    let frames: Vec<&str> = req["payload"]["frames"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    match op {
        "hello" => match &s.fail_hello {
            Some(code) => error(id, code, "scripted failure"),
            None => json!({ "id": id, "ok": true, "body": {
                "version": s.protocol,
                "embedding_dim": s.dim,
                "supports_shot_scores": s.shot_scores,
                "supports_transcribe": s.transcribe,
                "model_ids": ["fake-embedder", "fake-shots"],
            }}),
        },
        "shot_scores" if frames.len() < 2 => error(id, "need_two_frames", "at least two frames"),
        "shot_scores" => {
            let scores: Vec<f64> = frames
                .windows(2)
                .map(|w| if w[0] == w[1] { 0.02 } else { 0.97 })
                .collect();
            json!({ "id": id, "ok": true, "body": { "scores": scores } })
        }
        "embed" if frames.is_empty() => error(id, "no_frames", "at least one frame"),
        "embed" => {
            let vectors: Vec<Vec<f64>> = frames.iter().map(|f| vector_for(f, s.dim)).collect();
            json!({ "id": id, "ok": true, "body": { "vectors": vectors } })
        }
        "transcribe" if s.transcribe => {
            let pcm = req["payload"]["pcm"].as_str().unwrap_or("");
            let lang = req["payload"]["language"].as_str().unwrap_or("auto");
            json!({ "id": id, "ok": true, "body": {
                "text": format!("fake transcript of {} base64 chars", pcm.len()),
                "language": if lang == "auto" { "en" } else { lang },
            }})
        }
        _ => error(id, "unknown_op", op),
    }
}

fn main() -> ExitCode {
    let script = match parse_args() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("vps-fake-sidecar: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut answered = 0usize;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if script.die_after.is_some_and(|n| answered >= n) {
            return ExitCode::from(3);
        }
        if script.hang_after.is_some_and(|n| answered >= n) {
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(req) => answer(&script, &req),
            Err(e) => error(&Value::Null, "bad_frame", &e.to_string()),
        };
        if writeln!(stdout, "{reply}")
            .and_then(|_| stdout.flush())
            .is_err()
        {
            break;
        }
        answered += 1;
    }
    ExitCode::SUCCESS
}
