//! Line-delimited JSON protocol for estimators living in another process.
//!
//! Requests: `{"op":"next_dist","prefix":[...]}`, `{"op":"label_post","prefix":[...]}`
//! and `{"op":"info"}`. Responses: `{"probs":[...]}`,
//! `{"vocab_size":n,"n_labels":k}`, or `{"error":"..."}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{check_prefix, EventDensityEstimator, LabelPosteriorEstimator};
use crate::error::{Error, Result};
use crate::types::EventId;

#[derive(Deserialize)]
struct Request {
    op: String,
    #[serde(default)]
    prefix: Vec<EventId>,
}

/// Answers protocol requests from `reader` until end of input.
pub fn serve_bridge(
    events: &dyn EventDensityEstimator,
    labels: Option<&dyn LabelPosteriorEstimator>,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle(events, labels, &line) {
            Ok(v) => v,
            Err(e) => json!({ "error": e.to_string() }),
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle(events: &dyn EventDensityEstimator, labels: Option<&dyn LabelPosteriorEstimator>, line: &str) -> Result<Value> {
    let req: Request = serde_json::from_str(line)?;
    match req.op.as_str() {
        "info" => Ok(json!({
            "vocab_size": events.vocab_size(),
            "n_labels": labels.map_or(0, |l| l.n_labels()),
        })),
        "next_dist" => Ok(json!({ "probs": events.next_event_dist(&req.prefix)?.into_vec() })),
        "label_post" => {
            let l = labels.ok_or_else(|| Error::Bridge("no label estimator is being served".into()))?;
            Ok(json!({ "probs": l.label_posterior(&req.prefix)? }))
        }
        other => Err(Error::Bridge(format!("unknown op `{other}`"))),
    }
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Client side: forwards every query to a child process.
pub struct BridgeEstimator {
    pipe: Mutex<Pipe>,
    vocab_size: usize,
    n_labels: usize,
}

impl BridgeEstimator {
    /// Spawns `program args...` and asks it for its vocabulary and label count.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut b = BridgeEstimator { pipe: Mutex::new(Pipe { child, stdin, stdout }), vocab_size: 0, n_labels: 0 };
        let info = b.call(&json!({ "op": "info" }))?;
        let get = |k: &str| {
            info.get(k)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Bridge(format!("info reply lacks `{k}`")))
        };
        b.vocab_size = get("vocab_size")?;
        b.n_labels = get("n_labels")?;
        if b.vocab_size == 0 {
            return Err(Error::Bridge("remote estimator reports an empty vocabulary".into()));
        }
        Ok(b)
    }

    fn call(&self, req: &Value) -> Result<Value> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::Bridge("bridge lock poisoned".into()))?;
        serde_json::to_writer(&mut pipe.stdin, req)?;
        pipe.stdin.write_all(b"\n")?;
        pipe.stdin.flush()?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line)? == 0 {
            return Err(Error::Bridge("remote estimator closed its output".into()));
        }
        let v: Value = serde_json::from_str(&line)?;
        if let Some(e) = v.get("error") {
            return Err(Error::Bridge(format!("remote error: {e}")));
        }
        Ok(v)
    }

    fn probs(&self, op: &str, prefix: &[EventId], expect: usize) -> Result<Vec<f64>> {
        let v = self.call(&json!({ "op": op, "prefix": prefix }))?;
        let probs: Vec<f64> = serde_json::from_value(v.get("probs").cloned().unwrap_or(Value::Null))
            .map_err(|_| Error::Bridge(format!("`{op}` reply lacks a probability array")))?;
        if probs.len() != expect {
            return Err(Error::Bridge(format!("`{op}` returned {} values, expected {expect}", probs.len())));
        }
        Ok(probs)
    }
}

impl Drop for BridgeEstimator {
    fn drop(&mut self) {
        if let Ok(p) = self.pipe.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

impl EventDensityEstimator for BridgeEstimator {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn write_next_dist(&self, prefix: &[EventId], out: &mut [f64]) -> Result<()> {
        check_prefix(prefix, self.vocab_size)?;
        let p = self.probs("next_dist", prefix, self.vocab_size)?;
        let total: f64 = p.iter().sum();
        if p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Bridge(format!("remote distribution sums to {total}")));
        }
        out.copy_from_slice(&p);
        Ok(())
    }
}

impl LabelPosteriorEstimator for BridgeEstimator {
    fn n_labels(&self) -> usize {
        self.n_labels
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn label_posterior(&self, prefix: &[EventId]) -> Result<Vec<f64>> {
        check_prefix(prefix, self.vocab_size)?;
        self.probs("label_post", prefix, self.n_labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ExactOracle;
    use crate::scm::ScmSpec;
    use std::sync::Arc;

    #[test]
    fn server_answers_requests() {
        let o = ExactOracle::new(Arc::new(ScmSpec::zeros(2, 1).unwrap()));
        let input = b"{\"op\":\"info\"}\n\n{\"op\":\"next_dist\",\"prefix\":[2,1]}\n{\"op\":\"label_post\",\"prefix\":[2]}\n{\"op\":\"next_dist\",\"prefix\":[0]}\n";
        let mut out = Vec::new();
        serve_bridge(&o, None, &input[..], &mut out).unwrap();
        let lines: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0]["vocab_size"], 2);
        assert_eq!(lines[1]["probs"], json!([0.5, 0.5]));
        assert!(lines[2].get("error").is_some());
        assert!(lines[3].get("error").is_some());
    }
}
