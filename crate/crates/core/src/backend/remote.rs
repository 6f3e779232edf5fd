//! Client side of the wire protocol, over a child process's stdio or HTTP.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::Deserialize;
use serde_json::{json, Value};

use super::protocol::{Request, Response};
use super::{
    BackendInfo, Baseline, EmbeddingMatrix, ModelBackend, NativeMethod, ProbabilityVector,
    TokenSequence,
};
use crate::error::{Error, Result};

enum Transport {
    Stdio {
        child: Child,
        stdin: Option<ChildStdin>,
        stdout: BufReader<ChildStdout>,
    },
    Http {
        client: reqwest::blocking::Client,
        endpoint: String,
    },
}

/// A model served by another process. Requests on one connection are
/// serialized; the capability set is fetched once at connect time.
pub struct RemoteBackend {
    transport: Mutex<Transport>,
    next_id: AtomicU64,
    info: BackendInfo,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("info", &self.info)
            .finish()
    }
}

fn unavailable(e: impl std::fmt::Display) -> Error {
    Error::BackendUnavailable(e.to_string())
}

impl RemoteBackend {
    /// Launches `command[0]` with the remaining arguments and talks to it over
    /// its standard streams.
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Self::handshake(Transport::Stdio {
            child,
            stdin: Some(stdin),
            stdout,
        })
    }

    /// Connects to a server accepting one request per HTTP POST.
    pub fn connect_http(endpoint: &str, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(unavailable)?;
        Self::handshake(Transport::Http {
            client,
            endpoint: endpoint.to_string(),
        })
    }

    fn handshake(transport: Transport) -> Result<Self> {
        let mut backend = Self {
            transport: Mutex::new(transport),
            next_id: AtomicU64::new(1),
            info: BackendInfo {
                n_classes: 1,
                label_names: vec![String::new()],
                mask_token_id: None,
                capabilities: Default::default(),
                native_methods: Default::default(),
                max_length: None,
            },
        };
        let info: BackendInfo = serde_json::from_value(backend.call("info", json!({}))?)
            .map_err(|e| unavailable(format!("malformed info response: {e}")))?;
        info.validate()?;
        backend.info = info;
        Ok(backend)
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, op: &str, params: Value) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = Request {
            id,
            op: op.to_string(),
            params,
        };
        let mut transport = self
            .transport
            .lock()
            .map_err(|_| unavailable("connection poisoned"))?;
        let response: Response = match &mut *transport {
            Transport::Stdio { stdin, stdout, .. } => {
                let stdin = stdin
                    .as_mut()
                    .ok_or_else(|| unavailable("connection closed"))?;
                let mut line = serde_json::to_string(&request)?;
                line.push('\n');
                stdin.write_all(line.as_bytes()).map_err(unavailable)?;
                stdin.flush().map_err(unavailable)?;
                let mut buf = String::new();
                if stdout.read_line(&mut buf).map_err(unavailable)? == 0 {
                    return Err(unavailable("backend closed its output"));
                }
                serde_json::from_str(&buf)
                    .map_err(|e| unavailable(format!("malformed response: {e}")))?
            }
            Transport::Http { client, endpoint } => {
                let resp = client
                    .post(endpoint.as_str())
                    .json(&request)
                    .send()
                    .map_err(|e| {
                        if e.is_timeout() {
                            Error::Timeout
                        } else {
                            unavailable(e)
                        }
                    })?;
                resp.json()
                    .map_err(|e| unavailable(format!("malformed response: {e}")))?
            }
        };
        if response.id != id {
            return Err(unavailable(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        response.into_result()
    }

    fn call_as<T: for<'de> Deserialize<'de>>(
        &self,
        op: &str,
        params: Value,
        field: &str,
    ) -> Result<T> {
        let mut v = self.call(op, params)?;
        let inner = v
            .get_mut(field)
            .map(Value::take)
            .ok_or_else(|| unavailable(format!("{op} response lacks {field:?}")))?;
        serde_json::from_value(inner).map_err(|e| unavailable(format!("{op}: {e}")))
    }
}

fn finite_rows(rows: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    if rows.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("embedding rows must be finite".into()));
    }
    Ok(rows.to_nested())
}

impl ModelBackend for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let v = self.call("tokenize", json!({ "text": text }))?;
        let seq: TokenSequence =
            serde_json::from_value(v).map_err(|e| unavailable(format!("tokenize: {e}")))?;
        TokenSequence::new(seq.tokens, seq.ids, seq.word_map, seq.text)
    }

    fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>> {
        let ids: Vec<&[u32]> = batch.iter().map(|s| s.ids.as_slice()).collect();
        let probs: Vec<Vec<f64>> = self.call_as("predict", json!({ "batch": ids }), "probs")?;
        if probs.len() != batch.len() {
            return Err(unavailable(format!(
                "predict returned {} rows for a batch of {}",
                probs.len(),
                batch.len()
            )));
        }
        probs.into_iter().map(ProbabilityVector::new).collect()
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        let rows: Vec<Vec<f64>> = self.call_as("embed", json!({ "ids": seq.ids }), "rows")?;
        EmbeddingMatrix::from_nested(&rows)
    }

    fn logits_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
        self.call_as(
            "predict_embeds",
            json!({ "rows": finite_rows(rows)? }),
            "logits",
        )
    }

    fn gradient_wrt_embeddings(
        &self,
        rows: &EmbeddingMatrix,
        target: usize,
    ) -> Result<Array2<f64>> {
        let grad: Vec<Vec<f64>> = self.call_as(
            "grad_embeds",
            json!({ "rows": finite_rows(rows)?, "target": target }),
            "grad",
        )?;
        let grad = EmbeddingMatrix::from_nested(&grad)?.0;
        if grad.dim() != rows.0.dim() {
            return Err(Error::DimensionMismatch {
                expected: rows.0.len(),
                got: grad.len(),
            });
        }
        Ok(grad)
    }

    fn native_attribution(
        &self,
        method: NativeMethod,
        seq: &TokenSequence,
        target: usize,
        baseline: Baseline,
    ) -> Result<Vec<f64>> {
        self.call_as(
            "native_attribution",
            json!({
                "method": method,
                "ids": seq.ids,
                "target": target,
                "baseline": baseline,
            }),
            "scores",
        )
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        let Ok(transport) = self.transport.get_mut() else {
            return;
        };
        if let Transport::Stdio { child, stdin, .. } = transport {
            // closing stdin asks the server to exit
            drop(stdin.take());
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
