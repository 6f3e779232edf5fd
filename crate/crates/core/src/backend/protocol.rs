//! Newline-delimited JSON wire protocol between the engine and out-of-process
//! model servers.
//!
//! Request `{"id", "op", "params"}`, response `{"id", "result"}` or
//! `{"id", "error": {"code", "message"}}`. Matrices are nested row-major arrays.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendInfo, Baseline, Capability, EmbeddingMatrix, ModelBackend, NativeMethod,
    ProbabilityVector, TokenSequence,
};
use crate::error::{Error, Result};

pub mod codes {
    pub const BAD_REQUEST: &str = "BAD_REQUEST";
    pub const CAPABILITY_MISSING: &str = "CAPABILITY_MISSING";
    pub const EMPTY_INPUT: &str = "EMPTY_INPUT";
    pub const SEQUENCE_TOO_LONG: &str = "SEQUENCE_TOO_LONG";
    pub const INTERNAL: &str = "INTERNAL";
}

pub const OPS: [&str; 7] = [
    "info",
    "tokenize",
    "predict",
    "embed",
    "predict_embeds",
    "grad_embeds",
    "native_attribution",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn ok(id: u64, result: Value) -> Self {
        Self {
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: u64, code: &str, message: impl Into<String>) -> Self {
        Self {
            id,
            result: None,
            error: Some(ErrorBody {
                code: code.to_string(),
                message: message.into(),
            }),
        }
    }

    /// Converts a wire response back into a local result.
    pub fn into_result(self) -> Result<Value> {
        match (self.result, self.error) {
            (_, Some(e)) => Err(error_from_wire(&e.code, e.message)),
            (Some(v), None) => Ok(v),
            (None, None) => Err(Error::Remote {
                code: codes::INTERNAL.into(),
                message: "response has neither result nor error".into(),
            }),
        }
    }
}

pub fn error_code(err: &Error) -> &'static str {
    match err {
        Error::CapabilityMissing(_) => codes::CAPABILITY_MISSING,
        Error::EmptyInput => codes::EMPTY_INPUT,
        Error::SequenceTooLong { .. } => codes::SEQUENCE_TOO_LONG,
        Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::LabelOutOfRange { .. }
        | Error::Json(_) => codes::BAD_REQUEST,
        _ => codes::INTERNAL,
    }
}

pub fn error_from_wire(code: &str, message: String) -> Error {
    match code {
        codes::CAPABILITY_MISSING => Error::CapabilityMissing(message),
        codes::EMPTY_INPUT => Error::EmptyInput,
        _ => Error::Remote {
            code: code.to_string(),
            message,
        },
    }
}

#[derive(Deserialize)]
struct TokenizeParams {
    text: String,
}

#[derive(Deserialize)]
struct PredictParams {
    batch: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
struct IdsParams {
    ids: Vec<u32>,
}

#[derive(Deserialize)]
struct RowsParams {
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct GradParams {
    rows: Vec<Vec<f64>>,
    target: usize,
}

#[derive(Deserialize)]
struct NativeParams {
    method: NativeMethod,
    ids: Vec<u32>,
    target: usize,
    #[serde(default)]
    baseline: Option<Baseline>,
}

/// Sequence rebuilt from ids alone; servers only need ids to run the model.
pub fn sequence_from_ids(ids: &[u32]) -> TokenSequence {
    TokenSequence {
        tokens: ids.iter().map(u32::to_string).collect(),
        ids: ids.to_vec(),
        word_map: (0..ids.len()).map(Some).collect(),
        text: String::new(),
    }
}

pub fn matrix_to_nested(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn params<T: for<'de> Deserialize<'de>>(value: &Value) -> Result<T> {
    Ok(serde_json::from_value(value.clone())?)
}

fn check_len(backend: &dyn ModelBackend, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    match backend.info().max_length {
        Some(max) if n > max => Err(Error::SequenceTooLong { len: n, max }),
        _ => Ok(()),
    }
}

fn dispatch(backend: &dyn ModelBackend, req: &Request) -> Result<Value> {
    let info = backend.info();
    match req.op.as_str() {
        "info" => Ok(serde_json::to_value(info)?),
        "tokenize" => {
            let p: TokenizeParams = params(&req.params)?;
            let seq = backend.tokenize(&p.text)?;
            check_len(backend, seq.len())?;
            Ok(serde_json::to_value(seq)?)
        }
        "predict" => {
            let p: PredictParams = params(&req.params)?;
            if p.batch.is_empty() {
                return Err(Error::InvalidInput("empty batch".into()));
            }
            for ids in &p.batch {
                check_len(backend, ids.len())?;
            }
            let seqs: Vec<TokenSequence> =
                p.batch.iter().map(|ids| sequence_from_ids(ids)).collect();
            let probs: Vec<ProbabilityVector> = backend.predict(&seqs)?;
            Ok(json!({ "probs": probs }))
        }
        "embed" => {
            info.require(Capability::Embeddings)?;
            let p: IdsParams = params(&req.params)?;
            check_len(backend, p.ids.len())?;
            let rows = backend.embed(&sequence_from_ids(&p.ids))?;
            Ok(json!({ "rows": rows.to_nested() }))
        }
        "predict_embeds" => {
            info.require(Capability::Embeddings)?;
            let p: RowsParams = params(&req.params)?;
            check_len(backend, p.rows.len())?;
            let rows = EmbeddingMatrix::from_nested(&p.rows)?;
            let logits = backend.logits_from_embeddings(&rows)?;
            let probs = ProbabilityVector::from_logits(&logits);
            Ok(json!({ "probs": probs, "logits": logits }))
        }
        "grad_embeds" => {
            info.require(Capability::Gradients)?;
            let p: GradParams = params(&req.params)?;
            check_len(backend, p.rows.len())?;
            let rows = EmbeddingMatrix::from_nested(&p.rows)?;
            let grad = backend.gradient_wrt_embeddings(&rows, p.target)?;
            Ok(json!({ "grad": matrix_to_nested(&grad) }))
        }
        "native_attribution" => {
            info.require(Capability::NativeAttribution)?;
            let p: NativeParams = params(&req.params)?;
            if !info.native_methods.contains(&p.method) {
                return Err(Error::CapabilityMissing(format!(
                    "native_attribution:{}",
                    p.method.as_str()
                )));
            }
            check_len(backend, p.ids.len())?;
            let baseline = p.baseline.unwrap_or_else(|| info.default_baseline());
            let scores = backend.native_attribution(
                p.method,
                &sequence_from_ids(&p.ids),
                p.target,
                baseline,
            )?;
            Ok(json!({ "scores": scores }))
        }
        other => Err(Error::InvalidInput(format!(
            "unknown op {other:?}; expected one of {}",
            OPS.join(", ")
        ))),
    }
}

/// Answers one request; never fails, errors become error responses.
pub fn handle(backend: &dyn ModelBackend, req: &Request) -> Response {
    match dispatch(backend, req) {
        Ok(v) => Response::ok(req.id, v),
        Err(e) => Response::err(req.id, error_code(&e), e.to_string()),
    }
}

/// Answers one raw request line.
pub fn handle_line(backend: &dyn ModelBackend, line: &str) -> Response {
    match serde_json::from_str::<Request>(line) {
        Ok(req) => handle(backend, &req),
        Err(e) => {
            let id = serde_json::from_str::<Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(Value::as_u64))
                .unwrap_or(0);
            Response::err(id, codes::BAD_REQUEST, format!("malformed request: {e}"))
        }
    }
}

/// Request loop over any line stream; returns at end of input.
pub fn serve<R: BufRead, W: Write>(
    backend: &dyn ModelBackend,
    input: R,
    mut output: W,
) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(backend, &line);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// Wraps a backend and advertises only a subset of its capabilities, hiding
/// the reference internals. Useful for exercising capability checks.
pub struct RestrictedBackend<B> {
    inner: B,
    info: BackendInfo,
}

impl<B: ModelBackend> RestrictedBackend<B> {
    pub fn new(inner: B, capabilities: BTreeSet<Capability>) -> Self {
        let mut info = inner.info().clone();
        info.capabilities = capabilities;
        if !info.has(Capability::NativeAttribution) {
            info.native_methods.clear();
        }
        Self { inner, info }
    }
}

impl<B: ModelBackend> ModelBackend for RestrictedBackend<B> {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.inner.tokenize(text)
    }

    fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>> {
        self.inner.predict(batch)
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        self.info.require(Capability::Embeddings)?;
        self.inner.embed(seq)
    }

    fn logits_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
        self.info.require(Capability::Embeddings)?;
        self.inner.logits_from_embeddings(rows)
    }

    fn gradient_wrt_embeddings(
        &self,
        rows: &EmbeddingMatrix,
        target: usize,
    ) -> Result<Array2<f64>> {
        self.info.require(Capability::Gradients)?;
        self.inner.gradient_wrt_embeddings(rows, target)
    }

    fn native_attribution(
        &self,
        method: NativeMethod,
        seq: &TokenSequence,
        target: usize,
        baseline: Baseline,
    ) -> Result<Vec<f64>> {
        self.info.require(Capability::NativeAttribution)?;
        self.inner.native_attribution(method, seq, target, baseline)
    }
}
