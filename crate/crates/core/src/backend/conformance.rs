//! Shared protocol test vectors and a runner that checks any server against
//! them, given a function that sends one line and returns the reply line.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::{json, Value};

use super::Capability;
use crate::error::{Error, Result};

pub const VECTORS: &str = include_str!("../../testdata/protocol_vectors.json");

#[derive(Debug, Clone, Deserialize)]
struct VectorFile {
    cases: Vec<Case>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Case {
    pub name: String,
    /// Capabilities the server must be started with; `None` means all.
    #[serde(default)]
    pub capabilities: Option<BTreeSet<Capability>>,
    #[serde(default)]
    setup: Option<Setup>,
    #[serde(default)]
    request: Option<Value>,
    #[serde(default)]
    raw: Option<String>,
    expect: Expect,
}

#[derive(Debug, Clone, Deserialize)]
struct Setup {
    embed_ids: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
struct Expect {
    #[serde(default)]
    result: Option<BTreeMap<String, Shape>>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    id: Option<u64>,
    #[serde(default)]
    same_len: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct Shape {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    len: Option<usize>,
    #[serde(default)]
    items: Option<Box<Shape>>,
}

pub fn load_vectors() -> Result<Vec<Case>> {
    Ok(serde_json::from_str::<VectorFile>(VECTORS)?.cases)
}

fn check_shape(path: &str, v: &Value, shape: &Shape) -> std::result::Result<(), String> {
    let ok = match shape.kind.as_str() {
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        "string" => v.is_string(),
        "bool" => v.is_boolean(),
        "object" => v.is_object(),
        "array" => v.is_array(),
        other => return Err(format!("{path}: unknown shape type {other:?}")),
    };
    if !ok {
        return Err(format!("{path}: expected {}, got {v}", shape.kind));
    }
    if let Some(items) = v.as_array() {
        if let Some(n) = shape.len {
            if items.len() != n {
                return Err(format!("{path}: expected length {n}, got {}", items.len()));
            }
        }
        if let Some(item_shape) = &shape.items {
            for (i, item) in items.iter().enumerate() {
                check_shape(&format!("{path}[{i}]"), item, item_shape)?;
            }
        }
    }
    Ok(())
}

impl Case {
    /// Runs the case; `Err` carries a human-readable reason.
    pub fn run(
        &self,
        send: &mut dyn FnMut(&str) -> Result<String>,
    ) -> std::result::Result<(), String> {
        let fail = |e: Error| format!("{}: {e}", self.name);
        let line = match (&self.raw, &self.request) {
            (Some(raw), _) => raw.clone(),
            (None, Some(request)) => {
                let mut request = request.clone();
                if let Some(setup) = &self.setup {
                    let reply = send(
                        &json!({"id": 900_000, "op": "embed", "params": {"ids": setup.embed_ids}})
                            .to_string(),
                    )
                    .map_err(fail)?;
                    let reply: Value = serde_json::from_str(&reply).map_err(|e| fail(e.into()))?;
                    let rows = reply
                        .pointer("/result/rows")
                        .cloned()
                        .ok_or_else(|| format!("{}: setup embed failed: {reply}", self.name))?;
                    request["params"]["rows"] = rows;
                }
                request.to_string()
            }
            (None, None) => return Err(format!("{}: case has neither request nor raw", self.name)),
        };
        let reply = send(&line).map_err(fail)?;
        let reply: Value = serde_json::from_str(&reply)
            .map_err(|e| format!("{}: reply is not JSON: {e}", self.name))?;

        let want_id = self
            .expect
            .id
            .or_else(|| self.request.as_ref().and_then(|r| r["id"].as_u64()));
        if let Some(id) = want_id {
            if reply["id"].as_u64() != Some(id) {
                return Err(format!(
                    "{}: expected id {id}, got {}",
                    self.name, reply["id"]
                ));
            }
        }
        match (&self.expect.error, &self.expect.result) {
            (Some(code), _) => {
                let got = reply.pointer("/error/code").and_then(Value::as_str);
                if got != Some(code.as_str()) {
                    return Err(format!("{}: expected error {code}, got {reply}", self.name));
                }
                if reply.get("result").is_some_and(|r| !r.is_null()) {
                    return Err(format!("{}: error reply also carries a result", self.name));
                }
            }
            (None, Some(fields)) => {
                let result = reply
                    .get("result")
                    .filter(|r| r.is_object())
                    .ok_or_else(|| format!("{}: expected a result, got {reply}", self.name))?;
                for (key, shape) in fields {
                    let v = result
                        .get(key)
                        .ok_or_else(|| format!("{}: result lacks {key}", self.name))?;
                    check_shape(&format!("{}.{key}", self.name), v, shape)?;
                }
                let lens: Vec<Option<usize>> = self
                    .expect
                    .same_len
                    .iter()
                    .map(|k| result.get(k).and_then(Value::as_array).map(Vec::len))
                    .collect();
                if lens.iter().any(Option::is_none) || lens.windows(2).any(|w| w[0] != w[1]) {
                    return Err(format!(
                        "{}: fields {:?} should be arrays of equal length, got {lens:?}",
                        self.name, self.expect.same_len
                    ));
                }
            }
            (None, None) => return Err(format!("{}: case expects nothing", self.name)),
        }
        Ok(())
    }
}
