//! Natural-language summaries of attributions and metric tables through a
//! chat-completion HTTP API, with a deterministic offline fallback.
//!
//! Prompts are rendered from template files with `{{placeholder}}` slots. A
//! template has a `[system]` section and a `[user]` section.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::explainers::Attribution;
use crate::metrics::{Direction, MetricTable};

pub const DEFAULT_ATTRIBUTION_TEMPLATE: &str = include_str!("../../templates/attribution.txt");
pub const DEFAULT_METRICS_TEMPLATE: &str = include_str!("../../templates/metrics.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Use the template fallback when the API fails.
    pub fallback: bool,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    /// Directory with `<template id>.txt` files overriding the built-ins.
    pub template_dir: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "ATTRBENCH_LLM_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 30,
            fallback: true,
            max_retries: 2,
            retry_backoff_ms: 250,
            max_in_flight: 2,
            template_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Attribution {
        attribution: Attribution,
        text: String,
        predicted_label: String,
    },
    Metrics {
        table: MetricTable,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizationRequest {
    #[serde(flatten)]
    pub payload: Payload,
    /// Template id; defaults to `attribution` or `metrics`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

impl VerbalizationRequest {
    pub fn attribution(
        attribution: Attribution,
        text: impl Into<String>,
        predicted_label: impl Into<String>,
    ) -> Self {
        Self {
            payload: Payload::Attribution {
                attribution,
                text: text.into(),
                predicted_label: predicted_label.into(),
            },
            template: None,
        }
    }

    pub fn metrics(table: MetricTable) -> Self {
        Self {
            payload: Payload::Metrics { table },
            template: None,
        }
    }

    fn template_id(&self) -> &str {
        match (&self.template, &self.payload) {
            (Some(t), _) => t,
            (None, Payload::Attribution { .. }) => "attribution",
            (None, Payload::Metrics { .. }) => "metrics",
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.payload {
            Payload::Attribution { attribution, .. } => {
                attribution.validate()?;
                if attribution.is_empty() {
                    return Err(Error::Validation("attribution has no tokens".into()));
                }
            }
            Payload::Metrics { table } => {
                let any_value = table
                    .cells
                    .values()
                    .flat_map(|row| row.values())
                    .any(|c| c.value.is_some());
                if table.methods.is_empty() || table.metrics.is_empty() || !any_value {
                    return Err(Error::Validation("metric table is empty".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verbalization {
    pub text: String,
    pub fallback: bool,
    pub prompt: Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// `token: score` lines exactly as they appear in prompts.
pub fn score_lines(attribution: &Attribution) -> Vec<String> {
    attribution
        .token_texts
        .iter()
        .zip(&attribution.scores)
        .map(|(t, s)| format!("{t}: {s:+.4}"))
        .collect()
}

fn direction_words(d: Direction) -> &'static str {
    match d {
        Direction::LowerBetter => "lower is better",
        Direction::HigherBetter => "higher is better",
    }
}

/// Table cells as prompt lines, best cells starred.
pub fn table_lines(table: &MetricTable) -> Vec<String> {
    let mut lines = Vec::new();
    for method in &table.methods {
        for metric in &table.metrics {
            let Some(cell) = table.get(*method, *metric) else {
                continue;
            };
            let value = cell
                .value
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let star = if cell.best { " *" } else { "" };
            lines.push(format!(
                "{method}, {metric} {}, {value}{star}",
                metric.direction().arrow()
            ));
        }
    }
    lines
}

fn load_template(config: &LlmConfig, id: &str) -> Result<String> {
    if let Some(dir) = &config.template_dir {
        let path = dir.join(format!("{id}.txt"));
        if path.exists() {
            return Ok(std::fs::read_to_string(path)?);
        }
    }
    match id {
        "attribution" => Ok(DEFAULT_ATTRIBUTION_TEMPLATE.to_string()),
        "metrics" => Ok(DEFAULT_METRICS_TEMPLATE.to_string()),
        other => Err(Error::Config(format!("unknown prompt template {other:?}"))),
    }
}

/// Single pass, so slot values containing `{{...}}` are left alone.
fn fill(template: &str, slots: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match slots.iter().find(|(n, _)| *n == name) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn split_sections(template: &str) -> Result<Prompt> {
    let body = template
        .trim_start()
        .strip_prefix("[system]")
        .ok_or_else(|| Error::Config("template must start with a [system] section".into()))?;
    let (system, user) = body
        .split_once("[user]")
        .ok_or_else(|| Error::Config("template lacks a [user] section".into()))?;
    Ok(Prompt {
        system: system.trim().to_string(),
        user: user.trim().to_string(),
    })
}

/// Renders the system and user prompt for a request.
pub fn render_prompt(request: &VerbalizationRequest, config: &LlmConfig) -> Result<Prompt> {
    request.validate()?;
    let template = load_template(config, request.template_id())?;
    let slots = match &request.payload {
        Payload::Attribution {
            attribution,
            text,
            predicted_label,
        } => vec![
            ("text", text.clone()),
            ("predicted_label", predicted_label.clone()),
            ("method", attribution.method.to_string()),
            ("scores", score_lines(attribution).join("\n")),
        ],
        Payload::Metrics { table } => {
            let definitions = table
                .metrics
                .iter()
                .map(|m| {
                    format!(
                        "{m} {} ({}): {}",
                        m.direction().arrow(),
                        direction_words(m.direction()),
                        m.definition()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            vec![
                ("definitions", definitions),
                ("table", table_lines(table).join("\n")),
            ]
        }
    };
    let prompt = split_sections(&template)?;
    Ok(Prompt {
        system: fill(&prompt.system, &slots),
        user: fill(&prompt.user, &slots),
    })
}

/// Deterministic summary built without any network call.
pub fn template_fallback(request: &VerbalizationRequest) -> Result<String> {
    request.validate()?;
    match &request.payload {
        Payload::Attribution {
            attribution,
            predicted_label,
            ..
        } => {
            let idx: Vec<usize> = (0..attribution.len()).collect();
            let mut pos: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|i| attribution.scores[*i] > 0.0)
                .collect();
            let mut neg: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|i| attribution.scores[*i] < 0.0)
                .collect();
            // stable sorts keep the lower index first among ties
            pos.sort_by(|a, b| attribution.scores[*b].total_cmp(&attribution.scores[*a]));
            neg.sort_by(|a, b| attribution.scores[*a].total_cmp(&attribution.scores[*b]));
            let list = |items: &[usize]| {
                if items.is_empty() {
                    "none".to_string()
                } else {
                    items
                        .iter()
                        .take(3)
                        .map(|i| {
                            format!(
                                "\"{}\" ({:+.4})",
                                attribution.token_texts[*i], attribution.scores[*i]
                            )
                        })
                        .collect::<Vec<_>>()
                        .join(", ")
                }
            };
            Ok(format!(
                "According to {}, the tokens pushing most toward \"{predicted_label}\" are {}. The tokens pushing most against it are {}.",
                attribution.method,
                list(&pos),
                list(&neg)
            ))
        }
        Payload::Metrics { table } => {
            let mut out = String::new();
            for metric in &table.metrics {
                if !out.is_empty() {
                    out.push(' ');
                }
                match table.best.get(metric) {
                    Some(winners) if !winners.is_empty() => {
                        let value = table
                            .get(winners[0], *metric)
                            .and_then(|c| c.value)
                            .expect("best cells have values");
                        let names = winners
                            .iter()
                            .map(|m| m.to_string())
                            .collect::<Vec<_>>()
                            .join(" and ");
                        let _ = write!(
                            out,
                            "On {metric} ({}), the best {} {names} with {value:.4}.",
                            direction_words(metric.direction()),
                            if winners.len() == 1 {
                                "method is"
                            } else {
                                "methods are"
                            },
                        );
                    }
                    _ => {
                        let _ = write!(out, "On {metric}, no method produced a value.");
                    }
                }
            }
            Ok(out)
        }
    }
}

fn is_transient(err: &Error) -> bool {
    match err {
        Error::Timeout => true,
        Error::Api { status, .. } => *status == 0 || *status == 429 || *status >= 500,
        _ => false,
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(500).collect()
}

fn chat_completion(prompt: &Prompt, config: &LlmConfig, api_key: &str) -> Result<String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(config.timeout_secs))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let body = json!({
        "model": config.model,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    });
    let resp = client
        .post(&config.endpoint)
        .bearer_auth(api_key)
        .json(&body)
        .send()
        .map_err(|e| {
            if e.is_timeout() {
                Error::Timeout
            } else {
                Error::Api {
                    status: 0,
                    body: excerpt(&e.to_string()),
                }
            }
        })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            Error::Timeout
        } else {
            Error::Api {
                status: status.as_u16(),
                body: excerpt(&e.to_string()),
            }
        }
    })?;
    if !status.is_success() {
        return Err(Error::Api {
            status: status.as_u16(),
            body: excerpt(&text),
        });
    }
    let parsed: Value = serde_json::from_str(&text).map_err(|_| Error::Api {
        status: status.as_u16(),
        body: excerpt(&text),
    })?;
    parsed["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Api {
            status: status.as_u16(),
            body: excerpt(&text),
        })
}

/// Verbalizes one request: API call with retries, template fallback on
/// failure when enabled.
pub fn verbalize(request: &VerbalizationRequest, config: &LlmConfig) -> Result<Verbalization> {
    let prompt = render_prompt(request, config)?;
    let api_key = std::env::var(&config.api_key_env).map_err(|_| {
        Error::Config(format!(
            "environment variable {} with the API key is not set",
            config.api_key_env
        ))
    })?;
    let mut attempt = 0;
    let outcome = loop {
        match chat_completion(&prompt, config, &api_key) {
            Err(e) if is_transient(&e) && attempt < config.max_retries => {
                std::thread::sleep(Duration::from_millis(config.retry_backoff_ms << attempt));
                attempt += 1;
            }
            other => break other,
        }
    };
    match outcome {
        Ok(text) => Ok(Verbalization {
            text,
            fallback: false,
            prompt,
        }),
        Err(Error::Api { .. } | Error::Timeout) if config.fallback => Ok(Verbalization {
            text: template_fallback(request)?,
            fallback: true,
            prompt,
        }),
        Err(e) => Err(e),
    }
}

pub fn verbalize_attribution(
    request: &VerbalizationRequest,
    config: &LlmConfig,
) -> Result<Verbalization> {
    match request.payload {
        Payload::Attribution { .. } => verbalize(request, config),
        Payload::Metrics { .. } => Err(Error::Validation("expected an attribution request".into())),
    }
}

pub fn verbalize_metrics(table: &MetricTable, config: &LlmConfig) -> Result<Verbalization> {
    verbalize(&VerbalizationRequest::metrics(table.clone()), config)
}

/// Runs independent requests with at most `max_in_flight` at a time; results
/// keep the input order.
pub fn verbalize_many(
    requests: &[VerbalizationRequest],
    config: &LlmConfig,
) -> Vec<Result<Verbalization>> {
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| requests.par_iter().map(|r| verbalize(r, config)).collect()),
        Err(e) => requests
            .iter()
            .map(|_| Err(Error::Config(format!("cannot start request pool: {e}"))))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::Method;
    use crate::metrics::{aggregate, Metric, MetricResult, Scope};

    fn movie_request() -> VerbalizationRequest {
        let attr = Attribution::new(
            "x",
            Method::PartitionShap,
            1,
            vec![0.9, -0.8, 0.0],
            vec!["movie".into(), "not".into(), "a".into()],
        );
        VerbalizationRequest::attribution(attr, "movie not a", "positive")
    }

    #[test]
    fn fallback_orders_tokens() {
        let text = template_fallback(&movie_request()).unwrap();
        assert!(text.contains("toward \"positive\" are \"movie\" (+0.9000)"));
        assert!(text.contains("against it are \"not\" (-0.8000)"));
        assert_eq!(text, template_fallback(&movie_request()).unwrap());
    }

    #[test]
    fn fallback_ties_keep_lower_index_first() {
        let attr = Attribution::new(
            "x",
            Method::Lime,
            0,
            vec![0.5, 0.5, 0.5],
            vec!["b".into(), "a".into(), "c".into()],
        );
        let text =
            template_fallback(&VerbalizationRequest::attribution(attr, "b a c", "neg")).unwrap();
        assert!(text.contains("\"b\" (+0.5000), \"a\" (+0.5000), \"c\" (+0.5000)"));
    }

    #[test]
    fn prompt_embeds_pairs_and_constraint() {
        let req = movie_request();
        let prompt = render_prompt(&req, &LlmConfig::default()).unwrap();
        for line in ["movie: +0.9000", "not: -0.8000", "a: +0.0000"] {
            assert!(prompt.user.contains(line), "{line}");
        }
        assert!(prompt.system.contains("Do not speculate"));
        assert!(!prompt.user.contains("{{"));
    }

    #[test]
    fn metrics_fallback_one_sentence_per_metric() {
        let r = |m, v| MetricResult::new(m, v, Scope::Instance);
        let table = aggregate(
            &[Method::Lime],
            &[Metric::Complexity],
            &[(Method::Lime, r(Metric::Complexity, 0.25))],
        )
        .unwrap();
        let text = template_fallback(&VerbalizationRequest::metrics(table)).unwrap();
        assert_eq!(
            text,
            "On complexity (lower is better), the best method is lime with 0.2500."
        );
    }

    #[test]
    fn empty_table_is_a_validation_error() {
        let table = aggregate(&[], &[], &[]).unwrap();
        assert!(matches!(
            template_fallback(&VerbalizationRequest::metrics(table.clone())),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            verbalize_metrics(&table, &LlmConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn missing_key_fails_before_network() {
        let config = LlmConfig {
            api_key_env: "ATTRBENCH_TEST_KEY_THAT_IS_NEVER_SET".into(),
            endpoint: "http://127.0.0.1:9/unreachable".into(),
            ..LlmConfig::default()
        };
        assert!(matches!(
            verbalize(&movie_request(), &config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn placeholders_in_values_are_not_expanded() {
        let out = fill(
            "{{a}} and {{b}} and {{c}}",
            &[("a", "{{b}}".into()), ("b", "x".into())],
        );
        assert_eq!(out, "{{b}} and x and {{c}}");
    }

    #[test]
    fn template_override_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("attribution.txt"),
            "[system]\nbe brief\n[user]\n{{method}} on {{text}}",
        )
        .unwrap();
        let config = LlmConfig {
            template_dir: Some(dir.path().to_path_buf()),
            ..LlmConfig::default()
        };
        let p = render_prompt(&movie_request(), &config).unwrap();
        assert_eq!(p.system, "be brief");
        assert_eq!(p.user, "partition_shap on movie not a");
    }
}
