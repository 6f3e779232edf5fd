//! Benchmark configuration: one JSON file, with command-line flags applied on
//! top by the caller.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{FitOptions, ModelBackend, RemoteBackend};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::explainers::{ExplainerParams, Method};
use crate::metrics::{Metric, PlausibilityParams, SoftParams, SweepParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Built-in classifier, trained on the benchmark dataset before the run.
    Reference {
        #[serde(default)]
        fit: FitOptions,
    },
    /// Out-of-process model speaking the wire protocol.
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Reference {
            fit: FitOptions::default(),
        }
    }
}

impl BackendSpec {
    /// Builds the backend; the reference model is fitted on `dataset`.
    pub fn build(&self, dataset: &Dataset) -> Result<Box<dyn ModelBackend>> {
        match self {
            BackendSpec::Reference { fit } => {
                Ok(Box::new(crate::backend::fit_reference(dataset, *fit)?))
            }
            BackendSpec::Remote {
                command,
                endpoint,
                timeout_secs,
            } => {
                let backend = match (command, endpoint) {
                    (Some(cmd), None) => RemoteBackend::spawn(cmd)?,
                    (None, Some(url)) => {
                        RemoteBackend::connect_http(url, Duration::from_secs(*timeout_secs))?
                    }
                    _ => {
                        return Err(Error::Config(
                            "remote backend needs exactly one of command or endpoint".into(),
                        ))
                    }
                };
                Ok(Box::new(backend))
            }
        }
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("bench_out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub backend: BackendSpec,
    pub dataset: PathBuf,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub explainer: ExplainerParams,
    #[serde(default)]
    pub soft: SoftParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub plausibility: PlausibilityParams,
    #[serde(default)]
    pub seed: u64,
    /// Not echoed into the report, so reports do not depend on where they
    /// were written.
    #[serde(default = "default_output", skip_serializing)]
    pub output_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            backend: BackendSpec::default(),
            dataset: dataset.into(),
            methods: all_methods(),
            metrics: all_metrics(),
            explainer: ExplainerParams::default(),
            soft: SoftParams::default(),
            sweep: SweepParams::default(),
            plausibility: PlausibilityParams::default(),
            seed: 0,
            output_dir: default_output(),
            workers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad benchmark config: {e}")))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that do not need the dataset or the model.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut metrics = self.metrics.clone();
        metrics.sort();
        metrics.dedup();
        if methods.len() != self.methods.len() || metrics.len() != self.metrics.len() {
            return Err(Error::Config("methods and metrics must not repeat".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.soft.samples == 0 {
            return Err(Error::Config("soft.samples must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = BenchmarkConfig::from_json(r#"{"dataset": "d.jsonl"}"#).unwrap();
        assert_eq!(c.methods.len(), 8);
        assert_eq!(c.metrics.len(), 9);
        assert_eq!(c.backend, BackendSpec::default());
        c.validate().unwrap();
    }

    #[test]
    fn remote_spec_parses() {
        let c = BenchmarkConfig::from_json(
            r#"{"dataset": "d.jsonl", "backend": {"kind": "remote", "command": ["srv", "--x"]}}"#,
        )
        .unwrap();
        assert!(
            matches!(c.backend, BackendSpec::Remote { ref command, .. } if command.as_ref().unwrap().len() == 2)
        );
    }

    #[test]
    fn unknown_fields_and_methods_are_config_errors() {
        assert!(matches!(
            BenchmarkConfig::from_json(r#"{"dataset": "d", "colour": 1}"#),
            Err(Error::Config(_))
        ));
        let err =
            BenchmarkConfig::from_json(r#"{"dataset": "d", "methods": ["magic"]}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn repeated_method_rejected() {
        let mut c = BenchmarkConfig::new("d");
        c.methods = vec![Method::Lime, Method::Lime];
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_location_not_echoed() {
        let mut c = BenchmarkConfig::new("d");
        c.output_dir = "/tmp/somewhere".into();
        c.workers = Some(3);
        let v = serde_json::to_value(&c).unwrap();
        assert!(v.get("output_dir").is_none());
        assert!(v.get("workers").is_none());
    }
}
