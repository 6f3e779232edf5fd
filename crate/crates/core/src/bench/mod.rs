//! Explain → evaluate → aggregate over a dataset, and the artifacts a run
//! leaves behind.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendInfo, Capability, ModelBackend, TokenSequence};
use crate::datasets::{load_canonical, project, CanonicalInstance, Dataset, Task};
use crate::error::{Error, Result};
use crate::explainers::{self, check_supported, Attribution, ExplainerParams, Method};
use crate::metrics::{self, Metric, MetricResult, MetricTable, SweepItem};

pub mod config;
pub mod render;

pub use config::{BackendSpec, BenchmarkConfig};
pub use render::{render_heatmap_html, render_table, TableFormat};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub task: Task,
    pub label_names: Vec<String>,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold: usize,
    pub predicted: Option<usize>,
    pub probabilities: Vec<f64>,
}

/// One failed (method, metric) evaluation; `metric` is absent when the
/// explainer itself failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub message: String,
}

/// Wall-clock seconds per stage. Kept out of `report.json` so reports stay
/// byte-reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_secs: f64,
    pub explain_secs: f64,
    pub evaluate_secs: f64,
    pub aggregate_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tool_version: String,
    pub config: BenchmarkConfig,
    pub dataset: DatasetSummary,
    pub backend: BackendInfo,
    pub instances: Vec<InstanceRecord>,
    pub attributions: Vec<Attribution>,
    pub results: Vec<MetricResult>,
    pub errors: Vec<CellError>,
    pub table: MetricTable,
    #[serde(skip)]
    pub timings: Timings,
}

struct InstanceOutcome {
    record: InstanceRecord,
    seq: Option<TokenSequence>,
    attributions: Vec<Attribution>,
    results: Vec<MetricResult>,
    errors: Vec<CellError>,
    explain_secs: f64,
    evaluate_secs: f64,
}

fn instance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

/// Rejects requests the backend cannot serve, before any model call.
pub fn validate_against_backend(
    config: &BenchmarkConfig,
    dataset: &Dataset,
    backend: &dyn ModelBackend,
) -> Result<()> {
    let info = backend.info();
    if info.n_classes != dataset.label_names.len() {
        return Err(Error::Config(format!(
            "backend has {} classes, dataset {:?} has {}",
            info.n_classes,
            dataset.name,
            dataset.label_names.len()
        )));
    }
    for method in &config.methods {
        check_supported(backend, *method).map_err(|e| {
            Error::Config(format!(
                "method {method} is not supported by the backend: {e}"
            ))
        })?;
    }
    for metric in &config.metrics {
        let ok = match metric {
            Metric::SoftSuff | Metric::SoftComp => info.has(Capability::Embeddings),
            Metric::AucTp => info.mask_token_id.is_some() || info.has(Capability::Embeddings),
            _ => true,
        };
        if !ok {
            return Err(Error::Config(format!(
                "metric {metric} needs embeddings or a mask token, which the backend lacks"
            )));
        }
    }
    Ok(())
}

fn evaluate_instance(
    config: &BenchmarkConfig,
    backend: &dyn ModelBackend,
    index: usize,
    inst: &CanonicalInstance,
) -> InstanceOutcome {
    let mut outcome = InstanceOutcome {
        record: InstanceRecord {
            id: inst.id.clone(),
            tokens: Vec::new(),
            gold: inst.label,
            predicted: None,
            probabilities: Vec::new(),
        },
        seq: None,
        attributions: Vec::new(),
        results: Vec::new(),
        errors: Vec::new(),
        explain_secs: 0.0,
        evaluate_secs: 0.0,
    };
    let cell_error = |method: Option<Method>, metric: Option<Metric>, e: &Error| CellError {
        instance_id: Some(inst.id.clone()),
        method,
        metric,
        message: e.to_string(),
    };
    let prepared = backend.tokenize(&inst.text()).and_then(|seq| {
        let probs = backend.predict(std::slice::from_ref(&seq))?.remove(0);
        Ok((seq, probs))
    });
    let (seq, probs) = match prepared {
        Ok(v) => v,
        Err(e) => {
            outcome.errors.push(cell_error(None, None, &e));
            return outcome;
        }
    };
    let target = probs.argmax();
    outcome.record.tokens = seq.tokens.clone();
    outcome.record.predicted = Some(target);
    outcome.record.probabilities = probs.as_slice().to_vec();

    let seed = instance_seed(config.seed, index);
    let params = ExplainerParams {
        seed,
        ..config.explainer.clone()
    };
    let soft = metrics::SoftParams {
        seed,
        ..config.soft
    };
    let words = inst.words();
    for method in &config.methods {
        let started = Instant::now();
        let attribution = explainers::explain(backend, &seq, target, *method, &params);
        outcome.explain_secs += started.elapsed().as_secs_f64();
        let attribution = match attribution {
            Ok(a) => a.with_instance_id(&inst.id),
            Err(e) => {
                outcome.errors.push(cell_error(Some(*method), None, &e));
                continue;
            }
        };
        let started = Instant::now();
        for metric in &config.metrics {
            let result = match metric {
                Metric::SoftSuff => Some(metrics::soft_sufficiency(
                    backend,
                    &seq,
                    &attribution,
                    &soft,
                )),
                Metric::SoftComp => Some(metrics::soft_comprehensiveness(
                    backend,
                    &seq,
                    &attribution,
                    &soft,
                )),
                Metric::IouF1 | Metric::TokenF1 | Metric::Auprc => {
                    inst.rationale.as_ref().map(|rationale| {
                        let ws = project(&attribution, &seq, &words)?;
                        match metric {
                            Metric::IouF1 => metrics::iou_f1(&ws, rationale, &config.plausibility),
                            Metric::TokenF1 => {
                                metrics::token_f1(&ws, rationale, &config.plausibility)
                            }
                            _ => metrics::auprc(&ws, rationale),
                        }
                    })
                }
                Metric::Complexity => Some(metrics::complexity(&attribution.scores)),
                Metric::Sparseness => Some(metrics::sparseness(&attribution.scores)),
                // dataset scope, computed after every instance is explained
                Metric::FadNauc | Metric::AucTp => None,
            };
            match result {
                Some(Ok(r)) => outcome
                    .results
                    .push(r.for_method(*method).for_instance(&inst.id)),
                Some(Err(e)) => outcome
                    .errors
                    .push(cell_error(Some(*method), Some(*metric), &e)),
                None => {}
            }
        }
        outcome.evaluate_secs += started.elapsed().as_secs_f64();
        outcome.attributions.push(attribution);
    }
    outcome.seq = Some(seq);
    outcome
}

/// Runs the benchmark against an already constructed backend.
pub fn run_with_backend(
    config: &BenchmarkConfig,
    dataset: &Dataset,
    backend: &dyn ModelBackend,
) -> Result<BenchmarkReport> {
    let setup = Instant::now();
    config.validate()?;
    if dataset.instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    validate_against_backend(config, dataset, backend)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut timings = Timings {
        setup_secs: setup.elapsed().as_secs_f64(),
        ..Timings::default()
    };

    let outcomes: Vec<InstanceOutcome> = pool.install(|| {
        dataset
            .instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| evaluate_instance(config, backend, i, inst))
            .collect()
    });

    let started = Instant::now();
    let mut table = MetricTable::new(&config.methods, &config.metrics);
    let mut results = Vec::new();
    let mut errors = Vec::new();
    for outcome in &outcomes {
        timings.explain_secs += outcome.explain_secs;
        timings.evaluate_secs += outcome.evaluate_secs;
        for r in &outcome.results {
            table.add(r.method.expect("set per instance"), r)?;
        }
        for e in &outcome.errors {
            let methods = e.method.map_or_else(|| config.methods.clone(), |m| vec![m]);
            let metrics = e.metric.map_or_else(|| config.metrics.clone(), |m| vec![m]);
            for m in &methods {
                for k in &metrics {
                    table.add_error(*m, *k)?;
                }
            }
        }
        results.extend(outcome.results.iter().cloned());
        errors.extend(outcome.errors.iter().cloned());
    }

    for method in &config.methods {
        let items: Vec<SweepItem<'_>> = outcomes
            .iter()
            .filter_map(|o| {
                let seq = o.seq.as_ref()?;
                let attribution = o.attributions.iter().find(|a| a.method == *method)?;
                Some(SweepItem {
                    seq,
                    attribution,
                    gold: Some(o.record.gold),
                })
            })
            .collect();
        for metric in &config.metrics {
            let result = match metric {
                Metric::FadNauc => metrics::fad_nauc_dataset(backend, &items, &config.sweep),
                Metric::AucTp => metrics::auc_tp_dataset(backend, &items, &config.sweep),
                _ => continue,
            };
            match result {
                Ok(r) => {
                    let r = r.for_method(*method);
                    table.add(*method, &r)?;
                    results.push(r);
                }
                Err(e) => {
                    table.add_error(*method, *metric)?;
                    errors.push(CellError {
                        instance_id: None,
                        method: Some(*method),
                        metric: Some(*metric),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    table.finalize();
    timings.evaluate_secs += started.elapsed().as_secs_f64();

    let aggregate_started = Instant::now();
    let mut instances = Vec::with_capacity(outcomes.len());
    let mut attributions = Vec::new();
    for o in outcomes {
        instances.push(o.record);
        attributions.extend(o.attributions);
    }
    timings.aggregate_secs = aggregate_started.elapsed().as_secs_f64();
    Ok(BenchmarkReport {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        dataset: DatasetSummary {
            name: dataset.name.clone(),
            task: dataset.task,
            label_names: dataset.label_names.clone(),
            n_instances: dataset.instances.len(),
        },
        backend: backend.info().clone(),
        instances,
        attributions,
        results,
        errors,
        table,
        timings,
    })
}

/// Loads the dataset, builds the backend and runs.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let started = Instant::now();
    let dataset = load_canonical(&config.dataset)?;
    let backend = config.backend.build(&dataset)?;
    let loading = started.elapsed().as_secs_f64();
    let mut report = run_with_backend(config, &dataset, backend.as_ref())?;
    report.timings.setup_secs += loading;
    Ok(report)
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Writes report.json, table.csv, attributions.jsonl, timings.json and
    /// one heatmap per instance under `dir`.
    pub fn write_artifacts(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let heatmaps = dir.join("heatmaps");
        fs::create_dir_all(&heatmaps)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        fs::write(
            dir.join("table.csv"),
            render_table(&self.table, TableFormat::Csv)?,
        )?;
        fs::write(
            dir.join("attributions.jsonl"),
            explainers::to_jsonl(&self.attributions)?,
        )?;
        fs::write(
            dir.join("timings.json"),
            serde_json::to_string_pretty(&self.timings)? + "\n",
        )?;
        for inst in &self.instances {
            let attrs: Vec<Attribution> = self
                .attributions
                .iter()
                .filter(|a| a.instance_id == inst.id)
                .cloned()
                .collect();
            if attrs.is_empty() {
                continue;
            }
            let html = render_heatmap_html(&inst.id, &inst.tokens, &attrs)?;
            fs::write(heatmaps.join(format!("{}.html", file_stem(&inst.id))), html)?;
        }
        Ok(())
    }
}

/// Instance id made safe for use as a file name.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::fit_reference;
    use crate::backend::protocol::RestrictedBackend;
    use crate::datasets::fixtures;
    use std::collections::BTreeSet;

    #[test]
    fn two_methods_all_metrics() {
        let ds = fixtures::movies_mini();
        let model = fit_reference(&ds, Default::default()).unwrap();
        let mut config = BenchmarkConfig::new("unused");
        config.methods = vec![Method::Saliency, Method::Lime];
        let report = run_with_backend(&config, &ds, &model).unwrap();
        assert_eq!(report.attributions.len(), 16);
        assert_eq!(report.table.cells.len(), 2);
        assert!(report.table.cells.values().all(|row| row.len() == 9));
        assert!(report.errors.is_empty(), "{:?}", report.errors);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let ds = fixtures::hatexplain_mini();
        let model = fit_reference(&ds, Default::default()).unwrap();
        let mut config = BenchmarkConfig::new("unused");
        config.methods = vec![Method::IntegratedGradients, Method::PartitionShap];
        config.workers = Some(1);
        let a = run_with_backend(&config, &ds, &model)
            .unwrap()
            .to_json()
            .unwrap();
        config.workers = Some(4);
        let b = run_with_backend(&config, &ds, &model)
            .unwrap()
            .to_json()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsupported_method_is_a_config_error() {
        let ds = fixtures::movies_mini();
        let model = fit_reference(&ds, Default::default()).unwrap();
        let restricted = RestrictedBackend::new(
            model,
            BTreeSet::from([Capability::Gradients, Capability::Embeddings]),
        );
        let mut config = BenchmarkConfig::new("unused");
        config.methods = vec![Method::Saliency, Method::Deeplift];
        assert!(matches!(
            run_with_backend(&config, &ds, &restricted),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn failing_cells_are_isolated() {
        let ds = fixtures::movies_mini();
        let model = fit_reference(&ds, Default::default()).unwrap();
        let mut config = BenchmarkConfig::new("unused");
        config.methods = vec![Method::Saliency, Method::Lime];
        config.metrics = vec![Metric::Complexity];
        // too few LIME samples for every instance
        config.explainer.lime.n_samples = 3;
        let report = run_with_backend(&config, &ds, &model).unwrap();
        let lime = report.table.get(Method::Lime, Metric::Complexity).unwrap();
        assert_eq!((lime.value, lime.errors), (None, 8));
        let sal = report
            .table
            .get(Method::Saliency, Metric::Complexity)
            .unwrap();
        assert_eq!(sal.n, 8);
        assert!(sal.best);
    }
}
