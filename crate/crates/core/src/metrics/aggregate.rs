//! Method × metric table: unweighted means with the best cell per metric
//! marked according to the metric's direction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Direction, Metric, MetricResult, Scope};
use crate::error::{Error, Result};
use crate::explainers::Method;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Mean over successful evaluations; `None` when every one failed.
    pub value: Option<f64>,
    pub n: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    pub best: bool,
    #[serde(skip)]
    sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub directions: BTreeMap<Metric, Direction>,
    pub cells: BTreeMap<Method, BTreeMap<Metric, Cell>>,
    /// Methods holding the best value for each metric (ties all listed).
    pub best: BTreeMap<Metric, Vec<Method>>,
    /// Whether one method is best on every metric with a value.
    pub any_method_swept_all: bool,
}

impl MetricTable {
    pub fn new(methods: &[Method], metrics: &[Metric]) -> Self {
        let cells = methods
            .iter()
            .map(|m| (*m, metrics.iter().map(|k| (*k, Cell::default())).collect()))
            .collect();
        Self {
            methods: methods.to_vec(),
            metrics: metrics.to_vec(),
            directions: metrics.iter().map(|m| (*m, m.direction())).collect(),
            cells,
            best: BTreeMap::new(),
            any_method_swept_all: false,
        }
    }

    fn cell_mut(&mut self, method: Method, metric: Metric) -> Result<&mut Cell> {
        self.cells
            .get_mut(&method)
            .and_then(|row| row.get_mut(&metric))
            .ok_or_else(|| Error::InvalidInput(format!("no cell for {method} × {metric}")))
    }

    pub fn add(&mut self, method: Method, result: &MetricResult) -> Result<()> {
        let cell = self.cell_mut(method, result.metric)?;
        match cell.scope {
            Some(s) if s != result.scope => {
                return Err(Error::InconsistentScopes(format!(
                    "{method} × {}",
                    result.metric
                )));
            }
            _ => cell.scope = Some(result.scope),
        }
        cell.sum += result.value;
        cell.n += 1;
        Ok(())
    }

    pub fn add_error(&mut self, method: Method, metric: Metric) -> Result<()> {
        self.cell_mut(method, metric)?.errors += 1;
        Ok(())
    }

    pub fn get(&self, method: Method, metric: Metric) -> Option<&Cell> {
        self.cells.get(&method).and_then(|row| row.get(&metric))
    }

    /// Computes means and best markers. Idempotent.
    pub fn finalize(&mut self) {
        for row in self.cells.values_mut() {
            for cell in row.values_mut() {
                cell.value = (cell.n > 0).then(|| cell.sum / cell.n as f64);
                cell.best = false;
            }
        }
        self.best.clear();
        for metric in self.metrics.clone() {
            let dir = metric.direction();
            let mut best: Option<f64> = None;
            for method in &self.methods {
                if let Some(v) = self.cells[method][&metric].value {
                    if best.is_none_or(|b| dir.better(v, b)) {
                        best = Some(v);
                    }
                }
            }
            let Some(best) = best else { continue };
            let mut winners = Vec::new();
            for method in &self.methods {
                let cell = self
                    .cells
                    .get_mut(method)
                    .and_then(|r| r.get_mut(&metric))
                    .expect("cell");
                if cell.value == Some(best) {
                    cell.best = true;
                    winners.push(*method);
                }
            }
            self.best.insert(metric, winners);
        }
        self.any_method_swept_all = !self.best.is_empty()
            && self
                .methods
                .iter()
                .any(|m| self.best.values().all(|winners| winners.contains(m)));
    }
}

/// Builds a finalized table from `(method, result)` pairs.
pub fn aggregate(
    methods: &[Method],
    metrics: &[Metric],
    results: &[(Method, MetricResult)],
) -> Result<MetricTable> {
    let mut table = MetricTable::new(methods, metrics);
    for (method, result) in results {
        table.add(*method, result)?;
    }
    table.finalize();
    Ok(table)
}
