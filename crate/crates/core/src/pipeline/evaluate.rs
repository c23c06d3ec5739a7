//! Per-split and aggregate prediction metrics.

use serde::Serialize;

use super::{PreparedSubject, SubjectPrediction};
use crate::error::{Error, Result};
use crate::kv::KvDocument;
use crate::metrics::MetricReport;

pub const METRICS_SCHEMA: &str = "metrics-v1";

/// Metrics for one held-out subject against its cycle-averaged signals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitReport {
    pub subject: String,
    pub model: String,
    pub normalized: MetricReport,
    pub raw: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub scope: String,
    pub splits: Vec<SplitReport>,
    /// Mean over splits of the per-split channel means.
    pub normalized: MetricReport,
    pub raw: MetricReport,
}

/// Scores one prediction per subject; every subject must have one.
pub fn evaluate_predictions(
    scope: &str,
    subjects: &[PreparedSubject],
    predictions: &[SubjectPrediction],
) -> Result<EvaluationReport> {
    let mut order: Vec<&PreparedSubject> = subjects.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(extra) = predictions
        .iter()
        .find(|p| !subjects.iter().any(|s| s.id == p.subject))
    {
        return Err(Error::invalid(format!(
            "prediction for unknown subject {}",
            extra.subject
        )));
    }
    let splits = order
        .iter()
        .map(|s| {
            let p = predictions
                .iter()
                .find(|p| p.subject == s.id)
                .ok_or_else(|| {
                    Error::invalid(format!("missing split: no prediction for subject {}", s.id))
                })?;
            if p.posterior.times.len() != s.grid().len() {
                return Err(Error::LengthMismatch {
                    what: "prediction grid vs subject grid",
                    left: p.posterior.times.len(),
                    right: s.grid().len(),
                });
            }
            let truth = s.mean_cycle();
            let raw_truth: Vec<Vec<f64>> = truth
                .iter()
                .enumerate()
                .map(|(c, v)| v.iter().map(|z| s.scaling.to_raw(c, *z)).collect())
                .collect();
            Ok(SplitReport {
                subject: s.id.clone(),
                model: p.model.clone(),
                normalized: MetricReport::compute(&p.posterior.mean, &truth)?,
                raw: MetricReport::compute(&p.raw_mean, &raw_truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = MetricReport::average(
        &splits
            .iter()
            .map(|s| s.normalized.clone())
            .collect::<Vec<_>>(),
    )?;
    let raw = MetricReport::average(&splits.iter().map(|s| s.raw.clone()).collect::<Vec<_>>())?;
    Ok(EvaluationReport {
        scope: scope.to_string(),
        splits,
        normalized,
        raw,
    })
}

impl EvaluationReport {
    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::with_schema(METRICS_SCHEMA);
        doc.set("scope", self.scope.as_str());
        doc.set(
            "splits",
            self.splits
                .iter()
                .map(|s| s.subject.as_str())
                .collect::<Vec<_>>()
                .join(" "),
        );
        self.normalized
            .write_into(&mut doc, "aggregate.normalized.");
        self.raw.write_into(&mut doc, "aggregate.raw.");
        for s in &self.splits {
            doc.set(&format!("split.{}.model", s.subject), s.model.as_str());
            s.normalized
                .write_into(&mut doc, &format!("split.{}.normalized.", s.subject));
            s.raw
                .write_into(&mut doc, &format!("split.{}.raw.", s.subject));
        }
        doc
    }

    pub fn to_table(&self, labels: &[&str]) -> String {
        format!(
            "aggregate, normalized units ({} splits)\n{}\naggregate, raw units (meters)\n{}",
            self.splits.len(),
            self.normalized.to_table(labels),
            self.raw.to_table(labels)
        )
    }
}
