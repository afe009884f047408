//! Per-fold metric records and their cross-fold aggregation.

use std::collections::BTreeMap;

use crate::classifiers::LabelPrediction;
use crate::error::{Error, Result};
use crate::metrics::{classification_report, BleuReport, ClassificationScores, MetricRecord};

pub const OVERALL: &str = "overall";
/// Scenario and model columns of separation records.
pub const SEPARATION: (&str, &str) = ("separation", "Seq2Res");

/// Sample mean and `n - 1` standard deviation; no deviation for one value.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(var.sqrt()))
}

fn record(scenario: &str, model: &str, class: &str, metric: &str, value: f64) -> MetricRecord {
    MetricRecord {
        scenario: scenario.to_string(),
        model: model.to_string(),
        class: class.to_string(),
        metric: metric.to_string(),
        value,
        std: None,
    }
}

/// Scores one fold's predictions against the true label sets.
pub fn evaluate(
    preds: &[LabelPrediction],
    truth: &[Vec<usize>],
    num_classes: usize,
) -> Result<ClassificationScores> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truth.len(),
        });
    }
    let sets: Vec<Vec<usize>> = preds.iter().map(|p| p.predicted.clone()).collect();
    classification_report(&sets, truth, num_classes)
}

pub fn classification_records(
    scenario: &str,
    model: &str,
    scores: &ClassificationScores,
    class_names: &[String],
) -> Vec<MetricRecord> {
    let mut out = vec![
        record(scenario, model, OVERALL, "accuracy", scores.accuracy),
        record(
            scenario,
            model,
            OVERALL,
            "macro_precision",
            scores.macro_precision,
        ),
        record(
            scenario,
            model,
            OVERALL,
            "macro_recall",
            scores.macro_recall,
        ),
        record(scenario, model, OVERALL, "macro_f1", scores.macro_f1),
    ];
    for (c, s) in scores.per_class.iter().enumerate() {
        let name = class_names
            .get(c)
            .map_or_else(|| c.to_string(), Clone::clone);
        out.push(record(scenario, model, &name, "precision", s.precision));
        out.push(record(scenario, model, &name, "recall", s.recall));
        out.push(record(scenario, model, &name, "f1", s.f1));
    }
    out
}

/// Classes absent from the fold produce no record.
pub fn bleu_records(report: &BleuReport, class_names: &[String]) -> Vec<MetricRecord> {
    let (scenario, model) = SEPARATION;
    let mut out = vec![record(scenario, model, OVERALL, "bleu", report.overall)];
    for (c, v) in report.per_class.iter().enumerate() {
        if let Some(v) = v {
            let name = class_names
                .get(c)
                .map_or_else(|| c.to_string(), Clone::clone);
            out.push(record(scenario, model, &name, "bleu", *v));
        }
    }
    out
}

/// Cross-fold mean and deviation of every metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub records: Vec<MetricRecord>,
    pub folds: usize,
}

impl Summary {
    /// Groups by (scenario, model, class, metric), keeping first-seen order.
    pub fn aggregate(per_fold: &[Vec<MetricRecord>]) -> Self {
        let mut order: Vec<(String, String, String, String)> = Vec::new();
        let mut values: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
        for fold in per_fold {
            for r in fold {
                let key = (
                    r.scenario.clone(),
                    r.model.clone(),
                    r.class.clone(),
                    r.metric.clone(),
                );
                if !values.contains_key(&key) {
                    order.push(key.clone());
                }
                values.entry(key).or_default().push(r.value);
            }
        }
        let records = order
            .into_iter()
            .map(|key| {
                let (mean, std) = mean_std(&values[&key]);
                MetricRecord {
                    scenario: key.0,
                    model: key.1,
                    class: key.2,
                    metric: key.3,
                    value: mean,
                    std,
                }
            })
            .collect();
        Self {
            records,
            folds: per_fold.len(),
        }
    }

    pub fn get(
        &self,
        scenario: &str,
        model: &str,
        class: &str,
        metric: &str,
    ) -> Option<&MetricRecord> {
        self.records.iter().find(|r| {
            r.scenario == scenario && r.model == model && r.class == class && r.metric == metric
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# scenario\tmodel\tclass\tmetric\tmean\tstd\n");
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Self {
        let records: Vec<MetricRecord> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .filter_map(MetricRecord::parse)
            .collect();
        Self { records, folds: 0 }
    }
}

pub fn records_to_tsv(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}
