use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnswerFormat, QaItem, QaTask};
use crate::error::{Error, Result};

/// Relative-error bounds `1 - theta` for theta = 0.50, 0.55, ..., 0.95,
/// written as exact hundredths so 0.1 against 10 behaves as expected.
pub const MRA_THRESHOLDS: [f64; 10] = [0.50, 0.45, 0.40, 0.35, 0.30, 0.25, 0.20, 0.15, 0.10, 0.05];

/// Mean over thresholds of `|pred - gt| / gt < bound`. `None` when the
/// ground truth is not positive.
pub fn relative_accuracy(pred: f64, gt: f64) -> Option<f64> {
    if !(gt > 0.0) {
        return None;
    }
    let rel = (pred - gt).abs() / gt;
    let hits = MRA_THRESHOLDS.iter().filter(|&&b| rel < b).count();
    Some(hits as f64 / MRA_THRESHOLDS.len() as f64)
}

/// Mean relative accuracy; items with nonpositive ground truth are skipped
/// with a warning.
pub fn eval_na_mra(predictions: &[f64], answers: &[f64]) -> Result<f64> {
    if predictions.len() != answers.len() {
        return Err(Error::invalid("prediction and answer counts differ"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&p, &y) in predictions.iter().zip(answers) {
        match relative_accuracy(p, y) {
            Some(s) => {
                sum += s;
                n += 1;
            }
            None => log::warn!("ground truth {y} is not positive, item excluded"),
        }
    }
    if n == 0 {
        return Err(Error::Empty("no scorable numeric items"));
    }
    Ok(sum / n as f64)
}

/// Fraction of exact letter matches; a missing prediction counts as wrong.
pub fn eval_mca(predictions: &[Option<&str>], answers: &[&str]) -> Result<f64> {
    if predictions.len() != answers.len() {
        return Err(Error::invalid("prediction and answer counts differ"));
    }
    if answers.is_empty() {
        return Err(Error::Empty("no multiple-choice items"));
    }
    let right = predictions
        .iter()
        .zip(answers)
        .filter(|(p, a)| p.is_some_and(|p| p.trim().eq_ignore_ascii_case(a)))
        .count();
    Ok(right as f64 / answers.len() as f64)
}

/// One prediction line: `{"id": ..., "prediction": ...}`. Numbers and
/// strings are both accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: serde_json::Value,
}

impl Prediction {
    pub fn text(&self) -> String {
        match &self.prediction {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub metric: String,
    pub score: f64,
    pub items: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub per_task: BTreeMap<QaTask, TaskScore>,
    /// Unweighted mean of the task scores.
    pub average: f64,
}

/// Scores every task present in `items`. NA predictions that do not parse
/// as numbers score zero, like missing ones.
pub fn evaluate(items: &[QaItem], predictions: &[Prediction]) -> Result<QaReport> {
    let by_id: BTreeMap<&str, String> = predictions.iter().map(|p| (p.id.as_str(), p.text())).collect();
    let mut grouped: BTreeMap<QaTask, Vec<&QaItem>> = BTreeMap::new();
    for item in items {
        grouped.entry(item.task).or_default().push(item);
    }
    let mut per_task = BTreeMap::new();
    for (task, group) in grouped {
        let missing = group.iter().filter(|i| !by_id.contains_key(i.id.as_str())).count();
        let score = match task.format() {
            AnswerFormat::Mca => {
                let preds: Vec<Option<&str>> = group.iter().map(|i| by_id.get(i.id.as_str()).map(String::as_str)).collect();
                let answers: Vec<&str> = group.iter().map(|i| i.answer.as_str()).collect();
                eval_mca(&preds, &answers)?
            }
            AnswerFormat::Na => {
                let mut sum = 0.0;
                let mut n = 0usize;
                for i in &group {
                    let y: f64 = i.answer.parse().map_err(|_| Error::invalid(format!("{}: answer is not numeric", i.id)))?;
                    let pred = by_id.get(i.id.as_str()).and_then(|p| p.trim().parse::<f64>().ok());
                    match relative_accuracy(pred.unwrap_or(f64::NAN), y) {
                        Some(s) => {
                            sum += s;
                            n += 1;
                        }
                        None => log::warn!("{}: ground truth {y} is not positive, item excluded", i.id),
                    }
                }
                if n == 0 {
                    continue;
                }
                sum / n as f64
            }
        };
        let metric = match task.format() {
            AnswerFormat::Mca => "accuracy",
            AnswerFormat::Na => "mra",
        };
        per_task.insert(
            task,
            TaskScore {
                metric: metric.into(),
                score,
                items: group.len(),
                missing,
            },
        );
    }
    if per_task.is_empty() {
        return Err(Error::Empty("no scorable items"));
    }
    let average = per_task.values().map(|s| s.score).sum::<f64>() / per_task.len() as f64;
    Ok(QaReport { per_task, average })
}
