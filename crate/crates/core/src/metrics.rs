//! Classification metrics: AUROC, average precision, F1 and accuracy, with
//! macro averaging across tasks.

use ndarray::ArrayView2;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Scores paired with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::InvalidArgument("no scored examples".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Probability that a random positive outranks a random negative, ties half.
pub fn auroc(sl: &ScoredLabels) -> Result<f64> {
    let pos = sl.positives() as u64;
    let neg = sl.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..sl.len()).collect();
    order.sort_by(|&a, &b| sl.scores[a].total_cmp(&sl.scores[b]));
    // Count in half-pairs so the result is an exact ratio of integers.
    let mut half_pairs: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u64, 0u64);
        while j < order.len() && sl.scores[order[j]] == sl.scores[order[i]] {
            if sl.labels[order[j]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        half_pairs += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    Ok(half_pairs as f64 / (2 * pos * neg) as f64)
}

/// Mean precision at each positive's rank, ranking by descending score with
/// ties broken by original position.
pub fn average_precision(sl: &ScoredLabels) -> Result<f64> {
    let pos = sl.positives();
    if pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..sl.len()).collect();
    order.sort_by(|&a, &b| sl.scores[b].total_cmp(&sl.scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if sl.labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion-matrix statistics with predictions `score >= threshold`.
/// Ratios with a zero denominator are reported as 0.
pub fn f1_and_accuracy(sl: &ScoredLabels, threshold: f64) -> BinaryStats {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &y) in sl.scores.iter().zip(&sl.labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BinaryStats {
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, sl.len()),
    }
}

/// Unweighted mean of the defined values and the number skipped.
pub fn macro_average(per_task: &[Option<f64>]) -> Result<(f64, usize)> {
    let valid: Vec<f64> = per_task.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::UndefinedMetric("no task has a defined value".into()));
    }
    let skipped = per_task.len() - valid.len();
    Ok((valid.iter().sum::<f64>() / valid.len() as f64, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub aucpr: Option<f64>,
    pub f1: f64,
}

/// Per-task metrics serialized as an object keyed `task_0`, `task_1`, ... in task order.
#[derive(Clone, Debug, PartialEq)]
pub struct PerTask(pub Vec<TaskMetrics>);

impl Serialize for PerTask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (i, t) in self.0.iter().enumerate() {
            map.serialize_entry(&format!("task_{i}"), t)?;
        }
        map.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auroc: f64,
    pub aucpr: f64,
    pub macro_f1: f64,
    pub per_task: PerTask,
    /// Tasks whose AUROC is undefined on the evaluated rows.
    pub skipped_tasks: Vec<usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates the listed rows of a probability matrix against 0/1 labels.
///
/// Accuracy is the macro mean of per-task accuracies. With a single task,
/// macro-F1 averages the F1 of the positive and the negative class; with
/// several tasks it averages the positive-class F1 over tasks.
pub fn evaluate(
    probabilities: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    rows: &[usize],
    threshold: f64,
) -> Result<MetricsReport> {
    if probabilities.dim() != labels.dim() {
        return Err(Error::Shape("probabilities and labels differ in shape".into()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to evaluate".into()));
    }
    let tasks = probabilities.ncols();
    let mut per_task = Vec::with_capacity(tasks);
    let mut skipped = Vec::new();
    let mut f1s = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let scores = rows.iter().map(|&r| probabilities[(r, t)]).collect();
        let ys = rows.iter().map(|&r| u8::from(labels[(r, t)] >= 0.5)).collect();
        let sl = ScoredLabels::new(scores, ys)?;
        let stats = f1_and_accuracy(&sl, threshold);
        let auc = auroc(&sl).ok();
        if auc.is_none() {
            skipped.push(t);
        }
        let ap = average_precision(&sl).ok();
        if tasks == 1 {
            let neg_f1 = negative_class_f1(&sl, threshold);
            f1s.push(Some((stats.f1 + neg_f1) / 2.0));
        } else {
            f1s.push(Some(stats.f1));
        }
        per_task.push(TaskMetrics {
            accuracy: stats.accuracy,
            auroc: auc,
            aucpr: ap,
            f1: stats.f1,
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} task(s) have a single class on the evaluated rows", skipped.len());
    }
    let auroc_macro = macro_average(&per_task.iter().map(|t| t.auroc).collect::<Vec<_>>())?.0;
    let aucpr_macro = macro_average(&per_task.iter().map(|t| t.aucpr).collect::<Vec<_>>())?.0;
    let accuracy = macro_average(&per_task.iter().map(|t| Some(t.accuracy)).collect::<Vec<_>>())?.0;
    let macro_f1 = macro_average(&f1s)?.0;
    Ok(MetricsReport {
        accuracy,
        auroc: auroc_macro,
        aucpr: aucpr_macro,
        macro_f1,
        per_task: PerTask(per_task),
        skipped_tasks: skipped,
    })
}

/// F1 of the negative class, treating `score < threshold` as its prediction.
fn negative_class_f1(sl: &ScoredLabels, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in sl.scores.iter().zip(&sl.labels) {
        match (s < threshold, y == 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
