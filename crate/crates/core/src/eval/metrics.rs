use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

/// Default decision threshold; a score equal to it counts as positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::usage(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::usage(format!("label {l} is not 0 or 1")));
    }
    Ok(())
}

/// Counts with the rule `score >= threshold` ⇒ predicted positive.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_labels(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Acc,
    Sn,
    Sp,
    Pre,
    F1,
    Mcc,
    Auc,
}

impl Metric {
    /// Report column order.
    pub const ALL: [Metric; 7] = [Metric::Acc, Metric::Sn, Metric::Sp, Metric::Pre, Metric::F1, Metric::Mcc, Metric::Auc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Sn => "sn",
            Metric::Sp => "sp",
            Metric::Pre => "pre",
            Metric::F1 => "f1",
            Metric::Mcc => "mcc",
            Metric::Auc => "auc",
        }
    }
}

/// Confusion statistics; `None` marks a ratio whose denominator is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub threshold: f64,
    pub acc: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub pre: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Acc => self.acc,
            Metric::Sn => self.sn,
            Metric::Sp => self.sp,
            Metric::Pre => self.pre,
            Metric::F1 => self.f1,
            Metric::Mcc => self.mcc,
            Metric::Auc => self.auc,
        }
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Sn, Sp, Pre, Acc, F1 and MCC from counts (AUC left unset).
///
/// `MCC = (TP·TN − FP·FN) / √((TP+FP)(TP+FN)(TN+FP)(TN+FN))`.
pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricsReport> {
    if c.total() == 0 {
        return Err(Error::usage("cannot compute metrics over zero scored pairs"));
    }
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let sn = ratio(tp, tp + fn_);
    let sp = ratio(tn, tn + fp);
    let pre = ratio(tp, tp + fp);
    let acc = ratio(tp + tn, tp + tn + fp + fn_);
    let f1 = match (pre, sn) {
        (Some(p), Some(s)) => ratio(2.0 * p * s, p + s),
        _ => None,
    };
    let mcc = ratio(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt());
    Ok(MetricsReport { counts: *c, threshold: THRESHOLD, acc, sn, sp, pre, f1, mcc, auc: None })
}

/// One ROC point: predicting positive for `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    pub auc: f64,
    /// Starts at `(+inf, 0, 0)`, then one point per distinct score, descending.
    pub points: Vec<RocPoint>,
}

/// AUC from average ranks (ties count one half), plus the ROC curve.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Roc> {
    check_labels(scores, labels)?;
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::usage(format!("score {s} is not a number")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::usage("ROC/AUC needs at least one positive and one negative label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // ranks are 1-based; a tie group spanning ranks i+1..=j gets (i+1+j)/2
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let auc = (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut j = order.len();
    while j > 0 {
        let s = scores[order[j - 1]];
        while j > 0 && scores[order[j - 1]] == s {
            if labels[order[j - 1]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j -= 1;
        }
        points.push(RocPoint { threshold: s, fpr: fp as f64 / n, tpr: tp as f64 / p });
    }
    Ok(Roc { auc, points })
}

/// Confusion metrics at [`THRESHOLD`] plus AUC (undefined for single-class labels).
pub fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    let mut report = compute_metrics(&confusion(scores, labels, THRESHOLD)?)?;
    report.auc = match roc_auc(scores, labels) {
        Ok(r) => Some(r.auc),
        Err(Error::Usage(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

pub fn write_roc_tsv(roc: &Roc, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "threshold\tfpr\ttpr")?;
    for p in &roc.points {
        writeln!(out, "{}\t{}\t{}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

/// Renders a metric value, or `undefined`.
pub struct Shown(pub Option<f64>);

impl fmt::Display for Shown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("undefined"),
        }
    }
}
