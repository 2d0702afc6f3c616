use std::io::Write;

use super::{Metric, MetricsReport, Shown};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub metric: Metric,
    /// Undefined if any run left the metric undefined.
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1); undefined for a single run.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSummary {
    pub runs: Vec<MetricsReport>,
    pub seed_base: u64,
    pub summary: Vec<MetricSummary>,
}

impl RepeatSummary {
    pub fn from_runs(runs: Vec<MetricsReport>, seed_base: u64) -> Self {
        let summary = Metric::ALL
            .iter()
            .map(|&metric| {
                let vals: Option<Vec<f64>> = runs.iter().map(|r| r.get(metric)).collect();
                let (mean, std) = match vals {
                    Some(v) if !v.is_empty() => {
                        let n = v.len() as f64;
                        let mean = v.iter().sum::<f64>() / n;
                        let std = (v.len() > 1)
                            .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
                        (Some(mean), std)
                    }
                    _ => (None, None),
                };
                MetricSummary { metric, mean, std }
            })
            .collect();
        RepeatSummary { runs, seed_base, summary }
    }

    pub fn get(&self, m: Metric) -> &MetricSummary {
        self.summary.iter().find(|s| s.metric == m).expect("every metric is summarised")
    }
}

/// Runs `run_fn(run_index, seed)` with seeds `seed_base + 0 .. n_runs - 1`
/// and aggregates the reports.
pub fn repeat_evaluate(
    mut run_fn: impl FnMut(usize, u64) -> Result<MetricsReport>,
    n_runs: usize,
    seed_base: u64,
) -> Result<RepeatSummary> {
    if n_runs == 0 {
        return Err(Error::usage("at least one run is required"));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let seed = seed_base + r as u64;
        runs.push(run_fn(r, seed).map_err(|e| e.context(format!("run {r} (seed {seed})")))?);
    }
    Ok(RepeatSummary::from_runs(runs, seed_base))
}

/// One row per run, then `mean` and `std` rows; columns acc, sn, sp, pre, f1, mcc, auc.
pub fn write_metrics_tsv(summary: &RepeatSummary, out: &mut dyn Write) -> Result<()> {
    write!(out, "run")?;
    for m in Metric::ALL {
        write!(out, "\t{}", m.name())?;
    }
    writeln!(out)?;
    for (i, r) in summary.runs.iter().enumerate() {
        write!(out, "{}", i + 1)?;
        for m in Metric::ALL {
            write!(out, "\t{}", Shown(r.get(m)))?;
        }
        writeln!(out)?;
    }
    for (label, pick) in [("mean", true), ("std", false)] {
        write!(out, "{label}")?;
        for s in &summary.summary {
            write!(out, "\t{}", Shown(if pick { s.mean } else { s.std }))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `mean (std)` per metric, Table 1 style.
pub fn format_summary(summary: &RepeatSummary) -> String {
    summary
        .summary
        .iter()
        .map(|s| match (s.mean, s.std) {
            (Some(m), Some(sd)) => format!("{} {m:.3} ({sd:.3})", s.metric.name()),
            (Some(m), None) => format!("{} {m:.3}", s.metric.name()),
            _ => format!("{} undefined", s.metric.name()),
        })
        .collect::<Vec<_>>()
        .join("  ")
}
