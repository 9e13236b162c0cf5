//! Evaluation summaries and their CSV exports.

use std::io::Write;

use super::execute::EpisodeLog;
use crate::error::{Error, Result};
use crate::guard::HighRiskSet;

/// Cost saving of `method` relative to `uncontrolled`, percent.
#[inline]
pub fn improvement(uncontrolled: f64, method: f64) -> f64 {
    (uncontrolled - method) / uncontrolled * 100.0
}

/// Minimum, quartiles and maximum with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSummary {
    /// 1-based.
    pub bus: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCounts {
    pub episode: usize,
    pub start: usize,
    pub cost: f64,
    pub unsafe_proposals: usize,
    pub executed_violations: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub days: usize,
    /// £/day.
    pub avg_daily_cost: f64,
    /// Relative to the uncontrolled report, once known.
    pub improvement_pct: Option<f64>,
    pub executed_violations: usize,
    pub unsafe_proposals: usize,
    pub fallbacks: usize,
    pub voltage: Vec<BusSummary>,
    pub training_minutes: Option<f64>,
    pub mean_decision_secs: f64,
    pub episodes: Vec<EpisodeCounts>,
}

/// Summarizes one method's episodes. Each episode counts as one day of cost
/// per 24 steps.
pub fn evaluate_metrics(method: &str, logs: &[EpisodeLog], risk: &HighRiskSet, training_seconds: Option<f64>) -> Result<EvalReport> {
    if logs.is_empty() || logs.iter().any(|l| l.steps.is_empty()) {
        return Err(Error::Contract("metrics need at least one complete trajectory".into()));
    }
    let steps: usize = logs.iter().map(|l| l.steps.len()).sum();
    let days = steps as f64 / 24.0;
    let total: f64 = logs.iter().map(EpisodeLog::cost).sum();
    let voltage = risk
        .buses()
        .iter()
        .enumerate()
        .map(|(k, &bus)| {
            let v: Vec<f64> = logs.iter().flat_map(|l| &l.steps).map(|s| s.risk_voltages[k]).collect();
            let [min, q1, median, q3, max] = quartiles(&v).unwrap_or([f64::NAN; 5]);
            BusSummary {
                bus: bus + 1,
                min,
                q1,
                median,
                q3,
                max,
            }
        })
        .collect();
    let decisions: Vec<f64> = logs.iter().flat_map(|l| l.decision_secs.iter().copied()).collect();
    Ok(EvalReport {
        method: method.to_string(),
        days: days.round() as usize,
        avg_daily_cost: total / days,
        improvement_pct: None,
        executed_violations: logs.iter().map(EpisodeLog::executed_violations).sum(),
        unsafe_proposals: logs.iter().map(|l| l.unsafe_proposals).sum(),
        fallbacks: logs.iter().map(|l| l.fallbacks).sum(),
        voltage,
        training_minutes: training_seconds.map(|s| s / 60.0),
        mean_decision_secs: decisions.iter().sum::<f64>() / decisions.len().max(1) as f64,
        episodes: logs
            .iter()
            .enumerate()
            .map(|(i, l)| EpisodeCounts {
                episode: i + 1,
                start: l.start,
                cost: l.cost(),
                unsafe_proposals: l.unsafe_proposals,
                executed_violations: l.executed_violations(),
                fallbacks: l.fallbacks,
            })
            .collect(),
    })
}

/// Fills in every report's improvement against the one named `uncontrolled`.
pub fn with_improvements(mut reports: Vec<EvalReport>) -> Vec<EvalReport> {
    if let Some(base) = reports.iter().find(|r| r.method == "uncontrolled").map(|r| r.avg_daily_cost) {
        for r in &mut reports {
            r.improvement_pct = Some(improvement(base, r.avg_daily_cost));
        }
    }
    reports
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.digits$}"))
}

pub fn write_metrics(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "days",
        "avg_daily_cost",
        "improvement_pct",
        "executed_violations",
        "unsafe_proposals",
        "fallbacks",
        "mean_decision_s",
        "training_min",
    ])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.days.to_string(),
            format!("{:.3}", r.avg_daily_cost),
            opt(r.improvement_pct, 2),
            r.executed_violations.to_string(),
            r.unsafe_proposals.to_string(),
            r.fallbacks.to_string(),
            format!("{:.6}", r.mean_decision_secs),
            opt(r.training_minutes, 3),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

pub fn write_voltage_distribution(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "bus", "min", "q1", "median", "q3", "max"])?;
    for r in reports {
        for b in &r.voltage {
            w.write_record([
                r.method.clone(),
                b.bus.to_string(),
                format!("{:.6}", b.min),
                format!("{:.6}", b.q1),
                format!("{:.6}", b.median),
                format!("{:.6}", b.q3),
                format!("{:.6}", b.max),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<voltage distribution>", e))
}

pub fn write_unsafe_counts(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "episode", "start_hour", "cost", "unsafe_proposals", "executed_violations", "fallbacks"])?;
    for r in reports {
        for e in &r.episodes {
            w.write_record([
                r.method.clone(),
                e.episode.to_string(),
                e.start.to_string(),
                format!("{:.6}", e.cost),
                e.unsafe_proposals.to_string(),
                e.executed_violations.to_string(),
                e.fallbacks.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<unsafe counts>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_examples() {
        assert_eq!(format!("{:.2}", improvement(1926.176, 1400.341)), "27.30");
        assert_eq!(format!("{:.2}", improvement(1926.176, 1659.604)), "13.84");
        assert_eq!(improvement(812.5, 812.5), 0.0);
    }

    #[test]
    fn quartiles_interpolate() {
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap(), [1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(quartiles(&[1.0, 2.0]).unwrap(), [1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(quartiles(&[]).is_none());
    }

    #[test]
    fn empty_input_is_refused() {
        assert!(matches!(evaluate_metrics("x", &[], &HighRiskSet::ieee33(), None), Err(Error::Contract(_))));
    }
}
