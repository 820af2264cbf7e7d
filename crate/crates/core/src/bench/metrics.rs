use serde::{Deserialize, Serialize};

use super::log::EpisodeLog;
use crate::error::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub weeks: usize,
    pub total_profit: f64,
    pub mean_weekly: f64,
    /// Sample standard deviation of weekly profit.
    pub std_weekly: f64,
    /// `mean_weekly / std_weekly`, zero when the deviation is zero.
    pub sharpe: f64,
    pub initial_trust: f64,
    pub final_trust: f64,
    pub trust_delta_pct: f64,
    pub negative_weeks: usize,
    pub failure_rate_pct: f64,
    pub violation_weeks: usize,
    pub violation_rate_pct: f64,
    pub repairs: usize,
    pub catastrophic_weeks: usize,
}

pub fn sharpe(mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        mean / std
    } else {
        0.0
    }
}

/// Metrics from a weekly profit series and trust endpoints.
pub fn summarize(
    profits: &[f64],
    initial_trust: f64,
    final_trust: f64,
    violation_weeks: usize,
) -> Result<MetricsSummary, BenchError> {
    if profits.is_empty() {
        return Err(BenchError::EmptyLog);
    }
    let n = profits.len();
    let total: f64 = profits.iter().sum();
    let mean = total / n as f64;
    let std = if n > 1 {
        (profits.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let negative = profits.iter().filter(|p| **p < 0.0).count();
    Ok(MetricsSummary {
        weeks: n,
        total_profit: total,
        mean_weekly: mean,
        std_weekly: std,
        sharpe: sharpe(mean, std),
        initial_trust,
        final_trust,
        trust_delta_pct: (final_trust - initial_trust) / initial_trust * 100.0,
        negative_weeks: negative,
        failure_rate_pct: negative as f64 / n as f64 * 100.0,
        violation_weeks,
        violation_rate_pct: violation_weeks as f64 / n as f64 * 100.0,
        repairs: 0,
        catastrophic_weeks: 0,
    })
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<MetricsSummary, BenchError> {
    let violation_weeks = log
        .records
        .iter()
        .filter(|r| r.violation_count() > 0)
        .count();
    let mut m = summarize(
        &log.profits(),
        log.initial_state.trust,
        log.final_trust(),
        violation_weeks,
    )?;
    m.repairs = log.records.iter().map(|r| r.repair_count()).sum();
    m.catastrophic_weeks = log.records.iter().filter(|r| r.catastrophic).count();
    Ok(m)
}
