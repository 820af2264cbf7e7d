//! Per-week episode records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::{ArchitectureKind, Bias};
use crate::causal::CausalEstimate;
use crate::error::BenchError;
use crate::guardian::{RepairRecord, Verdict};
use crate::sim::{Action, MarketState};

/// One hypothesis CHIMERA evaluated in a week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// What the strategist first proposed.
    pub proposed: Action,
    /// The valid action that was actually scored.
    pub action: Action,
    /// Replacement rounds needed before the candidate was valid.
    pub replacement_rounds: u32,
    /// True when replacement ran out and the guardian's repair was used.
    pub repaired_fallback: bool,
    pub estimate: CausalEstimate,
    pub long_term_value: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord {
    /// 1-based week number.
    pub week: u32,
    pub state_before: MarketState,
    pub state_after: MarketState,
    /// The strategist's choice before any guardian involvement.
    pub raw_action: Action,
    pub executed_action: Action,
    /// Verdict on the raw action.
    pub raw_verdict: Verdict,
    /// Rules the executed action breached (non-empty only for LLM_ONLY).
    pub executed_verdict: Verdict,
    pub repairs: Vec<RepairRecord>,
    pub candidates: Vec<CandidateRecord>,
    /// Estimate for the executed action, when an engine was consulted.
    pub estimate: Option<CausalEstimate>,
    pub demand: f64,
    pub profit: f64,
    pub trust: f64,
    /// The raw action would have driven the price to zero or below.
    pub catastrophic: bool,
    /// Week at which the engine was retrained, if it was this week.
    pub retrained: bool,
}

impl WeekRecord {
    pub fn violation_count(&self) -> usize {
        self.executed_verdict.violations.len()
    }

    /// Guardian repairs plus replacement rounds spent this week.
    pub fn repair_count(&self) -> usize {
        self.repairs.len()
            + self
                .candidates
                .iter()
                .map(|c| c.replacement_rounds as usize + usize::from(c.repaired_fallback))
                .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub architecture: ArchitectureKind,
    pub scenario: Bias,
    pub seed: u64,
    pub strategist: String,
    pub trust_multiplier: f64,
    pub initial_state: MarketState,
    pub records: Vec<WeekRecord>,
}

impl EpisodeLog {
    pub fn profits(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.profit).collect()
    }

    pub fn final_trust(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_state.trust, |r| r.trust)
    }

    /// Columns: `week,price,price_change_pct,ad_spend,demand,profit,trust,cumulative_profit,violations,repairs`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "week",
            "price",
            "price_change_pct",
            "ad_spend",
            "demand",
            "profit",
            "trust",
            "cumulative_profit",
            "violations",
            "repairs",
        ])?;
        for r in &self.records {
            wr.write_record([
                r.week.to_string(),
                fmt(r.state_after.price),
                fmt(r.executed_action.price_change_pct),
                fmt(r.executed_action.ad_spend),
                fmt(r.demand),
                fmt(r.profit),
                fmt(r.trust),
                fmt(r.state_after.cumulative_profit),
                r.violation_count().to_string(),
                r.repair_count().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, BenchError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Fixed six-decimal rendering keeps CSV output stable across platforms.
pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
