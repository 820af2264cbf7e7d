//! Strategists and the three decision architectures.
//!
//! - `LLM_ONLY` executes whatever the strategist proposes.
//! - `LLM_GUARDIAN` repairs every proposal before execution.
//! - `CHIMERA` asks for three hypotheses, replaces invalid ones, scores the
//!   survivors with the causal engine and executes the best long-term value.
//!
//! The guardian and the engine are reached through [`RuleChecker`] and
//! [`ImpactEstimator`] so tests can count who calls what.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::log::CandidateRecord;
use crate::causal::{CausalEngine, CausalEstimate, Observation};
use crate::error::{AgentError, CausalError};
use crate::guardian::{Guardian, Repair, Verdict};
use crate::sim::{Action, MarketState};

mod run;
mod scripted;

pub use run::{complete_week, execute_raw, execute_repaired, run_architecture, RunConfig};
pub use scripted::ScriptedStrategist;

/// Organisational framing of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bias {
    Neutral,
    Volume,
    Margin,
}

impl Bias {
    pub const ALL: [Bias; 3] = [Bias::Neutral, Bias::Volume, Bias::Margin];

    pub fn as_str(&self) -> &'static str {
        match self {
            Bias::Neutral => "neutral",
            Bias::Volume => "volume",
            Bias::Margin => "margin",
        }
    }

    /// The goal-oriented instruction a baseline agent receives.
    pub fn objective_text(&self) -> &'static str {
        match self {
            Bias::Neutral => "Maximize long-term sustainable profit while maintaining brand trust.",
            Bias::Volume => {
                "Our strategy prioritizes market share growth. Maximize profit through aggressive volume expansion."
            }
            Bias::Margin => {
                "Our strategy prioritizes unit economics. Maximize profit through premium pricing and margin expansion."
            }
        }
    }
}

impl fmt::Display for Bias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bias {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neutral" | "balanced" => Ok(Bias::Neutral),
            "volume" => Ok(Bias::Volume),
            "margin" => Ok(Bias::Margin),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchitectureKind {
    LlmOnly,
    LlmGuardian,
    Chimera,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [
        ArchitectureKind::Chimera,
        ArchitectureKind::LlmGuardian,
        ArchitectureKind::LlmOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchitectureKind::LlmOnly => "LLM_ONLY",
            ArchitectureKind::LlmGuardian => "LLM_GUARDIAN",
            ArchitectureKind::Chimera => "CHIMERA",
        }
    }

    /// Short name used for output directories and CLI flags.
    pub fn slug(&self) -> &'static str {
        match self {
            ArchitectureKind::LlmOnly => "llm-only",
            ArchitectureKind::LlmGuardian => "guardian",
            ArchitectureKind::Chimera => "chimera",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "llm-only" | "llm" => Ok(ArchitectureKind::LlmOnly),
            "guardian" | "llm-guardian" | "llm+guardian" => Ok(ArchitectureKind::LlmGuardian),
            "chimera" => Ok(ArchitectureKind::Chimera),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioContext {
    pub objective_text: String,
    pub bias: Bias,
    pub trust_multiplier: f64,
    pub architecture: ArchitectureKind,
}

impl ScenarioContext {
    pub fn new(bias: Bias, architecture: ArchitectureKind, trust_multiplier: f64) -> Self {
        Self {
            objective_text: bias.objective_text().to_string(),
            bias,
            trust_multiplier,
            architecture,
        }
    }

    /// CHIMERA works under a balanced mandate with the bias as context;
    /// baselines get the bias as their goal.
    pub fn balanced_mandate(&self) -> bool {
        self.architecture == ArchitectureKind::Chimera
    }
}

/// A candidate that passed validation, with its forecast attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub action: Action,
    pub verdict: Verdict,
    pub estimate: CausalEstimate,
    pub long_term_value: f64,
    /// Replacement rounds spent, used as the violation-risk tie-breaker.
    pub risk: u32,
}

/// The decision-making half of an agent.
pub trait Strategist: Send {
    fn name(&self) -> &str;

    /// Exactly `k` candidate actions.
    fn propose(
        &mut self,
        state: &MarketState,
        ctx: &ScenarioContext,
        k: usize,
    ) -> Result<Vec<Action>, AgentError>;

    /// A fresh candidate after `rejected` failed validation.
    fn replace(
        &mut self,
        state: &MarketState,
        ctx: &ScenarioContext,
        rejected: &Action,
        verdict: &Verdict,
        round: u32,
    ) -> Result<Action, AgentError>;

    /// Index of the candidate to execute.
    fn choose(
        &mut self,
        _state: &MarketState,
        _ctx: &ScenarioContext,
        candidates: &[ScoredCandidate],
    ) -> Result<usize, AgentError> {
        select_by_ltv(candidates).ok_or(AgentError::CandidateCount {
            expected: 1,
            got: 0,
        })
    }

    /// Guardian or engine messages from the last executed week.
    fn feedback(&mut self, _message: &str) {}
}

/// Highest long-term value; ties go to the lower risk, then the smaller
/// absolute price move, then the earlier candidate.
pub fn select_by_ltv(candidates: &[ScoredCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let o = &candidates[b];
                c.long_term_value > o.long_term_value
                    || (c.long_term_value == o.long_term_value
                        && (c.risk < o.risk
                            || (c.risk == o.risk
                                && c.action.price_change_pct.abs()
                                    < o.action.price_change_pct.abs())))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Rule validation and repair as seen by an architecture.
pub trait RuleChecker: Sync {
    fn validate(&self, action: &Action, state: &MarketState) -> Verdict;
    fn repair(&self, action: &Action, state: &MarketState) -> Repair;
}

impl RuleChecker for Guardian {
    fn validate(&self, action: &Action, state: &MarketState) -> Verdict {
        Guardian::validate(self, action, state)
    }

    fn repair(&self, action: &Action, state: &MarketState) -> Repair {
        Guardian::repair(self, action, state)
    }
}

/// Counterfactual forecasts as seen by an architecture.
pub trait ImpactEstimator: Send {
    fn estimate(&self, state: &MarketState, action: &Action) -> CausalEstimate;

    /// Offer new observations at `week`; returns whether the model changed.
    fn maybe_retrain(&mut self, week: u32, new: &[Observation]) -> Result<bool, CausalError>;

    fn horizon(&self) -> u32;
    fn discount(&self) -> f64;
}

/// An engine that swaps itself for its retrained successor.
#[derive(Debug, Clone)]
pub struct LiveEngine {
    engine: CausalEngine,
    pub retrain: bool,
    pub retrain_count: u32,
}

impl LiveEngine {
    pub fn new(engine: CausalEngine, retrain: bool) -> Self {
        Self {
            engine,
            retrain,
            retrain_count: 0,
        }
    }

    pub fn engine(&self) -> &CausalEngine {
        &self.engine
    }
}

impl ImpactEstimator for LiveEngine {
    fn estimate(&self, state: &MarketState, action: &Action) -> CausalEstimate {
        self.engine.estimate(state, action)
    }

    fn maybe_retrain(&mut self, week: u32, new: &[Observation]) -> Result<bool, CausalError> {
        if !self.retrain {
            return Ok(false);
        }
        match self.engine.maybe_retrain(week, new)? {
            Some(next) => {
                self.engine = next;
                self.retrain_count += 1;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn horizon(&self) -> u32 {
        self.engine.config.horizon
    }

    fn discount(&self) -> f64 {
        self.engine.config.discount
    }
}

pub(crate) fn candidate_record(c: &ScoredCandidate, proposed: Action, fallback: bool) -> CandidateRecord {
    CandidateRecord {
        proposed,
        action: c.action,
        replacement_rounds: c.risk - u32::from(fallback),
        repaired_fallback: fallback,
        estimate: c.estimate,
        long_term_value: c.long_term_value,
        chosen: false,
    }
}
