use super::{
    candidate_record, ArchitectureKind, ImpactEstimator, RuleChecker, ScenarioContext,
    ScoredCandidate, Strategist,
};
use crate::bench::log::{EpisodeLog, WeekRecord};
use crate::causal::engine::{observations_from_trajectory, TrajectoryStep};
use crate::error::AgentError;
use crate::guardian::{validate_action, ConstraintSet, Repair, RepairRecord};
use crate::sim::{self, Action, MarketState, SimConfig, StepOutcome};

/// Smallest price the simulator is allowed to reach.
const PRICE_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weeks: u32,
    pub sim: SimConfig,
    /// Rules used to audit executed actions, whatever the architecture.
    pub constraints: ConstraintSet,
    /// Hypotheses per CHIMERA week.
    pub candidates: usize,
    /// Replacement rounds before falling back to the guardian's repair.
    pub max_replacements: u32,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            weeks: 52,
            sim: SimConfig::default(),
            constraints: ConstraintSet::default(),
            candidates: 3,
            max_replacements: 3,
            seed: 42,
        }
    }
}

/// Run one episode of `kind`.
///
/// `checker` is required for `LLM_GUARDIAN` and `CHIMERA`, `engine` for
/// `CHIMERA`. Components an architecture does not use are never called.
pub fn run_architecture(
    kind: ArchitectureKind,
    strategist: &mut dyn Strategist,
    ctx: &ScenarioContext,
    cfg: &RunConfig,
    checker: Option<&dyn RuleChecker>,
    mut engine: Option<&mut dyn ImpactEstimator>,
) -> Result<EpisodeLog, AgentError> {
    cfg.sim.validate()?;
    if kind != ArchitectureKind::LlmOnly && checker.is_none() {
        return Err(AgentError::MissingGuardian(kind.as_str()));
    }
    if kind == ArchitectureKind::Chimera && engine.is_none() {
        return Err(AgentError::MissingEngine(kind.as_str()));
    }
    if kind == ArchitectureKind::Chimera && cfg.candidates == 0 {
        return Err(AgentError::CandidateCount {
            expected: 1,
            got: 0,
        });
    }

    let initial = cfg.sim.initial_state();
    let mut state = initial;
    let mut records = Vec::with_capacity(cfg.weeks as usize);
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut used_obs = 0usize;

    for _ in 0..cfg.weeks {
        let mut week = match kind {
            ArchitectureKind::LlmOnly => llm_only_week(strategist, ctx, cfg, &state)?,
            ArchitectureKind::LlmGuardian => {
                guardian_week(strategist, ctx, cfg, &state, checker.expect("checked above"))?
            }
            ArchitectureKind::Chimera => chimera_week(
                strategist,
                ctx,
                cfg,
                &state,
                checker.expect("checked above"),
                engine.as_deref_mut().expect("checked above"),
            )?,
        };

        let (next, _) = complete_week(&mut week, &state, &cfg.sim)?;

        if let (ArchitectureKind::Chimera, Some(engine)) = (kind, engine.as_deref_mut()) {
            steps.push(TrajectoryStep {
                state,
                action: week.executed_action,
                profit: week.profit,
                trust_after: week.trust,
            });
            let obs = observations_from_trajectory(
                &steps,
                engine.horizon(),
                engine.discount(),
                cfg.sim.season_period,
            );
            if engine.maybe_retrain(next.week, &obs[used_obs..])? {
                used_obs = obs.len();
                week.retrained = true;
            }
        }

        records.push(week);
        state = next;
    }

    Ok(EpisodeLog {
        architecture: kind,
        scenario: ctx.bias,
        seed: cfg.seed,
        strategist: strategist.name().to_string(),
        trust_multiplier: ctx.trust_multiplier,
        initial_state: initial,
        records,
    })
}

fn blank_record(state: &MarketState, raw: Action, cs: &ConstraintSet) -> WeekRecord {
    let verdict = validate_action(&raw, state, cs);
    WeekRecord {
        week: state.week + 1,
        state_before: *state,
        state_after: *state,
        raw_action: raw,
        executed_action: raw,
        raw_verdict: verdict.clone(),
        executed_verdict: verdict,
        repairs: Vec::new(),
        candidates: Vec::new(),
        estimate: None,
        demand: 0.0,
        profit: 0.0,
        trust: state.trust,
        catastrophic: false,
        retrained: false,
    }
}

fn single_proposal(
    strategist: &mut dyn Strategist,
    ctx: &ScenarioContext,
    state: &MarketState,
) -> Result<Action, AgentError> {
    let mut p = strategist.propose(state, ctx, 1)?;
    if p.len() != 1 {
        return Err(AgentError::CandidateCount {
            expected: 1,
            got: p.len(),
        });
    }
    Ok(p.remove(0))
}

fn llm_only_week(
    strategist: &mut dyn Strategist,
    ctx: &ScenarioContext,
    cfg: &RunConfig,
    state: &MarketState,
) -> Result<WeekRecord, AgentError> {
    let raw = single_proposal(strategist, ctx, state)?;
    Ok(execute_raw(state, raw, &cfg.constraints))
}

/// Week record for an unguarded action. Non-finite fields and price moves
/// that would reach zero are clamped and the week is flagged catastrophic;
/// rule breaches are recorded but not prevented.
pub fn execute_raw(state: &MarketState, raw: Action, cs: &ConstraintSet) -> WeekRecord {
    let mut rec = blank_record(state, raw, cs);
    let mut exec = raw;
    if !exec.price_change_pct.is_finite() {
        exec.price_change_pct = 0.0;
        rec.catastrophic = true;
    }
    if !exec.ad_spend.is_finite() || exec.ad_spend < 0.0 {
        exec.ad_spend = 0.0;
        rec.catastrophic = true;
    }
    if !(sim::apply_price_change(state.price, exec.price_change_pct) > 0.0) {
        exec.price_change_pct = (PRICE_EPSILON / state.price - 1.0) * 100.0;
        rec.catastrophic = true;
    }
    rec.executed_action = exec;
    rec.executed_verdict = validate_action(&exec, state, cs);
    rec
}

/// Week record for an action routed through the guardian's repair.
pub fn execute_repaired(
    state: &MarketState,
    raw: Action,
    checker: &dyn RuleChecker,
    cs: &ConstraintSet,
) -> (WeekRecord, Repair) {
    let mut rec = blank_record(state, raw, cs);
    rec.raw_verdict = checker.validate(&raw, state);
    let repair = checker.repair(&raw, state);
    rec.executed_action = repair.safe_action;
    rec.executed_verdict = validate_action(&repair.safe_action, state, cs);
    rec.repairs = repair.repairs.clone();
    (rec, repair)
}

/// Step the market with the record's executed action and fill in the
/// outcome fields.
pub fn complete_week(
    rec: &mut WeekRecord,
    state: &MarketState,
    cfg: &SimConfig,
) -> Result<(MarketState, StepOutcome), AgentError> {
    let (next, out) = sim::step(state, &rec.executed_action, cfg)?;
    rec.state_after = next;
    rec.demand = out.demand;
    rec.profit = out.profit;
    rec.trust = out.trust_after;
    Ok((next, out))
}

fn guardian_week(
    strategist: &mut dyn Strategist,
    ctx: &ScenarioContext,
    cfg: &RunConfig,
    state: &MarketState,
    checker: &dyn RuleChecker,
) -> Result<WeekRecord, AgentError> {
    let raw = single_proposal(strategist, ctx, state)?;
    let (rec, repair) = execute_repaired(state, raw, checker, &cfg.constraints);
    if repair.changed() {
        strategist.feedback(&repair.message);
    }
    Ok(rec)
}

fn chimera_week(
    strategist: &mut dyn Strategist,
    ctx: &ScenarioContext,
    cfg: &RunConfig,
    state: &MarketState,
    checker: &dyn RuleChecker,
    engine: &mut dyn ImpactEstimator,
) -> Result<WeekRecord, AgentError> {
    let k = cfg.candidates;
    let proposals = strategist.propose(state, ctx, k)?;
    if proposals.len() != k {
        return Err(AgentError::CandidateCount {
            expected: k,
            got: proposals.len(),
        });
    }

    let mut scored = Vec::with_capacity(k);
    let mut meta: Vec<(Action, bool, Vec<RepairRecord>)> = Vec::with_capacity(k);
    for proposed in &proposals {
        let mut current = *proposed;
        let mut verdict = checker.validate(&current, state);
        let mut rounds = 0;
        while !verdict.is_valid && rounds < cfg.max_replacements {
            rounds += 1;
            current = strategist.replace(state, ctx, &current, &verdict, rounds)?;
            verdict = checker.validate(&current, state);
        }
        let mut fallback = false;
        let mut repairs = Vec::new();
        if !verdict.is_valid {
            let repair = checker.repair(proposed, state);
            current = repair.safe_action;
            repairs = repair.repairs;
            verdict = checker.validate(&current, state);
            fallback = true;
        }
        let estimate = engine.estimate(state, &current);
        let ltv = crate::causal::long_term_value(&estimate, ctx.trust_multiplier);
        scored.push(ScoredCandidate {
            action: current,
            verdict,
            estimate,
            long_term_value: ltv,
            risk: rounds + u32::from(fallback),
        });
        meta.push((*proposed, fallback, repairs));
    }

    let chosen = strategist.choose(state, ctx, &scored)?;
    if chosen >= scored.len() {
        return Err(AgentError::Strategist(format!(
            "chose candidate {chosen} of {}",
            scored.len()
        )));
    }

    let pick = &scored[chosen];
    let mut rec = blank_record(state, meta[chosen].0, &cfg.constraints);
    rec.raw_verdict = checker.validate(&meta[chosen].0, state);
    rec.executed_action = pick.action;
    rec.executed_verdict = validate_action(&pick.action, state, &cfg.constraints);
    rec.repairs = meta[chosen].2.clone();
    rec.estimate = Some(pick.estimate);
    rec.candidates = scored
        .iter()
        .zip(&meta)
        .enumerate()
        .map(|(i, (c, (proposed, fallback, _)))| {
            let mut r = candidate_record(c, *proposed, *fallback);
            r.chosen = i == chosen;
            r
        })
        .collect();
    strategist.feedback(&format!(
        "executed {:+.2}% price change with ad spend {:.2}; forecast profit {:+.2}, trust {:+.4}",
        pick.action.price_change_pct,
        pick.action.ad_spend,
        pick.estimate.profit_change,
        pick.estimate.trust_change
    ));
    Ok(rec)
}
