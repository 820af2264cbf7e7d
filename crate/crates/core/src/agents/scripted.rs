//! Deterministic stand-ins for a language-model strategist.
//!
//! Each bias has a goal move that mimics how a model fixated on that
//! framing behaves:
//!
//! - volume: cut toward $45 (below unit cost) and push ads up by $1,500;
//! - margin: +60% until the price reaches $140, then erratic moves of
//!   -5%..+25% with a small ad budget;
//! - neutral: erratic moves around $110.
//!
//! Asked for more than one hypothesis, the strategist adds a moderate step
//! in the goal's direction and a conservative near-hold with an ad ramp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bias, ScenarioContext, Strategist};
use crate::error::AgentError;
use crate::guardian::{RuleId, Verdict};
use crate::sim::{Action, MarketState};

const VOLUME_TARGET_PRICE: f64 = 45.0;
const VOLUME_AD_PUSH: f64 = 1500.0;
const MARGIN_RAISE_PCT: f64 = 60.0;
const MARGIN_RAISE_UNTIL: f64 = 140.0;
const NEUTRAL_TARGET_PRICE: f64 = 110.0;

#[derive(Debug, Clone)]
pub struct ScriptedStrategist {
    bias: Bias,
    rng: ChaCha8Rng,
    name: String,
    last_feedback: Option<String>,
}

impl ScriptedStrategist {
    pub fn new(bias: Bias, seed: u64) -> Self {
        let salt = match bias {
            Bias::Neutral => 0x11,
            Bias::Volume => 0x22,
            Bias::Margin => 0x33,
        };
        Self {
            bias,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100_0000_01b3) ^ salt),
            name: format!("scripted-{bias}"),
            last_feedback: None,
        }
    }

    pub fn bias(&self) -> Bias {
        self.bias
    }

    pub fn last_feedback(&self) -> Option<&str> {
        self.last_feedback.as_deref()
    }

    fn goal_move(&mut self, state: &MarketState) -> Action {
        let p = state.price;
        let prev = state.prev_ad_spend;
        match self.bias {
            Bias::Volume => {
                let pct = ((VOLUME_TARGET_PRICE / p - 1.0) * 100.0).clamp(-55.0, 0.0)
                    + self.rng.random_range(-2.0..=2.0);
                Action::new(pct, (prev + VOLUME_AD_PUSH).min(6000.0))
            }
            Bias::Margin => {
                let pct = if p < MARGIN_RAISE_UNTIL {
                    MARGIN_RAISE_PCT + self.rng.random_range(0.0..=5.0)
                } else {
                    self.rng.random_range(-5.0..=25.0)
                };
                Action::new(pct, 500.0 + self.rng.random_range(-100.0..=100.0))
            }
            Bias::Neutral => {
                let pct = (NEUTRAL_TARGET_PRICE / p - 1.0) * 100.0
                    + self.rng.random_range(-15.0..=15.0);
                let ad = (prev + self.rng.random_range(-500.0..=800.0)).clamp(0.0, 5500.0);
                Action::new(pct, ad)
            }
        }
    }

    fn moderate_move(&mut self, state: &MarketState, goal: &Action) -> Action {
        let pct = (goal.price_change_pct / 4.0).clamp(-10.0, 10.0)
            + self.rng.random_range(-1.0..=1.0);
        Action::new(pct, (state.prev_ad_spend + 500.0).clamp(0.0, 5000.0))
    }

    fn conservative_move(&mut self, state: &MarketState) -> Action {
        Action::new(
            self.rng.random_range(-2.0..=2.0),
            (state.prev_ad_spend + 1000.0).min(5000.0),
        )
    }
}

impl Strategist for ScriptedStrategist {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(
        &mut self,
        state: &MarketState,
        _ctx: &ScenarioContext,
        k: usize,
    ) -> Result<Vec<Action>, AgentError> {
        let goal = self.goal_move(state);
        let mut out = Vec::with_capacity(k);
        if k >= 1 {
            out.push(goal);
        }
        if k >= 2 {
            out.push(self.moderate_move(state, &goal));
        }
        if k >= 3 {
            out.push(self.conservative_move(state));
        }
        while out.len() < k {
            out.push(self.goal_move(state));
        }
        Ok(out)
    }

    fn replace(
        &mut self,
        state: &MarketState,
        _ctx: &ScenarioContext,
        rejected: &Action,
        verdict: &Verdict,
        _round: u32,
    ) -> Result<Action, AgentError> {
        let mut ad = rejected.ad_spend;
        for v in &verdict.violations {
            match v.rule_id {
                RuleId::AdSpendRange => ad = ad.clamp(0.0, v.limit.max(0.0)),
                RuleId::AdIncreaseLimit => ad = state.prev_ad_spend + v.limit,
                _ => {}
            }
        }
        let pct = if rejected.price_change_pct.is_finite() {
            rejected.price_change_pct / 2.0
        } else {
            0.0
        };
        Ok(Action::new(pct, if ad.is_finite() { ad } else { state.prev_ad_spend }))
    }

    fn feedback(&mut self, message: &str) {
        self.last_feedback = Some(message.to_string());
    }
}
