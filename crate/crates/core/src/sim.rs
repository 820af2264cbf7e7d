//! Discrete weekly e-commerce market.
//!
//! Weekly demand is a product of independent factors:
//!
//! ```text
//! Q = base_demand * f_price(p) * f_trust(trust) * f_ad(ad) * f_season(week) * noise
//! ```
//!
//! and profit is `(p - unit_cost) * Q - fixed_cost - ad`. Brand trust moves
//! after every week according to [`TrustMode`] and is clamped to
//! `trust_bounds`.
//!
//! Everything here is a pure function of its inputs. Demand noise, when
//! enabled, is drawn from a stream keyed by `(seed, week)` so that replaying
//! the same actions reproduces the same episode bit for bit.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// How brand trust responds to pricing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrustMode {
    /// Additive fairness update: `trust + eta * delta`, where `delta` is a
    /// fixed reward when the price falls or holds and a penalty proportional
    /// to the relative raise otherwise.
    #[default]
    Eq3,
    /// Multiplicative weekly rule: +3% on cuts deeper than 5%, -2% on raises
    /// above 10%, plus an advertising bonus and a constant decay.
    V5,
}

impl std::str::FromStr for TrustMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eq3" => Ok(TrustMode::Eq3),
            "v5" => Ok(TrustMode::V5),
            other => Err(format!("unknown trust mode `{other}` (expected eq3 or v5)")),
        }
    }
}

impl std::fmt::Display for TrustMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrustMode::Eq3 => "eq3",
            TrustMode::V5 => "v5",
        })
    }
}

/// Simulator parameters. Immutable once an episode starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub base_demand: f64,
    pub price_elasticity: f64,
    pub ad_log_scale: f64,
    /// Spend that makes `ln(1 + ad / ad_sat_scale)` equal to `ln 2`.
    pub ad_sat_scale: f64,
    pub seasonality_amp: f64,
    pub season_period: u32,
    pub trust_ad_gain: f64,
    pub trust_decay: f64,
    pub trust_eta: f64,
    /// Fairness reward applied (times `trust_eta`) when the price falls or holds.
    pub trust_reward: f64,
    /// Fairness penalty per unit relative raise (times `trust_eta`).
    pub trust_penalty: f64,
    /// Spend at which the V5 advertising trust bonus saturates.
    pub trust_ad_cap: f64,
    pub trust_min: f64,
    pub trust_max: f64,
    pub unit_cost: f64,
    pub fixed_cost: f64,
    pub reference_price: f64,
    pub reference_trust: f64,
    pub trust_exponent: f64,
    pub trust_mode: TrustMode,
    pub noise_sigma: f64,
    pub seed: u64,
    pub initial_price: f64,
    pub initial_trust: f64,
    pub initial_ad: f64,
}

/// Exponent that makes demand triple when trust doubles (0.4 -> 0.8).
pub fn default_trust_exponent() -> f64 {
    3f64.ln() / 2f64.ln()
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            base_demand: 800.0,
            price_elasticity: 1.2,
            ad_log_scale: 0.3,
            ad_sat_scale: 100.0,
            seasonality_amp: 0.2,
            season_period: 52,
            trust_ad_gain: 0.01,
            trust_decay: 0.002,
            trust_eta: 0.3,
            trust_reward: 0.02,
            trust_penalty: 0.1,
            trust_ad_cap: 5000.0,
            trust_min: 0.4,
            trust_max: 1.0,
            unit_cost: 50.0,
            fixed_cost: 3000.0,
            reference_price: 100.0,
            reference_trust: 0.7,
            trust_exponent: default_trust_exponent(),
            trust_mode: TrustMode::Eq3,
            noise_sigma: 0.0,
            seed: 42,
            initial_price: 100.0,
            initial_trust: 0.7,
            initial_ad: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let non_negative = [
            ("price_elasticity", self.price_elasticity),
            ("ad_log_scale", self.ad_log_scale),
            ("seasonality_amp", self.seasonality_amp),
            ("trust_ad_gain", self.trust_ad_gain),
            ("trust_decay", self.trust_decay),
            ("trust_eta", self.trust_eta),
            ("trust_reward", self.trust_reward),
            ("trust_penalty", self.trust_penalty),
            ("trust_exponent", self.trust_exponent),
            ("unit_cost", self.unit_cost),
            ("fixed_cost", self.fixed_cost),
            ("noise_sigma", self.noise_sigma),
            ("initial_ad", self.initial_ad),
        ];
        for (name, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        let positive = [
            ("base_demand", self.base_demand),
            ("ad_sat_scale", self.ad_sat_scale),
            ("trust_ad_cap", self.trust_ad_cap),
            ("reference_price", self.reference_price),
            ("reference_trust", self.reference_trust),
            ("initial_price", self.initial_price),
        ];
        for (name, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.season_period == 0 {
            return Err(SimError::InvalidConfig("season_period must be > 0".into()));
        }
        if !(self.trust_min.is_finite() && self.trust_max.is_finite())
            || self.trust_min < 0.0
            || self.trust_min >= self.trust_max
        {
            return Err(SimError::InvalidConfig(format!(
                "trust bounds must satisfy 0 <= min < max, got [{}, {}]",
                self.trust_min, self.trust_max
            )));
        }
        if !(self.trust_min..=self.trust_max).contains(&self.initial_trust) {
            return Err(SimError::InvalidConfig(format!(
                "initial_trust {} outside trust bounds",
                self.initial_trust
            )));
        }
        Ok(())
    }

    /// Week-0 state: initial price and trust, no history.
    pub fn initial_state(&self) -> MarketState {
        MarketState {
            week: 0,
            price: self.initial_price,
            trust: self.initial_trust,
            prev_ad_spend: self.initial_ad,
            cumulative_profit: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub week: u32,
    pub price: f64,
    pub trust: f64,
    pub prev_ad_spend: f64,
    pub cumulative_profit: f64,
}

/// One weekly decision: a relative price move and the week's ad budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Action {
    /// Signed percent, e.g. `-10.0` for a 10% discount.
    #[serde(alias = "price_change")]
    pub price_change_pct: f64,
    pub ad_spend: f64,
}

impl Action {
    pub fn new(price_change_pct: f64, ad_spend: f64) -> Self {
        Self {
            price_change_pct,
            ad_spend,
        }
    }

    /// The reference action for `state`: hold price and ad spend.
    pub fn hold(state: &MarketState) -> Self {
        Self::new(0.0, state.prev_ad_spend)
    }

    pub fn is_finite(&self) -> bool {
        self.price_change_pct.is_finite() && self.ad_spend.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandFactors {
    pub price_factor: f64,
    pub trust_factor: f64,
    pub ad_factor: f64,
    pub season_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Price charged this week, after the action was applied.
    pub price: f64,
    pub demand: f64,
    pub revenue: f64,
    pub profit: f64,
    pub trust_after: f64,
    pub factors: DemandFactors,
}

/// `1 + amp * sin(2 pi week / period)`. The week is reduced modulo the
/// period first, so periodicity holds exactly.
pub fn season_factor(week: u32, cfg: &SimConfig) -> f64 {
    let period = cfg.season_period.max(1);
    let phase = (week % period) as f64 / period as f64;
    1.0 + cfg.seasonality_amp * (2.0 * PI * phase).sin()
}

/// Constant-elasticity response `(reference_price / price)^elasticity`.
pub fn price_factor(price: f64, cfg: &SimConfig) -> Result<f64, SimError> {
    if !(price.is_finite() && price > 0.0) {
        return Err(SimError::NonPositivePrice(price));
    }
    Ok((cfg.reference_price / price).powf(cfg.price_elasticity))
}

pub fn trust_factor(trust: f64, cfg: &SimConfig) -> Result<f64, SimError> {
    if !(trust >= cfg.trust_min && trust <= cfg.trust_max) {
        return Err(SimError::TrustOutOfBounds {
            trust,
            min: cfg.trust_min,
            max: cfg.trust_max,
        });
    }
    Ok((trust / cfg.reference_trust).powf(cfg.trust_exponent))
}

/// Logarithmic advertising lift, 1 at zero spend.
pub fn ad_factor(ad_spend: f64, cfg: &SimConfig) -> Result<f64, SimError> {
    if !(ad_spend.is_finite() && ad_spend >= 0.0) {
        return Err(SimError::NegativeAdSpend(ad_spend));
    }
    Ok(1.0 + cfg.ad_log_scale * (ad_spend / cfg.ad_sat_scale).ln_1p())
}

/// Multiplicative demand noise for `week`; exactly 1 when `noise_sigma == 0`.
///
/// Lognormal with unit mean.
pub fn demand_noise(week: u32, cfg: &SimConfig) -> f64 {
    if cfg.noise_sigma == 0.0 {
        return 1.0;
    }
    let stream = cfg.seed ^ (u64::from(week).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let z: f64 = StandardNormal.sample(&mut rng);
    let s = cfg.noise_sigma;
    (s * z - 0.5 * s * s).exp()
}

/// Demand at the given (already applied) price and spend.
pub fn demand(
    price: f64,
    trust: f64,
    ad_spend: f64,
    week: u32,
    cfg: &SimConfig,
) -> Result<(f64, DemandFactors), SimError> {
    let factors = DemandFactors {
        price_factor: price_factor(price, cfg)?,
        trust_factor: trust_factor(trust, cfg)?,
        ad_factor: ad_factor(ad_spend, cfg)?,
        season_factor: season_factor(week, cfg),
    };
    let mut q = cfg.base_demand
        * factors.price_factor
        * factors.trust_factor
        * factors.ad_factor
        * factors.season_factor;
    if cfg.noise_sigma > 0.0 {
        q *= demand_noise(week, cfg);
    }
    Ok((q.max(0.0), factors))
}

pub fn profit(price: f64, quantity: f64, ad_spend: f64, cfg: &SimConfig) -> f64 {
    (price - cfg.unit_cost) * quantity - cfg.fixed_cost - ad_spend
}

/// Price after applying a percent change. Shared by the simulator and the
/// guardian so both see the same rounding.
pub fn apply_price_change(price: f64, pct: f64) -> f64 {
    price * (1.0 + pct / 100.0)
}

pub fn trust_update(state: &MarketState, action: &Action, cfg: &SimConfig) -> f64 {
    let pct = if action.price_change_pct.is_finite() {
        action.price_change_pct
    } else {
        0.0
    };
    let next = match cfg.trust_mode {
        TrustMode::Eq3 => {
            let delta = if pct <= 0.0 {
                cfg.trust_reward
            } else {
                -cfg.trust_penalty * (pct / 100.0)
            };
            state.trust + cfg.trust_eta * delta
        }
        TrustMode::V5 => {
            let mut t = state.trust;
            if pct < -5.0 {
                t *= 1.03;
            } else if pct > 10.0 {
                t *= 0.98;
            }
            let ad = if action.ad_spend.is_finite() {
                action.ad_spend.max(0.0)
            } else {
                0.0
            };
            t + cfg.trust_ad_gain * (ad / cfg.trust_ad_cap).min(1.0) - cfg.trust_decay
        }
    };
    if next.is_nan() {
        return cfg.trust_min;
    }
    next.clamp(cfg.trust_min, cfg.trust_max)
}

/// Advance one week.
///
/// Demand and profit are computed at the new price with the trust level in
/// force at the start of the week; trust is updated afterwards.
pub fn step(
    state: &MarketState,
    action: &Action,
    cfg: &SimConfig,
) -> Result<(MarketState, StepOutcome), SimError> {
    if !action.is_finite() {
        return Err(SimError::NonFiniteAction);
    }
    let price = apply_price_change(state.price, action.price_change_pct);
    let (q, factors) = demand(price, state.trust, action.ad_spend, state.week, cfg)?;
    let pi = profit(price, q, action.ad_spend, cfg);
    let trust_after = trust_update(state, action, cfg);
    let next = MarketState {
        week: state.week + 1,
        price,
        trust: trust_after,
        prev_ad_spend: action.ad_spend,
        cumulative_profit: state.cumulative_profit + pi,
    };
    let outcome = StepOutcome {
        price,
        demand: q,
        revenue: price * q,
        profit: pi,
        trust_after,
        factors,
    };
    Ok((next, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn season_factor_examples() {
        let c = cfg();
        assert_eq!(season_factor(0, &c), 1.0);
        assert!((season_factor(13, &c) - 1.2).abs() < 1e-12);
        assert_eq!(season_factor(65, &c), season_factor(13, &c));
    }

    #[test]
    fn price_factor_examples() {
        let c = cfg();
        assert_eq!(price_factor(100.0, &c).unwrap(), 1.0);
        // 2^1.2 and 0.5^1.2 to 4 decimals.
        assert!((price_factor(50.0, &c).unwrap() - 2.297_396_710).abs() < 1e-8);
        assert!((price_factor(200.0, &c).unwrap() - 0.435_275_282).abs() < 1e-8);
        assert!(matches!(
            price_factor(0.0, &c),
            Err(SimError::NonPositivePrice(_))
        ));
        assert!(price_factor(-3.0, &c).is_err());
    }

    #[test]
    fn trust_factor_examples() {
        let c = cfg();
        assert_eq!(trust_factor(0.7, &c).unwrap(), 1.0);
        let r = trust_factor(0.8, &c).unwrap() / trust_factor(0.4, &c).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        // 1.5^(ln3/ln2) = 1.90150749...
        let r = trust_factor(0.6, &c).unwrap() / trust_factor(0.4, &c).unwrap();
        assert!((r - 1.901_507_498).abs() < 1e-8);
        assert!(trust_factor(0.39, &c).is_err());
        assert!(trust_factor(1.01, &c).is_err());
    }

    #[test]
    fn ad_factor_examples() {
        let c = cfg();
        assert_eq!(ad_factor(0.0, &c).unwrap(), 1.0);
        assert!((ad_factor(500.0, &c).unwrap() - 1.537_527_841).abs() < 1e-8);
        let late = ad_factor(5000.0, &c).unwrap() - ad_factor(4500.0, &c).unwrap();
        let early = ad_factor(500.0, &c).unwrap() - ad_factor(0.0, &c).unwrap();
        assert!(late < early);
        assert!(ad_factor(-1.0, &c).is_err());
    }

    #[test]
    fn unit_factors_give_base_demand() {
        let c = cfg();
        let (q, _) = demand(100.0, 0.7, 0.0, 0, &c).unwrap();
        assert_eq!(q, 800.0);
    }

    #[test]
    fn trust_update_examples() {
        let c = cfg();
        let s = c.initial_state();
        let t = trust_update(&s, &Action::new(0.0, 0.0), &c);
        assert!((t - 0.706).abs() < 1e-12);
        let t = trust_update(&s, &Action::new(20.0, 0.0), &c);
        assert!((t - 0.694).abs() < 1e-12);
    }

    #[test]
    fn v5_trust_rules() {
        let c = SimConfig {
            trust_mode: TrustMode::V5,
            ..cfg()
        };
        let s = c.initial_state();
        let cut = trust_update(&s, &Action::new(-10.0, 0.0), &c);
        assert!((cut - (0.7 * 1.03 - 0.002)).abs() < 1e-12);
        let raise = trust_update(&s, &Action::new(15.0, 5000.0), &c);
        assert!((raise - (0.7 * 0.98 + 0.01 - 0.002)).abs() < 1e-12);
        let flat = trust_update(&s, &Action::new(3.0, 2500.0), &c);
        assert!((flat - (0.7 + 0.005 - 0.002)).abs() < 1e-12);
    }

    #[test]
    fn profit_examples() {
        let c = cfg();
        assert_eq!(profit(80.0, 0.0, 0.0, &c), -3000.0);
        assert_eq!(profit(100.0, 800.0, 1000.0, &c), 36_000.0);
        assert_eq!(profit(50.0, 1234.5, 0.0, &c), -3000.0);
    }

    #[test]
    fn step_basics() {
        let c = cfg();
        let s = c.initial_state();
        let (next, out) = step(&s, &Action::new(0.0, 0.0), &c).unwrap();
        assert_eq!(next.price, s.price);
        assert_eq!(next.week, 1);
        assert_eq!(out.demand, 800.0);
        assert_eq!(next.cumulative_profit, out.profit);
        assert!(matches!(
            step(&s, &Action::new(-100.0, 0.0), &c),
            Err(SimError::NonPositivePrice(_))
        ));
        assert!(matches!(
            step(&s, &Action::new(f64::NAN, 0.0), &c),
            Err(SimError::NonFiniteAction)
        ));
    }

    #[test]
    fn noise_is_keyed_by_week() {
        let c = SimConfig {
            noise_sigma: 0.1,
            ..cfg()
        };
        assert_eq!(demand_noise(3, &c), demand_noise(3, &c));
        assert_ne!(demand_noise(3, &c), demand_noise(4, &c));
        assert_eq!(demand_noise(3, &cfg()), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = SimConfig {
            trust_min: 1.0,
            trust_max: 0.4,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            base_demand: 0.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            season_period: 0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }
}
