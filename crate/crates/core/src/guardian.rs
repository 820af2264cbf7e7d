//! Hard business rules over (state, action) pairs.
//!
//! [`validate_action`] reports every rule an action breaks. [`repair_action`]
//! projects an action onto the feasible set by per-axis clamping, in this
//! order:
//!
//! 1. clip the price change to `[-max_discount_pct, +max_increase_pct]`;
//! 2. apply it to the current price;
//! 3. cap the result at `max_price`;
//! 4. raise it to [`min_safe_price`] if it fell below;
//! 5. clamp ad spend to `[0, ad_cap]`;
//! 6. limit the week-over-week ad increase to `ad_increase_cap`.
//!
//! Floor beats ceiling beats rate limit, which is why the floor is applied
//! last. For a state whose price is already inside `[min_safe_price,
//! max_price]` every repaired action validates.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::sim::{apply_price_change, Action, MarketState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginBasis {
    /// Margin measured on price: `price >= cost / (1 - min_margin)`.
    #[default]
    OnPrice,
    /// Markup measured on cost: `price >= cost * (1 + min_margin)`.
    OnCost,
}

impl std::str::FromStr for MarginBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "on_price" => Ok(MarginBasis::OnPrice),
            "on_cost" => Ok(MarginBasis::OnCost),
            other => Err(format!(
                "unknown margin basis `{other}` (expected on_price or on_cost)"
            )),
        }
    }
}

impl std::fmt::Display for MarginBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarginBasis::OnPrice => "on_price",
            MarginBasis::OnCost => "on_cost",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSet {
    pub unit_cost: f64,
    pub cost_buffer: f64,
    pub min_margin: f64,
    pub margin_basis: MarginBasis,
    pub safety_buffer: f64,
    pub max_price: f64,
    pub ad_cap: f64,
    pub ad_increase_cap: f64,
    pub max_discount_pct: f64,
    pub max_increase_pct: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            unit_cost: 50.0,
            cost_buffer: 1.1,
            min_margin: 0.15,
            margin_basis: MarginBasis::OnPrice,
            safety_buffer: 0.01,
            max_price: 150.0,
            ad_cap: 5000.0,
            ad_increase_cap: 1000.0,
            max_discount_pct: 40.0,
            max_increase_pct: 50.0,
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("unit_cost", self.unit_cost),
            ("cost_buffer", self.cost_buffer),
            ("max_price", self.max_price),
            ("ad_cap", self.ad_cap),
            ("ad_increase_cap", self.ad_increase_cap),
            ("max_discount_pct", self.max_discount_pct),
            ("max_increase_pct", self.max_increase_pct),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(ConfigError::Constraints(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.min_margin) {
            return Err(ConfigError::Constraints(format!(
                "min_margin must lie in [0, 1), got {}",
                self.min_margin
            )));
        }
        if !self.safety_buffer.is_finite() || self.safety_buffer < 0.0 {
            return Err(ConfigError::Constraints(format!(
                "safety_buffer must be non-negative, got {}",
                self.safety_buffer
            )));
        }
        if self.max_discount_pct >= 100.0 {
            return Err(ConfigError::Constraints(
                "max_discount_pct must be below 100".into(),
            ));
        }
        let floor = min_safe_price(self);
        if floor >= self.max_price {
            return Err(ConfigError::Constraints(format!(
                "min safe price {floor:.4} is not below max_price {}",
                self.max_price
            )));
        }
        Ok(())
    }
}

/// Lowest price the guardian accepts:
/// `max(cost * cost_buffer, margin_floor) * (1 + safety_buffer)`.
pub fn min_safe_price(cs: &ConstraintSet) -> f64 {
    let margin_floor = match cs.margin_basis {
        MarginBasis::OnPrice => cs.unit_cost / (1.0 - cs.min_margin),
        MarginBasis::OnCost => cs.unit_cost * (1.0 + cs.min_margin),
    };
    (cs.unit_cost * cs.cost_buffer).max(margin_floor) * (1.0 + cs.safety_buffer)
}

/// Rules in the order they are checked and reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    NonFiniteAction,
    PriceChangeLimit,
    MarginFloor,
    PriceCap,
    AdSpendRange,
    AdIncreaseLimit,
}

impl RuleId {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleId::NonFiniteAction => "non_finite_action",
            RuleId::PriceChangeLimit => "price_change_limit",
            RuleId::MarginFloor => "margin_floor",
            RuleId::PriceCap => "price_cap",
            RuleId::AdSpendRange => "ad_spend_range",
            RuleId::AdIncreaseLimit => "ad_increase_limit",
        }
    }
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: RuleId,
    pub observed: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub is_valid: bool,
    pub violations: Vec<Violation>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub rule_id: RuleId,
    pub original: f64,
    pub repaired: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub safe_action: Action,
    pub repairs: Vec<RepairRecord>,
    pub message: String,
}

impl Repair {
    pub fn changed(&self) -> bool {
        !self.repairs.is_empty()
    }
}

/// Check `action` against every rule. All violations are returned, in
/// [`RuleId`] order.
pub fn validate_action(action: &Action, state: &MarketState, cs: &ConstraintSet) -> Verdict {
    let mut violations = Vec::new();
    if !action.is_finite() {
        violations.push(Violation {
            rule_id: RuleId::NonFiniteAction,
            observed: f64::NAN,
            limit: f64::NAN,
        });
        return finish(violations);
    }

    let pct = action.price_change_pct;
    if pct < -cs.max_discount_pct {
        violations.push(Violation {
            rule_id: RuleId::PriceChangeLimit,
            observed: pct,
            limit: -cs.max_discount_pct,
        });
    } else if pct > cs.max_increase_pct {
        violations.push(Violation {
            rule_id: RuleId::PriceChangeLimit,
            observed: pct,
            limit: cs.max_increase_pct,
        });
    }

    let price = apply_price_change(state.price, pct);
    let floor = min_safe_price(cs);
    if !(price >= floor) {
        violations.push(Violation {
            rule_id: RuleId::MarginFloor,
            observed: price,
            limit: floor,
        });
    }
    if price > cs.max_price {
        violations.push(Violation {
            rule_id: RuleId::PriceCap,
            observed: price,
            limit: cs.max_price,
        });
    }

    let ad = action.ad_spend;
    if ad < 0.0 {
        violations.push(Violation {
            rule_id: RuleId::AdSpendRange,
            observed: ad,
            limit: 0.0,
        });
    } else if ad > cs.ad_cap {
        violations.push(Violation {
            rule_id: RuleId::AdSpendRange,
            observed: ad,
            limit: cs.ad_cap,
        });
    }
    if ad - state.prev_ad_spend > cs.ad_increase_cap {
        violations.push(Violation {
            rule_id: RuleId::AdIncreaseLimit,
            observed: ad - state.prev_ad_spend,
            limit: cs.ad_increase_cap,
        });
    }
    finish(violations)
}

fn finish(violations: Vec<Violation>) -> Verdict {
    let message = if violations.is_empty() {
        "action satisfies all business rules".to_string()
    } else {
        let parts: Vec<String> = violations.iter().map(describe_violation).collect();
        format!("action rejected: {}", parts.join("; "))
    };
    Verdict {
        is_valid: violations.is_empty(),
        violations,
        message,
    }
}

fn describe_violation(v: &Violation) -> String {
    match v.rule_id {
        RuleId::NonFiniteAction => "action has a non-finite field".into(),
        RuleId::PriceChangeLimit => format!(
            "price change {:+.2}% exceeds the weekly limit {:+.2}%",
            v.observed, v.limit
        ),
        RuleId::MarginFloor => format!(
            "resulting price {:.2} is below the minimum safe price {:.2}",
            v.observed, v.limit
        ),
        RuleId::PriceCap => format!(
            "resulting price {:.2} exceeds the price cap {:.2}",
            v.observed, v.limit
        ),
        RuleId::AdSpendRange => format!(
            "ad spend {:.2} outside [0, {:.2}]",
            v.observed,
            v.limit.max(0.0)
        ),
        RuleId::AdIncreaseLimit => format!(
            "ad increase {:.2} exceeds the weekly limit {:.2}",
            v.observed, v.limit
        ),
    }
}

/// Which repair stages run. Everything is on in production; the model
/// checker switches stages off to confirm it notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPipeline {
    pub clip_price_change: bool,
    pub cap_price: bool,
    pub floor_price: bool,
    pub clamp_ad_range: bool,
    pub limit_ad_increase: bool,
}

impl Default for RepairPipeline {
    fn default() -> Self {
        Self {
            clip_price_change: true,
            cap_price: true,
            floor_price: true,
            clamp_ad_range: true,
            limit_ad_increase: true,
        }
    }
}

pub fn repair_action(action: &Action, state: &MarketState, cs: &ConstraintSet) -> Repair {
    repair_with(action, state, cs, &RepairPipeline::default())
}

/// [`repair_action`] with selectable stages.
pub fn repair_with(
    action: &Action,
    state: &MarketState,
    cs: &ConstraintSet,
    pipeline: &RepairPipeline,
) -> Repair {
    let mut repairs = Vec::new();
    let safe_action = repair_into(action, state, cs, pipeline, Some(&mut repairs));
    let message = if repairs.is_empty() {
        "no repair needed".to_string()
    } else {
        let parts: Vec<String> = repairs.iter().map(describe_repair).collect();
        format!("action repaired: {}", parts.join("; "))
    };
    Repair {
        safe_action,
        repairs,
        message,
    }
}

/// The repaired action alone, without records or messages.
pub fn safe_action_with(
    action: &Action,
    state: &MarketState,
    cs: &ConstraintSet,
    pipeline: &RepairPipeline,
) -> Action {
    repair_into(action, state, cs, pipeline, None)
}

fn repair_into(
    action: &Action,
    state: &MarketState,
    cs: &ConstraintSet,
    pipeline: &RepairPipeline,
    mut log: Option<&mut Vec<RepairRecord>>,
) -> Action {
    let mut record = |rule_id, original, repaired| {
        if let Some(log) = log.as_deref_mut() {
            log.push(RepairRecord {
                rule_id,
                original,
                repaired,
            });
        }
    };
    let p = state.price;

    let mut pct = action.price_change_pct;
    if !pct.is_finite() {
        record(RuleId::NonFiniteAction, pct, 0.0);
        pct = 0.0;
    }
    if pipeline.clip_price_change {
        let clipped = pct.clamp(-cs.max_discount_pct, cs.max_increase_pct);
        if clipped != pct {
            record(RuleId::PriceChangeLimit, pct, clipped);
            pct = clipped;
        }
    }

    let adjusted = apply_price_change(p, pct);
    let floor = min_safe_price(cs);
    let mut target = adjusted;
    if pipeline.cap_price && target > cs.max_price {
        record(RuleId::PriceCap, target, cs.max_price);
        target = cs.max_price;
    }
    if pipeline.floor_price && target < floor {
        record(RuleId::MarginFloor, target, floor);
        target = floor;
    }
    if target != adjusted {
        pct = pct_reaching(p, target, floor, cs.max_price, pipeline);
    }

    let mut ad = action.ad_spend;
    if !ad.is_finite() {
        let fallback = state.prev_ad_spend.clamp(0.0, cs.ad_cap);
        record(RuleId::NonFiniteAction, ad, fallback);
        ad = fallback;
    }
    if pipeline.clamp_ad_range {
        let clamped = ad.clamp(0.0, cs.ad_cap);
        if clamped != ad {
            record(RuleId::AdSpendRange, ad, clamped);
            ad = clamped;
        }
    }
    if pipeline.limit_ad_increase && ad - state.prev_ad_spend > cs.ad_increase_cap {
        let mut limited = state.prev_ad_spend + cs.ad_increase_cap;
        // prev + cap can round up past the cap; step down until it holds.
        while limited - state.prev_ad_spend > cs.ad_increase_cap {
            limited = limited.next_down();
        }
        let limited = limited.max(0.0);
        record(RuleId::AdIncreaseLimit, ad, limited);
        ad = limited;
    }
    Action::new(pct, ad)
}

/// Percent change that lands `price` on `target`, nudged by ulps so that
/// [`apply_price_change`] stays inside `[floor, max_price]` for the enabled
/// stages.
fn pct_reaching(
    price: f64,
    target: f64,
    floor: f64,
    max_price: f64,
    pipeline: &RepairPipeline,
) -> f64 {
    let mut pct = (target / price - 1.0) * 100.0;
    if pipeline.floor_price {
        while apply_price_change(price, pct) < floor {
            pct = pct.next_up();
        }
    }
    if pipeline.cap_price {
        while apply_price_change(price, pct) > max_price {
            pct = pct.next_down();
        }
    }
    pct
}

fn describe_repair(r: &RepairRecord) -> String {
    match r.rule_id {
        RuleId::NonFiniteAction => format!("replaced non-finite value with {:.2}", r.repaired),
        RuleId::PriceChangeLimit => format!(
            "price change clipped from {:+.2}% to {:+.2}%",
            r.original, r.repaired
        ),
        RuleId::PriceCap => format!(
            "price capped from {:.2} to {:.2}",
            r.original, r.repaired
        ),
        RuleId::MarginFloor => format!(
            "price raised from {:.2} to the minimum safe price {:.2}",
            r.original, r.repaired
        ),
        RuleId::AdSpendRange => format!(
            "ad spend clamped from {:.2} to {:.2}",
            r.original, r.repaired
        ),
        RuleId::AdIncreaseLimit => format!(
            "ad spend limited from {:.2} to {:.2}",
            r.original, r.repaired
        ),
    }
}

/// A constraint set bundled with its repair pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Guardian {
    pub constraints: ConstraintSet,
    pub pipeline: RepairPipeline,
}

impl Guardian {
    pub fn new(constraints: ConstraintSet) -> Self {
        Self {
            constraints,
            pipeline: RepairPipeline::default(),
        }
    }

    pub fn validate(&self, action: &Action, state: &MarketState) -> Verdict {
        validate_action(action, state, &self.constraints)
    }

    pub fn repair(&self, action: &Action, state: &MarketState) -> Repair {
        repair_with(action, state, &self.constraints, &self.pipeline)
    }

    pub fn min_safe_price(&self) -> f64 {
        min_safe_price(&self.constraints)
    }
}
