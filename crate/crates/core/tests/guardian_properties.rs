use chimera_core::guardian::{
    min_safe_price, repair_action, validate_action, ConstraintSet, MarginBasis, RuleId,
};
use chimera_core::sim::{Action, MarketState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn in_band_state(rng: &mut ChaCha8Rng, cs: &ConstraintSet) -> MarketState {
    MarketState {
        week: rng.random_range(0..52),
        price: rng.random_range(min_safe_price(cs)..=cs.max_price),
        trust: rng.random_range(0.4..=1.0),
        prev_ad_spend: rng.random_range(0.0..=cs.ad_cap),
        cumulative_profit: 0.0,
    }
}

fn wild_action(rng: &mut ChaCha8Rng) -> Action {
    let pct = match rng.random_range(0..10) {
        0 => rng.random_range(-1e6..1e6),
        1 => -cs_edge(rng),
        2 => cs_edge(rng),
        _ => rng.random_range(-99.0..200.0),
    };
    let ad = match rng.random_range(0..6) {
        0 => rng.random_range(-1e7..1e7),
        1 => rng.random_range(-100.0..0.0),
        _ => rng.random_range(0.0..12_000.0),
    };
    Action::new(pct, ad)
}

fn cs_edge(rng: &mut ChaCha8Rng) -> f64 {
    [40.0, 50.0][rng.random_range(0..2)] + rng.random_range(-1e-9..1e-9)
}

#[test]
fn repaired_actions_validate_and_repair_is_idempotent() {
    let cs = ConstraintSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..100_000 {
        let s = in_band_state(&mut rng, &cs);
        let a = wild_action(&mut rng);
        let r = repair_action(&a, &s, &cs);
        if !validate_action(&r.safe_action, &s, &cs).is_valid {
            failures += 1;
            continue;
        }
        let again = repair_action(&r.safe_action, &s, &cs);
        if again.safe_action != r.safe_action || again.changed() {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn valid_actions_pass_through_unchanged() {
    let cs = ConstraintSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = 0;
    while seen < 10_000 {
        let s = in_band_state(&mut rng, &cs);
        let a = Action::new(rng.random_range(-40.0..=50.0), rng.random_range(0.0..=5000.0));
        if validate_action(&a, &s, &cs).is_valid {
            let r = repair_action(&a, &s, &cs);
            assert_eq!(r.safe_action, a);
            assert!(!r.changed());
            seen += 1;
        }
    }
}

#[test]
fn floor_sits_near_59_on_price_basis() {
    let cs = ConstraintSet::default();
    let floor = min_safe_price(&cs);
    assert!((floor - 59.0).abs() <= 0.5, "{floor}");
    assert!((floor - 50.0 / 0.85 * 1.01).abs() < 1e-12);

    let s = MarketState {
        week: 0,
        price: 100.0,
        trust: 0.7,
        prev_ad_spend: 0.0,
        cumulative_profit: 0.0,
    };
    // -41.1% lands at 58.90, under the floor but inside the rate limit once clipped
    let v = validate_action(&Action::new(-41.1, 0.0), &s, &cs);
    assert!(v.violations.iter().any(|v| v.rule_id == RuleId::MarginFloor));
    let s = MarketState { price: 70.0, ..s };
    let v = validate_action(&Action::new((58.9 / 70.0 - 1.0) * 100.0, 0.0), &s, &cs);
    assert_eq!(v.violations.len(), 1);
    assert_eq!(v.violations[0].rule_id, RuleId::MarginFloor);
    let r = repair_action(&Action::new(-30.0, 0.0), &s, &cs);
    let repaired_price = 70.0 * (1.0 + r.safe_action.price_change_pct / 100.0);
    assert!(repaired_price >= floor);
    assert!(repaired_price - floor < 1e-9);
}

#[test]
fn cost_basis_floor_is_lower() {
    let cs = ConstraintSet {
        margin_basis: MarginBasis::OnCost,
        ..ConstraintSet::default()
    };
    // max(55, 57.5) * 1.01
    assert!((min_safe_price(&cs) - 58.075).abs() < 1e-9);
}

#[test]
fn violations_are_reported_together_in_rule_order() {
    let cs = ConstraintSet::default();
    let s = MarketState {
        week: 0,
        price: 100.0,
        trust: 0.7,
        prev_ad_spend: 0.0,
        cumulative_profit: 0.0,
    };
    let v = validate_action(&Action::new(-60.0, 9000.0), &s, &cs);
    let ids: Vec<RuleId> = v.violations.iter().map(|v| v.rule_id).collect();
    assert_eq!(
        ids,
        [
            RuleId::PriceChangeLimit,
            RuleId::MarginFloor,
            RuleId::AdSpendRange,
            RuleId::AdIncreaseLimit
        ]
    );
    assert!(!v.is_valid);
}

proptest! {
    #[test]
    fn repair_is_sound_for_arbitrary_inputs(
        price in 59.5f64..150.0,
        prev_ad in 0.0f64..5000.0,
        pct in prop::num::f64::ANY,
        ad in prop::num::f64::ANY,
    ) {
        let cs = ConstraintSet::default();
        let s = MarketState { week: 3, price, trust: 0.7, prev_ad_spend: prev_ad, cumulative_profit: 0.0 };
        let r = repair_action(&Action::new(pct, ad), &s, &cs);
        prop_assert!(r.safe_action.is_finite());
        prop_assert!(validate_action(&r.safe_action, &s, &cs).is_valid);
        prop_assert_eq!(repair_action(&r.safe_action, &s, &cs).safe_action, r.safe_action);
    }
}
