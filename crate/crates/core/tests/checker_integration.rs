use chimera_core::checker::{check_invariants, explore, CheckerConfig, InvariantId, Witness};
use chimera_core::guardian::{repair_with, ConstraintSet, RepairPipeline};
use chimera_core::sim::{self, MarketState, SimConfig};

/// Replay a witness through the guardian and the simulator and return the
/// final `(price, ad, prev_ad)`.
fn replay(w: &Witness, cs: &ConstraintSet, pipeline: &RepairPipeline) -> (f64, f64, f64) {
    let cfg = SimConfig::default();
    let mut s = MarketState {
        week: 0,
        price: w.initial.price,
        trust: 0.7,
        prev_ad_spend: w.initial.ad_spend,
        cumulative_profit: 0.0,
    };
    let mut prev = s.prev_ad_spend;
    for step in &w.trace {
        let safe = repair_with(&step.proposed, &s, cs, pipeline).safe_action;
        prev = s.prev_ad_spend;
        let (next, _) = sim::step(&s, &safe, &cfg).unwrap();
        assert_eq!(next.price, step.state.price);
        assert_eq!(next.prev_ad_spend, step.state.ad_spend);
        s = next;
    }
    (s.price, s.prev_ad_spend, prev)
}

#[test]
fn horizon_one_generates_every_combination() {
    let r = explore(&CheckerConfig {
        horizon: 1,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(r.states_found, 24);
    assert_eq!(r.diameter, 1);
    assert!(r.passed());
}

#[test]
fn short_horizons_are_safe_and_deterministic() {
    let cfg = CheckerConfig {
        horizon: 8,
        ..Default::default()
    };
    let a = explore(&cfg).unwrap();
    let b = explore(&cfg).unwrap();
    assert_eq!(a.violation_count, 0);
    assert!(a.passed());
    assert_eq!(
        (a.states_found, a.distinct_states, a.diameter),
        (b.states_found, b.distinct_states, b.diameter)
    );
}

#[test]
fn week_agnostic_mode_stores_fewer_states() {
    let base = CheckerConfig {
        horizon: 8,
        ..Default::default()
    };
    let tight = explore(&CheckerConfig {
        week_agnostic: true,
        ..base.clone()
    })
    .unwrap();
    let full = explore(&base).unwrap();
    assert!(tight.distinct_states <= full.distinct_states);
    assert_eq!(tight.violation_count, 0);
}

fn mutated(pipeline: RepairPipeline, expect: InvariantId) {
    let cfg = CheckerConfig {
        horizon: 4,
        pipeline,
        ..Default::default()
    };
    let r = explore(&cfg).unwrap();
    assert!(r.violation_count >= 1, "{expect:?} mutation not caught");
    assert!(!r.passed());
    let w = r
        .violations
        .iter()
        .find(|w| w.invariants.contains(&expect))
        .expect("witness for the weakened rule");
    let (price, ad, prev) = replay(w, &cfg.constraints, &pipeline);
    let last = w.trace.last().unwrap().state;
    assert_eq!((price, ad, prev), (last.price, last.ad_spend, last.prev_ad));
    assert!(check_invariants(&last, &cfg.constraints).contains(&expect));
}

#[test]
fn disabling_the_floor_is_caught_with_a_replayable_trace() {
    mutated(
        RepairPipeline {
            floor_price: false,
            ..Default::default()
        },
        InvariantId::BufferedMargin,
    );
}

#[test]
fn disabling_the_cap_is_caught() {
    mutated(
        RepairPipeline {
            cap_price: false,
            ..Default::default()
        },
        InvariantId::PriceCap,
    );
}

#[test]
fn disabling_the_ad_rate_limit_is_caught() {
    mutated(
        RepairPipeline {
            limit_ad_increase: false,
            ..Default::default()
        },
        InvariantId::AdSpendRelative,
    );
}

#[test]
fn stop_at_first_reports_incomplete() {
    let r = explore(&CheckerConfig {
        horizon: 20,
        stop_at_first: true,
        pipeline: RepairPipeline {
            floor_price: false,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();
    assert!(r.violation_count >= 1);
    assert!(r.diameter < 20);
    assert!(!r.complete);
}

#[test]
fn report_serialises_with_summary_columns() {
    let r = explore(&CheckerConfig {
        horizon: 2,
        ..Default::default()
    })
    .unwrap();
    let json = serde_json::to_value(&r).unwrap();
    for k in ["states_found", "distinct_states", "diameter", "violation_count", "wall_time"] {
        assert!(json.get(k).is_some(), "{k}");
    }
    let s = r.summary();
    assert!(s.contains("States Found") && s.contains("Distinct States"));
    assert!(s.contains("0 invariant violations"));
}
