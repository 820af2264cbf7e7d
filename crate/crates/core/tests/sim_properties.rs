use chimera_core::sim::{self, Action, MarketState, SimConfig, TrustMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> MarketState {
    MarketState {
        week: rng.random_range(0..520),
        price: rng.random_range(1.0..300.0),
        trust: rng.random_range(cfg.trust_min..=cfg.trust_max),
        prev_ad_spend: rng.random_range(0.0..8000.0),
        cumulative_profit: 0.0,
    }
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    Action::new(rng.random_range(-99.0..400.0), rng.random_range(0.0..20_000.0))
}

#[test]
fn trust_stays_in_bounds_for_both_modes() {
    for mode in [TrustMode::Eq3, TrustMode::V5] {
        let cfg = SimConfig {
            trust_mode: mode,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let s = random_state(&mut rng, &cfg);
            let t = sim::trust_update(&s, &random_action(&mut rng), &cfg);
            assert!((0.4..=1.0).contains(&t), "{mode}: {t}");
        }
        // extreme and non-finite actions too
        let s = cfg.initial_state();
        for a in [
            Action::new(f64::NAN, 0.0),
            Action::new(1e12, f64::INFINITY),
            Action::new(-1e12, -5.0),
        ] {
            let t = sim::trust_update(&s, &a, &cfg);
            assert!((0.4..=1.0).contains(&t), "{mode}: {a:?} -> {t}");
        }
    }
}

#[test]
fn trust_containment_along_random_trajectories() {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = cfg.initial_state();
    for _ in 0..10_000 {
        let a = Action::new(rng.random_range(-30.0..30.0), rng.random_range(0.0..6000.0));
        let (next, _) = sim::step(&s, &a, &cfg).unwrap();
        assert!((0.4..=1.0).contains(&next.trust));
        s = next;
        if !(5.0..500.0).contains(&s.price) {
            s.price = 100.0;
        }
    }
}

#[test]
fn demand_monotone_in_price_trust_and_ads() {
    let cfg = SimConfig::default();
    let q = |p: f64, t: f64, ad: f64, w: u32| sim::demand(p, t, ad, w, &cfg).unwrap().0;
    for w in [0u32, 13, 26, 39] {
        for &t in &[0.4, 0.55, 0.7, 0.85, 1.0] {
            for &ad in &[0.0, 100.0, 1000.0, 5000.0] {
                let prices: Vec<f64> = (0..60).map(|i| 20.0 + 3.0 * i as f64).collect();
                for pair in prices.windows(2) {
                    assert!(q(pair[0], t, ad, w) > q(pair[1], t, ad, w));
                }
            }
        }
        for &p in &[40.0, 80.0, 120.0, 160.0] {
            for &ad in &[0.0, 2500.0] {
                let trusts: Vec<f64> = (0..=30).map(|i| 0.4 + 0.02 * i as f64).collect();
                for pair in trusts.windows(2) {
                    assert!(q(p, pair[0], ad, w) < q(p, pair[1], ad, w));
                }
            }
            for &t in &[0.4, 0.7, 1.0] {
                let ads: Vec<f64> = (0..=50).map(|i| 200.0 * i as f64).collect();
                let qs: Vec<f64> = ads.iter().map(|&a| q(p, t, a, w)).collect();
                for d in qs.windows(2) {
                    assert!(d[1] >= d[0]);
                }
                for d in qs.windows(3) {
                    let second = d[2] - 2.0 * d[1] + d[0];
                    assert!(second <= 1e-9 * d[1].abs(), "second difference {second}");
                }
            }
        }
    }
}

#[test]
fn trust_doubling_triples_demand() {
    let cfg = SimConfig::default();
    let lo = sim::demand(100.0, 0.4, 0.0, 0, &cfg).unwrap().0;
    let hi = sim::demand(100.0, 0.8, 0.0, 0, &cfg).unwrap().0;
    assert!((hi / lo - 3.0).abs() < 1e-12);
}

#[test]
fn seasonality_has_period_52_and_amplitude_02() {
    let cfg = SimConfig::default();
    let mut max_dev: f64 = 0.0;
    for w in 0..200u32 {
        assert_eq!(sim::season_factor(w, &cfg), sim::season_factor(w + 52, &cfg));
        max_dev = max_dev.max((sim::season_factor(w, &cfg) - 1.0).abs());
    }
    assert!((max_dev - 0.2).abs() < 1e-9, "{max_dev}");
}

#[test]
fn profit_identity_against_recomputation() {
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10_000 {
        let s = random_state(&mut rng, &cfg);
        let a = Action::new(rng.random_range(-90.0..200.0), rng.random_range(0.0..10_000.0));
        let (_, out) = sim::step(&s, &a, &cfg).unwrap();

        let p = s.price * (1.0 + a.price_change_pct / 100.0);
        let phase = (s.week % 52) as f64 / 52.0;
        let q = 800.0
            * (100.0 / p).powf(1.2)
            * (s.trust / 0.7).powf(3f64.ln() / 2f64.ln())
            * (1.0 + 0.3 * (1.0 + a.ad_spend / 100.0).ln())
            * (1.0 + 0.2 * (2.0 * std::f64::consts::PI * phase).sin());
        let expected = (p - 50.0) * q - 3000.0 - a.ad_spend;
        let rel = (out.profit - expected).abs() / expected.abs().max(1.0);
        assert!(rel < 1e-9, "{} vs {expected}", out.profit);
    }
}

#[test]
fn hold_preserves_price_and_week_advances_by_one() {
    let cfg = SimConfig::default();
    let mut s = cfg.initial_state();
    for w in 0..10 {
        let (next, _) = sim::step(&s, &Action::hold(&s), &cfg).unwrap();
        assert_eq!(next.price, s.price);
        assert_eq!(next.week, w + 1);
        s = next;
    }
}

#[test]
fn domain_errors_are_reported() {
    let cfg = SimConfig::default();
    let s = cfg.initial_state();
    assert!(sim::step(&s, &Action::new(-100.0, 0.0), &cfg).is_err());
    assert!(sim::step(&s, &Action::new(0.0, -1.0), &cfg).is_err());
    assert!(sim::step(&s, &Action::new(f64::NAN, 0.0), &cfg).is_err());
}

#[test]
fn identical_inputs_replay_bit_for_bit() {
    let cfg = SimConfig {
        noise_sigma: 0.1,
        seed: 5,
        ..SimConfig::default()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = cfg.initial_state();
        let mut out = Vec::new();
        for _ in 0..52 {
            let a = Action::new(rng.random_range(-10.0..10.0), rng.random_range(0.0..3000.0));
            let (next, o) = sim::step(&s, &a, &cfg).unwrap();
            out.push((o.profit.to_bits(), next.trust.to_bits()));
            s = next;
        }
        out
    };
    assert_eq!(run(), run());
}
