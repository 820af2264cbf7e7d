//! A fixed 52-week policy replayed against a committed CSV.
//!
//! Regenerate with `CHIMERA_BLESS=1 cargo test -p chimera-core --test golden`.

use std::fmt::Write as _;
use std::path::PathBuf;

use chimera_core::sim::{self, Action, SimConfig};

const PRICE_MOVES: [f64; 8] = [5.0, -3.0, 0.0, 10.0, -8.0, 2.5, 0.0, -1.0];
const AD_LEVELS: [f64; 6] = [0.0, 500.0, 1500.0, 2500.0, 1000.0, 4000.0];

fn episode_csv() -> String {
    let cfg = SimConfig {
        noise_sigma: 0.05,
        seed: 42,
        ..SimConfig::default()
    };
    let mut s = cfg.initial_state();
    let mut out = String::from("week,price,price_change_pct,ad_spend,demand,profit,trust,cumulative_profit\n");
    for w in 0..52usize {
        let a = Action::new(PRICE_MOVES[w % PRICE_MOVES.len()], AD_LEVELS[w % AD_LEVELS.len()]);
        let (next, o) = sim::step(&s, &a, &cfg).unwrap();
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            next.week,
            o.price,
            a.price_change_pct,
            a.ad_spend,
            o.demand,
            o.profit,
            o.trust_after,
            next.cumulative_profit
        )
        .unwrap();
        s = next;
    }
    out
}

#[test]
fn fixed_policy_matches_golden_csv() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/episode_52.csv");
    let fresh = episode_csv();
    if std::env::var_os("CHIMERA_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &fresh).unwrap();
    }
    let frozen = std::fs::read_to_string(&path).expect("golden file missing; run with CHIMERA_BLESS=1");
    assert_eq!(fresh, frozen);
}
