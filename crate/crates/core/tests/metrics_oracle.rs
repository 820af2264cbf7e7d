use chimera_core::agents::{run_architecture, ArchitectureKind, Bias, RunConfig, ScenarioContext, ScriptedStrategist};
use chimera_core::bench::metrics::sharpe;
use chimera_core::bench::{compute_metrics, summarize};
use chimera_core::sim::SimConfig;

/// Welford mean and sample deviation, independent of the crate's two-pass form.
fn welford(xs: &[f64]) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn metrics_match_an_independent_oracle_on_1000_logs() {
    let biases = Bias::ALL;
    for i in 0..1000u64 {
        let bias = biases[(i % 3) as usize];
        let cfg = RunConfig {
            weeks: 20 + (i % 33) as u32,
            sim: SimConfig {
                noise_sigma: 0.1,
                seed: i,
                ..SimConfig::default()
            },
            seed: i,
            ..RunConfig::default()
        };
        let ctx = ScenarioContext::new(bias, ArchitectureKind::LlmOnly, 150_000.0);
        let mut st = ScriptedStrategist::new(bias, i);
        let log = run_architecture(ArchitectureKind::LlmOnly, &mut st, &ctx, &cfg, None, None).unwrap();
        let m = compute_metrics(&log).unwrap();

        let profits: Vec<f64> = log.records.iter().map(|r| r.profit).collect();
        let (mean, std) = welford(&profits);
        let total: f64 = profits.iter().sum();
        let negative = profits.iter().filter(|p| **p < 0.0).count();
        let viol = log.records.iter().filter(|r| !r.executed_verdict.is_valid).count();
        let last_trust = log.records.last().unwrap().trust;

        assert_eq!(m.weeks, profits.len());
        assert!(close(m.total_profit, total));
        assert!(close(m.mean_weekly, mean));
        assert!(close(m.std_weekly, std), "{} vs {std}", m.std_weekly);
        if std > 0.0 {
            assert!(close(m.sharpe, mean / std));
        }
        assert_eq!(m.negative_weeks, negative);
        assert!(close(m.failure_rate_pct, 100.0 * negative as f64 / profits.len() as f64));
        assert_eq!(m.violation_weeks, viol);
        assert!(close(m.final_trust, last_trust));
        assert!(close(m.trust_delta_pct, (last_trust - 0.7) / 0.7 * 100.0));
    }
}

#[test]
fn reported_figures() {
    assert_eq!(format!("{:.2}", sharpe(36_308.0, 5_875.0)), "6.18");
    let mut p = vec![100.0; 52];
    for v in p.iter_mut().take(5) {
        *v = -50.0;
    }
    let m = summarize(&p, 0.7, 0.7, 0).unwrap();
    assert_eq!(format!("{:.1}", m.failure_rate_pct), "9.6");
}
