//! The market-facing causal engine.
//!
//! State features are `(price, trust, prev_ad, sin phase, cos phase)`. An
//! action enters through the basis
//!
//! ```text
//! phi(pct, ad) = (x, x^2, x^3, l, x*l, x^2*l, x^3*l, ad/1000)
//! x = pct/100,  l = ln(1 + ad/ad_basis_scale)
//! ```
//!
//! and every estimate is `theta(s) . (phi(action) - phi(hold))`, so the
//! reference action (no price change, unchanged ad spend) maps to exactly
//! zero. Outcomes are the discounted profit over the next `horizon` weeks
//! and the trust change over the same window.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dml::{self, DmlData, DmlModel, DmlParams};
use super::forest::{ForestParams, Matrix};
use crate::error::CausalError;
use crate::guardian::{safe_action_with, ConstraintSet, RepairPipeline};
use crate::sim::{self, Action, MarketState, SimConfig};

pub const ARTIFACT_VERSION: u32 = 1;
pub const ARTIFACT_KIND: &str = "chimera-causal-engine";

pub const FEATURE_NAMES: [&str; 5] = ["price", "trust", "prev_ad", "season_sin", "season_cos"];
pub const BASIS_NAMES: [&str; 8] = [
    "x", "x_sq", "x_cube", "log_ad", "x_log_ad", "x_sq_log_ad", "x_cube_log_ad", "ad_k",
];
pub const OUTCOME_NAMES: [&str; 2] = ["profit", "trust_change"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Effect-forest trees.
    pub n_trees: usize,
    /// Effect-forest minimum leaf size.
    pub min_leaf: usize,
    pub nuisance_trees: usize,
    pub nuisance_min_leaf: usize,
    pub n_folds: usize,
    pub retrain_interval: u32,
    /// Profit-equivalent value of one unit of trust.
    pub trust_multiplier: f64,
    /// Outcome window in weeks.
    pub horizon: u32,
    pub discount: f64,
    pub min_observations: usize,
    /// New observations needed before a scheduled retrain fires.
    pub min_new_observations: usize,
    pub ad_basis_scale: f64,
    pub ridge: f64,
    pub season_period: u32,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_trees: 60,
            min_leaf: 40,
            nuisance_trees: 30,
            nuisance_min_leaf: 10,
            n_folds: 3,
            retrain_interval: 10,
            trust_multiplier: 150_000.0,
            horizon: 4,
            discount: 0.95,
            min_observations: 200,
            min_new_observations: 1,
            ad_basis_scale: 100.0,
            ridge: 1e-3,
            season_period: 52,
            seed: 42,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), CausalError> {
        let bad = |m: &str| Err(CausalError::InvalidConfig(m.to_string()));
        if self.n_folds < 2 {
            return bad("n_folds must be at least 2");
        }
        if self.retrain_interval < 1 {
            return bad("retrain_interval must be at least 1");
        }
        if !(self.trust_multiplier >= 0.0 && self.trust_multiplier.is_finite()) {
            return bad("trust_multiplier must be finite and non-negative");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.ad_basis_scale > 0.0 && self.ad_basis_scale.is_finite()) {
            return bad("ad_basis_scale must be positive");
        }
        if self.season_period == 0 {
            return bad("season_period must be positive");
        }
        self.dml_params(self.seed).validate()
    }

    fn dml_params(&self, seed: u64) -> DmlParams {
        DmlParams {
            n_folds: self.n_folds,
            nuisance: ForestParams {
                n_trees: self.nuisance_trees,
                min_leaf: self.nuisance_min_leaf,
                ..ForestParams::default()
            },
            effect: ForestParams {
                n_trees: self.n_trees,
                min_leaf: self.min_leaf,
                ..ForestParams::default()
            },
            ridge: self.ridge,
            min_rows: self.min_observations,
            seed,
        }
    }
}

/// One state-action-outcome tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub price: f64,
    pub trust: f64,
    pub prev_ad: f64,
    /// `(week mod period) / period`, in `[0, 1)`.
    pub season_phase: f64,
    pub price_change_pct: f64,
    pub ad_spend: f64,
    /// Discounted profit over the outcome window.
    pub profit: f64,
    /// Trust at the end of the window minus trust before the action.
    pub trust_change: f64,
}

impl Observation {
    pub fn is_finite(&self) -> bool {
        [
            self.price,
            self.trust,
            self.prev_ad,
            self.season_phase,
            self.price_change_pct,
            self.ad_spend,
            self.profit,
            self.trust_change,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Predicted effect of an action relative to holding steady.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    pub profit_change: f64,
    pub trust_change: f64,
    pub profit_confidence: f64,
    pub trust_confidence: f64,
}

pub fn long_term_value(est: &CausalEstimate, trust_multiplier: f64) -> f64 {
    est.profit_change + est.trust_change * trust_multiplier
}

pub fn season_phase(week: u32, period: u32) -> f64 {
    f64::from(week % period) / f64::from(period)
}

fn features_of(price: f64, trust: f64, prev_ad: f64, phase: f64) -> [f64; 5] {
    [price, trust, prev_ad, (TAU * phase).sin(), (TAU * phase).cos()]
}

pub fn state_features(state: &MarketState, period: u32) -> [f64; 5] {
    features_of(
        state.price,
        state.trust,
        state.prev_ad_spend,
        season_phase(state.week, period),
    )
}

pub fn treatment_basis(price_change_pct: f64, ad_spend: f64, ad_basis_scale: f64) -> [f64; 8] {
    let x = price_change_pct / 100.0;
    let l = (ad_spend.max(0.0) / ad_basis_scale).ln_1p();
    let (x2, x3) = (x * x, x * x * x);
    [x, x2, x3, l, x * l, x2 * l, x3 * l, ad_spend / 1000.0]
}

/// `phi(action) - phi(hold)` for a state whose previous ad spend is `prev_ad`.
pub fn basis_delta(price_change_pct: f64, ad_spend: f64, prev_ad: f64, scale: f64) -> [f64; 8] {
    let a = treatment_basis(price_change_pct, ad_spend, scale);
    let r = treatment_basis(0.0, prev_ad, scale);
    std::array::from_fn(|i| a[i] - r[i])
}

/// One executed week, as needed to build observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub state: MarketState,
    pub action: Action,
    pub profit: f64,
    pub trust_after: f64,
}

/// Observations for every step that has a full `horizon` of successors.
pub fn observations_from_trajectory(
    steps: &[TrajectoryStep],
    horizon: u32,
    discount: f64,
    period: u32,
) -> Vec<Observation> {
    let h = horizon as usize;
    if steps.len() < h {
        return Vec::new();
    }
    (0..=steps.len() - h)
        .map(|i| {
            let s = &steps[i];
            let profit = steps[i..i + h]
                .iter()
                .enumerate()
                .map(|(j, st)| discount.powi(j as i32) * st.profit)
                .sum();
            Observation {
                price: s.state.price,
                trust: s.state.trust,
                prev_ad: s.state.prev_ad_spend,
                season_phase: season_phase(s.state.week, period),
                price_change_pct: s.action.price_change_pct,
                ad_spend: s.action.ad_spend,
                profit,
                trust_change: steps[i + h - 1].trust_after - s.state.trust,
            }
        })
        .collect()
}

/// Randomised-policy training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub episodes: usize,
    pub weeks: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            episodes: 400,
            weeks: 16,
            seed: 7,
        }
    }
}

/// Simulate random episodes through the guardian's repair and collect
/// observations. Start states are drawn across the feasible band so the
/// engine sees every price, trust and ad level it will be asked about.
pub fn generate_corpus(
    sim_cfg: &SimConfig,
    cs: &ConstraintSet,
    corpus: &CorpusConfig,
    engine: &EngineConfig,
) -> Result<Vec<Observation>, CausalError> {
    sim_cfg.validate()?;
    engine.validate()?;
    let floor = crate::guardian::min_safe_price(cs);
    let episodes: Vec<Result<Vec<Observation>, CausalError>> = (0..corpus.episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                corpus.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(ep as u64),
            );
            let mut state = MarketState {
                week: rng.random_range(0..sim_cfg.season_period),
                price: rng.random_range(floor..=cs.max_price),
                trust: rng.random_range(sim_cfg.trust_min..=sim_cfg.trust_max),
                prev_ad_spend: rng.random_range(0.0..=cs.ad_cap),
                cumulative_profit: 0.0,
            };
            let mut steps = Vec::with_capacity(corpus.weeks as usize);
            for _ in 0..corpus.weeks {
                let pct = rng.random_range(-40.0..=50.0);
                let ad = if rng.random_bool(0.5) {
                    rng.random_range(0.0..=cs.ad_cap)
                } else {
                    state.prev_ad_spend + rng.random_range(-2000.0..=1000.0)
                };
                let action = safe_action_with(
                    &Action::new(pct, ad),
                    &state,
                    cs,
                    &RepairPipeline::default(),
                );
                let (next, out) = sim::step(&state, &action, sim_cfg)?;
                steps.push(TrajectoryStep {
                    state,
                    action,
                    profit: out.profit,
                    trust_after: out.trust_after,
                });
                state = next;
            }
            Ok(observations_from_trajectory(
                &steps,
                engine.horizon,
                engine.discount,
                sim_cfg.season_period,
            ))
        })
        .collect();
    let mut out = Vec::new();
    for e in episodes {
        out.extend(e?);
    }
    Ok(out)
}

/// A fitted, immutable engine. Retraining returns a new one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEngine {
    pub config: EngineConfig,
    /// Seed the current model was fitted with.
    pub seed: u64,
    /// Week of the last retrain, if any.
    pub retrained_at: Option<u32>,
    model: DmlModel,
    training: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    kind: String,
    version: u32,
    engine: CausalEngine,
}

impl CausalEngine {
    pub fn fit(data: &[Observation], config: &EngineConfig) -> Result<Self, CausalError> {
        Self::fit_seeded(data.to_vec(), config, config.seed, None)
    }

    fn fit_seeded(
        data: Vec<Observation>,
        config: &EngineConfig,
        seed: u64,
        retrained_at: Option<u32>,
    ) -> Result<Self, CausalError> {
        config.validate()?;
        if data.len() < config.min_observations {
            return Err(CausalError::InsufficientData {
                required: config.min_observations,
                got: data.len(),
            });
        }
        if let Some(row) = data.iter().position(|o| !o.is_finite()) {
            return Err(CausalError::NonFinite { row });
        }
        let n = data.len();
        let mut x = Matrix::zeros(n, FEATURE_NAMES.len());
        let mut t = Matrix::zeros(n, BASIS_NAMES.len());
        let mut y = Matrix::zeros(n, OUTCOME_NAMES.len());
        for (i, o) in data.iter().enumerate() {
            x.row_mut(i)
                .copy_from_slice(&features_of(o.price, o.trust, o.prev_ad, o.season_phase));
            t.row_mut(i).copy_from_slice(&treatment_basis(
                o.price_change_pct,
                o.ad_spend,
                config.ad_basis_scale,
            ));
            y.row_mut(i).copy_from_slice(&[o.profit, o.trust_change]);
        }
        let model = dml::fit(
            &DmlData {
                x: &x,
                t: &t,
                y: &y,
                treatment_names: &BASIS_NAMES,
                outcome_names: &OUTCOME_NAMES,
            },
            &config.dml_params(seed),
        )?;
        Ok(Self {
            config: config.clone(),
            seed,
            retrained_at,
            model,
            training: data,
        })
    }

    pub fn training_data(&self) -> &[Observation] {
        &self.training
    }

    pub fn estimate(&self, state: &MarketState, action: &Action) -> CausalEstimate {
        self.estimate_profit_impact(action.price_change_pct, action.ad_spend, state)
    }

    pub fn estimate_profit_impact(
        &self,
        price_change_pct: f64,
        ad_spend: f64,
        state: &MarketState,
    ) -> CausalEstimate {
        let x = state_features(state, self.config.season_period);
        let dt = basis_delta(
            price_change_pct,
            ad_spend,
            state.prev_ad_spend,
            self.config.ad_basis_scale,
        );
        let p = self.model.effect(&x, &dt);
        CausalEstimate {
            profit_change: p.mean[0],
            trust_change: p.mean[1],
            profit_confidence: p.confidence(0),
            trust_confidence: p.confidence(1),
        }
    }

    pub fn long_term_value(&self, est: &CausalEstimate) -> f64 {
        long_term_value(est, self.config.trust_multiplier)
    }

    /// Refit on the stored data plus `accumulated` when `week` is a retrain
    /// week and enough new data has arrived; `None` means keep `self`.
    pub fn maybe_retrain(
        &self,
        week: u32,
        accumulated: &[Observation],
    ) -> Result<Option<CausalEngine>, CausalError> {
        if week % self.config.retrain_interval != 0
            || accumulated.is_empty()
            || accumulated.len() < self.config.min_new_observations
        {
            return Ok(None);
        }
        let mut data = self.training.clone();
        data.extend_from_slice(accumulated);
        let seed = self.config.seed.wrapping_add(u64::from(week));
        Self::fit_seeded(data, &self.config, seed, Some(week)).map(Some)
    }

    pub fn to_json(&self) -> Result<String, CausalError> {
        Ok(serde_json::to_string(&Artifact {
            kind: ARTIFACT_KIND.to_string(),
            version: ARTIFACT_VERSION,
            engine: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, CausalError> {
        #[derive(Deserialize)]
        struct Header {
            kind: String,
            version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.kind != ARTIFACT_KIND {
            return Err(CausalError::Dataset(format!(
                "not an engine artifact (kind `{}`)",
                header.kind
            )));
        }
        if header.version != ARTIFACT_VERSION {
            return Err(CausalError::ArtifactVersion {
                found: header.version,
                expected: ARTIFACT_VERSION,
            });
        }
        let a: Artifact = serde_json::from_str(text)?;
        Ok(a.engine)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CausalError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CausalError> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

/// CSV header: `price,trust,prev_ad,season_phase,price_change_pct,ad_spend,profit,trust_change`.
pub fn write_dataset<W: Write>(w: W, data: &[Observation]) -> Result<(), CausalError> {
    let mut wr = csv::Writer::from_writer(w);
    for o in data {
        wr.serialize(o)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<Observation>, CausalError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.deserialize::<Observation>().enumerate() {
        let o = rec?;
        if !o.is_finite() {
            return Err(CausalError::NonFinite { row: i });
        }
        out.push(o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (EngineConfig, CorpusConfig) {
        (
            EngineConfig {
                n_trees: 20,
                nuisance_trees: 10,
                ..EngineConfig::default()
            },
            CorpusConfig {
                episodes: 60,
                weeks: 12,
                seed: 1,
            },
        )
    }

    fn engine() -> CausalEngine {
        let (ec, cc) = small();
        let data =
            generate_corpus(&SimConfig::default(), &ConstraintSet::default(), &cc, &ec).unwrap();
        CausalEngine::fit(&data, &ec).unwrap()
    }

    #[test]
    fn ltv_matches_hand_arithmetic() {
        let est = CausalEstimate {
            profit_change: 2840.0,
            trust_change: -0.012,
            profit_confidence: 0.83,
            trust_confidence: 0.91,
        };
        assert!((long_term_value(&est, 150_000.0) - 1040.0).abs() < 1e-9);
        assert_eq!(long_term_value(&est, 0.0), 2840.0);
    }

    #[test]
    fn payload_field_names() {
        let est = CausalEstimate {
            profit_change: 2840.0,
            trust_change: -0.012,
            profit_confidence: 0.83,
            trust_confidence: 0.91,
        };
        let v = serde_json::to_value(est).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["profit_change", "profit_confidence", "trust_change", "trust_confidence"]
        );
    }

    #[test]
    fn observations_use_the_window() {
        let st = |w: u32, tr: f64| MarketState {
            week: w,
            price: 100.0,
            trust: tr,
            prev_ad_spend: 0.0,
            cumulative_profit: 0.0,
        };
        let steps: Vec<_> = (0..3)
            .map(|w| TrajectoryStep {
                state: st(w, 0.7 + 0.01 * w as f64),
                action: Action::new(0.0, 0.0),
                profit: 100.0,
                trust_after: 0.71 + 0.01 * w as f64,
            })
            .collect();
        let obs = observations_from_trajectory(&steps, 2, 0.5, 52);
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].profit, 150.0);
        assert!((obs[0].trust_change - 0.02).abs() < 1e-12);
    }

    #[test]
    fn reference_action_is_exactly_zero() {
        let e = engine();
        let s = MarketState {
            week: 5,
            price: 100.0,
            trust: 0.7,
            prev_ad_spend: 1200.0,
            cumulative_profit: 0.0,
        };
        let est = e.estimate(&s, &Action::hold(&s));
        assert_eq!(est.profit_change, 0.0);
        assert_eq!(est.trust_change, 0.0);
        assert!((0.0..=1.0).contains(&est.profit_confidence));
    }

    #[test]
    fn retrain_schedule() {
        let e = engine();
        let extra = &e.training_data()[..50];
        assert!(e.maybe_retrain(7, extra).unwrap().is_none());
        assert!(e.maybe_retrain(10, &[]).unwrap().is_none());
        let r = e.maybe_retrain(10, extra).unwrap().unwrap();
        assert_eq!(r.training_data().len(), e.training_data().len() + 50);
        assert_eq!(r.retrained_at, Some(10));
    }

    #[test]
    fn artifact_roundtrip_and_version_check() {
        let e = engine();
        let text = e.to_json().unwrap();
        let back = CausalEngine::from_json(&text).unwrap();
        let s = SimConfig::default().initial_state();
        assert_eq!(
            e.estimate_profit_impact(10.0, 500.0, &s),
            back.estimate_profit_impact(10.0, 500.0, &s)
        );
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(matches!(
            CausalEngine::from_json(&bumped),
            Err(CausalError::ArtifactVersion { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let (ec, cc) = small();
        let data =
            generate_corpus(&SimConfig::default(), &ConstraintSet::default(), &cc, &ec).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with(
            "price,trust,prev_ad,season_phase,price_change_pct,ad_spend,profit,trust_change\n"
        ));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn rejects_bad_config_and_small_data() {
        let cfg = EngineConfig {
            n_folds: 1,
            ..EngineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CausalError::InvalidConfig(_))));
        let (ec, _) = small();
        let data = engine().training_data()[..100].to_vec();
        assert!(matches!(
            CausalEngine::fit(&data, &ec),
            Err(CausalError::InsufficientData { required: 200, got: 100 })
        ));
    }
}
