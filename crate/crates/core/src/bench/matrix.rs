//! The experiment matrix and the trust-multiplier sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{fmt, EpisodeLog};
use super::metrics::{compute_metrics, MetricsSummary};
use crate::agents::{
    run_architecture, ArchitectureKind, Bias, LiveEngine, RunConfig, ScenarioContext,
    ScriptedStrategist, Strategist,
};
use crate::causal::{generate_corpus, CausalEngine, CorpusConfig, EngineConfig};
use crate::config::{apply_lines, serde_fields_text, set_serde_field, split_assignment, MarketConfig};
use crate::error::{BenchError, ConfigError};
use crate::guardian::Guardian;

pub const DEFAULT_MULTIPLIERS: [f64; 5] = [50_000.0, 100_000.0, 150_000.0, 200_000.0, 300_000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub weeks: u32,
    pub seeds: Vec<u64>,
    pub market: MarketConfig,
    pub engine: EngineConfig,
    pub corpus: CorpusConfig,
    /// Retrain the engine during CHIMERA episodes.
    pub retrain: bool,
    /// Worker threads for matrix cells; `None` uses the global pool.
    pub workers: Option<usize>,
    pub candidates: usize,
    pub trust_multiplier: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            weeks: 52,
            seeds: vec![42],
            market: MarketConfig::default(),
            engine: EngineConfig::default(),
            corpus: CorpusConfig::default(),
            retrain: true,
            workers: None,
            candidates: 3,
            trust_multiplier: 150_000.0,
        }
    }
}

impl BenchConfig {
    /// Read a `key = value` file on top of the defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError::Parse {
            line: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        apply_lines(text, |k, v| self.set(k, v))?;
        self.validate()
    }

    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = split_assignment(assignment)?;
        self.set(key, value)
    }

    /// Set one key. `engine.*`, `corpus.*` and `bench.*` address the
    /// engine, the training corpus and the run settings; anything else goes
    /// to the market configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            key: key.to_string(),
            message,
        };
        match key.split_once('.') {
            Some(("engine", k)) => set_serde_field(&mut self.engine, k, value),
            Some(("corpus", k)) => set_serde_field(&mut self.corpus, k, value),
            Some(("bench", k)) => {
                match k {
                    "weeks" => self.weeks = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "seeds" => {
                        self.seeds = value
                            .split(',')
                            .map(|s| s.trim().parse::<u64>())
                            .collect::<Result<_, _>>()
                            .map_err(|e| bad(e.to_string()))?
                    }
                    "retrain" => self.retrain = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "workers" => {
                        self.workers = match value {
                            "" | "auto" => None,
                            n => Some(n.parse().map_err(|e| bad(format!("{e}")))?),
                        }
                    }
                    "candidates" => {
                        self.candidates = value.parse().map_err(|e| bad(format!("{e}")))?
                    }
                    "trust_multiplier" => {
                        self.trust_multiplier = value.parse().map_err(|e| bad(format!("{e}")))?
                    }
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }
            _ => self.market.set(key, value),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.market.validate()?;
        self.engine
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.weeks == 0 {
            return Err(ConfigError::Invalid("bench.weeks must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("bench.seeds is empty".into()));
        }
        if self.candidates == 0 {
            return Err(ConfigError::Invalid("bench.candidates must be positive".into()));
        }
        if !(self.trust_multiplier >= 0.0 && self.trust_multiplier.is_finite()) {
            return Err(ConfigError::Invalid(
                "bench.trust_multiplier must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; [`BenchConfig::apply_text`]
    /// reads them back.
    pub fn to_text(&self) -> String {
        let mut out = self.market.to_text();
        out.push_str("\n# engine\n");
        out.push_str(&serde_fields_text("engine.", &self.engine));
        out.push_str("\n# corpus\n");
        out.push_str(&serde_fields_text("corpus.", &self.corpus));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = write!(
            out,
            "\n# bench\nbench.weeks = {}\nbench.seeds = {}\nbench.retrain = {}\nbench.workers = {}\nbench.candidates = {}\nbench.trust_multiplier = {}\n",
            self.weeks,
            seeds.join(","),
            self.retrain,
            self.workers.map_or("auto".to_string(), |n| n.to_string()),
            self.candidates,
            self.trust_multiplier
        );
        out
    }
}

/// Builds the strategist for one cell of the matrix.
pub type StrategistFactory = dyn Fn(&Cell) -> Box<dyn Strategist> + Sync;

pub fn scripted_factory() -> Box<StrategistFactory> {
    Box::new(|cell| Box::new(ScriptedStrategist::new(cell.scenario, cell.seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub architecture: ArchitectureKind,
    pub scenario: Bias,
    pub seed: u64,
    pub trust_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub log: Option<EpisodeLog>,
    pub metrics: Option<MetricsSummary>,
    pub error: Option<String>,
}

/// Fit the engine CHIMERA cells start from.
pub fn fit_engine(cfg: &BenchConfig) -> Result<CausalEngine, BenchError> {
    let data = generate_corpus(
        &cfg.market.sim,
        &cfg.market.constraints,
        &cfg.corpus,
        &cfg.engine,
    )?;
    Ok(CausalEngine::fit(&data, &cfg.engine)?)
}

pub fn run_cell(
    cell: Cell,
    cfg: &BenchConfig,
    engine: Option<&CausalEngine>,
    factory: &StrategistFactory,
) -> CellResult {
    let outcome = (|| -> Result<(EpisodeLog, MetricsSummary), BenchError> {
        let mut sim = cfg.market.sim.clone();
        sim.seed = cell.seed;
        let run = RunConfig {
            weeks: cfg.weeks,
            sim,
            constraints: cfg.market.constraints.clone(),
            candidates: cfg.candidates,
            max_replacements: 3,
            seed: cell.seed,
        };
        let ctx = ScenarioContext::new(cell.scenario, cell.architecture, cell.trust_multiplier);
        let guardian = Guardian::new(cfg.market.constraints.clone());
        let mut strategist = factory(&cell);
        let mut live = match (cell.architecture, engine) {
            (ArchitectureKind::Chimera, Some(e)) => Some(LiveEngine::new(e.clone(), cfg.retrain)),
            _ => None,
        };
        let checker = match cell.architecture {
            ArchitectureKind::LlmOnly => None,
            _ => Some(&guardian as &dyn crate::agents::RuleChecker),
        };
        let log = run_architecture(
            cell.architecture,
            strategist.as_mut(),
            &ctx,
            &run,
            checker,
            live.as_mut().map(|l| l as &mut dyn crate::agents::ImpactEstimator),
        )?;
        let metrics = compute_metrics(&log)?;
        Ok((log, metrics))
    })();
    match outcome {
        Ok((log, metrics)) => CellResult {
            cell,
            log: Some(log),
            metrics: Some(metrics),
            error: None,
        },
        Err(e) => CellResult {
            cell,
            log: None,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

fn run_cells(
    cells: Vec<Cell>,
    cfg: &BenchConfig,
    engine: Option<&CausalEngine>,
    factory: &StrategistFactory,
) -> Result<Vec<CellResult>, BenchError> {
    let go = || {
        cells
            .par_iter()
            .map(|c| run_cell(*c, cfg, engine, factory))
            .collect::<Vec<_>>()
    };
    match cfg.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))?;
            Ok(pool.install(go))
        }
        None => Ok(go()),
    }
}

/// Every architecture x scenario x seed, from identical initial conditions.
pub fn run_matrix(
    architectures: &[ArchitectureKind],
    scenarios: &[Bias],
    cfg: &BenchConfig,
    engine: Option<&CausalEngine>,
    factory: &StrategistFactory,
) -> Result<Vec<CellResult>, BenchError> {
    if architectures.is_empty() {
        return Err(BenchError::EmptyMatrix("no architectures"));
    }
    if scenarios.is_empty() {
        return Err(BenchError::EmptyMatrix("no scenarios"));
    }
    if cfg.seeds.is_empty() {
        return Err(BenchError::EmptyMatrix("no seeds"));
    }
    let mut cells = Vec::new();
    for &architecture in architectures {
        for &scenario in scenarios {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    architecture,
                    scenario,
                    seed,
                    trust_multiplier: cfg.trust_multiplier,
                });
            }
        }
    }
    run_cells(cells, cfg, engine, factory)
}

/// CHIMERA under the neutral objective at each multiplier.
pub fn run_trust_sweep(
    multipliers: &[f64],
    cfg: &BenchConfig,
    engine: &CausalEngine,
    factory: &StrategistFactory,
) -> Result<Vec<CellResult>, BenchError> {
    if multipliers.is_empty() {
        return Err(BenchError::EmptyMatrix("no multipliers"));
    }
    let seed = *cfg
        .seeds
        .first()
        .ok_or(BenchError::EmptyMatrix("no seeds"))?;
    let cells = multipliers
        .iter()
        .map(|&m| Cell {
            architecture: ArchitectureKind::Chimera,
            scenario: Bias::Neutral,
            seed,
            trust_multiplier: m,
        })
        .collect();
    run_cells(cells, cfg, Some(engine), factory)
}

pub fn table1_csv(results: &[CellResult]) -> String {
    let mut out = String::from("Architecture,Scenario,Total Profit,Final Trust,ΔTrust,Sharpe,Violations\n");
    for r in results {
        let Some(m) = &r.metrics else {
            let _ = writeln!(
                out,
                "{},{},failed,,,,",
                r.cell.architecture, r.cell.scenario
            );
            continue;
        };
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.3},{:+.1}%,{:.2},{:.1}%",
            r.cell.architecture,
            r.cell.scenario,
            m.total_profit,
            m.final_trust,
            m.trust_delta_pct,
            m.sharpe,
            m.violation_rate_pct
        );
    }
    out
}

pub fn table2_csv(results: &[CellResult]) -> String {
    let mut out = String::from("Multiplier,Total Profit,Mean Weekly,Std Dev,Sharpe,Final Trust\n");
    for r in results {
        match &r.metrics {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{:.0},{:.2},{:.2},{:.2},{:.2},{:.3}",
                    r.cell.trust_multiplier,
                    m.total_profit,
                    m.mean_weekly,
                    m.std_weekly,
                    m.sharpe,
                    m.final_trust
                );
            }
            None => {
                let _ = writeln!(out, "{:.0},failed,,,,", r.cell.trust_multiplier);
            }
        }
    }
    out
}

/// Mean and sample deviation of the headline metrics per cell across seeds.
pub fn multiseed_csv(results: &[CellResult]) -> String {
    let mut groups: Vec<((ArchitectureKind, Bias), Vec<&MetricsSummary>)> = Vec::new();
    for r in results {
        let Some(m) = &r.metrics else { continue };
        let key = (r.cell.architecture, r.cell.scenario);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(m),
            None => groups.push((key, vec![m])),
        }
    }
    let stat = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, sd)
    };
    let mut out = String::from(
        "Architecture,Scenario,Seeds,Total Profit Mean,Total Profit SD,Final Trust Mean,Final Trust SD,Sharpe Mean,Sharpe SD\n",
    );
    for ((a, s), ms) in groups {
        let (pm, ps) = stat(&ms.iter().map(|m| m.total_profit).collect::<Vec<_>>());
        let (tm, ts) = stat(&ms.iter().map(|m| m.final_trust).collect::<Vec<_>>());
        let (sm, ss) = stat(&ms.iter().map(|m| m.sharpe).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{a},{s},{},{pm:.2},{ps:.2},{tm:.4},{ts:.4},{sm:.3},{ss:.3}",
            ms.len()
        );
    }
    out
}

fn rolling(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Tidy plot series: `(file name, csv)`.
pub fn plot_csvs(results: &[CellResult]) -> Vec<(&'static str, String)> {
    let mut cum = String::from("architecture,scenario,seed,trust_multiplier,week,cumulative_profit\n");
    let mut weekly = String::from("architecture,scenario,seed,trust_multiplier,week,profit,rolling_3\n");
    let mut trust = String::from("architecture,scenario,seed,trust_multiplier,week,trust\n");
    let mut price = String::from("architecture,scenario,seed,trust_multiplier,week,price,rolling_5\n");
    for r in results {
        let Some(log) = &r.log else { continue };
        let id = format!(
            "{},{},{},{:.0}",
            r.cell.architecture, r.cell.scenario, r.cell.seed, r.cell.trust_multiplier
        );
        let profits = log.profits();
        let prices: Vec<f64> = log.records.iter().map(|w| w.state_after.price).collect();
        let p3 = rolling(&profits, 3);
        let r5 = rolling(&prices, 5);
        for (i, w) in log.records.iter().enumerate() {
            let _ = writeln!(cum, "{id},{},{}", w.week, fmt(w.state_after.cumulative_profit));
            let _ = writeln!(weekly, "{id},{},{},{}", w.week, fmt(w.profit), fmt(p3[i]));
            let _ = writeln!(trust, "{id},{},{}", w.week, fmt(w.trust));
            let _ = writeln!(price, "{id},{},{},{}", w.week, fmt(prices[i]), fmt(r5[i]));
        }
    }
    vec![
        ("plot_cumulative_profit.csv", cum),
        ("plot_weekly_profit.csv", weekly),
        ("plot_trust.csv", trust),
        ("plot_price.csv", price),
    ]
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), BenchError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn cell_dir_name(cell: &Cell, multi_seed: bool, sweep: bool) -> String {
    let mut name = if sweep {
        format!("sweep_{:.0}", cell.trust_multiplier)
    } else {
        format!("{}_{}", cell.architecture.slug(), cell.scenario)
    };
    if multi_seed {
        let _ = write!(name, "_seed{}", cell.seed);
    }
    name
}

fn write_cells(out: &Path, results: &[CellResult], sweep: bool) -> Result<(), BenchError> {
    let multi = {
        let mut seeds: Vec<u64> = results.iter().map(|r| r.cell.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds.len() > 1
    };
    for r in results {
        let dir = out.join(cell_dir_name(&r.cell, multi, sweep));
        std::fs::create_dir_all(&dir)?;
        if let Some(log) = &r.log {
            write_atomic(&dir.join("episode.csv"), log.to_csv_string()?.as_bytes())?;
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            cell: &'a Cell,
            strategist: Option<&'a str>,
            metrics: Option<&'a MetricsSummary>,
            error: Option<&'a str>,
        }
        let summary = Summary {
            cell: &r.cell,
            strategist: r.log.as_ref().map(|l| l.strategist.as_str()),
            metrics: r.metrics.as_ref(),
            error: r.error.as_deref(),
        };
        write_atomic(
            &dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
    }
    Ok(())
}

pub fn write_matrix_outputs(out: &Path, results: &[CellResult]) -> Result<(), BenchError> {
    std::fs::create_dir_all(out)?;
    write_cells(out, results, false)?;
    write_atomic(&out.join("table1.csv"), table1_csv(results).as_bytes())?;
    let seeds = results
        .iter()
        .map(|r| r.cell.seed)
        .collect::<std::collections::BTreeSet<_>>();
    if seeds.len() > 1 {
        write_atomic(&out.join("table1_seeds.csv"), multiseed_csv(results).as_bytes())?;
    }
    for (name, body) in plot_csvs(results) {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    Ok(())
}

pub fn write_sweep_outputs(out: &Path, results: &[CellResult]) -> Result<(), BenchError> {
    std::fs::create_dir_all(out)?;
    write_cells(out, results, true)?;
    write_atomic(&out.join("table2.csv"), table2_csv(results).as_bytes())?;
    let mut pareto = String::from("trust_multiplier,final_trust,total_profit\n");
    for r in results {
        if let Some(m) = &r.metrics {
            let _ = writeln!(
                pareto,
                "{:.0},{},{}",
                r.cell.trust_multiplier,
                fmt(m.final_trust),
                fmt(m.total_profit)
            );
        }
    }
    write_atomic(&out.join("pareto.csv"), pareto.as_bytes())?;
    let plots = plot_csvs(results);
    for (name, body) in plots {
        write_atomic(&out.join(format!("sweep_{name}")), body.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rolling_mean_uses_a_trailing_window() {
        assert_eq!(rolling(&[1.0, 2.0, 3.0, 4.0], 3), vec![1.0, 1.5, 2.0, 3.0]);
    }

    #[test]
    fn settings_text_roundtrip() {
        let mut cfg = BenchConfig::default();
        for kv in [
            "engine.n_trees=5",
            "corpus.episodes=10",
            "bench.seeds=1,2,3",
            "bench.workers=2",
            "max_price=140",
        ] {
            cfg.apply_override(kv).unwrap();
        }
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        let mut back = BenchConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.apply_override("bench.nope=1").is_err());
        assert!(cfg.apply_override("engine.n_folds=1").is_ok());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn table_headers() {
        assert!(table1_csv(&[])
            .starts_with("Architecture,Scenario,Total Profit,Final Trust,ΔTrust,Sharpe,Violations\n"));
        assert!(table2_csv(&[])
            .starts_with("Multiplier,Total Profit,Mean Weekly,Std Dev,Sharpe,Final Trust\n"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let cfg = BenchConfig::default();
        let f = scripted_factory();
        assert!(run_matrix(&[], &[Bias::Neutral], &cfg, None, f.as_ref()).is_err());
        assert!(run_matrix(&[ArchitectureKind::LlmOnly], &[], &cfg, None, f.as_ref()).is_err());
    }

    #[test]
    fn chimera_cell_without_engine_fails_alone() {
        let cfg = BenchConfig {
            weeks: 4,
            ..BenchConfig::default()
        };
        let f = scripted_factory();
        let res = run_matrix(
            &[ArchitectureKind::Chimera, ArchitectureKind::LlmOnly],
            &[Bias::Volume],
            &cfg,
            None,
            f.as_ref(),
        )
        .unwrap();
        assert!(res[0].error.as_deref().unwrap().contains("causal engine"));
        assert!(res[1].metrics.is_some());
    }
}
