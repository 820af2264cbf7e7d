//! `chimera`: command-line entry point.

use std::fs::File;
use std::io::{BufReader, Read};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chimera_core::agents::{ArchitectureKind, Bias, Strategist};
use chimera_core::bench::{
    fit_engine, run_matrix, run_trust_sweep, scripted_factory, write_matrix_outputs,
    write_sweep_outputs, BenchConfig, Cell, CellResult, StrategistFactory, DEFAULT_MULTIPLIERS,
};
use chimera_core::bench::matrix::{table1_csv, table2_csv};
use chimera_core::causal::{
    generate_corpus, long_term_value, read_dataset, write_dataset, CausalEngine,
};
use chimera_core::checker::{explore, CheckerConfig};
use chimera_core::guardian::{repair_action, validate_action};
use chimera_core::sim::{Action, MarketState};
use chimera_llm::{HttpTransport, LlmConfig, LlmStrategist, Transcript};
use chimera_service::ServiceConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

/// Rough bytes held per distinct state by the checker's visited set.
const BYTES_PER_STATE: usize = 64;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] chimera_core::ConfigError),
    #[error(transparent)]
    Bench(#[from] chimera_core::BenchError),
    #[error(transparent)]
    Causal(#[from] chimera_core::CausalError),
    #[error(transparent)]
    Llm(#[from] chimera_llm::LlmError),
    #[error(transparent)]
    Service(#[from] chimera_service::ServiceError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "chimera", version, about = "Guarded, causally informed pricing agents on a simulated market")]
struct Cli {
    /// Key-value config file, applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting; repeatable. Applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Business-rule checks.
    #[command(subcommand)]
    Guardian(GuardianCmd),
    /// Exhaustively explore the repaired state space.
    Verify(VerifyArgs),
    /// Counterfactual engine: datasets, fitting and prediction.
    #[command(subcommand)]
    Causal(CausalCmd),
    /// Experiment matrix and trust sweep.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Subcommand)]
enum GuardianCmd {
    /// Read `{"action": .., "state": ..}` JSON and print the verdict and repair.
    Check {
        /// Input file; stdin when omitted or `-`.
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    horizon: Option<u32>,
    /// Proposed price changes in percent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    price_choices: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ad_choices: Option<Vec<f64>>,
    /// Price rounding used for state deduplication.
    #[arg(long)]
    quantum: Option<f64>,
    /// Cap on stored distinct states.
    #[arg(long)]
    max_states: Option<usize>,
    /// Memory budget for the visited set, converted to a state cap.
    #[arg(long, value_name = "MIB")]
    memory_mb: Option<usize>,
    /// Deduplicate states regardless of week.
    #[arg(long)]
    week_agnostic: bool,
    #[arg(long)]
    stop_at_first: bool,
    /// Turn off a repair stage, e.g. to confirm the checker notices.
    #[arg(long, value_enum)]
    disable: Vec<Stage>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    ClipPriceChange,
    CapPrice,
    FloorPrice,
    ClampAdRange,
    LimitAdIncrease,
}

#[derive(Debug, Subcommand)]
enum CausalCmd {
    /// Simulate the randomised training corpus and write it as CSV.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the engine and write a versioned JSON artifact.
    Fit {
        /// Training CSV; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the effect of one action.
    Predict {
        #[arg(long)]
        engine: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        price_change: f64,
        #[arg(long)]
        ad_spend: f64,
        /// State JSON file; the configured initial state when omitted.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        trust_multiplier: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum StrategistKind {
    #[default]
    Scripted,
    /// Chat-completions endpoint from CHIMERA_LLM_* variables.
    Llm,
}

#[derive(Debug, Args)]
struct EpisodeArgs {
    #[arg(long)]
    weeks: Option<u32>,
    /// One or more seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Engine artifact; fitted from the config when omitted.
    #[arg(long)]
    engine: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    strategist: StrategistKind,
    /// Directory for model transcripts (LLM strategist only).
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Every architecture x scenario x seed.
    Run {
        #[arg(long, value_delimiter = ',', default_value = "chimera,guardian,llm-only")]
        arch: Vec<ArchitectureKind>,
        #[arg(long, value_delimiter = ',', default_value = "neutral,volume,margin")]
        scenario: Vec<Bias>,
        #[arg(long)]
        trust_multiplier: Option<f64>,
        #[command(flatten)]
        episode: EpisodeArgs,
    },
    /// CHIMERA under the neutral objective at several trust multipliers.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
        #[command(flatten)]
        episode: EpisodeArgs,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "CHIMERA_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Pre-fitted engine artifact.
    #[arg(long, env = "CHIMERA_ENGINE")]
    engine: Option<PathBuf>,
    /// Idle session lifetime in seconds.
    #[arg(long, env = "CHIMERA_SESSION_TTL", default_value_t = 86_400)]
    ttl_secs: u64,
    /// Journal sessions here and replay them on start.
    #[arg(long, env = "CHIMERA_PERSIST_DIR")]
    persist_dir: Option<PathBuf>,
    /// Shared bearer token required on every request.
    #[arg(long, env = "CHIMERA_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Allowed browser origin; any when omitted.
    #[arg(long, env = "CHIMERA_CORS_ORIGIN")]
    cors_origin: Option<String>,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn load_config(cli: &Cli) -> Result<BenchConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Deserialize)]
struct CheckInput {
    action: Action,
    state: Option<MarketState>,
}

fn guardian_check(cfg: &BenchConfig, input: Option<&Path>) -> Result<bool, CliError> {
    let text = match input {
        Some(p) if p != Path::new("-") => read_file(p)?,
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let req: CheckInput = serde_json::from_str(&text)?;
    let state = req.state.unwrap_or_else(|| cfg.market.sim.initial_state());
    let cs = &cfg.market.constraints;
    let verdict = validate_action(&req.action, &state, cs);
    let repair = repair_action(&req.action, &state, cs);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "verdict": verdict, "repair": repair }))?
    );
    Ok(verdict.is_valid)
}

fn verify(cfg: &BenchConfig, a: &VerifyArgs) -> Result<bool, CliError> {
    let mut c = CheckerConfig {
        constraints: cfg.market.constraints.clone(),
        initial_price: cfg.market.sim.initial_price,
        initial_ad: cfg.market.sim.initial_ad,
        week_agnostic: a.week_agnostic,
        stop_at_first: a.stop_at_first,
        ..CheckerConfig::default()
    };
    if let Some(h) = a.horizon {
        c.horizon = h;
    }
    if let Some(p) = &a.price_choices {
        c.price_choices = p.clone();
    }
    if let Some(ad) = &a.ad_choices {
        c.ad_choices = ad.clone();
    }
    if let Some(q) = a.quantum {
        c.price_quantum = q;
    }
    let from_memory = a.memory_mb.map(|mb| (mb << 20) / BYTES_PER_STATE);
    c.max_states = match (a.max_states, from_memory) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    for stage in &a.disable {
        let p = &mut c.pipeline;
        match stage {
            Stage::ClipPriceChange => p.clip_price_change = false,
            Stage::CapPrice => p.cap_price = false,
            Stage::FloorPrice => p.floor_price = false,
            Stage::ClampAdRange => p.clamp_ad_range = false,
            Stage::LimitAdIncrease => p.limit_ad_increase = false,
        }
    }
    let report = explore(&c).map_err(CliError::Invalid)?;
    let body = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &body)?;
    }
    println!("{body}");
    eprintln!("{}", report.summary());
    Ok(report.passed())
}

fn causal(cfg: &BenchConfig, cmd: &CausalCmd) -> Result<(), CliError> {
    match cmd {
        CausalCmd::Generate { out } => {
            let data = generate_corpus(&cfg.market.sim, &cfg.market.constraints, &cfg.corpus, &cfg.engine)?;
            write_dataset(File::create(out)?, &data)?;
            eprintln!("wrote {} observations to {}", data.len(), out.display());
        }
        CausalCmd::Fit { data, out } => {
            let rows = match data {
                Some(p) => read_dataset(BufReader::new(File::open(p).map_err(|source| {
                    CliError::File {
                        path: p.display().to_string(),
                        source,
                    }
                })?))?,
                None => generate_corpus(&cfg.market.sim, &cfg.market.constraints, &cfg.corpus, &cfg.engine)?,
            };
            let engine = CausalEngine::fit(&rows, &cfg.engine)?;
            engine.save(out)?;
            eprintln!("fitted on {} observations; artifact {}", rows.len(), out.display());
        }
        CausalCmd::Predict {
            engine,
            price_change,
            ad_spend,
            state,
            trust_multiplier,
        } => {
            let engine = CausalEngine::load(engine)?;
            let state = match state {
                Some(p) => serde_json::from_str(&read_file(p)?)?,
                None => cfg.market.sim.initial_state(),
            };
            let est = engine.estimate(&state, &Action::new(*price_change, *ad_spend));
            let ltv = match trust_multiplier {
                Some(m) => long_term_value(&est, *m),
                None => engine.long_term_value(&est),
            };
            let mut body = serde_json::to_value(est)?;
            body["long_term_value"] = json!(ltv);
            println!("{}", serde_json::to_string_pretty(&body)?);
        }
    }
    Ok(())
}

fn apply_episode_args(cfg: &mut BenchConfig, e: &EpisodeArgs) {
    if let Some(w) = e.weeks {
        cfg.weeks = w;
    }
    if let Some(s) = &e.seed {
        cfg.seeds = s.clone();
    }
}

fn engine_for(cfg: &BenchConfig, e: &EpisodeArgs) -> Result<CausalEngine, CliError> {
    Ok(match &e.engine {
        Some(p) => CausalEngine::load(p)?,
        None => {
            eprintln!("fitting engine on {} x {} simulated weeks", cfg.corpus.episodes, cfg.corpus.weeks);
            fit_engine(cfg)?
        }
    })
}

fn factory_for(e: &EpisodeArgs) -> Result<Box<StrategistFactory>, CliError> {
    match e.strategist {
        StrategistKind::Scripted => Ok(scripted_factory()),
        StrategistKind::Llm => {
            let llm = LlmConfig::from_env()?;
            let transport = Arc::new(HttpTransport::new(&llm)?);
            let dir = e.transcripts.clone().unwrap_or_else(|| e.out.join("transcripts"));
            std::fs::create_dir_all(&dir)?;
            Ok(Box::new(move |cell: &Cell| -> Box<dyn Strategist> {
                let name = format!(
                    "{}_{}_seed{}_tm{:.0}.jsonl",
                    cell.architecture.slug(),
                    cell.scenario,
                    cell.seed,
                    cell.trust_multiplier
                );
                let st = LlmStrategist::new(transport.clone(), &llm, cell.seed);
                match Transcript::create(dir.join(name)) {
                    Ok(t) => Box::new(st.with_transcript(Arc::new(t))),
                    Err(err) => {
                        eprintln!("transcript unavailable: {err}");
                        Box::new(st)
                    }
                }
            }))
        }
    }
}

fn report_errors(results: &[CellResult]) -> bool {
    let mut ok = true;
    for r in results {
        if let Some(e) = &r.error {
            ok = false;
            eprintln!(
                "{} / {} / seed {}: {e}",
                r.cell.architecture, r.cell.scenario, r.cell.seed
            );
        }
    }
    ok
}

fn bench(mut cfg: BenchConfig, cmd: &BenchCmd) -> Result<bool, CliError> {
    match cmd {
        BenchCmd::Run {
            arch,
            scenario,
            trust_multiplier,
            episode,
        } => {
            apply_episode_args(&mut cfg, episode);
            if let Some(m) = trust_multiplier {
                cfg.trust_multiplier = *m;
            }
            cfg.validate()?;
            let factory = factory_for(episode)?;
            let engine = if arch.contains(&ArchitectureKind::Chimera) {
                Some(engine_for(&cfg, episode)?)
            } else {
                None
            };
            let results = run_matrix(arch, scenario, &cfg, engine.as_ref(), factory.as_ref())?;
            write_matrix_outputs(&episode.out, &results)?;
            print!("{}", table1_csv(&results));
            Ok(report_errors(&results))
        }
        BenchCmd::Sweep {
            multipliers,
            episode,
        } => {
            apply_episode_args(&mut cfg, episode);
            cfg.validate()?;
            let multipliers = multipliers.clone().unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec());
            let factory = factory_for(episode)?;
            let engine = engine_for(&cfg, episode)?;
            let results = run_trust_sweep(&multipliers, &cfg, &engine, factory.as_ref())?;
            write_sweep_outputs(&episode.out, &results)?;
            print!("{}", table2_csv(&results));
            Ok(report_errors(&results))
        }
    }
}

fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let cfg = ServiceConfig {
        bind: a.bind,
        engine_path: a.engine.clone(),
        ttl: Duration::from_secs(a.ttl_secs),
        persist_dir: a.persist_dir.clone(),
        token: a.token.clone(),
        cors_origin: a.cors_origin.clone(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{}", cfg.bind);
    rt.block_on(chimera_service::serve(cfg))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Guardian(GuardianCmd::Check { input }) => guardian_check(&cfg, input.as_deref()),
        Command::Verify(a) => verify(&cfg, a),
        Command::Causal(c) => causal(&cfg, c).map(|_| true),
        Command::Bench(b) => bench(cfg, b),
        Command::Serve(a) => serve(a).map(|_| true),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
