use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use chimera_core::agents::{
    complete_week, execute_raw, execute_repaired, ArchitectureKind, Bias,
};
use chimera_core::bench::log::{EpisodeLog, WeekRecord};
use chimera_core::config::MarketConfig;
use chimera_core::guardian::Guardian;
use chimera_core::sim::{Action, MarketState, StepOutcome};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ServiceError};

pub const DEFAULT_HORIZON: u32 = 52;
pub const DEFAULT_TRUST_MULTIPLIER: f64 = 150_000.0;

/// Body of `POST /sessions`. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    /// Simulator and guardian settings by config key, e.g.
    /// `{"noise_sigma": 0.05, "max_price": 140}`. `weeks` and
    /// `trust_multiplier` are accepted here too.
    pub overrides: BTreeMap<String, Value>,
    /// Episode length in weeks.
    pub weeks: Option<u32>,
    /// Weight on trust when computing `long_term_value`.
    pub trust_multiplier: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    /// Execute exactly what was sent, as the unguarded baseline does.
    Raw,
    /// Route through the guardian's repair first.
    #[default]
    Repaired,
}

/// Body of `POST /sessions/{id}/act`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRequest {
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub mode: ActMode,
    /// The week the caller believes the session is at. When present, the
    /// request is rejected unless it matches, so a duplicate submission
    /// cannot advance the market twice.
    #[serde(default)]
    pub week: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActResponse {
    /// 1-based week just played.
    pub week: u32,
    pub mode: ActMode,
    pub outcome: StepOutcome,
    pub state: MarketState,
    pub record: WeekRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalEntry {
    Create {
        session_id: String,
        created_unix: f64,
        request: CreateRequest,
    },
    Act {
        action: Action,
        mode: ActMode,
    },
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub market: MarketConfig,
    pub horizon: u32,
    pub trust_multiplier: f64,
    pub state: MarketState,
    pub log: EpisodeLog,
    pub created_unix: f64,
    request: CreateRequest,
    journal: Option<File>,
    journal_path: Option<PathBuf>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Session {
    pub fn new(id: String, request: CreateRequest) -> Result<Self, ApiError> {
        let bad = |m: String| ApiError::bad_request("invalid_override", m);
        let mut market = MarketConfig::default();
        let mut horizon = request.weeks;
        let mut multiplier = request.trust_multiplier;
        for (key, value) in &request.overrides {
            let text = value_text(value);
            match key.as_str() {
                "weeks" => horizon = Some(text.parse().map_err(|e| bad(format!("weeks: {e}")))?),
                "trust_multiplier" => {
                    multiplier = Some(text.parse().map_err(|e| bad(format!("trust_multiplier: {e}")))?)
                }
                k => market.set(k, &text).map_err(|e| bad(e.to_string()))?,
            }
        }
        market.validate().map_err(|e| bad(e.to_string()))?;
        let horizon = horizon.unwrap_or(DEFAULT_HORIZON);
        if horizon == 0 {
            return Err(bad("weeks must be positive".into()));
        }
        let trust_multiplier = multiplier.unwrap_or(DEFAULT_TRUST_MULTIPLIER);
        if !(trust_multiplier.is_finite() && trust_multiplier >= 0.0) {
            return Err(bad("trust_multiplier must be finite and non-negative".into()));
        }
        let state = market.sim.initial_state();
        let log = EpisodeLog {
            architecture: ArchitectureKind::LlmGuardian,
            scenario: Bias::Neutral,
            seed: market.sim.seed,
            strategist: "http".into(),
            trust_multiplier,
            initial_state: state,
            records: Vec::new(),
        };
        Ok(Self {
            id,
            market,
            horizon,
            trust_multiplier,
            state,
            log,
            created_unix: unix_now(),
            request,
            journal: None,
            journal_path: None,
        })
    }

    /// Start an append-only journal in `dir` holding the creation request.
    pub fn persist_to(&mut self, dir: &Path) -> Result<(), ServiceError> {
        let path = journal_path(dir, &self.id);
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let entry = JournalEntry::Create {
            session_id: self.id.clone(),
            created_unix: self.created_unix,
            request: self.request.clone(),
        };
        write_entry(&mut file, &entry).map_err(|e| ServiceError::Journal {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.journal = Some(file);
        self.journal_path = Some(path);
        Ok(())
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal_path.as_deref()
    }

    pub fn finished(&self) -> bool {
        self.state.week >= self.horizon
    }

    /// Play one week. The journal is written before the state changes, so
    /// a failed write leaves the session untouched.
    pub fn act(&mut self, action: Action, mode: ActMode) -> Result<ActResponse, ApiError> {
        if self.finished() {
            return Err(ApiError::conflict(
                "horizon_reached",
                format!("session already played all {} weeks", self.horizon),
            ));
        }
        let cs = &self.market.constraints;
        let mut record = match mode {
            ActMode::Raw => execute_raw(&self.state, action, cs),
            ActMode::Repaired => {
                execute_repaired(&self.state, action, &Guardian::new(cs.clone()), cs).0
            }
        };
        let (next, outcome) = complete_week(&mut record, &self.state, &self.market.sim)
            .map_err(|e| ApiError::bad_request("simulation_error", e.to_string()))?;
        if let Some(file) = self.journal.as_mut() {
            write_entry(file, &JournalEntry::Act { action, mode })
                .map_err(|e| ApiError::internal(format!("journal write failed: {e}")))?;
        }
        self.state = next;
        self.log.records.push(record.clone());
        Ok(ActResponse {
            week: record.week,
            mode,
            outcome,
            state: next,
            record,
        })
    }
}

pub fn journal_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

fn write_entry(file: &mut File, entry: &JournalEntry) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(entry).map_err(std::io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.sync_data()
}

/// Rebuild a session from its journal and reopen the journal for appends.
/// A torn final line from an interrupted write is cut off the file.
pub fn replay(path: &Path) -> Result<Session, ServiceError> {
    let fail = |message: String| ServiceError::Journal {
        path: path.display().to_string(),
        message,
    };
    let lines: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<Result<_, _>>()?;
    let n = lines.len();
    let mut session: Option<Session> = None;
    let mut valid_len = 0u64;
    let mut torn = false;
    for (i, line) in lines.iter().enumerate() {
        let entry: JournalEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(_) if i + 1 == n && i > 0 => {
                torn = true;
                break;
            }
            Err(e) => return Err(fail(format!("line {}: {e}", i + 1))),
        };
        match (entry, session.as_mut()) {
            (
                JournalEntry::Create {
                    session_id,
                    created_unix,
                    request,
                },
                None,
            ) => {
                let mut s = Session::new(session_id, request).map_err(|e| fail(e.message))?;
                s.created_unix = created_unix;
                session = Some(s);
            }
            (JournalEntry::Act { action, mode }, Some(s)) => {
                s.act(action, mode)
                    .map_err(|e| fail(format!("line {}: {}", i + 1, e.message)))?;
            }
            _ => return Err(fail(format!("line {}: out-of-order entry", i + 1))),
        }
        valid_len += line.len() as u64 + 1;
    }
    let mut session = session.ok_or_else(|| fail("empty journal".into()))?;
    let file = OpenOptions::new().append(true).open(path)?;
    if torn {
        file.set_len(valid_len)?;
    }
    session.journal = Some(file);
    session.journal_path = Some(path.to_path_buf());
    Ok(session)
}
