use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::LlmError;

/// Append-only JSON-lines log of model exchanges for one episode.
#[derive(Debug)]
pub struct Transcript {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
    seq: Mutex<u64>,
}

impl Transcript {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            out: Mutex::new(BufWriter::new(file)),
            seq: Mutex::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Write one record; `kind` is `exchange`, `retry` or `fallback`.
    pub fn record(&self, kind: &str, week: u32, phase: &str, body: Value) -> Result<(), LlmError> {
        let seq = {
            let mut s = self.seq.lock().unwrap_or_else(|e| e.into_inner());
            *s += 1;
            *s
        };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let line = json!({
            "seq": seq,
            "ts": ts,
            "kind": kind,
            "week": week,
            "phase": phase,
            "body": body,
        });
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}
