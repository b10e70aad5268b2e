use std::fs;
use std::path::{Path, PathBuf};

use loopflow::graphmaps::{LedgerMode, LedgerReport};
use serde::Serialize;

use crate::CliError;

/// Ledger validation status embedded in every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerStatus {
    pub mode: LedgerMode,
    pub valid: bool,
    pub probe_ratio: Option<f64>,
    pub failed_checks: Vec<String>,
}

impl From<&LedgerReport> for LedgerStatus {
    fn from(r: &LedgerReport) -> Self {
        Self {
            mode: r.mode,
            valid: r.valid,
            probe_ratio: r.probe_ratio,
            failed_checks: r.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_hash: String,
    pub ledger: LedgerStatus,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

/// Output directory of one subcommand run.
#[derive(Debug, Clone)]
pub struct Output {
    pub dir: PathBuf,
    pub meta: Meta,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn create(root: &Path, meta: Meta) -> Result<Self, CliError> {
        let dir = root.join(&meta.subcommand).join(&meta.config_hash);
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
        Ok(Self {
            dir,
            meta,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(path.clone(), e))?;
        self.written.push(path);
        Ok(())
    }

    /// `{"meta": …, "result": …}`, pretty-printed with a trailing newline.
    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&Envelope {
            meta: &self.meta,
            result,
        })
        .map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV preceded by one `#` comment line carrying the metadata.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let text = format!("{}\n{}", self.comment(), body);
        self.write(name, text.as_bytes())
    }

    /// Plain-text table for plotting tools; comment line as for CSV.
    pub fn table(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        self.csv(name, body)
    }

    pub fn comment(&self) -> String {
        format!(
            "# loopflow {} subcommand={} config_hash={} ledger_mode={} ledger_valid={}",
            self.meta.version,
            self.meta.subcommand,
            self.meta.config_hash,
            match self.meta.ledger.mode {
                LedgerMode::Theoretical => "theoretical",
                LedgerMode::Empirical => "empirical",
            },
            self.meta.ledger.valid
        )
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
