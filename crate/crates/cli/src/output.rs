use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, CliResult};

pub fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

pub fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// One line of a plot-ready series.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub parameter: String,
    pub threshold_or_bin: f64,
    pub value: f64,
}

impl CsvRow {
    pub fn new(parameter: impl Into<String>, threshold_or_bin: f64, value: f64) -> Self {
        CsvRow { parameter: parameter.into(), threshold_or_bin, value }
    }
}

/// A machine-readable run record: the resolved settings and the result.
#[derive(Debug, Serialize)]
pub struct Record<'a, P: Serialize, R: Serialize> {
    pub command: &'static str,
    pub config: &'a hcm_core::RunConfig,
    pub params: P,
    pub result: R,
}

/// Where records and series go.
#[derive(Debug, Clone)]
pub struct Sink {
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Sink {
    pub fn json(&self, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("records always serialize");
        self.text(&text)
    }

    /// Writes a document to `--out` or stdout.
    pub fn text(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => write(path, &format!("{text}\n")),
            None => {
                let mut stdout = std::io::stdout().lock();
                writeln!(stdout, "{text}").map_err(|source| CliError::Io { path: "<stdout>".into(), source })
            }
        }
    }

    pub fn series(&self, rows: &[CsvRow]) -> CliResult<()> {
        let Some(path) = &self.csv else {
            return Ok(());
        };
        let io_err = |e: csv::Error| CliError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        };
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(io_err)?;
        w.write_record(["parameter", "threshold_or_bin", "value"]).map_err(io_err)?;
        for r in rows {
            w.serialize(r).map_err(io_err)?;
        }
        w.flush().map_err(|source| CliError::Io { path: path.display().to_string(), source })
    }
}
