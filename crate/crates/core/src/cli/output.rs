use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::CliError;

/// One `(metric, value)` measurement. Shared by every tabular report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub command: &'static str,
    pub method: String,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub nfe: Option<u64>,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Machine-readable run description written next to the CSV files.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub toolkit_version: String,
    pub config_sha256: String,
    pub files: Vec<String>,
    pub failed_checks: usize,
    /// Wall-clock seconds per stage; kept out of the CSV files so those
    /// stay byte-reproducible.
    pub wall_time_seconds: BTreeMap<String, f64>,
}

pub(crate) fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

/// CSV from a header and pre-formatted records.
pub(crate) fn table_to_csv(header: &[String], records: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner()
        .map_err(|e| CliError::Csv(csv::Error::from(e.into_error())))
}

pub(crate) fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}
