//! Result records and CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::experiments::Table;

/// Bumped whenever a field of [`ResultRecord`] or a CSV column changes.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// Everything one run produced, with the config needed to reproduce it.
#[derive(Debug, Serialize)]
pub struct ResultRecord {
    pub schema_version: &'static str,
    pub experiment: String,
    pub tool_version: &'static str,
    /// Resolved config (seed and output directory filled in); `null` for a
    /// config-less `validate`.
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub passed: bool,
    pub outputs: Value,
    pub diagnostics: Value,
    /// CSV files written next to this record.
    pub files: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_seconds: f64,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn file_name(prefix: Option<&str>, name: &str) -> String {
    format!("{}{name}", prefix.unwrap_or(""))
}

pub fn write_table(dir: &Path, prefix: Option<&str>, table: &Table) -> std::io::Result<PathBuf> {
    let path = dir.join(file_name(prefix, table.file));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

/// Writes every table and then the record; returns the record path.
pub fn write_all(dir: &Path, prefix: Option<&str>, tables: &[Table], record: &mut ResultRecord) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for t in tables {
        write_table(dir, prefix, t)?;
        record.files.push(file_name(prefix, t.file));
    }
    let path = dir.join(file_name(prefix, &format!("{}.json", record.experiment)));
    let text = serde_json::to_string_pretty(record).map_err(std::io::Error::other)?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}
