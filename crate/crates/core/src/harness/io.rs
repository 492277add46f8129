use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{ObservableSeries, Observables, Regime};

use super::config::ExperimentConfig;
use super::run::{AnalysisSummary, RunBundle};

/// Version written into every JSON output.
pub const SCHEMA_VERSION: &str = "1.0";
/// Major schema version this build can read.
pub const SUPPORTED_MAJOR: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SERIES_FILE: &str = "series.csv";
pub const FINAL_STATE_FILE: &str = "final_state.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const SERIES_COLUMNS: [&str; 6] = ["step", "mean_n", "var_n", "energy", "participation_ratio", "edge_mass"];
pub const FINAL_STATE_COLUMNS: [&str; 2] = ["n", "probability"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub series: String,
    pub final_state: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: String,
    pub code_version: String,
    pub regime: Regime,
    pub config: ExperimentConfig,
    pub analysis: AnalysisSummary,
    pub series_rows: usize,
    pub files: OutputFiles,
}

impl Summary {
    pub fn of(bundle: &RunBundle) -> Self {
        Summary {
            schema_version: SCHEMA_VERSION.to_string(),
            code_version: CODE_VERSION.to_string(),
            regime: bundle.config.regime,
            config: bundle.config.clone(),
            analysis: bundle.analysis.clone(),
            series_rows: bundle.series.entries.len(),
            files: OutputFiles {
                series: SERIES_FILE.to_string(),
                final_state: FINAL_STATE_FILE.to_string(),
            },
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same
/// directory, so `path` is either absent, the old file, or complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| Error::io(format!("creating a temporary file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.path().display()), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e.error))?;
    Ok(())
}

pub fn series_csv(series: &ObservableSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if series.entries.is_empty() {
        w.write_record(SERIES_COLUMNS)?;
    }
    for row in &series.entries {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

pub fn final_state_csv(rows: &[(i64, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FINAL_STATE_COLUMNS)?;
    for (n, p) in rows {
        w.serialize((n, p))?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

pub fn summary_json(bundle: &RunBundle) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(&Summary::of(bundle)).expect("summary serializes");
    text.push('\n');
    text.into_bytes()
}

/// Writes `series.csv`, `final_state.csv` and `summary.json` into `dir`.
pub fn write_bundle(bundle: &RunBundle, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(SERIES_FILE), &series_csv(&bundle.series)?)?;
    write_atomic(&dir.join(FINAL_STATE_FILE), &final_state_csv(&bundle.final_state)?)?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_json(bundle))
}

/// Rejects versions whose major component this build does not read.
pub fn check_schema_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major != Some(SUPPORTED_MAJOR) {
        return Err(Error::Schema {
            found: found.to_string(),
            supported: SUPPORTED_MAJOR,
        });
    }
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let json_err = |source| Error::Json {
        path: path.to_path_buf(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(v) => check_schema_version(v)?,
        None => {
            return Err(Error::Schema {
                found: "missing".into(),
                supported: SUPPORTED_MAJOR,
            })
        }
    }
    serde_json::from_value(value).map_err(json_err)
}

fn check_header(reader: &mut csv::Reader<std::fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Domain(format!(
            "{}: columns {:?}, expected {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

pub fn read_series(path: &Path, regime: Regime) -> Result<ObservableSeries> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &SERIES_COLUMNS, path)?;
    let entries = reader.deserialize::<Observables>().collect::<Result<Vec<_>, _>>()?;
    Ok(ObservableSeries { regime, entries })
}

pub fn read_final_state(path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &FINAL_STATE_COLUMNS, path)?;
    Ok(reader.deserialize::<(i64, f64)>().collect::<Result<Vec<_>, _>>()?)
}

/// Reads a directory written by [`write_bundle`].
pub fn load_bundle(dir: &Path) -> Result<RunBundle> {
    let summary = read_summary(&dir.join(SUMMARY_FILE))?;
    let series = read_series(&dir.join(&summary.files.series), summary.regime)?;
    let final_state = read_final_state(&dir.join(&summary.files.final_state))?;
    Ok(RunBundle {
        config: summary.config,
        series,
        final_state,
        analysis: summary.analysis,
    })
}
