use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::Regime;

use super::config::ExperimentConfig;
use super::io::{write_atomic, write_bundle};
use super::run::{run_experiment, RunBundle};

/// Value lists to cross. Absent axes keep the base config's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub regime: Option<Vec<Regime>>,
    #[serde(default)]
    pub kick_strength: Option<Vec<f64>>,
    #[serde(default)]
    pub period: Option<Vec<f64>>,
    #[serde(default)]
    pub meas_period: Option<Vec<u64>>,
    #[serde(default)]
    pub steps: Option<Vec<u64>>,
    /// Explicit seeds. Without this axis every cell gets a seed derived
    /// from the base seed and the cell index.
    #[serde(default)]
    pub seed: Option<Vec<u64>>,
}

impl SweepGrid {
    fn has_axes(&self) -> bool {
        self.regime.is_some()
            || self.kick_strength.is_some()
            || self.period.is_some()
            || self.meas_period.is_some()
            || self.steps.is_some()
            || self.seed.is_some()
    }

    /// Number of cells in the cross product; zero without axes or when any
    /// axis is empty.
    pub fn cell_count(&self) -> usize {
        if !self.has_axes() {
            return 0;
        }
        fn len<T>(axis: &Option<Vec<T>>) -> usize {
            axis.as_ref().map_or(1, Vec::len)
        }
        len(&self.regime)
            * len(&self.kick_strength)
            * len(&self.period)
            * len(&self.meas_period)
            * len(&self.steps)
            * len(&self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub grid: SweepGrid,
    /// Maximum number of cells running at once; defaults to the number of CPUs.
    #[serde(default)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub config: ExperimentConfig,
}

/// Seed of cell `index` when the grid has no seed axis.
pub fn derived_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng.next_u64()
}

impl SweepPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let plan: SweepPlan = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate().map_err(|e| e.context("base"))?;
        if self.concurrency == Some(0) {
            return Err(Error::config("concurrency", "must be at least 1"));
        }
        for cell in self.cells() {
            cell.config.validate().map_err(|e| e.context(format!("cell {}", cell.index)))?;
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.grid.cell_count()
    }

    /// Cells in row-major order over (regime, K, T, s, steps, seed).
    pub fn cells(&self) -> Vec<SweepCell> {
        let count = self.cell_count();
        if count == 0 {
            return Vec::new();
        }
        let g = &self.grid;
        let b = &self.base;
        let regimes = g.regime.clone().unwrap_or_else(|| vec![b.regime]);
        let ks = g.kick_strength.clone().unwrap_or_else(|| vec![b.kick_strength]);
        let ts = g.period.clone().unwrap_or_else(|| vec![b.period]);
        let ss = g.meas_period.clone().unwrap_or_else(|| vec![b.meas_period]);
        let steps = g.steps.clone().unwrap_or_else(|| vec![b.steps]);
        let seeds: Vec<Option<u64>> = match &g.seed {
            Some(v) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::with_capacity(count);
        for &regime in &regimes {
            for &k in &ks {
                for &t in &ts {
                    for &s in &ss {
                        for &n in &steps {
                            for &seed in &seeds {
                                let index = cells.len();
                                let mut config = b.clone();
                                config.regime = regime;
                                config.kick_strength = k;
                                config.period = t;
                                config.meas_period = s;
                                config.steps = n;
                                config.seed = seed.unwrap_or_else(|| derived_seed(b.seed, index));
                                config.output.dir = None;
                                cells.push(SweepCell { index, config });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub regime: Regime,
    pub kick_strength: f64,
    pub period: f64,
    pub meas_period: u64,
    pub steps: u64,
    pub seed: u64,
    pub status: String,
    pub b_est: Option<f64>,
    pub b_stderr: Option<f64>,
    pub t_star: Option<f64>,
    pub slope_ratio: Option<f64>,
    pub no_suppression: Option<bool>,
    pub ell: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn new(cell: &SweepCell, outcome: &Result<RunBundle>) -> Self {
        let c = &cell.config;
        let mut row = SweepRow {
            cell: cell.index,
            regime: c.regime,
            kick_strength: c.kick_strength,
            period: c.period,
            meas_period: c.meas_period,
            steps: c.steps,
            seed: c.seed,
            status: "ok".into(),
            b_est: None,
            b_stderr: None,
            t_star: None,
            slope_ratio: None,
            no_suppression: None,
            ell: None,
            error: None,
        };
        match outcome {
            Ok(b) => {
                let a = &b.analysis;
                if let Some(d) = &a.diffusion.value {
                    row.b_est = Some(d.b_est);
                    row.b_stderr = Some(d.stderr);
                }
                if let Some(bt) = &a.break_time.value {
                    row.t_star = bt.t_star();
                    row.slope_ratio = bt.slope_ratio();
                    row.no_suppression = Some(!bt.is_suppressed());
                }
                row.ell = a.localization.value.as_ref().map(|l| l.ell);
            }
            Err(e) => {
                row.status = "failed".into();
                row.error = Some(e.to_string());
            }
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: usize,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn cell_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("cell-{index:04}"))
}

/// Runs every cell, at most `concurrency` at a time. A failing cell is
/// recorded in the report and does not stop the others. With `out`, each
/// cell's bundle goes to `out/cell-NNNN/` and the table to `out/sweep.csv`.
pub fn run_sweep(plan: &SweepPlan, out: Option<&Path>) -> Result<SweepReport> {
    plan.base.validate().map_err(|e| e.context("base"))?;
    let cells = plan.cells();
    let threads = plan
        .concurrency
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Error::config("concurrency", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;

    let run_cell = |cell: &SweepCell| -> Result<RunBundle> {
        let bundle = run_experiment(&cell.config)?;
        if let Some(out) = out {
            write_bundle(&bundle, &cell_dir(out, cell.index))?;
        }
        Ok(bundle)
    };
    let outcomes: Vec<Result<RunBundle>> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let rows: Vec<SweepRow> = cells.iter().zip(&outcomes).map(|(c, o)| SweepRow::new(c, o)).collect();
    let failures = rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| CellFailure {
                cell: r.cell,
                error: e.clone(),
            })
        })
        .collect();
    let report = SweepReport {
        cells: cells.len(),
        rows,
        failures,
    };
    if let Some(out) = out {
        write_atomic(&out.join("sweep.csv"), &sweep_csv(&report)?)?;
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_atomic(&out.join("sweep.json"), json.as_bytes())?;
    }
    Ok(report)
}

pub const SWEEP_COLUMNS: [&str; 15] = [
    "cell",
    "regime",
    "kick_strength",
    "period",
    "meas_period",
    "steps",
    "seed",
    "status",
    "b_est",
    "b_stderr",
    "t_star",
    "slope_ratio",
    "no_suppression",
    "ell",
    "error",
];

pub fn sweep_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}
