use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    break_time_estimate, diffusion_fit, localization_length_fit, BreakTime, DiffusionFit, LocalizationFit,
};
use crate::bessel::{KernelDiagnostics, KickKernel};
use crate::classical::{evolve_classical, init_ensemble};
use crate::error::{Error, Result};
use crate::measured::{run_ensemble, EnsemblePlan, ProbabilityState, RateMap};
use crate::model::{ActionLattice, PhaseMode};
use crate::observables::{moments_of, ObservableSeries, Recorder, Regime};
use crate::quantum::{AmplitudeState, QuantumMap};

use super::config::ExperimentConfig;

/// A fitted quantity, or the reason it could not be produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: Option<T>,
    pub reason: Option<String>,
}

impl<T> Estimate<T> {
    fn from_result(r: Result<T>) -> Self {
        match r {
            Ok(value) => Estimate {
                value: Some(value),
                reason: None,
            },
            Err(e) => Estimate::unavailable(e.to_string()),
        }
    }

    fn unavailable(reason: impl Into<String>) -> Self {
        Estimate {
            value: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    /// `K^2 / 4T`
    pub theory_b: f64,
    pub ensemble: u64,
    pub diffusion: Estimate<DiffusionFit>,
    pub break_time: Estimate<BreakTime>,
    pub localization: Estimate<LocalizationFit>,
    pub kernel: Option<KernelDiagnostics>,
    /// Total probability of the final distribution.
    pub final_norm: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunBundle {
    pub config: ExperimentConfig,
    pub series: ObservableSeries,
    /// `(level, probability)` for every level with nonzero probability.
    /// Classical actions are binned to the nearest integer.
    pub final_state: Vec<(i64, f64)>,
    pub analysis: AnalysisSummary,
}

impl RunBundle {
    pub fn regime(&self) -> Regime {
        self.config.regime
    }
}

/// Validates `config`, runs the regime it names and analyses the result.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunBundle> {
    config.validate()?;
    let regime = config.regime;
    let (series, final_probs, kernel) = match regime {
        Regime::Classical => run_classical(config),
        Regime::QuantumDeterministic => run_quantum(config),
        Regime::QuantumStaticRandom | Regime::QuantumPerStepRandom => run_phase_ensemble(config),
        Regime::RateEquation => run_rate(config),
        Regime::MonteCarloMeasured => run_monte_carlo(config),
    }
    .map_err(|e| if e.is_validation() { e } else { e.context(format!("{regime} run")) })?;

    let final_state: Vec<(i64, f64)> = match &final_probs {
        FinalDistribution::Lattice(lattice, probs) => lattice
            .levels()
            .zip(probs.iter().copied())
            .filter(|(_, p)| *p > 0.0)
            .collect(),
        FinalDistribution::Binned(rows) => rows.clone(),
    };
    let final_norm = final_state.iter().map(|(_, p)| p).sum();

    let points = series.variance_points();
    let diffusion = Estimate::from_result(diffusion_fit(&points, config.period, config.effective_fit_window()));
    let break_time = Estimate::from_result(break_time_estimate(&points));
    let localization = match &final_probs {
        FinalDistribution::Lattice(lattice, probs) => {
            Estimate::from_result(localization_length_fit(*lattice, probs, config.initial_n))
        }
        FinalDistribution::Binned(_) => Estimate::unavailable("not defined for the classical ensemble"),
    };
    let analysis = AnalysisSummary {
        theory_b: config.kick_strength * config.kick_strength / (4.0 * config.period),
        ensemble: config.effective_ensemble(),
        diffusion,
        break_time,
        localization,
        kernel: kernel.map(|k| k.diagnostics()),
        final_norm,
    };
    Ok(RunBundle {
        config: config.clone(),
        series,
        final_state,
        analysis,
    })
}

enum FinalDistribution {
    Lattice(ActionLattice, Vec<f64>),
    Binned(Vec<(i64, f64)>),
}

type Outcome = (ObservableSeries, FinalDistribution, Option<KickKernel>);

fn kernel(config: &ExperimentConfig) -> Result<KickKernel> {
    KickKernel::build(config.kick_strength, config.tail_tol)
}

fn run_classical(config: &ExperimentConfig) -> Result<Outcome> {
    let system = config.system()?;
    let count = config.effective_ensemble() as usize;
    let mut ens = init_ensemble(count, config.initial_n as f64, config.seed)?;
    let mut rec = Recorder::new(Regime::Classical, system.hamiltonian(), 0, config.effective_stride());
    evolve_classical(&mut ens, &system, config.steps, Some(&mut rec))?;

    let mut bins: Vec<i64> = ens.points().iter().map(|p| p.action.round() as i64).collect();
    bins.sort_unstable();
    let rows = bins
        .chunk_by(|a, b| a == b)
        .map(|c| (c[0], c.len() as f64 / count as f64))
        .collect();
    Ok((rec.finish(), FinalDistribution::Binned(rows), None))
}

fn run_quantum(config: &ExperimentConfig) -> Result<Outcome> {
    let system = config.system()?;
    let kernel = kernel(config)?;
    let mut map = QuantumMap::new(&system, &kernel, config.lattice, config.step_options())?;
    let mut state = AmplitudeState::delta(config.lattice, config.initial_n)?;
    let mut rec = Recorder::new(config.regime, system.hamiltonian(), kernel.half_width(), config.effective_stride());
    map.evolve(&mut state, config.steps, Some(&mut rec))?;
    let probs = state.probabilities();
    Ok((rec.finish(), FinalDistribution::Lattice(config.lattice, probs), Some(kernel)))
}

/// Averages the occupation over phase realizations with seeds
/// `seed, seed + 1, ...`, stepping all realizations in lockstep.
fn run_phase_ensemble(config: &ExperimentConfig) -> Result<Outcome> {
    let kernel = kernel(config)?;
    let lattice = config.lattice;
    let base = config.system()?;
    let count = config.effective_ensemble();
    let mut maps = Vec::with_capacity(count as usize);
    for i in 0..count {
        let seed = config.seed.wrapping_add(i);
        let mode = match base.phase_mode() {
            PhaseMode::StaticRandom { .. } => PhaseMode::StaticRandom { seed },
            PhaseMode::PerStepRandom { .. } => PhaseMode::PerStepRandom { seed },
            PhaseMode::Deterministic => PhaseMode::Deterministic,
        };
        maps.push(QuantumMap::new(&base.with_phase_mode(mode), &kernel, lattice, config.step_options())?);
    }
    let start = AmplitudeState::delta(lattice, config.initial_n)?;
    let mut states = vec![start; count as usize];
    let mut rec = Recorder::new(config.regime, base.hamiltonian(), kernel.half_width(), config.effective_stride());
    let mut average = vec![0.0; lattice.size()];

    let record = |states: &[AmplitudeState], rec: &mut Recorder, average: &mut Vec<f64>| {
        average.iter_mut().for_each(|p| *p = 0.0);
        for s in states {
            for (acc, a) in average.iter_mut().zip(s.amplitudes()) {
                *acc += a.norm_sqr();
            }
        }
        let scale = 1.0 / states.len() as f64;
        average.iter_mut().for_each(|p| *p *= scale);
        rec.push(moments_of(lattice, average, states[0].step(), base.hamiltonian(), kernel.half_width()));
    };

    // the final step is always due, so `average` ends up holding it
    let final_step = config.steps;
    if rec.is_due(0, final_step) {
        record(&states, &mut rec, &mut average);
    }
    for step in 1..=final_step {
        let results: Vec<Result<()>> = maps
            .par_iter_mut()
            .zip(states.par_iter_mut())
            .map(|(map, state)| map.step(state))
            .collect();
        if let Some((i, e)) = results
            .into_iter()
            .enumerate()
            .find_map(|(i, r)| r.err().map(|e| (i, e)))
        {
            return Err(e.context(format!("phase realization {i} (seed {})", config.seed.wrapping_add(i as u64))));
        }
        if rec.is_due(step, final_step) {
            record(&states, &mut rec, &mut average);
        }
    }
    Ok((rec.finish(), FinalDistribution::Lattice(lattice, average), Some(kernel)))
}

fn run_rate(config: &ExperimentConfig) -> Result<Outcome> {
    let system = config.system()?;
    let kernel = kernel(config)?;
    let mut map = RateMap::new(&kernel, config.lattice, config.edge_threshold)?;
    let mut state = ProbabilityState::delta(config.lattice, config.initial_n)?;
    let mut rec = Recorder::new(Regime::RateEquation, system.hamiltonian(), kernel.half_width(), config.effective_stride());
    map.evolve(&mut state, config.steps, Some(&mut rec))?;
    let probs = state.probabilities().to_vec();
    Ok((rec.finish(), FinalDistribution::Lattice(config.lattice, probs), Some(kernel)))
}

fn run_monte_carlo(config: &ExperimentConfig) -> Result<Outcome> {
    let system = config.system()?;
    let kernel = kernel(config)?;
    let map = QuantumMap::new(&system, &kernel, config.lattice, config.step_options())?;
    let plan = EnsemblePlan {
        trajectories: config.effective_ensemble(),
        steps: config.steps,
        meas_period: config.meas_period,
        seed: config.seed,
        initial_n: config.initial_n,
    };
    let result = run_ensemble(&map, plan)?;
    let mut series = result.series(system.hamiltonian(), kernel.half_width());
    let stride = config.effective_stride();
    let last = series.last().map(|o| o.step);
    series.entries.retain(|o| o.step % stride == 0 || Some(o.step) == last);
    let probs = result
        .histograms
        .last()
        .ok_or_else(|| Error::Internal("ensemble produced no histograms".into()))?
        .frequencies(config.lattice);
    Ok((series, FinalDistribution::Lattice(config.lattice, probs), Some(kernel)))
}
