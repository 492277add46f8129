//! Dynamics with an energy measurement every `s` kicks.
//!
//! Two descriptions are provided:
//! * the rate map on probabilities, `P'_n = sum_m J_{m-n}(K)^2 P_m`, which
//!   is what remains of the amplitude map once phases are destroyed every
//!   period;
//! * Monte Carlo trajectories that kick an amplitude state `s` times and
//!   then collapse it onto a basis state with Born-rule probabilities.
//!
//! `s = 1` is the watched case in which both descriptions coincide in
//! distribution. Larger `s` lets the amplitude evolve coherently between
//! measurements.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::KickKernel;
use crate::error::{Error, Result};
use crate::model::{ActionLattice, Hamiltonian};
use crate::observables::{Observables, ObservableSeries, Occupation, Recorder, Regime};
use crate::quantum::{check_edge_masses, AmplitudeState, QuantumMap, DEFAULT_EDGE_THRESHOLD, TRIM_NORM_SQR};

/// Allowed deviation of a probability vector's total from one.
pub const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityState {
    lattice: ActionLattice,
    probs: Vec<f64>,
    step: u64,
    support: Option<(usize, usize)>,
}

impl ProbabilityState {
    pub fn delta(lattice: ActionLattice, n0: i64) -> Result<Self> {
        let idx = lattice
            .index_of(n0)
            .ok_or_else(|| Error::Domain(format!("initial level {n0} lies outside the lattice")))?;
        let mut probs = vec![0.0; lattice.size()];
        probs[idx] = 1.0;
        Ok(ProbabilityState {
            lattice,
            probs,
            step: 0,
            support: Some((idx, idx)),
        })
    }

    /// Rejects negative or non-finite entries and totals further than
    /// [`NORMALIZATION_TOL`] from one.
    pub fn from_probabilities(lattice: ActionLattice, probs: Vec<f64>, step: u64) -> Result<Self> {
        if probs.len() != lattice.size() {
            return Err(Error::Domain(format!(
                "{} probabilities for a lattice of {} sites",
                probs.len(),
                lattice.size()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(format!(
                "probability at level {} is {}",
                lattice.level(i),
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        let support = find_support(&probs);
        Ok(ProbabilityState {
            lattice,
            probs,
            step,
            support,
        })
    }

    pub fn lattice(&self) -> ActionLattice {
        self.lattice
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, n: i64) -> f64 {
        self.lattice.index_of(n).map_or(0.0, |i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn edge_masses(&self, band: usize) -> (f64, f64) {
        let size = self.probs.len();
        let band = band.min(size);
        let lower = self.probs[..band].iter().sum();
        let upper = self.probs[size - band..].iter().sum();
        (lower, upper)
    }
}

impl Occupation for ProbabilityState {
    fn lattice(&self) -> ActionLattice {
        self.lattice
    }

    fn step(&self) -> u64 {
        self.step
    }

    fn occupation(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.probs)
    }
}

fn find_support(probs: &[f64]) -> Option<(usize, usize)> {
    let lo = probs.iter().position(|p| *p != 0.0)?;
    let hi = probs.iter().rposition(|p| *p != 0.0)?;
    Some((lo, hi))
}

/// `P_n = |a_n|^2` on the same lattice and step.
pub fn dephase(state: &AmplitudeState) -> ProbabilityState {
    let probs = state.probabilities();
    let support = find_support(&probs);
    ProbabilityState {
        lattice: state.lattice(),
        probs,
        step: state.step(),
        support,
    }
}

/// The rate map for a fixed kernel and lattice.
#[derive(Debug, Clone)]
pub struct RateMap {
    lattice: ActionLattice,
    half_width: usize,
    row: Vec<f64>,
    edge_threshold: f64,
    window: Vec<f64>,
}

impl RateMap {
    pub fn new(kernel: &KickKernel, lattice: ActionLattice, edge_threshold: f64) -> Result<Self> {
        lattice.check_width(kernel.half_width())?;
        if !(edge_threshold > 0.0 && edge_threshold < 1.0) {
            return Err(Error::config("edge_threshold", "must lie in (0, 1)"));
        }
        Ok(RateMap {
            lattice,
            half_width: kernel.half_width(),
            row: kernel.stochastic_row(),
            edge_threshold,
            window: Vec::new(),
        })
    }

    pub fn lattice(&self) -> ActionLattice {
        self.lattice
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn step(&mut self, state: &mut ProbabilityState) -> Result<()> {
        if state.lattice != self.lattice {
            return Err(Error::Domain("state lattice differs from the map lattice".into()));
        }
        let (lo, hi) = state
            .support
            .ok_or_else(|| Error::Internal("cannot evolve an all-zero probability vector".into()))?;
        let half = self.half_width;
        check_edge_masses(self.lattice, state.step, half, state.edge_masses(half), self.edge_threshold)?;

        let last = self.lattice.size() - 1;
        let out_lo = lo.saturating_sub(half);
        let out_hi = (hi + half).min(last);
        self.window.clear();
        for i in out_lo..=out_hi {
            let j_lo = lo.max(i.saturating_sub(half));
            let j_hi = hi.min(i + half);
            let mut acc = 0.0;
            if j_lo <= j_hi {
                let k_lo = j_lo + half - i;
                for (p, w) in state.probs[j_lo..=j_hi].iter().zip(&self.row[k_lo..]) {
                    acc += p * w;
                }
            }
            self.window.push(acc);
        }
        state.probs[out_lo..=out_hi].copy_from_slice(&self.window);

        let mut new_lo = out_lo;
        let mut new_hi = out_hi;
        while new_lo < new_hi && state.probs[new_lo] < TRIM_NORM_SQR {
            state.probs[new_lo] = 0.0;
            new_lo += 1;
        }
        while new_hi > new_lo && state.probs[new_hi] < TRIM_NORM_SQR {
            state.probs[new_hi] = 0.0;
            new_hi -= 1;
        }
        state.support = if new_lo == new_hi && state.probs[new_lo] == 0.0 {
            None
        } else {
            Some((new_lo, new_hi))
        };
        state.step += 1;
        Ok(())
    }

    pub fn evolve(&mut self, state: &mut ProbabilityState, steps: u64, mut recorder: Option<&mut Recorder>) -> Result<()> {
        let final_step = state.step + steps;
        if let Some(rec) = recorder.as_deref_mut() {
            if rec.is_due(state.step, final_step) {
                rec.record(state);
            }
        }
        for _ in 0..steps {
            self.step(state)?;
            if let Some(rec) = recorder.as_deref_mut() {
                if rec.is_due(state.step, final_step) {
                    rec.record(state);
                }
            }
        }
        Ok(())
    }
}

/// One rate-map step applied to a copy of `state`.
pub fn rate_step(state: &ProbabilityState, kernel: &KickKernel) -> Result<ProbabilityState> {
    let mut map = RateMap::new(kernel, state.lattice, DEFAULT_EDGE_THRESHOLD)?;
    let mut next = state.clone();
    map.step(&mut next)?;
    Ok(next)
}

pub fn evolve_rate(
    state: &ProbabilityState,
    kernel: &KickKernel,
    steps: u64,
    recorder: Option<&mut Recorder>,
) -> Result<ProbabilityState> {
    let mut map = RateMap::new(kernel, state.lattice, DEFAULT_EDGE_THRESHOLD)?;
    let mut next = state.clone();
    map.evolve(&mut next, steps, recorder)?;
    Ok(next)
}

/// Samples a level with probability `|a_n|^2 / sum |a_m|^2` and collapses
/// `state` onto it in place. Consumes exactly one `f64` from `rng`.
pub fn collapse<R: Rng + ?Sized>(state: &mut AmplitudeState, rng: &mut R) -> Result<i64> {
    let (lo, hi) = state
        .support()
        .ok_or_else(|| Error::Internal("cannot measure an all-zero amplitude vector".into()))?;
    let amps = &state.amplitudes()[lo..=hi];
    let total: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Internal(format!("cannot measure a state of norm {total}")));
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (offset, a) in amps.iter().enumerate() {
        let p = a.norm_sqr();
        if p == 0.0 {
            continue;
        }
        acc += p;
        chosen = Some(offset);
        if target < acc {
            break;
        }
    }
    let idx = lo + chosen.expect("support holds a nonzero amplitude");
    state.collapse_to_index(idx);
    Ok(state.lattice().level(idx))
}

/// Non-mutating form of [`collapse`].
pub fn measure_collapse<R: Rng + ?Sized>(state: &AmplitudeState, rng: &mut R) -> Result<(i64, AmplitudeState)> {
    let mut collapsed = state.clone();
    let n = collapse(&mut collapsed, rng)?;
    Ok((n, collapsed))
}

/// Measurement outcomes of one trajectory as `(step, level)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meas_period: u64,
    pub outcomes: Vec<(u64, i64)>,
}

/// Runs `steps` kicks, measuring after every `meas_period`-th kick. Kicks
/// left over after the last full period are applied without a measurement.
/// The recorder, if any, sees the state right after each measurement (and
/// the initial state).
pub fn evolve_measured<R: Rng + ?Sized>(
    state: &mut AmplitudeState,
    map: &mut QuantumMap,
    steps: u64,
    meas_period: u64,
    rng: &mut R,
    mut recorder: Option<&mut Recorder>,
) -> Result<Trajectory> {
    if meas_period == 0 {
        return Err(Error::config("meas_period", "must be at least 1"));
    }
    let mut outcomes = Vec::with_capacity((steps / meas_period) as usize);
    if steps > 0 {
        if let Some(rec) = recorder.as_deref_mut() {
            rec.record(state);
        }
    }
    let final_step = state.step() + steps;
    while state.step() < final_step {
        let block = meas_period.min(final_step - state.step());
        for _ in 0..block {
            map.step(state)?;
        }
        if block == meas_period {
            let n = collapse(state, rng)?;
            outcomes.push((state.step(), n));
            if let Some(rec) = recorder.as_deref_mut() {
                rec.record(state);
            }
        }
    }
    Ok(Trajectory { meas_period, outcomes })
}

/// Counts of outcomes at a single measurement step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    offset: i64,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn add(&mut self, n: i64) {
        self.add_count(n, 1);
    }

    fn add_count(&mut self, n: i64, count: u64) {
        if self.counts.is_empty() {
            self.offset = n;
            self.counts.push(0);
        } else if n < self.offset {
            let grow = (self.offset - n) as usize;
            self.counts.splice(0..0, std::iter::repeat_n(0, grow));
            self.offset = n;
        } else if n >= self.offset + self.counts.len() as i64 {
            self.counts.resize((n - self.offset) as usize + 1, 0);
        }
        self.counts[(n - self.offset) as usize] += count;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (n, c) in other.iter() {
            self.add_count(n, c);
        }
    }

    pub fn count(&self, n: i64) -> u64 {
        let i = n - self.offset;
        if i < 0 {
            return 0;
        }
        self.counts.get(i as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(level, count)` for every level with a nonzero count, ascending.
    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (self.offset + i as i64, *c))
    }

    /// Relative frequencies laid out on `lattice`.
    pub fn frequencies(&self, lattice: ActionLattice) -> Vec<f64> {
        let total = self.total() as f64;
        let mut out = vec![0.0; lattice.size()];
        for (n, c) in self.iter() {
            if let Some(i) = lattice.index_of(n) {
                out[i] = c as f64 / total;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub trajectories: u64,
    pub steps: u64,
    pub meas_period: u64,
    pub seed: u64,
    pub initial_n: i64,
}

/// Outcome histograms of an ensemble, one per measurement step (step 0 is
/// the initial basis state).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub plan: EnsemblePlan,
    pub lattice: ActionLattice,
    pub steps: Vec<u64>,
    pub histograms: Vec<Histogram>,
}

impl EnsembleResult {
    /// Observables of the empirical distribution at every measurement step.
    pub fn series(&self, hamiltonian: Hamiltonian, edge_band: usize) -> ObservableSeries {
        let mut series = ObservableSeries::new(Regime::MonteCarloMeasured);
        let band = edge_band.max(1) as i64;
        let lower_edge = self.lattice.n_min() + band;
        let upper_edge = self.lattice.n_max() - band;
        for (&step, hist) in self.steps.iter().zip(&self.histograms) {
            let total = hist.total() as f64;
            let mut s1 = 0.0;
            let mut energy = 0.0;
            let mut sum_sq: u128 = 0;
            let mut edge: u64 = 0;
            for (n, c) in hist.iter() {
                let cf = c as f64;
                s1 += n as f64 * cf;
                energy += hamiltonian.energy(n as f64) * cf;
                sum_sq += u128::from(c) * u128::from(c);
                if n < lower_edge || n > upper_edge {
                    edge += c;
                }
            }
            let mean = s1 / total;
            let var: f64 = hist
                .iter()
                .map(|(n, c)| {
                    let d = n as f64 - mean;
                    d * d * c as f64
                })
                .sum::<f64>()
                / total;
            series.entries.push(Observables {
                step,
                mean_n: mean,
                var_n: var,
                energy: energy / total,
                participation_ratio: total * total / sum_sq as f64,
                edge_mass: edge as f64 / total,
            });
        }
        series
    }
}

/// Random stream of trajectory `index`, independent of the phase streams
/// derived from the same seed.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    const SALT: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SALT);
    rng.set_stream(index);
    rng
}

struct Partial {
    map: QuantumMap,
    histograms: Vec<Histogram>,
    error: Option<(u64, Error)>,
}

/// Runs `plan.trajectories` independent trajectories from the basis state
/// `plan.initial_n`. Trajectories run in parallel; the merged counts do not
/// depend on scheduling. On failure the error of the lowest-index failing
/// trajectory is returned.
pub fn run_ensemble(map: &QuantumMap, plan: EnsemblePlan) -> Result<EnsembleResult> {
    if plan.meas_period == 0 {
        return Err(Error::config("meas_period", "must be at least 1"));
    }
    if plan.trajectories == 0 {
        return Err(Error::config("ensemble", "needs at least one trajectory"));
    }
    let lattice = map.lattice();
    let initial = AmplitudeState::delta(lattice, plan.initial_n)?;
    let measurements = (plan.steps / plan.meas_period) as usize;
    let steps: Vec<u64> = (0..=measurements as u64).map(|k| k * plan.meas_period).collect();

    let empty = || Partial {
        map: map.clone(),
        histograms: vec![Histogram::default(); measurements],
        error: None,
    };
    let merged = (0..plan.trajectories)
        .into_par_iter()
        .fold(empty, |mut acc, index| {
            if acc.error.as_ref().is_some_and(|(i, _)| *i < index) {
                return acc;
            }
            let mut rng = trajectory_rng(plan.seed, index);
            let mut state = initial.clone();
            let run = evolve_measured(
                &mut state,
                &mut acc.map,
                measurements as u64 * plan.meas_period,
                plan.meas_period,
                &mut rng,
                None,
            );
            match run {
                Ok(traj) => {
                    for (h, (_, n)) in acc.histograms.iter_mut().zip(traj.outcomes) {
                        h.add(n);
                    }
                }
                Err(e) => {
                    if acc.error.as_ref().is_none_or(|(i, _)| index < *i) {
                        acc.error = Some((index, e));
                    }
                }
            }
            acc
        })
        .reduce(empty, |mut a, b| {
            for (h, other) in a.histograms.iter_mut().zip(&b.histograms) {
                h.merge(other);
            }
            a.error = match (a.error, b.error) {
                (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
                (x, y) => x.or(y),
            };
            a
        });
    if let Some((index, e)) = merged.error {
        return Err(e.context(format!("trajectory {index}")));
    }
    let mut start = Histogram::default();
    start.add_count(plan.initial_n, plan.trajectories);
    let mut histograms = Vec::with_capacity(measurements + 1);
    histograms.push(start);
    histograms.extend(merged.histograms);
    Ok(EnsembleResult {
        plan,
        lattice,
        steps,
        histograms,
    })
}
