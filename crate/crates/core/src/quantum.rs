//! Unitary kicked evolution of level amplitudes,
//! `a_n <- exp(-i phi(n, step)) sum_m a_m U_{m-n}`.
//!
//! Only the contiguous window of nonzero amplitudes is stored as live;
//! each step widens it by the kernel half-width and then drops edge
//! amplitudes whose squared modulus is below [`TRIM_NORM_SQR`].

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bessel::KickKernel;
use crate::error::{Edge, Error, Result};
use crate::model::{ActionLattice, KickedSystem, PhaseMode};
use crate::observables::{Occupation, Recorder};

/// Edge amplitudes with `|a|^2` below this are zeroed after each step.
pub const TRIM_NORM_SQR: f64 = 1e-300;

/// Leakage threshold applied to the outer kernel-width bands.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeState {
    lattice: ActionLattice,
    amplitudes: Vec<Complex64>,
    step: u64,
    /// Inclusive index range holding every nonzero amplitude.
    support: Option<(usize, usize)>,
}

impl AmplitudeState {
    /// `a_n = delta_{n, n0}` at step 0.
    pub fn delta(lattice: ActionLattice, n0: i64) -> Result<Self> {
        let idx = lattice
            .index_of(n0)
            .ok_or_else(|| Error::Domain(format!("initial level {n0} is outside [{}, {}]", lattice.n_min(), lattice.n_max())))?;
        let mut amplitudes = vec![ZERO; lattice.size()];
        amplitudes[idx] = Complex64::new(1.0, 0.0);
        Ok(AmplitudeState {
            lattice,
            amplitudes,
            step: 0,
            support: Some((idx, idx)),
        })
    }

    /// State from explicit amplitudes indexed like the lattice. Not renormalized.
    pub fn from_amplitudes(lattice: ActionLattice, amplitudes: Vec<Complex64>, step: u64) -> Result<Self> {
        if amplitudes.len() != lattice.size() {
            return Err(Error::Domain(format!(
                "{} amplitudes for a lattice of {} sites",
                amplitudes.len(),
                lattice.size()
            )));
        }
        let support = find_support(&amplitudes);
        Ok(AmplitudeState {
            lattice,
            amplitudes,
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

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, n: i64) -> Complex64 {
        self.lattice.index_of(n).map_or(ZERO, |i| self.amplitudes[i])
    }

    /// Levels spanned by the nonzero amplitudes.
    pub fn support_levels(&self) -> Option<(i64, i64)> {
        self.support.map(|(lo, hi)| (self.lattice.level(lo), self.lattice.level(hi)))
    }

    pub fn norm_sqr(&self) -> f64 {
        match self.support {
            Some((lo, hi)) => self.amplitudes[lo..=hi].iter().map(|a| a.norm_sqr()).sum(),
            None => 0.0,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Mass within `band` sites of each edge.
    pub fn edge_masses(&self, band: usize) -> (f64, f64) {
        let Some((lo, hi)) = self.support else {
            return (0.0, 0.0);
        };
        let size = self.amplitudes.len();
        let band = band.min(size);
        let lower = if lo < band {
            self.amplitudes[lo..band.min(hi + 1)].iter().map(|a| a.norm_sqr()).sum()
        } else {
            0.0
        };
        let upper_start = size - band;
        let upper = if hi >= upper_start {
            self.amplitudes[upper_start.max(lo)..=hi].iter().map(|a| a.norm_sqr()).sum()
        } else {
            0.0
        };
        (lower, upper)
    }

    pub(crate) fn support(&self) -> Option<(usize, usize)> {
        self.support
    }

    /// Replaces the state by the basis vector of lattice index `idx`.
    pub(crate) fn collapse_to_index(&mut self, idx: usize) {
        if let Some((lo, hi)) = self.support {
            self.amplitudes[lo..=hi].fill(ZERO);
        }
        self.amplitudes[idx] = Complex64::new(1.0, 0.0);
        self.support = Some((idx, idx));
    }
}

impl Occupation for AmplitudeState {
    fn lattice(&self) -> ActionLattice {
        self.lattice
    }

    fn step(&self) -> u64 {
        self.step
    }

    fn occupation(&self) -> Cow<'_, [f64]> {
        Cow::Owned(self.probabilities())
    }
}

fn find_support(amplitudes: &[Complex64]) -> Option<(usize, usize)> {
    let lo = amplitudes.iter().position(|a| *a != ZERO)?;
    let hi = amplitudes.iter().rposition(|a| *a != ZERO)?;
    Some((lo, hi))
}

/// How the kernel convolution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    /// Explicit sum over the kernel band.
    #[default]
    Direct,
    /// Zero-padded FFT convolution.
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub method: ConvolutionMethod,
    pub edge_threshold: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            method: ConvolutionMethod::Direct,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
        }
    }
}

/// The one-kick amplitude map for a fixed system, kernel and lattice.
/// Holds cached phase factors and FFT plans, so reuse it across steps.
#[derive(Clone)]
pub struct QuantumMap {
    system: KickedSystem,
    lattice: ActionLattice,
    half_width: usize,
    /// `U_d` for `d = m - n = -M..=M`.
    row: Vec<Complex64>,
    options: StepOptions,
    /// `exp(-i phi(n))` for every lattice site when phases do not depend on the step.
    fixed_phases: Option<Vec<Complex64>>,
    fft: FftCache,
    phase_buf: Vec<f64>,
    window: Vec<Complex64>,
}

impl QuantumMap {
    pub fn new(system: &KickedSystem, kernel: &KickKernel, lattice: ActionLattice, options: StepOptions) -> Result<Self> {
        check_kernel(system, kernel)?;
        lattice.check_width(kernel.half_width())?;
        if !(options.edge_threshold > 0.0 && options.edge_threshold < 1.0) {
            return Err(Error::config("edge_threshold", "must lie in (0, 1)"));
        }
        let fixed_phases = match system.phase_mode() {
            PhaseMode::PerStepRandom { .. } => None,
            _ => {
                let mut phases = Vec::new();
                system.free_phases_into(lattice.n_min(), lattice.n_max(), 0, &mut phases);
                Some(phases.into_iter().map(|phi| Complex64::from_polar(1.0, -phi)).collect())
            }
        };
        Ok(QuantumMap {
            system: *system,
            lattice,
            half_width: kernel.half_width(),
            row: kernel.unitary_row(system.convention()),
            options,
            fixed_phases,
            fft: FftCache::default(),
            phase_buf: Vec::new(),
            window: Vec::new(),
        })
    }

    pub fn system(&self) -> &KickedSystem {
        &self.system
    }

    pub fn lattice(&self) -> ActionLattice {
        self.lattice
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// Fails with [`Error::EdgeLeakage`] if either outer kernel band holds
    /// more than the configured threshold.
    pub fn check_edges(&self, state: &AmplitudeState) -> Result<()> {
        let (lower, upper) = state.edge_masses(self.half_width);
        check_edge_masses(self.lattice, state.step, self.half_width, (lower, upper), self.options.edge_threshold)
    }

    /// Applies one kick and free evolution in place.
    pub fn step(&mut self, state: &mut AmplitudeState) -> Result<()> {
        if state.lattice != self.lattice {
            return Err(Error::Domain("state lattice differs from the map lattice".into()));
        }
        let (lo, hi) = state
            .support
            .ok_or_else(|| Error::Internal("cannot evolve an all-zero amplitude vector".into()))?;
        self.check_edges(state)?;

        let half = self.half_width;
        let last = self.lattice.size() - 1;
        let out_lo = lo.saturating_sub(half);
        let out_hi = (hi + half).min(last);

        match self.options.method {
            ConvolutionMethod::Direct => self.convolve_direct(&state.amplitudes, lo, hi, out_lo, out_hi),
            ConvolutionMethod::Fft => self.convolve_fft(&state.amplitudes, lo, hi, out_lo, out_hi),
        }

        match &self.fixed_phases {
            Some(factors) => {
                for (a, f) in self.window.iter_mut().zip(&factors[out_lo..=out_hi]) {
                    *a *= f;
                }
            }
            None => {
                let n_lo = self.lattice.level(out_lo);
                let n_hi = self.lattice.level(out_hi);
                self.system.free_phases_into(n_lo, n_hi, state.step, &mut self.phase_buf);
                for (a, &phi) in self.window.iter_mut().zip(&self.phase_buf) {
                    *a *= Complex64::from_polar(1.0, -phi);
                }
            }
        }

        state.amplitudes[out_lo..=out_hi].copy_from_slice(&self.window);
        let mut new_lo = out_lo;
        let mut new_hi = out_hi;
        while new_lo < new_hi && state.amplitudes[new_lo].norm_sqr() < TRIM_NORM_SQR {
            state.amplitudes[new_lo] = ZERO;
            new_lo += 1;
        }
        while new_hi > new_lo && state.amplitudes[new_hi].norm_sqr() < TRIM_NORM_SQR {
            state.amplitudes[new_hi] = ZERO;
            new_hi -= 1;
        }
        state.support = if state.amplitudes[new_lo] == ZERO && new_lo == new_hi {
            None
        } else {
            Some((new_lo, new_hi))
        };
        state.step += 1;
        Ok(())
    }

    /// Applies `steps` kicks, recording observables whenever the recorder is due.
    pub fn evolve(&mut self, state: &mut AmplitudeState, steps: u64, mut recorder: Option<&mut Recorder>) -> Result<()> {
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

    fn convolve_direct(&mut self, amps: &[Complex64], lo: usize, hi: usize, out_lo: usize, out_hi: usize) {
        let half = self.half_width;
        self.window.clear();
        for i in out_lo..=out_hi {
            // lag d = j - i ranges over [-M, M], clipped to the live window
            let j_lo = lo.max(i.saturating_sub(half));
            let j_hi = hi.min(i + half);
            let mut acc = ZERO;
            if j_lo <= j_hi {
                let k_lo = j_lo + half - i;
                for (a, u) in amps[j_lo..=j_hi].iter().zip(&self.row[k_lo..]) {
                    acc += a * u;
                }
            }
            self.window.push(acc);
        }
    }

    fn convolve_fft(&mut self, amps: &[Complex64], lo: usize, hi: usize, out_lo: usize, out_hi: usize) {
        let half = self.half_width;
        let input_len = hi - lo + 1;
        // full linear correlation covers levels lo - M ..= hi + M
        let full_len = input_len + 2 * half;
        let size = full_len.next_power_of_two();
        let (forward, inverse, kernel_hat) = self.fft.get(size, &self.row);

        let mut buf = vec![ZERO; size];
        buf[..input_len].copy_from_slice(&amps[lo..=hi]);
        forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(kernel_hat.iter()) {
            *b *= k;
        }
        inverse.process(&mut buf);
        let scale = 1.0 / size as f64;

        // buf[o] is the output for lattice index lo - M + o
        self.window.clear();
        for i in out_lo..=out_hi {
            let o = i + half - lo;
            self.window.push(buf[o] * scale);
        }
    }
}

#[derive(Clone, Default)]
struct FftCache {
    planner_plans: HashMap<usize, FftPlan>,
}

#[derive(Clone)]
struct FftPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Arc<Vec<Complex64>>,
}

impl FftCache {
    fn get(&mut self, size: usize, row: &[Complex64]) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>, Arc<Vec<Complex64>>) {
        let plan = self.planner_plans.entry(size).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(size);
            let inverse = planner.plan_fft_inverse(size);
            // correlation with U is convolution with the reversed row
            let mut kernel = vec![ZERO; size];
            for (k, u) in row.iter().rev().enumerate() {
                kernel[k] = *u;
            }
            forward.process(&mut kernel);
            FftPlan {
                forward,
                inverse,
                kernel_hat: Arc::new(kernel),
            }
        });
        (plan.forward.clone(), plan.inverse.clone(), plan.kernel_hat.clone())
    }
}

/// Shared fail-fast policy for the amplitude and rate maps.
pub(crate) fn check_edge_masses(
    lattice: ActionLattice,
    step: u64,
    band: usize,
    (lower, upper): (f64, f64),
    threshold: f64,
) -> Result<()> {
    if band == 0 {
        return Ok(());
    }
    let (edge, mass) = if lower >= upper { (Edge::Lower, lower) } else { (Edge::Upper, upper) };
    if mass > threshold {
        let (suggested_min, suggested_max) = lattice.enlarged();
        return Err(Error::EdgeLeakage {
            step,
            edge,
            band,
            mass,
            threshold,
            suggested_min,
            suggested_max,
        });
    }
    Ok(())
}

pub(crate) fn check_kernel(system: &KickedSystem, kernel: &KickKernel) -> Result<()> {
    if kernel.kick_strength() != system.kick_strength() {
        return Err(Error::config(
            "kernel",
            format!(
                "kernel built for K={} but the system has K={}",
                kernel.kick_strength(),
                system.kick_strength()
            ),
        ));
    }
    Ok(())
}

/// One kick applied to a copy of `state` with default options.
pub fn quantum_step(state: &AmplitudeState, kernel: &KickKernel, system: &KickedSystem) -> Result<AmplitudeState> {
    let mut map = QuantumMap::new(system, kernel, state.lattice(), StepOptions::default())?;
    let mut next = state.clone();
    map.step(&mut next)?;
    Ok(next)
}

/// `steps` kicks from `state` with default options.
pub fn evolve_quantum(
    state: &AmplitudeState,
    kernel: &KickKernel,
    system: &KickedSystem,
    steps: u64,
    recorder: Option<&mut Recorder>,
) -> Result<AmplitudeState> {
    let mut map = QuantumMap::new(system, kernel, state.lattice(), StepOptions::default())?;
    let mut next = state.clone();
    map.evolve(&mut next, steps, recorder)?;
    Ok(next)
}
