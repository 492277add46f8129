//! Per-step diagnostics of an occupation distribution and the recorder
//! that collects them during an evolution.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::model::{ActionLattice, Hamiltonian};

/// Which dynamics produced a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Classical,
    QuantumDeterministic,
    QuantumStaticRandom,
    QuantumPerStepRandom,
    RateEquation,
    MonteCarloMeasured,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Classical,
        Regime::QuantumDeterministic,
        Regime::QuantumStaticRandom,
        Regime::QuantumPerStepRandom,
        Regime::RateEquation,
        Regime::MonteCarloMeasured,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Classical => "classical",
            Regime::QuantumDeterministic => "quantum_deterministic",
            Regime::QuantumStaticRandom => "quantum_static_random",
            Regime::QuantumPerStepRandom => "quantum_per_step_random",
            Regime::RateEquation => "rate_equation",
            Regime::MonteCarloMeasured => "monte_carlo_measured",
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(
            self,
            Regime::QuantumDeterministic | Regime::QuantumStaticRandom | Regime::QuantumPerStepRandom
        )
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.replace('-', "_").to_ascii_lowercase();
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Regime::ALL.iter().map(|r| r.as_str()).collect();
                format!("unknown regime `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// One row of an [`ObservableSeries`]. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub step: u64,
    pub mean_n: f64,
    pub var_n: f64,
    pub energy: f64,
    pub participation_ratio: f64,
    pub edge_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub regime: Regime,
    pub entries: Vec<Observables>,
}

impl ObservableSeries {
    pub fn new(regime: Regime) -> Self {
        ObservableSeries {
            regime,
            entries: Vec::new(),
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.step)
    }

    pub fn last(&self) -> Option<&Observables> {
        self.entries.last()
    }

    /// `(step, var_n)` pairs, the input of the fitting routines.
    pub fn variance_points(&self) -> Vec<(u64, f64)> {
        self.entries.iter().map(|e| (e.step, e.var_n)).collect()
    }
}

/// Anything that can be viewed as an occupation distribution on a lattice.
pub trait Occupation {
    fn lattice(&self) -> ActionLattice;
    fn step(&self) -> u64;
    /// Occupation probabilities indexed like the lattice.
    fn occupation(&self) -> Cow<'_, [f64]>;
}

/// Moments of an occupation distribution. `edge_band` is the width of the
/// band at each lattice edge counted into `edge_mass`, normally the kernel
/// half-width.
pub fn moments(state: &impl Occupation, hamiltonian: Hamiltonian, edge_band: usize) -> Observables {
    moments_of(state.lattice(), &state.occupation(), state.step(), hamiltonian, edge_band)
}

pub fn moments_of(
    lattice: ActionLattice,
    probs: &[f64],
    step: u64,
    hamiltonian: Hamiltonian,
    edge_band: usize,
) -> Observables {
    debug_assert_eq!(probs.len(), lattice.size());
    let levels = || lattice.levels().zip(probs.iter().copied());
    let mean_n: f64 = levels().map(|(n, p)| n as f64 * p).sum();
    let var_n: f64 = levels()
        .map(|(n, p)| {
            let d = n as f64 - mean_n;
            d * d * p
        })
        .sum();
    let energy: f64 = levels().map(|(n, p)| hamiltonian.energy(n as f64) * p).sum();
    let purity: f64 = probs.iter().map(|p| p * p).sum();
    let band = edge_band.max(1).min(probs.len() / 2);
    let edge_mass: f64 = probs[..band].iter().sum::<f64>() + probs[probs.len() - band..].iter().sum::<f64>();
    Observables {
        step,
        mean_n,
        var_n,
        energy,
        participation_ratio: if purity > 0.0 { 1.0 / purity } else { f64::INFINITY },
        edge_mass: edge_mass.clamp(0.0, 1.0),
    }
}

/// Stride used when none is configured: every step up to 10^3 steps,
/// otherwise `ceil(steps / 10^3)`.
pub fn default_stride(steps: u64) -> u64 {
    if steps <= 1000 {
        1
    } else {
        steps.div_ceil(1000)
    }
}

/// Collects [`Observables`] every `stride` steps, plus the final step.
#[derive(Debug, Clone)]
pub struct Recorder {
    stride: u64,
    hamiltonian: Hamiltonian,
    edge_band: usize,
    series: ObservableSeries,
}

impl Recorder {
    pub fn new(regime: Regime, hamiltonian: Hamiltonian, edge_band: usize, stride: u64) -> Self {
        Recorder {
            stride: stride.max(1),
            hamiltonian,
            edge_band,
            series: ObservableSeries::new(regime),
        }
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    /// Whether `step` is due, given the last step of the run.
    pub fn is_due(&self, step: u64, final_step: u64) -> bool {
        step % self.stride == 0 || step == final_step
    }

    pub fn record(&mut self, state: &impl Occupation) {
        let obs = moments(state, self.hamiltonian, self.edge_band);
        self.push(obs);
    }

    pub fn push(&mut self, obs: Observables) {
        if let Some(last) = self.series.entries.last() {
            if last.step >= obs.step {
                return;
            }
        }
        self.series.entries.push(obs);
    }

    pub fn series(&self) -> &ObservableSeries {
        &self.series
    }

    pub fn finish(self) -> ObservableSeries {
        self.series
    }
}
