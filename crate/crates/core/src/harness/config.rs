use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::FitWindow;
use crate::bessel::{DEFAULT_TAIL_TOL, MAX_TAIL_TOL};
use crate::error::{Error, Result};
use crate::model::{ActionLattice, Hamiltonian, KickConvention, KickedSystem, PhaseMode};
use crate::observables::{default_stride, Regime};
use crate::quantum::{ConvolutionMethod, StepOptions, DEFAULT_EDGE_THRESHOLD};

/// Longest run a config may request.
pub const MAX_STEPS: u64 = 100_000_000;

/// Default classical ensemble size.
pub const DEFAULT_CLASSICAL_POINTS: u64 = 100_000;
/// Default number of Monte Carlo trajectories.
pub const DEFAULT_TRAJECTORIES: u64 = 1_000;
/// Default number of phase realizations for the random-phase regimes.
pub const DEFAULT_REALIZATIONS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesFormat {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: SeriesFormat,
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_hamiltonian")]
    pub hamiltonian: Hamiltonian,
    pub kick_strength: f64,
    pub period: f64,
    #[serde(default)]
    pub kick_phase_convention: KickConvention,
    #[serde(default)]
    pub lattice: ActionLattice,
    pub regime: Regime,
    pub steps: u64,
    #[serde(default = "one")]
    pub meas_period: u64,
    /// Classical points, Monte Carlo trajectories or phase realizations,
    /// depending on the regime. Ignored by deterministic regimes.
    #[serde(default)]
    pub ensemble: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stride: Option<u64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_edge_threshold")]
    pub edge_threshold: f64,
    #[serde(default)]
    pub fit_window: Option<FitWindow>,
    #[serde(default)]
    pub method: ConvolutionMethod,
    #[serde(default)]
    pub initial_n: i64,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_hamiltonian() -> Hamiltonian {
    Hamiltonian::Rotor
}

fn one() -> u64 {
    1
}

fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

fn default_edge_threshold() -> f64 {
    DEFAULT_EDGE_THRESHOLD
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hamiltonian: Hamiltonian::Rotor,
            kick_strength: 5.0,
            period: 1.0,
            kick_phase_convention: KickConvention::PaperLiteral,
            lattice: ActionLattice::default(),
            regime: Regime::QuantumDeterministic,
            steps: 1000,
            meas_period: 1,
            ensemble: None,
            seed: 0,
            stride: None,
            tail_tol: DEFAULT_TAIL_TOL,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            fit_window: None,
            method: ConvolutionMethod::Direct,
            initial_n: 0,
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(regime: Regime, kick_strength: f64, period: f64, steps: u64) -> Self {
        ExperimentConfig {
            regime,
            kick_strength,
            period,
            steps,
            ..Default::default()
        }
    }

    /// Checks every field, reporting the first offending one by name.
    pub fn validate(&self) -> Result<()> {
        self.system()?;
        if self.steps > MAX_STEPS {
            return Err(Error::config("steps", format!("at most {MAX_STEPS}, got {}", self.steps)));
        }
        if self.meas_period == 0 {
            return Err(Error::config("meas_period", "must be at least 1"));
        }
        if self.ensemble == Some(0) {
            return Err(Error::config("ensemble", "must be at least 1"));
        }
        if self.stride == Some(0) {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol <= MAX_TAIL_TOL) {
            return Err(Error::config(
                "tail_tol",
                format!("must lie in (0, {MAX_TAIL_TOL:e}], got {:e}", self.tail_tol),
            ));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(Error::config(
                "edge_threshold",
                format!("must lie in (0, 1), got {}", self.edge_threshold),
            ));
        }
        if let Some(w) = self.fit_window {
            if w.end <= w.start {
                return Err(Error::config(
                    "fit_window",
                    format!("end {} must exceed start {}", w.end, w.start),
                ));
            }
        }
        if self.regime == Regime::Classical {
            if !self.hamiltonian.energy(self.initial_n as f64).is_finite() {
                return Err(Error::config("initial_n", "energy is not finite"));
            }
        } else if !self.lattice.contains(self.initial_n) {
            return Err(Error::config(
                "initial_n",
                format!(
                    "{} lies outside the lattice [{}, {}]",
                    self.initial_n,
                    self.lattice.n_min(),
                    self.lattice.n_max()
                ),
            ));
        }
        if self.regime == Regime::Classical && self.ensemble.is_some_and(|n| n > u64::from(u32::MAX)) {
            return Err(Error::config("ensemble", "at most 2^32 classical points"));
        }
        Ok(())
    }

    /// The system with the phase mode implied by the regime.
    pub fn system(&self) -> Result<KickedSystem> {
        let mode = match self.regime {
            Regime::QuantumStaticRandom => PhaseMode::StaticRandom { seed: self.seed },
            Regime::QuantumPerStepRandom => PhaseMode::PerStepRandom { seed: self.seed },
            _ => PhaseMode::Deterministic,
        };
        Ok(KickedSystem::new(self.hamiltonian, self.kick_strength, self.period)?
            .with_phase_mode(mode)
            .with_convention(self.kick_phase_convention))
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            method: self.method,
            edge_threshold: self.edge_threshold,
        }
    }

    pub fn effective_stride(&self) -> u64 {
        self.stride.unwrap_or_else(|| default_stride(self.steps))
    }

    /// Ensemble size actually used by the configured regime.
    pub fn effective_ensemble(&self) -> u64 {
        match self.regime {
            Regime::Classical => self.ensemble.unwrap_or(DEFAULT_CLASSICAL_POINTS),
            Regime::MonteCarloMeasured => self.ensemble.unwrap_or(DEFAULT_TRAJECTORIES),
            Regime::QuantumStaticRandom | Regime::QuantumPerStepRandom => {
                self.ensemble.unwrap_or(DEFAULT_REALIZATIONS)
            }
            Regime::QuantumDeterministic | Regime::RateEquation => 1,
        }
    }

    pub fn effective_fit_window(&self) -> FitWindow {
        self.fit_window.unwrap_or_default().clipped(self.steps)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let text = r#"{"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 100}"#;
        let c = ExperimentConfig::from_json(text, Path::new("c.json")).unwrap();
        assert_eq!(c, ExperimentConfig::new(Regime::RateEquation, 5.0, 1.0, 100));
    }

    #[test]
    fn unknown_field_rejected() {
        let text = r#"{"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 100, "colour": 1}"#;
        let e = ExperimentConfig::from_json(text, Path::new("c.json")).unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn errors_name_the_field() {
        let cases: Vec<(&str, Box<dyn Fn(&mut ExperimentConfig)>)> = vec![
            ("period", Box::new(|c| c.period = 0.0)),
            ("kick_strength", Box::new(|c| c.kick_strength = -1.0)),
            ("meas_period", Box::new(|c| c.meas_period = 0)),
            ("ensemble", Box::new(|c| c.ensemble = Some(0))),
            ("stride", Box::new(|c| c.stride = Some(0))),
            ("tail_tol", Box::new(|c| c.tail_tol = 1e-3)),
            ("edge_threshold", Box::new(|c| c.edge_threshold = 1.0)),
            ("fit_window", Box::new(|c| c.fit_window = Some(FitWindow::new(10, 10)))),
            ("initial_n", Box::new(|c| c.initial_n = 5000)),
            ("steps", Box::new(|c| c.steps = MAX_STEPS + 1)),
        ];
        for (field, mutate) in cases {
            let mut c = ExperimentConfig::default();
            mutate(&mut c);
            match c.validate() {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_lattice_is_a_validation_error() {
        let text = r#"{"kick_strength": 5, "period": 1, "regime": "rate_equation", "steps": 1,
                       "lattice": {"n_min": 3, "n_max": 10}}"#;
        let e = ExperimentConfig::from_json(text, Path::new("c.json")).unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("lattice"), "{e}");
    }

    #[test]
    fn regime_selects_phase_mode() {
        let mut c = ExperimentConfig { seed: 9, ..Default::default() };
        assert_eq!(c.system().unwrap().phase_mode(), PhaseMode::Deterministic);
        c.regime = Regime::QuantumStaticRandom;
        assert_eq!(c.system().unwrap().phase_mode(), PhaseMode::StaticRandom { seed: 9 });
        c.regime = Regime::QuantumPerStepRandom;
        assert_eq!(c.system().unwrap().phase_mode(), PhaseMode::PerStepRandom { seed: 9 });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn regime() -> impl Strategy<Value = Regime> {
            prop::sample::select(Regime::ALL.to_vec())
        }

        fn hamiltonian() -> impl Strategy<Value = Hamiltonian> {
            prop_oneof![
                Just(Hamiltonian::Rotor),
                (-10.0f64..10.0).prop_map(|omega| Hamiltonian::LinearOscillator { omega }),
                (0.1f64..5.0, 0.5f64..3.0).prop_map(|(c, p)| Hamiltonian::PowerLaw { c, p }),
            ]
        }

        proptest! {
            #[test]
            fn json_round_trip(
                h in hamiltonian(),
                regime in regime(),
                k in 0.0f64..50.0,
                t in 1e-3f64..10.0,
                half in 64i64..5000,
                steps in 0u64..100_000,
                s in 1u64..64,
                ensemble in prop::option::of(1u64..1_000_000),
                seed in any::<u64>(),
                stride in prop::option::of(1u64..100),
                tail_exp in 12i32..40,
                edge in 1e-12f64..0.5,
                window in prop::option::of((0u64..50, 60u64..500)),
                fft in any::<bool>(),
                physical in any::<bool>(),
                n0 in -50i64..50,
            ) {
                let c = ExperimentConfig {
                    hamiltonian: h,
                    kick_strength: k,
                    period: t,
                    kick_phase_convention: if physical { KickConvention::PhysicalKick } else { KickConvention::PaperLiteral },
                    lattice: ActionLattice::symmetric(half).unwrap(),
                    regime,
                    steps,
                    meas_period: s,
                    ensemble,
                    seed,
                    stride,
                    tail_tol: 10f64.powi(-tail_exp),
                    edge_threshold: edge,
                    fit_window: window.map(|(a, b)| FitWindow::new(a, b)),
                    method: if fft { ConvolutionMethod::Fft } else { ConvolutionMethod::Direct },
                    initial_n: n0,
                    output: OutputSpec { dir: Some(PathBuf::from("out/dir")), format: SeriesFormat::Csv },
                };
                prop_assert!(c.validate().is_ok());
                let back = ExperimentConfig::from_json(&c.to_json(), Path::new("x")).unwrap();
                prop_assert_eq!(back, c);
            }
        }
    }
}
