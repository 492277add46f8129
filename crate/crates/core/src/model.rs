//! System definition: unperturbed Hamiltonians, free-evolution phases and
//! the finite action lattice shared by every dynamical regime.
//!
//! Units are `hbar = m = e = 1` everywhere; nothing in the crate converts.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unperturbed Hamiltonian `H0(I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hamiltonian {
    /// `H0 = I^2 / 2`
    Rotor,
    /// `H0 = omega * I`
    LinearOscillator { omega: f64 },
    /// `H0 = c * |I|^p`, extended symmetrically to negative actions.
    PowerLaw { c: f64, p: f64 },
}

impl Hamiltonian {
    pub fn energy(&self, action: f64) -> f64 {
        match *self {
            Hamiltonian::Rotor => 0.5 * action * action,
            Hamiltonian::LinearOscillator { omega } => omega * action,
            Hamiltonian::PowerLaw { c, p } => c * action.abs().powf(p),
        }
    }

    /// Intrinsic frequency `dH0/dI`.
    pub fn omega(&self, action: f64) -> Result<f64> {
        match *self {
            Hamiltonian::Rotor => Ok(action),
            Hamiltonian::LinearOscillator { omega } => Ok(omega),
            Hamiltonian::PowerLaw { c, p } => {
                if action == 0.0 {
                    if p < 1.0 {
                        return Err(Error::Domain(format!(
                            "dH0/dI is singular at I = 0 for power law exponent p = {p} < 1"
                        )));
                    }
                    // p == 1 is the kink of c|I|; take the right derivative
                    return Ok(if p == 1.0 { c } else { 0.0 });
                }
                Ok(c * p * action.abs().powf(p - 1.0) * action.signum())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Hamiltonian::Rotor => Ok(()),
            Hamiltonian::LinearOscillator { omega } => {
                if omega.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config("hamiltonian.omega", "must be finite"))
                }
            }
            Hamiltonian::PowerLaw { c, p } => {
                if !c.is_finite() {
                    Err(Error::config("hamiltonian.c", "must be finite"))
                } else if !(p.is_finite() && p > 0.0) {
                    Err(Error::config("hamiltonian.p", "must be finite and > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// How the free-evolution phase attached to level `n` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseMode {
    /// `H0(n) T`, the same at every step.
    Deterministic,
    /// `2 pi g(n)` with `g(n)` uniform on `[0, 1)`, drawn once per level.
    StaticRandom { seed: u64 },
    /// `2 pi g(n, step)`, a fresh uniform draw per level and step.
    PerStepRandom { seed: u64 },
}

/// Phase attached to the kick kernel entry at lag `d = m - n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KickConvention {
    /// Kernel entries `J_d(K)` exactly as written in the amplitude map.
    #[default]
    PaperLiteral,
    /// Kernel entries `(-i)^d J_d(K)` from expanding `exp(-i K cos theta)`.
    PhysicalKick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct KickedSystem {
    hamiltonian: Hamiltonian,
    kick_strength: f64,
    period: f64,
    phase_mode: PhaseMode,
    convention: KickConvention,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    hamiltonian: Hamiltonian,
    kick_strength: f64,
    period: f64,
    phase_mode: PhaseMode,
    #[serde(default)]
    kick_phase_convention: KickConvention,
}

impl TryFrom<RawSystem> for KickedSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        KickedSystem::new(raw.hamiltonian, raw.kick_strength, raw.period)
            .map(|s| s.with_phase_mode(raw.phase_mode))
            .map(|s| s.with_convention(raw.kick_phase_convention))
    }
}

impl From<KickedSystem> for RawSystem {
    fn from(s: KickedSystem) -> Self {
        RawSystem {
            hamiltonian: s.hamiltonian,
            kick_strength: s.kick_strength,
            period: s.period,
            phase_mode: s.phase_mode,
            kick_phase_convention: s.convention,
        }
    }
}

impl KickedSystem {
    /// A system with deterministic phases and the literal kernel convention.
    pub fn new(hamiltonian: Hamiltonian, kick_strength: f64, period: f64) -> Result<Self> {
        hamiltonian.validate()?;
        if !(kick_strength.is_finite() && kick_strength >= 0.0) {
            return Err(Error::config("kick_strength", format!("must be finite and >= 0, got {kick_strength}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::config("period", format!("must be finite and > 0, got {period}")));
        }
        Ok(KickedSystem {
            hamiltonian,
            kick_strength,
            period,
            phase_mode: PhaseMode::Deterministic,
            convention: KickConvention::PaperLiteral,
        })
    }

    /// Standard rotor `H0 = I^2/2`.
    pub fn rotor(kick_strength: f64, period: f64) -> Result<Self> {
        Self::new(Hamiltonian::Rotor, kick_strength, period)
    }

    pub fn with_phase_mode(mut self, mode: PhaseMode) -> Self {
        self.phase_mode = mode;
        self
    }

    pub fn with_convention(mut self, convention: KickConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn hamiltonian(&self) -> Hamiltonian {
        self.hamiltonian
    }

    pub fn kick_strength(&self) -> f64 {
        self.kick_strength
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn phase_mode(&self) -> PhaseMode {
        self.phase_mode
    }

    pub fn convention(&self) -> KickConvention {
        self.convention
    }

    pub fn omega(&self, action: f64) -> Result<f64> {
        self.hamiltonian.omega(action)
    }

    /// Free-evolution phase of level `n` before kick number `step`, in `[0, 2 pi)`.
    pub fn free_phase(&self, n: i64, step: u64) -> f64 {
        match self.phase_mode {
            PhaseMode::Deterministic => reduce_angle(self.hamiltonian.energy(n as f64) * self.period),
            PhaseMode::StaticRandom { seed } => {
                let mut rng = PhaseStream::new(seed, STATIC_STREAM, n);
                reduce_angle(TAU * rng.next_unit())
            }
            PhaseMode::PerStepRandom { seed } => {
                let mut rng = PhaseStream::new(seed, step, n);
                reduce_angle(TAU * rng.next_unit())
            }
        }
    }

    /// Phases for the contiguous levels `lo..=hi`, written into `out`.
    ///
    /// Bit-identical to calling [`free_phase`](Self::free_phase) per level;
    /// random modes just avoid re-keying the generator for every site.
    pub fn free_phases_into(&self, lo: i64, hi: i64, step: u64, out: &mut Vec<f64>) {
        out.clear();
        if hi < lo {
            return;
        }
        match self.phase_mode {
            PhaseMode::Deterministic => {
                out.extend((lo..=hi).map(|n| reduce_angle(self.hamiltonian.energy(n as f64) * self.period)));
            }
            PhaseMode::StaticRandom { seed } => {
                let mut rng = PhaseStream::new(seed, STATIC_STREAM, lo);
                out.extend((lo..=hi).map(|_| reduce_angle(TAU * rng.next_unit())));
            }
            PhaseMode::PerStepRandom { seed } => {
                let mut rng = PhaseStream::new(seed, step, lo);
                out.extend((lo..=hi).map(|_| reduce_angle(TAU * rng.next_unit())));
            }
        }
    }
}

// Static phases never depend on the step, so they all live on one stream.
const STATIC_STREAM: u64 = u64::MAX;

/// Counter-based uniform source keyed by `(seed, stream, level)`.
///
/// Level `n` owns the two 32-bit words at position `2 (n + 2^63)` of the
/// ChaCha stream, so contiguous levels read contiguous words and a value
/// never depends on which other levels were evaluated.
struct PhaseStream(ChaCha8Rng);

impl PhaseStream {
    fn new(seed: u64, stream: u64, first_level: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let slot = (first_level as u64 ^ (1 << 63)) as u128;
        rng.set_word_pos(2 * slot);
        PhaseStream(rng)
    }

    fn next_unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Reduces an angle into `[0, 2 pi)`.
pub fn reduce_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Inclusive range `n_min..=n_max` of quantum numbers kept in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLattice", into = "RawLattice")]
pub struct ActionLattice {
    n_min: i64,
    n_max: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    n_min: i64,
    n_max: i64,
}

impl TryFrom<RawLattice> for ActionLattice {
    type Error = Error;

    fn try_from(raw: RawLattice) -> Result<Self> {
        ActionLattice::new(raw.n_min, raw.n_max)
    }
}

impl From<ActionLattice> for RawLattice {
    fn from(l: ActionLattice) -> Self {
        RawLattice {
            n_min: l.n_min,
            n_max: l.n_max,
        }
    }
}

impl Default for ActionLattice {
    fn default() -> Self {
        ActionLattice {
            n_min: -2048,
            n_max: 2048,
        }
    }
}

impl ActionLattice {
    pub fn new(n_min: i64, n_max: i64) -> Result<Self> {
        if n_min > 0 || n_max < 0 {
            return Err(Error::config(
                "lattice",
                format!("bounds [{n_min}, {n_max}] must satisfy n_min <= 0 <= n_max"),
            ));
        }
        if n_max - n_min > (1 << 28) {
            return Err(Error::config("lattice", "more than 2^28 sites"));
        }
        Ok(ActionLattice { n_min, n_max })
    }

    /// `[-half_width, half_width]`.
    pub fn symmetric(half_width: i64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    pub fn size(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn contains(&self, n: i64) -> bool {
        (self.n_min..=self.n_max).contains(&n)
    }

    pub fn index_of(&self, n: i64) -> Option<usize> {
        self.contains(n).then(|| (n - self.n_min) as usize)
    }

    pub fn level(&self, index: usize) -> i64 {
        self.n_min + index as i64
    }

    pub fn levels(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    /// Checks that a kernel of half-width `band` fits twice across the lattice.
    pub fn check_width(&self, band: usize) -> Result<()> {
        if self.size() < 2 * band {
            return Err(Error::config(
                "lattice",
                format!("{} sites cannot hold two kernel widths of {band}", self.size()),
            ));
        }
        Ok(())
    }

    /// The same lattice with both bounds doubled; used in leakage messages.
    pub fn enlarged(&self) -> (i64, i64) {
        (2 * self.n_min.min(-1), 2 * self.n_max.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotor_phase_at_origin_is_zero() {
        let s = KickedSystem::rotor(5.0, 1.0).unwrap();
        for step in [0, 1, 17, 10_000] {
            assert_eq!(s.free_phase(0, step), 0.0);
        }
    }

    #[test]
    fn rotor_phase_direct_substitution() {
        let s = KickedSystem::rotor(5.0, 1.0).unwrap();
        assert_eq!(s.free_phase(2, 0), 2.0);
        assert_eq!(s.free_phase(-2, 3), 2.0);
    }

    #[test]
    fn static_random_is_step_independent() {
        let s = KickedSystem::rotor(5.0, 1.0)
            .unwrap()
            .with_phase_mode(PhaseMode::StaticRandom { seed: 42 });
        for n in -20..20 {
            assert_eq!(s.free_phase(n, 3).to_bits(), s.free_phase(n, 7).to_bits());
        }
    }

    #[test]
    fn per_step_random_varies_with_step() {
        // 10^4 draws: every (n, step=3) vs (n, step=7) pair must differ.
        let s = KickedSystem::rotor(5.0, 1.0)
            .unwrap()
            .with_phase_mode(PhaseMode::PerStepRandom { seed: 7 });
        let equal = (-5000..5000).filter(|&n| s.free_phase(n, 3) == s.free_phase(n, 7)).count();
        assert_eq!(equal, 0);
    }

    #[test]
    fn batch_phases_match_pointwise() {
        let modes = [
            PhaseMode::Deterministic,
            PhaseMode::StaticRandom { seed: 3 },
            PhaseMode::PerStepRandom { seed: 3 },
        ];
        let mut buf = Vec::new();
        for mode in modes {
            let s = KickedSystem::rotor(2.0, 0.7).unwrap().with_phase_mode(mode);
            for (lo, hi) in [(-9, 12), (5, 5), (-300, -250)] {
                s.free_phases_into(lo, hi, 11, &mut buf);
                for (i, n) in (lo..=hi).enumerate() {
                    assert_eq!(buf[i].to_bits(), s.free_phase(n, 11).to_bits());
                }
            }
        }
    }

    #[test]
    fn random_phases_are_roughly_uniform() {
        let s = KickedSystem::rotor(1.0, 1.0)
            .unwrap()
            .with_phase_mode(PhaseMode::StaticRandom { seed: 99 });
        let n = 20_000;
        let mean = (0..n).map(|k| s.free_phase(k, 0)).sum::<f64>() / n as f64;
        let sigma = TAU / (12.0f64 * n as f64).sqrt();
        assert!((mean - std::f64::consts::PI).abs() < 4.0 * sigma, "{mean}");
    }

    #[test]
    fn omega_values() {
        assert_eq!(Hamiltonian::Rotor.omega(3.5).unwrap(), 3.5);
        assert_eq!(Hamiltonian::LinearOscillator { omega: 2.0 }.omega(-7.0).unwrap(), 2.0);
        assert_eq!(Hamiltonian::PowerLaw { c: 1.0, p: 3.0 }.omega(2.0).unwrap(), 12.0);
    }

    #[test]
    fn omega_singular_power_law() {
        let h = Hamiltonian::PowerLaw { c: 1.0, p: 0.5 };
        assert!(matches!(h.omega(0.0), Err(Error::Domain(_))));
        assert!(h.omega(4.0).is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(KickedSystem::rotor(-1.0, 1.0).is_err());
        assert!(KickedSystem::rotor(1.0, 0.0).is_err());
        assert!(KickedSystem::rotor(f64::NAN, 1.0).is_err());
        assert!(KickedSystem::new(Hamiltonian::PowerLaw { c: 1.0, p: 0.0 }, 1.0, 1.0).is_err());
        assert!(ActionLattice::new(1, 10).is_err());
        assert!(ActionLattice::new(-10, -1).is_err());
    }

    #[test]
    fn unknown_hamiltonian_kind_is_rejected() {
        let json = r#"{"hamiltonian":{"kind":"duffing"},"kick_strength":1.0,"period":1.0,
                       "phase_mode":{"mode":"deterministic"}}"#;
        assert!(serde_json::from_str::<KickedSystem>(json).is_err());
    }

    #[test]
    fn system_serde_round_trip() {
        let s = KickedSystem::new(Hamiltonian::PowerLaw { c: 0.5, p: 1.5 }, 3.0, 0.25)
            .unwrap()
            .with_phase_mode(PhaseMode::PerStepRandom { seed: 5 })
            .with_convention(KickConvention::PhysicalKick);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<KickedSystem>(&text).unwrap(), s);
        let bad = text.replace("0.25", "-0.25");
        assert!(serde_json::from_str::<KickedSystem>(&bad).is_err());
    }

    #[test]
    fn lattice_geometry() {
        let l = ActionLattice::symmetric(512).unwrap();
        assert_eq!(l.size(), 1025);
        assert_eq!(l.index_of(0), Some(512));
        assert_eq!(l.index_of(513), None);
        assert_eq!(l.level(0), -512);
        assert!(l.check_width(512).is_ok());
        assert!(l.check_width(513).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_mode() -> impl Strategy<Value = PhaseMode> {
            prop_oneof![
                Just(PhaseMode::Deterministic),
                any::<u64>().prop_map(|seed| PhaseMode::StaticRandom { seed }),
                any::<u64>().prop_map(|seed| PhaseMode::PerStepRandom { seed }),
            ]
        }

        proptest! {
            #[test]
            fn phases_lie_in_range(mode in any_mode(), n in -100_000i64..100_000, step in 0u64..1_000_000, t in 0.01f64..10.0) {
                let s = KickedSystem::rotor(1.0, t).unwrap().with_phase_mode(mode);
                let phi = s.free_phase(n, step);
                prop_assert!((0.0..TAU).contains(&phi));
            }

            #[test]
            fn deterministic_phase_ignores_step(n in -5000i64..5000, a in 0u64..u64::MAX, b in 0u64..u64::MAX) {
                let s = KickedSystem::new(Hamiltonian::PowerLaw { c: 0.3, p: 2.5 }, 1.0, 1.3).unwrap();
                prop_assert_eq!(s.free_phase(n, a).to_bits(), s.free_phase(n, b).to_bits());
            }

            #[test]
            fn equal_systems_reproduce_bitwise(mode in any_mode(), n in -5000i64..5000, step in 0u64..10_000) {
                let a = KickedSystem::rotor(2.0, 1.0).unwrap().with_phase_mode(mode);
                let b = KickedSystem::rotor(2.0, 1.0).unwrap().with_phase_mode(mode);
                prop_assert_eq!(a.free_phase(n, step).to_bits(), b.free_phase(n, step).to_bits());
            }
        }
    }
}
