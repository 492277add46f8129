//! Ensemble evolution under the classical kicked map
//!
//! ```text
//! I'     = I + K sin(theta)
//! theta' = theta + Omega(I') T      (mod 2 pi)
//! ```
//!
//! The angle update uses the *new* action. Points never interact, so the
//! step runs in parallel; moment sums stay sequential to keep results
//! bit-reproducible.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{diffusion_fit, DiffusionFit, FitWindow};
use crate::error::{Error, Result};
use crate::model::{reduce_angle, Hamiltonian, KickedSystem};
use crate::observables::{Observables, Recorder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub action: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnsemble {
    points: Vec<PhasePoint>,
    step: u64,
    seed: u64,
}

/// `count` points at action `i0` with i.i.d. uniform angles.
pub fn init_ensemble(count: usize, i0: f64, seed: u64) -> Result<ClassicalEnsemble> {
    if count == 0 {
        return Err(Error::config("ensemble", "classical ensemble needs at least one point"));
    }
    if !i0.is_finite() {
        return Err(Error::config("initial_action", "must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new(0.0, TAU).expect("valid angle range");
    let points = (0..count)
        .map(|_| PhasePoint {
            action: i0,
            angle: reduce_angle(angle.sample(&mut rng)),
        })
        .collect();
    Ok(ClassicalEnsemble { points, step: 0, seed })
}

impl ClassicalEnsemble {
    /// Ensemble from explicit points; angles are reduced into `[0, 2 pi)`.
    pub fn from_points(points: Vec<PhasePoint>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("ensemble", "classical ensemble needs at least one point"));
        }
        let points = points
            .into_iter()
            .map(|p| PhasePoint {
                action: p.action,
                angle: reduce_angle(p.angle),
            })
            .collect();
        Ok(ClassicalEnsemble { points, step: 0, seed })
    }

    pub fn points(&self) -> &[PhasePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_action(&self) -> f64 {
        self.points.iter().map(|p| p.action).sum::<f64>() / self.points.len() as f64
    }

    pub fn action_variance(&self) -> f64 {
        let mean = self.mean_action();
        self.points
            .iter()
            .map(|p| {
                let d = p.action - mean;
                d * d
            })
            .sum::<f64>()
            / self.points.len() as f64
    }

    /// Observables with actions binned to the nearest integer for the
    /// participation ratio; `edge_mass` is always zero (actions are unbounded).
    pub fn observables(&self, hamiltonian: Hamiltonian) -> Observables {
        let count = self.points.len() as f64;
        let energy = self.points.iter().map(|p| hamiltonian.energy(p.action)).sum::<f64>() / count;
        let mut bins: Vec<i64> = self.points.iter().map(|p| p.action.round() as i64).collect();
        bins.sort_unstable();
        let mut sum_sq: u128 = 0;
        for chunk in bins.chunk_by(|a, b| a == b) {
            let c = chunk.len() as u128;
            sum_sq += c * c;
        }
        Observables {
            step: self.step,
            mean_n: self.mean_action(),
            var_n: self.action_variance(),
            energy,
            participation_ratio: (count * count) / sum_sq as f64,
            edge_mass: 0.0,
        }
    }
}

/// Applies one period of the map to every point.
pub fn classical_step(ens: &mut ClassicalEnsemble, system: &KickedSystem) -> Result<()> {
    let k = system.kick_strength();
    let t = system.period();
    let h = system.hamiltonian();
    let updated: Vec<Option<PhasePoint>> = ens
        .points
        .par_iter()
        .map(|p| {
            let action = p.action + k * p.angle.sin();
            let omega = h.omega(action).ok()?;
            Some(PhasePoint {
                action,
                angle: reduce_angle(p.angle + omega * t),
            })
        })
        .collect();
    if let Some(index) = updated.iter().position(Option::is_none) {
        let p = ens.points[index];
        let action = p.action + k * p.angle.sin();
        let cause = h.omega(action).err().map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Domain(format!(
            "point {index} at step {}: {cause}",
            ens.step
        )));
    }
    ens.points = updated.into_iter().flatten().collect();
    ens.step += 1;
    Ok(())
}

/// `steps` periods of the map, recording whenever the recorder is due.
pub fn evolve_classical(
    ens: &mut ClassicalEnsemble,
    system: &KickedSystem,
    steps: u64,
    mut recorder: Option<&mut Recorder>,
) -> Result<()> {
    let h = system.hamiltonian();
    let final_step = ens.step + steps;
    if let Some(rec) = recorder.as_deref_mut() {
        if rec.is_due(ens.step, final_step) {
            rec.push(ens.observables(h));
        }
    }
    for _ in 0..steps {
        classical_step(ens, system)?;
        if let Some(rec) = recorder.as_deref_mut() {
            if rec.is_due(ens.step, final_step) {
                rec.push(ens.observables(h));
            }
        }
    }
    Ok(())
}

/// Action diffusion coefficient from `(step, Var(I))` pairs, using the
/// one-dimensional convention `Var(I) = 2 B t` with `t = step * T`.
pub fn classical_diffusion_estimate(series: &[(u64, f64)], period: f64, window: FitWindow) -> Result<DiffusionFit> {
    diffusion_fit(series, period, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn init_is_reproducible_and_fixed_action() {
        let a = init_ensemble(1000, 0.0, 9).unwrap();
        let b = init_ensemble(1000, 0.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert_eq!(a.action_variance(), 0.0);
        assert!(a.points().iter().all(|p| (0.0..TAU).contains(&p.angle)));
        let mean_angle = a.points().iter().map(|p| p.angle).sum::<f64>() / 1000.0;
        let sigma = TAU / (12.0f64 * 1000.0).sqrt();
        assert!((mean_angle - PI).abs() < 4.0 * sigma);
        assert_ne!(a, init_ensemble(1000, 0.0, 10).unwrap());
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(init_ensemble(0, 0.0, 1).is_err());
    }

    #[test]
    fn zero_kick_rotates_angles() {
        let system = KickedSystem::rotor(0.0, 0.5).unwrap();
        let mut ens = ClassicalEnsemble::from_points(
            vec![PhasePoint { action: 3.0, angle: 1.0 }, PhasePoint { action: -2.0, angle: 6.0 }],
            0,
        )
        .unwrap();
        classical_step(&mut ens, &system).unwrap();
        assert_eq!(ens.points()[0].action, 3.0);
        assert!((ens.points()[0].angle - 2.5).abs() < 1e-15);
        assert!((ens.points()[1].angle - reduce_angle(5.0)).abs() < 1e-15);
        assert_eq!(ens.step(), 1);
    }

    #[test]
    fn angle_update_uses_new_action() {
        let system = KickedSystem::rotor(5.0, 1.0).unwrap();
        let mut ens = ClassicalEnsemble::from_points(vec![PhasePoint { action: 0.0, angle: FRAC_PI_2 }], 0).unwrap();
        classical_step(&mut ens, &system).unwrap();
        let p = ens.points()[0];
        assert_eq!(p.action, 5.0);
        assert!((p.angle - reduce_angle(FRAC_PI_2 + 5.0)).abs() < 1e-15);
        // the old-action ordering would have left theta at pi/2
        assert!((p.angle - FRAC_PI_2).abs() > 1.0);
    }

    #[test]
    fn singular_frequency_reports_point() {
        let system = KickedSystem::new(Hamiltonian::PowerLaw { c: 1.0, p: 0.5 }, 1.0, 1.0).unwrap();
        let mut ens = ClassicalEnsemble::from_points(
            vec![PhasePoint { action: 2.0, angle: 0.3 }, PhasePoint { action: 0.0, angle: 0.0 }],
            0,
        )
        .unwrap();
        match classical_step(&mut ens, &system) {
            Err(Error::Domain(msg)) => assert!(msg.contains("point 1"), "{msg}"),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert_eq!(ens.step(), 0);
    }

    #[test]
    fn early_variance_matches_angle_averages() {
        // From I0 = 0 with uniform angles:
        //   Var_1 = K^2 / 2
        //   Var_2 = K^2 (1 + J0(K) - J2(K) - J2(2K) / 2)
        use kickmap_oracle::bessel_j_series as j;
        let k = 5.0;
        let system = KickedSystem::rotor(k, 1.0).unwrap();
        let mut ens = init_ensemble(200_000, 0.0, 2024).unwrap();
        classical_step(&mut ens, &system).unwrap();
        let v1 = ens.action_variance();
        assert!((v1 - k * k / 2.0).abs() < 0.02 * k * k / 2.0, "{v1}");
        classical_step(&mut ens, &system).unwrap();
        let v2 = ens.action_variance();
        let expected = k * k * (1.0 + j(0, k) - j(2, k) - j(2, 2.0 * k) / 2.0);
        assert!((v2 - expected).abs() < 0.02 * expected, "{v2} vs {expected}");
    }

    #[test]
    fn zero_kick_has_no_diffusion() {
        let system = KickedSystem::rotor(0.0, 1.0).unwrap();
        let mut ens = init_ensemble(1000, 1.0, 5).unwrap();
        let mut rec = Recorder::new(crate::observables::Regime::Classical, Hamiltonian::Rotor, 0, 1);
        evolve_classical(&mut ens, &system, 100, Some(&mut rec)).unwrap();
        let fit = classical_diffusion_estimate(&rec.finish().variance_points(), 1.0, FitWindow::default()).unwrap();
        assert_eq!(fit.b_est, 0.0);
    }

    #[test]
    fn participation_ratio_of_binned_actions() {
        let pts = [0.1, -0.2, 0.9, 1.1, 2.0, 2.4]
            .iter()
            .map(|&a| PhasePoint { action: a, angle: 0.0 })
            .collect();
        let ens = ClassicalEnsemble::from_points(pts, 0).unwrap();
        // bins {0:2, 1:2, 2:2}
        let obs = ens.observables(Hamiltonian::Rotor);
        assert!((obs.participation_ratio - 3.0).abs() < 1e-12);
        assert_eq!(obs.edge_mass, 0.0);
    }
}
