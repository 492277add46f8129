use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analysis::{diffusion_fit, linear_fit};
use crate::error::{Error, Result};
use crate::observables::{ObservableSeries, Regime};

use super::run::RunBundle;

/// Growth rates of `var_n` per step for one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSlopes {
    pub label: String,
    pub regime: Regime,
    /// Slope over the bundle's diffusion fit window.
    pub window_slope: Option<f64>,
    /// Slope over the second half of the series.
    pub late_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSlopes {
    pub label: String,
    /// `window_slope / window_slope` of the first bundle.
    pub window_ratio: Option<f64>,
    /// `late_slope / late_slope` of the first bundle.
    pub late_ratio: Option<f64>,
}

/// Cross-regime ratios; `None` when a regime is missing or a slope is undefined.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    /// Rate-equation window slope over classical window slope.
    pub rate_over_classical: Option<f64>,
    /// Measured (Monte Carlo) window slope over classical window slope.
    pub measured_over_classical: Option<f64>,
    /// Deterministic quantum late slope over classical window slope.
    pub quantum_late_over_classical: Option<f64>,
    /// Deterministic quantum late slope over rate-equation window slope.
    pub quantum_late_over_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kick_strength: f64,
    pub period: f64,
    pub labels: Vec<String>,
    /// `(step, var_n per bundle)` for the steps present in every bundle.
    pub rows: Vec<(u64, Vec<f64>)>,
    pub slopes: Vec<RegimeSlopes>,
    pub relative: Vec<RelativeSlopes>,
    pub ratios: RatioDiagnostics,
}

/// Aligns the variance series of bundles sharing `K` and `T` and reports
/// slope ratios between them.
pub fn compare_regimes(bundles: &[RunBundle]) -> Result<Comparison> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Analysis("nothing to compare".into()))?;
    let (k, t) = (first.config.kick_strength, first.config.period);
    for (i, b) in bundles.iter().enumerate() {
        if b.config.kick_strength != k || b.config.period != t {
            return Err(Error::Analysis(format!(
                "bundle {i} ({}) has K={}, T={} but bundle 0 has K={k}, T={t}",
                b.regime(),
                b.config.kick_strength,
                b.config.period
            )));
        }
    }

    let labels = labels(bundles);
    let common: BTreeSet<u64> = bundles
        .iter()
        .map(|b| b.series.steps().collect::<BTreeSet<u64>>())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .unwrap_or_default();
    let rows = common
        .iter()
        .map(|&step| {
            let vars = bundles
                .iter()
                .map(|b| {
                    b.series
                        .entries
                        .iter()
                        .find(|e| e.step == step)
                        .map(|e| e.var_n)
                        .expect("step is common to all bundles")
                })
                .collect();
            (step, vars)
        })
        .collect();

    let slopes: Vec<RegimeSlopes> = bundles
        .iter()
        .zip(&labels)
        .map(|(b, label)| RegimeSlopes {
            label: label.clone(),
            regime: b.regime(),
            window_slope: window_slope(b),
            late_slope: late_slope(&b.series),
        })
        .collect();
    let reference = &slopes[0];
    let relative = slopes
        .iter()
        .map(|s| RelativeSlopes {
            label: s.label.clone(),
            window_ratio: ratio(s.window_slope, reference.window_slope),
            late_ratio: ratio(s.late_slope, reference.late_slope),
        })
        .collect();

    let find = |regime: Regime| slopes.iter().find(|s| s.regime == regime);
    let classical = find(Regime::Classical).and_then(|s| s.window_slope);
    let rate = find(Regime::RateEquation).and_then(|s| s.window_slope);
    let measured = find(Regime::MonteCarloMeasured).and_then(|s| s.window_slope);
    let quantum_late = find(Regime::QuantumDeterministic).and_then(|s| s.late_slope);
    let ratios = RatioDiagnostics {
        rate_over_classical: ratio(rate, classical),
        measured_over_classical: ratio(measured, classical),
        quantum_late_over_classical: ratio(quantum_late, classical),
        quantum_late_over_rate: ratio(quantum_late, rate),
    };

    Ok(Comparison {
        kick_strength: k,
        period: t,
        labels,
        rows,
        slopes,
        relative,
        ratios,
    })
}

fn labels(bundles: &[RunBundle]) -> Vec<String> {
    bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let name = b.regime().as_str();
            let repeated = bundles.iter().filter(|o| o.regime() == b.regime()).count() > 1;
            if repeated {
                format!("{name}_{i}")
            } else {
                name.to_string()
            }
        })
        .collect()
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

fn window_slope(b: &RunBundle) -> Option<f64> {
    let period = b.config.period;
    diffusion_fit(&b.series.variance_points(), period, b.config.effective_fit_window())
        .ok()
        .map(|f| f.slope * period)
}

fn late_slope(series: &ObservableSeries) -> Option<f64> {
    let last = series.last()?.step;
    let (xs, ys): (Vec<f64>, Vec<f64>) = series
        .entries
        .iter()
        .filter(|e| 2 * e.step >= last)
        .map(|e| (e.step as f64, e.var_n))
        .unzip();
    linear_fit(&xs, &ys).ok().map(|f| f.slope)
}

/// The aligned table as CSV: `step` then `var_<label>` per bundle.
pub fn comparison_csv(c: &Comparison) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend(c.labels.iter().map(|l| format!("var_{l}")));
    w.write_record(&header)?;
    for (step, vars) in &c.rows {
        let mut record = vec![step.to_string()];
        record.extend(vars.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::run::run_experiment;

    #[test]
    fn self_comparison_gives_unit_ratios() {
        let b = run_experiment(&ExperimentConfig::new(Regime::RateEquation, 5.0, 1.0, 120)).unwrap();
        let c = compare_regimes(&[b.clone(), b]).unwrap();
        assert_eq!(c.labels, vec!["rate_equation_0", "rate_equation_1"]);
        for r in &c.relative {
            assert_eq!(r.window_ratio, Some(1.0));
            assert_eq!(r.late_ratio, Some(1.0));
        }
        assert_eq!(c.rows.len(), 121);
        assert!((c.slopes[0].window_slope.unwrap() - 12.5).abs() < 1e-6);
    }

    #[test]
    fn mismatched_parameters_rejected() {
        let a = run_experiment(&ExperimentConfig::new(Regime::RateEquation, 5.0, 1.0, 30)).unwrap();
        let b = run_experiment(&ExperimentConfig::new(Regime::RateEquation, 4.0, 1.0, 30)).unwrap();
        assert!(matches!(compare_regimes(&[a.clone(), b]), Err(Error::Analysis(_))));
        let c = run_experiment(&ExperimentConfig::new(Regime::RateEquation, 5.0, 2.0, 30)).unwrap();
        assert!(compare_regimes(&[a, c]).is_err());
        assert!(compare_regimes(&[]).is_err());
    }

    #[test]
    fn table_uses_common_steps() {
        let a = run_experiment(&ExperimentConfig::new(Regime::RateEquation, 5.0, 1.0, 50)).unwrap();
        let mut cfg = ExperimentConfig::new(Regime::QuantumDeterministic, 5.0, 1.0, 50);
        cfg.stride = Some(10);
        let b = run_experiment(&cfg).unwrap();
        let c = compare_regimes(&[a, b]).unwrap();
        let steps: Vec<u64> = c.rows.iter().map(|r| r.0).collect();
        assert_eq!(steps, vec![0, 10, 20, 30, 40, 50]);
        let csv = String::from_utf8(comparison_csv(&c).unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "step,var_rate_equation,var_quantum_deterministic");
    }
}
