//! Fits on recorded series: diffusion coefficients, break time, and the
//! exponential localization length of a probability profile.
//!
//! Conventions:
//! * diffusion is one-dimensional, `Var = 2 B t` with `t = step * T`;
//! * the localization length `ell` is the amplitude decay length,
//!   `P_n ~ exp(-2 |n - n0| / ell)`;
//! * the break time is the knee of a continuous two-segment linear fit of
//!   `var_n` against the step index. This is this crate's own operational
//!   definition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActionLattice;

/// Inclusive step range used by the diffusion fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub start: u64,
    pub end: u64,
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { start: 5, end: 100 }
    }
}

impl FitWindow {
    pub fn new(start: u64, end: u64) -> Self {
        FitWindow { start, end }
    }

    /// Minimum span of steps a window must cover.
    pub const MIN_SPAN: u64 = 20;

    /// The same window with its end clipped to `last_step`.
    pub fn clipped(self, last_step: u64) -> Self {
        FitWindow {
            start: self.start,
            end: self.end.min(last_step),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub points: usize,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::Analysis("x and y lengths differ".into()));
    }
    if n < 3 {
        return Err(Error::Analysis(format!("linear fit needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Analysis("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let slope_stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFit {
    /// Diffusion coefficient, half the slope of `var` against `t`.
    pub b_est: f64,
    pub stderr: f64,
    /// Slope of `var` against `t`.
    pub slope: f64,
    pub points: usize,
    pub window: FitWindow,
}

/// Diffusion coefficient from `(step, variance)` samples inside `window`.
pub fn diffusion_fit(series: &[(u64, f64)], period: f64, window: FitWindow) -> Result<DiffusionFit> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::Analysis(format!("period must be positive, got {period}")));
    }
    let inside: Vec<(u64, f64)> = series
        .iter()
        .copied()
        .filter(|(s, _)| (window.start..=window.end).contains(s))
        .collect();
    let span = match (inside.first(), inside.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0,
    };
    if span < FitWindow::MIN_SPAN || inside.len() < 3 {
        return Err(Error::Analysis(format!(
            "fit window [{}, {}] holds {} samples spanning {span} steps; need >= 3 samples over >= {} steps",
            window.start,
            window.end,
            inside.len(),
            FitWindow::MIN_SPAN
        )));
    }
    let xs: Vec<f64> = inside.iter().map(|(s, _)| *s as f64 * period).collect();
    let ys: Vec<f64> = inside.iter().map(|(_, v)| *v).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(DiffusionFit {
        b_est: fit.slope / 2.0,
        stderr: fit.slope_stderr / 2.0,
        slope: fit.slope,
        points: fit.points,
        window,
    })
}

/// Slope ratio above which no suppression is reported.
pub const NO_SUPPRESSION_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BreakTime {
    /// Variance growth slows down after `t_star` (in periods).
    Suppressed {
        t_star: f64,
        /// Knee positions not rejected by a likelihood-ratio test at 95%.
        interval: (f64, f64),
        early_slope: f64,
        late_slope: f64,
        slope_ratio: f64,
    },
    /// No knee with a late/early slope ratio at or below [`NO_SUPPRESSION_RATIO`].
    NoSuppression {
        early_slope: f64,
        late_slope: f64,
        slope_ratio: Option<f64>,
    },
}

impl BreakTime {
    pub fn t_star(&self) -> Option<f64> {
        match self {
            BreakTime::Suppressed { t_star, .. } => Some(*t_star),
            BreakTime::NoSuppression { .. } => None,
        }
    }

    pub fn slope_ratio(&self) -> Option<f64> {
        match self {
            BreakTime::Suppressed { slope_ratio, .. } => Some(*slope_ratio),
            BreakTime::NoSuppression { slope_ratio, .. } => *slope_ratio,
        }
    }

    pub fn is_suppressed(&self) -> bool {
        matches!(self, BreakTime::Suppressed { .. })
    }
}

/// Knee of a continuous two-segment linear fit of `var` against step.
///
/// Every sample (leaving two on each side) is tried as the knee; the one
/// with the smallest squared residual wins. Requires the series to extend
/// to at least four times the detected knee.
pub fn break_time_estimate(series: &[(u64, f64)]) -> Result<BreakTime> {
    let n = series.len();
    if n < 6 {
        return Err(Error::Analysis(format!("break-time fit needs at least 6 samples, got {n}")));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Analysis("steps must be strictly increasing".into()));
    }
    let nf = n as f64;
    let x_mean = series.iter().map(|(s, _)| *s as f64).sum::<f64>() / nf;
    let y_mean = series.iter().map(|(_, v)| *v).sum::<f64>() / nf;
    let xs: Vec<f64> = series.iter().map(|(s, _)| *s as f64 - x_mean).collect();
    let ys: Vec<f64> = series.iter().map(|(_, v)| *v - y_mean).collect();

    // prefix sums over indices < i
    let mut px = vec![0.0; n + 1];
    let mut pxx = vec![0.0; n + 1];
    let mut py = vec![0.0; n + 1];
    let mut pxy = vec![0.0; n + 1];
    for i in 0..n {
        px[i + 1] = px[i] + xs[i];
        pxx[i + 1] = pxx[i] + xs[i] * xs[i];
        py[i + 1] = py[i] + ys[i];
        pxy[i + 1] = pxy[i] + xs[i] * ys[i];
    }
    let syy: f64 = ys.iter().map(|y| y * y).sum();

    let mut sse = vec![f64::INFINITY; n];
    for k in 1..n - 2 {
        sse[k] = hinge_normal_sse(k, &xs, &px, &pxx, &py, &pxy, syy);
    }
    let best = (1..n - 2)
        .min_by(|&a, &b| sse[a].total_cmp(&sse[b]))
        .expect("at least one candidate knee");

    let (early_slope, late_slope, best_sse) = hinge_direct(best, &xs, &ys);
    let ratio = (early_slope > 0.0).then(|| late_slope / early_slope);
    match ratio {
        Some(r) if r <= NO_SUPPRESSION_RATIO => {}
        _ => {
            return Ok(BreakTime::NoSuppression {
                early_slope,
                late_slope,
                slope_ratio: ratio,
            })
        }
    }
    let slope_ratio = ratio.expect("checked above");
    let t_star = series[best].0 as f64;
    let last = series[n - 1].0 as f64;
    if last < 4.0 * t_star {
        return Err(Error::Analysis(format!(
            "knee at step {t_star} but the series ends at {last}; need at least {}",
            4.0 * t_star
        )));
    }

    // likelihood-ratio interval: n ln(SSE_k / SSE_min) <= chi2_1(0.95)
    let floor = best_sse.max(sse[best]).max(1e-20 * syy).max(f64::MIN_POSITIVE);
    let accepted: Vec<usize> = (1..n - 2)
        .filter(|&k| nf * (sse[k].max(floor) / floor).ln() <= 3.841)
        .collect();
    let lo = series[*accepted.first().unwrap_or(&best)].0 as f64;
    let hi = series[*accepted.last().unwrap_or(&best)].0 as f64;

    Ok(BreakTime::Suppressed {
        t_star,
        interval: (lo.min(t_star), hi.max(t_star)),
        early_slope,
        late_slope,
        slope_ratio,
    })
}

/// SSE of the hinge fit with knee at sample `k`, from prefix sums.
/// Basis: `1`, `u = min(x, x_k)`, `v = max(x - x_k, 0)`.
fn hinge_normal_sse(k: usize, xs: &[f64], px: &[f64], pxx: &[f64], py: &[f64], pxy: &[f64], syy: f64) -> f64 {
    let n = xs.len();
    let xk = xs[k];
    let split = k + 1;
    let n_r = (n - split) as f64;
    let (sx_l, sxx_l, sxy_l) = (px[split], pxx[split], pxy[split]);
    let sx_r = px[n] - px[split];
    let sxx_r = pxx[n] - pxx[split];
    let sy_r = py[n] - py[split];
    let sxy_r = pxy[n] - pxy[split];
    let sy = py[n];

    let su = sx_l + n_r * xk;
    let sv = sx_r - n_r * xk;
    let suu = sxx_l + n_r * xk * xk;
    let svv = sxx_r - 2.0 * xk * sx_r + n_r * xk * xk;
    let suv = xk * sx_r - n_r * xk * xk;
    let suy = sxy_l + xk * sy_r;
    let svy = sxy_r - xk * sy_r;

    let a = [[n as f64, su, sv], [su, suu, suv], [sv, suv, svv]];
    let b = [sy, suy, svy];
    match solve3(a, b) {
        Some(beta) => (syy - (beta[0] * b[0] + beta[1] * b[1] + beta[2] * b[2])).max(0.0),
        None => f64::INFINITY,
    }
}

/// Early slope, late slope and SSE of the hinge fit at knee `k`, computed directly.
fn hinge_direct(k: usize, xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let xk = xs[k];
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let row = [1.0, x.min(xk), (x - xk).max(0.0)];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            b[i] += row[i] * y;
        }
    }
    let Some(beta) = solve3(a, b) else {
        return (0.0, 0.0, f64::INFINITY);
    };
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - beta[0] - beta[1] * x.min(xk) - beta[2] * (x - xk).max(0.0);
            r * r
        })
        .sum();
    (beta[1], beta[2], sse)
}

/// Solves a 3x3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Smallest probability counted as tail signal.
pub const TAIL_FLOOR: f64 = 1e-14;

/// Sites required on each side of the center.
pub const MIN_TAIL_SITES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFit {
    pub ell: f64,
    pub stderr: f64,
    /// Coefficient of determination of the linear `ln P` fit.
    pub r_squared: f64,
    /// `SSE(linear) / SSE(quadratic)` in `|n - n0|`; large values mean the
    /// profile is Gaussian-like rather than exponential.
    pub quadratic_gain: f64,
    pub exponential_profile: bool,
    pub points: usize,
}

/// Fits `ln P_n ~ c - 2 |n - center| / ell` over all sites with
/// `P_n > TAIL_FLOOR`, excluding the center itself.
pub fn localization_length_fit(lattice: ActionLattice, probs: &[f64], center: i64) -> Result<LocalizationFit> {
    if probs.len() != lattice.size() {
        return Err(Error::Analysis("probability vector does not match the lattice".into()));
    }
    let mut left = 0usize;
    let mut right = 0usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, &p) in lattice.levels().zip(probs) {
        if p <= TAIL_FLOOR || n == center {
            continue;
        }
        if n < center {
            left += 1;
        } else {
            right += 1;
        }
        xs.push((n - center).unsigned_abs() as f64);
        ys.push(p.ln());
    }
    if left < MIN_TAIL_SITES || right < MIN_TAIL_SITES {
        return Err(Error::Analysis(format!(
            "insufficient tail: {left} sites left and {right} right of {center} above {TAIL_FLOOR:e}; need {MIN_TAIL_SITES} each"
        )));
    }
    let fit = linear_fit(&xs, &ys)?;
    if fit.slope >= 0.0 {
        return Err(Error::Analysis(format!(
            "profile does not decay away from {center} (log slope {})",
            fit.slope
        )));
    }
    let ell = -2.0 / fit.slope;
    let stderr = 2.0 * fit.slope_stderr / (fit.slope * fit.slope);

    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let sse_lin: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - fit.intercept - fit.slope * x;
            r * r
        })
        .sum();
    let sse_quad = quadratic_sse(&xs, &ys);
    let r_squared = if sst > 0.0 { 1.0 - sse_lin / sst } else { 1.0 };
    let negligible = 1e-12 * xs.len() as f64;
    let quadratic_gain = if sse_quad > 0.0 { sse_lin / sse_quad } else if sse_lin <= negligible { 1.0 } else { f64::INFINITY };
    let exponential_profile = sse_lin <= negligible || quadratic_gain <= 2.0;

    Ok(LocalizationFit {
        ell,
        stderr,
        r_squared,
        quadratic_gain,
        exponential_profile,
        points: xs.len(),
    })
}

fn quadratic_sse(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let row = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            b[i] += row[i] * y;
        }
    }
    let Some(beta) = solve3(a, b) else {
        return 0.0;
    };
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - beta[0] - beta[1] * x - beta[2] * x * x;
            r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(b: f64, period: f64, steps: u64) -> Vec<(u64, f64)> {
        (0..=steps).map(|s| (s, 2.0 * b * s as f64 * period)).collect()
    }

    #[test]
    fn exact_line_gives_exact_coefficient() {
        let fit = diffusion_fit(&line(6.25, 1.0, 100), 1.0, FitWindow::default()).unwrap();
        assert!((fit.b_est - 6.25).abs() < 1e-12);
        assert!(fit.stderr < 1e-10);
        assert_eq!(fit.points, 96);
        let fit = diffusion_fit(&line(3.0, 0.5, 200), 0.5, FitWindow::new(10, 150)).unwrap();
        assert!((fit.b_est - 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_window_is_an_error() {
        let e = diffusion_fit(&line(1.0, 1.0, 15), 1.0, FitWindow::default());
        assert!(matches!(e, Err(Error::Analysis(_))));
        let e = diffusion_fit(&line(1.0, 1.0, 100), 1.0, FitWindow::new(50, 60));
        assert!(matches!(e, Err(Error::Analysis(_))));
    }

    fn knee_series(knee: u64, len: u64) -> Vec<(u64, f64)> {
        (0..=len)
            .map(|j| (j, 12.5 * j.min(knee) as f64))
            .collect()
    }

    #[test]
    fn synthetic_knee() {
        let bt = break_time_estimate(&knee_series(100, 500)).unwrap();
        match bt {
            BreakTime::Suppressed {
                t_star,
                interval,
                early_slope,
                late_slope,
                slope_ratio,
            } => {
                assert!((t_star - 100.0).abs() <= 2.0);
                assert!(interval.0 <= t_star && t_star <= interval.1);
                assert!((early_slope - 12.5).abs() < 1e-9);
                assert!(late_slope.abs() < 1e-9);
                assert!(slope_ratio.abs() < 1e-9);
            }
            other => panic!("expected suppression, got {other:?}"),
        }
    }

    #[test]
    fn straight_line_has_no_suppression() {
        let bt = break_time_estimate(&line(6.25, 1.0, 300)).unwrap();
        assert!(!bt.is_suppressed());
        let r = bt.slope_ratio().unwrap();
        assert!((r - 1.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn flat_series_has_no_suppression() {
        let flat: Vec<(u64, f64)> = (0..50).map(|j| (j, 0.0)).collect();
        let bt = break_time_estimate(&flat).unwrap();
        assert!(!bt.is_suppressed());
    }

    #[test]
    fn knee_too_late_is_an_error() {
        assert!(matches!(break_time_estimate(&knee_series(100, 300)), Err(Error::Analysis(_))));
    }

    #[test]
    fn unsorted_series_rejected() {
        let s = vec![(0, 0.0), (2, 1.0), (1, 2.0), (3, 3.0), (4, 4.0), (5, 5.0)];
        assert!(break_time_estimate(&s).is_err());
    }

    #[test]
    fn exponential_profile_length() {
        let l = ActionLattice::symmetric(300).unwrap();
        let probs: Vec<f64> = l.levels().map(|n| (-2.0 * n.abs() as f64 / 10.0).exp()).collect();
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let fit = localization_length_fit(l, &probs, 0).unwrap();
        assert!((fit.ell - 10.0).abs() < 0.1, "{}", fit.ell);
        assert!(fit.exponential_profile);
        assert!(fit.r_squared > 0.999_999);
    }

    #[test]
    fn gaussian_profile_is_flagged() {
        let l = ActionLattice::symmetric(300).unwrap();
        let probs: Vec<f64> = l.levels().map(|n| (-(n * n) as f64 / (2.0 * 400.0)).exp()).collect();
        let fit = localization_length_fit(l, &probs, 0).unwrap();
        assert!(!fit.exponential_profile);
        assert!(fit.quadratic_gain > 100.0);
    }

    #[test]
    fn narrow_profile_is_insufficient() {
        let l = ActionLattice::symmetric(50).unwrap();
        let mut probs = vec![0.0; l.size()];
        for n in -3..=3 {
            probs[l.index_of(n).unwrap()] = 1.0 / 7.0;
        }
        assert!(matches!(localization_length_fit(l, &probs, 0), Err(Error::Analysis(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn knee_is_scale_equivariant(knee in 20u64..120, c in 0.001f64..1000.0, noise_seed in any::<u64>()) {
                // deterministic jitter so the argmin is unique
                let mut state = noise_seed | 1;
                let series: Vec<(u64, f64)> = (0..=600u64)
                    .map(|j| {
                        state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                        let jitter = (state % 1000) as f64 / 1000.0 - 0.5;
                        (j, 12.5 * j.min(knee) as f64 + jitter)
                    })
                    .collect();
                let scaled: Vec<(u64, f64)> = series.iter().map(|(s, v)| (*s, c * v)).collect();
                let a = break_time_estimate(&series).unwrap();
                let b = break_time_estimate(&scaled).unwrap();
                prop_assert_eq!(a.t_star(), b.t_star());
            }

            #[test]
            fn line_fit_recovers_slope(slope in -100.0f64..100.0, icpt in -10.0f64..10.0) {
                let xs: Vec<f64> = (0..50).map(f64::from).collect();
                let ys: Vec<f64> = xs.iter().map(|x| icpt + slope * x).collect();
                let fit = linear_fit(&xs, &ys).unwrap();
                prop_assert!((fit.slope - slope).abs() < 1e-9 * (1.0 + slope.abs()));
            }
        }
    }
}
