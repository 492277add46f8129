//! Truncated rows of integer-order Bessel functions `J_m(K)`, `|m| <= M`,
//! used as the kick kernel of both the amplitude map and the rate map.
//!
//! Values come from Miller's downward recurrence
//! `J_{m-1} = (2m/K) J_m - J_{m+1}`, started well above the retained
//! orders and normalized with `J_0 + 2 sum_k J_{2k} = 1`. The half-width
//! is then shrunk to the smallest `M` whose certified tail
//! `sum_{|m|>M} J_m^2` stays below the requested tolerance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KickConvention;

/// Tail tolerance used for dynamics unless configured otherwise.
pub const DEFAULT_TAIL_TOL: f64 = 1e-30;

/// Largest tolerance a kernel may be built with.
pub const MAX_TAIL_TOL: f64 = 1e-8;

/// Largest half-width the builder will allocate.
pub const MAX_HALF_WIDTH: usize = 1 << 22;

// Safety factor applied to the geometric tail majorant.
const TAIL_SAFETY: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KickKernel {
    kick_strength: f64,
    half_width: usize,
    /// `J_m(K)` for `m = -M..=M`, stored at index `m + M`.
    values: Vec<f64>,
    tail_bound: f64,
}

impl KickKernel {
    /// Builds the kernel for kick strength `k` with `sum_{|m|>M} J_m^2 <= tail_tol`.
    pub fn build(k: f64, tail_tol: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::config("kick_strength", format!("must be finite and >= 0, got {k}")));
        }
        if !(tail_tol > 0.0 && tail_tol <= MAX_TAIL_TOL) {
            return Err(Error::config(
                "tail_tol",
                format!("must lie in (0, {MAX_TAIL_TOL:e}], got {tail_tol:e}"),
            ));
        }
        if k == 0.0 {
            return Ok(KickKernel {
                kick_strength: 0.0,
                half_width: 0,
                values: vec![1.0],
                tail_bound: 0.0,
            });
        }

        let mut trial = (k + 12.0 + 8.0 * k.cbrt()).ceil() as usize;
        loop {
            if trial > MAX_HALF_WIDTH {
                return Err(Error::Resource {
                    kick_strength: k,
                    tail_tol,
                    required_half_width: trial,
                    limit: MAX_HALF_WIDTH,
                });
            }
            let row = nonnegative_orders(k, trial + 1);
            let found = (0..=trial)
                .filter(|&m| (m + 1) as f64 > k)
                .map(|m| (m, tail_majorant(row[m], row[m + 1])))
                .find(|&(_, bound)| bound <= tail_tol);
            if let Some((half_width, tail_bound)) = found {
                let mut values = Vec::with_capacity(2 * half_width + 1);
                for m in (1..=half_width).rev() {
                    values.push(if m % 2 == 1 { -row[m] } else { row[m] });
                }
                values.extend_from_slice(&row[..=half_width]);
                return Ok(KickKernel {
                    kick_strength: k,
                    half_width,
                    values,
                    tail_bound,
                });
            }
            trial *= 2;
        }
    }

    /// Kernel with [`DEFAULT_TAIL_TOL`].
    pub fn new(k: f64) -> Result<Self> {
        Self::build(k, DEFAULT_TAIL_TOL)
    }

    pub fn kick_strength(&self) -> f64 {
        self.kick_strength
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// `J_m(K)` for `m = -M..=M`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `J_m(K)`, or zero outside the retained band.
    pub fn value(&self, m: i64) -> f64 {
        let idx = m + self.half_width as i64;
        if idx < 0 {
            return 0.0;
        }
        self.values.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// Kernel entries `U_m` for the amplitude map, `m = -M..=M`.
    pub fn unitary_row(&self, convention: KickConvention) -> Vec<Complex64> {
        let half = self.half_width as i64;
        self.values
            .iter()
            .enumerate()
            .map(|(i, &j)| match convention {
                KickConvention::PaperLiteral => Complex64::new(j, 0.0),
                KickConvention::PhysicalKick => minus_i_pow(i as i64 - half) * j,
            })
            .collect()
    }

    /// Transition probabilities `J_m(K)^2`, `m = -M..=M`.
    pub fn stochastic_row(&self) -> Vec<f64> {
        self.values.iter().map(|j| j * j).collect()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|j| j * j).sum()
    }

    /// `sum_m m^2 J_m(K)^2`, which equals `K^2 / 2` up to truncation.
    pub fn second_moment(&self) -> f64 {
        let half = self.half_width as i64;
        self.values
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let m = (i as i64 - half) as f64;
                m * m * j * j
            })
            .sum()
    }

    /// `sum_m J_m J_{m+d}` over the retained band.
    pub fn autocorrelation(&self, lag: i64) -> f64 {
        let half = self.half_width as i64;
        (-half..=half).map(|m| self.value(m) * self.value(m + lag)).sum()
    }

    pub fn diagnostics(&self) -> KernelDiagnostics {
        let k = self.kick_strength;
        let half = self.half_width as i64;
        let orthogonality_defect = (1..=half)
            .map(|d| self.autocorrelation(d).abs())
            .fold(0.0, f64::max);
        KernelDiagnostics {
            kick_strength: k,
            half_width: self.half_width,
            tail_bound: self.tail_bound,
            norm_defect: self.sum_squares() - 1.0,
            second_moment: self.second_moment(),
            second_moment_defect: self.second_moment() - 0.5 * k * k,
            orthogonality_defect,
        }
    }
}

/// Summary printed by `bessel-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub kick_strength: f64,
    pub half_width: usize,
    pub tail_bound: f64,
    /// `sum J_m^2 - 1`
    pub norm_defect: f64,
    pub second_moment: f64,
    /// `sum m^2 J_m^2 - K^2/2`
    pub second_moment_defect: f64,
    /// `max_{0<d<=M} |sum_m J_m J_{m+d}|`
    pub orthogonality_defect: f64,
}

fn minus_i_pow(m: i64) -> Complex64 {
    match m.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Bound on `sum_{|m|>M} J_m^2` given `J_M` and `J_{M+1}`, valid once `M + 1 > K`
/// where successive ratios `|J_{m+1}/J_m|` are decreasing.
fn tail_majorant(j_m: f64, j_next: f64) -> f64 {
    if j_next == 0.0 {
        return 0.0;
    }
    if j_m == 0.0 {
        return f64::INFINITY;
    }
    let r = (j_next / j_m).abs();
    if r >= 1.0 {
        return f64::INFINITY;
    }
    TAIL_SAFETY * 2.0 * j_next * j_next / (1.0 - r * r)
}

/// `J_0(x) ..= J_top(x)` for `x > 0` by normalized downward recurrence.
fn nonnegative_orders(x: f64, top: usize) -> Vec<f64> {
    if x < 1e-100 {
        // the recurrence ratio 2m/x would overflow; two series terms are exact here
        let half = 0.5 * x;
        let mut out = vec![0.0; top + 1];
        out[0] = 1.0 - half * half;
        let mut lead = 1.0;
        for (m, slot) in out.iter_mut().enumerate().skip(1) {
            lead *= half / m as f64;
            *slot = lead * (1.0 - half * half / (m + 1) as f64);
        }
        return out;
    }

    let reach = top.max(x.ceil() as usize);
    let start = reach + 40 + (40.0 * reach as f64).sqrt().ceil() as usize;
    let start = start + start % 2;

    let mut out = vec![0.0; top + 1];
    let mut above = 0.0; // J_{m+1}
    let mut current = 1e-30; // J_m, arbitrary scale
    let mut norm = 2.0 * current;
    for m in (1..=start).rev() {
        let below = (2.0 * m as f64 / x) * current - above;
        above = current;
        current = below;
        let order = m - 1;
        if order <= top {
            out[order] = current;
        }
        if order % 2 == 0 {
            norm += if order == 0 { current } else { 2.0 * current };
        }
        if current.abs() > 1e150 {
            let s = 1e-150;
            current *= s;
            above *= s;
            norm *= s;
            for v in out.iter_mut().skip(order) {
                *v *= s;
            }
        }
    }
    for v in &mut out {
        *v /= norm;
    }
    out
}
