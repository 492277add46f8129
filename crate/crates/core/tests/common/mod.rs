#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Merges consecutive bins until each holds an expected count of at least
/// `min_expected`; a short tail is folded into the last full bin.
pub fn pool(observed: &[f64], expected: &[f64], min_expected: f64) -> Vec<(f64, f64)> {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= min_expected {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if o > 0.0 || e > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    bins
}

/// Pearson goodness-of-fit of `counts` against probabilities `probs`
/// (same indexing). Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let total: u64 = counts.iter().sum();
    let observed: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let expected: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let bins = pool(&observed, &expected, 5.0);
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = bins.len().saturating_sub(1);
    (stat, df, p_value(stat, df))
}

/// Pearson homogeneity test of two count vectors with the same indexing.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let fa = na as f64 / (na + nb) as f64;
    let combined: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) as f64).collect();
    let obs_a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    // pool on the combined counts, carrying the first sample along
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut oa, mut oc) = (0.0, 0.0);
    for (&x, &c) in obs_a.iter().zip(&combined) {
        oa += x;
        oc += c;
        if oc * fa.min(1.0 - fa) >= 5.0 {
            bins.push((oa, oc));
            oa = 0.0;
            oc = 0.0;
        }
    }
    if oc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += oa;
                last.1 += oc;
            }
            None => bins.push((oa, oc)),
        }
    }
    let stat: f64 = bins
        .iter()
        .map(|&(oa, oc)| {
            let ob = oc - oa;
            let ea = oc * fa;
            let eb = oc * (1.0 - fa);
            (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb
        })
        .sum();
    let df = bins.len().saturating_sub(1);
    (stat, df, p_value(stat, df))
}

pub fn p_value(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Two-sided tail probability of a 3 sigma Gaussian deviation.
pub const THREE_SIGMA_ALPHA: f64 = 0.002_699_796;

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
