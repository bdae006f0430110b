//! Error measures and paired significance tests on MSE differences.
//!
//! All p-values are one-sided for the alternative that differences are
//! positive (the benchmark error exceeds the RNConv error).

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal, StudentsT};

use crate::error::{PipelineError, Result};

/// Largest sample (after dropping zeros) for the exact Wilcoxon distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;
/// Significance level behind the assumption flags.
pub const FLAG_LEVEL: f64 = 0.05;

/// Mean of squared residuals.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(PipelineError::Stats(format!(
            "length mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(PipelineError::Stats("mse of an empty sample".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTests {
    pub n: usize,
    pub mean_diff: f64,
    /// Student paired t; `None` when the differences have zero variance.
    pub t_test_p: Option<f64>,
    /// Wilcoxon signed-rank; `None` when every difference is zero.
    pub wilcoxon_p: Option<f64>,
    pub wilcoxon_exact: bool,
    /// Exact binomial sign test; `None` when every difference is zero.
    pub sign_test_p: Option<f64>,
    pub sign_test_undefined: bool,
    pub shapiro_w: Option<f64>,
    pub shapiro_p: Option<f64>,
    /// Normality not rejected by Shapiro-Wilk at [`FLAG_LEVEL`].
    pub normality_flag: bool,
    /// Sample skewness within two-sided [`FLAG_LEVEL`] bounds of zero.
    pub symmetry_flag: bool,
}

pub fn paired_tests(diffs: &[f64]) -> Result<PairedTests> {
    if diffs.len() < 5 {
        return Err(PipelineError::Stats(format!("paired tests need n >= 5, got {}", diffs.len())));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(PipelineError::Stats("non-finite difference".into()));
    }
    let n = diffs.len();
    let sign = sign_test_p(diffs);
    let wil = wilcoxon_p(diffs);
    let sw = shapiro_wilk(diffs);
    Ok(PairedTests {
        n,
        mean_diff: diffs.iter().sum::<f64>() / n as f64,
        t_test_p: t_test_p(diffs),
        wilcoxon_p: wil.map(|w| w.0),
        wilcoxon_exact: wil.is_some_and(|w| w.1),
        sign_test_p: sign,
        sign_test_undefined: sign.is_none(),
        shapiro_w: sw.map(|s| s.0),
        shapiro_p: sw.map(|s| s.1),
        normality_flag: sw.is_some_and(|s| s.1 >= FLAG_LEVEL),
        symmetry_flag: symmetric(diffs),
    })
}

/// One-sided paired t-test of mean > 0.
pub fn t_test_p(d: &[f64]) -> Option<f64> {
    let n = d.len();
    if n < 2 {
        return None;
    }
    let m = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return None;
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some(dist.sf(t))
}

/// Exact sign test `P(X >= #positive)` with `X ~ Bin(#nonzero, 1/2)`.
pub fn sign_test_p(d: &[f64]) -> Option<f64> {
    let pos = d.iter().filter(|x| **x > 0.0).count() as u64;
    let nz = d.iter().filter(|x| **x != 0.0).count() as u64;
    if nz == 0 {
        return None;
    }
    if pos == 0 {
        return Some(1.0);
    }
    if nz <= EXACT_BINOMIAL_MAX {
        // integer tail count over 2^nz: one rounding, then an exact scaling
        let mut c: u128 = 1;
        let mut tail: u128 = 0;
        for k in 0..=nz {
            if k >= pos {
                tail += c;
            }
            c = c * (nz - k) as u128 / (k + 1) as u128;
        }
        return Some(tail as f64 * 2f64.powi(-(nz as i32)));
    }
    let b = Binomial::new(0.5, nz).ok()?;
    Some(b.sf(pos - 1))
}

/// Largest trial count whose binomial coefficients fit the integer tail sum.
const EXACT_BINOMIAL_MAX: u64 = 120;

/// Midranks of `v` (1-based), doubled so ties stay integral.
fn doubled_midranks(v: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0u64; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // doubled average of ranks i+1..=j+1
        let r = (i + j + 2) as u64;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test of a positive location. Zeros are dropped and
/// ties share midranks. Returns `(p, exact)`: exact null distribution for at
/// most [`WILCOXON_EXACT_MAX`] nonzero differences, else the tie-corrected
/// normal approximation with continuity correction.
pub fn wilcoxon_p(d: &[f64]) -> Option<(f64, bool)> {
    let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let w2: u64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| *r).sum();
    if nz.len() <= WILCOXON_EXACT_MAX {
        // counts[s] = number of sign assignments with doubled W+ equal to s
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for r in &ranks {
            let r = *r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all: f64 = counts.iter().sum();
        let upper: f64 = counts[w2 as usize..].iter().sum();
        return Some((upper / all, true));
    }
    let n = nz.len() as f64;
    let w = w2 as f64 / 2.0;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        var -= (t * t * t - t) / 48.0;
        i += j;
    }
    if !(var > 0.0) {
        return None;
    }
    let z = (w - mean - 0.5) / var.sqrt();
    Some((Normal::standard().sf(z), false))
}

/// Shapiro-Wilk `(W, p)` by Royston's approximation, for 3 <= n <= 5000.
/// `None` for other sizes or a constant sample.
pub fn shapiro_wilk(x: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return None;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mean = s.iter().sum::<f64>() / n as f64;
    let ss: f64 = s.iter().map(|v| (v - mean).powi(2)).sum();
    if !(ss > 0.0) {
        return None;
    }
    let norm = Normal::standard();
    let nf = n as f64;
    let a: Vec<f64> = if n == 3 {
        let h = 0.5f64.sqrt();
        vec![-h, 0.0, h]
    } else {
        let m: Vec<f64> = (1..=n)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let mm: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let poly = |c: [f64; 6]| c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5]))));
        let an = poly([0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056]) + m[n - 1] / mm.sqrt();
        let mut a = vec![0.0; n];
        if n > 5 {
            let an1 = poly([0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633]) + m[n - 2] / mm.sqrt();
            let phi = (mm - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2))
                / (1.0 - 2.0 * an.powi(2) - 2.0 * an1.powi(2));
            for i in 2..n - 2 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 2] = an1;
            a[1] = -an1;
        } else {
            let phi = (mm - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an.powi(2));
            for i in 1..n - 1 {
                a[i] = m[i] / phi.sqrt();
            }
        }
        a[n - 1] = an;
        a[0] = -an;
        a
    };
    let num: f64 = a.iter().zip(&s).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);
    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = 0.459 * nf - 2.273;
        let mu = 0.5440 - 0.39978 * nf + 0.025054 * nf.powi(2) - 0.0006714 * nf.powi(3);
        let sigma = (1.3822 - 0.77857 * nf + 0.062767 * nf.powi(2) - 0.0020322 * nf.powi(3)).exp();
        let inner = gamma - (1.0 - w).ln();
        if !(inner > 0.0) {
            return Some((w, 0.0));
        }
        let z = (-inner.ln() - mu) / sigma;
        norm.sf(z)
    } else {
        let l = nf.ln();
        let mu = -1.5861 - 0.31082 * l - 0.083751 * l * l + 0.0038915 * l.powi(3);
        let sigma = (-0.4803 - 0.082676 * l + 0.0030302 * l * l).exp();
        let z = ((1.0 - w).ln() - mu) / sigma;
        norm.sf(z)
    };
    Some((w, p))
}

/// Sample skewness within `z * SE` of zero, with the exact small-sample
/// standard error of the skewness estimator.
pub fn symmetric(x: &[f64]) -> bool {
    let n = x.len();
    if n < 3 {
        return true;
    }
    let nf = n as f64;
    let m = x.iter().sum::<f64>() / nf;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
    if !(m2 > 0.0) {
        return true;
    }
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / nf;
    let g1 = m3 / m2.powf(1.5);
    // adjusted Fisher-Pearson skewness and its standard error
    let g = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let se = (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt();
    let z = Normal::standard().inverse_cdf(1.0 - FLAG_LEVEL / 2.0);
    g.abs() <= z * se
}
