//! Exact alpha-entmax and its two-class gate.
//!
//! For `alpha = 1.5` the threshold is found by the sorted closed form; other
//! values of `alpha > 1` use bisection on the threshold. The Jacobian of
//! alpha-entmax at output `p` is `diag(s) - s s^T / sum(s)` with
//! `s = p^(2 - alpha)` on the support and zero elsewhere.

/// Number of bisection halvings; the bracket has width at most 1.
const BISECT_ITERS: usize = 200;

/// Alpha-entmax of `v`. Requires `alpha > 1` and a non-empty input.
pub fn entmax(v: &[f64], alpha: f64) -> Vec<f64> {
    assert!(alpha > 1.0, "entmax requires alpha > 1, got {alpha}");
    assert!(!v.is_empty(), "entmax of an empty vector");
    if alpha == 1.5 {
        entmax15(v)
    } else {
        entmax_bisect(v, alpha)
    }
}

/// 1.5-entmax by sorting and the closed-form threshold.
pub fn entmax15(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = v.iter().map(|a| (a - max) / 2.0).collect();
    let mut sorted = x.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut tau_star = 0.0;
    for (i, &xi) in sorted.iter().enumerate() {
        let k = (i + 1) as f64;
        sum += xi;
        sum_sq += xi * xi;
        let mean = sum / k;
        let ss = sum_sq / k;
        let delta = (1.0 - k * (ss - mean * mean)) / k;
        let tau = mean - delta.max(0.0).sqrt();
        if tau <= xi {
            tau_star = tau;
        } else {
            break;
        }
    }
    normalized(x.iter().map(|xi| (xi - tau_star).max(0.0).powi(2)).collect())
}

/// Alpha-entmax by bisection on the threshold.
pub fn entmax_bisect(v: &[f64], alpha: f64) -> Vec<f64> {
    let am1 = alpha - 1.0;
    let z: Vec<f64> = v.iter().map(|a| a * am1).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = z.len() as f64;
    let mass = |tau: f64| -> f64 { z.iter().map(|zi| (zi - tau).max(0.0).powf(1.0 / am1)).sum() };
    let (mut lo, mut hi) = (max - 1.0, max - (1.0 / n).powf(am1));
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    normalized(z.iter().map(|zi| (zi - lo).max(0.0).powf(1.0 / am1)).collect())
}

fn normalized(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Vector-Jacobian product of alpha-entmax at output `p`.
pub fn entmax_vjp(p: &[f64], alpha: f64, g: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = p
        .iter()
        .map(|&pi| if pi > 0.0 { pi.powf(2.0 - alpha) } else { 0.0 })
        .collect();
    let s_sum: f64 = s.iter().sum();
    let sg: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
    s.iter().zip(g).map(|(si, gi)| si * gi - si * sg / s_sum).collect()
}

/// Two-class gate `sigma_alpha(x) = entmax_alpha([x, 0])_1`.
pub fn gate(x: f64, alpha: f64) -> f64 {
    if alpha == 1.5 {
        if x >= 2.0 {
            1.0
        } else if x <= -2.0 {
            0.0
        } else {
            0.5 + x * (8.0 - x * x).sqrt() / 8.0
        }
    } else {
        entmax(&[x, 0.0], alpha)[0]
    }
}

/// Derivative of [`gate`] with respect to `x`.
pub fn gate_grad(x: f64, alpha: f64) -> f64 {
    if alpha == 1.5 {
        if x.abs() >= 2.0 {
            0.0
        } else {
            let r = (8.0 - x * x).sqrt();
            (8.0 - 2.0 * x * x) / (8.0 * r)
        }
    } else {
        let p = entmax(&[x, 0.0], alpha);
        entmax_vjp(&p, alpha, &[1.0, 0.0])[0]
    }
}

/// Softmax, used as the alpha -> 1 reference.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalized(v.iter().map(|a| (a - max).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_input_is_uniform() {
        for p in [entmax15(&[2.0; 3]), entmax_bisect(&[2.0; 3], 1.3)] {
            for x in p {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gate_values() {
        assert_eq!(gate(0.0, 1.5), 0.5);
        assert_eq!(gate(3.0, 1.5), 1.0);
        assert!((gate(0.5, 1.5) - entmax_bisect(&[0.5, 0.0], 1.5)[0]).abs() < 1e-12);
    }

    #[test]
    fn sorted_and_bisection_agree() {
        let v = [0.3, -1.2, 2.5, 0.0, 1.1];
        let a = entmax15(&v);
        let b = entmax_bisect(&v, 1.5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn large_gap_is_one_hot() {
        assert_eq!(entmax15(&[5.0, 0.0, -1.0]), vec![1.0, 0.0, 0.0]);
    }
}
