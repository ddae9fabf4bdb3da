//! Summary statistics and the paired one-sided Wilcoxon signed-rank test.

use serde::Serialize;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation; zero for fewer than two samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn stderr(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            n: xs.len(),
            mean: mean(xs),
            stderr: stderr(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    /// Exact `P(W+ >= observed)` under the symmetric null, ties included.
    pub p_value: f64,
}

/// Largest number of nonzero pairs handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 60;

/// One-sided paired test of `H1: a tends to exceed b`. Zero differences are
/// dropped; tied magnitudes get midranks and the null distribution is
/// computed exactly over the observed ranks.
pub fn wilcoxon_greater(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("wilcoxon needs paired samples of equal length".into()));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite difference in wilcoxon input".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, n, p_value: 1.0 });
    }
    if n > WILCOXON_EXACT_MAX {
        return Err(Error::Unsupported(format!("exact wilcoxon limited to {WILCOXON_EXACT_MAX} pairs")));
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    // doubled midranks are integers
    let mut ranks2 = vec![0usize; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        for r in ranks2.iter_mut().take(j + 1).skip(i) {
            *r = i + j + 2;
        }
        i = j + 1;
    }
    let observed: usize = d.iter().zip(&ranks2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total: usize = ranks2.iter().sum();
    let mut ways = vec![0f64; total + 1];
    ways[0] = 1.0;
    for &r in &ranks2 {
        for s in (r..=total).rev() {
            ways[s] += ways[s - r];
        }
    }
    let all = 2f64.powi(n as i32);
    let tail: f64 = ways[observed..].iter().sum();
    Ok(WilcoxonResult {
        w_plus: observed as f64 / 2.0,
        n,
        p_value: tail / all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((std_dev(&xs) - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stderr(&xs) - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(stderr(&[3.0]), 0.0);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn all_positive_gives_smallest_p() {
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = vec![0.0; 10];
        let r = wilcoxon_greater(&a, &b).unwrap();
        assert_eq!(r.w_plus, 55.0);
        assert!((r.p_value - 1.0 / 1024.0).abs() < 1e-15);
        let r = wilcoxon_greater(&b, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        let b = [2.0, 2.0, 2.0, 0.0, 5.0, 7.0, 0.0];
        let r = wilcoxon_greater(&a, &b).unwrap();
        // differences 1, -1, 2, 1, (0 dropped), 2, 2: magnitudes 1,1,1,2,2,2
        let ranks = [2.0, 2.0, 2.0, 5.0, 5.0, 5.0];
        let signs = [1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        let obs: f64 = ranks.iter().zip(&signs).filter(|(_, s)| **s > 0.0).map(|(r, _)| r).sum();
        assert_eq!(r.w_plus, obs);
        let mut hits = 0;
        for mask in 0..64u32 {
            let w: f64 = (0..6).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w >= obs {
                hits += 1;
            }
        }
        assert!((r.p_value - f64::from(hits) / 64.0).abs() < 1e-15);
        assert_eq!(r.n, 6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(wilcoxon_greater(&[1.0], &[]).is_err());
        assert_eq!(wilcoxon_greater(&[1.0], &[1.0]).unwrap().p_value, 1.0);
    }
}
