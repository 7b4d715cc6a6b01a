//! Small numeric helpers shared by the analysis code.

use serde::{Deserialize, Serialize};

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; 0 for exactly two points.
    pub slope_stderr: f64,
    pub points: usize,
}

/// Returns `None` with fewer than two points or when all `x` coincide.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr,
        points: n,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic over integer-valued samples given
/// as `value -> count` histograms (both sorted by value).
pub fn ks_statistic<'a, A, B>(a: A, b: B) -> f64
where
    A: IntoIterator<Item = (&'a u64, &'a u64)>,
    B: IntoIterator<Item = (&'a u64, &'a u64)>,
{
    let a: Vec<(u64, u64)> = a.into_iter().map(|(k, v)| (*k, *v)).collect();
    let b: Vec<(u64, u64)> = b.into_iter().map(|(k, v)| (*k, *v)).collect();
    let na: u64 = a.iter().map(|p| p.1).sum();
    let nb: u64 = b.iter().map(|p| p.1).sum();
    if na == 0 || nb == 0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0u64, 0u64);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 == next {
            ca += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == next {
            cb += b[j].1;
            j += 1;
        }
        d = d.max((ca as f64 / na as f64 - cb as f64 / nb as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = least_squares(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(least_squares(&[1.0], &[1.0]).is_none());
        assert!(least_squares(&[2.0, 2.0], &[1.0, 3.0]).is_none());
    }

    #[test]
    fn stderr_matches_textbook() {
        // y = x with residuals +-1: ssr = 4, sxx = 5, n = 4.
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 0.0, 3.0, 2.0];
        let f = least_squares(&xs, &ys).unwrap();
        assert!((f.slope - 0.6).abs() < 1e-12);
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - f.intercept - f.slope * x).powi(2))
            .sum();
        assert!((f.slope_stderr - (ssr / 2.0 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: BTreeMap<u64, u64> = [(1, 5), (2, 5)].into();
        assert_eq!(ks_statistic(&a, &a), 0.0);
        let b: BTreeMap<u64, u64> = [(10, 3)].into();
        assert_eq!(ks_statistic(&a, &b), 1.0);
        let c: BTreeMap<u64, u64> = [(1, 1), (2, 3)].into();
        assert!((ks_statistic(&a, &c) - 0.25).abs() < 1e-12);
    }
}
