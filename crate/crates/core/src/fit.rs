//! Least-squares fits used for convergence and moderateness exponents.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the intercept (0 for an exact two-point fit).
    pub intercept_stderr: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`; `None` with fewer than
/// two points or no spread in `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs[..n]
        .iter()
        .zip(&ys[..n])
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs[..n]
        .iter()
        .zip(&ys[..n])
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let intercept_stderr = if n > 2 {
        let s2 = ss / (nf - 2.0);
        (s2 * (1.0 / nf + mx * mx / sxx)).sqrt()
    } else {
        0.0
    };
    Some(LinearFit {
        slope,
        intercept,
        intercept_stderr,
        residual: (ss / nf).sqrt(),
        points: n,
    })
}

/// Fits `log10 y ≈ a + slope·log10 x` over the pairs with positive finite values.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.log10(), y.log10()))
        .unzip();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let xs = [1e-1, 1e-2, 1e-3, 1e-4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let f = loglog_fit(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.log10()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(loglog_fit(&[1.0, 2.0], &[0.0, 0.0]).is_none());
        let two = linear_fit(&[0.0, 1.0], &[1.0, 3.0]).unwrap();
        assert_eq!(two.intercept_stderr, 0.0);
        assert_eq!(two.slope, 2.0);
    }

    proptest! {
        #[test]
        fn recovers_noise_free_lines(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let xs = [0.0, 0.5, 1.0, 2.0, 3.5];
            let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
            let f = linear_fit(&xs, &ys).unwrap();
            prop_assert!((f.slope - b).abs() < 1e-10);
            prop_assert!((f.intercept - a).abs() < 1e-10);
        }
    }
}
