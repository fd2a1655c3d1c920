use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: usize,
    pub significant_at_05: bool,
    /// Differences were constant and nonzero, so the statistic is infinite.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    let result = |t: f64, p: f64, degenerate: bool| TTestResult {
        t_statistic: t,
        p_value: p,
        degrees_of_freedom: df,
        significant_at_05: p < 0.05,
        degenerate,
    };
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(result(0.0, 1.0, false));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    // Floating-point noise in a constant shift counts as zero variance.
    if var.sqrt() <= 1e-12 * mean.abs() {
        return Ok(result(mean.signum() * f64::INFINITY, 0.0, true));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(result(t, p, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_fixture() {
        let r = paired_t_test(&[0.9, 0.1, 0.5, 0.7], &[0.6, 0.2, 0.4, 0.3]).unwrap();
        assert!((r.t_statistic - 1.578).abs() < 1e-2, "{r:?}");
        assert!((r.p_value - 0.213).abs() < 1e-2, "{r:?}");
        assert_eq!(r.degrees_of_freedom, 3);
        assert!(!r.significant_at_05);
    }

    #[test]
    fn identity_and_antisymmetry() {
        let a = [0.3, 0.5, 0.1];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));

        let b = [0.2, 0.9, 0.0];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t_statistic, -ba.t_statistic);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn constant_shift_is_degenerate() {
        let r = paired_t_test(&[0.5, 0.7, 0.9], &[0.25, 0.45, 0.65]).unwrap();
        assert!(r.degenerate);
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.0);
        assert!(r.significant_at_05);
    }

    #[test]
    fn bad_inputs() {
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }
}
