//! Central-difference gradient checking.

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over elements of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// Parameter group and element where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compare `analytic` against central differences of `f` at `params`.
///
/// Each element of every parameter group is perturbed by `±eps` in turn
/// and restored afterwards, so `params` is unchanged on return.
pub fn finite_diff_check<F>(
    params: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, a)| p.len() != a.len())
    {
        return Err(Error::InvalidArgument(
            "analytic gradient groups do not match parameter groups".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for g in 0..params.len() {
        for i in 0..params[g].len() {
            let orig = params[g][i];
            params[g][i] = orig + eps;
            let plus = f(params);
            params[g][i] = orig - eps;
            let minus = f(params);
            params[g][i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradCheck { param: g, index: i });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[g][i];
            let err = (exact - numeric).abs() / 1f64.max(exact.abs()).max(numeric.abs());
            if report.checked == 0 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (g, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact() {
        let mut p = vec![vec![0.7]];
        let r = finite_diff_check(&mut p, &[vec![3.0]], DEFAULT_EPS, |p| 3.0 * p[0][0]).unwrap();
        assert!(r.max_rel_error < 1e-10);
        assert_eq!(p, vec![vec![0.7]]);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut p = vec![vec![1.0, 2.0]];
        let r = finite_diff_check(&mut p, &[vec![2.0, 5.0]], DEFAULT_EPS, |p| {
            p[0].iter().map(|v| v * v).sum()
        })
        .unwrap();
        assert_eq!(r.worst, (0, 1));
        assert!((r.max_rel_error - 0.2).abs() < 1e-6);
    }

    #[test]
    fn non_finite_reports_location() {
        let mut p = vec![vec![1.0], vec![0.0, 1.0]];
        let err = finite_diff_check(&mut p, &[vec![0.0], vec![0.0, 0.0]], DEFAULT_EPS, |p| {
            if p[1][1] != 1.0 {
                f64::NAN
            } else {
                0.0
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::GradCheck { param: 1, index: 1 }));
    }
}
