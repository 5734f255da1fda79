use crate::error::AutodiffError;
use crate::exec::Exec;

/// Central differences `(f(p + eps e_j) - f(p - eps e_j)) / 2 eps` for every `j`.
pub fn central_differences<F>(
    f: F,
    p: &[f64],
    eps: f64,
    exec: Exec,
) -> Result<Vec<f64>, AutodiffError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::BadEpsilon(eps));
    }
    let probes = exec.map(p.len(), |j| {
        let mut q = p.to_vec();
        q[j] = p[j] + eps;
        let plus = f(&q);
        q[j] = p[j] - eps;
        let minus = f(&q);
        (plus, minus)
    });
    probes
        .into_iter()
        .enumerate()
        .map(|(j, (plus, minus))| {
            if plus.is_finite() && minus.is_finite() {
                Ok((plus - minus) / (2.0 * eps))
            } else {
                Err(AutodiffError::NonFiniteProbe { index: j })
            }
        })
        .collect()
}

/// Largest `|analytic_j - fd_j| / max(1, |fd_j|)` over all coordinates.
pub fn grad_check<F>(f: F, analytic: &[f64], p: &[f64], eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    assert_eq!(analytic.len(), p.len(), "gradient length mismatch");
    let fd = central_differences(f, p, eps, Exec::default())?;
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, d)| (a - d).abs() / d.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let f = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let p = [1.0, -1.0];
        let err = grad_check(f, &[2.0, -2.0], &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let f = |p: &[f64]| if p[0] > 0.0 { f64::NAN } else { 0.0 };
        assert!(matches!(
            grad_check(f, &[0.0], &[0.0], 1e-5),
            Err(AutodiffError::NonFiniteProbe { index: 0 })
        ));
    }

    #[test]
    fn rejects_non_positive_eps() {
        let f = |_: &[f64]| 0.0;
        assert!(grad_check(f, &[0.0], &[0.0], 0.0).is_err());
    }
}
