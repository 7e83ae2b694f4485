//! Weighted Levenberg–Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITER: usize = 200;
pub(crate) const STEP_TOL: f64 = 1e-8;

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    /// Covariance scaled by the reduced weighted χ²; `None` when singular.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
}

/// `model(x, p, grad)` returns the model value and writes ∂/∂p into `grad`.
pub(crate) fn fit<F>(x: &[f64], y: &[f64], w: &[f64], p0: &[f64], model: F) -> LmOutcome
where
    F: Fn(f64, &[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let m = p0.len();
    let mut p = DVector::from_column_slice(p0);
    let mut grad = vec![0.0; m];

    let eval = |p: &DVector<f64>, jac: Option<&mut DMatrix<f64>>, grad: &mut [f64]| -> (f64, DVector<f64>) {
        let mut r = DVector::zeros(n);
        let mut chi2 = 0.0;
        let mut jac = jac;
        for i in 0..n {
            let f = model(x[i], p.as_slice(), grad);
            r[i] = y[i] - f;
            chi2 += w[i] * r[i] * r[i];
            if let Some(j) = jac.as_deref_mut() {
                for k in 0..m {
                    j[(i, k)] = grad[k];
                }
            }
        }
        (chi2, r)
    };

    let mut jac = DMatrix::zeros(n, m);
    let (mut chi2, mut r) = eval(&p, Some(&mut jac), &mut grad);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITER {
        if chi2 == 0.0 {
            converged = true;
            break;
        }
        let jw = DMatrix::from_fn(n, m, |i, k| w[i] * jac[(i, k)]);
        let a = jw.transpose() * &jac;
        let g = jw.transpose() * &r;
        let mut damped = a.clone();
        for k in 0..m {
            damped[(k, k)] += lambda * a[(k, k)].max(1e-300);
        }
        let Some(delta) = damped.cholesky().map(|c| c.solve(&g)) else {
            lambda *= 10.0;
            continue;
        };
        let small = delta.iter().zip(p.iter()).all(|(d, v)| d.abs() <= STEP_TOL * (v.abs() + STEP_TOL));
        let trial = &p + &delta;
        let (c_new, _) = eval(&trial, None, &mut grad);
        if c_new.is_finite() && c_new <= chi2 {
            p = trial;
            (chi2, r) = eval(&p, Some(&mut jac), &mut grad);
            lambda = (lambda / 10.0).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            // A rejected step only shrinks because of damping, so it says
            // nothing about convergence.
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }
    }

    let jtwj = DMatrix::from_fn(n, m, |i, k| w[i] * jac[(i, k)]).transpose() * &jac;
    let dof = n.saturating_sub(m).max(1) as f64;
    let covariance = jtwj.try_inverse().map(|inv| inv * (chi2 / dof));
    LmOutcome {
        params: p.as_slice().to_vec(),
        covariance,
        converged,
    }
}
