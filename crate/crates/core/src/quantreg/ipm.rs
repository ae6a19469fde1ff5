//! Frisch–Newton interior point for the quantile regression LP.
//!
//! Works on the bounded dual `max yᵀa  s.t.  Xᵀa = (1-τ)Xᵀ1, 0 ≤ a ≤ 1`
//! with Mehrotra predictor–corrector steps; the coefficient vector is the
//! Lagrange multiplier of the equality constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.99995;

pub(crate) struct IpmOutcome {
    pub coef: Vec<f64>,
    pub converged: bool,
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&x, &d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn solve(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    gap_tol: f64,
    max_iter: usize,
) -> Result<IpmOutcome> {
    let (n, d) = x.shape();
    let yv = DVector::from_column_slice(y);
    let xt = x.transpose();
    let b = &xt * DVector::from_element(n, 1.0 - tau);

    let gram = &xt * x;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("XᵀX not positive definite".into()))?;
    let mut beta = chol.solve(&(&xt * &yv));

    let mut a = vec![1.0 - tau; n];
    let mut s = vec![tau; n];
    let r0 = &yv - x * &beta;
    let y_scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let shift = (r0.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-6 * y_scale);
    let mut w: Vec<f64> = r0.iter().map(|&ri| ri.max(0.0) + shift).collect();
    let mut z: Vec<f64> = r0.iter().map(|&ri| (-ri).max(0.0) + shift).collect();

    let mut q = vec![0.0; n];
    let mut rhat = DVector::zeros(n);
    for _ in 0..max_iter {
        let gap: f64 = (0..n).map(|i| a[i] * z[i] + s[i] * w[i]).sum();
        let fitted = x * &beta;
        let rd: Vec<f64> = (0..n).map(|i| y[i] - fitted[i] - w[i] + z[i]).collect();
        let rp = &b - &xt * DVector::from_column_slice(&a);
        let dual_obj: f64 = (0..n).map(|i| y[i] * (a[i] - (1.0 - tau))).sum();
        if gap <= gap_tol * (1.0 + dual_obj.abs()) {
            return Ok(IpmOutcome {
                coef: beta.iter().copied().collect(),
                converged: true,
            });
        }

        for i in 0..n {
            q[i] = w[i] / s[i] + z[i] / a[i];
        }
        let scaled = DMatrix::from_fn(n, d, |i, c| x[(i, c)] / q[i]);
        let m = &xt * &scaled;
        let Some(mchol) = m.cholesky() else {
            break;
        };

        // predictor
        for i in 0..n {
            rhat[i] = rd[i] + w[i] - z[i];
        }
        let (dx_a, dbeta_a) = newton_direction(x, &xt, &mchol, &q, &rhat, &rp);
        let dz_a: Vec<f64> = (0..n).map(|i| -z[i] - z[i] * dx_a[i] / a[i]).collect();
        let dw_a: Vec<f64> = (0..n).map(|i| -w[i] + w[i] * dx_a[i] / s[i]).collect();
        let neg_dx: Vec<f64> = dx_a.iter().map(|v| -v).collect();
        let ap = (STEP_FRACTION * max_step(&a, &dx_a).min(max_step(&s, &neg_dx))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz_a).min(max_step(&w, &dw_a))).min(1.0);
        let gap_aff: f64 = (0..n)
            .map(|i| {
                (a[i] + ap * dx_a[i]) * (z[i] + ad * dz_a[i])
                    + (s[i] - ap * dx_a[i]) * (w[i] + ad * dw_a[i])
            })
            .sum();
        let mu = (gap_aff / gap).powi(3) * gap / (2 * n) as f64;
        let _ = dbeta_a;

        // corrector
        for i in 0..n {
            rhat[i] = rd[i] - (mu - s[i] * w[i] + dx_a[i] * dw_a[i]) / s[i]
                + (mu - a[i] * z[i] - dx_a[i] * dz_a[i]) / a[i];
        }
        let (dx, dbeta) = newton_direction(x, &xt, &mchol, &q, &rhat, &rp);
        let dz: Vec<f64> = (0..n)
            .map(|i| (mu - a[i] * z[i] - dx_a[i] * dz_a[i] - z[i] * dx[i]) / a[i])
            .collect();
        let dw: Vec<f64> = (0..n)
            .map(|i| (mu - s[i] * w[i] + dx_a[i] * dw_a[i] + w[i] * dx[i]) / s[i])
            .collect();
        let neg_dx: Vec<f64> = dx.iter().map(|v| -v).collect();
        let ap = (STEP_FRACTION * max_step(&a, &dx).min(max_step(&s, &neg_dx))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        for i in 0..n {
            a[i] += ap * dx[i];
            s[i] -= ap * dx[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        beta += ad * dbeta;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("interior point diverged".into()));
        }
    }
    Ok(IpmOutcome {
        coef: beta.iter().copied().collect(),
        converged: false,
    })
}

fn newton_direction(
    x: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    q: &[f64],
    rhat: &DVector<f64>,
    rp: &DVector<f64>,
) -> (Vec<f64>, DVector<f64>) {
    let n = q.len();
    let scaled = DVector::from_iterator(n, (0..n).map(|i| rhat[i] / q[i]));
    let dbeta = chol.solve(&(xt * scaled - rp));
    let xd = x * &dbeta;
    let dx = (0..n).map(|i| (rhat[i] - xd[i]) / q[i]).collect();
    (dx, dbeta)
}
