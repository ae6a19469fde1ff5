//! Exact quantile regression by basis exchange (Barrodale–Roberts style).
//!
//! A vertex of the check-loss LP interpolates `d` observations (the basis).
//! From a vertex we price the `2d` edges obtained by releasing one basic
//! observation in either direction, follow the steepest descending edge, and
//! stop at the minimiser of the convex piecewise-linear objective along it,
//! which is found by walking sorted breakpoints (a weighted median). Each step
//! strictly decreases the objective, so the method terminates at an optimal
//! vertex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) struct Vertex {
    pub coef: Vec<f64>,
    pub basis: Vec<usize>,
}

/// Rows of `x` with the smallest `|residual|` that form a nonsingular basis.
pub(crate) fn basis_near(x: &DMatrix<f64>, residuals: &[f64]) -> Result<Vec<usize>> {
    let (n, d) = x.shape();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        residuals[a]
            .abs()
            .total_cmp(&residuals[b].abs())
            .then(a.cmp(&b))
    });
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut basis = Vec::with_capacity(d);
    for i in order {
        let row: Vec<f64> = (0..d).map(|c| x[(i, c)]).collect();
        let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = row;
        for _ in 0..2 {
            for b in &q {
                let c: f64 = b.iter().zip(&v).map(|(p, s)| p * s).sum();
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
            }
        }
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            v.iter_mut().for_each(|t| *t /= norm);
            q.push(v);
            basis.push(i);
            if basis.len() == d {
                return Ok(basis);
            }
        }
    }
    Err(Error::Numerical(
        "could not find a nonsingular starting basis".into(),
    ))
}

/// Runs basis exchange from `basis` to an optimal vertex.
pub(crate) fn solve_from_basis(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    mut basis: Vec<usize>,
) -> Result<Vertex> {
    let (n, d) = x.shape();
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let zero_tol = 1e-11 * scale;
    let max_iter = 50 * n + 1000;
    let mut in_basis = vec![false; n];
    basis.iter().for_each(|&i| in_basis[i] = true);
    let mut r = vec![0.0; n];
    let mut candidates: Vec<(f64, usize, f64)> = Vec::with_capacity(n);

    for _ in 0..max_iter {
        let b = DMatrix::from_fn(d, d, |k, c| x[(basis[k], c)]);
        let binv = b
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular simplex basis".into()))?;
        let yh = DVector::from_iterator(d, basis.iter().map(|&i| y[i]));
        let beta = &binv * yh;
        let fitted = x * &beta;
        for i in 0..n {
            r[i] = if in_basis[i] { 0.0 } else { y[i] - fitted[i] };
        }
        // directions[(i, j)] = x_iᵀ δ_j, where δ_j releases basic row j
        let directions = x * &binv;

        let mut best: Option<(usize, f64, f64)> = None; // (j, sign, slope)
        for j in 0..d {
            let col = directions.column(j);
            // g: derivative along +δ_j from observations off their kink;
            // kinked observations add a positive amount in either direction
            let (mut g, mut kink_plus, mut kink_minus, mut norm) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let c = col[i];
                if c == 0.0 {
                    continue;
                }
                norm += c.abs();
                if r[i] > zero_tol {
                    g -= c * tau;
                } else if r[i] < -zero_tol {
                    g -= c * (tau - 1.0);
                } else if c > 0.0 {
                    kink_plus += c * (1.0 - tau);
                    kink_minus += c * tau;
                } else {
                    kink_plus -= c * tau;
                    kink_minus -= c * (1.0 - tau);
                }
            }
            let eps = 1e-11 * (1.0 + norm);
            for (sign, slope) in [
                (1.0, g + kink_plus + (1.0 - tau)),
                (-1.0, -g + kink_minus + tau),
            ] {
                if slope < -eps && best.is_none_or(|(_, _, s)| slope < s) {
                    best = Some((j, sign, slope));
                }
            }
        }
        let Some((j, sign, slope0)) = best else {
            return Ok(Vertex {
                coef: beta.iter().copied().collect(),
                basis,
            });
        };

        candidates.clear();
        let col = directions.column(j);
        for i in 0..n {
            if in_basis[i] || r[i].abs() <= zero_tol {
                continue;
            }
            let c = sign * col[i];
            if c == 0.0 {
                continue;
            }
            let t = r[i] / c;
            if t > 0.0 {
                candidates.push((t, i, c.abs()));
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, i, c) in &candidates {
            slope += c;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let i = entering.ok_or_else(|| Error::Numerical("unbounded descent direction".into()))?;
        in_basis[basis[j]] = false;
        in_basis[i] = true;
        basis[j] = i;
    }
    Err(Error::Numerical(format!(
        "basis exchange did not converge in {max_iter} iterations"
    )))
}
