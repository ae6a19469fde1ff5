//! Linear quantile regression: single-τ fits, the coefficient process over a
//! grid, the rank-score test and the R^Q explained-deviance criterion.

mod ipm;
mod rank_score;
mod simplex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, check_full_column_rank};
use crate::types::{Genotypes, QuantileGrid};

pub use rank_score::{
    covariate_basis, rank_score_test, screen_pvalue, RankScoreNull, ResidualizedSnp,
};

/// Observations at or above this count go through the interior point method.
pub const INTERIOR_POINT_MIN_N: usize = 200;
const IPM_GAP_TOL: f64 = 1e-9;
const IPM_MAX_ITER: usize = 100;

/// Check (pinball) loss `ρ_τ(u) = u (τ - I(u < 0))`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

pub fn total_check_loss(residuals: impl IntoIterator<Item = f64>, tau: f64) -> f64 {
    residuals.into_iter().map(|u| check_loss(u, tau)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Simplex below [`INTERIOR_POINT_MIN_N`] observations, interior point above.
    #[default]
    Auto,
    InteriorPoint,
    Simplex,
}

/// Regression design `[1 | C | Z]`: intercept, covariates, then SNPs.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    matrix: DMatrix<f64>,
    n_covariates: usize,
    n_snps: usize,
}

impl Design {
    pub fn new(covariates: &DMatrix<f64>, snps: &[&[f64]]) -> Result<Self> {
        let n = covariates.nrows();
        if let Some(bad) = snps.iter().position(|s| s.len() != n) {
            return Err(Error::invalid(format!("SNP column {bad} has wrong length")));
        }
        let q = covariates.ncols();
        let d = 1 + q + snps.len();
        let mut m = DMatrix::zeros(n, d);
        m.column_mut(0).fill(1.0);
        for j in 0..q {
            m.column_mut(1 + j).copy_from(&covariates.column(j));
        }
        for (k, s) in snps.iter().enumerate() {
            m.column_mut(1 + q + k).copy_from_slice(s);
        }
        Ok(Design {
            matrix: m,
            n_covariates: q,
            n_snps: snps.len(),
        })
    }

    pub fn intercept_only(n: usize) -> Self {
        Design {
            matrix: DMatrix::from_element(n, 1, 1.0),
            n_covariates: 0,
            n_snps: 0,
        }
    }

    /// Design from a panel's covariates and the SNP columns at `snp_idx`.
    pub fn from_panel<G: Genotypes + ?Sized>(panel: &G, snp_idx: &[usize]) -> Result<Self> {
        let cols: Vec<&[f64]> = snp_idx.iter().map(|&j| panel.dosage_column(j)).collect();
        Design::new(panel.covariates(), &cols)
    }

    /// The nested design without SNP columns.
    pub fn null(&self) -> Design {
        let keep = 1 + self.n_covariates;
        Design {
            matrix: self.matrix.columns(0, keep).into_owned(),
            n_covariates: self.n_covariates,
            n_snps: 0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_obs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn n_snps(&self) -> usize {
        self.n_snps
    }
}

/// One quantile regression fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    pub tau: f64,
    pub intercept: f64,
    pub covariate_coefs: Vec<f64>,
    pub snp_coefs: Vec<f64>,
    /// Minimised check loss.
    pub objective: f64,
}

impl QrFit {
    fn from_coef(design: &Design, y: &[f64], tau: f64, coef: &[f64]) -> Self {
        let q = design.n_covariates;
        let objective = objective_at(design.matrix(), y, tau, coef);
        QrFit {
            tau,
            intercept: coef[0],
            covariate_coefs: coef[1..1 + q].to_vec(),
            snp_coefs: coef[1 + q..].to_vec(),
            objective,
        }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(1 + self.covariate_coefs.len() + self.snp_coefs.len());
        c.push(self.intercept);
        c.extend(&self.covariate_coefs);
        c.extend(&self.snp_coefs);
        c
    }
}

fn objective_at(x: &DMatrix<f64>, y: &[f64], tau: f64, coef: &[f64]) -> f64 {
    let (n, d) = x.shape();
    total_check_loss(
        (0..n).map(|i| y[i] - (0..d).map(|c| x[(i, c)] * coef[c]).sum::<f64>()),
        tau,
    )
}

/// Coefficient process over a quantile grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileProcessFit {
    pub grid: QuantileGrid,
    pub fits: Vec<QrFit>,
}

impl QuantileProcessFit {
    /// `β̂_j(τ)` for SNP `j` at every grid point.
    pub fn snp_curve(&self, j: usize) -> Vec<f64> {
        self.fits.iter().map(|f| f.snp_coefs[j]).collect()
    }

    pub fn intercept_curve(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.intercept).collect()
    }
}

fn validate(y: &[f64], design: &Design) -> Result<()> {
    let (n, d) = design.matrix.shape();
    if y.len() != n {
        return Err(Error::invalid(format!(
            "response has length {}, design has {n} rows",
            y.len()
        )));
    }
    if n < d + 1 {
        return Err(Error::invalid(format!(
            "need at least {} observations for {d} columns, got {n}",
            d + 1
        )));
    }
    check_finite(y, "response")?;
    check_finite(design.matrix.as_slice(), "design")?;
    check_full_column_rank(&design.matrix)
}

fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level {tau} not in (0,1)")))
    }
}

/// Quantile fits at several levels, warm-starting each from the previous
/// optimal basis.
pub(crate) struct ChainedSolver<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    kind: SolverKind,
    basis: Option<Vec<usize>>,
}

impl<'a> ChainedSolver<'a> {
    /// Caller guarantees a validated design (see [`validate`]).
    pub(crate) fn new(x: &'a DMatrix<f64>, y: &'a [f64], kind: SolverKind) -> Self {
        ChainedSolver {
            x,
            y,
            kind,
            basis: None,
        }
    }

    pub(crate) fn solve(&mut self, tau: f64) -> Result<Vec<f64>> {
        validate_tau(tau)?;
        let n = self.x.nrows();
        let start = match (&self.basis, self.kind) {
            (Some(b), SolverKind::Auto | SolverKind::Simplex) => b.clone(),
            _ => {
                let use_ipm = match self.kind {
                    SolverKind::InteriorPoint => true,
                    SolverKind::Simplex => false,
                    SolverKind::Auto => n >= INTERIOR_POINT_MIN_N,
                };
                let ipm = if use_ipm {
                    Some(ipm::solve(self.x, self.y, tau, IPM_GAP_TOL, IPM_MAX_ITER)?)
                } else {
                    None
                };
                // an unconverged interior point still seeds the simplex, but
                // the least-squares start is the safer fallback
                let coef = match ipm {
                    Some(out) if out.converged => out.coef,
                    _ => least_squares(self.x, self.y)?,
                };
                let fitted = self.x * nalgebra::DVector::from_column_slice(&coef);
                let r: Vec<f64> = (0..n).map(|i| self.y[i] - fitted[i]).collect();
                simplex::basis_near(self.x, &r)?
            }
        };
        let v = simplex::solve_from_basis(self.x, self.y, tau, start)?;
        self.basis = Some(v.basis);
        Ok(v.coef)
    }
}

fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let xt = x.transpose();
    let chol = (&xt * x)
        .cholesky()
        .ok_or_else(|| Error::Numerical("XᵀX not positive definite".into()))?;
    Ok(chol
        .solve(&(&xt * nalgebra::DVector::from_column_slice(y)))
        .iter()
        .copied()
        .collect())
}

/// Minimises `Σ ρ_τ(y_i - x_iᵀb)` over `b`.
pub fn fit_qr(y: &[f64], design: &Design, tau: f64) -> Result<QrFit> {
    fit_qr_with(y, design, tau, SolverKind::Auto)
}

pub fn fit_qr_with(y: &[f64], design: &Design, tau: f64, kind: SolverKind) -> Result<QrFit> {
    validate_tau(tau)?;
    validate(y, design)?;
    let coef = ChainedSolver::new(&design.matrix, y, kind).solve(tau)?;
    Ok(QrFit::from_coef(design, y, tau, &coef))
}

/// Fits every level of `grid`, in grid order.
pub fn fit_process(y: &[f64], design: &Design, grid: &QuantileGrid) -> Result<QuantileProcessFit> {
    fit_levels(y, design, grid.taus()).map(|fits| QuantileProcessFit {
        grid: grid.clone(),
        fits,
    })
}

pub(crate) fn fit_levels(y: &[f64], design: &Design, taus: &[f64]) -> Result<Vec<QrFit>> {
    validate(y, design)?;
    let mut solver = ChainedSolver::new(&design.matrix, y, SolverKind::Auto);
    taus.iter()
        .map(|&tau| {
            let coef = solver.solve(tau)?;
            Ok(QrFit::from_coef(design, y, tau, &coef))
        })
        .collect()
}

/// Explained deviance `R^Q(τ) = 1 - V̂(τ)/Ṽ(τ)` of a full design over its
/// nested null design.
pub fn r_q(y: &[f64], design_full: &Design, design_null: &Design, tau: f64) -> Result<f64> {
    if design_null.matrix.ncols() > design_full.matrix.ncols() {
        return Err(Error::invalid(
            "null design has more columns than full design",
        ));
    }
    let full = fit_qr(y, design_full, tau)?;
    let null = fit_qr(y, design_null, tau)?;
    rq_from_objectives(full.objective, null.objective)
}

pub(crate) fn rq_from_objectives(full: f64, null: f64) -> Result<f64> {
    if null <= 0.0 {
        return Ok(0.0);
    }
    let rq = 1.0 - full / null;
    if rq < -1e-8 {
        return Err(Error::Numerical(format!(
            "R^Q = {rq} is negative beyond tolerance; fits are not nested"
        )));
    }
    Ok(rq.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_design(rng: &mut impl Rng, n: usize, extra: usize) -> Design {
        let cov = DMatrix::from_fn(n, extra, |_, _| rng.sample::<f64, _>(StandardNormal));
        Design::new(&cov, &[]).unwrap()
    }

    #[test]
    fn median_of_three() {
        let fit = fit_qr(&[1.0, 2.0, 3.0], &Design::intercept_only(3), 0.5).unwrap();
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!((fit.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_response_gives_zero_fit() {
        let mut rng = rng_from_seed(3);
        let d = random_design(&mut rng, 30, 2);
        for tau in [0.1, 0.5, 0.9] {
            let fit = fit_qr(&[0.0; 30], &d, tau).unwrap();
            assert!(fit.coefficients().iter().all(|c| c.abs() < 1e-12));
            assert_eq!(fit.objective, 0.0);
        }
    }

    #[test]
    fn rank_deficient_design_names_columns() {
        let cov = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let d = Design::new(&cov, &[]).unwrap();
        match fit_qr(&[1.0; 10], &d, 0.5) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let y = [1.0, f64::NAN, 2.0, 3.0];
        assert!(matches!(
            fit_qr(&y, &Design::intercept_only(4), 0.5),
            Err(Error::NonFinite(_))
        ));
        assert!(fit_qr(&[1.0, 2.0], &Design::intercept_only(2), 1.0).is_err());
    }

    #[test]
    fn interior_point_and_simplex_agree() {
        let mut rng = rng_from_seed(11);
        let n = 300;
        let d = random_design(&mut rng, n, 3);
        let y: Vec<f64> = (0..n)
            .map(|i| d.matrix()[(i, 1)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        for tau in [0.1, 0.37, 0.5, 0.93] {
            let a = fit_qr_with(&y, &d, tau, SolverKind::InteriorPoint).unwrap();
            let b = fit_qr_with(&y, &d, tau, SolverKind::Simplex).unwrap();
            assert!((a.objective - b.objective).abs() <= 1e-9 * b.objective);
        }
    }

    #[test]
    fn raw_interior_point_converges_close_to_optimum() {
        let mut rng = rng_from_seed(12);
        let n = 250;
        let d = random_design(&mut rng, n, 2);
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let out = ipm::solve(d.matrix(), &y, 0.3, 1e-9, 100).unwrap();
        assert!(out.converged);
        let exact = fit_qr_with(&y, &d, 0.3, SolverKind::Simplex).unwrap();
        let approx = objective_at(d.matrix(), &y, 0.3, &out.coef);
        assert!((approx - exact.objective) / exact.objective < 1e-6);
    }

    #[test]
    fn process_is_in_grid_order_and_constant_response_is_recovered() {
        let grid = QuantileGrid::new(vec![0.2, 0.5, 0.8]).unwrap();
        let mut rng = rng_from_seed(4);
        let d = random_design(&mut rng, 40, 1);
        let y = vec![3.5; 40];
        let p = fit_process(&y, &d, &grid).unwrap();
        assert_eq!(p.fits.len(), 3);
        for (f, &t) in p.fits.iter().zip(grid.taus()) {
            assert_eq!(f.tau, t);
            assert!((f.intercept - 3.5).abs() < 1e-10);
        }
    }

    #[test]
    fn rq_edge_cases() {
        let n = 40;
        let z: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let zero = vec![0.0; n];
        let cov = DMatrix::zeros(n, 0);
        let mut rng = rng_from_seed(5);
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // an all-zero SNP column makes the design singular; R^Q is 0 by nesting
        let null = Design::new(&cov, &[]).unwrap();
        let full_zero = Design::new(&cov, &[&zero]).unwrap();
        assert!(r_q(&y, &full_zero, &null, 0.5).is_err());
        let exact: Vec<f64> = z.iter().map(|v| 5.0 * v).collect();
        let full = Design::new(&cov, &[&z]).unwrap();
        assert!((r_q(&exact, &full, &null, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r_q(&vec![2.0; n], &full, &null, 0.5).unwrap(), 0.0);
    }
}
