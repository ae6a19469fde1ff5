//! Gutenbrunner–Jurečková quantile rank-score test of a single SNP against a
//! covariate-only null model.

use nalgebra::DMatrix;

use super::{ChainedSolver, Design, SolverKind};
use crate::association::cauchy_combine;
use crate::error::{Error, Result};
use crate::linalg::{chi2_1_upper, dot, OrthoBasis};
use crate::types::Region;

/// Null quantile fit of `y` on `[1 | C]` at one level, reduced to what the
/// score statistic needs.
#[derive(Debug, Clone)]
pub struct RankScoreNull {
    tau: f64,
    scores: Vec<f64>,
    objective: f64,
}

impl RankScoreNull {
    pub fn new(y: &[f64], covariates: &DMatrix<f64>, tau: f64) -> Result<Self> {
        Ok(Self::for_levels(y, covariates, &[tau])?.remove(0))
    }

    /// Null fits at several levels, warm-started along the sorted levels.
    /// Output order follows `taus`.
    pub fn for_levels(y: &[f64], covariates: &DMatrix<f64>, taus: &[f64]) -> Result<Vec<Self>> {
        let design = Design::new(covariates, &[])?;
        super::validate(y, &design)?;
        let mut order: Vec<usize> = (0..taus.len()).collect();
        order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
        let mut solver = ChainedSolver::new(design.matrix(), y, SolverKind::Auto);
        let mut out: Vec<Option<Self>> = vec![None; taus.len()];
        for i in order {
            let coef = solver.solve(taus[i])?;
            out[i] = Some(Self::from_coef(design.matrix(), y, taus[i], &coef));
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }

    fn from_coef(x: &DMatrix<f64>, y: &[f64], tau: f64, coef: &[f64]) -> Self {
        let fitted = x * nalgebra::DVector::from_column_slice(coef);
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-11 * scale;
        let mut objective = 0.0;
        let scores = y
            .iter()
            .zip(fitted.iter())
            .map(|(&yi, &fi)| {
                let r = yi - fi;
                objective += super::check_loss(r, tau);
                // observations on the fitted hyperplane count as not below it
                if r < -tol {
                    tau - 1.0
                } else {
                    tau
                }
            })
            .collect();
        RankScoreNull {
            tau,
            scores,
            objective,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Rank scores `a_i = τ - I(y_i < fitted_i)`.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Minimised check loss of the null model (the `Ṽ(τ)` of R^Q).
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Test statistic `T` for an already residualized SNP `z*`.
    pub fn statistic(&self, z_star: &ResidualizedSnp) -> f64 {
        let s = dot(&z_star.values, &self.scores);
        s * s / (self.tau * (1.0 - self.tau) * z_star.sum_sq)
    }

    pub fn pvalue(&self, z_star: &ResidualizedSnp) -> f64 {
        chi2_1_upper(self.statistic(z_star)).max(f64::MIN_POSITIVE)
    }
}

/// A SNP column residualized on `[1 | C]` by least squares.
#[derive(Debug, Clone)]
pub struct ResidualizedSnp {
    values: Vec<f64>,
    sum_sq: f64,
}

impl ResidualizedSnp {
    pub fn new(basis: &OrthoBasis, z: &[f64]) -> Result<Self> {
        let values = basis.residualize(z);
        let sum_sq = dot(&values, &values);
        if !(sum_sq > 1e-12 * dot(z, z)) {
            return Err(Error::CollinearSnp);
        }
        Ok(ResidualizedSnp { values, sum_sq })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Orthonormal basis of `[1 | C]`.
pub fn covariate_basis(covariates: &DMatrix<f64>, n: usize) -> OrthoBasis {
    let ones = vec![1.0; n];
    let cols = std::iter::once(ones.as_slice())
        .chain((0..covariates.ncols()).map(|j| crate::linalg::column(covariates, j)));
    OrthoBasis::from_columns(cols)
}

/// Rank-score p-value for the effect of `z` on the τ-quantile of `y`.
pub fn rank_score_test(y: &[f64], z: &[f64], covariates: &DMatrix<f64>, tau: f64) -> Result<f64> {
    if z.len() != y.len() || covariates.nrows() != y.len() {
        return Err(Error::invalid("rank-score inputs have different lengths"));
    }
    crate::linalg::check_finite(z, "SNP column")?;
    let z_star = ResidualizedSnp::new(&covariate_basis(covariates, y.len()), z)?;
    Ok(RankScoreNull::new(y, covariates, tau)?.pvalue(&z_star))
}

/// Cauchy combination of rank-score tests at the region's screening levels.
pub fn screen_pvalue(
    y: &[f64],
    z: &[f64],
    covariates: &DMatrix<f64>,
    region: &Region,
) -> Result<f64> {
    if z.len() != y.len() || covariates.nrows() != y.len() {
        return Err(Error::invalid("rank-score inputs have different lengths"));
    }
    crate::linalg::check_finite(z, "SNP column")?;
    let z_star = ResidualizedSnp::new(&covariate_basis(covariates, y.len()), z)?;
    let nulls = RankScoreNull::for_levels(y, covariates, &region.screen_levels())?;
    let ps: Vec<f64> = nulls.iter().map(|m| m.pvalue(&z_star)).collect();
    cauchy_combine(&ps)
}
