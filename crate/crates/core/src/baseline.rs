//! Elastic-net expression model used by the linear TWAS comparator.
//!
//! The objective is
//! `(1/2n)‖y - b₀ - Xw‖² + λ((1-α)/2 ‖w‖² + α‖w‖₁)`, minimised by cyclic
//! coordinate descent in covariance form along a geometric λ path, with λ
//! chosen by K-fold cross-validation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expression::estimate_ld;
use crate::linalg::{column, dot, mean, sample_sd, OrthoBasis};
use crate::rng::stream;
use crate::types::GenotypePanel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticNetOptions {
    pub alpha_mix: f64,
    pub n_lambda: usize,
    /// Smallest λ as a fraction of `λ_max`.
    pub lambda_min_ratio: f64,
    pub n_folds: usize,
    /// Sweeps stop once `max_j (1/n)‖x̃_j‖² Δw_j²` falls below `tol · var(y)`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        ElasticNetOptions {
            alpha_mix: 0.5,
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
            n_folds: 5,
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetFit {
    /// Coefficients on the scale of the supplied columns; zero off the active set.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub alpha_mix: f64,
    /// Index of the selected λ on the path (0 is `λ_max`).
    pub lambda_index: usize,
    pub lambda_path: Vec<f64>,
    /// Mean held-out squared error at each λ; empty when the path was skipped.
    pub cv_error: Vec<f64>,
}

impl ElasticNetFit {
    pub fn is_empty(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

/// Coordinate descent state over a row subset, in covariance form.
struct CdProblem<'a> {
    x: &'a DMatrix<f64>,
    rows: Vec<usize>,
    x_mean: Vec<f64>,
    y_mean: f64,
    y_var: f64,
    /// `(1/n) x̃_jᵀ ỹ` on centred data.
    xty: Vec<f64>,
    diag: Vec<f64>,
    /// Centred columns restricted to `rows`, stored contiguously.
    centred: Vec<Vec<f64>>,
    gram: Vec<Option<Vec<f64>>>,
}

impl<'a> CdProblem<'a> {
    fn new(x: &'a DMatrix<f64>, y: &[f64], rows: Vec<usize>) -> Self {
        let n = rows.len() as f64;
        let p = x.ncols();
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
        let y_var = rows.iter().map(|&i| (y[i] - y_mean).powi(2)).sum::<f64>() / n;
        let mut x_mean = vec![0.0; p];
        let mut xty = vec![0.0; p];
        let mut diag = vec![0.0; p];
        let mut centred = Vec::with_capacity(p);
        for j in 0..p {
            let c = column(x, j);
            let m = rows.iter().map(|&i| c[i]).sum::<f64>() / n;
            let xc: Vec<f64> = rows.iter().map(|&i| c[i] - m).collect();
            x_mean[j] = m;
            xty[j] = rows
                .iter()
                .zip(&xc)
                .map(|(&i, v)| v * (y[i] - y_mean))
                .sum::<f64>()
                / n;
            diag[j] = xc.iter().map(|v| v * v).sum::<f64>() / n;
            centred.push(xc);
        }
        CdProblem {
            x,
            rows,
            x_mean,
            y_mean,
            y_var,
            xty,
            diag,
            centred,
            gram: vec![None; p],
        }
    }

    fn gram_column(&mut self, k: usize) -> &[f64] {
        if self.gram[k].is_none() {
            let n = self.rows.len() as f64;
            let xk = &self.centred[k];
            let col = self.centred.iter().map(|xj| dot(xj, xk) / n).collect();
            self.gram[k] = Some(col);
        }
        self.gram[k].as_deref().unwrap()
    }

    fn lambda_max(&self, alpha: f64) -> f64 {
        self.xty.iter().fold(0.0f64, |m, v| m.max(v.abs())) / alpha.max(1e-3)
    }

    /// One cyclic pass over `coords`; returns the largest weighted squared change.
    fn sweep(
        &mut self,
        coords: &[usize],
        w: &mut [f64],
        grad: &mut [f64],
        l1: f64,
        l2: f64,
    ) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in coords {
            if self.diag[j] == 0.0 {
                continue;
            }
            let u = grad[j] + self.diag[j] * w[j];
            let new = soft_threshold(u, l1) / (self.diag[j] + l2);
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                let g = self.gram_column(j);
                for (gi, gk) in grad.iter_mut().zip(g) {
                    *gi -= gk * delta;
                }
                max_delta = max_delta.max(self.diag[j] * delta * delta);
            }
        }
        max_delta
    }

    /// Solves at each λ in turn, warm-starting from the previous solution.
    /// Full sweeps alternate with sweeps restricted to the active set until a
    /// full sweep changes nothing beyond the threshold.
    fn path(&mut self, lambdas: &[f64], opts: &ElasticNetOptions) -> Result<Vec<Vec<f64>>> {
        let p = self.x.ncols();
        let alpha = opts.alpha_mix;
        let all: Vec<usize> = (0..p).collect();
        let thresh = opts.tol * self.y_var;
        let mut w = vec![0.0; p];
        // grad_j = (1/n) x̃_jᵀ (ỹ - X̃w)
        let mut grad = self.xty.clone();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let l1 = lambda * alpha;
            let l2 = lambda * (1.0 - alpha);
            let mut sweeps = 0;
            loop {
                let full = self.sweep(&all, &mut w, &mut grad, l1, l2);
                sweeps += 1;
                if full <= thresh {
                    break;
                }
                let active: Vec<usize> = (0..p).filter(|&j| w[j] != 0.0).collect();
                loop {
                    let d = self.sweep(&active, &mut w, &mut grad, l1, l2);
                    sweeps += 1;
                    if d <= thresh {
                        break;
                    }
                    if sweeps >= opts.max_sweeps {
                        break;
                    }
                }
                if sweeps >= opts.max_sweeps {
                    return Err(Error::Numerical(format!(
                        "coordinate descent did not converge at lambda {lambda}"
                    )));
                }
            }
            out.push(w.clone());
        }
        Ok(out)
    }

    fn intercept(&self, w: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(w).map(|(m, v)| m * v).sum::<f64>()
    }
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Geometric sequence from `λ_max` (the smallest λ with all weights zero)
/// down to `λ_max · lambda_min_ratio`.
pub fn lambda_path(y: &[f64], x: &DMatrix<f64>, opts: &ElasticNetOptions) -> Vec<f64> {
    let prob = CdProblem::new(x, y, (0..y.len()).collect());
    geometric_path(prob.lambda_max(opts.alpha_mix), opts)
}

fn geometric_path(lambda_max: f64, opts: &ElasticNetOptions) -> Vec<f64> {
    if opts.n_lambda == 1 {
        return vec![lambda_max];
    }
    let step = opts.lambda_min_ratio.ln() / (opts.n_lambda - 1) as f64;
    (0..opts.n_lambda)
        .map(|k| lambda_max * (step * k as f64).exp())
        .collect()
}

/// Solutions `(intercept, weights)` along an explicit λ sequence.
pub fn fit_path(
    y: &[f64],
    x: &DMatrix<f64>,
    lambdas: &[f64],
    opts: &ElasticNetOptions,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_inputs(y, x, opts)?;
    let mut prob = CdProblem::new(x, y, (0..y.len()).collect());
    let ws = prob.path(lambdas, opts)?;
    Ok(ws.into_iter().map(|w| (prob.intercept(&w), w)).collect())
}

fn check_inputs(y: &[f64], x: &DMatrix<f64>, opts: &ElasticNetOptions) -> Result<()> {
    if y.len() < 3 {
        return Err(Error::invalid("elastic net needs at least 3 observations"));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid("response and design have different lengths"));
    }
    if !(opts.alpha_mix > 0.0 && opts.alpha_mix <= 1.0) {
        return Err(Error::invalid("alpha_mix must lie in (0,1]"));
    }
    crate::linalg::check_finite(y, "response")?;
    crate::linalg::check_finite(x.as_slice(), "design")
}

/// Balanced random assignment of `n` observations to `k` folds.
pub fn fold_assignment(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut f: Vec<usize> = (0..n).map(|i| i % k).collect();
    f.shuffle(rng);
    f
}

/// Elastic net with λ chosen by minimum cross-validated squared error.
///
/// `folds[i]` names the held-out fold of observation `i`. Ties in CV error go
/// to the larger λ.
pub fn fit_elastic_net(
    y: &[f64],
    x: &DMatrix<f64>,
    folds: &[usize],
    opts: &ElasticNetOptions,
) -> Result<ElasticNetFit> {
    check_inputs(y, x, opts)?;
    if folds.len() != y.len() {
        return Err(Error::invalid("fold vector length differs from response"));
    }
    let n_folds = folds.iter().max().map_or(0, |m| m + 1);
    if n_folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    let n = y.len();
    let mut full = CdProblem::new(x, y, (0..n).collect());
    let lambda_max = full.lambda_max(opts.alpha_mix);
    let lambdas = geometric_path(lambda_max, opts);
    if lambda_max <= 1e-10 * crate::linalg::sample_sd(y) {
        // no column carries signal; every λ yields the empty model
        return Ok(ElasticNetFit {
            weights: vec![0.0; x.ncols()],
            intercept: full.y_mean,
            lambda: lambdas[0],
            alpha_mix: opts.alpha_mix,
            lambda_index: 0,
            cv_error: Vec::new(),
            lambda_path: lambdas,
        });
    }

    let mut sse = vec![0.0; lambdas.len()];
    for f in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        if train.len() < 2 || test.is_empty() {
            return Err(Error::invalid(format!(
                "fold {f} leaves too few observations"
            )));
        }
        let mut prob = CdProblem::new(x, y, train);
        for (l, w) in prob.path(&lambdas, opts)?.iter().enumerate() {
            let b0 = prob.intercept(w);
            for &i in &test {
                let pred = b0 + (0..x.ncols()).map(|j| x[(i, j)] * w[j]).sum::<f64>();
                sse[l] += (y[i] - pred).powi(2);
            }
        }
    }
    let cv_error: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut best = 0;
    for (l, &e) in cv_error.iter().enumerate() {
        if e < cv_error[best] * (1.0 - 1e-12) {
            best = l;
        }
    }
    let w = full.path(&lambdas[..=best], opts)?.pop().unwrap();
    Ok(ElasticNetFit {
        intercept: full.intercept(&w),
        weights: w,
        lambda: lambdas[best],
        alpha_mix: opts.alpha_mix,
        lambda_index: best,
        lambda_path: lambdas,
        cv_error,
    })
}

/// Linear expression model over a gene's SNPs, weights on the dosage scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGeneModel {
    pub gene_id: String,
    /// SNPs with nonzero weight.
    pub snps: Vec<String>,
    pub weights: Vec<f64>,
    pub snp_sd: Vec<f64>,
    pub ld: Vec<Vec<f64>>,
}

impl LinearGeneModel {
    pub fn is_testable(&self) -> bool {
        !self.snps.is_empty()
    }

    /// Trains on all panel SNPs. Expression is first residualized on the
    /// covariates; SNP columns are standardized for fitting and the weights
    /// mapped back to dosage units. Folds come from the gene-scoped stream.
    pub fn train(
        panel: &GenotypePanel,
        expression: &[f64],
        gene_id: &str,
        seed: u64,
        opts: &ElasticNetOptions,
    ) -> Result<Self> {
        let n = panel.n_individuals();
        if expression.len() != n {
            return Err(Error::invalid("expression length differs from panel"));
        }
        let ones = vec![1.0; n];
        let basis = OrthoBasis::from_columns(
            std::iter::once(ones.as_slice())
                .chain((0..panel.n_covariates()).map(|j| panel.covariate_column(j))),
        );
        let y = basis.residualize(expression);
        let p = panel.n_snps();
        let mut sd = vec![0.0; p];
        let mut xs = DMatrix::zeros(n, p);
        for j in 0..p {
            let c = panel.dosage_column(j);
            let m = mean(c);
            // population sd so that (1/n) x_jᵀx_j = 1
            let s = sample_sd(c) * (((n - 1) as f64) / n as f64).sqrt();
            sd[j] = s;
            for i in 0..n {
                xs[(i, j)] = if s > 0.0 { (c[i] - m) / s } else { 0.0 };
            }
        }
        let mut rng = stream(seed, &format!("folds/{gene_id}"), 0);
        let folds = fold_assignment(n, opts.n_folds, &mut rng);
        let fit = fit_elastic_net(&y, &xs, &folds, opts)?;
        let active: Vec<usize> = (0..p).filter(|&j| fit.weights[j] != 0.0).collect();
        let ids: Vec<String> = active.iter().map(|&j| panel.snps()[j].id.clone()).collect();
        let ld = if active.is_empty() {
            Vec::new()
        } else {
            estimate_ld(panel, &ids)?
        };
        Ok(LinearGeneModel {
            gene_id: gene_id.to_string(),
            weights: active.iter().map(|&j| fit.weights[j] / sd[j]).collect(),
            snp_sd: active
                .iter()
                .map(|&j| sample_sd(panel.dosage_column(j)))
                .collect(),
            snps: ids,
            ld,
        })
    }
}
