//! Synthetic genotypes, expression and GWAS summary statistics.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::{ErrorDist, ExpressionModel, SimConfig};
use crate::error::{Error, Result};
use crate::linalg::{column, dot, OrthoBasis};
use crate::types::{GenotypePanel, GwasRecord, GwasSummary, MIN_MAF};

/// Largest absolute value kept from a Cauchy draw.
pub const CAUCHY_CLAMP: f64 = 1e6;
const MAX_PANEL_ATTEMPTS: usize = 100;

/// Population-level quantities shared by the training and GWAS samples of
/// one simulated gene.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneLayout {
    pub maf: Vec<f64>,
    /// Indices of causal SNPs, ascending.
    pub causal: Vec<usize>,
    /// Covariate effects on expression.
    pub alpha: Vec<f64>,
    /// Covariate effects on the trait.
    pub eta: Vec<f64>,
}

impl GeneLayout {
    pub fn draw(config: &SimConfig, rng: &mut impl Rng) -> Self {
        let p = config.p_snps;
        let maf = (0..p).map(|_| rng.random_range(0.05..0.5)).collect();
        let mut causal = sample(rng, p, config.n_causal()).into_vec();
        causal.sort_unstable();
        let alpha = (0..config.n_covariates)
            .map(|_| rng.random::<f64>())
            .collect();
        let eta = (0..config.n_covariates)
            .map(|_| rng.random::<f64>())
            .collect();
        GeneLayout {
            maf,
            causal,
            alpha,
            eta,
        }
    }

    pub fn snp_id(j: usize) -> String {
        format!("snp{j:04}")
    }
}

/// Genotype panel with AR(ρ) latent-Gaussian LD blocks thresholded to
/// Binomial(2, maf) marginals, plus i.i.d. N(0,1) covariates.
///
/// Panels in which a SNP happens to fall below the MAF filter are redrawn.
pub fn gen_genotypes(
    n: usize,
    layout: &GeneLayout,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<GenotypePanel> {
    let p = layout.maf.len();
    let std = StdNormal::new(0.0, 1.0).unwrap();
    // latent cut points for P(0) = (1-f)², P(≤1) = 1 - f²
    let cuts: Vec<(f64, f64)> = layout
        .maf
        .iter()
        .map(|&f| {
            (
                std.inverse_cdf((1.0 - f) * (1.0 - f)),
                std.inverse_cdf(1.0 - f * f),
            )
        })
        .collect();
    let rho = config.ld_rho;
    let innov = (1.0 - rho * rho).sqrt();
    for _ in 0..MAX_PANEL_ATTEMPTS {
        let mut dos = DMatrix::zeros(n, p);
        for i in 0..n {
            let mut latent = 0.0;
            for j in 0..p {
                let e: f64 = rng.sample(StandardNormal);
                latent = if j % config.ld_block_size == 0 {
                    e
                } else {
                    rho * latent + innov * e
                };
                let (c0, c1) = cuts[j];
                dos[(i, j)] = if latent < c0 {
                    0.0
                } else if latent < c1 {
                    1.0
                } else {
                    2.0
                };
            }
        }
        let cov = DMatrix::from_fn(n, config.n_covariates, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let ok = (0..p).all(|j| {
            let f = column(&dos, j).iter().sum::<f64>() / (2.0 * n as f64);
            f.min(1.0 - f) >= MIN_MAF
        });
        if ok {
            return GenotypePanel::new(
                (0..n).map(|i| format!("ind{i}")).collect(),
                (0..p).map(|j| (GeneLayout::snp_id(j), j as u64)).collect(),
                dos,
                cov,
            );
        }
    }
    Err(Error::invalid(
        "could not draw a genotype panel passing the MAF filter; increase n",
    ))
}

fn draw_error(dist: ErrorDist, rng: &mut impl Rng) -> f64 {
    match dist {
        ErrorDist::Normal => rng.sample(StandardNormal),
        ErrorDist::Cauchy => error_quantile(dist, rng.random::<f64>()),
    }
}

/// `F⁻¹(u)` of the error distribution (Cauchy clamped to `±CAUCHY_CLAMP`).
pub fn error_quantile(dist: ErrorDist, u: f64) -> f64 {
    let u = u.clamp(1e-300, 1.0 - 1e-16);
    match dist {
        ErrorDist::Normal => StdNormal::new(0.0, 1.0).unwrap().inverse_cdf(u),
        ErrorDist::Cauchy => (std::f64::consts::PI * (u - 0.5))
            .tan()
            .clamp(-CAUCHY_CLAMP, CAUCHY_CLAMP),
    }
}

/// Genetic score `Zᵀβ` with `β = effect` on the causal SNPs.
pub fn genetic_score(panel: &GenotypePanel, causal: &[usize], effect: f64) -> Vec<f64> {
    let mut s = vec![0.0; panel.n_individuals()];
    for &j in causal {
        for (si, z) in s.iter_mut().zip(panel.dosage_column(j)) {
            *si += effect * z;
        }
    }
    s
}

fn covariate_term(panel: &GenotypePanel, coefs: &[f64]) -> Vec<f64> {
    let c = panel.covariates();
    (0..panel.n_individuals())
        .map(|i| coefs.iter().enumerate().map(|(k, a)| c[(i, k)] * a).sum())
        .collect()
}

/// Expression under the configured genotype-expression model.
pub fn gen_expression(
    panel: &GenotypePanel,
    layout: &GeneLayout,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let g = genetic_score(panel, &layout.causal, config.beta);
    let ca = covariate_term(panel, &layout.alpha);
    let dist = config.error;
    let env = Normal::new(3.0, 1.0).unwrap();
    let env2 = Normal::new(1.0, 1.0).unwrap();
    (0..panel.n_individuals())
        .map(|i| {
            let (g, c) = (g[i], ca[i]);
            match config.model {
                ExpressionModel::Null | ExpressionModel::LocationShift => {
                    g + c + draw_error(dist, rng)
                }
                ExpressionModel::LocationScale => g + c + (1.0 + 0.5 * g) * draw_error(dist, rng),
                ExpressionModel::LocalSignal => {
                    let u: f64 = rng.random();
                    let local = if u > 0.7 { 5.0 * (u - 0.7) / 0.3 } else { 0.0 };
                    c + error_quantile(dist, u) + local * g
                }
                ExpressionModel::SqrtTau => {
                    let u: f64 = rng.random();
                    c + error_quantile(dist, u) + u.sqrt() * g
                }
                ExpressionModel::SinTau => {
                    let u: f64 = rng.random();
                    c + error_quantile(dist, u) + (2.0 * std::f64::consts::PI * u).sin() * g
                }
                ExpressionModel::Gei1 => {
                    let w = env.sample(rng);
                    g + c - w * g + draw_error(dist, rng)
                }
                ExpressionModel::Gei2 => {
                    let w = env.sample(rng);
                    g + c + w * g + draw_error(dist, rng)
                }
                ExpressionModel::Gei3 => {
                    let w = env.sample(rng);
                    let w2 = env2.sample(rng);
                    g + c + w * w2 * g + draw_error(dist, rng)
                }
            }
        })
        .collect()
}

/// GWAS sample with SNP columns residualized on `[1 | C]` once, so each
/// simulated trait costs one residualization plus one dot product per SNP.
pub struct GwasSampler {
    panel: GenotypePanel,
    basis: OrthoBasis,
    z_star: Vec<Vec<f64>>,
    z_ss: Vec<f64>,
    genetic: Vec<f64>,
    covariate: Vec<f64>,
}

impl GwasSampler {
    pub fn new(panel: GenotypePanel, layout: &GeneLayout, beta_gwas: f64) -> Result<Self> {
        let n = panel.n_individuals();
        let basis = crate::quantreg::covariate_basis(panel.covariates(), n);
        let z_star: Vec<Vec<f64>> = (0..panel.n_snps())
            .map(|j| basis.residualize(panel.dosage_column(j)))
            .collect();
        let z_ss: Vec<f64> = z_star.iter().map(|z| dot(z, z)).collect();
        if z_ss.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::CollinearSnp);
        }
        Ok(GwasSampler {
            genetic: genetic_score(&panel, &layout.causal, beta_gwas),
            covariate: covariate_term(&panel, &layout.eta),
            panel,
            basis,
            z_star,
            z_ss,
        })
    }

    pub fn panel(&self) -> &GenotypePanel {
        &self.panel
    }

    /// One trait `Y = Zᵀβ_GWAS + Cᵀη + e`, e ~ N(0,1).
    pub fn trait_values(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.genetic
            .iter()
            .zip(&self.covariate)
            .map(|(g, c)| g + c + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Marginal OLS of `y` on `[1, C, z_j]` for every SNP.
    pub fn summarize(&self, y: &[f64]) -> Result<GwasSummary> {
        let n = y.len();
        let y_star = self.basis.residualize(y);
        let yy = dot(&y_star, &y_star);
        let df = (n - self.basis.rank() - 1) as f64;
        let records = (0..self.panel.n_snps())
            .map(|j| {
                let b = dot(&self.z_star[j], &y_star) / self.z_ss[j];
                let rss = (yy - b * b * self.z_ss[j]).max(0.0);
                let se = (rss / df / self.z_ss[j]).sqrt();
                GwasRecord::new(self.panel.snps()[j].id.clone(), b, se, n as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        GwasSummary::new(records)
    }

    pub fn gen_summary(&self, rng: &mut impl Rng) -> Result<GwasSummary> {
        self.summarize(&self.trait_values(rng))
    }
}

/// Summary statistics for one simulated trait on `panel`.
pub fn gen_gwas_summary(
    panel: GenotypePanel,
    layout: &GeneLayout,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<GwasSummary> {
    GwasSampler::new(panel, layout, config.effective_beta_gwas())?.gen_summary(rng)
}
