//! Monte-Carlo harness: synthetic genes, both pipelines end to end, and
//! rejection-rate tables.

mod generators;

pub use generators::{
    error_quantile, gen_expression, gen_genotypes, gen_gwas_summary, genetic_score, GeneLayout,
    GwasSampler, CAUCHY_CLAMP,
};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{linear_test_gene, test_gene};
use crate::baseline::{ElasticNetOptions, LinearGeneModel};
use crate::error::{Error, Result};
use crate::expression::{GeneTrainer, TrainOptions};
use crate::linalg::first_canonical_correlation;
use crate::rng::{stream, SimRng};
use crate::types::{GenotypePanel, GwasSummary, RegionPartition};

/// Canonical correlation above which a selected set counts as recovering
/// the causal set.
pub const CANONICAL_THRESHOLD: f64 = 0.95;

/// Partition used for per-region power and screening summaries.
pub const REPORT_K: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpressionModel {
    Null,
    LocationShift,
    LocationScale,
    LocalSignal,
    SqrtTau,
    SinTau,
    Gei1,
    Gei2,
    Gei3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    Cauchy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_train: usize,
    pub n_gwas: usize,
    pub p_snps: usize,
    pub causal_fraction: f64,
    /// Lag-one autocorrelation of the latent Gaussian within an LD block.
    pub ld_rho: f64,
    pub ld_block_size: usize,
    pub n_covariates: usize,
    pub model: ExpressionModel,
    pub error: ErrorDist,
    /// Causal eQTL effect; the amplitude `b` for the quantile-effect models.
    pub beta: f64,
    /// Causal SNP-trait effect; ignored (taken as 0) under the null model.
    pub beta_gwas: f64,
    pub replicates: usize,
    /// GWAS traits simulated per trained gene.
    pub traits_per_gene: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub partitions: Vec<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_train: 670,
            n_gwas: 1000,
            p_snps: 200,
            causal_fraction: 0.01,
            ld_rho: 0.5,
            ld_block_size: 20,
            n_covariates: 5,
            model: ExpressionModel::LocationShift,
            error: ErrorDist::Normal,
            beta: 0.2,
            beta_gwas: 0.1,
            replicates: 100,
            traits_per_gene: 1,
            alphas: vec![0.05, 1e-2, 1e-3, 1e-4, 1e-5, 2.5e-6],
            seed: 1,
            partitions: vec![3, 4, 5, 9],
        }
    }
}

impl SimConfig {
    /// Defaults with the effect sizes used for `model` in the original
    /// experiments (quantile-effect and GEI models use amplitude 1 / 0.1).
    pub fn for_model(model: ExpressionModel) -> Self {
        let (beta, beta_gwas) = match model {
            ExpressionModel::Null => (0.2, 0.0),
            ExpressionModel::LocationShift => (0.2, 0.1),
            ExpressionModel::LocationScale => (0.4, 0.2),
            ExpressionModel::LocalSignal => (2.0, 1.0),
            ExpressionModel::SqrtTau | ExpressionModel::SinTau => (1.0, 0.1),
            ExpressionModel::Gei1 | ExpressionModel::Gei2 | ExpressionModel::Gei3 => (0.2, 0.1),
        };
        SimConfig {
            model,
            beta,
            beta_gwas,
            ..SimConfig::default()
        }
    }

    /// Desk-scale sizes: 400 training samples, 1000 GWAS samples, 200 SNPs.
    pub fn desk(model: ExpressionModel) -> Self {
        SimConfig {
            n_train: 400,
            ..SimConfig::for_model(model)
        }
    }

    pub fn n_causal(&self) -> usize {
        (self.causal_fraction * self.p_snps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("simulation config: {m}")));
        if self.p_snps == 0 || self.n_causal() < 1 || self.n_causal() > self.p_snps {
            return bad("causal_fraction * p_snps must round to between 1 and p_snps");
        }
        if !(0.0..1.0).contains(&self.ld_rho.abs()) || self.ld_block_size == 0 {
            return bad("ld_rho must lie in (-1, 1) and ld_block_size be positive");
        }
        if self.n_train < self.n_covariates + 10 || self.n_gwas < self.n_covariates + 10 {
            return bad("sample sizes too small for the covariates");
        }
        if !self.beta.is_finite() || !self.beta_gwas.is_finite() {
            return bad("effect sizes must be finite");
        }
        if self.replicates == 0 || self.traits_per_gene == 0 {
            return bad("replicates and traits_per_gene must be positive");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("alphas must lie in (0, 1)");
        }
        if self.partitions.is_empty() {
            return bad("at least one partition is required");
        }
        for &k in &self.partitions {
            RegionPartition::catalogue(k)?;
        }
        Ok(())
    }

    fn effective_beta_gwas(&self) -> f64 {
        if self.model == ExpressionModel::Null {
            0.0
        } else {
            self.beta_gwas
        }
    }
}

/// One gene-trait test of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub replicate: usize,
    pub trait_index: usize,
    pub linear_p: f64,
    pub linear_fallback: bool,
    /// Per configured partition, in config order.
    pub partition_p: Vec<f64>,
    /// Per region of the `REPORT_K` partition; `None` when the region was not testable.
    pub region_p: Vec<Option<f64>>,
    pub unified_p: f64,
    pub unified_fallback: bool,
}

/// Screening outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub replicate: usize,
    /// Largest canonical correlation with the causal set, per `REPORT_K` region.
    pub region_cc: Vec<f64>,
    pub linear_cc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRates {
    pub method: String,
    /// Rejection rate at each configured alpha.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub n_tests: usize,
    /// `linear`, `unified`, then `K=k` per partition.
    pub rejection: Vec<MethodRates>,
    /// Rejection rates per region of the `REPORT_K` partition.
    pub region_power: Vec<MethodRates>,
    /// Per alpha, the share of unified rejections also significant in at
    /// least two partitions; `None` when nothing was rejected.
    pub confirmed_by_two: Vec<Option<f64>>,
    /// Share of replicates whose selected set reaches canonical correlation
    /// above the threshold, per `REPORT_K` region.
    pub region_selection: Vec<f64>,
    pub linear_selection: f64,
    pub linear_fallback_rate: f64,
    pub unified_fallback_rate: f64,
    pub tests: Vec<TestRecord>,
    pub screens: Vec<ScreenRecord>,
}

impl ExperimentReport {
    pub fn rates(&self, method: &str) -> Option<&[f64]> {
        self.rejection
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.rates.as_slice())
    }

    /// Rejection rate of `method` at `alpha` (which must be a configured level).
    pub fn rate(&self, method: &str, alpha: f64) -> Option<f64> {
        let i = self.config.alphas.iter().position(|&a| a == alpha)?;
        self.rates(method).map(|r| r[i])
    }
}

/// Outcome of one replicate before aggregation.
struct Replicate {
    tests: Vec<TestRecord>,
    screen: ScreenRecord,
}

fn columns(panel: &GenotypePanel, ids: &[String]) -> Result<Vec<Vec<f64>>> {
    Ok(panel
        .indices_of(ids)?
        .into_iter()
        .map(|j| panel.dosage_column(j).to_vec())
        .collect())
}

/// Simulated data of one replicate: the gene layout, the training sample
/// and a GWAS sampler sharing its allele frequencies.
pub struct ReplicateData {
    pub replicate: usize,
    pub layout: GeneLayout,
    pub train: GenotypePanel,
    pub expression: Vec<f64>,
    pub gwas: GwasSampler,
    rng: SimRng,
}

impl ReplicateData {
    /// Draws replicate `r` from its own stream.
    pub fn generate(config: &SimConfig, r: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "replicate", r as u64);
        let layout = GeneLayout::draw(config, &mut rng);
        let train = gen_genotypes(config.n_train, &layout, config, &mut rng)?;
        let expression = gen_expression(&train, &layout, config, &mut rng);
        let gwas_panel = gen_genotypes(config.n_gwas, &layout, config, &mut rng)?;
        let gwas = GwasSampler::new(gwas_panel, &layout, config.effective_beta_gwas())?;
        Ok(ReplicateData {
            replicate: r,
            layout,
            train,
            expression,
            gwas,
            rng,
        })
    }

    pub fn gene_id(&self) -> String {
        format!("gene{:06}", self.replicate)
    }

    /// Summary statistics of the next simulated trait.
    pub fn next_summary(&mut self) -> Result<GwasSummary> {
        self.gwas.gen_summary(&mut self.rng)
    }
}

fn run_replicate(
    config: &SimConfig,
    partitions: &[RegionPartition],
    r: usize,
) -> Result<Replicate> {
    let mut data = ReplicateData::generate(config, r)?;
    let (layout, train, expression) = (&data.layout, &data.train, &data.expression);
    let gene_id = data.gene_id();
    let trained = GeneTrainer::new(train, expression, partitions, TrainOptions::default())?
        .train(&gene_id)?;
    let linear = LinearGeneModel::train(
        train,
        expression,
        &gene_id,
        config.seed,
        &ElasticNetOptions::default(),
    )?;

    let causal: Vec<Vec<f64>> = layout
        .causal
        .iter()
        .map(|&j| train.dosage_column(j).to_vec())
        .collect();
    let k_pos = config.partitions.iter().position(|&k| k == REPORT_K);
    let region_cc = match k_pos {
        Some(i) => trained.screens[i]
            .iter()
            .map(|s| {
                Ok(first_canonical_correlation(
                    &columns(train, &s.pruned_selected)?,
                    &causal,
                ))
            })
            .collect::<Result<Vec<f64>>>()?,
        None => Vec::new(),
    };
    let screen = ScreenRecord {
        replicate: r,
        region_cc,
        linear_cc: first_canonical_correlation(&columns(train, &linear.snps)?, &causal),
    };

    let mut tests = Vec::with_capacity(config.traits_per_gene);
    for t in 0..config.traits_per_gene {
        let summary = data.next_summary()?;
        let index = (r * config.traits_per_gene + t) as u64;
        let qtwas = test_gene(
            &trained.models,
            &summary,
            &mut stream(config.seed, "fallback", index),
        )?;
        let (linear_p, linear_fallback) = match linear_test_gene(&linear, &summary) {
            Ok(p) => (p, false),
            Err(Error::Untestable(_)) => (
                stream(config.seed, "linear_fallback", index).random::<f64>(),
                true,
            ),
            Err(e) => return Err(e),
        };
        let region_p = match k_pos {
            Some(i) => qtwas.partitions[i].regions.iter().map(|x| x.p).collect(),
            None => Vec::new(),
        };
        tests.push(TestRecord {
            replicate: r,
            trait_index: t,
            linear_p,
            linear_fallback,
            partition_p: qtwas.partitions.iter().map(|p| p.partition_p).collect(),
            region_p,
            unified_p: qtwas.unified_p,
            unified_fallback: qtwas.fallback,
        });
    }
    Ok(Replicate { tests, screen })
}

fn rate(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

fn rates_of(
    tests: &[TestRecord],
    alphas: &[f64],
    p: impl Fn(&TestRecord) -> Option<f64>,
) -> Vec<f64> {
    alphas
        .iter()
        .map(|&a| {
            rate(
                tests
                    .iter()
                    .filter(|t| p(t).is_some_and(|p| p <= a))
                    .count(),
                tests.len(),
            )
        })
        .collect()
}

/// Runs every replicate and tabulates rejection rates.
///
/// Each replicate draws from its own stream keyed by `(seed, replicate)`,
/// so the report does not depend on the number of worker threads.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let partitions = config
        .partitions
        .iter()
        .map(|&k| RegionPartition::catalogue(k))
        .collect::<Result<Vec<_>>>()?;
    let replicates = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &partitions, r))
        .collect::<Result<Vec<_>>>()?;
    let mut tests = Vec::with_capacity(config.replicates * config.traits_per_gene);
    let mut screens = Vec::with_capacity(config.replicates);
    for rep in replicates {
        tests.extend(rep.tests);
        screens.push(rep.screen);
    }
    let alphas = &config.alphas;

    let mut rejection = vec![
        MethodRates {
            method: "linear".into(),
            rates: rates_of(&tests, alphas, |t| Some(t.linear_p)),
        },
        MethodRates {
            method: "unified".into(),
            rates: rates_of(&tests, alphas, |t| Some(t.unified_p)),
        },
    ];
    for (i, k) in config.partitions.iter().enumerate() {
        rejection.push(MethodRates {
            method: format!("K={k}"),
            rates: rates_of(&tests, alphas, |t| Some(t.partition_p[i])),
        });
    }
    let n_regions = screens.first().map_or(0, |s| s.region_cc.len());
    let region_power = (0..n_regions)
        .map(|j| MethodRates {
            method: format!("A{}", j + 1),
            rates: rates_of(&tests, alphas, |t| t.region_p[j]),
        })
        .collect();
    let confirmed_by_two = alphas
        .iter()
        .map(|&a| {
            let hits: Vec<&TestRecord> = tests.iter().filter(|t| t.unified_p <= a).collect();
            if hits.is_empty() {
                return None;
            }
            let confirmed = hits
                .iter()
                .filter(|t| t.partition_p.iter().filter(|&&p| p <= a).count() >= 2)
                .count();
            Some(rate(confirmed, hits.len()))
        })
        .collect();
    let selected = |cc: f64| cc > CANONICAL_THRESHOLD;
    let region_selection = (0..n_regions)
        .map(|j| {
            rate(
                screens.iter().filter(|s| selected(s.region_cc[j])).count(),
                screens.len(),
            )
        })
        .collect();

    Ok(ExperimentReport {
        n_tests: tests.len(),
        rejection,
        region_power,
        confirmed_by_two,
        region_selection,
        linear_selection: rate(
            screens.iter().filter(|s| selected(s.linear_cc)).count(),
            screens.len(),
        ),
        linear_fallback_rate: rate(
            tests.iter().filter(|t| t.linear_fallback).count(),
            tests.len(),
        ),
        unified_fallback_rate: rate(
            tests.iter().filter(|t| t.unified_fallback).count(),
            tests.len(),
        ),
        config: config.clone(),
        tests,
        screens,
    })
}
