//! Quantile-process transcriptome-wide association testing.
//!
//! The pipeline has two halves. Training fits a quantile regression process of
//! gene expression on screened cis-SNPs and condenses it into per-region
//! effect vectors ([`GeneModel`]). Testing combines those vectors with GWAS
//! summary z-scores into region-stratified gene-trait z-scores and aggregates
//! the resulting p-values with the Cauchy combination rule.
//!
//! A linear elastic-net comparator and a Monte-Carlo harness live alongside.

pub mod association;
pub mod baseline;
pub mod error;
pub mod expression;
pub mod io;
pub mod linalg;
pub mod quantreg;
pub mod rng;
pub mod screening;
pub mod simulation;
pub mod types;

pub use association::{cauchy_combine, linear_test_gene, region_z, test_gene, RegionTest};
pub use baseline::{fit_elastic_net, ElasticNetFit, LinearGeneModel};
pub use error::{Error, Result};
pub use expression::{train_gene, GeneTrainer, SigmaEstimator, TrainOptions};
pub use quantreg::{fit_process, fit_qr, r_q, rank_score_test, Design, QrFit, QuantileProcessFit};
pub use rng::{rng_from_seed, SimRng};
pub use screening::{bh_fdr, prune_correlated, screen_gene, ScreenOptions, ScreenResult};
pub use simulation::{run_experiment, ErrorDist, ExperimentReport, ExpressionModel, SimConfig};
pub use types::{
    AssociationResult, DosagePanel, GeneModel, GenotypePanel, Genotypes, GwasRecord, GwasSummary,
    PartitionResult, QuantileGrid, Region, RegionModel, RegionPartition, RegionResult,
    RegionStatus, SnpMeta,
};
