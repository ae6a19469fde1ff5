//! Shared domain types: genotype panels, quantile grids, region partitions,
//! GWAS summaries, trained gene models and association results.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::column;

/// SNPs with minor allele frequency below this are rejected.
pub const MIN_MAF: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnpMeta {
    pub id: String,
    pub position: u64,
    pub maf: f64,
}

/// Individuals × SNPs dosage matrix with optional covariates.
///
/// Immutable after construction. Dosages are stored as `f64` in a
/// column-major `n × p` matrix so SNP columns are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypePanel {
    sample_ids: Vec<String>,
    snps: Vec<SnpMeta>,
    dosages: DMatrix<f64>,
    covariates: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl GenotypePanel {
    /// Validates dosages ∈ {0,1,2}, unique SNP ids, consistent shapes and
    /// MAF ≥ 0.01 for every SNP. `covariates` may have zero columns.
    pub fn new(
        sample_ids: Vec<String>,
        snps: Vec<(String, u64)>,
        dosages: DMatrix<f64>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if dosages.nrows() != n || dosages.ncols() != snps.len() {
            return Err(Error::invalid(format!(
                "dosage matrix is {}x{}, expected {}x{}",
                dosages.nrows(),
                dosages.ncols(),
                n,
                snps.len()
            )));
        }
        if covariates.nrows() != n {
            return Err(Error::invalid(format!(
                "covariate matrix has {} rows, expected {n}",
                covariates.nrows()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        let mut index = HashMap::with_capacity(snps.len());
        let mut meta = Vec::with_capacity(snps.len());
        for (j, (id, position)) in snps.into_iter().enumerate() {
            let col = column(&dosages, j);
            if let Some(i) = col.iter().position(|&d| d != 0.0 && d != 1.0 && d != 2.0) {
                return Err(Error::invalid(format!(
                    "SNP {id}: dosage {} at individual {i} is not in {{0,1,2}}",
                    col[i]
                )));
            }
            let freq = col.iter().sum::<f64>() / (2.0 * n as f64);
            let maf = freq.min(1.0 - freq);
            if !(maf >= MIN_MAF) {
                return Err(Error::LowMaf(id, maf));
            }
            if index.insert(id.clone(), j).is_some() {
                return Err(Error::invalid(format!("duplicate SNP id {id}")));
            }
            meta.push(SnpMeta { id, position, maf });
        }
        Ok(GenotypePanel {
            sample_ids,
            snps: meta,
            dosages,
            covariates,
            index,
        })
    }

    pub fn n_individuals(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_snps(&self) -> usize {
        self.snps.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn snps(&self) -> &[SnpMeta] {
        &self.snps
    }

    pub fn snp_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn dosages(&self) -> &DMatrix<f64> {
        &self.dosages
    }

    pub fn dosage_column(&self, j: usize) -> &[f64] {
        column(&self.dosages, j)
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_column(&self, j: usize) -> &[f64] {
        column(&self.covariates, j)
    }

    /// Column indices for `ids`, failing on unknown ids.
    pub fn indices_of<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.snp_index(id.as_ref())
                    .ok_or_else(|| Error::invalid(format!("unknown SNP {}", id.as_ref())))
            })
            .collect()
    }

    /// Panel restricted to the listed SNPs (in the given order).
    pub fn select_snps<S: AsRef<str>>(&self, ids: &[S]) -> Result<GenotypePanel> {
        let idx = self.indices_of(ids)?;
        let n = self.n_individuals();
        let mut dos = DMatrix::zeros(n, idx.len());
        for (k, &j) in idx.iter().enumerate() {
            dos.column_mut(k).copy_from_slice(self.dosage_column(j));
        }
        let snps = idx
            .iter()
            .map(|&j| (self.snps[j].id.clone(), self.snps[j].position))
            .collect();
        GenotypePanel::new(self.sample_ids.clone(), snps, dos, self.covariates.clone())
    }
}

/// Read access to a genotype matrix, shared by hard-call and real-valued
/// dosage panels.
pub trait Genotypes: Sync {
    fn n_individuals(&self) -> usize;
    fn n_snps(&self) -> usize;
    fn snp_id(&self, j: usize) -> &str;
    fn snp_index(&self, id: &str) -> Option<usize>;
    fn dosage_column(&self, j: usize) -> &[f64];
    fn covariates(&self) -> &DMatrix<f64>;

    /// Column indices for `ids`, failing on unknown ids.
    fn indices_of(&self, ids: &[&str]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.snp_index(id)
                    .ok_or_else(|| Error::invalid(format!("unknown SNP {id}")))
            })
            .collect()
    }
}

impl Genotypes for GenotypePanel {
    fn n_individuals(&self) -> usize {
        self.sample_ids.len()
    }
    fn n_snps(&self) -> usize {
        self.snps.len()
    }
    fn snp_id(&self, j: usize) -> &str {
        &self.snps[j].id
    }
    fn snp_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
    fn dosage_column(&self, j: usize) -> &[f64] {
        column(&self.dosages, j)
    }
    fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }
}

/// Real-valued dosages (imputed or recoded), without the {0,1,2} and MAF
/// checks of [`GenotypePanel`]. Columns must be finite and non-constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DosagePanel {
    ids: Vec<String>,
    dosages: DMatrix<f64>,
    covariates: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl DosagePanel {
    pub fn new(ids: Vec<String>, dosages: DMatrix<f64>, covariates: DMatrix<f64>) -> Result<Self> {
        if dosages.ncols() != ids.len() || covariates.nrows() != dosages.nrows() {
            return Err(Error::invalid("dosage panel dimensions inconsistent"));
        }
        if dosages
            .iter()
            .chain(covariates.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("dosage panel"));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (j, id) in ids.iter().enumerate() {
            let c = column(&dosages, j);
            if c.iter().all(|&v| v == c[0]) {
                return Err(Error::ConstantSnp(id.clone()));
            }
            if index.insert(id.clone(), j).is_some() {
                return Err(Error::invalid(format!("duplicate SNP id {id}")));
            }
        }
        Ok(DosagePanel {
            ids,
            dosages,
            covariates,
            index,
        })
    }

    pub fn from_panel(panel: &GenotypePanel) -> Self {
        DosagePanel {
            ids: panel.snps.iter().map(|s| s.id.clone()).collect(),
            dosages: panel.dosages.clone(),
            covariates: panel.covariates.clone(),
            index: panel.index.clone(),
        }
    }

    /// Multiplies SNP `j` by `factor`.
    pub fn rescale_snp(mut self, j: usize, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor != 0.0) {
            return Err(Error::invalid("rescale factor must be finite and nonzero"));
        }
        self.dosages.column_mut(j).scale_mut(factor);
        Ok(self)
    }
}

impl Genotypes for DosagePanel {
    fn n_individuals(&self) -> usize {
        self.dosages.nrows()
    }
    fn n_snps(&self) -> usize {
        self.ids.len()
    }
    fn snp_id(&self, j: usize) -> &str {
        &self.ids[j]
    }
    fn snp_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
    fn dosage_column(&self, j: usize) -> &[f64] {
        column(&self.dosages, j)
    }
    fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }
}

/// Sorted quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

const GRID_TOL: f64 = 1e-9;

impl QuantileGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::invalid("quantile grid is empty"));
        }
        if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("quantile levels must lie in (0,1)"));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "quantile levels must be strictly increasing",
            ));
        }
        Ok(QuantileGrid { taus })
    }

    /// The default grid {0.01, 0.02, …, 0.99}.
    pub fn standard() -> Self {
        QuantileGrid {
            taus: (1..100).map(|i| i as f64 / 100.0).collect(),
        }
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn index_of(&self, tau: f64) -> Option<usize> {
        self.taus.iter().position(|&t| (t - tau).abs() <= GRID_TOL)
    }

    pub fn min_spacing(&self) -> f64 {
        self.taus
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of grid points lying in the closed region.
    pub fn indices_in(&self, region: &Region) -> Vec<usize> {
        (0..self.taus.len())
            .filter(|&i| {
                self.taus[i] >= region.lo - GRID_TOL && self.taus[i] <= region.hi + GRID_TOL
            })
            .collect()
    }

    /// Grid indices needed to integrate over `region`: the points inside plus the
    /// nearest neighbour on either side when an endpoint falls between points.
    pub fn support_of(&self, region: &Region) -> Vec<usize> {
        let t = &self.taus;
        let mut lo = t.partition_point(|&x| x < region.lo - GRID_TOL);
        let mut hi = t.partition_point(|&x| x <= region.hi + GRID_TOL);
        if lo > 0 && lo < t.len() && (t[lo] - region.lo).abs() > GRID_TOL {
            lo -= 1;
        }
        if hi > 0 && hi < t.len() && (t[hi - 1] - region.hi).abs() > GRID_TOL {
            hi += 1;
        }
        (lo..hi).collect()
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::standard()
    }
}

/// A quantile interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
}

impl Region {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!("invalid region ({lo}, {hi})")));
        }
        Ok(Region { lo, hi })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Quantile levels at which variants are screened for this region.
    pub fn screen_levels(&self) -> [f64; 3] {
        [self.lo, self.midpoint(), self.hi]
    }
}

/// A set of (possibly overlapping) quantile regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub k: usize,
    pub regions: Vec<Region>,
}

/// Partition sizes with a built-in region catalogue.
pub const STANDARD_KS: [usize; 4] = [3, 4, 5, 9];

impl RegionPartition {
    /// Custom partition; every region must satisfy `0.05 ≤ lo < hi ≤ 0.95`.
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::invalid("partition has no regions"));
        }
        for r in &regions {
            if !(r.lo >= 0.05 - 1e-12 && r.lo < r.hi && r.hi <= 0.95 + 1e-12) {
                return Err(Error::invalid(format!(
                    "region ({}, {}) outside [0.05, 0.95]",
                    r.lo, r.hi
                )));
            }
        }
        Ok(RegionPartition {
            k: regions.len(),
            regions,
        })
    }

    /// Built-in partitions for K ∈ {3, 4, 5, 9}.
    pub fn catalogue(k: usize) -> Result<Self> {
        let bounds: &[(f64, f64)] = match k {
            3 => &[(0.05, 0.4), (0.3, 0.7), (0.6, 0.95)],
            4 => &[(0.05, 0.35), (0.25, 0.55), (0.45, 0.75), (0.65, 0.95)],
            5 => &[
                (0.05, 0.25),
                (0.15, 0.45),
                (0.35, 0.65),
                (0.55, 0.85),
                (0.75, 0.95),
            ],
            9 => &[
                (0.05, 0.15),
                (0.1, 0.25),
                (0.2, 0.35),
                (0.3, 0.45),
                (0.4, 0.55),
                (0.5, 0.65),
                (0.6, 0.75),
                (0.7, 0.85),
                (0.8, 0.95),
            ],
            _ => {
                return Err(Error::invalid(format!(
                    "no built-in partition for K={k}; choose one of 3, 4, 5, 9"
                )))
            }
        };
        Ok(RegionPartition {
            k,
            regions: bounds.iter().map(|&(lo, hi)| Region { lo, hi }).collect(),
        })
    }

    /// The four catalogue partitions, K = 3, 4, 5, 9.
    pub fn standard_set() -> Vec<Self> {
        STANDARD_KS
            .iter()
            .map(|&k| Self::catalogue(k).expect("catalogue K"))
            .collect()
    }
}

/// One row of GWAS summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwasRecord {
    pub id: String,
    pub beta: f64,
    pub se: f64,
    pub n: u64,
    pub zscore: f64,
}

impl GwasRecord {
    pub fn new(id: impl Into<String>, beta: f64, se: f64, n: u64) -> Result<Self> {
        let id = id.into();
        if !beta.is_finite() || !se.is_finite() {
            return Err(Error::invalid(format!("SNP {id}: non-finite beta or se")));
        }
        if se <= 0.0 {
            return Err(Error::invalid(format!(
                "SNP {id}: standard error must be positive"
            )));
        }
        if n == 0 {
            return Err(Error::invalid(format!(
                "SNP {id}: sample size must be positive"
            )));
        }
        Ok(GwasRecord {
            id,
            beta,
            se,
            n,
            zscore: beta / se,
        })
    }
}

/// Marginal per-SNP association statistics from one GWAS.
#[derive(Debug, Clone, PartialEq)]
pub struct GwasSummary {
    records: Vec<GwasRecord>,
    index: HashMap<String, usize>,
}

impl GwasSummary {
    pub fn new(records: Vec<GwasRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate SNP id {} in GWAS", r.id)));
            }
        }
        if let Some(first) = records.first() {
            if let Some(r) = records.iter().find(|r| r.n != first.n) {
                return Err(Error::invalid(format!(
                    "SNP {}: sample size {} differs from {}",
                    r.id, r.n, first.n
                )));
            }
        }
        Ok(GwasSummary { records, index })
    }

    pub fn records(&self) -> &[GwasRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&GwasRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn zscore(&self, id: &str) -> Option<f64> {
        self.get(id).map(|r| r.zscore)
    }

    pub fn n_gwas(&self) -> Option<u64> {
        self.records.first().map(|r| r.n)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionStatus {
    Valid,
    /// Screening selected no variant.
    NoSelection,
    /// Imputed expression was constant over the region.
    Degenerate,
}

/// Trained quantities for one region `A_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub region: Region,
    pub status: RegionStatus,
    /// Selected SNP ids, aligned with `beta`.
    pub snps: Vec<String>,
    /// Integrated coefficient curve over the region.
    pub beta: Vec<f64>,
    /// Standard deviation of imputed expression within the region (0 if invalid).
    pub sigma: f64,
    /// Mean explained deviance over the grid points in the region.
    pub rq: f64,
}

impl RegionModel {
    pub fn invalid(region: Region, status: RegionStatus) -> Self {
        RegionModel {
            region,
            status,
            snps: Vec::new(),
            beta: Vec::new(),
            sigma: 0.0,
            rq: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == RegionStatus::Valid
    }

    /// Imputed expression `Σ_j z_ij β_j` for every individual of `panel`.
    pub fn predict<G: Genotypes + ?Sized>(&self, panel: &G) -> Result<Vec<f64>> {
        let ids: Vec<&str> = self.snps.iter().map(String::as_str).collect();
        let idx = panel.indices_of(&ids)?;
        let mut out = vec![0.0; panel.n_individuals()];
        for (&j, b) in idx.iter().zip(&self.beta) {
            for (o, z) in out.iter_mut().zip(panel.dosage_column(j)) {
                *o += z * b;
            }
        }
        Ok(out)
    }
}

/// Persistable per-gene quantile expression model for one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneModel {
    pub gene_id: String,
    pub partition: RegionPartition,
    pub regions: Vec<RegionModel>,
    /// Union of selected SNPs over all regions.
    pub snps: Vec<String>,
    /// Training-panel standard deviation of each SNP in `snps`.
    pub snp_sd: Vec<f64>,
    /// Regularised LD (correlation) matrix over `snps`, row-major.
    pub ld: Vec<Vec<f64>>,
}

impl GeneModel {
    pub fn is_testable(&self) -> bool {
        self.regions.iter().any(RegionModel::is_valid)
    }

    /// Gene-level explained deviance: the largest region R^Q.
    pub fn explained_deviance(&self) -> f64 {
        self.regions
            .iter()
            .filter(|r| r.is_valid())
            .map(|r| r.rq)
            .fold(0.0, f64::max)
    }

    pub fn snp_position(&self, id: &str) -> Option<usize> {
        self.snps.iter().position(|s| s == id)
    }

    /// Checks every structural invariant; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let m = self.snps.len();
        let bad = |msg: String| Err(Error::invalid(format!("gene {}: {msg}", self.gene_id)));
        if self.partition.regions.len() != self.regions.len() {
            return bad("region count does not match partition".into());
        }
        if self.snp_sd.len() != m || self.ld.len() != m || self.ld.iter().any(|r| r.len() != m) {
            return bad("SNP metadata dimensions inconsistent".into());
        }
        if self.snp_sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("SNP standard deviations must be positive".into());
        }
        for i in 0..m {
            if (self.ld[i][i] - 1.0).abs() > 1e-12 {
                return bad(format!("LD diagonal entry {i} is not 1"));
            }
            for j in 0..i {
                if !self.ld[i][j].is_finite() || (self.ld[i][j] - self.ld[j][i]).abs() > 1e-12 {
                    return bad(format!("LD matrix not symmetric at ({i},{j})"));
                }
            }
        }
        if m > 0 {
            let d = DMatrix::from_fn(m, m, |i, j| self.ld[i][j]);
            let min_eig = d
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -1e-8 {
                return bad(format!("LD matrix has negative eigenvalue {min_eig}"));
            }
        }
        for (r, part) in self.regions.iter().zip(&self.partition.regions) {
            if r.region != *part {
                return bad("region bounds differ from partition".into());
            }
            if r.snps.len() != r.beta.len() {
                return bad("region beta length differs from its SNP list".into());
            }
            if r.snps.iter().any(|s| self.snp_position(s).is_none()) {
                return bad("region SNP missing from SNP union".into());
            }
            if r.is_valid() {
                if r.snps.is_empty() || !(r.sigma > 0.0 && r.sigma.is_finite()) {
                    return bad("valid region needs SNPs and positive sigma".into());
                }
                if r.beta.iter().any(|b| !b.is_finite()) {
                    return bad("non-finite region beta".into());
                }
            } else if !r.snps.is_empty() {
                return bad("invalid region must not carry SNPs".into());
            }
            if !(0.0..=1.0).contains(&r.rq) {
                return bad(format!("R^Q {} outside [0,1]", r.rq));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub z: Option<f64>,
    pub delta: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub k: usize,
    pub regions: Vec<RegionResult>,
    pub partition_p: f64,
    /// No region was testable; `partition_p` is a uniform draw.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub gene_id: String,
    pub partitions: Vec<PartitionResult>,
    pub unified_p: f64,
    /// Every partition fell back to a uniform draw.
    pub fallback: bool,
}

impl AssociationResult {
    pub fn partition(&self, k: usize) -> Option<&PartitionResult> {
        self.partitions.iter().find(|p| p.k == k)
    }
}
