//! Region-stratified gene-trait z-scores from GWAS summary statistics, and
//! Cauchy aggregation of the resulting p-values.

use rand::Rng;

use crate::baseline::LinearGeneModel;
use crate::error::{Error, Result};
use crate::linalg::two_sided_normal_p;
use crate::types::{AssociationResult, GeneModel, GwasSummary, PartitionResult, RegionResult};

/// Upper clamp on every reported p-value.
pub const P_MAX: f64 = 1.0 - 1e-15;
/// Below this the tangent is replaced by its pole expansion `1/(pπ)`.
const TAIL_P: f64 = 1e-15;

pub fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, P_MAX)
}

/// `tan((0.5 - p)π)` evaluated without cancellation near either end.
fn cauchy_quantile(p: f64) -> f64 {
    use std::f64::consts::PI;
    if p < TAIL_P {
        1.0 / (p * PI)
    } else if p < 0.5 {
        1.0 / (p * PI).tan()
    } else {
        -1.0 / ((1.0 - p) * PI).tan()
    }
}

/// Upper tail of the standard Cauchy distribution.
fn cauchy_upper(t: f64) -> f64 {
    use std::f64::consts::PI;
    if t > 0.0 {
        (1.0 / t).atan() / PI
    } else {
        0.5 - t.atan() / PI
    }
}

/// Equal-weight Cauchy combination `0.5 - atan(mean tan((0.5 - p_k)π))/π`.
pub fn cauchy_combine(pvalues: &[f64]) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::invalid("cauchy_combine needs at least one p-value"));
    }
    let mut t = 0.0;
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("p-value {p} outside [0,1]")));
        }
        t += cauchy_quantile(clamp_p(p));
    }
    Ok(clamp_p(cauchy_upper(t / pvalues.len() as f64)))
}

/// Outcome of testing one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTest {
    pub z: f64,
    /// Null variance of `z`.
    pub delta: f64,
    pub p: f64,
    /// Region SNPs found in the GWAS.
    pub snps_used: usize,
}

/// Weighted z-score `Σ w_j σ_j z̃_j` and its null variance `(w∘σ)ᵀ D (w∘σ)`
/// over the SNPs present in `gwas`. Returns `None` if none are.
fn weighted_z(
    snps: &[String],
    weights: &[f64],
    all_snps: &[String],
    snp_sd: &[f64],
    ld: &[Vec<f64>],
    gwas: &GwasSummary,
) -> Option<(f64, f64, usize)> {
    let mut idx = Vec::with_capacity(snps.len());
    let mut wz = Vec::with_capacity(snps.len());
    let mut num = 0.0;
    for (s, &w) in snps.iter().zip(weights) {
        let (Some(z), Some(pos)) = (gwas.zscore(s), all_snps.iter().position(|a| a == s)) else {
            continue;
        };
        let ws = w * snp_sd[pos];
        num += ws * z;
        idx.push(pos);
        wz.push(ws);
    }
    if idx.is_empty() {
        return None;
    }
    let mut var = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            var += wz[a] * ld[i][j] * wz[b];
        }
    }
    Some((num, var, idx.len()))
}

/// Region z-score `𝒵_k = β_{A_k}ᵀ diag(σ̂) 𝒵̃ / σ̂_{A_k}` with null variance `Δ`.
///
/// SNPs absent from `gwas` are dropped before both quantities are formed.
/// Returns `None` for an invalid region, no GWAS overlap, or an all-zero
/// effect vector.
pub fn region_z(
    model: &GeneModel,
    region_index: usize,
    gwas: &GwasSummary,
) -> Result<Option<RegionTest>> {
    let region = model
        .regions
        .get(region_index)
        .ok_or_else(|| Error::invalid(format!("region index {region_index} out of range")))?;
    if !region.is_valid() {
        return Ok(None);
    }
    let Some((num, var, used)) = weighted_z(
        &region.snps,
        &region.beta,
        &model.snps,
        &model.snp_sd,
        &model.ld,
        gwas,
    ) else {
        return Ok(None);
    };
    if var == 0.0 && region.beta.iter().all(|&b| b == 0.0) {
        return Ok(None);
    }
    if !(var > 0.0) {
        return Err(Error::Numerical(format!(
            "gene {} region {region_index}: null variance {var} not positive",
            model.gene_id
        )));
    }
    let sigma = region.sigma;
    let z = num / sigma;
    let delta = var / (sigma * sigma);
    let p = clamp_p(two_sided_normal_p(z / delta.sqrt()));
    Ok(Some(RegionTest {
        z,
        delta,
        p,
        snps_used: used,
    }))
}

fn test_partition(
    model: &GeneModel,
    gwas: &GwasSummary,
    rng: &mut impl Rng,
) -> Result<PartitionResult> {
    let mut regions = Vec::with_capacity(model.regions.len());
    let mut ps = Vec::new();
    for k in 0..model.regions.len() {
        match region_z(model, k, gwas)? {
            Some(t) => {
                ps.push(t.p);
                regions.push(RegionResult {
                    z: Some(t.z),
                    delta: Some(t.delta),
                    p: Some(t.p),
                });
            }
            None => regions.push(RegionResult {
                z: None,
                delta: None,
                p: None,
            }),
        }
    }
    let (partition_p, fallback) = if ps.is_empty() {
        (clamp_p(rng.random::<f64>()), true)
    } else {
        (cauchy_combine(&ps)?, false)
    };
    Ok(PartitionResult {
        k: model.partition.k,
        regions,
        partition_p,
        fallback,
    })
}

/// Tests one gene across partitions and combines the partition p-values.
///
/// A partition without any testable region receives a uniform p drawn from
/// `rng`. Callers pass a stream keyed by the gene (see [`crate::rng::gene_stream`]) so
/// results do not depend on the order in which genes are processed.
pub fn test_gene(
    models: &[GeneModel],
    gwas: &GwasSummary,
    rng: &mut impl Rng,
) -> Result<AssociationResult> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("test_gene needs at least one partition model"))?;
    if models.iter().any(|m| m.gene_id != first.gene_id) {
        return Err(Error::invalid("partition models belong to different genes"));
    }
    let partitions = models
        .iter()
        .map(|m| test_partition(m, gwas, rng))
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<f64> = partitions.iter().map(|p| p.partition_p).collect();
    Ok(AssociationResult {
        gene_id: first.gene_id.clone(),
        fallback: partitions.iter().all(|p| p.fallback),
        unified_p: cauchy_combine(&ps)?,
        partitions,
    })
}

/// Linear TWAS test `z = wᵀdiag(σ̂)𝒵̃ / sqrt(wᵀdiag(σ̂) D diag(σ̂) w)`.
pub fn linear_test_gene(model: &LinearGeneModel, gwas: &GwasSummary) -> Result<f64> {
    if model.weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Untestable(format!(
            "gene {} has no nonzero weight",
            model.gene_id
        )));
    }
    let (num, var, _) = weighted_z(
        &model.snps,
        &model.weights,
        &model.snps,
        &model.snp_sd,
        &model.ld,
        gwas,
    )
    .ok_or_else(|| Error::Untestable(format!("gene {}: no weighted SNP in GWAS", model.gene_id)))?;
    if !(var > 0.0) {
        return Err(Error::Untestable(format!(
            "gene {}: all GWAS-present weights are zero",
            model.gene_id
        )));
    }
    Ok(clamp_p(two_sided_normal_p(num / var.sqrt())))
}
