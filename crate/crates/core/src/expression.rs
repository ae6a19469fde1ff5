//! Training of the per-gene quantile expression model.
//!
//! For each region the screened SNPs enter a quantile process fit; the
//! coefficient curves are integrated over the region, the spread of the
//! imputed expression inside the region is estimated, and the explained
//! deviance is averaged over the region's grid points.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pearson, sample_sd};
use crate::quantreg::{fit_levels, rq_from_objectives, Design, QuantileProcessFit};
use crate::screening::{ScreenOptions, ScreenResult, Screener};
use crate::types::{
    GeneModel, Genotypes, QuantileGrid, Region, RegionModel, RegionPartition, RegionStatus,
};

/// Diagonal shrinkage applied to every LD matrix.
pub const LD_SHRINKAGE: f64 = 0.01;

/// Estimator of the region-restricted standard deviation of imputed expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaEstimator {
    /// Sample sd of `z_iᵀβ̂(τ_g)` pooled over individuals and region grid points.
    #[default]
    Pooled,
    /// Sample sd of `z_iᵀβ_{A_k}` over individuals.
    RegionEffect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub grid: QuantileGrid,
    pub screen: ScreenOptions,
    pub sigma: SigmaEstimator,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            grid: QuantileGrid::standard(),
            screen: ScreenOptions::default(),
            sigma: SigmaEstimator::default(),
        }
    }
}

/// Exact integral over `[lo, hi]` of the piecewise-linear interpolant of
/// `(taus, values)`.
pub fn integrate_curve(taus: &[f64], values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    const TOL: f64 = 1e-9;
    if taus.len() != values.len() || taus.len() < 2 {
        return Err(Error::invalid("curve needs at least two matching points"));
    }
    if lo < taus[0] - TOL || hi > taus[taus.len() - 1] + TOL {
        return Err(Error::invalid(format!(
            "region ({lo}, {hi}) outside grid span ({}, {})",
            taus[0],
            taus[taus.len() - 1]
        )));
    }
    let spacing = taus
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if hi - lo < spacing - TOL {
        return Err(Error::invalid(format!(
            "region ({lo}, {hi}) is narrower than the grid spacing {spacing}"
        )));
    }
    let interp = |t: f64| -> f64 {
        let k = taus.partition_point(|&x| x < t).clamp(1, taus.len() - 1);
        let (t0, t1) = (taus[k - 1], taus[k]);
        let w = (t - t0) / (t1 - t0);
        values[k - 1] + w * (values[k] - values[k - 1])
    };
    let mut pts: Vec<(f64, f64)> = vec![(lo, interp(lo))];
    pts.extend(
        taus.iter()
            .zip(values)
            .filter(|(&t, _)| t > lo + TOL && t < hi - TOL)
            .map(|(&t, &v)| (t, v)),
    );
    pts.push((hi, interp(hi)));
    Ok(pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum())
}

/// Region effect vector `β_{A_k} = ∫_{A_k} β̂(u) du`, one entry per SNP.
pub fn integrate_beta(process: &QuantileProcessFit, region: &Region) -> Result<Vec<f64>> {
    let taus = process.grid.taus();
    let n_snps = process.fits.first().map_or(0, |f| f.snp_coefs.len());
    (0..n_snps)
        .map(|j| integrate_curve(taus, &process.snp_curve(j), region.lo, region.hi))
        .collect()
}

/// Pooled sample sd of `z_iᵀβ̂(τ_g)` over individuals `i` and the given
/// coefficient vectors.
fn pooled_sd(columns: &[&[f64]], coefs: &[&[f64]]) -> Result<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    let mut values = Vec::with_capacity(n * coefs.len());
    for beta in coefs {
        for i in 0..n {
            values.push(
                columns
                    .iter()
                    .zip(beta.iter())
                    .map(|(c, b)| c[i] * b)
                    .sum::<f64>(),
            );
        }
    }
    let sd = sample_sd(&values);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-13 * scale) || values.len() < 2 {
        return Err(Error::DegenerateExpression);
    }
    Ok(sd)
}

/// Standard deviation of imputed expression within `region`, pooled over
/// training individuals and the process grid points inside the region.
/// `snp_ids` name the process's SNP coefficients in order.
pub fn sigma_region<G: Genotypes + ?Sized>(
    panel: &G,
    snp_ids: &[&str],
    process: &QuantileProcessFit,
    region: &Region,
) -> Result<f64> {
    let idx = panel.indices_of(snp_ids)?;
    let cols: Vec<&[f64]> = idx.iter().map(|&j| panel.dosage_column(j)).collect();
    let coefs: Vec<&[f64]> = process
        .grid
        .indices_in(region)
        .into_iter()
        .map(|g| process.fits[g].snp_coefs.as_slice())
        .collect();
    if coefs.is_empty() {
        return Err(Error::invalid("region contains no grid point"));
    }
    pooled_sd(&cols, &coefs)
}

/// Pearson correlation of the listed SNPs, shrunk as `(1-ε)D + εI`.
pub fn estimate_ld<G: Genotypes + ?Sized, S: AsRef<str>>(
    panel: &G,
    ids: &[S],
) -> Result<Vec<Vec<f64>>> {
    if ids.is_empty() {
        return Err(Error::invalid("LD requested for an empty SNP set"));
    }
    let names: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
    let idx = panel.indices_of(&names)?;
    let m = idx.len();
    for (k, &j) in idx.iter().enumerate() {
        if sample_sd(panel.dosage_column(j)) == 0.0 {
            return Err(Error::ConstantSnp(names[k].to_string()));
        }
    }
    let mut d = vec![vec![1.0; m]; m];
    for a in 0..m {
        for b in 0..a {
            let r = pearson(panel.dosage_column(idx[a]), panel.dosage_column(idx[b]))
                .ok_or_else(|| Error::ConstantSnp(names[a].to_string()))?;
            d[a][b] = (1.0 - LD_SHRINKAGE) * r;
            d[b][a] = d[a][b];
        }
    }
    Ok(d)
}

/// Coefficients and check loss of one quantile fit, as cached by the trainer.
#[derive(Debug, Clone)]
struct CachedFit {
    snp_coefs: Vec<f64>,
    objective: f64,
}

/// Models and screening output for one gene across partitions.
#[derive(Debug, Clone)]
pub struct TrainedGene {
    pub models: Vec<GeneModel>,
    /// Screening results per partition, aligned with `models`.
    pub screens: Vec<Vec<ScreenResult>>,
}

/// Trains one gene for several partitions, sharing screening null fits,
/// null-model check losses and process fits across regions that select the
/// same SNP set.
pub struct GeneTrainer<'a, G: Genotypes + ?Sized> {
    panel: &'a G,
    expression: &'a [f64],
    partitions: Vec<RegionPartition>,
    opts: TrainOptions,
    screener: Screener<'a, G>,
    null_objective: HashMap<usize, f64>,
    process_cache: HashMap<Vec<usize>, HashMap<usize, CachedFit>>,
}

impl<'a, G: Genotypes + ?Sized> GeneTrainer<'a, G> {
    pub fn new(
        panel: &'a G,
        expression: &'a [f64],
        partitions: &[RegionPartition],
        opts: TrainOptions,
    ) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::invalid("at least one partition is required"));
        }
        crate::linalg::check_finite(expression, "expression")?;
        let screener = Screener::new(panel, expression, partitions, opts.screen)?;
        let mut support: Vec<usize> = partitions
            .iter()
            .flat_map(|p| p.regions.iter().flat_map(|r| opts.grid.support_of(r)))
            .collect();
        support.sort_unstable();
        support.dedup();
        let taus: Vec<f64> = support.iter().map(|&g| opts.grid.taus()[g]).collect();
        let null = Design::from_panel(panel, &[])?;
        let fits = fit_levels(expression, &null, &taus)?;
        let null_objective = support
            .into_iter()
            .zip(fits.iter().map(|f| f.objective))
            .collect();
        Ok(GeneTrainer {
            panel,
            expression,
            partitions: partitions.to_vec(),
            opts,
            screener,
            null_objective,
            process_cache: HashMap::new(),
        })
    }

    pub fn train(&mut self, gene_id: &str) -> Result<TrainedGene> {
        let mut models = Vec::with_capacity(self.partitions.len());
        let mut screens = Vec::with_capacity(self.partitions.len());
        for partition in self.partitions.clone() {
            let mut regions = Vec::with_capacity(partition.regions.len());
            let mut results = Vec::with_capacity(partition.regions.len());
            for region in &partition.regions {
                let screen = self.screener.screen(region)?;
                regions.push(self.fit_region(region, &screen.pruned_selected)?);
                results.push(screen);
            }
            models.push(self.assemble(gene_id, partition, regions)?);
            screens.push(results);
        }
        Ok(TrainedGene { models, screens })
    }

    /// Process fits for the SNP set `idx` at grid indices `points`.
    fn process(&mut self, idx: &[usize], points: &[usize]) -> Result<Vec<CachedFit>> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        let cache = self.process_cache.entry(key.clone()).or_default();
        let missing: Vec<usize> = points
            .iter()
            .copied()
            .filter(|g| !cache.contains_key(g))
            .collect();
        if !missing.is_empty() {
            let design = Design::from_panel(self.panel, &key)?;
            let taus: Vec<f64> = missing.iter().map(|&g| self.opts.grid.taus()[g]).collect();
            let fits = fit_levels(self.expression, &design, &taus)?;
            for (g, f) in missing.into_iter().zip(fits) {
                cache.insert(
                    g,
                    CachedFit {
                        snp_coefs: f.snp_coefs,
                        objective: f.objective,
                    },
                );
            }
        }
        // reorder coefficients from sorted-key order to the caller's order
        let pos: Vec<usize> = idx.iter().map(|j| key.binary_search(j).unwrap()).collect();
        Ok(points
            .iter()
            .map(|g| {
                let f = &cache[g];
                CachedFit {
                    snp_coefs: pos.iter().map(|&p| f.snp_coefs[p]).collect(),
                    objective: f.objective,
                }
            })
            .collect())
    }

    fn fit_region(&mut self, region: &Region, selected: &[String]) -> Result<RegionModel> {
        if selected.is_empty() {
            return Ok(RegionModel::invalid(*region, RegionStatus::NoSelection));
        }
        let names: Vec<&str> = selected.iter().map(String::as_str).collect();
        let idx = self.panel.indices_of(&names)?;
        let grid = self.opts.grid.clone();
        let support = grid.support_of(region);
        let fits = match self.process(&idx, &support) {
            Ok(f) => f,
            Err(Error::RankDeficient { .. }) => {
                return Ok(RegionModel::invalid(*region, RegionStatus::Degenerate))
            }
            Err(e) => return Err(e),
        };
        let taus: Vec<f64> = support.iter().map(|&g| grid.taus()[g]).collect();
        let beta = (0..idx.len())
            .map(|j| {
                let curve: Vec<f64> = fits.iter().map(|f| f.snp_coefs[j]).collect();
                integrate_curve(&taus, &curve, region.lo, region.hi)
            })
            .collect::<Result<Vec<f64>>>()?;
        let inside = grid.indices_in(region);
        if inside.is_empty() {
            return Err(Error::invalid(format!(
                "region ({}, {}) contains no grid point",
                region.lo, region.hi
            )));
        }
        let cols: Vec<&[f64]> = idx.iter().map(|&j| self.panel.dosage_column(j)).collect();
        let sigma = match self.opts.sigma {
            SigmaEstimator::Pooled => {
                let coefs: Vec<&[f64]> = inside
                    .iter()
                    .map(|g| fits[support.binary_search(g).unwrap()].snp_coefs.as_slice())
                    .collect();
                pooled_sd(&cols, &coefs)
            }
            SigmaEstimator::RegionEffect => pooled_sd(&cols, &[beta.as_slice()]),
        };
        let sigma = match sigma {
            Ok(s) => s,
            Err(Error::DegenerateExpression) => {
                return Ok(RegionModel::invalid(*region, RegionStatus::Degenerate))
            }
            Err(e) => return Err(e),
        };
        let mut rq = 0.0;
        for g in &inside {
            let full = fits[support.binary_search(g).unwrap()].objective;
            rq += rq_from_objectives(full, self.null_objective[g])?;
        }
        Ok(RegionModel {
            region: *region,
            status: RegionStatus::Valid,
            snps: selected.to_vec(),
            beta,
            sigma,
            rq: (rq / inside.len() as f64).clamp(0.0, 1.0),
        })
    }

    fn assemble(
        &self,
        gene_id: &str,
        partition: RegionPartition,
        regions: Vec<RegionModel>,
    ) -> Result<GeneModel> {
        let mut union: Vec<usize> = Vec::new();
        for r in regions.iter().filter(|r| r.is_valid()) {
            for s in &r.snps {
                union.push(self.panel.snp_index(s).unwrap());
            }
        }
        union.sort_unstable();
        union.dedup();
        let snps: Vec<String> = union
            .iter()
            .map(|&j| self.panel.snp_id(j).to_string())
            .collect();
        let ld = if snps.is_empty() {
            Vec::new()
        } else {
            estimate_ld(self.panel, &snps)?
        };
        Ok(GeneModel {
            gene_id: gene_id.to_string(),
            partition,
            regions,
            snp_sd: union
                .iter()
                .map(|&j| sample_sd(self.panel.dosage_column(j)))
                .collect(),
            snps,
            ld,
        })
    }
}

/// Trains the quantile expression model of one gene for one partition.
pub fn train_gene<G: Genotypes + ?Sized>(
    panel: &G,
    expression: &[f64],
    gene_id: &str,
    partition: &RegionPartition,
    opts: &TrainOptions,
) -> Result<GeneModel> {
    let mut t = GeneTrainer::new(
        panel,
        expression,
        std::slice::from_ref(partition),
        opts.clone(),
    )?;
    Ok(t.train(gene_id)?.models.remove(0))
}
