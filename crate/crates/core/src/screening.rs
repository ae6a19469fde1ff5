//! Per-region variant screening: rank-score tests combined over the region's
//! screening levels, Benjamini–Hochberg selection, then LD pruning by
//! hierarchical clustering.

use serde::{Deserialize, Serialize};

use crate::association::cauchy_combine;
use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::quantreg::{covariate_basis, RankScoreNull, ResidualizedSnp};
use crate::types::{Genotypes, Region, RegionPartition};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenOptions {
    pub fdr_q: f64,
    /// Dendrogram cut height on the `1 - |cor|` scale.
    pub cut_height: f64,
    /// Largest number of SNPs kept per region after pruning.
    pub max_snps: usize,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions {
            fdr_q: 0.05,
            cut_height: 0.2,
            max_snps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub region: Region,
    /// Combined screening p-value of every testable SNP, in panel order.
    pub candidate_p: Vec<(String, f64)>,
    /// Ordered by ascending p, ties by id.
    pub fdr_selected: Vec<String>,
    /// Final selection, ordered by ascending p, ties by id.
    pub pruned_selected: Vec<String>,
}

impl ScreenResult {
    pub fn p_of(&self, id: &str) -> Option<f64> {
        self.candidate_p
            .iter()
            .find(|(s, _)| s == id)
            .map(|&(_, p)| p)
    }
}

fn by_p_then_id(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

/// Benjamini–Hochberg step-up selection at level `q`.
pub fn bh_fdr(pvalues: &[(String, f64)], q: f64) -> Vec<String> {
    let m = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(by_p_then_id);
    let k = (1..=m)
        .rev()
        .find(|&k| sorted[k - 1].1 <= k as f64 * q / m as f64)
        .unwrap_or(0);
    sorted.truncate(k);
    sorted.into_iter().map(|(id, _)| id).collect()
}

/// Keeps one SNP per cluster of an average-linkage dendrogram on
/// `1 - |cor|`, cut so that every within-cluster merge height is at most
/// `cut_height`. The representative is the member with the smallest p
/// (ties by id). Output is ordered by ascending p, ties by id.
pub fn prune_correlated<G: Genotypes + ?Sized>(
    panel: &G,
    candidates: &[(String, f64)],
    cut_height: f64,
) -> Result<Vec<String>> {
    let idx = panel.indices_of(&candidates.iter().map(|c| c.0.as_str()).collect::<Vec<_>>())?;
    let m = idx.len();
    let mut dist = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..a {
            let r = pearson(panel.dosage_column(idx[a]), panel.dosage_column(idx[b])).ok_or_else(
                || {
                    let bad = if crate::linalg::sample_sd(panel.dosage_column(idx[a])) == 0.0 {
                        a
                    } else {
                        b
                    };
                    Error::ConstantSnp(candidates[bad].0.clone())
                },
            )?;
            dist[a][b] = 1.0 - r.abs();
            dist[b][a] = dist[a][b];
        }
    }
    if m == 1 && crate::linalg::sample_sd(panel.dosage_column(idx[0])) == 0.0 {
        return Err(Error::ConstantSnp(candidates[0].0.clone()));
    }
    let clusters = average_linkage(dist, cut_height);
    let mut reps: Vec<(String, f64)> = clusters
        .iter()
        .map(|c| {
            c.iter()
                .map(|&i| candidates[i].clone())
                .min_by(by_p_then_id)
                .unwrap()
        })
        .collect();
    reps.sort_by(by_p_then_id);
    Ok(reps.into_iter().map(|(id, _)| id).collect())
}

/// Clusters from average-linkage agglomeration, merging while the closest
/// pair is within `cut`. Average linkage has monotone merge heights, so this
/// equals cutting the full dendrogram at `cut`.
pub fn average_linkage(mut dist: Vec<Vec<f64>>, cut: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..dist.len()).map(|i| vec![i]).collect();
    let mut alive: Vec<bool> = vec![true; dist.len()];
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..dist.len() {
            if !alive[a] {
                continue;
            }
            for b in 0..a {
                if alive[b] && best.is_none_or(|(_, _, d)| dist[a][b] < d) {
                    best = Some((b, a, dist[a][b]));
                }
            }
        }
        let Some((keep, gone, d)) = best else { break };
        if d > cut {
            break;
        }
        let (nk, ng) = (clusters[keep].len() as f64, clusters[gone].len() as f64);
        for c in 0..dist.len() {
            if alive[c] && c != keep && c != gone {
                let merged = (nk * dist[keep][c] + ng * dist[gone][c]) / (nk + ng);
                dist[keep][c] = merged;
                dist[c][keep] = merged;
            }
        }
        let moved = std::mem::take(&mut clusters[gone]);
        clusters[keep].extend(moved);
        alive[gone] = false;
    }
    clusters.into_iter().filter(|c| !c.is_empty()).collect()
}

/// Screening state for one gene, reusable across regions and partitions.
///
/// SNP columns are residualized on `[1 | C]` once, and the null quantile fit
/// at each screening level is computed once.
pub struct Screener<'a, G: Genotypes + ?Sized> {
    panel: &'a G,
    residualized: Vec<Option<ResidualizedSnp>>,
    nulls: Vec<RankScoreNull>,
    opts: ScreenOptions,
}

impl<'a, G: Genotypes + ?Sized> Screener<'a, G> {
    pub fn new(
        panel: &'a G,
        expression: &[f64],
        partitions: &[RegionPartition],
        opts: ScreenOptions,
    ) -> Result<Self> {
        let n = panel.n_individuals();
        if expression.len() != n {
            return Err(Error::invalid("expression length differs from panel"));
        }
        let basis = covariate_basis(panel.covariates(), n);
        let residualized = (0..panel.n_snps())
            .map(
                |j| match ResidualizedSnp::new(&basis, panel.dosage_column(j)) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::CollinearSnp) => Ok(None),
                    Err(e) => Err(e),
                },
            )
            .collect::<Result<Vec<_>>>()?;
        let mut levels: Vec<f64> = partitions
            .iter()
            .flat_map(|p| p.regions.iter().flat_map(|r| r.screen_levels()))
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let nulls = RankScoreNull::for_levels(expression, panel.covariates(), &levels)?;
        Ok(Screener {
            panel,
            residualized,
            nulls,
            opts,
        })
    }

    fn null_at(&self, tau: f64) -> Result<&RankScoreNull> {
        self.nulls
            .iter()
            .find(|m| (m.tau() - tau).abs() < 1e-12)
            .ok_or_else(|| Error::invalid(format!("screening level {tau} was not prepared")))
    }

    pub fn screen(&self, region: &Region) -> Result<ScreenResult> {
        let models = region
            .screen_levels()
            .iter()
            .map(|&t| self.null_at(t))
            .collect::<Result<Vec<_>>>()?;
        let mut candidate_p = Vec::new();
        for (j, z) in self.residualized.iter().enumerate() {
            let Some(z) = z else { continue };
            let ps: Vec<f64> = models.iter().map(|m| m.pvalue(z)).collect();
            candidate_p.push((self.panel.snp_id(j).to_string(), cauchy_combine(&ps)?));
        }
        let fdr_selected = bh_fdr(&candidate_p, self.opts.fdr_q);
        let mut pruned_selected = if fdr_selected.is_empty() {
            Vec::new()
        } else {
            let chosen: Vec<(String, f64)> = fdr_selected
                .iter()
                .map(|id| {
                    (
                        id.clone(),
                        candidate_p.iter().find(|c| &c.0 == id).unwrap().1,
                    )
                })
                .collect();
            prune_correlated(self.panel, &chosen, self.opts.cut_height)?
        };
        pruned_selected.truncate(self.opts.max_snps);
        Ok(ScreenResult {
            region: *region,
            candidate_p,
            fdr_selected,
            pruned_selected,
        })
    }
}

/// Screens every region of `partition`.
pub fn screen_gene<G: Genotypes + ?Sized>(
    panel: &G,
    expression: &[f64],
    partition: &RegionPartition,
    opts: &ScreenOptions,
) -> Result<Vec<ScreenResult>> {
    let screener = Screener::new(panel, expression, std::slice::from_ref(partition), *opts)?;
    partition
        .regions
        .iter()
        .map(|r| screener.screen(r))
        .collect()
}
