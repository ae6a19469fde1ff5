mod common;

use common::ks_two_sample;
use nalgebra::DMatrix;
use qtwas::linalg::{dot, mean, pearson, sample_sd};
use qtwas::quantreg::{fit_qr, Design};
use qtwas::rng::stream;
use qtwas::simulation::*;
use qtwas::{GenotypePanel, GwasSummary};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn config(model: ExpressionModel) -> SimConfig {
    SimConfig {
        n_covariates: 0,
        ..SimConfig::desk(model)
    }
}

fn layout_with(config: &SimConfig, seed: u64) -> GeneLayout {
    GeneLayout::draw(config, &mut stream(seed, "layout", 0))
}

fn panel(config: &SimConfig, layout: &GeneLayout, n: usize, seed: u64) -> GenotypePanel {
    gen_genotypes(n, layout, config, &mut stream(seed, "panel", 0)).unwrap()
}

/// Correlation of two thresholded latent normals with correlation `rho`,
/// from one-dimensional Simpson quadrature of the bivariate orthant
/// probabilities `P(L1 > a, L2 > b)`.
fn copula_dosage_correlation(f1: f64, f2: f64, rho: f64) -> f64 {
    let nd = Normal::new(0.0, 1.0).unwrap();
    let cuts = |f: f64| {
        [
            nd.inverse_cdf((1.0 - f) * (1.0 - f)),
            nd.inverse_cdf(1.0 - f * f),
        ]
    };
    let orthant = |a: f64, b: f64| {
        let s = (1.0 - rho * rho).sqrt();
        let g = |x: f64| nd.pdf(x) * (1.0 - nd.cdf((b - rho * x) / s));
        let (lo, hi, m) = (a, 9.0, 4000);
        let h = (hi - lo) / m as f64;
        let mut acc = g(lo) + g(hi);
        for k in 1..m {
            acc += g(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    // D = 1{L > c0} + 1{L > c1}
    let e12: f64 = cuts(f1)
        .iter()
        .flat_map(|&a| cuts(f2).map(|b| orthant(a, b)))
        .sum();
    let (m1, m2) = (2.0 * f1, 2.0 * f2);
    let (v1, v2) = (2.0 * f1 * (1.0 - f1), 2.0 * f2 * (1.0 - f2));
    (e12 - m1 * m2) / (v1 * v2).sqrt()
}

#[test]
fn independent_snps_when_rho_is_zero() {
    let c = SimConfig {
        ld_rho: 0.0,
        p_snps: 40,
        ..config(ExpressionModel::Null)
    };
    let layout = layout_with(&c, 1);
    let p = panel(&c, &layout, 5000, 1);
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..40 {
        for b in a + 1..40 {
            total += pearson(p.dosage_column(a), p.dosage_column(b))
                .unwrap()
                .abs();
            pairs += 1;
        }
    }
    assert!(total / (pairs as f64) < 0.03);
}

#[test]
fn allele_frequencies_match_targets() {
    let c = SimConfig {
        p_snps: 50,
        ..config(ExpressionModel::Null)
    };
    let layout = layout_with(&c, 2);
    assert!(layout.maf.iter().all(|&f| (0.05..0.5).contains(&f)));
    let p = panel(&c, &layout, 5000, 2);
    for j in 0..50 {
        let freq = mean(p.dosage_column(j)) / 2.0;
        assert!(
            (freq - layout.maf[j]).abs() < 0.02,
            "SNP {j}: {freq} vs {}",
            layout.maf[j]
        );
    }
}

#[test]
fn adjacent_ld_matches_copula_quadrature() {
    let c = SimConfig {
        ld_rho: 0.7,
        ld_block_size: 10,
        p_snps: 30,
        ..config(ExpressionModel::Null)
    };
    let layout = layout_with(&c, 3);
    let p = panel(&c, &layout, 5000, 3);
    for j in 0..29 {
        let r = pearson(p.dosage_column(j), p.dosage_column(j + 1)).unwrap();
        let expected = if (j + 1) % 10 == 0 {
            0.0
        } else {
            copula_dosage_correlation(layout.maf[j], layout.maf[j + 1], 0.7)
        };
        assert!((r - expected).abs() < 0.07, "pair {j}: {r} vs {expected}");
    }
}

#[test]
fn quadrature_oracle_limits() {
    assert!(copula_dosage_correlation(0.3, 0.3, 0.0).abs() < 1e-9);
    // equal frequencies and rho = 1 give identical dosages
    assert!((copula_dosage_correlation(0.3, 0.3, 0.999999) - 1.0).abs() < 1e-3);
}

#[test]
fn covariates_are_standard_normal() {
    let c = SimConfig {
        n_covariates: 5,
        ..config(ExpressionModel::Null)
    };
    let layout = layout_with(&c, 4);
    let p = panel(&c, &layout, 4000, 4);
    assert_eq!(p.n_covariates(), 5);
    for k in 0..5 {
        let col = p.covariate_column(k);
        assert!(mean(col).abs() < 0.06);
        assert!((sample_sd(col) - 1.0).abs() < 0.05);
    }
}

/// One causal SNP with MAF 0.3, no covariates, and a large panel.
fn single_causal(
    model: ExpressionModel,
    beta: f64,
    n: usize,
    seed: u64,
) -> (GenotypePanel, Vec<f64>, Vec<f64>) {
    let c = SimConfig {
        p_snps: 100,
        beta,
        ..config(model)
    };
    let mut layout = layout_with(&c, seed);
    assert_eq!(layout.causal.len(), 1);
    layout.maf[layout.causal[0]] = 0.3;
    let p = panel(&c, &layout, n, seed);
    let x = gen_expression(&p, &layout, &c, &mut stream(seed, "expression", 0));
    let g = genetic_score(&p, &layout.causal, 1.0);
    (p, x, g)
}

fn qr_slope(x: &[f64], g: &[f64], tau: f64) -> f64 {
    let design = Design::new(&DMatrix::zeros(x.len(), 0), &[g]).unwrap();
    fit_qr(x, &design, tau).unwrap().snp_coefs[0]
}

#[test]
fn location_shift_slope_is_flat() {
    let (_, x, g) = single_causal(ExpressionModel::LocationShift, 0.5, 20_000, 5);
    for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let s = qr_slope(&x, &g, tau);
        assert!((s - 0.5).abs() < 0.08, "tau {tau}: {s}");
    }
}

#[test]
fn local_signal_acts_above_point_seven() {
    let beta = 0.5;
    let (_, x, g) = single_causal(ExpressionModel::LocalSignal, beta, 40_000, 6);
    let s5 = qr_slope(&x, &g, 0.5);
    let s9 = qr_slope(&x, &g, 0.9);
    let expected = 5.0 * (0.9 - 0.7) / 0.3 * beta;
    assert!(s5.abs() < 0.05, "median slope {s5}");
    assert!((s9 - expected).abs() < 0.15, "0.9 slope {s9} vs {expected}");
}

#[test]
fn sin_effect_vanishes_at_the_median() {
    // amplitude small enough that F⁻¹(u) + sin(2πu)·g stays increasing in u
    let b = 0.15;
    let (_, x, g) = single_causal(ExpressionModel::SinTau, b, 40_000, 7);
    let s25 = qr_slope(&x, &g, 0.25);
    let s50 = qr_slope(&x, &g, 0.5);
    assert!((s25 - b).abs() < 0.05, "0.25 slope {s25}");
    assert!(s50.abs() < 0.05, "median slope {s50}");
}

#[test]
fn sqrt_effect_grows_with_tau() {
    let b = 0.6;
    let (_, x, g) = single_causal(ExpressionModel::SqrtTau, b, 40_000, 8);
    for tau in [0.16, 0.49, 0.81] {
        let s = qr_slope(&x, &g, tau);
        assert!((s - b * tau.sqrt()).abs() < 0.08, "tau {tau}: {s}");
    }
}

#[test]
fn zero_effects_reduce_every_model_to_the_null_generator() {
    let base = SimConfig {
        beta: 0.0,
        n_covariates: 3,
        ..config(ExpressionModel::LocationShift)
    };
    let layout = layout_with(&base, 9);
    let p = panel(&base, &layout, 10_000, 9);
    let reference = gen_expression(&p, &layout, &base, &mut stream(9, "ref", 0));
    // two-sample KS critical value at level 0.001 for n = m = 10⁴
    let crit = 1.95 * (2.0f64 / 10_000.0).sqrt();
    use ExpressionModel::*;
    for (i, model) in [
        LocationScale,
        LocalSignal,
        SqrtTau,
        SinTau,
        Gei1,
        Gei2,
        Gei3,
    ]
    .into_iter()
    .enumerate()
    {
        let c = SimConfig {
            model,
            ..base.clone()
        };
        let x = gen_expression(&p, &layout, &c, &mut stream(9, "alt", i as u64));
        let d = ks_two_sample(&reference, &x);
        assert!(d < crit, "{model:?}: KS {d}");
    }
}

#[test]
fn location_scale_variance_increases_with_genetic_score() {
    let c = SimConfig {
        beta: 0.5,
        ..config(ExpressionModel::LocationScale)
    };
    let mut layout = layout_with(&c, 10);
    for &j in &layout.causal.clone() {
        layout.maf[j] = 0.4;
    }
    let p = panel(&c, &layout, 20_000, 10);
    let x = gen_expression(&p, &layout, &c, &mut stream(10, "x", 0));
    let g = genetic_score(&p, &layout.causal, c.beta);
    let max_level = 2 * layout.causal.len();
    let variances: Vec<f64> = (0..=max_level)
        .filter_map(|k| {
            let v = k as f64 * c.beta;
            let bin: Vec<f64> = (0..x.len())
                .filter(|&i| (g[i] - v).abs() < 1e-9)
                .map(|i| x[i])
                .collect();
            (bin.len() > 30).then(|| sample_sd(&bin).powi(2))
        })
        .collect();
    assert!(variances.len() >= 3);
    let increases = variances.windows(2).filter(|w| w[1] > w[0]).count();
    assert_eq!(increases, variances.len() - 1, "{variances:?}");
}

#[test]
fn null_gwas_zscores_are_standard_normal() {
    let c = SimConfig {
        p_snps: 10_000,
        n_covariates: 5,
        ..SimConfig::desk(ExpressionModel::Null)
    };
    let layout = layout_with(&c, 11);
    let p = panel(&c, &layout, c.n_gwas, 11);
    let g = gen_gwas_summary(p, &layout, &c, &mut stream(11, "gwas", 0)).unwrap();
    let z: Vec<f64> = g.records().iter().map(|r| r.beta / r.se).collect();
    assert!(mean(&z).abs() < 0.05);
    assert!((sample_sd(&z) - 1.0).abs() < 0.05);
    assert_eq!(g.n_gwas(), Some(c.n_gwas as u64));
}

#[test]
fn causal_snp_z_matches_correlation_identity() {
    let c = SimConfig {
        p_snps: 100,
        beta_gwas: 0.3,
        n_covariates: 2,
        ..SimConfig::desk(ExpressionModel::LocationShift)
    };
    let mut layout = layout_with(&c, 12);
    layout.maf[layout.causal[0]] = 0.3;
    let p = panel(&c, &layout, 2000, 12);
    let sampler = GwasSampler::new(p, &layout, c.beta_gwas).unwrap();
    let y = sampler.trait_values(&mut stream(12, "y", 0));
    let g = sampler.summarize(&y).unwrap();
    let j = layout.causal[0];
    let id = GeneLayout::snp_id(j);
    // partial correlation: Y residualized on [1, C] by least squares
    let panel = sampler.panel();
    let n = y.len();
    let base = DMatrix::from_fn(n, 3, |i, k| {
        if k == 0 {
            1.0
        } else {
            panel.covariates()[(i, k - 1)]
        }
    });
    let yv = nalgebra::DVector::from_column_slice(&y);
    let coef = base.clone().svd(true, true).solve(&yv, 1e-12).unwrap();
    let resid = &yv - &base * coef;
    let r = pearson(panel.dosage_column(j), resid.as_slice()).unwrap();
    let expected = (n as f64).sqrt() * r;
    let z = g.zscore(&id).unwrap();
    assert!(expected > 5.0);
    assert!((z - expected).abs() < 0.1 * expected, "z {z} vs {expected}");
}

#[test]
fn gwas_matches_direct_ols() {
    let c = SimConfig {
        p_snps: 20,
        beta_gwas: 0.3,
        n_covariates: 3,
        causal_fraction: 0.1,
        ..SimConfig::desk(ExpressionModel::LocationShift)
    };
    let layout = layout_with(&c, 13);
    let p = panel(&c, &layout, 300, 13);
    let sampler = GwasSampler::new(p.clone(), &layout, c.beta_gwas).unwrap();
    let y = sampler.trait_values(&mut stream(13, "y", 0));
    let g = sampler.summarize(&y).unwrap();
    for j in [0, 7, 19] {
        let design = DMatrix::from_fn(300, 5, |i, k| match k {
            0 => 1.0,
            4 => p.dosage_column(j)[i],
            _ => p.covariates()[(i, k - 1)],
        });
        let yv = nalgebra::DVector::from_column_slice(&y);
        let xtx = design.transpose() * &design;
        let inv = xtx.try_inverse().unwrap();
        let coef = &inv * design.transpose() * &yv;
        let resid = &yv - &design * &coef;
        let s2 = dot(resid.as_slice(), resid.as_slice()) / (300.0 - 5.0);
        let se = (s2 * inv[(4, 4)]).sqrt();
        let rec = g.get(&GeneLayout::snp_id(j)).unwrap();
        assert!((rec.beta - coef[4]).abs() < 1e-10);
        assert!((rec.se - se).abs() < 1e-10);
    }
}

#[test]
fn duplicated_snp_columns_give_identical_rows() {
    let c = SimConfig {
        p_snps: 20,
        causal_fraction: 0.05,
        n_covariates: 2,
        ..SimConfig::desk(ExpressionModel::LocationShift)
    };
    let layout = layout_with(&c, 14);
    let p = panel(&c, &layout, 400, 14);
    let j = layout.causal[0];
    let mut dos = p.dosages().clone().insert_column(20, 0.0);
    dos.set_column(20, &p.dosages().column(j));
    let mut ids: Vec<(String, u64)> = p
        .snps()
        .iter()
        .map(|s| (s.id.clone(), s.position))
        .collect();
    ids.push(("copy".into(), 20));
    let dup =
        GenotypePanel::new(p.sample_ids().to_vec(), ids, dos, p.covariates().clone()).unwrap();
    let g: GwasSummary = gen_gwas_summary(dup, &layout, &c, &mut stream(14, "gwas", 0)).unwrap();
    let a = g.get(&GeneLayout::snp_id(j)).unwrap();
    let b = g.get("copy").unwrap();
    assert_eq!((a.beta, a.se, a.n), (b.beta, b.se, b.n));
}

#[test]
fn cauchy_errors_are_clamped() {
    assert_eq!(error_quantile(ErrorDist::Cauchy, 1e-300), -CAUCHY_CLAMP);
    assert_eq!(error_quantile(ErrorDist::Cauchy, 1.0), CAUCHY_CLAMP);
    assert!((error_quantile(ErrorDist::Cauchy, 0.75) - 1.0).abs() < 1e-12);
    assert!((error_quantile(ErrorDist::Normal, 0.975) - 1.959963984540054).abs() < 1e-9);
}

#[test]
fn config_validation_and_json() {
    assert!(SimConfig::default().validate().is_ok());
    let bad = SimConfig {
        causal_fraction: 0.001,
        ..SimConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = SimConfig {
        partitions: vec![6],
        ..SimConfig::default()
    };
    assert!(bad.validate().is_err());
    let c = SimConfig::desk(ExpressionModel::Gei3);
    let text = serde_json::to_string(&c).unwrap();
    assert!(text.contains("\"gei3\""));
    assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), c);
    let partial: SimConfig =
        serde_json::from_str(r#"{"model": "sin_tau", "replicates": 3}"#).unwrap();
    assert_eq!(partial.replicates, 3);
    assert_eq!(partial.n_gwas, 1000);
    assert!(serde_json::from_str::<SimConfig>(r#"{"replicate": 3}"#).is_err());
}

fn tiny(model: ExpressionModel) -> SimConfig {
    SimConfig {
        n_train: 150,
        n_gwas: 300,
        p_snps: 40,
        causal_fraction: 0.05,
        replicates: 4,
        traits_per_gene: 2,
        beta: 0.8,
        beta_gwas: 0.3,
        seed: 77,
        ..SimConfig::for_model(model)
    }
}

#[test]
fn same_seed_gives_identical_reports_across_thread_counts() {
    let c = tiny(ExpressionModel::LocationShift);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| serde_json::to_string(&run_experiment(&c).unwrap()).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
    let other = SimConfig { seed: 78, ..c };
    assert_ne!(
        a,
        serde_json::to_string(&run_experiment(&other).unwrap()).unwrap()
    );
}

#[test]
fn report_tabulates_every_test() {
    let c = tiny(ExpressionModel::LocationShift);
    let r = run_experiment(&c).unwrap();
    assert_eq!(r.n_tests, 8);
    assert_eq!(r.tests.len(), 8);
    assert_eq!(r.screens.len(), 4);
    let methods: Vec<&str> = r.rejection.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(methods, ["linear", "unified", "K=3", "K=4", "K=5", "K=9"]);
    assert_eq!(r.region_power.len(), 4);
    assert_eq!(r.region_selection.len(), 4);
    for m in &r.rejection {
        assert_eq!(m.rates.len(), c.alphas.len());
        // rejection rates are monotone in alpha
        let sorted: Vec<f64> = c
            .alphas
            .iter()
            .map(|&a| r.rate(&m.method, a).unwrap())
            .collect();
        assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
    }
    let unified_at_05 = r.tests.iter().filter(|t| t.unified_p <= 0.05).count() as f64 / 8.0;
    assert_eq!(r.rate("unified", 0.05), Some(unified_at_05));
}
