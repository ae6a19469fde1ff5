//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! Effect sizes for the power experiments were chosen on exploratory seeds
//! at desk scale; the runs here use a separate seed.

mod common;

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{ks_uniform, random_instance, vertex_enumeration_optimum};
use qtwas::baseline::ElasticNetOptions;
use qtwas::expression::integrate_beta;
use qtwas::quantreg::{fit_process, fit_qr, r_q, Design};
use qtwas::rng::{gene_stream, rng_from_seed, stream};
use qtwas::simulation::{ReplicateData, TestRecord};
use qtwas::{
    cauchy_combine, io, linear_test_gene, run_experiment, test_gene, AssociationResult,
    DosagePanel, ErrorDist, ExperimentReport, ExpressionModel, GeneModel, GeneTrainer, GwasRecord,
    GwasSummary, LinearGeneModel, QuantileGrid, Region, RegionPartition, SimConfig, TrainOptions,
};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

const SEED: u64 = 9301;
const POWER_ALPHA: f64 = 1e-3;
const POWER_REPS: usize = 300;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk(model: ExpressionModel, beta: f64, beta_gwas: f64) -> SimConfig {
    SimConfig {
        beta,
        beta_gwas,
        replicates: POWER_REPS,
        alphas: vec![0.05, POWER_ALPHA],
        seed: SEED,
        ..SimConfig::desk(model)
    }
}

fn run(config: SimConfig) -> ExperimentReport {
    run_experiment(&config).expect("simulation failed")
}

fn power(report: &ExperimentReport, method: &str) -> f64 {
    report
        .rate(method, POWER_ALPHA)
        .expect("method missing from report")
}

static LOCATION_SHIFT: OnceLock<ExperimentReport> = OnceLock::new();
static LOCAL_SIGNAL: OnceLock<ExperimentReport> = OnceLock::new();

fn location_shift() -> &'static ExperimentReport {
    LOCATION_SHIFT.get_or_init(|| run(desk(ExpressionModel::LocationShift, 0.7, 0.3)))
}

fn local_signal() -> &'static ExperimentReport {
    LOCAL_SIGNAL.get_or_init(|| run(desk(ExpressionModel::LocalSignal, 0.4, 0.25)))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn quantile_solver_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(SEED);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let d = 1 + inst % 4;
        let n = rng.random_range(d + 2..=[50, 50, 40, 25][d - 1]);
        let (design, y) = random_instance(&mut rng, n, d);
        for tau in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let oracle = vertex_enumeration_optimum(design.matrix(), &y, tau);
            let fit = fit_qr(&y, &design, tau).unwrap();
            worst = worst.max((fit.objective - oracle).abs() / oracle.max(1e-12));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("max relative objective gap {worst:.2e} over 100 fits"),
    )
}

fn null_calibration() -> Outcome {
    let config = SimConfig {
        replicates: 500,
        traits_per_gene: 100,
        alphas: vec![0.05, 1e-3],
        seed: SEED,
        ..SimConfig::desk(ExpressionModel::Null)
    };
    let r = run(config);
    let u05 = r.rate("unified", 0.05).unwrap();
    let u001 = r.rate("unified", 1e-3).unwrap();
    let l05 = r.rate("linear", 0.05).unwrap();
    outcome(
        r.n_tests >= 50_000
            && (0.045..=0.056).contains(&u05)
            && (5e-4..=2e-3).contains(&u001)
            && (0.044..=0.057).contains(&l05),
        format!(
            "{} tests; unified {u05:.4} at 0.05, {u001:.5} at 1e-3; linear {l05:.4} at 0.05",
            r.n_tests
        ),
    )
}

/// One-sided sign test on discordant pairs: P(X ≥ wins), X ~ Bin(n, 1/2).
fn sign_test(tests: &[TestRecord], alpha: f64) -> (u64, u64, f64) {
    let wins = tests
        .iter()
        .filter(|t| t.unified_p < alpha && t.linear_p >= alpha)
        .count() as u64;
    let losses = tests
        .iter()
        .filter(|t| t.linear_p < alpha && t.unified_p >= alpha)
        .count() as u64;
    let n = wins + losses;
    let p = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, n).unwrap().sf(wins - 1)
    };
    (wins, losses, p)
}

fn local_signal_power() -> Outcome {
    let r = local_signal();
    let (q, l) = (power(r, "unified"), power(r, "linear"));
    let (wins, losses, p) = sign_test(&r.tests, POWER_ALPHA);
    outcome(
        r.n_tests >= POWER_REPS && q >= 1.5 * l && p < 0.01,
        format!("unified {q:.3} vs linear {l:.3} (ratio {:.2}); discordant {wins}:{losses}, sign-test p {p:.2e}", q / l),
    )
}

fn smooth_quantile_effects() -> Outcome {
    let sin = run(desk(ExpressionModel::SinTau, 3.0, 0.3));
    let sqrt = run(desk(ExpressionModel::SqrtTau, 0.4, 0.3));
    let (sq, sl) = (power(&sin, "unified"), power(&sin, "linear"));
    let (rq, rl) = (power(&sqrt, "unified"), power(&sqrt, "linear"));
    outcome(
        sl < 0.15 && sq > 0.6 && rq >= rl,
        format!("sin: unified {sq:.3}, linear {sl:.3}; sqrt: unified {rq:.3}, linear {rl:.3}"),
    )
}

fn location_shift_parity() -> Outcome {
    let normal = location_shift();
    let cauchy = run(SimConfig {
        error: ErrorDist::Cauchy,
        ..desk(ExpressionModel::LocationShift, 0.7, 0.3)
    });
    let (nq, nl) = (power(normal, "unified"), power(normal, "linear"));
    let (cq, cl) = (power(&cauchy, "unified"), power(&cauchy, "linear"));
    outcome(
        (nq - nl).abs() <= 0.05 && cq > cl,
        format!("normal: unified {nq:.3}, linear {nl:.3}; cauchy: unified {cq:.3}, linear {cl:.3}"),
    )
}

fn selection_rate(report: &ExperimentReport, region: usize, reps: usize) -> f64 {
    let screens = &report.screens[..reps];
    screens
        .iter()
        .filter(|s| s.region_cc[region] > 0.95)
        .count() as f64
        / reps as f64
}

fn screening_fidelity() -> Outcome {
    let ls = location_shift();
    let ls_rates: Vec<f64> = (0..4).map(|j| selection_rate(ls, j, 200)).collect();
    let local = local_signal();
    let reps = local.screens.len();
    let top = selection_rate(local, 3, reps);
    let middle = selection_rate(local, 1, reps).max(selection_rate(local, 2, reps));
    outcome(
        ls_rates.iter().all(|&r| r >= 0.85) && top > 0.0 && top >= 5.0 * middle,
        format!("location shift per region {ls_rates:.3?}; local signal top {top:.3} vs middle max {middle:.3}"),
    )
}

fn cauchy_combination() -> Outcome {
    let mut rng = stream(SEED, "acceptance-cauchy", 0);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            let ps: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            cauchy_combine(&ps).unwrap()
        })
        .collect();
    let ks = ks_uniform(&draws);

    let mut violations = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=10);
        let ps: Vec<f64> = (0..len).map(|_| rng.random_range(1e-12..1.0)).collect();
        let base = cauchy_combine(&ps).unwrap();
        let mut shuffled = ps.clone();
        shuffled.shuffle(&mut rng);
        if !rel_close(cauchy_combine(&shuffled).unwrap(), base, 1e-12) {
            violations += 1;
        }
        let mut smaller = ps.clone();
        let j = rng.random_range(0..len);
        smaller[j] *= rng.random::<f64>();
        if cauchy_combine(&smaller).unwrap() > base * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    outcome(
        ks < 0.01 && violations == 0,
        format!(
            "KS distance {ks:.4} over 1e5 draws; {violations} property violations over 1e4 lists"
        ),
    )
}

fn all_p(r: &AssociationResult) -> Vec<f64> {
    r.partitions
        .iter()
        .flat_map(|p| p.regions.iter().filter_map(|g| g.p).chain([p.partition_p]))
        .chain([r.unified_p])
        .collect()
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn trained(panel: &(impl qtwas::Genotypes + ?Sized), x: &[f64]) -> Vec<GeneModel> {
    GeneTrainer::new(
        panel,
        x,
        &RegionPartition::standard_set(),
        TrainOptions::default(),
    )
    .unwrap()
    .train("gene")
    .unwrap()
    .models
}

fn invariances() -> Outcome {
    let config = desk(ExpressionModel::LocationShift, 0.5, 0.2);
    let mut data = ReplicateData::generate(&config, 0).unwrap();
    let gwas = data.next_summary().unwrap();
    let models = trained(&data.train, &data.expression);
    let linear = LinearGeneModel::train(
        &data.train,
        &data.expression,
        "gene",
        SEED,
        &ElasticNetOptions::default(),
    )
    .unwrap();
    let test = |models: &[GeneModel], g: &GwasSummary| {
        test_gene(models, g, &mut gene_stream(SEED, "gene")).unwrap()
    };
    let base = test(&models, &gwas);

    // joint (beta, se) rescaling of the summary statistics
    let mut rng = stream(SEED, "acceptance-rescale", 0);
    let rescaled = GwasSummary::new(
        gwas.records()
            .iter()
            .map(|r| {
                let c = rng.random_range(0.05..20.0);
                GwasRecord::new(r.id.clone(), c * r.beta, c * r.se, r.n).unwrap()
            })
            .collect(),
    )
    .unwrap();
    let scaled = test(&models, &rescaled);
    let mut gwas_gap = max_rel_gap(&all_p(&base), &all_p(&scaled));
    gwas_gap = gwas_gap.max(max_rel_gap(
        &[linear_test_gene(&linear, &gwas).unwrap()],
        &[linear_test_gene(&linear, &rescaled).unwrap()],
    ));

    // recoding every SNP as 2z
    let mut doubled = DosagePanel::from_panel(&data.train);
    for j in 0..data.train.n_snps() {
        doubled = doubled.rescale_snp(j, 2.0).unwrap();
    }
    let recoded = trained(&doubled, &data.expression);
    let mut pred_gap = 0.0f64;
    for (a, b) in models.iter().zip(&recoded) {
        for (ra, rb) in a.regions.iter().zip(&b.regions) {
            assert_eq!(ra.snps, rb.snps, "recoding changed the selected SNPs");
            if ra.is_valid() {
                pred_gap = pred_gap.max(max_rel_gap(
                    &ra.predict(&data.train).unwrap(),
                    &rb.predict(&doubled).unwrap(),
                ));
            }
        }
    }
    let recode_gap = max_rel_gap(&all_p(&base), &all_p(&test(&recoded, &gwas)));

    // additivity of the region integral over adjacent regions sharing a grid point
    let design = Design::from_panel(&data.train, &[0, 1, 2]).unwrap();
    let process = fit_process(&data.expression, &design, &QuantileGrid::standard()).unwrap();
    let mut additivity = 0.0f64;
    for _ in 0..50 {
        let mut cuts: Vec<usize> = (0..3).map(|_| rng.random_range(5..=95)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        if cuts.len() < 3 {
            continue;
        }
        let region = |a: usize, b: usize| Region::new(a as f64 / 100.0, b as f64 / 100.0).unwrap();
        let whole = integrate_beta(&process, &region(cuts[0], cuts[2])).unwrap();
        let left = integrate_beta(&process, &region(cuts[0], cuts[1])).unwrap();
        let right = integrate_beta(&process, &region(cuts[1], cuts[2])).unwrap();
        for j in 0..whole.len() {
            additivity = additivity.max((whole[j] - left[j] - right[j]).abs());
        }
    }

    // R^Q bounds on random nested designs
    let mut rq_outside = 0;
    let mut rq_rng = stream(SEED, "acceptance-rq", 0);
    for _ in 0..1000 {
        let n = rq_rng.random_range(20..80);
        let d = rq_rng.random_range(2..5);
        let (cov_design, y) = random_instance(&mut rq_rng, n, d);
        let cov = cov_design.matrix().columns(1, d - 1).into_owned();
        let k = rq_rng.random_range(1..=3);
        let snps: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rq_rng.random_range(0..3) as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = snps.iter().map(Vec::as_slice).collect();
        let Ok(full) = Design::new(&cov, &refs) else {
            continue;
        };
        let tau = rq_rng.random_range(0.05..0.95);
        match r_q(&y, &full, &full.null(), tau) {
            Ok(v) if (0.0..=1.0).contains(&v) => {}
            Ok(_) => rq_outside += 1,
            Err(_) => {}
        }
    }

    outcome(
        gwas_gap <= 1e-12 && recode_gap <= 1e-6 && pred_gap <= 1e-6 && additivity <= 1e-10 && rq_outside == 0,
        format!(
            "GWAS rescaling gap {gwas_gap:.1e}; recoding p gap {recode_gap:.1e}, prediction gap {pred_gap:.1e}; \
             additivity {additivity:.1e}; R^Q outside [0,1]: {rq_outside}"
        ),
    )
}

fn files_equal(a: &Path, b: &Path) -> bool {
    [
        "report.json",
        "rejection.tsv",
        "region_power.tsv",
        "screening.tsv",
        "tests.tsv",
    ]
    .iter()
    .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
}

fn determinism() -> Outcome {
    let config = SimConfig {
        replicates: 6,
        traits_per_gene: 2,
        seed: SEED,
        ..SimConfig::desk(ExpressionModel::LocalSignal)
    };
    let dir = tempfile::tempdir().unwrap();
    let write = |threads: usize| {
        let out = dir.path().join(format!("threads{threads}"));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let report = pool.install(|| run_experiment(&config)).unwrap();
        io::write_report(&out, &report).unwrap();
        out
    };
    let (one, three) = (write(1), write(3));
    let again = write(1);
    outcome(
        files_equal(&one, &three) && files_equal(&one, &again),
        "report files byte-identical across 1 and 3 threads and a repeat run".into(),
    )
}

fn gei_robustness() -> Outcome {
    let r = run(desk(ExpressionModel::Gei3, 0.1, 0.15));
    let (q, l) = (power(&r, "unified"), power(&r, "linear"));
    outcome(q >= l, format!("unified {q:.3} vs linear {l:.3}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        (
            "quantile solver matches vertex enumeration",
            quantile_solver_oracle,
        ),
        ("null calibration", null_calibration),
        ("local signal power ordering", local_signal_power),
        ("smooth quantile effects", smooth_quantile_effects),
        ("location shift parity", location_shift_parity),
        ("screening fidelity", screening_fidelity),
        ("Cauchy combination", cauchy_combination),
        ("invariances", invariances),
        ("determinism", determinism),
        ("GEI model 3 robustness", gei_robustness),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} [{:>2}] {name}: {} ({:.1?})",
            i + 1,
            o.detail,
            start.elapsed()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
