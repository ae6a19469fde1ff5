//! `qtwas` command-line interface.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use qtwas::baseline::ElasticNetOptions;
use qtwas::io::{self, ExpressionTable};
use qtwas::rng::gene_stream;
use qtwas::simulation::ReplicateData;
use qtwas::{
    cauchy_combine, linear_test_gene, run_experiment, screen_gene, test_gene, Error, GeneModel,
    GeneTrainer, LinearGeneModel, RegionPartition, ScreenOptions, SimConfig, TrainOptions,
};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "qtwas",
    version,
    about = "Quantile-process transcriptome-wide association testing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-gene quantile models and linear baseline models.
    Train(TrainArgs),
    /// Report the SNPs selected per region for one partition.
    Screen(ScreenArgs),
    /// Test trained genes against GWAS summary statistics.
    Test(TestArgs),
    /// Run a simulation experiment and write its tables.
    Simulate(SimulateArgs),
    /// Combine p-values with the Cauchy rule.
    Combine(CombineArgs),
}

#[derive(Args)]
struct Threads {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,9")]
    partitions: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the linear baseline's cross-validation folds.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    genotypes: PathBuf,
    #[arg(long)]
    expression: PathBuf,
    #[arg(long)]
    partition: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    gwas: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the uniform draws given to untestable partitions.
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: u64,
    /// Also write replicate 0 as input files (`genotypes.tsv`,
    /// `expression.tsv`, `gwas.tsv`) into this directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args)]
struct CombineArgs {
    #[arg(long)]
    pvalues: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => with_threads(&a.threads, || train(&a)),
        Command::Screen(a) => with_threads(&a.threads, || screen(&a)),
        Command::Test(a) => with_threads(&a.threads, || test(&a)),
        Command::Simulate(a) => with_threads(&a.threads, || simulate(&a)),
        Command::Combine(a) => {
            let ps = io::read_pvalues(&a.pvalues)?;
            println!("{}", cauchy_combine(&ps)?);
            Ok(())
        }
    }
}

fn with_threads<T: Send>(
    t: &Threads,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = t.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        builder = builder.num_threads(n);
    }
    builder.build()?.install(f)
}

fn load_training(
    genotypes: &Path,
    expression: &Path,
) -> anyhow::Result<(qtwas::GenotypePanel, ExpressionTable)> {
    let panel = io::read_genotype_tsv(genotypes)?;
    let table = io::read_expression_tsv(expression)?;
    table.check_aligned(&panel)?;
    Ok((panel, table))
}

/// Gene ids become file names, so they must not contain path separators.
fn check_gene_id(id: &str) -> anyhow::Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        bail!("gene id `{id}` cannot be used as a file name");
    }
    Ok(())
}

fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let (panel, table) = load_training(&a.genotypes, &a.expression)?;
    let partitions = a
        .partitions
        .iter()
        .map(|&k| RegionPartition::catalogue(k))
        .collect::<qtwas::Result<Vec<_>>>()?;
    for g in &table.genes {
        check_gene_id(g)?;
    }
    let trained = table
        .genes
        .par_iter()
        .zip(table.values.par_iter())
        .map(|(gene, x)| {
            let models = GeneTrainer::new(&panel, x, &partitions, TrainOptions::default())?
                .train(gene)?
                .models;
            let linear =
                LinearGeneModel::train(&panel, x, gene, a.seed, &ElasticNetOptions::default())?;
            Ok((models, linear))
        })
        .collect::<qtwas::Result<Vec<_>>>()
        .context("training failed")?;
    let linear_dir = a.out.join("linear");
    std::fs::create_dir_all(&linear_dir)
        .with_context(|| format!("creating {}", linear_dir.display()))?;
    for (models, linear) in &trained {
        for m in models {
            io::write_gene_model(
                &a.out.join(format!("{}.K{}.json", m.gene_id, m.partition.k)),
                m,
            )?;
        }
        io::write_linear_model(&linear_dir.join(format!("{}.json", linear.gene_id)), linear)?;
    }
    let testable = trained
        .iter()
        .filter(|(m, _)| m.iter().any(GeneModel::is_testable))
        .count();
    eprintln!(
        "trained {} genes, {testable} with at least one valid region",
        trained.len()
    );
    Ok(())
}

fn screen(a: &ScreenArgs) -> anyhow::Result<()> {
    let (panel, table) = load_training(&a.genotypes, &a.expression)?;
    let partition = RegionPartition::catalogue(a.partition)?;
    let results = table
        .values
        .par_iter()
        .map(|x| screen_gene(&panel, x, &partition, &ScreenOptions::default()))
        .collect::<qtwas::Result<Vec<_>>>()?;
    let mut lines = vec!["gene_id\tregion\ttau_lo\ttau_hi\tsnp_id\tscreen_p\tpruned".to_string()];
    for (gene, regions) in table.genes.iter().zip(&results) {
        for (j, r) in regions.iter().enumerate() {
            for id in &r.fdr_selected {
                let p = r.p_of(id).expect("selected SNPs have a screening p-value");
                lines.push(format!(
                    "{gene}\tA{}\t{}\t{}\t{id}\t{}\t{}",
                    j + 1,
                    io::fmt_f64(r.region.lo),
                    io::fmt_f64(r.region.hi),
                    io::fmt_f64(p),
                    r.pruned_selected.contains(id)
                ));
            }
        }
    }
    let text = lines.join("\n") + "\n";
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn test(a: &TestArgs) -> anyhow::Result<()> {
    let models = io::read_model_dir(&a.models)?;
    if models.is_empty() {
        bail!("no model files (*.json) in {}", a.models.display());
    }
    let gwas = io::read_gwas_tsv(&a.gwas)?;
    let mut by_gene: BTreeMap<String, Vec<GeneModel>> = BTreeMap::new();
    for m in models {
        by_gene.entry(m.gene_id.clone()).or_default().push(m);
    }
    let mut ks: Vec<usize> = by_gene.values().flatten().map(|m| m.partition.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let genes: Vec<(String, Vec<GeneModel>)> = by_gene.into_iter().collect();
    let results = genes
        .par_iter()
        .map(|(gene, ms)| test_gene(ms, &gwas, &mut gene_stream(a.seed, gene)))
        .collect::<qtwas::Result<Vec<_>>>()?;

    let linear_dir = a.models.join("linear");
    let linear = if linear_dir.is_dir() {
        genes
            .par_iter()
            .map(|(gene, _)| {
                let path = linear_dir.join(format!("{gene}.json"));
                if !path.exists() {
                    return Ok(None);
                }
                match linear_test_gene(&io::read_linear_model(&path)?, &gwas) {
                    Ok(p) => Ok(Some(p)),
                    Err(Error::Untestable(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<qtwas::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    io::write_association_tsv(&a.out, &ks, &results, &linear)?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: SimConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    config.seed = a.seed;
    config.validate()?;
    let report = run_experiment(&config)?;
    io::write_report(&a.out, &report)?;
    if let Some(dir) = &a.data {
        write_dataset(dir, &config)?;
    }
    Ok(())
}

fn write_dataset(dir: &Path, config: &SimConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut data = ReplicateData::generate(config, 0)?;
    io::write_genotype_tsv(&dir.join("genotypes.tsv"), &data.train)?;
    let table = ExpressionTable {
        sample_ids: data.train.sample_ids().to_vec(),
        genes: vec![data.gene_id()],
        values: vec![data.expression.clone()],
    };
    io::write_expression_tsv(&dir.join("expression.tsv"), &table)?;
    io::write_gwas_tsv(&dir.join("gwas.tsv"), &data.next_summary()?)?;
    Ok(())
}
