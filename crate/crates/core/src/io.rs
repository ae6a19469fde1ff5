//! File formats: genotype, expression, GWAS and p-value TSVs, model JSON and
//! simulation reports.
//!
//! Writers are deterministic: floats use 17 significant digits, JSON keys
//! keep declaration order. Readers reject malformed cells with the file,
//! line and column of the offending value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::LinearGeneModel;
use crate::error::{Error, Result};
use crate::simulation::ExperimentReport;
use crate::types::{AssociationResult, GeneModel, GenotypePanel, GwasRecord, GwasSummary};

/// Schema tag written into, and required from, every model file.
pub const MODEL_SCHEMA: &str = "qtwas_model_v1";

/// Schema tag of linear baseline model files.
pub const LINEAR_SCHEMA: &str = "qtwas_linear_v1";

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Sidecar path holding the covariates of a genotype file.
pub fn covariate_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cov.tsv");
    PathBuf::from(s)
}

/// A TSV read into a header and rows of raw cells, with 1-based line
/// numbers kept for error messages.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .flexible(true)
            .quoting(false)
            .from_reader(file);
        let mut header = None;
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                match e.into_kind() {
                    csv::ErrorKind::Io(io) => io_err(path, io),
                    other => parse_err(path, line, 0, format!("{other:?}")),
                }
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let cells: Vec<String> = rec.iter().map(str::to_string).collect();
            if cells.len() == 1 && cells[0].trim().is_empty() {
                continue;
            }
            match &header {
                None => header = Some(cells),
                Some(h) => {
                    if cells.len() != h.len() {
                        return Err(parse_err(
                            path,
                            line,
                            cells.len().min(h.len()) + 1,
                            format!("expected {} fields, found {}", h.len(), cells.len()),
                        ));
                    }
                    rows.push((line, cells));
                }
            }
        }
        let header = header.ok_or_else(|| parse_err(path, 1, 1, "file is empty"))?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn expect_header(&self, col: usize, name: &str) -> Result<()> {
        match self.header.get(col) {
            Some(h) if h == name => Ok(()),
            Some(h) => Err(parse_err(
                &self.path,
                1,
                col + 1,
                format!("expected header `{name}`, found `{h}`"),
            )),
            None => Err(parse_err(
                &self.path,
                1,
                col + 1,
                format!("missing header `{name}`"),
            )),
        }
    }

    fn float(&self, row: usize, col: usize) -> Result<f64> {
        let (line, cells) = &self.rows[row];
        let cell = &cells[col];
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_err(
                &self.path,
                *line,
                col + 1,
                format!("`{cell}` is not a finite number"),
            )),
        }
    }

    fn error(&self, row: usize, col: usize, message: impl Into<String>) -> Error {
        parse_err(&self.path, self.rows[row].0, col + 1, message)
    }

    /// Sample ids from column 0 and the numeric matrix of the other columns.
    fn id_matrix(&self) -> Result<(Vec<String>, DMatrix<f64>)> {
        self.expect_header(0, "iid")?;
        let ids = self.rows.iter().map(|(_, c)| c[0].clone()).collect();
        let p = self.header.len() - 1;
        let mut m = DMatrix::zeros(self.rows.len(), p);
        for i in 0..self.rows.len() {
            for j in 0..p {
                m[(i, j)] = self.float(i, j + 1)?;
            }
        }
        Ok((ids, m))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads `iid<TAB>snp…` with dosages in {0,1,2}, plus the optional
/// `<path>.cov.tsv` sidecar (`iid<TAB>cov…`, same individuals in the same
/// order). SNP positions are the column order.
pub fn read_genotype_tsv(path: &Path) -> Result<GenotypePanel> {
    let table = Table::read(path)?;
    let (ids, dosages) = table.id_matrix()?;
    for i in 0..dosages.nrows() {
        for j in 0..dosages.ncols() {
            let d = dosages[(i, j)];
            if d != 0.0 && d != 1.0 && d != 2.0 {
                return Err(table.error(
                    i,
                    j + 1,
                    format!("dosage `{}` is not 0, 1 or 2", table.rows[i].1[j + 1]),
                ));
            }
        }
    }
    let snps = table.header[1..]
        .iter()
        .enumerate()
        .map(|(j, id)| (id.clone(), j as u64))
        .collect();
    let cov_path = covariate_path(path);
    let covariates = if cov_path.exists() {
        let cov = Table::read(&cov_path)?;
        let (cov_ids, m) = cov.id_matrix()?;
        if cov_ids.len() != ids.len() {
            return Err(parse_err(
                &cov_path,
                1,
                1,
                format!("{} rows, genotype file has {}", cov_ids.len(), ids.len()),
            ));
        }
        if let Some(i) = (0..ids.len()).find(|&i| cov_ids[i] != ids[i]) {
            return Err(cov.error(
                i,
                0,
                format!(
                    "individual `{}` differs from genotype row `{}`",
                    cov_ids[i], ids[i]
                ),
            ));
        }
        m
    } else {
        DMatrix::zeros(ids.len(), 0)
    };
    GenotypePanel::new(ids, snps, dosages, covariates).map_err(|e| match e {
        Error::Parse { .. } | Error::Io { .. } => e,
        other => parse_err(path, 0, 0, other.to_string()),
    })
}

/// Writes the genotype TSV and, when the panel has covariates, its sidecar.
pub fn write_genotype_tsv(path: &Path, panel: &GenotypePanel) -> Result<()> {
    let header = std::iter::once("iid".to_string())
        .chain(panel.snps().iter().map(|s| s.id.clone()))
        .collect::<Vec<_>>()
        .join("\t");
    let dos = panel.dosages();
    let rows = (0..panel.n_individuals()).map(|i| {
        std::iter::once(panel.sample_ids()[i].clone())
            .chain((0..panel.n_snps()).map(|j| format!("{}", dos[(i, j)] as u8)))
            .collect::<Vec<_>>()
            .join("\t")
    });
    write_lines(path, std::iter::once(header).chain(rows))?;
    if panel.n_covariates() > 0 {
        let cov = panel.covariates();
        let header = std::iter::once("iid".to_string())
            .chain((0..panel.n_covariates()).map(|k| format!("cov{}", k + 1)))
            .collect::<Vec<_>>()
            .join("\t");
        let rows = (0..panel.n_individuals()).map(|i| {
            std::iter::once(panel.sample_ids()[i].clone())
                .chain((0..panel.n_covariates()).map(|k| fmt_f64(cov[(i, k)])))
                .collect::<Vec<_>>()
                .join("\t")
        });
        write_lines(&covariate_path(path), std::iter::once(header).chain(rows))?;
    }
    Ok(())
}

/// Expression of several genes over the same individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTable {
    pub sample_ids: Vec<String>,
    pub genes: Vec<String>,
    /// One vector per gene, aligned with `sample_ids`.
    pub values: Vec<Vec<f64>>,
}

impl ExpressionTable {
    pub fn gene(&self, id: &str) -> Option<&[f64]> {
        self.genes
            .iter()
            .position(|g| g == id)
            .map(|i| self.values[i].as_slice())
    }

    /// Fails unless the individuals match `panel` row for row.
    pub fn check_aligned(&self, panel: &GenotypePanel) -> Result<()> {
        if self.sample_ids != panel.sample_ids() {
            return Err(Error::invalid(
                "expression and genotype files list different individuals",
            ));
        }
        Ok(())
    }
}

/// Reads `iid<TAB>gene…` with one row per individual.
pub fn read_expression_tsv(path: &Path) -> Result<ExpressionTable> {
    let table = Table::read(path)?;
    let (ids, m) = table.id_matrix()?;
    let genes: Vec<String> = table.header[1..].to_vec();
    let mut seen = std::collections::HashSet::new();
    for (j, g) in genes.iter().enumerate() {
        if !seen.insert(g) {
            return Err(parse_err(path, 1, j + 2, format!("duplicate gene `{g}`")));
        }
    }
    Ok(ExpressionTable {
        sample_ids: ids,
        values: (0..genes.len())
            .map(|j| m.column(j).iter().copied().collect())
            .collect(),
        genes,
    })
}

pub fn write_expression_tsv(path: &Path, table: &ExpressionTable) -> Result<()> {
    let header = std::iter::once("iid".to_string())
        .chain(table.genes.iter().cloned())
        .collect::<Vec<_>>()
        .join("\t");
    let rows = (0..table.sample_ids.len()).map(|i| {
        std::iter::once(table.sample_ids[i].clone())
            .chain(table.values.iter().map(|v| fmt_f64(v[i])))
            .collect::<Vec<_>>()
            .join("\t")
    });
    write_lines(path, std::iter::once(header).chain(rows))
}

const GWAS_HEADER: [&str; 4] = ["snp_id", "beta", "se", "n"];

/// Reads `snp_id<TAB>beta<TAB>se<TAB>n`; `se` must be positive and ids unique.
pub fn read_gwas_tsv(path: &Path) -> Result<GwasSummary> {
    let table = Table::read(path)?;
    for (c, name) in GWAS_HEADER.iter().enumerate() {
        table.expect_header(c, name)?;
    }
    if table.header.len() != GWAS_HEADER.len() {
        return Err(parse_err(path, 1, 5, "unexpected extra column"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(table.rows.len());
    for (r, (_, cells)) in table.rows.iter().enumerate() {
        let beta = table.float(r, 1)?;
        let se = table.float(r, 2)?;
        if !(se > 0.0) {
            return Err(table.error(
                r,
                2,
                format!("standard error `{}` must be positive", cells[2]),
            ));
        }
        let n: u64 = cells[3]
            .parse()
            .map_err(|_| table.error(r, 3, format!("`{}` is not a sample size", cells[3])))?;
        if !seen.insert(cells[0].clone()) {
            return Err(table.error(r, 0, format!("duplicate SNP id `{}`", cells[0])));
        }
        records.push(
            GwasRecord::new(cells[0].clone(), beta, se, n)
                .map_err(|e| table.error(r, 0, e.to_string()))?,
        );
    }
    GwasSummary::new(records)
}

pub fn write_gwas_tsv(path: &Path, gwas: &GwasSummary) -> Result<()> {
    let rows = gwas
        .records()
        .iter()
        .map(|r| format!("{}\t{}\t{}\t{}", r.id, fmt_f64(r.beta), fmt_f64(r.se), r.n));
    write_lines(path, std::iter::once(GWAS_HEADER.join("\t")).chain(rows))
}

#[derive(Serialize)]
struct DocRef<'a, T> {
    schema: &'a str,
    #[serde(flatten)]
    model: &'a T,
}

fn write_doc<T: Serialize>(path: &Path, schema: &str, model: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&DocRef { schema, model }).map_err(|e| Error::Model {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    write_lines(path, [text])
}

fn read_doc<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<T> {
    let model_err = |message: String| Error::Model {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| model_err(e.to_string()))?;
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(s) if s == schema => {}
        Some(other) => {
            return Err(model_err(format!(
                "unsupported schema `{other}`, expected `{schema}`"
            )))
        }
        None => return Err(model_err("missing `schema` field".into())),
    }
    serde_json::from_value(value).map_err(|e| model_err(e.to_string()))
}

/// Writes a versioned JSON model document; floats use the shortest
/// representation that round-trips exactly.
pub fn write_gene_model(path: &Path, model: &GeneModel) -> Result<()> {
    write_doc(path, MODEL_SCHEMA, model)
}

/// Reads a model document, checking the schema tag and model invariants.
pub fn read_gene_model(path: &Path) -> Result<GeneModel> {
    let model: GeneModel = read_doc(path, MODEL_SCHEMA)?;
    model.validate().map_err(|e| Error::Model {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(model)
}

pub fn write_linear_model(path: &Path, model: &LinearGeneModel) -> Result<()> {
    write_doc(path, LINEAR_SCHEMA, model)
}

/// Reads a linear model document, checking the schema tag and that the
/// per-SNP vectors agree in length.
pub fn read_linear_model(path: &Path) -> Result<LinearGeneModel> {
    let model: LinearGeneModel = read_doc(path, LINEAR_SCHEMA)?;
    let p = model.snps.len();
    if model.weights.len() != p
        || model.snp_sd.len() != p
        || model.ld.len() != p
        || model.ld.iter().any(|r| r.len() != p)
    {
        return Err(Error::Model {
            path: path.to_path_buf(),
            message: "snps, weights, snp_sd and ld disagree in size".into(),
        });
    }
    Ok(model)
}

/// Every `*.json` file in `dir`, sorted by file name.
pub fn read_model_dir(dir: &Path) -> Result<Vec<GeneModel>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_gene_model(p)).collect()
}

/// Reads p-values separated by whitespace or newlines.
pub fn read_pvalues(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (l, line) in text.lines().enumerate() {
        let mut col = 1;
        for tok in line.split_whitespace() {
            match tok.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => out.push(p),
                _ => {
                    return Err(parse_err(
                        path,
                        l + 1,
                        col,
                        format!("`{tok}` is not a p-value in [0, 1]"),
                    ))
                }
            }
            col += 1;
        }
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, 1, "no p-values"));
    }
    Ok(out)
}

/// Per-gene association table. `ks` fixes the partition columns; a gene
/// lacking a partition gets `NA`. A nonempty `linear` (aligned with
/// `results`) adds a `linear_p` column, `NA` where the gene was untestable.
pub fn write_association_tsv(
    path: &Path,
    ks: &[usize],
    results: &[AssociationResult],
    linear: &[Option<f64>],
) -> Result<()> {
    if !linear.is_empty() && linear.len() != results.len() {
        return Err(Error::invalid("linear p-values not aligned with results"));
    }
    let header = std::iter::once("gene_id".to_string())
        .chain(ks.iter().map(|k| format!("p_K{k}")))
        .chain(["unified_p".into(), "fallback".into()])
        .chain(ks.iter().map(|k| format!("fallback_K{k}")))
        .chain((!linear.is_empty()).then(|| "linear_p".to_string()))
        .collect::<Vec<_>>()
        .join("\t");
    let rows = results.iter().enumerate().map(|(i, r)| {
        let mut cells = vec![r.gene_id.clone()];
        for k in ks {
            cells.push(
                r.partition(*k)
                    .map_or("NA".into(), |p| fmt_f64(p.partition_p)),
            );
        }
        cells.push(fmt_f64(r.unified_p));
        cells.push(r.fallback.to_string());
        for k in ks {
            cells.push(
                r.partition(*k)
                    .map_or("NA".into(), |p| p.fallback.to_string()),
            );
        }
        if let Some(p) = linear.get(i) {
            cells.push(opt(*p));
        }
        cells.join("\t")
    });
    write_lines(path, std::iter::once(header).chain(rows))
}

fn opt(p: Option<f64>) -> String {
    p.map_or("NA".into(), fmt_f64)
}

/// Writes `report.json` plus `rejection.tsv`, `region_power.tsv`,
/// `screening.tsv` and `tests.tsv` into `dir`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Model {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    write_lines(&json_path, [json])?;

    let alphas = &report.config.alphas;
    let rate_table = |path: &Path, rows: &[crate::simulation::MethodRates]| {
        let header = std::iter::once("alpha".to_string())
            .chain(rows.iter().map(|m| m.method.clone()))
            .collect::<Vec<_>>()
            .join("\t");
        let body = alphas.iter().enumerate().map(|(i, a)| {
            std::iter::once(fmt_f64(*a))
                .chain(rows.iter().map(|m| fmt_f64(m.rates[i])))
                .collect::<Vec<_>>()
                .join("\t")
        });
        write_lines(path, std::iter::once(header).chain(body))
    };
    rate_table(&dir.join("rejection.tsv"), &report.rejection)?;
    rate_table(&dir.join("region_power.tsv"), &report.region_power)?;

    let mut screen = vec!["set\tselection_rate".to_string()];
    for (j, r) in report.region_selection.iter().enumerate() {
        screen.push(format!("A{}\t{}", j + 1, fmt_f64(*r)));
    }
    screen.push(format!("linear\t{}", fmt_f64(report.linear_selection)));
    write_lines(&dir.join("screening.tsv"), screen)?;

    let ks = &report.config.partitions;
    let n_regions = report.region_power.len();
    let header = ["replicate", "trait", "linear_p", "linear_fallback"]
        .iter()
        .map(|s| s.to_string())
        .chain(ks.iter().map(|k| format!("p_K{k}")))
        .chain((0..n_regions).map(|j| format!("p_A{}", j + 1)))
        .chain(["unified_p".into(), "unified_fallback".into()])
        .collect::<Vec<_>>()
        .join("\t");
    let rows = report.tests.iter().map(|t| {
        [
            t.replicate.to_string(),
            t.trait_index.to_string(),
            fmt_f64(t.linear_p),
            t.linear_fallback.to_string(),
        ]
        .into_iter()
        .chain(t.partition_p.iter().map(|p| fmt_f64(*p)))
        .chain(t.region_p.iter().map(|p| opt(*p)))
        .chain([fmt_f64(t.unified_p), t.unified_fallback.to_string()])
        .collect::<Vec<_>>()
        .join("\t")
    });
    write_lines(&dir.join("tests.tsv"), std::iter::once(header).chain(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn covariate_sidecar_name() {
        assert_eq!(
            covariate_path(Path::new("/d/geno.tsv")),
            PathBuf::from("/d/geno.tsv.cov.tsv")
        );
    }
}
