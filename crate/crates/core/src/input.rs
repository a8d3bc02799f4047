//! Observed quantities of a mixing model and their CSV ingestion.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{build_design_matrix, CovariateSpec, CovariateTable, DesignColumn, DesignEncoder, EncodedTerm};
use crate::error::{Error, Result};
use crate::matrix_serde;

/// Per-source means and standard deviations for every tracer (`K x J`).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTable {
    pub names: Vec<String>,
    pub means: DMatrix<f64>,
    pub sds: DMatrix<f64>,
}

/// Mixture data, source/TDF/concentration statistics and the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimmInput {
    #[serde(with = "matrix_serde")]
    pub y: DMatrix<f64>,
    pub tracer_names: Vec<String>,
    pub source_names: Vec<String>,
    #[serde(with = "matrix_serde")]
    pub mu_s: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub sigma_s: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub mu_c: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub sigma_c: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub x: DMatrix<f64>,
    pub design: DesignEncoder,
    pub covariates: CovariateTable,
}

impl SimmInput {
    /// Assembles and validates an input from in-memory tables.
    ///
    /// Missing TDFs default to zero mean and zero sd; missing concentrations
    /// default to one.
    pub fn from_parts(
        y: DMatrix<f64>,
        tracer_names: Vec<String>,
        sources: SourceTable,
        tdf: Option<SourceTable>,
        concentration: Option<DMatrix<f64>>,
        covariates: CovariateTable,
        spec: &CovariateSpec,
    ) -> Result<Self> {
        let (k, j) = (sources.names.len(), tracer_names.len());
        let (mu_c, sigma_c) = match tdf {
            Some(t) => (t.means, t.sds),
            None => (DMatrix::zeros(k, j), DMatrix::zeros(k, j)),
        };
        let q = concentration.unwrap_or_else(|| DMatrix::from_element(k, j, 1.0));
        let (x, design) = build_design_matrix(&covariates, spec, y.nrows())?;
        let input = SimmInput {
            y,
            tracer_names,
            source_names: sources.names,
            mu_s: sources.means,
            sigma_s: sources.sds,
            mu_c,
            sigma_c,
            q,
            x,
            design,
            covariates,
        };
        input.validate()?;
        Ok(input)
    }

    /// Builds an input around an already-encoded design matrix. Columns are
    /// labelled `x1..xL` and treated as pre-standardized.
    pub fn from_design_matrix(
        y: DMatrix<f64>,
        sources: SourceTable,
        tdf: Option<SourceTable>,
        concentration: Option<DMatrix<f64>>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let j = y.ncols();
        let k = sources.names.len();
        let names: Vec<String> = (1..=x.ncols()).map(|l| format!("x{l}")).collect();
        let columns = names
            .iter()
            .map(|n| DesignColumn::Continuous {
                name: n.clone(),
                mean: 0.0,
                sd: 1.0,
            })
            .collect();
        let terms = names
            .iter()
            .map(|n| EncodedTerm::Continuous {
                name: n.clone(),
                mean: 0.0,
                sd: 1.0,
            })
            .collect();
        let covariates = CovariateTable {
            names: names.clone(),
            columns: (0..x.ncols())
                .map(|l| x.column(l).iter().map(|v| crate::design::format_number(*v)).collect())
                .collect(),
        };
        let (mu_c, sigma_c) = match tdf {
            Some(t) => (t.means, t.sds),
            None => (DMatrix::zeros(k, j), DMatrix::zeros(k, j)),
        };
        let input = SimmInput {
            y,
            tracer_names: (1..=j).map(|t| format!("tracer{t}")).collect(),
            source_names: sources.names,
            mu_s: sources.means,
            sigma_s: sources.sds,
            mu_c,
            sigma_c,
            q: concentration.unwrap_or_else(|| DMatrix::from_element(k, j, 1.0)),
            x,
            design: DesignEncoder {
                intercept: false,
                terms,
                interactions: Vec::new(),
                columns,
            },
            covariates,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_tracers(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Dimension of the parameter vector `(vec beta, log sigma^2)`.
    pub fn n_params(&self) -> usize {
        self.n_sources() * self.n_covariates() + self.n_tracers()
    }

    /// Checks shapes and the sign constraints on the source statistics.
    pub fn validate(&self) -> Result<()> {
        let (n, j, k) = (self.n_obs(), self.n_tracers(), self.n_sources());
        if j == 0 || k == 0 {
            return Err(Error::Validation("need at least one tracer and one source".into()));
        }
        if self.tracer_names.len() != j {
            return Err(Error::dimension(
                "mixtures",
                format!("{} tracer names for {j} columns", self.tracer_names.len()),
            ));
        }
        if self.x.nrows() != n {
            return Err(Error::dimension(
                "covariates",
                format!("design has {} rows, mixtures have {n}", self.x.nrows()),
            ));
        }
        if self.x.ncols() != self.design.ncols() {
            return Err(Error::dimension("covariates", "design columns do not match encoder"));
        }
        for (table, m) in [
            ("sources", &self.mu_s),
            ("sources", &self.sigma_s),
            ("tdf", &self.mu_c),
            ("tdf", &self.sigma_c),
            ("concentration", &self.q),
        ] {
            if m.shape() != (k, j) {
                return Err(Error::dimension(
                    table,
                    format!("expected {k}x{j}, found {}x{}", m.nrows(), m.ncols()),
                ));
            }
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.y) || !finite(&self.x) || !finite(&self.mu_s) || !finite(&self.mu_c) {
            return Err(Error::Validation("non-finite value in data".into()));
        }
        if self.sigma_s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("source sds must be positive".into()));
        }
        if self.sigma_c.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Validation("TDF sds must be non-negative".into()));
        }
        if self.q.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("concentrations must be positive".into()));
        }
        Ok(())
    }

    /// TDF-adjusted source means `mu_s + mu_c`.
    pub fn mu_sc(&self) -> DMatrix<f64> {
        &self.mu_s + &self.mu_c
    }

    /// Combined source variances `sigma_s^2 + sigma_c^2`.
    pub fn var_sc(&self) -> DMatrix<f64> {
        self.sigma_s.component_mul(&self.sigma_s) + self.sigma_c.component_mul(&self.sigma_c)
    }
}

/// Locations of the CSV files making up a dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub mixtures: PathBuf,
    pub sources: PathBuf,
    pub tdf: Option<PathBuf>,
    pub concentration: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

impl DatasetFiles {
    pub fn read_covariates(&self) -> Result<CovariateTable> {
        match &self.covariates {
            Some(p) => read_covariates(p),
            None => Ok(CovariateTable::default()),
        }
    }
}

/// Reads every table and returns a validated input.
pub fn load_dataset(files: &DatasetFiles, spec: &CovariateSpec) -> Result<SimmInput> {
    let (tracers, y) = read_mixtures(&files.mixtures)?;
    let sources = read_source_table(&files.sources, "sources", &tracers, None)?;
    let tdf = files
        .tdf
        .as_deref()
        .map(|p| read_source_table(p, "tdf", &tracers, Some(&sources.names)))
        .transpose()?;
    let conc = files
        .concentration
        .as_deref()
        .map(|p| read_concentration(p, &tracers, &sources.names))
        .transpose()?;
    let covariates = files.read_covariates()?;
    if !spec.terms.is_empty() && covariates.nrows() != y.nrows() {
        return Err(Error::dimension(
            "covariates",
            format!("{} rows, mixtures have {}", covariates.nrows(), y.nrows()),
        ));
    }
    SimmInput::from_parts(y, tracers, sources, tdf, conc, covariates, spec)
}

struct RawCsv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path, table: &str) -> Result<RawCsv> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(table, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(table, format!("row {}: {e}", i + 1)))?;
        let row: Vec<String> = rec.iter().map(str::to_string).collect();
        if row.iter().any(String::is_empty) {
            return Err(Error::parse(table, format!("row {} has a missing value", i + 1)));
        }
        rows.push(row);
    }
    Ok(RawCsv { header, rows })
}

fn parse_cell(table: &str, row: usize, col: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| {
        Error::parse(table, format!("row {row}, column `{col}`: `{v}` is not a number"))
    })
}

/// Mixture file: one column per tracer, one row per individual.
pub fn read_mixtures(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let raw = read_csv(path, "mixtures")?;
    if raw.header.is_empty() {
        return Err(Error::parse("mixtures", "no tracer columns"));
    }
    let (n, j) = (raw.rows.len(), raw.header.len());
    let mut y = DMatrix::zeros(n, j);
    for (i, row) in raw.rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            y[(i, c)] = parse_cell("mixtures", i + 1, &raw.header[c], v)?;
        }
    }
    Ok((raw.header, y))
}

fn column_index(raw: &RawCsv, table: &str, name: &str) -> Result<usize> {
    raw.header.iter().position(|h| h == name).ok_or_else(|| {
        Error::dimension(
            table,
            format!("missing column `{name}` (found {})", raw.header.join(", ")),
        )
    })
}

fn row_order(raw: &RawCsv, table: &str, order: Option<&[String]>) -> Result<(Vec<String>, Vec<usize>)> {
    let names: Vec<String> = raw.rows.iter().map(|r| r[0].clone()).collect();
    match order {
        None => Ok((names.clone(), (0..names.len()).collect())),
        Some(order) => {
            if names.len() != order.len() {
                return Err(Error::dimension(
                    table,
                    format!("{} rows, expected {} sources", names.len(), order.len()),
                ));
            }
            let lookup: HashMap<&str, usize> =
                names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            let idx = order
                .iter()
                .map(|s| {
                    lookup.get(s.as_str()).copied().ok_or_else(|| {
                        Error::dimension(table, format!("no row for source `{s}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((order.to_vec(), idx))
        }
    }
}

/// Source-shaped file: a name column then `mean_<tracer>`/`sd_<tracer>`.
pub fn read_source_table(
    path: &Path,
    table: &str,
    tracers: &[String],
    order: Option<&[String]>,
) -> Result<SourceTable> {
    let raw = read_csv(path, table)?;
    let (names, idx) = row_order(&raw, table, order)?;
    let (k, j) = (names.len(), tracers.len());
    let mut means = DMatrix::zeros(k, j);
    let mut sds = DMatrix::zeros(k, j);
    for (t, tracer) in tracers.iter().enumerate() {
        let mc = column_index(&raw, table, &format!("mean_{tracer}"))?;
        let sc = column_index(&raw, table, &format!("sd_{tracer}"))?;
        for (r, &src) in idx.iter().enumerate() {
            let row = &raw.rows[src];
            means[(r, t)] = parse_cell(table, src + 1, &raw.header[mc], &row[mc])?;
            sds[(r, t)] = parse_cell(table, src + 1, &raw.header[sc], &row[sc])?;
        }
    }
    Ok(SourceTable { names, means, sds })
}

/// Concentration file: a name column then `mean_<tracer>` (or `<tracer>`).
pub fn read_concentration(path: &Path, tracers: &[String], order: &[String]) -> Result<DMatrix<f64>> {
    let table = "concentration";
    let raw = read_csv(path, table)?;
    let (_, idx) = row_order(&raw, table, Some(order))?;
    let mut q = DMatrix::zeros(order.len(), tracers.len());
    for (t, tracer) in tracers.iter().enumerate() {
        let c = column_index(&raw, table, &format!("mean_{tracer}"))
            .or_else(|_| column_index(&raw, table, tracer))?;
        for (r, &src) in idx.iter().enumerate() {
            q[(r, t)] = parse_cell(table, src + 1, &raw.header[c], &raw.rows[src][c])?;
        }
    }
    Ok(q)
}

pub fn read_covariates(path: &Path) -> Result<CovariateTable> {
    let raw = read_csv(path, "covariates")?;
    let columns = (0..raw.header.len())
        .map(|c| raw.rows.iter().map(|r| r[c].clone()).collect())
        .collect();
    CovariateTable::new(raw.header, columns)
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes the input back out in the CSV schemas [`load_dataset`] reads.
pub fn write_dataset(input: &SimmInput, dir: &Path) -> Result<DatasetFiles> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = DatasetFiles {
        mixtures: dir.join("mixtures.csv"),
        sources: dir.join("sources.csv"),
        tdf: Some(dir.join("tdf.csv")),
        concentration: Some(dir.join("concentration.csv")),
        covariates: (!input.covariates.names.is_empty()).then(|| dir.join("covariates.csv")),
    };
    let open = |p: &Path| csv::Writer::from_path(p).map_err(|e| write_err(p, e));

    let mut w = open(&files.mixtures)?;
    w.write_record(&input.tracer_names).map_err(|e| write_err(&files.mixtures, e))?;
    for row in input.y.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| write_err(&files.mixtures, e))?;
    }
    w.flush().map_err(|e| write_err(&files.mixtures, e))?;

    let source_like = |path: &Path, means: &DMatrix<f64>, sds: &DMatrix<f64>| -> Result<()> {
        let mut w = open(path)?;
        let mut header = vec!["source".to_string()];
        for t in &input.tracer_names {
            header.push(format!("mean_{t}"));
            header.push(format!("sd_{t}"));
        }
        w.write_record(&header).map_err(|e| write_err(path, e))?;
        for (k, name) in input.source_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            for j in 0..input.n_tracers() {
                rec.push(means[(k, j)].to_string());
                rec.push(sds[(k, j)].to_string());
            }
            w.write_record(&rec).map_err(|e| write_err(path, e))?;
        }
        w.flush().map_err(|e| write_err(path, e))
    };
    source_like(&files.sources, &input.mu_s, &input.sigma_s)?;
    source_like(files.tdf.as_deref().unwrap(), &input.mu_c, &input.sigma_c)?;

    let conc_path = files.concentration.as_deref().unwrap();
    let mut w = open(conc_path)?;
    let mut header = vec!["source".to_string()];
    header.extend(input.tracer_names.iter().map(|t| format!("mean_{t}")));
    w.write_record(&header).map_err(|e| write_err(conc_path, e))?;
    for (k, name) in input.source_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend((0..input.n_tracers()).map(|j| input.q[(k, j)].to_string()));
        w.write_record(&rec).map_err(|e| write_err(conc_path, e))?;
    }
    w.flush().map_err(|e| write_err(conc_path, e))?;

    if let Some(path) = &files.covariates {
        let mut w = open(path)?;
        w.write_record(&input.covariates.names).map_err(|e| write_err(path, e))?;
        for i in 0..input.covariates.nrows() {
            w.write_record(input.covariates.columns.iter().map(|c| c[i].as_str()))
                .map_err(|e| write_err(path, e))?;
        }
        w.flush().map_err(|e| write_err(path, e))?;
    }
    Ok(files)
}
