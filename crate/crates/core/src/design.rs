//! Covariate tables and design-matrix construction.
//!
//! Continuous covariates are standardized (sample sd, `n - 1` denominator)
//! and the constants are kept in a [`DesignEncoder`] so new raw-scale rows
//! can be encoded identically at prediction time. Categorical covariates use
//! one-hot coding over all levels when they are the only term, and treatment
//! coding against the first-appearing level otherwise.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    OneHot,
    Treatment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTerm {
    pub name: String,
    pub kind: CovariateKind,
    pub encoding: Encoding,
}

/// Which covariates enter the model and how they are coded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub terms: Vec<CovariateTerm>,
    /// Pairwise products of already-listed terms (`a:b`).
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
    pub intercept: bool,
}

impl CovariateSpec {
    /// Intercept-only model.
    pub fn intercept_only() -> Self {
        CovariateSpec {
            terms: Vec::new(),
            interactions: Vec::new(),
            intercept: true,
        }
    }

    /// Builds a spec with the default coding rule: a categorical that is the
    /// sole covariate is one-hot coded with no intercept; everything else is
    /// treatment coded under an intercept.
    pub fn new(terms: Vec<(String, CovariateKind)>, interactions: Vec<(String, String)>) -> Self {
        let sole_categorical =
            terms.len() == 1 && interactions.is_empty() && terms[0].1 == CovariateKind::Categorical;
        let terms = terms
            .into_iter()
            .map(|(name, kind)| CovariateTerm {
                name,
                kind,
                encoding: if sole_categorical {
                    Encoding::OneHot
                } else {
                    Encoding::Treatment
                },
            })
            .collect();
        CovariateSpec {
            terms,
            interactions,
            intercept: !sole_categorical,
        }
    }

    /// Parses a formula right-hand side such as `sex + length`, `sex * sclass`
    /// or `1`. Columns listed in `categorical` are treated as factors; others
    /// are categorical only if some value fails to parse as a number.
    pub fn from_formula(
        formula: &str,
        table: &CovariateTable,
        categorical: &[String],
    ) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut interactions = Vec::new();
        let formula = formula.trim();
        if !(formula.is_empty() || formula == "1") {
            for term in formula.split('+').map(str::trim) {
                if term.is_empty() {
                    return Err(Error::Invalid(format!("empty term in formula `{formula}`")));
                }
                if let Some((a, b)) = term.split_once('*').or_else(|| term.split_once(':')) {
                    let (a, b) = (a.trim().to_string(), b.trim().to_string());
                    let expand = term.contains('*');
                    for n in [&a, &b] {
                        if expand && !names.contains(n) {
                            names.push(n.clone());
                        }
                    }
                    interactions.push((a, b));
                } else if !names.iter().any(|n| n == term) {
                    names.push(term.to_string());
                }
            }
        }
        let mut terms = Vec::with_capacity(names.len());
        for name in names {
            let column = table.column(&name)?;
            let kind = if categorical.contains(&name)
                || column.iter().any(|v| v.trim().parse::<f64>().is_err())
            {
                CovariateKind::Categorical
            } else {
                CovariateKind::Continuous
            };
            terms.push((name, kind));
        }
        Ok(CovariateSpec::new(terms, interactions))
    }

    /// Same terms, but forcing treatment coding with an intercept.
    pub fn with_treatment_coding(mut self) -> Self {
        for t in &mut self.terms {
            t.encoding = Encoding::Treatment;
        }
        self.intercept = true;
        self
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.terms {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Invalid(format!("covariate `{}` listed twice", t.name)));
            }
        }
        let one_hot = self
            .terms
            .iter()
            .filter(|t| t.kind == CovariateKind::Categorical && t.encoding == Encoding::OneHot)
            .count();
        if one_hot > 1 {
            return Err(Error::Invalid(
                "at most one categorical covariate may be one-hot coded".into(),
            ));
        }
        if one_hot == 1 && self.intercept {
            return Err(Error::Invalid(
                "one-hot coding requires the intercept to be dropped".into(),
            ));
        }
        for (a, b) in &self.interactions {
            for n in [a, b] {
                if !seen.contains(n.as_str()) {
                    return Err(Error::Invalid(format!(
                        "interaction refers to `{n}`, which is not a main effect"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Raw covariate values as read from CSV, column-oriented, kept as text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<String>>,
}

impl CovariateTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::dimension("covariates", "header/column count differs"));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::dimension("covariates", "ragged columns"));
            }
        }
        Ok(CovariateTable { names, columns })
    }

    /// A table with a single numeric column.
    pub fn from_numeric(name: &str, values: &[f64]) -> Self {
        CovariateTable {
            names: vec![name.to_string()],
            columns: vec![values.iter().map(|v| format_number(*v)).collect()],
        }
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[String]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::UnknownCovariate {
                name: name.to_string(),
                available: self.names.clone(),
            })
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        "covariates",
                        format!("column `{name}` row {}: `{v}` is not a number", i + 1),
                    )
                })
            })
            .collect()
    }

    fn row(&self, i: usize) -> HashMap<&str, &str> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| (n.as_str(), c[i].as_str()))
            .collect()
    }
}

/// Shortest round-tripping text for a float.
pub(crate) fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Description of one design-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignColumn {
    Intercept,
    Continuous { name: String, mean: f64, sd: f64 },
    Level { covariate: String, level: String },
    Interaction { left: String, right: String },
}

impl DesignColumn {
    pub fn label(&self) -> String {
        match self {
            DesignColumn::Intercept => "(Intercept)".to_string(),
            DesignColumn::Continuous { name, .. } => name.clone(),
            DesignColumn::Level { covariate, level } => format!("{covariate}{level}"),
            DesignColumn::Interaction { left, right } => format!("{left}:{right}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodedTerm {
    Continuous {
        name: String,
        mean: f64,
        sd: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        encoding: Encoding,
    },
}

impl EncodedTerm {
    pub fn name(&self) -> &str {
        match self {
            EncodedTerm::Continuous { name, .. } | EncodedTerm::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            EncodedTerm::Continuous { .. } => 1,
            EncodedTerm::Categorical {
                levels, encoding, ..
            } => match encoding {
                Encoding::OneHot => levels.len(),
                Encoding::Treatment => levels.len() - 1,
            },
        }
    }

    fn encode(&self, raw: &str, out: &mut Vec<f64>) -> Result<()> {
        match self {
            EncodedTerm::Continuous { name, mean, sd } => {
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::parse("covariates", format!("`{raw}` in `{name}` is not a number"))
                })?;
                out.push((v - mean) / sd);
            }
            EncodedTerm::Categorical {
                name,
                levels,
                encoding,
            } => {
                let idx = levels.iter().position(|l| l == raw.trim()).ok_or_else(|| {
                    Error::UnseenLevel {
                        covariate: name.clone(),
                        level: raw.trim().to_string(),
                    }
                })?;
                let skip = usize::from(*encoding == Encoding::Treatment);
                out.extend((skip..levels.len()).map(|l| if l == idx { 1.0 } else { 0.0 }));
            }
        }
        Ok(())
    }
}

/// Everything needed to turn a raw covariate row into a design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEncoder {
    pub intercept: bool,
    pub terms: Vec<EncodedTerm>,
    pub interactions: Vec<(String, String)>,
    pub columns: Vec<DesignColumn>,
}

impl DesignEncoder {
    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn term(&self, name: &str) -> Option<&EncodedTerm> {
        self.terms.iter().find(|t| t.name() == name)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name().to_string()).collect()
    }

    /// Encodes one raw row given as `name -> text` pairs.
    pub fn encode_row(&self, row: &HashMap<&str, &str>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.ncols());
        if self.intercept {
            out.push(1.0);
        }
        let mut spans: HashMap<&str, (usize, usize)> = HashMap::new();
        for term in &self.terms {
            let raw = row.get(term.name()).ok_or_else(|| Error::UnknownCovariate {
                name: term.name().to_string(),
                available: row.keys().map(|k| k.to_string()).collect(),
            })?;
            let start = out.len();
            term.encode(raw, &mut out)?;
            spans.insert(term.name(), (start, out.len()));
        }
        for (a, b) in &self.interactions {
            let (a0, a1) = spans[a.as_str()];
            let (b0, b1) = spans[b.as_str()];
            for i in a0..a1 {
                for j in b0..b1 {
                    out.push(out[i] * out[j]);
                }
            }
        }
        debug_assert_eq!(out.len(), self.ncols());
        Ok(out)
    }

    /// Encodes every row of a table.
    pub fn encode_table(&self, table: &CovariateTable) -> Result<DMatrix<f64>> {
        let n = table.nrows();
        if self.terms.is_empty() && n == 0 {
            return Ok(DMatrix::zeros(0, self.ncols()));
        }
        let mut x = DMatrix::zeros(n, self.ncols());
        for i in 0..n {
            let row = self.encode_row(&table.row(i))?;
            for (l, v) in row.into_iter().enumerate() {
                x[(i, l)] = v;
            }
        }
        Ok(x)
    }
}

fn levels_in_order(values: &[String]) -> Vec<String> {
    let mut levels: Vec<String> = Vec::new();
    for v in values {
        let v = v.trim();
        if !levels.iter().any(|l| l == v) {
            levels.push(v.to_string());
        }
    }
    levels
}

/// Fits the encoder to `raw` and returns the encoded `N x L` matrix.
///
/// `n_rows` is the number of observations; it only matters for
/// intercept-only models where `raw` may have no columns.
pub fn build_design_matrix(
    raw: &CovariateTable,
    spec: &CovariateSpec,
    n_rows: usize,
) -> Result<(DMatrix<f64>, DesignEncoder)> {
    spec.validate()?;
    if !spec.terms.is_empty() && raw.nrows() != n_rows {
        return Err(Error::dimension(
            "covariates",
            format!("{} rows, expected {n_rows}", raw.nrows()),
        ));
    }
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut columns = Vec::new();
    let intercept = spec.intercept;
    if intercept {
        columns.push(DesignColumn::Intercept);
    }
    for term in &spec.terms {
        match term.kind {
            CovariateKind::Continuous => {
                let v = raw.numeric_column(&term.name)?;
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let sd = var.sqrt();
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(Error::Validation(format!(
                        "continuous covariate `{}` is constant and cannot be standardized",
                        term.name
                    )));
                }
                columns.push(DesignColumn::Continuous {
                    name: term.name.clone(),
                    mean,
                    sd,
                });
                terms.push(EncodedTerm::Continuous {
                    name: term.name.clone(),
                    mean,
                    sd,
                });
            }
            CovariateKind::Categorical => {
                let levels = levels_in_order(raw.column(&term.name)?);
                if levels.len() < 2 {
                    return Err(Error::Validation(format!(
                        "categorical covariate `{}` has a single level",
                        term.name
                    )));
                }
                let skip = usize::from(term.encoding == Encoding::Treatment);
                for level in &levels[skip..] {
                    columns.push(DesignColumn::Level {
                        covariate: term.name.clone(),
                        level: level.clone(),
                    });
                }
                terms.push(EncodedTerm::Categorical {
                    name: term.name.clone(),
                    levels,
                    encoding: term.encoding,
                });
            }
        }
    }
    for (a, b) in &spec.interactions {
        let width = |name: &str| terms.iter().find(|t| t.name() == name).map_or(0, |t| t.width());
        let labels = |name: &str| -> Vec<String> {
            columns
                .iter()
                .filter_map(|c| match c {
                    DesignColumn::Continuous { name: n, .. } if n == name => Some(n.clone()),
                    DesignColumn::Level { covariate, .. } if covariate == name => Some(c.label()),
                    _ => None,
                })
                .collect()
        };
        let (la, lb) = (labels(a), labels(b));
        debug_assert_eq!(la.len(), width(a));
        debug_assert_eq!(lb.len(), width(b));
        for left in &la {
            for right in &lb {
                columns.push(DesignColumn::Interaction {
                    left: left.clone(),
                    right: right.clone(),
                });
            }
        }
    }
    let encoder = DesignEncoder {
        intercept,
        terms,
        interactions: spec.interactions.clone(),
        columns,
    };
    let x = if spec.terms.is_empty() {
        DMatrix::from_element(n_rows, encoder.ncols(), 1.0)
    } else {
        encoder.encode_table(raw)?
    };
    Ok((x, encoder))
}
