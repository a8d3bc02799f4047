//! Summaries, predictions, posterior-predictive checks, prior/posterior
//! comparisons and covariate-effect curves computed from a fitted model.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{format_number, CovariateTable, EncodedTerm};
use crate::error::{Error, Result};
use crate::likelihood::{proportions_from_design, Posterior};
use crate::model::FittedModel;

pub const SUMMARY_QUANTILES: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Proportion draws for a set of observations (fitted or predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionDraws {
    pub source_names: Vec<String>,
    /// One-based observation ids.
    pub obs_ids: Vec<usize>,
    /// Encoded design row used for each observation.
    pub covariates: Vec<Vec<f64>>,
    /// Per observation: `n_draws x K`, rows on the simplex.
    #[serde(with = "draws_serde")]
    pub draws: Vec<DMatrix<f64>>,
}

mod draws_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::matrix_serde")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|m| Wrap(m.clone())).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

impl ProportionDraws {
    pub fn len(&self) -> usize {
        self.obs_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs_ids.is_empty()
    }

    fn position(&self, obs: usize) -> Result<usize> {
        self.obs_ids
            .iter()
            .position(|&o| o == obs)
            .ok_or_else(|| Error::Invalid(format!("observation {obs} not available")))
    }

    pub fn for_obs(&self, obs: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.draws[self.position(obs)?])
    }
}

/// Fitted proportion draws for training observations (one-based ids).
pub fn fitted_proportions(model: &FittedModel, obs_ids: &[usize]) -> Result<ProportionDraws> {
    let n = model.input.n_obs();
    let mut covariates = Vec::with_capacity(obs_ids.len());
    let mut draws = Vec::with_capacity(obs_ids.len());
    for &o in obs_ids {
        if o == 0 || o > n {
            return Err(Error::Invalid(format!("observation {o} out of range 1..={n}")));
        }
        let row: Vec<f64> = model.input.x.row(o - 1).iter().copied().collect();
        draws.push(model.proportion_draws_at(&row));
        covariates.push(row);
    }
    Ok(ProportionDraws {
        source_names: model.input.source_names.clone(),
        obs_ids: obs_ids.to_vec(),
        covariates,
        draws,
    })
}

/// Proportion draws at new raw-scale covariate rows.
pub fn predict_proportions(model: &FittedModel, new: &CovariateTable) -> Result<ProportionDraws> {
    let enc = &model.input.design;
    let x = if enc.terms.is_empty() {
        DMatrix::from_element(new.nrows().max(1), enc.ncols(), 1.0)
    } else {
        enc.encode_table(new)?
    };
    let mut covariates = Vec::with_capacity(x.nrows());
    let mut draws = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        draws.push(model.proportion_draws_at(&row));
        covariates.push(row);
    }
    Ok(ProportionDraws {
        source_names: model.input.source_names.clone(),
        obs_ids: (1..=x.nrows()).collect(),
        covariates,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    Statistics,
    Quantiles,
    Correlations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBlock {
    pub observation: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub kind: SummaryKind,
    pub blocks: Vec<SummaryBlock>,
}

impl SummaryTable {
    /// Console layout: one "Summary for Observation i" block per observation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "Summary for Observation {}\n", block.observation);
            let label_w = block.row_labels.iter().map(String::len).max().unwrap_or(0);
            let cells: Vec<Vec<String>> = block
                .values
                .iter()
                .map(|r| r.iter().map(|v| format!("{v:.3}")).collect())
                .collect();
            let widths: Vec<usize> = (0..block.col_labels.len())
                .map(|c| {
                    cells
                        .iter()
                        .map(|r| r[c].len())
                        .chain([block.col_labels[c].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let _ = write!(out, "{:label_w$}", "");
            for (c, l) in block.col_labels.iter().enumerate() {
                let _ = write!(out, " {:>w$}", l, w = widths[c]);
            }
            out.push('\n');
            for (r, label) in block.row_labels.iter().enumerate() {
                let _ = write!(out, "{label:<label_w$}");
                for (c, cell) in cells[r].iter().enumerate() {
                    let _ = write!(out, " {:>w$}", cell, w = widths[c]);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn correlation_matrix(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let stats: Vec<(f64, f64)> = columns.iter().map(|c| mean_sd(c)).collect();
    let n = columns.first().map_or(0, Vec::len) as f64;
    let m = columns.len();
    let mut out = vec![vec![0.0; m]; m];
    for a in 0..m {
        out[a][a] = 1.0;
        for b in (a + 1)..m {
            let cov = columns[a]
                .iter()
                .zip(&columns[b])
                .map(|(x, y)| (x - stats[a].0) * (y - stats[b].0))
                .sum::<f64>()
                / (n - 1.0);
            let r = cov / (stats[a].1 * stats[b].1);
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    out
}

/// Summaries of proportion draws, optionally with residual sd draws
/// (`n_draws x J`) appended as `sd_<tracer>` rows.
pub fn summarize_draws(
    draws: &ProportionDraws,
    sigma: Option<(&[String], &DMatrix<f64>)>,
    obs_ids: &[usize],
    kind: SummaryKind,
) -> Result<SummaryTable> {
    let mut blocks = Vec::with_capacity(obs_ids.len());
    for &obs in obs_ids {
        let p = draws.for_obs(obs)?;
        if p.nrows() == 0 {
            return Err(Error::Invalid("no posterior draws to summarize".into()));
        }
        let mut labels: Vec<String> = draws.source_names.iter().map(|s| format!("P({s})")).collect();
        let mut columns: Vec<Vec<f64>> =
            (0..p.ncols()).map(|c| p.column(c).iter().copied().collect()).collect();
        if let Some((tracers, sd)) = sigma {
            for (t, name) in tracers.iter().enumerate() {
                labels.push(format!("sd_{name}"));
                columns.push(sd.column(t).iter().copied().collect());
            }
        }
        let (col_labels, values) = match kind {
            SummaryKind::Statistics => (
                vec!["mean".to_string(), "sd".to_string()],
                columns
                    .iter()
                    .map(|c| {
                        let (m, s) = mean_sd(c);
                        vec![m, s]
                    })
                    .collect(),
            ),
            SummaryKind::Quantiles => (
                vec!["2.5%".into(), "25%".into(), "50%".into(), "75%".into(), "97.5%".into()],
                columns
                    .iter()
                    .map(|c| {
                        let mut s = c.clone();
                        s.sort_by(f64::total_cmp);
                        SUMMARY_QUANTILES.iter().map(|&q| quantile_sorted(&s, q)).collect()
                    })
                    .collect(),
            ),
            SummaryKind::Correlations => (labels.clone(), correlation_matrix(&columns)),
        };
        blocks.push(SummaryBlock {
            observation: obs,
            row_labels: labels,
            col_labels,
            values,
        });
    }
    Ok(SummaryTable { kind, blocks })
}

/// Summaries for training observations, including residual sds.
pub fn summarize(model: &FittedModel, obs_ids: &[usize], kind: SummaryKind) -> Result<SummaryTable> {
    if model.n_draws() == 0 {
        return Err(Error::Invalid("model has no posterior draws".into()));
    }
    let obs_ids = if obs_ids.is_empty() { &[1][..] } else { obs_ids };
    let draws = fitted_proportions(model, obs_ids)?;
    let sd = model.sigma_draws();
    summarize_draws(&draws, Some((&model.input.tracer_names, &sd)), obs_ids, kind)
}

/// One replicated dataset per stored posterior draw, `draws x (N * J)`
/// with cell `(i, j)` at column `i * J + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedData {
    pub n_obs: usize,
    pub n_tracers: usize,
    /// Per cell, replicated values sorted ascending.
    pub sorted: Vec<Vec<f64>>,
}

pub fn replicate_data<R: Rng + ?Sized>(model: &FittedModel, rng: &mut R) -> Result<ReplicatedData> {
    let post = Posterior::new(&model.input, &model.prior, model.mode)?;
    let (n, j) = (model.input.n_obs(), model.input.n_tracers());
    let n_draws = model.n_draws();
    let moments: Vec<_> = (0..n_draws)
        .into_par_iter()
        .map(|s| {
            let theta: Vec<f64> = model.theta_draws.row(s).iter().copied().collect();
            post.marginal_moments(&theta)
        })
        .collect();
    let mut sorted = vec![Vec::with_capacity(n_draws); n * j];
    for m in &moments {
        for i in 0..n {
            for t in 0..j {
                let z: f64 = rng.sample(StandardNormal);
                sorted[i * j + t].push(m.mean[(i, t)] + m.variance[(i, t)].sqrt() * z);
            }
        }
    }
    for cell in &mut sorted {
        cell.sort_by(f64::total_cmp);
    }
    Ok(ReplicatedData {
        n_obs: n,
        n_tracers: j,
        sorted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPredictive {
    pub level: f64,
    #[serde(with = "crate::matrix_serde")]
    pub lower: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub upper: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub median: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub observed: DMatrix<f64>,
    /// Fraction of all `N * J` observed values inside their interval.
    pub coverage: f64,
    pub coverage_per_tracer: Vec<f64>,
    pub tracer_names: Vec<String>,
}

impl PosteriorPredictive {
    pub fn inside(&self, i: usize, t: usize) -> bool {
        let y = self.observed[(i, t)];
        y >= self.lower[(i, t)] && y <= self.upper[(i, t)]
    }
}

/// Central intervals at `level` from replicated data.
pub fn predictive_intervals(
    model: &FittedModel,
    reps: &ReplicatedData,
    level: f64,
) -> Result<PosteriorPredictive> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("probability level {level} not in (0, 1)")));
    }
    let (n, j) = (reps.n_obs, reps.n_tracers);
    let (lo_p, hi_p) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut lower = DMatrix::zeros(n, j);
    let mut upper = DMatrix::zeros(n, j);
    let mut median = DMatrix::zeros(n, j);
    for i in 0..n {
        for t in 0..j {
            let cell = &reps.sorted[i * j + t];
            lower[(i, t)] = quantile_sorted(cell, lo_p);
            upper[(i, t)] = quantile_sorted(cell, hi_p);
            median[(i, t)] = quantile_sorted(cell, 0.5);
        }
    }
    let mut pp = PosteriorPredictive {
        level,
        lower,
        upper,
        median,
        observed: model.input.y.clone(),
        coverage: 0.0,
        coverage_per_tracer: vec![0.0; j],
        tracer_names: model.input.tracer_names.clone(),
    };
    let mut total = 0usize;
    for t in 0..j {
        let inside = (0..n).filter(|&i| pp.inside(i, t)).count();
        pp.coverage_per_tracer[t] = inside as f64 / n as f64;
        total += inside;
    }
    pp.coverage = total as f64 / (n * j) as f64;
    Ok(pp)
}

/// Posterior-predictive intervals and coverage at `level`.
pub fn posterior_predictive<R: Rng + ?Sized>(
    model: &FittedModel,
    level: f64,
    rng: &mut R,
) -> Result<PosteriorPredictive> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("probability level {level} not in (0, 1)")));
    }
    let reps = replicate_data(model, rng)?;
    predictive_intervals(model, &reps, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPosterior {
    pub observation: usize,
    pub source_names: Vec<String>,
    #[serde(with = "crate::matrix_serde")]
    pub prior: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub posterior: DMatrix<f64>,
}

/// Prior proportion draws at an observation's covariates next to the
/// posterior draws for the same observation.
pub fn prior_viz<R: Rng + ?Sized>(
    model: &FittedModel,
    obs: usize,
    n_prior_draws: usize,
    rng: &mut R,
) -> Result<PriorPosterior> {
    let post = fitted_proportions(model, &[obs])?;
    let x_row = DMatrix::from_row_slice(1, model.input.n_covariates(), &post.covariates[0]);
    let (k, l) = (model.input.n_sources(), model.input.n_covariates());
    let mut prior = DMatrix::zeros(n_prior_draws, k);
    for s in 0..n_prior_draws {
        let beta = DMatrix::from_fn(k, l, |r, c| {
            let z: f64 = rng.sample(StandardNormal);
            model.prior.beta_mean[(r, c)] + model.prior.beta_sd[(r, c)] * z
        });
        let p = proportions_from_design(&x_row, &beta);
        for c in 0..k {
            prior[(s, c)] = p[(0, c)];
        }
    }
    Ok(PriorPosterior {
        observation: obs,
        source_names: model.input.source_names.clone(),
        prior,
        posterior: post.draws.into_iter().next().unwrap(),
    })
}

/// Per-source posterior mean and sd of the proportion along a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    pub covariate: String,
    pub grid: Vec<f64>,
    pub source_names: Vec<String>,
    /// `grid.len() x K`
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

impl EffectCurve {
    pub fn lower(&self, g: usize, k: usize) -> f64 {
        self.mean[g][k] - 2.0 * self.sd[g][k]
    }

    pub fn upper(&self, g: usize, k: usize) -> f64 {
        self.mean[g][k] + 2.0 * self.sd[g][k]
    }
}

/// Raw covariate table holding every covariate at its reference value:
/// continuous at its training mean, categorical at its first level.
pub fn reference_table(model: &FittedModel, rows: usize) -> CovariateTable {
    let terms = &model.input.design.terms;
    CovariateTable {
        names: terms.iter().map(|t| t.name().to_string()).collect(),
        columns: terms
            .iter()
            .map(|t| {
                let v = match t {
                    EncodedTerm::Continuous { mean, .. } => format_number(*mean),
                    EncodedTerm::Categorical { levels, .. } => levels[0].clone(),
                };
                vec![v; rows]
            })
            .collect(),
    }
}

/// Proportions along a grid of raw values of one continuous covariate.
pub fn covariate_effect_curve(model: &FittedModel, covariate: &str, grid: &[f64]) -> Result<EffectCurve> {
    let enc = &model.input.design;
    match enc.term(covariate) {
        None => {
            return Err(Error::UnknownCovariate {
                name: covariate.to_string(),
                available: enc.covariate_names(),
            })
        }
        Some(EncodedTerm::Categorical { .. }) => {
            return Err(Error::Invalid(format!(
                "`{covariate}` is categorical; use the per-level boxplot output instead"
            )))
        }
        Some(EncodedTerm::Continuous { .. }) => {}
    }
    let mut table = reference_table(model, grid.len());
    let idx = table.names.iter().position(|n| n == covariate).unwrap();
    table.columns[idx] = grid.iter().map(|v| format_number(*v)).collect();
    let pred = predict_proportions(model, &table)?;
    let mut mean = Vec::with_capacity(grid.len());
    let mut sd = Vec::with_capacity(grid.len());
    for d in &pred.draws {
        let (m, s): (Vec<f64>, Vec<f64>) = (0..d.ncols())
            .map(|c| mean_sd(&d.column(c).iter().copied().collect::<Vec<_>>()))
            .unzip();
        mean.push(m);
        sd.push(s);
    }
    Ok(EffectCurve {
        covariate: covariate.to_string(),
        grid: grid.to_vec(),
        source_names: model.input.source_names.clone(),
        mean,
        sd,
    })
}

/// Evenly spaced grid over the observed range of a raw continuous covariate.
pub fn observed_grid(model: &FittedModel, covariate: &str, points: usize) -> Result<Vec<f64>> {
    let vals = model.input.covariates.numeric_column(covariate)?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let points = points.max(2);
    Ok((0..points)
        .map(|g| lo + (hi - lo) * g as f64 / (points - 1) as f64)
        .collect())
}

/// Per-level proportion draws of a categorical covariate, other covariates
/// at their reference values.
pub fn categorical_levels(model: &FittedModel, covariate: &str) -> Result<(Vec<String>, ProportionDraws)> {
    let enc = &model.input.design;
    let levels = match enc.term(covariate) {
        Some(EncodedTerm::Categorical { levels, .. }) => levels.clone(),
        Some(_) => return Err(Error::Invalid(format!("`{covariate}` is not categorical"))),
        None => {
            return Err(Error::UnknownCovariate {
                name: covariate.to_string(),
                available: enc.covariate_names(),
            })
        }
    };
    let mut table = reference_table(model, levels.len());
    let idx = table.names.iter().position(|n| n == covariate).unwrap();
    table.columns[idx] = levels.clone();
    Ok((levels, predict_proportions(model, &table)?))
}
