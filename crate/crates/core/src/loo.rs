//! Leave-one-out model comparison by truncated importance sampling.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Posterior;
use crate::model::FittedModel;

/// Largest normalized importance weight above which an observation is flagged.
pub const WEIGHT_WARN: f64 = 0.5;
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub se_elpd_loo: f64,
    pub looic: f64,
    pub se_looic: f64,
    pub pointwise_elpd: Vec<f64>,
    /// Largest normalized (post-truncation) weight per observation.
    pub max_weight: Vec<f64>,
    /// One-based ids of observations whose largest weight exceeds
    /// [`WEIGHT_WARN`].
    pub flagged: Vec<usize>,
}

/// `n_draws x N` matrix of per-observation log-likelihoods.
pub fn pointwise_loglik(model: &FittedModel) -> Result<DMatrix<f64>> {
    let post = Posterior::new(&model.input, &model.prior, model.mode)?;
    let rows: Vec<Vec<f64>> = (0..model.n_draws())
        .into_par_iter()
        .map(|s| {
            let theta: Vec<f64> = model.theta_draws.row(s).iter().copied().collect();
            post.pointwise_log_likelihood(&theta)
        })
        .collect();
    let n = model.input.n_obs();
    Ok(DMatrix::from_fn(rows.len(), n, |s, i| rows[s][i]))
}

/// Truncated importance weights for one observation, normalized to sum to 1.
///
/// Raw ratios are `1 / p(y_i | theta_s)`; each is capped at
/// `sqrt(S) * mean(raw)` before normalizing.
pub fn truncated_weights(loglik: &[f64]) -> Option<Vec<f64>> {
    let log_r: Vec<f64> = loglik.iter().map(|l| -l).collect();
    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_r.iter().map(|v| (v - max).exp()).collect();
    let s = w.len() as f64;
    let cap = s.sqrt() * w.iter().sum::<f64>() / s;
    for wi in &mut w {
        *wi = wi.min(cap);
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// LOO expected log predictive density from a pointwise log-likelihood matrix.
pub fn loo_estimate(loglik: &DMatrix<f64>) -> Result<LooResult> {
    let (s, n) = loglik.shape();
    if s < MIN_DRAWS {
        return Err(Error::Invalid(format!("LOO needs at least {MIN_DRAWS} draws, got {s}")));
    }
    if n == 0 {
        return Err(Error::Invalid("LOO needs at least one observation".into()));
    }
    let mut pointwise = Vec::with_capacity(n);
    let mut max_weight = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = loglik.column(i).iter().copied().collect();
        let w = truncated_weights(&col).ok_or_else(|| {
            Error::Numerical {
                iteration: 0,
                message: format!("all importance weights vanished for observation {}", i + 1),
            }
        })?;
        // elpd_i = log sum_s w_s p(y_i | theta_s)
        let elpd = log_sum_exp(
            w.iter()
                .zip(&col)
                .filter(|(wi, _)| **wi > 0.0)
                .map(|(wi, l)| wi.ln() + l),
        );
        if !elpd.is_finite() {
            return Err(Error::Numerical {
                iteration: 0,
                message: format!("non-finite elpd for observation {}", i + 1),
            });
        }
        pointwise.push(elpd);
        max_weight.push(w.iter().copied().fold(0.0, f64::max));
    }
    let elpd_loo: f64 = pointwise.iter().sum();
    let mean = elpd_loo / n as f64;
    let var = if n > 1 {
        pointwise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    let se = (n as f64 * var).sqrt();
    let flagged = max_weight
        .iter()
        .enumerate()
        .filter_map(|(i, &w)| (w > WEIGHT_WARN).then_some(i + 1))
        .collect();
    Ok(LooResult {
        elpd_loo,
        se_elpd_loo: se,
        looic: -2.0 * elpd_loo,
        se_looic: 2.0 * se,
        pointwise_elpd: pointwise,
        max_weight,
        flagged,
    })
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub looic: f64,
    pub se_looic: f64,
    pub elpd_loo: f64,
    pub n_flagged: usize,
}

/// Rows sorted by label order given; `best` is the index with lowest looic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub best: usize,
}

pub fn compare(results: &[(String, LooResult)]) -> Result<Comparison> {
    if results.is_empty() {
        return Err(Error::Invalid("nothing to compare".into()));
    }
    let rows: Vec<ComparisonRow> = results
        .iter()
        .map(|(label, r)| ComparisonRow {
            label: label.clone(),
            looic: r.looic,
            se_looic: r.se_looic,
            elpd_loo: r.elpd_loo,
            n_flagged: r.flagged.len(),
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.looic.total_cmp(&b.1.looic))
        .map(|(i, _)| i)
        .unwrap();
    Ok(Comparison { rows, best })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,looic,se_looic,elpd_loo,n_flagged\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.1},{:.1},{:.2},{}\n",
                r.label, r.looic, r.se_looic, r.elpd_loo, r.n_flagged
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<w$} {:>10} {:>9}\n", "model", "looic", "se_looic");
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if i == self.best { " *" } else { "" };
            out.push_str(&format!("{:<w$} {:>10.1} {:>9.1}{mark}\n", r.label, r.looic, r.se_looic));
        }
        out
    }
}
