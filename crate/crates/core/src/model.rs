use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffvb::{FfvbConfig, VariationalState};
use crate::input::SimmInput;
use crate::likelihood::{proportions_from_design, PriorSpec, VarianceMode};
use crate::matrix_serde;

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Patience,
    MaxIter,
}

/// A converged fit: final variational state, stored posterior draws and
/// everything needed to post-process without the original CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub input: SimmInput,
    pub prior: PriorSpec,
    pub config: FfvbConfig,
    pub mode: VarianceMode,
    pub state: VariationalState,
    pub convergence: Convergence,
    /// `n_output_draws x d`, each row a `theta` in `(vec beta, log sigma^2)` order.
    #[serde(with = "matrix_serde")]
    pub theta_draws: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl FittedModel {
    pub fn n_draws(&self) -> usize {
        self.theta_draws.nrows()
    }

    pub fn iterations(&self) -> usize {
        self.state.lb_history.len()
    }

    /// `K x L` coefficient matrix of draw `s`.
    pub fn beta_draw(&self, s: usize) -> DMatrix<f64> {
        let (k, l) = (self.input.n_sources(), self.input.n_covariates());
        DMatrix::from_fn(k, l, |r, c| self.theta_draws[(s, r * l + c)])
    }

    /// `n_draws x J` residual standard deviations.
    pub fn sigma_draws(&self) -> DMatrix<f64> {
        let kl = self.input.n_sources() * self.input.n_covariates();
        let j = self.input.n_tracers();
        DMatrix::from_fn(self.n_draws(), j, |s, t| (0.5 * self.theta_draws[(s, kl + t)]).exp())
    }

    /// `n_draws x K` proportion draws for one encoded design row.
    pub fn proportion_draws_at(&self, x_row: &[f64]) -> DMatrix<f64> {
        let (k, l) = (self.input.n_sources(), self.input.n_covariates());
        assert_eq!(x_row.len(), l, "design row length");
        let n = self.n_draws();
        let mut out = DMatrix::zeros(n, k);
        let x = DMatrix::from_row_slice(1, l, x_row);
        for s in 0..n {
            let p = proportions_from_design(&x, &self.beta_draw(s));
            for c in 0..k {
                out[(s, c)] = p[(0, c)];
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Invalid(format!("serialize model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FittedModel =
            serde_json::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
        model.input.validate()?;
        if model.theta_draws.ncols() != model.input.n_params() {
            return Err(Error::dimension("model", "draw width does not match parameters"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
