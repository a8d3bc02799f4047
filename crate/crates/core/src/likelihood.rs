//! CLR link, marginal likelihood, priors and the gradient of the joint
//! log density.
//!
//! The parameter vector is `theta = (vec beta, log sigma^2)` where `beta` is
//! `K x L` stored row-major (`beta[k][l]` at `k * L + l`) followed by the `J`
//! log residual variances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::input::SimmInput;
use crate::matrix_serde;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Denominator used for the source-variance term of the marginal variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `sum p^2 q^2 sigma_sc^2 / sum p^2 q^2`, a weighted mean of source variances.
    #[default]
    Weighted,
    /// `sum p^2 q^2 sigma_sc^2 / (sum p q)^2`, the exact forward-model variance.
    Generative,
}

/// One parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    #[serde(with = "matrix_serde")]
    pub beta: DMatrix<f64>,
    pub log_sigma2: Vec<f64>,
}

impl ThetaPoint {
    pub fn zeros(k: usize, l: usize, j: usize) -> Self {
        ThetaPoint {
            beta: DMatrix::zeros(k, l),
            log_sigma2: vec![0.0; j],
        }
    }

    pub fn from_slice(v: &[f64], k: usize, l: usize, j: usize) -> Self {
        assert_eq!(v.len(), k * l + j, "theta length");
        ThetaPoint {
            beta: DMatrix::from_row_slice(k, l, &v[..k * l]),
            log_sigma2: v[k * l..].to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.beta.transpose().iter().copied().collect();
        v.extend_from_slice(&self.log_sigma2);
        v
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma2.iter().map(|u| (0.5 * u).exp()).collect()
    }
}

/// Gaussian prior on every `beta[k][l]` and `1/sigma_j ~ Gamma(shape, rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(with = "matrix_serde")]
    pub beta_mean: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub beta_sd: DMatrix<f64>,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl PriorSpec {
    /// `beta ~ N(0, 1)`, `1/sigma ~ Ga(1, 1)`.
    pub fn default_for(k: usize, l: usize) -> Self {
        PriorSpec {
            beta_mean: DMatrix::zeros(k, l),
            beta_sd: DMatrix::from_element(k, l, 1.0),
            sigma_shape: 1.0,
            sigma_rate: 1.0,
        }
    }

    pub fn validate(&self, k: usize, l: usize) -> Result<()> {
        if self.beta_mean.shape() != (k, l) || self.beta_sd.shape() != (k, l) {
            return Err(Error::dimension("prior", format!("beta prior must be {k}x{l}")));
        }
        if self.beta_sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Validation("prior beta sds must be positive".into()));
        }
        if !(self.sigma_shape > 0.0 && self.sigma_rate > 0.0) {
            return Err(Error::Validation("gamma prior parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and variance of every mixture cell under one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMoments {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

/// Maps unconstrained scores to the simplex.
pub fn clr_proportions(f: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; f.len()];
    clr_into(f, &mut p);
    p
}

fn clr_into(f: &[f64], p: &mut [f64]) {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (pk, fk) in p.iter_mut().zip(f) {
        *pk = (fk - max).exp();
        total += *pk;
    }
    for pk in p.iter_mut() {
        *pk /= total;
    }
    let s: f64 = p.iter().sum();
    if s != 1.0 {
        for pk in p.iter_mut() {
            *pk /= s;
        }
    }
}

/// `N x K` matrix of proportions `CLR(x_i^T beta_k)`.
pub fn proportions_for(input: &SimmInput, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if beta.shape() != (input.n_sources(), input.n_covariates()) {
        return Err(Error::dimension(
            "beta",
            format!(
                "expected {}x{}, found {}x{}",
                input.n_sources(),
                input.n_covariates(),
                beta.nrows(),
                beta.ncols()
            ),
        ));
    }
    Ok(proportions_from_design(&input.x, beta))
}

/// Same as [`proportions_for`] for an arbitrary design matrix.
pub fn proportions_from_design(x: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let f = x * beta.transpose();
    let k = beta.nrows();
    let mut out = DMatrix::zeros(x.nrows(), k);
    let mut row = vec![0.0; k];
    let mut p = vec![0.0; k];
    for i in 0..x.nrows() {
        for (c, r) in row.iter_mut().enumerate() {
            *r = f[(i, c)];
        }
        clr_into(&row, &mut p);
        for c in 0..k {
            out[(i, c)] = p[c];
        }
    }
    out
}

/// Evaluation context with the source statistics laid out per tracer.
///
/// Holds `mu_sc`, `sigma_sc^2` and `q` tracer-major so the inner loops over
/// sources are contiguous.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    pub input: &'a SimmInput,
    pub prior: &'a PriorSpec,
    pub mode: VarianceMode,
    mu_sc: Vec<f64>,
    var_sc: Vec<f64>,
    q: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    log_norm_const: f64,
}

/// Scratch buffers reused across evaluations on one thread.
#[derive(Debug, Clone)]
pub struct Workspace {
    f: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(input: &'a SimmInput, prior: &'a PriorSpec, mode: VarianceMode) -> Result<Self> {
        input.validate()?;
        prior.validate(input.n_sources(), input.n_covariates())?;
        let (k, j) = (input.n_sources(), input.n_tracers());
        let mu = input.mu_sc();
        let var = input.var_sc();
        let mut mu_sc = vec![0.0; k * j];
        let mut var_sc = vec![0.0; k * j];
        let mut q = vec![0.0; k * j];
        for t in 0..j {
            for s in 0..k {
                mu_sc[t * k + s] = mu[(s, t)];
                var_sc[t * k + s] = var[(s, t)];
                q[t * k + s] = input.q[(s, t)];
            }
        }
        let l = input.n_covariates();
        let mut x = vec![0.0; input.n_obs() * l];
        for i in 0..input.n_obs() {
            for c in 0..l {
                x[i * l + c] = input.x[(i, c)];
            }
        }
        let y = (0..input.n_obs())
            .flat_map(|i| (0..j).map(move |t| (i, t)))
            .map(|(i, t)| input.y[(i, t)])
            .collect();
        let (c0, d0) = (prior.sigma_shape, prior.sigma_rate);
        Ok(Posterior {
            input,
            prior,
            mode,
            mu_sc,
            var_sc,
            q,
            x,
            y,
            log_norm_const: c0 * d0.ln() - ln_gamma(c0) - std::f64::consts::LN_2,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.n_params()
    }

    pub fn workspace(&self) -> Workspace {
        let k = self.input.n_sources();
        Workspace {
            f: vec![0.0; k],
            p: vec![0.0; k],
            g: vec![0.0; k],
        }
    }

    fn proportions_row(&self, theta: &[f64], i: usize, ws: &mut Workspace) {
        let (k, l) = (self.input.n_sources(), self.input.n_covariates());
        let xi = &self.x[i * l..(i + 1) * l];
        for s in 0..k {
            let b = &theta[s * l..(s + 1) * l];
            ws.f[s] = xi.iter().zip(b).map(|(a, c)| a * c).sum();
        }
        clr_into(&ws.f, &mut ws.p);
    }

    /// Mean and variance of cell `(i, t)` given proportions `p`.
    fn cell_moments(&self, p: &[f64], t: usize, sigma2: f64) -> (f64, f64) {
        let k = p.len();
        let (mu, var, q) = (
            &self.mu_sc[t * k..(t + 1) * k],
            &self.var_sc[t * k..(t + 1) * k],
            &self.q[t * k..(t + 1) * k],
        );
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..k {
            let pq = p[s] * q[s];
            a += pq * mu[s];
            b += pq;
            c += pq * pq * var[s];
            d += pq * pq;
        }
        let source_var = match self.mode {
            VarianceMode::Weighted => c / d,
            VarianceMode::Generative => c / (b * b),
        };
        (a / b, source_var + sigma2)
    }

    /// Per-observation log-likelihood contributions (summed over tracers).
    pub fn pointwise_log_likelihood(&self, theta: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        let (j, kl) = (self.input.n_tracers(), self.input.n_sources() * self.input.n_covariates());
        let sigma2: Vec<f64> = theta[kl..].iter().map(|u| u.exp()).collect();
        (0..self.input.n_obs())
            .map(|i| {
                self.proportions_row(theta, i, &mut ws);
                (0..j)
                    .map(|t| {
                        let (m, v) = self.cell_moments(&ws.p, t, sigma2[t]);
                        normal_logpdf(self.y[i * j + t], m, v)
                    })
                    .sum()
            })
            .collect()
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.pointwise_log_likelihood(theta).iter().sum()
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let kl = self.input.n_sources() * self.input.n_covariates();
        let beta_part: f64 = theta[..kl]
            .iter()
            .zip(self.prior.beta_mean.transpose().iter())
            .zip(self.prior.beta_sd.transpose().iter())
            .map(|((b, m), s)| normal_logpdf(*b, *m, s * s))
            .sum();
        let sigma_part: f64 = theta[kl..].iter().map(|&u| self.log_prior_u(u)).sum();
        beta_part + sigma_part
    }

    fn log_prior_u(&self, u: f64) -> f64 {
        let (c0, d0) = (self.prior.sigma_shape, self.prior.sigma_rate);
        self.log_norm_const - 0.5 * c0 * u - d0 * (-0.5 * u).exp()
    }

    pub fn log_h(&self, theta: &[f64]) -> f64 {
        self.log_likelihood(theta) + self.log_prior(theta)
    }

    /// Returns `log h(theta)` and writes its gradient into `grad`.
    pub fn log_h_grad(&self, theta: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        let (n, j, k, l) = (
            self.input.n_obs(),
            self.input.n_tracers(),
            self.input.n_sources(),
            self.input.n_covariates(),
        );
        let kl = k * l;
        debug_assert_eq!(theta.len(), kl + j);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let sigma2: Vec<f64> = theta[kl..].iter().map(|u| u.exp()).collect();
        let mut total = 0.0;
        for i in 0..n {
            self.proportions_row(theta, i, ws);
            ws.g.iter_mut().for_each(|g| *g = 0.0);
            for t in 0..j {
                let (mu, var, q) = (
                    &self.mu_sc[t * k..(t + 1) * k],
                    &self.var_sc[t * k..(t + 1) * k],
                    &self.q[t * k..(t + 1) * k],
                );
                let p = &ws.p;
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for s in 0..k {
                    let pq = p[s] * q[s];
                    a += pq * mu[s];
                    b += pq;
                    c += pq * pq * var[s];
                    d += pq * pq;
                }
                let m = a / b;
                let source_var = match self.mode {
                    VarianceMode::Weighted => c / d,
                    VarianceMode::Generative => c / (b * b),
                };
                let v = source_var + sigma2[t];
                let r = self.y[i * j + t] - m;
                total += -0.5 * (LN_2PI + v.ln()) - 0.5 * r * r / v;
                let dm = r / v;
                let dv = 0.5 * (r * r / v - 1.0) / v;
                grad[kl + t] += dv * sigma2[t];
                for s in 0..k {
                    let dm_dp = q[s] * (mu[s] - m) / b;
                    let dv_dp = match self.mode {
                        VarianceMode::Weighted => 2.0 * p[s] * q[s] * q[s] * (var[s] - source_var) / d,
                        VarianceMode::Generative => {
                            2.0 * q[s] * (p[s] * q[s] * var[s] - c / b) / (b * b)
                        }
                    };
                    ws.g[s] += dm * dm_dp + dv * dv_dp;
                }
            }
            let pg: f64 = ws.p.iter().zip(&ws.g).map(|(a, b)| a * b).sum();
            let xi = &self.x[i * l..(i + 1) * l];
            for s in 0..k {
                let df = ws.p[s] * (ws.g[s] - pg);
                if df != 0.0 {
                    for (gc, xc) in grad[s * l..(s + 1) * l].iter_mut().zip(xi) {
                        *gc += df * xc;
                    }
                }
            }
        }
        // prior
        let (c0, d0) = (self.prior.sigma_shape, self.prior.sigma_rate);
        for s in 0..k {
            for c in 0..l {
                let idx = s * l + c;
                let (m, sd) = (self.prior.beta_mean[(s, c)], self.prior.beta_sd[(s, c)]);
                let z = theta[idx] - m;
                total += normal_logpdf(theta[idx], m, sd * sd);
                grad[idx] -= z / (sd * sd);
            }
        }
        for t in 0..j {
            let u = theta[kl + t];
            total += self.log_prior_u(u);
            grad[kl + t] += -0.5 * c0 + 0.5 * d0 * (-0.5 * u).exp();
        }
        total
    }

    pub fn grad_log_h(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.log_h_grad(theta, &mut g, &mut self.workspace());
        g
    }

    pub fn marginal_moments(&self, theta: &[f64]) -> MarginalMoments {
        let (n, j, kl) = (
            self.input.n_obs(),
            self.input.n_tracers(),
            self.input.n_sources() * self.input.n_covariates(),
        );
        let mut ws = self.workspace();
        let mut mean = DMatrix::zeros(n, j);
        let mut variance = DMatrix::zeros(n, j);
        for i in 0..n {
            self.proportions_row(theta, i, &mut ws);
            for t in 0..j {
                let (m, v) = self.cell_moments(&ws.p, t, theta[kl + t].exp());
                mean[(i, t)] = m;
                variance[(i, t)] = v;
            }
        }
        MarginalMoments { mean, variance }
    }
}

pub(crate) fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
}

fn check_theta(input: &SimmInput, theta: &ThetaPoint) -> Result<()> {
    if theta.beta.shape() != (input.n_sources(), input.n_covariates())
        || theta.log_sigma2.len() != input.n_tracers()
    {
        return Err(Error::dimension("theta", "does not match the input dimensions"));
    }
    Ok(())
}

pub fn marginal_moments(
    input: &SimmInput,
    theta: &ThetaPoint,
    mode: VarianceMode,
) -> Result<MarginalMoments> {
    check_theta(input, theta)?;
    let prior = PriorSpec::default_for(input.n_sources(), input.n_covariates());
    Ok(Posterior::new(input, &prior, mode)?.marginal_moments(&theta.to_vec()))
}

pub fn log_likelihood(input: &SimmInput, theta: &ThetaPoint, mode: VarianceMode) -> Result<f64> {
    check_theta(input, theta)?;
    let prior = PriorSpec::default_for(input.n_sources(), input.n_covariates());
    Ok(Posterior::new(input, &prior, mode)?.log_likelihood(&theta.to_vec()))
}

/// Log prior density of `theta`, including the Jacobian of `u = log sigma^2`.
pub fn log_prior(theta: &ThetaPoint, prior: &PriorSpec) -> f64 {
    let beta: f64 = theta
        .beta
        .iter()
        .zip(prior.beta_mean.iter())
        .zip(prior.beta_sd.iter())
        .map(|((b, m), s)| normal_logpdf(*b, *m, s * s))
        .sum();
    let sigma: f64 = theta
        .log_sigma2
        .iter()
        .map(|&u| log_prior_log_sigma2(u, prior.sigma_shape, prior.sigma_rate))
        .sum();
    beta + sigma
}

/// Density of `u = log sigma^2` when `1/sigma ~ Gamma(shape, rate)`.
pub fn log_prior_log_sigma2(u: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - std::f64::consts::LN_2 - 0.5 * shape * u
        - rate * (-0.5 * u).exp()
}

pub fn log_h(
    input: &SimmInput,
    theta: &ThetaPoint,
    prior: &PriorSpec,
    mode: VarianceMode,
) -> Result<f64> {
    check_theta(input, theta)?;
    Ok(Posterior::new(input, prior, mode)?.log_h(&theta.to_vec()))
}

/// Gradient of [`log_h`] in `theta` order, `d = K * L + J`.
pub fn grad_log_h(
    input: &SimmInput,
    theta: &ThetaPoint,
    prior: &PriorSpec,
    mode: VarianceMode,
) -> Result<DVector<f64>> {
    check_theta(input, theta)?;
    let post = Posterior::new(input, prior, mode)?;
    Ok(DVector::from_vec(post.grad_log_h(&theta.to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::SourceTable;
    use crate::testutil::{random_input, synthetic_input};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clr_closed_forms() {
        let p = clr_proportions(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = clr_proportions(&[2f64.ln(), 0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clr_extreme_scores() {
        // exp(-1000) underflows, the exact value is 1 / (1 + 2 e^-1000)
        let p = clr_proportions(&[1000.0, 0.0, 0.0]);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        assert!(p.iter().all(|v| v.is_finite()));
        let p = clr_proportions(&[-700.0, 700.0, 0.0]);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    proptest! {
        #[test]
        fn clr_simplex_and_shift_invariance(
            f in proptest::collection::vec(-50.0f64..50.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let p = clr_proportions(&f);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let q = clr_proportions(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proportions_special_cases() {
        let input = synthetic_input();
        let p = proportions_for(&input, &DMatrix::zeros(3, 2)).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let beta = DMatrix::from_row_slice(3, 1, &[0.3, -1.0, 2.0]);
        let x = DMatrix::from_element(4, 1, 1.0);
        let p = proportions_from_design(&x, &beta);
        for i in 1..4 {
            assert_eq!(p.row(i), p.row(0));
        }
        assert!(proportions_for(&input, &DMatrix::zeros(2, 2)).is_err());
    }

    fn two_source_input(mode_q: f64) -> SimmInput {
        let sources = SourceTable {
            names: vec!["a".into(), "b".into()],
            means: DMatrix::from_row_slice(2, 1, &[-1.0, 3.0]),
            sds: DMatrix::from_element(2, 1, 1.0),
        };
        SimmInput::from_design_matrix(
            DMatrix::from_element(1, 1, 0.0),
            sources,
            None,
            Some(DMatrix::from_element(2, 1, mode_q)),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn variance_modes_hand_evaluation() {
        let input = two_source_input(1.0);
        let theta = ThetaPoint {
            beta: DMatrix::zeros(2, 1),
            log_sigma2: vec![0.7f64.ln()],
        };
        let weighted = marginal_moments(&input, &theta, VarianceMode::Weighted).unwrap();
        let gen = marginal_moments(&input, &theta, VarianceMode::Generative).unwrap();
        assert!((weighted.variance[(0, 0)] - 1.7).abs() < 1e-12);
        assert!((gen.variance[(0, 0)] - 1.2).abs() < 1e-12);
        assert!((weighted.mean[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_source_modes_agree() {
        let sources = SourceTable {
            names: vec!["a".into()],
            means: DMatrix::from_row_slice(1, 2, &[2.0, -3.0]),
            sds: DMatrix::from_row_slice(1, 2, &[0.5, 2.0]),
        };
        let input = SimmInput::from_design_matrix(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            sources,
            None,
            None,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 1.0, -1.2]),
        )
        .unwrap();
        let theta = ThetaPoint {
            beta: DMatrix::from_row_slice(1, 2, &[0.4, -2.0]),
            log_sigma2: vec![0.0, 1.0],
        };
        for mode in [VarianceMode::Weighted, VarianceMode::Generative] {
            let m = marginal_moments(&input, &theta, mode).unwrap();
            assert!((m.mean[(1, 0)] - 2.0).abs() < 1e-14);
            assert!((m.variance[(1, 0)] - 1.25).abs() < 1e-14);
            assert!((m.variance[(0, 1)] - (4.0 + 1f64.exp())).abs() < 1e-12);
        }
        let prior = PriorSpec::default_for(1, 2);
        let g = grad_log_h(&input, &theta, &prior, VarianceMode::Weighted).unwrap();
        // likelihood contributes nothing to beta; only the prior -beta
        assert!((g[0] + 0.4).abs() < 1e-12);
        assert!((g[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_at_mode() {
        let sources = SourceTable {
            names: vec!["a".into()],
            means: DMatrix::from_element(1, 1, 4.0),
            sds: DMatrix::from_element(1, 1, 1e-300),
        };
        let input = SimmInput::from_design_matrix(
            DMatrix::from_element(1, 1, 4.0),
            sources,
            None,
            None,
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let ll = log_likelihood(&input, &ThetaPoint::zeros(1, 1, 1), VarianceMode::Weighted).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_likelihood_matches_direct_summation() {
        let input = synthetic_input();
        let theta = ThetaPoint::zeros(3, 2, 2);
        let ll = log_likelihood(&input, &theta, VarianceMode::Weighted).unwrap();
        // beta = 0: p = 1/3 each; mean = average of source means; var = 1 + 1
        let means = [0.0, 0.0];
        let mut expected = 0.0;
        for i in 0..10 {
            for j in 0..2 {
                let r: f64 = input.y[(i, j)] - means[j];
                expected += -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - r * r / 4.0;
            }
        }
        assert!((ll - expected).abs() < 1e-10);
    }

    #[test]
    fn duplicated_rows_double_likelihood() {
        let input = synthetic_input();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = ThetaPoint::from_slice(
            &(0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            3,
            2,
            2,
        );
        let mut doubled = input.clone();
        doubled.y = DMatrix::from_fn(20, 2, |i, j| input.y[(i % 10, j)]);
        doubled.x = DMatrix::from_fn(20, 2, |i, j| input.x[(i % 10, j)]);
        let a = log_likelihood(&input, &theta, VarianceMode::Weighted).unwrap();
        let b = log_likelihood(&doubled, &theta, VarianceMode::Weighted).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn prior_values() {
        let prior = PriorSpec::default_for(3, 2);
        let theta = ThetaPoint::zeros(3, 2, 2);
        let lp = log_prior(&theta, &prior);
        let beta_part = -3.0 * (2.0 * std::f64::consts::PI).ln();
        let sigma_part = 2.0 * (-(2f64.ln()) - 1.0);
        assert!((lp - beta_part - sigma_part).abs() < 1e-12);
        assert!((log_prior_log_sigma2(0.0, 1.0, 1.0) - (-(2f64.ln()) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sigma_prior_gradient_zero_at_origin() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let post = Posterior::new(&input, &prior, VarianceMode::Weighted).unwrap();
        // isolate the prior by finite difference of log_prior alone
        let h = 1e-6;
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[6] = h;
        b[6] = -h;
        let fd = (post.log_prior(&a) - post.log_prior(&b)) / (2.0 * h);
        assert!(fd.abs() < 1e-9);
    }

    #[test]
    fn log_h_is_sum_of_parts() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let theta = ThetaPoint::from_slice(&v, 3, 2, 2);
            let h = log_h(&input, &theta, &prior, VarianceMode::Weighted).unwrap();
            let ll = log_likelihood(&input, &theta, VarianceMode::Weighted).unwrap();
            assert!((h - ll - log_prior(&theta, &prior)).abs() < 1e-9 * h.abs().max(1.0));
        }
    }

    #[test]
    fn tighter_prior_lowers_log_h_far_from_mean() {
        let input = synthetic_input();
        let theta = ThetaPoint::from_slice(&[4.0, -4.0, 3.5, 5.0, -4.5, 4.0, 0.0, 0.0], 3, 2, 2);
        let wide = PriorSpec::default_for(3, 2);
        let mut tight = wide.clone();
        tight.beta_sd.fill(0.5);
        let a = log_h(&input, &theta, &wide, VarianceMode::Weighted).unwrap();
        let b = log_h(&input, &theta, &tight, VarianceMode::Weighted).unwrap();
        assert!(b < a);
    }

    #[test]
    fn finite_for_large_scores() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let post = Posterior::new(&input, &prior, VarianceMode::Weighted).unwrap();
        let theta = [350.0, 0.0, -350.0, 0.0, 0.0, 350.0, 0.0, 0.0];
        assert!(post.log_h(&theta).is_finite());
        assert!(post.grad_log_h(&theta).iter().all(|g| g.is_finite()));
    }

    #[test]
    fn weighted_variance_at_least_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (input, theta) = random_input(&mut rng, 4, 3, 2, 6);
            let m = marginal_moments(&input, &theta, VarianceMode::Weighted).unwrap();
            for i in 0..input.n_obs() {
                for t in 0..input.n_tracers() {
                    assert!(m.variance[(i, t)] >= theta.log_sigma2[t].exp());
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [VarianceMode::Weighted, VarianceMode::Generative] {
            for _ in 0..10 {
                let (input, theta) = random_input(&mut rng, 3, 2, 2, 5);
                let prior = PriorSpec::default_for(3, 2);
                let post = Posterior::new(&input, &prior, mode).unwrap();
                let v = theta.to_vec();
                let g = post.grad_log_h(&v);
                for (c, gc) in g.iter().enumerate() {
                    let h = 1e-5;
                    let mut a = v.clone();
                    let mut b = v.clone();
                    a[c] += h;
                    b[c] -= h;
                    let fd = (post.log_h(&a) - post.log_h(&b)) / (2.0 * h);
                    assert!((fd - gc).abs() <= 1e-5 * gc.abs().max(1.0), "{mode:?} {c}: {fd} vs {gc}");
                }
            }
        }
    }
}
