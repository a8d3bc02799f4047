//! Gaussian variational Bayes with a Cholesky-factored covariance.
//!
//! The variational family is `theta ~ MVN(mu, L L^T)` with `L` lower
//! triangular. `lambda = (mu, vech(L))` is updated by reparameterized
//! stochastic gradients of the lower bound, smoothed with adaptive first and
//! second moment estimates, and the run stops when a moving average of the
//! lower bound has not improved for `patience` iterations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::SimmInput;
use crate::likelihood::{Posterior, PriorSpec, VarianceMode, Workspace};
use crate::matrix_serde;
use crate::model::{Convergence, FittedModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Lower bound on the diagonal of `L` after each update.
pub const MIN_CHOL_DIAG: f64 = 1e-8;
const MIN_SQRT_V: f64 = 1e-12;
const INIT_STREAM: u64 = 0;
const DRAWS_STREAM: u64 = u64::MAX;

/// Optimizer hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FfvbConfig {
    /// Parameter samples per iteration.
    pub n_samples: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps0: f64,
    /// Iteration after which the learning rate decays as `eps0 * alpha / t`.
    pub alpha: f64,
    /// Moving-average window for the stopping rule.
    pub window: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub n_output_draws: usize,
}

impl Default for FfvbConfig {
    fn default() -> Self {
        FfvbConfig {
            n_samples: 100,
            patience: 50,
            beta1: 0.9,
            beta2: 0.9,
            eps0: 0.05,
            alpha: 1000.0,
            window: 50,
            max_iter: 10_000,
            seed: 1,
            n_output_draws: 3600,
        }
    }
}

impl FfvbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("invalid optimizer config: {m}")));
        if self.n_samples < 2 {
            return bad("S must be at least 2");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps0 > 0.0 && self.alpha > 0.0) {
            return bad("eps0 and alpha must be positive");
        }
        if self.window < 1 || self.patience < 1 {
            return bad("window and patience must be at least 1");
        }
        if self.max_iter < self.window {
            return bad("max_iter must be at least the window size");
        }
        if self.n_output_draws < 1 {
            return bad("need at least one output draw");
        }
        Ok(())
    }

    /// Generator for iteration `t`: one seeded ChaCha stream per iteration,
    /// so results do not depend on how samples are scheduled.
    pub fn rng_for(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(Convergence),
}

/// `lambda` plus the optimizer's running state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub chol: DMatrix<f64>,
    pub gbar: Vec<f64>,
    pub vbar: Vec<f64>,
    pub t: usize,
    pub lb_history: Vec<f64>,
    pub patience_counter: usize,
    pub best_moving_avg: Option<f64>,
}

/// Length of `vech` of a `d x d` lower-triangular matrix.
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

impl VariationalState {
    /// `mu = 0`, `L = 0.1 I`, accumulators zero.
    pub fn initial(d: usize) -> Self {
        let n = d + vech_len(d);
        VariationalState {
            mu: vec![0.0; d],
            chol: DMatrix::identity(d, d) * 0.1,
            gbar: vec![0.0; n],
            vbar: vec![0.0; n],
            t: 1,
            lb_history: Vec::new(),
            patience_counter: 0,
            best_moving_avg: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(mu, vech(L))`, `vech` taken column by column.
    pub fn lambda(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v = self.mu.clone();
        for c in 0..d {
            for r in c..d {
                v.push(self.chol[(r, c)]);
            }
        }
        v
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) {
        let d = self.dim();
        assert_eq!(lambda.len(), d + vech_len(d));
        self.mu.copy_from_slice(&lambda[..d]);
        let mut idx = d;
        for c in 0..d {
            for r in c..d {
                self.chol[(r, c)] = lambda[idx];
                idx += 1;
            }
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Moving average of the last `window` lower-bound estimates.
    pub fn moving_average(&self, window: usize) -> Option<f64> {
        let n = self.lb_history.len();
        (n >= window).then(|| self.lb_history[n - window..].iter().sum::<f64>() / window as f64)
    }

    /// `log q_lambda(mu + L kappa)`.
    pub fn log_q(&self, kappa: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let log_det: f64 = self.chol.diagonal().iter().map(|v| v.abs().ln()).sum();
        -0.5 * d * LN_2PI - log_det - 0.5 * kappa.iter().map(|k| k * k).sum::<f64>()
    }
}

/// Draws paired with the standard-normal vectors that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSamples {
    pub thetas: Vec<Vec<f64>>,
    pub kappas: Vec<Vec<f64>>,
}

impl ThetaSamples {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// `theta_s = mu + L kappa_s` with `kappa_s ~ N(0, I)`.
pub fn draw_theta_samples<R: Rng + ?Sized>(
    state: &VariationalState,
    n: usize,
    rng: &mut R,
) -> ThetaSamples {
    let d = state.dim();
    let mut thetas = Vec::with_capacity(n);
    let mut kappas = Vec::with_capacity(n);
    for _ in 0..n {
        let kappa: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        thetas.push(transform(state, &kappa));
        kappas.push(kappa);
    }
    ThetaSamples { thetas, kappas }
}

fn transform(state: &VariationalState, kappa: &[f64]) -> Vec<f64> {
    let d = state.dim();
    (0..d)
        .map(|r| state.mu[r] + (0..=r).map(|c| state.chol[(r, c)] * kappa[c]).sum::<f64>())
        .collect()
}

/// Lower-bound gradient over `lambda` together with the lower-bound
/// estimate from the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LbEstimate {
    pub gradient: Vec<f64>,
    pub lower_bound: f64,
}

/// Unnormalized log density the optimizer can target.
pub trait LogTarget: Sync {
    type Workspace: Send;

    fn dim(&self) -> usize;
    fn workspace(&self) -> Self::Workspace;
    /// Returns `log h(theta)` and writes its gradient into `grad`.
    fn log_h_grad(&self, theta: &[f64], grad: &mut [f64], ws: &mut Self::Workspace) -> f64;

    fn log_h(&self, theta: &[f64]) -> f64 {
        let mut grad = vec![0.0; theta.len()];
        self.log_h_grad(theta, &mut grad, &mut self.workspace())
    }
}

impl LogTarget for Posterior<'_> {
    type Workspace = Workspace;

    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn workspace(&self) -> Workspace {
        Posterior::workspace(self)
    }

    fn log_h_grad(&self, theta: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        Posterior::log_h_grad(self, theta, grad, ws)
    }

    fn log_h(&self, theta: &[f64]) -> f64 {
        Posterior::log_h(self, theta)
    }
}

/// Per-sample `h_lambda(theta_s)` and `grad_theta h_lambda(theta_s)`, in
/// sample order.
fn per_sample<T: LogTarget>(
    samples: &ThetaSamples,
    state: &VariationalState,
    post: &T,
) -> Vec<(f64, Vec<f64>)> {
    let d = state.dim();
    samples
        .thetas
        .par_iter()
        .zip(samples.kappas.par_iter())
        .map_init(
            || post.workspace(),
            |ws, (theta, kappa)| {
                let mut grad = vec![0.0; d];
                let h = post.log_h_grad(theta, &mut grad, ws);
                // -grad log q = Sigma^{-1}(theta - mu) = L^{-T} kappa
                let score = state
                    .chol
                    .tr_solve_lower_triangular(&DVector::from_column_slice(kappa))
                    .unwrap_or_else(|| DVector::from_element(d, f64::NAN));
                for (g, s) in grad.iter_mut().zip(score.iter()) {
                    *g += s;
                }
                (h - state.log_q(kappa), grad)
            },
        )
        .collect()
}

fn reduce(samples: &ThetaSamples, state: &VariationalState, evals: &[(f64, Vec<f64>)]) -> LbEstimate {
    let d = state.dim();
    let s = evals.len() as f64;
    let mut gradient = vec![0.0; d + vech_len(d)];
    let mut lb = 0.0;
    for ((h, g), kappa) in evals.iter().zip(&samples.kappas) {
        lb += h;
        for r in 0..d {
            gradient[r] += g[r];
        }
        let mut idx = d;
        for c in 0..d {
            let kc = kappa[c];
            for gr in &g[c..d] {
                gradient[idx] += gr * kc;
                idx += 1;
            }
        }
    }
    gradient.iter_mut().for_each(|v| *v /= s);
    LbEstimate {
        gradient,
        lower_bound: lb / s,
    }
}

/// Gradient estimate and lower bound from one batch of samples.
pub fn estimate<T: LogTarget>(samples: &ThetaSamples, state: &VariationalState, post: &T) -> LbEstimate {
    let evals = per_sample(samples, state, post);
    reduce(samples, state, &evals)
}

/// Unbiased estimate of the lower-bound gradient over `lambda`.
pub fn estimate_lb_gradient<T: LogTarget>(
    samples: &ThetaSamples,
    state: &VariationalState,
    post: &T,
) -> Vec<f64> {
    estimate(samples, state, post).gradient
}

/// `(1/S) sum_s [log h(theta_s) - log q(theta_s)]`.
pub fn estimate_lower_bound<T: LogTarget>(samples: &ThetaSamples, state: &VariationalState, post: &T) -> f64 {
    samples
        .thetas
        .iter()
        .zip(&samples.kappas)
        .map(|(theta, kappa)| post.log_h(theta) - state.log_q(kappa))
        .sum::<f64>()
        / samples.len() as f64
}

/// Starting state: `mu = 0`, `L = 0.1 I`, `gbar` from one gradient
/// estimate and `vbar = gbar^2`.
pub fn init_state<T: LogTarget>(post: &T, config: &FfvbConfig) -> Result<VariationalState> {
    let mut state = VariationalState::initial(post.dim());
    let samples = draw_theta_samples(&state, config.n_samples, &mut config.rng_for(INIT_STREAM));
    let est = estimate(&samples, &state, post);
    if est.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            iteration: 0,
            message: "non-finite initial gradient".into(),
        });
    }
    state.vbar = est.gradient.iter().map(|g| g * g).collect();
    state.gbar = est.gradient;
    Ok(state)
}

/// `l_t = min(eps0, eps0 * alpha / t)`.
pub fn learning_rate(config: &FfvbConfig, t: usize) -> f64 {
    config.eps0.min(config.eps0 * config.alpha / t as f64)
}

/// One adaptive step along the smoothed gradient.
pub fn update_lambda(state: &mut VariationalState, g: &[f64], config: &FfvbConfig) -> Result<()> {
    if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            iteration: state.t,
            message: format!("non-finite gradient component {pos}"),
        });
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let lr = learning_rate(config, state.t);
    let mut lambda = state.lambda();
    for (i, gi) in g.iter().enumerate() {
        state.gbar[i] = b1 * state.gbar[i] + (1.0 - b1) * gi;
        state.vbar[i] = b2 * state.vbar[i] + (1.0 - b2) * gi * gi;
        lambda[i] += lr * state.gbar[i] / state.vbar[i].sqrt().max(MIN_SQRT_V);
    }
    state.set_lambda(&lambda);
    for r in 0..state.dim() {
        if state.chol[(r, r)] < MIN_CHOL_DIAG {
            state.chol[(r, r)] = MIN_CHOL_DIAG;
        }
    }
    Ok(())
}

/// Applies the moving-average patience rule to the latest lower bound.
/// Patience resets only on strict improvement of the moving average.
pub fn check_stopping(state: &mut VariationalState, config: &FfvbConfig) -> StopDecision {
    if state.t >= config.window {
        if let Some(avg) = state.moving_average(config.window) {
            match state.best_moving_avg {
                Some(best) if avg <= best => state.patience_counter += 1,
                _ => {
                    state.best_moving_avg = Some(avg);
                    state.patience_counter = 0;
                }
            }
        }
    }
    if state.patience_counter >= config.patience {
        StopDecision::Stop(Convergence::Patience)
    } else if state.t >= config.max_iter {
        StopDecision::Stop(Convergence::MaxIter)
    } else {
        StopDecision::Continue
    }
}

/// Iterates the adaptive updates on any target until the stopping rule fires.
pub fn optimize<T: LogTarget>(target: &T, config: &FfvbConfig) -> Result<(VariationalState, Convergence)> {
    config.validate()?;
    let mut state = init_state(target, config)?;
    let convergence = loop {
        let samples = draw_theta_samples(&state, config.n_samples, &mut config.rng_for(state.t as u64));
        let est = estimate(&samples, &state, target);
        update_lambda(&mut state, &est.gradient, config)?;
        if !est.lower_bound.is_finite() {
            return Err(Error::Numerical {
                iteration: state.t,
                message: "non-finite lower bound".into(),
            });
        }
        state.lb_history.push(est.lower_bound);
        match check_stopping(&mut state, config) {
            StopDecision::Stop(c) => break c,
            StopDecision::Continue => state.t += 1,
        }
    };
    Ok((state, convergence))
}

/// Runs the optimizer to convergence and draws from the final approximation.
pub fn run_ffvb(
    input: &SimmInput,
    prior: &PriorSpec,
    config: &FfvbConfig,
    mode: VarianceMode,
) -> Result<FittedModel> {
    let post = Posterior::new(input, prior, mode)?;
    let (state, convergence) = optimize(&post, config)?;
    let draws = posterior_draws(&state, config.n_output_draws, &mut config.rng_for(DRAWS_STREAM));
    let mut warnings = Vec::new();
    if convergence == Convergence::MaxIter {
        warnings.push(format!(
            "stopped at max_iter = {} before the patience rule triggered",
            config.max_iter
        ));
    }
    Ok(FittedModel {
        input: input.clone(),
        prior: prior.clone(),
        config: config.clone(),
        mode,
        state,
        convergence,
        theta_draws: draws,
        warnings,
    })
}

/// `n` draws from `MVN(mu, L L^T)` as rows.
pub fn posterior_draws<R: Rng + ?Sized>(state: &VariationalState, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = state.dim();
    let samples = draw_theta_samples(state, n, rng);
    DMatrix::from_fn(n, d, |s, c| samples.thetas[s][c])
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub lower_bound: f64,
    pub moving_average: Option<f64>,
}

pub fn convergence_trace(model: &FittedModel) -> Vec<TracePoint> {
    let w = model.config.window;
    let lb = &model.state.lb_history;
    lb.iter()
        .enumerate()
        .map(|(i, &v)| TracePoint {
                t: i + 1,
                lower_bound: v,
            moving_average: (i + 1 >= w).then(|| lb[i + 1 - w..=i].iter().sum::<f64>() / w as f64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::synthetic_input;

    #[test]
    fn lambda_length_and_round_trip() {
        let mut s = VariationalState::initial(8);
        assert_eq!(s.lambda().len(), 44);
        let lam: Vec<f64> = (0..44).map(|i| i as f64).collect();
        s.set_lambda(&lam);
        assert_eq!(s.lambda(), lam);
        assert_eq!(s.chol[(0, 1)], 0.0);
    }

    #[test]
    fn init_accumulators() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let post = Posterior::new(&input, &prior, VarianceMode::Weighted).unwrap();
        let config = FfvbConfig::default();
        let a = init_state(&post, &config).unwrap();
        let b = init_state(&post, &config).unwrap();
        assert_eq!(a, b);
        for (g, v) in a.gbar.iter().zip(&a.vbar) {
            assert_eq!(*v, g * g);
        }
        assert_eq!((a.t, a.patience_counter), (1, 0));
        assert!(a.mu.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn identity_transform() {
        let mut s = VariationalState::initial(3);
        s.chol = DMatrix::identity(3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = draw_theta_samples(&s, 5, &mut rng);
        assert_eq!(out.thetas, out.kappas);
        let again = draw_theta_samples(&s, 5, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out, again);
    }

    #[test]
    fn zero_kappa_gives_zero_chol_gradient() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let post = Posterior::new(&input, &prior, VarianceMode::Weighted).unwrap();
        let state = VariationalState::initial(8);
        let samples = ThetaSamples {
            thetas: vec![vec![0.0; 8]],
            kappas: vec![vec![0.0; 8]],
        };
        let g = estimate_lb_gradient(&samples, &state, &post);
        assert!(g[8..].iter().all(|&v| v == 0.0));
        assert!(g[..8].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_samples_leave_estimate_unchanged() {
        let input = synthetic_input();
        let prior = PriorSpec::default_for(3, 2);
        let post = Posterior::new(&input, &prior, VarianceMode::Weighted).unwrap();
        let state = VariationalState::initial(8);
        let s = draw_theta_samples(&state, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let doubled = ThetaSamples {
            thetas: s.thetas.iter().chain(&s.thetas).cloned().collect(),
            kappas: s.kappas.iter().chain(&s.kappas).cloned().collect(),
        };
        let a = estimate(&s, &state, &post);
        let b = estimate(&doubled, &state, &post);
        for (x, y) in a.gradient.iter().zip(&b.gradient) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert!((a.lower_bound - b.lower_bound).abs() < 1e-9);
        assert!((estimate_lower_bound(&s, &state, &post) - a.lower_bound).abs() < 1e-9);
    }

    #[test]
    fn update_with_unit_moments_moves_by_eps0() {
        let config = FfvbConfig::default();
        let mut s = VariationalState::initial(2);
        let n = s.lambda().len();
        s.gbar = vec![1.0; n];
        s.vbar = vec![1.0; n];
        s.t = 10;
        let before = s.lambda();
        update_lambda(&mut s, &vec![1.0; n], &config).unwrap();
        for (a, b) in before.iter().zip(s.lambda()) {
            assert!((b - a - config.eps0).abs() < 1e-15);
        }
    }

    #[test]
    fn learning_rate_decays_after_alpha() {
        let config = FfvbConfig::default();
        assert_eq!(learning_rate(&config, 10), config.eps0);
        let t = 100_000;
        assert!((learning_rate(&config, t) - config.eps0 * config.alpha / t as f64).abs() < 1e-15);
    }

    #[test]
    fn beta1_one_freezes_gbar() {
        // validate() rejects beta1 = 1, the rule itself still applies
        let config = FfvbConfig {
            beta1: 1.0,
            ..FfvbConfig::default()
        };
        let mut s = VariationalState::initial(2);
        let n = s.lambda().len();
        s.gbar = vec![0.3; n];
        s.vbar = vec![1.0; n];
        update_lambda(&mut s, &vec![5.0; n], &config).unwrap();
        assert!(s.gbar.iter().all(|&g| g == 0.3));
    }

    #[test]
    fn non_finite_gradient_aborts_with_iteration() {
        let mut s = VariationalState::initial(1);
        s.t = 7;
        let err = update_lambda(&mut s, &[f64::NAN, 0.0], &FfvbConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical { iteration: 7, .. }));
    }

    #[test]
    fn diagonal_clamped() {
        let mut s = VariationalState::initial(1);
        s.gbar = vec![0.0, -1.0];
        s.vbar = vec![1.0, 1.0];
        let config = FfvbConfig {
            eps0: 1.0,
            ..FfvbConfig::default()
        };
        update_lambda(&mut s, &[0.0, -1.0], &config).unwrap();
        assert_eq!(s.chol[(0, 0)], MIN_CHOL_DIAG);
    }

    fn run_stopping(history: &[f64], config: &FfvbConfig) -> (usize, StopDecision) {
        let mut s = VariationalState::initial(1);
        for (i, &lb) in history.iter().enumerate() {
            s.t = i + 1;
            s.lb_history.push(lb);
            if let StopDecision::Stop(c) = check_stopping(&mut s, config) {
                return (s.t, StopDecision::Stop(c));
            }
        }
        (s.t, StopDecision::Continue)
    }

    #[test]
    fn increasing_history_never_accumulates_patience() {
        let config = FfvbConfig {
            window: 5,
            patience: 3,
            max_iter: 1000,
            ..FfvbConfig::default()
        };
        let mut s = VariationalState::initial(1);
        for t in 1..=200 {
            s.t = t;
            s.lb_history.push(t as f64);
            assert_eq!(check_stopping(&mut s, &config), StopDecision::Continue);
            assert_eq!(s.patience_counter, 0);
        }
    }

    #[test]
    fn constant_history_stops_after_patience() {
        let config = FfvbConfig {
            window: 5,
            patience: 7,
            max_iter: 1000,
            ..FfvbConfig::default()
        };
        let (t, d) = run_stopping(&[1.0; 100], &config);
        assert_eq!(d, StopDecision::Stop(Convergence::Patience));
        assert_eq!(t, 5 + 7);
    }

    #[test]
    fn window_of_one_uses_last_value() {
        let mut s = VariationalState::initial(1);
        s.lb_history = vec![3.0, 1.0, 4.0];
        assert_eq!(s.moving_average(1), Some(4.0));
    }

    #[test]
    fn max_iter_stop() {
        let config = FfvbConfig {
            window: 2,
            patience: 100,
            max_iter: 10,
            ..FfvbConfig::default()
        };
        let mut s = VariationalState::initial(1);
        s.t = 10;
        s.lb_history = vec![0.0; 10];
        assert_eq!(check_stopping(&mut s, &config), StopDecision::Stop(Convergence::MaxIter));
    }
}
