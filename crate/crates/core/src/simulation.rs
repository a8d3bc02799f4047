//! Synthetic datasets drawn from the model and the checks run on fits to
//! them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{format_number, CovariateKind, CovariateSpec, CovariateTable};
use crate::error::{Error, Result};
use crate::inference::{posterior_predictive, quantile_sorted};
use crate::input::{SimmInput, SourceTable};
use crate::likelihood::{proportions_from_design, ThetaPoint};
use crate::model::FittedModel;

/// Size and generator settings of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub j: usize,
    pub k: usize,
    /// Design columns, including the intercept.
    pub l: usize,
    pub mu_s_range: (f64, f64),
    pub sigma_s_range: (f64, f64),
    /// Source sds below this are raised to it.
    pub sigma_s_floor: f64,
    /// `1/sigma ~ Gamma(shape, rate)`.
    pub sigma_shape: f64,
    pub sigma_rate: f64,
}

impl Scenario {
    pub fn new(name: &str, n: usize, j: usize, k: usize, l: usize) -> Self {
        Scenario {
            name: name.to_string(),
            n,
            j,
            k,
            l,
            mu_s_range: (-10.0, 10.0),
            sigma_s_range: (0.0, 2.0),
            sigma_s_floor: 0.01,
            sigma_shape: 1.0,
            sigma_rate: 1.0,
        }
    }

    pub fn low() -> Self {
        Scenario::new("low", 50, 2, 3, 2)
    }

    pub fn medium() -> Self {
        Scenario::new("medium", 200, 3, 4, 5)
    }

    pub fn high() -> Self {
        Scenario::new("high", 500, 4, 5, 10)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "low" => Ok(Self::low()),
            "medium" => Ok(Self::medium()),
            "high" => Ok(Self::high()),
            other => Err(Error::Invalid(format!(
                "unknown scenario `{other}` (expected low, medium or high)"
            ))),
        }
    }
}

/// Draws a dataset and the parameters that generated it.
///
/// Covariates are `L - 1` standard-normal columns under an intercept; the
/// true `beta` refers to the standardized design the returned input holds.
/// Mixtures follow the forward model with no TDFs and unit concentrations.
pub fn simulate_dataset(scenario: &Scenario, seed: u64) -> Result<(SimmInput, ThetaPoint)> {
    let Scenario { n, j, k, l, .. } = *scenario;
    if n < 2 || j < 1 || k < 1 || l < 1 {
        return Err(Error::Invalid("scenario dimensions must be positive (N >= 2)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (1..l).map(|c| format!("x{c}")).collect();
    let columns: Vec<Vec<String>> = names
        .iter()
        .map(|_| {
            (0..n)
                .map(|_| format_number(rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect();
    let covariates = CovariateTable::new(names.clone(), columns)?;
    let spec = CovariateSpec::new(
        names.into_iter().map(|n| (n, CovariateKind::Continuous)).collect(),
        vec![],
    );

    let beta = DMatrix::from_fn(k, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gamma = Gamma::new(scenario.sigma_shape, 1.0 / scenario.sigma_rate)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let sigma: Vec<f64> = (0..j).map(|_| 1.0 / gamma.sample(&mut rng)).collect();
    let (lo, hi) = scenario.mu_s_range;
    let mu_s = DMatrix::from_fn(k, j, |_, _| rng.random_range(lo..hi));
    let (slo, shi) = scenario.sigma_s_range;
    let sigma_s = DMatrix::from_fn(k, j, |_, _| {
        rng.random_range(slo..shi).max(scenario.sigma_s_floor)
    });
    let sources = SourceTable {
        names: (1..=k).map(|s| format!("source{s}")).collect(),
        means: mu_s,
        sds: sigma_s,
    };
    let tracer_names: Vec<String> = (1..=j).map(|t| format!("tracer{t}")).collect();

    // Build the design first so y is generated against the standardized X.
    let placeholder = DMatrix::zeros(n, j);
    let mut input = SimmInput::from_parts(
        placeholder,
        tracer_names,
        sources,
        None,
        None,
        covariates,
        &spec,
    )?;
    let p = proportions_from_design(&input.x, &beta);
    for i in 0..n {
        for t in 0..j {
            let mut v = 0.0;
            for s in 0..k {
                let draw = Normal::new(input.mu_s[(s, t)], input.sigma_s[(s, t)])
                    .map_err(|e| Error::Invalid(e.to_string()))?
                    .sample(&mut rng);
                v += p[(i, s)] * draw;
            }
            let eps: f64 = rng.sample(StandardNormal);
            input.y[(i, t)] = v + sigma[t] * eps;
        }
    }
    input.validate()?;
    let truth = ThetaPoint {
        beta,
        log_sigma2: sigma.iter().map(|s| (s * s).ln()).collect(),
    };
    Ok((input, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub level: f64,
    pub coverage: f64,
    pub per_tracer: Vec<f64>,
}

/// Fraction of observed values inside their central posterior-predictive
/// interval at `level`.
pub fn coverage_check(fit: &FittedModel, level: f64, seed: u64) -> Result<CoverageReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pp = posterior_predictive(fit, level, &mut rng)?;
    Ok(CoverageReport {
        level,
        coverage: pp.coverage,
        per_tracer: pp.coverage_per_tracer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecoveryRow {
    pub source: String,
    pub column: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Fraction of posterior draws below the true value.
    pub quantile_of_truth: f64,
    pub inside_90: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecovery {
    pub rows: Vec<BetaRecoveryRow>,
    pub fraction_inside_90: f64,
}

/// Where each true coefficient falls in its marginal posterior.
pub fn beta_recovery_report(fit: &FittedModel, truth: &ThetaPoint) -> Result<BetaRecovery> {
    let (k, l) = (fit.input.n_sources(), fit.input.n_covariates());
    if truth.beta.shape() != (k, l) {
        return Err(Error::dimension(
            "truth",
            format!("beta is {}x{}, model has {k}x{l}", truth.beta.nrows(), truth.beta.ncols()),
        ));
    }
    let labels: Vec<String> = fit.input.design.columns.iter().map(|c| c.label()).collect();
    let mut rows = Vec::with_capacity(k * l);
    for s in 0..k {
        for c in 0..l {
            let mut draws: Vec<f64> = fit.theta_draws.column(s * l + c).iter().copied().collect();
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let sd = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            draws.sort_by(f64::total_cmp);
            let t = truth.beta[(s, c)];
            let below = draws.iter().filter(|&&v| v < t).count() as f64 / n;
            let inside = t >= quantile_sorted(&draws, 0.05) && t <= quantile_sorted(&draws, 0.95);
            rows.push(BetaRecoveryRow {
                source: fit.input.source_names[s].clone(),
                column: labels[c].clone(),
                truth: t,
                mean,
                sd,
                quantile_of_truth: below,
                inside_90: inside,
            });
        }
    }
    let fraction = rows.iter().filter(|r| r.inside_90).count() as f64 / rows.len() as f64;
    Ok(BetaRecovery {
        rows,
        fraction_inside_90: fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let s = Scenario::low();
        assert_eq!((s.n, s.j, s.k, s.l), (50, 2, 3, 2));
        let s = Scenario::medium();
        assert_eq!((s.n, s.j, s.k, s.l), (200, 3, 4, 5));
        let s = Scenario::high();
        assert_eq!((s.n, s.j, s.k, s.l), (500, 4, 5, 10));
        assert!(Scenario::preset("extreme").is_err());
    }

    #[test]
    fn low_preset_shapes_and_determinism() {
        let (a, ta) = simulate_dataset(&Scenario::low(), 7).unwrap();
        let (b, tb) = simulate_dataset(&Scenario::low(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(
            (a.n_obs(), a.n_tracers(), a.n_sources(), a.n_covariates()),
            (50, 2, 3, 2)
        );
        assert!(a.y.iter().all(|v| v.is_finite()));
        assert!(a.mu_c.iter().all(|&v| v == 0.0));
        assert!(a.q.iter().all(|&v| v == 1.0));
        assert!(a.sigma_s.iter().all(|&v| v >= 0.01));
        let p = proportions_from_design(&a.x, &ta.beta);
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}
