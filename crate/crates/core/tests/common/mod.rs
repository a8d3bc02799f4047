#![allow(dead_code)]

use std::path::{Path, PathBuf};

use isomix::{FfvbConfig, FittedModel, PriorSpec, SimmInput, SourceTable, ThetaPoint, VarianceMode};
use nalgebra::DMatrix;
use rand::Rng;

pub fn data_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fit_default(input: &SimmInput, seed: u64, mode: VarianceMode) -> FittedModel {
    let prior = PriorSpec::default_for(input.n_sources(), input.n_covariates());
    let cfg = FfvbConfig {
        seed,
        ..FfvbConfig::default()
    };
    isomix::run_ffvb(input, &prior, &cfg, mode).expect("fit")
}

pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|c| m.column(c).mean()).collect()
}

/// Random input with TDFs, concentrations and an arbitrary design matrix,
/// plus a random parameter point.
pub fn random_instance<R: Rng>(rng: &mut R, k: usize, j: usize, l: usize, n: usize) -> (SimmInput, ThetaPoint) {
    let mut m = |r: usize, c: usize, lo: f64, hi: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi));
    let sources = SourceTable {
        names: (0..k).map(|s| format!("s{s}")).collect(),
        means: m(k, j, -10.0, 10.0),
        sds: m(k, j, 0.2, 2.0),
    };
    let tdf = SourceTable {
        names: sources.names.clone(),
        means: m(k, j, -2.0, 2.0),
        sds: m(k, j, 0.0, 1.0),
    };
    let q = m(k, j, 0.2, 3.0);
    let x = m(n, l, -2.0, 2.0);
    let y = m(n, j, -8.0, 8.0);
    let theta = ThetaPoint {
        beta: m(k, l, -2.0, 2.0),
        log_sigma2: (0..j).map(|_| rng.random_range(-2.0..2.0)).collect(),
    };
    let input = SimmInput::from_design_matrix(y, sources, Some(tdf), Some(q), x).expect("valid instance");
    (input, theta)
}
