use nalgebra::DMatrix;
use rand::Rng;

use crate::datasets::synthetic_example;
use crate::input::{SimmInput, SourceTable};
use crate::likelihood::ThetaPoint;

pub fn synthetic_input() -> SimmInput {
    synthetic_example()
}

/// Random input with TDFs and concentrations, and a random theta.
pub fn random_input<R: Rng>(
    rng: &mut R,
    k: usize,
    j: usize,
    l: usize,
    n: usize,
) -> (SimmInput, ThetaPoint) {
    let mut m = |r: usize, c: usize, lo: f64, hi: f64| {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
    };
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
    let input = SimmInput::from_design_matrix(y, sources, Some(tdf), Some(q), x).unwrap();
    let theta = ThetaPoint {
        beta: m(k, l, -2.0, 2.0),
        log_sigma2: (0..j).map(|_| rng.random_range(-2.0..2.0)).collect(),
    };
    (input, theta)
}
