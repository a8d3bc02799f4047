//! Bundled example datasets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::design::{format_number, CovariateKind, CovariateSpec, CovariateTable};
use crate::input::{SimmInput, SourceTable};

/// Ten mixtures, two tracers, three sources and one covariate `x`.
pub fn synthetic_example() -> SimmInput {
    let iso1 = [5.0, 5.1, 4.7, 3.6, 3.2, 0.0, -1.0, -2.0, -3.0, -7.0];
    let iso2 = [3.1, 5.6, 3.6, 4.7, 1.3, 1.0, -4.0, -3.0, -7.0, -9.0];
    let y = DMatrix::from_fn(10, 2, |i, j| if j == 0 { iso1[i] } else { iso2[i] });
    let sources = SourceTable {
        names: vec!["A".into(), "B".into(), "C".into()],
        means: DMatrix::from_row_slice(3, 2, &[-10.0, -10.0, 0.0, 10.0, 10.0, 0.0]),
        sds: DMatrix::from_element(3, 2, 1.0),
    };
    let x = [1.6, 1.7, 2.1, 2.5, 1.1, 3.7, 4.5, 6.8, 7.1, 7.7];
    let covariates = CovariateTable::from_numeric("x", &x);
    let spec = CovariateSpec::new(vec![("x".into(), CovariateKind::Continuous)], vec![]);
    SimmInput::from_parts(
        y,
        vec!["iso1".into(), "iso2".into()],
        sources,
        None,
        None,
        covariates,
        &spec,
    )
    .expect("bundled synthetic dataset is valid")
}

/// Raw tables of a two-source dataset with habitat, sex, size class and
/// length covariates, where only length drives the diet.
#[derive(Debug, Clone)]
pub struct AlligatorStyle {
    pub tracer_names: Vec<String>,
    pub y: DMatrix<f64>,
    pub sources: SourceTable,
    pub covariates: CovariateTable,
}

impl AlligatorStyle {
    /// Input for one formula over the shared covariate table.
    pub fn input(&self, formula: &str) -> crate::Result<SimmInput> {
        let spec = CovariateSpec::from_formula(formula, &self.covariates, &[])?;
        SimmInput::from_parts(
            self.y.clone(),
            self.tracer_names.clone(),
            self.sources.clone(),
            None,
            None,
            self.covariates.clone(),
            &spec,
        )
    }
}

/// The eight covariate panels compared on the alligator-style data.
pub const ALLIGATOR_FORMULAS: [(&str, &str); 8] = [
    ("Model 1", "1"),
    ("Model 2", "habitat"),
    ("Model 3", "sex"),
    ("Model 4", "sclass"),
    ("Model 5", "length"),
    ("Model 6", "sex + sclass"),
    ("Model 7", "sex + length"),
    ("Model 8", "sex * sclass"),
];

/// Size class from total length in cm.
pub fn size_class(length: f64) -> &'static str {
    match length {
        l if l < 90.0 => "small_juvenile",
        l if l < 140.0 => "large_juvenile",
        l if l < 180.0 => "subadult",
        _ => "adult",
    }
}

/// Generates the alligator-style dataset. The log-ratio of marine to
/// freshwater consumption is linear in standardized length with slope 2.
pub fn alligator_style(n: usize, seed: u64) -> AlligatorStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let habitats = ["fresh", "intermediate", "marine"];
    let sexes = ["female", "male"];
    let mut length = Vec::with_capacity(n);
    let mut habitat = Vec::with_capacity(n);
    let mut sex = Vec::with_capacity(n);
    let mut sclass = Vec::with_capacity(n);
    for _ in 0..n {
        let l: f64 = (rng.random_range(50.0..300.0) * 10.0f64).round() / 10.0;
        length.push(l);
        habitat.push(habitats[rng.random_range(0..3)].to_string());
        sex.push(sexes[rng.random_range(0..2)].to_string());
        sclass.push(size_class(l).to_string());
    }
    let mean = length.iter().sum::<f64>() / n as f64;
    let sd = (length.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();

    let sources = SourceTable {
        names: vec!["Freshwater".into(), "Marine".into()],
        means: DMatrix::from_row_slice(2, 2, &[-27.0, 7.0, -17.0, 13.0]),
        sds: DMatrix::from_row_slice(2, 2, &[1.2, 1.0, 1.0, 1.2]),
    };
    let resid = [0.8, 0.6];
    let mut y = DMatrix::zeros(n, 2);
    for i in 0..n {
        let z = (length[i] - mean) / sd;
        let p_marine = 1.0 / (1.0 + (-2.0 * z).exp());
        let p = [1.0 - p_marine, p_marine];
        for t in 0..2 {
            let mut v = 0.0;
            for (s, ps) in p.iter().enumerate() {
                let draw = Normal::new(sources.means[(s, t)], sources.sds[(s, t)])
                    .unwrap()
                    .sample(&mut rng);
                v += ps * draw;
            }
            v += Normal::new(0.0, resid[t]).unwrap().sample(&mut rng);
            y[(i, t)] = (v * 100.0f64).round() / 100.0;
        }
    }
    let covariates = CovariateTable {
        names: vec!["habitat".into(), "sex".into(), "sclass".into(), "length".into()],
        columns: vec![
            habitat,
            sex,
            sclass,
            length.iter().map(|v| format_number(*v)).collect(),
        ],
    };
    AlligatorStyle {
        tracer_names: vec!["d13C".into(), "d15N".into()],
        y,
        sources,
        covariates,
    }
}

/// Default size and seed of the bundled alligator-style files.
pub const ALLIGATOR_N: usize = 181;
pub const ALLIGATOR_SEED: u64 = 2015;
