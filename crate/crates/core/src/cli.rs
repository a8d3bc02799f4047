//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{alligator_style, ALLIGATOR_N, ALLIGATOR_SEED};
use crate::design::CovariateSpec;
use crate::error::{Error, Result};
use crate::ffvb::{convergence_trace, run_ffvb, FfvbConfig};
use crate::geometry::validate_geometry;
use crate::inference::{posterior_predictive, predict_proportions, prior_viz, summarize, summarize_draws, SummaryKind};
use crate::input::{load_dataset, read_covariates, write_dataset, DatasetFiles};
use crate::likelihood::{PriorSpec, VarianceMode};
use crate::loo::{compare, loo_estimate, pointwise_loglik};
use crate::model::FittedModel;
use crate::plot::{
    beta_histogram, convergence_figure, covariates_plot, isospace_figure, posterior_predictive_figures,
    prior_viz_figures, prop_histogram, Figure,
};
use crate::simulation::{simulate_dataset, Scenario};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "isomix", version, about = "Covariate-dependent stable isotope mixing models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Fit a model and write model.json and fit-report.txt.
    Fit(FitArgs),
    /// Summarize fitted proportions for chosen observations.
    Summary(SummaryArgs),
    /// Predict proportions at new raw covariate values.
    Predict(PredictArgs),
    /// Posterior-predictive intervals and coverage.
    Postpred(PostpredArgs),
    /// Write a simulated dataset and its generating parameters.
    Simulate(SimulateArgs),
    /// Rank fitted models by leave-one-out information criterion.
    Compare(CompareArgs),
    /// Emit plot data (CSV) and figures (SVG).
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulaKind {
    /// One-hot without intercept for a sole categorical, treatment coding otherwise.
    Default,
    /// Treatment coding with an intercept for every categorical.
    Treatment,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub mixtures: PathBuf,
    #[arg(long)]
    pub sources: PathBuf,
    #[arg(long)]
    pub tdf: Option<PathBuf>,
    #[arg(long)]
    pub concentration: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Right-hand side such as `length`, `sex + length` or `sex * sclass`.
    /// Defaults to every covariate column, additively; `1` fits intercept only.
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long, value_enum, default_value = "default")]
    pub formula_kind: FormulaKind,
    /// Columns to treat as categorical even if numeric (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub prior_beta_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_beta_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_sigma_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_sigma_rate: f64,
    /// Optimizer settings as JSON; flags given explicitly take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "S")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "weighted")]
    pub mode: VarianceMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One-based observation ids (comma separated); defaults to 1.
    #[arg(long, value_delimiter = ',')]
    pub obs: Vec<usize>,
    #[arg(long = "type", value_enum, default_value = "statistics")]
    pub kind: SummaryKind,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of raw covariate values, one row per prediction.
    #[arg(long)]
    pub newdata: PathBuf,
    #[arg(long = "type", value_enum, default_value = "statistics")]
    pub kind: SummaryKind,
    /// Directory for predictions.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostpredArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// low, medium, high or alligator.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of individuals for the alligator preset.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
    /// Labels for the models, in order; defaults to file stems.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Directory for comparison.csv and comparison.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    Isospace,
    PropHistogram,
    CovariatesPlot,
    BetaHistogram,
    PriorViz,
    Convergence,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long, default_value_t = 1)]
    pub obs: usize,
    /// One-based tracer pair for the iso-space plot.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    pub tracers: Vec<usize>,
    #[arg(long)]
    pub color_by: Option<String>,
    #[arg(long, default_value_t = 3600)]
    pub n_prior_draws: usize,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a fit was run from, echoed into the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub files: DatasetFiles,
    pub formula: String,
    pub formula_kind: String,
    pub prior_beta_mean: f64,
    pub prior_beta_sd: f64,
    pub config: FfvbConfig,
    pub mode: VarianceMode,
    pub out: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Invalid(format!("serialize: {e}")))
}

fn optimizer_config(args: &FitArgs) -> Result<FfvbConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text).map_err(|e| Error::parse("config", e.to_string()))?
        }
        None => FfvbConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v; })*
        };
    }
    set!(n_samples <- n_samples, patience <- patience, beta1 <- beta1, beta2 <- beta2,
         eps0 <- eps0, alpha <- alpha, window <- window, max_iter <- max_iter,
         n_output_draws <- n_draws, seed <- seed);
    cfg.validate()?;
    Ok(cfg)
}

pub fn manifest_from_args(args: &FitArgs) -> Result<RunManifest> {
    let files = DatasetFiles {
        mixtures: args.mixtures.clone(),
        sources: args.sources.clone(),
        tdf: args.tdf.clone(),
        concentration: args.concentration.clone(),
        covariates: args.covariates.clone(),
    };
    for p in [Some(&files.mixtures), Some(&files.sources), files.tdf.as_ref(), files.concentration.as_ref(), files.covariates.as_ref()]
        .into_iter()
        .flatten()
    {
        require_file(p)?;
    }
    Ok(RunManifest {
        files,
        formula: args.formula.clone().unwrap_or_default(),
        formula_kind: format!("{:?}", args.formula_kind).to_lowercase(),
        prior_beta_mean: args.prior_beta_mean,
        prior_beta_sd: args.prior_beta_sd,
        config: optimizer_config(args)?,
        mode: args.mode,
        out: args.out.clone(),
    })
}

pub fn cmd_fit(args: &FitArgs) -> Result<FittedModel> {
    let manifest = manifest_from_args(args)?;
    let table = manifest.files.read_covariates()?;
    let formula = if manifest.formula.is_empty() {
        if table.names.is_empty() {
            "1".to_string()
        } else {
            table.names.join(" + ")
        }
    } else {
        manifest.formula.clone()
    };
    let mut spec = CovariateSpec::from_formula(&formula, &table, &args.categorical)?;
    if args.formula_kind == FormulaKind::Treatment {
        spec = spec.with_treatment_coding();
    }
    let input = load_dataset(&manifest.files, &spec)?;
    let (k, l) = (input.n_sources(), input.n_covariates());
    let prior = PriorSpec {
        beta_mean: DMatrix::from_element(k, l, args.prior_beta_mean),
        beta_sd: DMatrix::from_element(k, l, args.prior_beta_sd),
        sigma_shape: args.prior_sigma_shape,
        sigma_rate: args.prior_sigma_rate,
    };
    prior.validate(k, l)?;
    let geometry = (input.n_tracers() >= 2).then(|| validate_geometry(&input)).transpose()?;
    let mut model = run_ffvb(&input, &prior, &manifest.config, manifest.mode)?;
    if let Some(g) = &geometry {
        model.warnings.extend(g.warnings.iter().cloned());
    }

    create_dir(&manifest.out)?;
    model.save(&manifest.out.join("model.json"))?;
    let mut report = String::new();
    let _ = writeln!(report, "formula: {formula} ({})", manifest.formula_kind);
    let _ = writeln!(report, "variance mode: {:?}", manifest.mode);
    let _ = writeln!(
        report,
        "N = {}, J = {}, K = {}, L = {}",
        input.n_obs(),
        input.n_tracers(),
        k,
        l
    );
    let labels: Vec<String> = input.design.columns.iter().map(|c| c.label()).collect();
    let _ = writeln!(report, "design columns: {}", labels.join(", "));
    let _ = writeln!(report, "optimizer: {}", serde_json::to_string(&manifest.config).unwrap_or_default());
    let _ = writeln!(
        report,
        "stopped after {} iterations ({:?})",
        model.iterations(),
        model.convergence
    );
    if let Some(last) = convergence_trace(&model).last() {
        if let Some(ma) = last.moving_average {
            let _ = writeln!(report, "final moving-average lower bound: {ma:.3}");
        }
    }
    match &geometry {
        Some(g) => {
            let outside = g.outside_indices();
            if outside.is_empty() {
                let _ = writeln!(report, "geometry: all mixtures inside the mixing polygon");
            } else {
                let ids: Vec<String> = outside.iter().map(|i| (i + 1).to_string()).collect();
                let _ = writeln!(report, "geometry: mixtures outside the mixing polygon: {}", ids.join(", "));
            }
        }
        None => {
            let _ = writeln!(report, "geometry: skipped (single tracer)");
        }
    }
    for w in &model.warnings {
        let _ = writeln!(report, "warning: {w}");
    }
    report.push('\n');
    report.push_str(&summarize(&model, &[1], SummaryKind::Statistics)?.to_text());
    write_file(&manifest.out.join("fit-report.txt"), report)?;
    Ok(model)
}

fn cmd_summary(args: &SummaryArgs) -> Result<String> {
    let model = FittedModel::load(&args.model)?;
    let table = summarize(&model, &args.obs, args.kind)?;
    if args.json {
        to_json(&table)
    } else {
        Ok(table.to_text())
    }
}

fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let model = FittedModel::load(&args.model)?;
    let table = read_covariates(&args.newdata)?;
    let pred = predict_proportions(&model, &table)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("predictions.json"), to_json(&pred)?)?;
    }
    Ok(summarize_draws(&pred, None, &pred.obs_ids, args.kind)?.to_text())
}

fn cmd_postpred(args: &PostpredArgs) -> Result<String> {
    let model = FittedModel::load(&args.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pp = posterior_predictive(&model, args.level, &mut rng)?;
    create_dir(&args.out)?;
    let (all, figures) = posterior_predictive_figures(&pp);
    write_file(&args.out.join("intervals.csv"), all.to_csv()?)?;
    for f in &figures {
        f.write(&args.out)?;
    }
    #[derive(Serialize)]
    struct Coverage<'a> {
        level: f64,
        coverage: f64,
        tracers: &'a [String],
        coverage_per_tracer: &'a [f64],
    }
    write_file(
        &args.out.join("coverage.json"),
        to_json(&Coverage {
            level: pp.level,
            coverage: pp.coverage,
            tracers: &pp.tracer_names,
            coverage_per_tracer: &pp.coverage_per_tracer,
        })?,
    )?;
    let mut text = format!(
        "{:.1}% of observations inside their {:.0}% posterior-predictive interval\n",
        pp.coverage * 100.0,
        pp.level * 100.0
    );
    for (t, c) in pp.tracer_names.iter().zip(&pp.coverage_per_tracer) {
        let _ = writeln!(text, "  {t}: {:.1}%", c * 100.0);
    }
    Ok(text)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    create_dir(&args.out)?;
    if args.preset.eq_ignore_ascii_case("alligator") {
        let seed = if args.seed == 1 { ALLIGATOR_SEED } else { args.seed };
        let data = alligator_style(args.n.unwrap_or(ALLIGATOR_N), seed);
        let input = data.input("1")?;
        write_dataset(&input, &args.out)?;
        #[derive(Serialize)]
        struct Truth {
            preset: &'static str,
            seed: u64,
            n: usize,
            description: &'static str,
            marine_logit_per_sd_length: f64,
        }
        write_file(
            &args.out.join("truth.json"),
            to_json(&Truth {
                preset: "alligator",
                seed,
                n: input.n_obs(),
                description: "log(P(Marine)/P(Freshwater)) = 2 * standardized length",
                marine_logit_per_sd_length: 2.0,
            })?,
        )?;
        return Ok(format!("wrote alligator-style dataset ({} individuals) to {}\n", input.n_obs(), args.out.display()));
    }
    let scenario = Scenario::preset(&args.preset)?;
    let (input, truth) = simulate_dataset(&scenario, args.seed)?;
    write_dataset(&input, &args.out)?;
    #[derive(Serialize)]
    struct Truth<'a> {
        scenario: &'a Scenario,
        seed: u64,
        design_columns: Vec<String>,
        theta: &'a crate::likelihood::ThetaPoint,
        sigma: Vec<f64>,
    }
    write_file(
        &args.out.join("truth.json"),
        to_json(&Truth {
            scenario: &scenario,
            seed: args.seed,
            design_columns: input.design.columns.iter().map(|c| c.label()).collect(),
            theta: &truth,
            sigma: truth.sigma(),
        })?,
    )?;
    Ok(format!(
        "wrote {} scenario (N={}, J={}, K={}, L={}) to {}\n",
        scenario.name,
        scenario.n,
        scenario.j,
        scenario.k,
        scenario.l,
        args.out.display()
    ))
}

fn cmd_compare(args: &CompareArgs) -> Result<String> {
    if !args.labels.is_empty() && args.labels.len() != args.models.len() {
        return Err(Error::Invalid(format!(
            "{} labels given for {} models",
            args.labels.len(),
            args.models.len()
        )));
    }
    let mut results = Vec::with_capacity(args.models.len());
    for (i, path) in args.models.iter().enumerate() {
        let model = FittedModel::load(path)?;
        let label = args.labels.get(i).cloned().unwrap_or_else(|| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            match path.parent().and_then(|p| p.file_name()) {
                Some(dir) if stem == "model" => dir.to_string_lossy().into_owned(),
                _ => stem,
            }
        });
        results.push((label, loo_estimate(&pointwise_loglik(&model)?)?));
    }
    let cmp = compare(&results)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("comparison.csv"), cmp.to_csv())?;
        write_file(&dir.join("comparison.json"), to_json(&cmp)?)?;
    }
    Ok(cmp.to_text())
}

fn cmd_plot(args: &PlotArgs) -> Result<String> {
    let model = FittedModel::load(&args.model)?;
    let figures: Vec<Figure> = match args.kind {
        PlotKind::Isospace => {
            if args.tracers.len() != 2 || args.tracers.contains(&0) {
                return Err(Error::Invalid("--tracers takes two one-based indices".into()));
            }
            vec![isospace_figure(
                &model.input,
                (args.tracers[0] - 1, args.tracers[1] - 1),
                args.color_by.as_deref(),
            )?]
        }
        PlotKind::PropHistogram => vec![prop_histogram(&model, args.obs)?],
        PlotKind::CovariatesPlot => covariates_plot(&model, args.grid_points)?,
        PlotKind::BetaHistogram => beta_histogram(&model)?,
        PlotKind::PriorViz => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            prior_viz_figures(&prior_viz(&model, args.obs, args.n_prior_draws, &mut rng)?)
        }
        PlotKind::Convergence => vec![convergence_figure(&model)],
    };
    create_dir(&args.out)?;
    let mut text = String::new();
    for f in &figures {
        f.write(&args.out)?;
        let _ = writeln!(text, "wrote {0}.svg and {0}.csv", f.name);
    }
    Ok(text)
}

/// Runs a parsed command, returning what should go to standard output.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fit(a) => {
            let model = cmd_fit(a)?;
            Ok(format!(
                "fit finished after {} iterations ({:?}); wrote {}\n",
                model.iterations(),
                model.convergence,
                a.out.join("model.json").display()
            ))
        }
        Command::Summary(a) => cmd_summary(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Postpred(a) => cmd_postpred(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Caps rayon's pool at `ISOMIX_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ISOMIX_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("ISOMIX_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Invalid("ISOMIX_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}
