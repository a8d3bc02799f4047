//! Plot data tables and the SVG figures drawn from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::EncodedTerm;
use crate::error::{Error, Result};
use crate::ffvb::convergence_trace;
use crate::geometry::convex_hull;
use crate::inference::{
    categorical_levels, covariate_effect_curve, fitted_proportions, observed_grid, quantile_sorted,
    PosteriorPredictive, PriorPosterior,
};
use crate::input::SimmInput;
use crate::model::FittedModel;
use crate::svg::{color, histogram, padded_range, BoxStats, Chart};

const BINS: usize = 40;

/// Rectangular table of plot data written as CSV next to its figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn new(headers: &[&str]) -> Self {
        PlotTable {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Invalid(format!("csv: {e}"));
        w.write_record(&self.headers).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// A named figure: its data table and rendered SVG.
#[derive(Debug, Clone)]
pub struct Figure {
    pub name: String,
    pub table: PlotTable,
    pub svg: String,
}

impl Figure {
    /// Writes `<name>.csv` and `<name>.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        let csv_path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&csv_path, self.table.to_csv()?).map_err(io(&csv_path))?;
        let svg_path = dir.join(format!("{}.svg", self.name));
        std::fs::write(&svg_path, &self.svg).map_err(io(&svg_path))?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Mixtures (raw) and TDF-adjusted source means with one-sd bars for one
/// tracer pair, optionally coloured by a raw covariate.
pub fn isospace_plot_data(input: &SimmInput, pair: (usize, usize), color_by: Option<&str>) -> Result<PlotTable> {
    let (a, b) = pair;
    let j = input.n_tracers();
    if a == b || a >= j || b >= j {
        return Err(Error::Invalid(format!(
            "tracer pair ({a}, {b}) must be two distinct indices below {j}"
        )));
    }
    let colour = match color_by {
        Some(name) => Some(input.covariates.column(name)?.to_vec()),
        None => None,
    };
    let mut t = PlotTable::new(&["kind", "label", "x", "y", "sd_x", "sd_y", "color"]);
    for i in 0..input.n_obs() {
        t.push(vec![
            "mixture".into(),
            (i + 1).to_string(),
            num(input.y[(i, a)]),
            num(input.y[(i, b)]),
            "0".into(),
            "0".into(),
            colour.as_ref().map_or(String::new(), |c| c[i].clone()),
        ]);
    }
    let mu = input.mu_sc();
    let var = input.var_sc();
    for (k, name) in input.source_names.iter().enumerate() {
        t.push(vec![
            "source".into(),
            name.clone(),
            num(mu[(k, a)]),
            num(mu[(k, b)]),
            num(var[(k, a)].sqrt()),
            num(var[(k, b)].sqrt()),
            String::new(),
        ]);
    }
    Ok(t)
}

fn parse_col(t: &PlotTable, row: &[String], name: &str) -> f64 {
    row[t.column(name).unwrap()].parse().unwrap_or(f64::NAN)
}

pub fn isospace_figure(input: &SimmInput, pair: (usize, usize), color_by: Option<&str>) -> Result<Figure> {
    let table = isospace_plot_data(input, pair, color_by)?;
    let rows: Vec<(bool, String, f64, f64, f64, f64)> = table
        .rows
        .iter()
        .map(|r| {
            (
                r[0] == "mixture",
                r[1].clone(),
                parse_col(&table, r, "x"),
                parse_col(&table, r, "y"),
                parse_col(&table, r, "sd_x"),
                parse_col(&table, r, "sd_y"),
            )
        })
        .collect();
    let xr = padded_range(rows.iter().flat_map(|r| [r.2 - r.4, r.2 + r.4]));
    let yr = padded_range(rows.iter().flat_map(|r| [r.3 - r.5, r.3 + r.5]));
    let (na, nb) = (&input.tracer_names[pair.0], &input.tracer_names[pair.1]);
    let mut chart = Chart::new("Iso-space plot", na, nb, xr, yr);
    let sources: Vec<(f64, f64)> = rows.iter().filter(|r| !r.0).map(|r| (r.2, r.3)).collect();
    let hull = convex_hull(&sources);
    if hull.len() >= 3 {
        chart.polygon(&hull, "#444444");
    }
    let mixtures: Vec<(f64, f64)> = rows.iter().filter(|r| r.0).map(|r| (r.2, r.3)).collect();
    chart.points(&mixtures, "#222222", 3.0);
    chart.legend("mixtures", "#666666");
    for (k, r) in rows.iter().filter(|r| !r.0).enumerate() {
        chart.error_cross((r.2, r.3), (r.4, r.5), color(k));
        chart.legend(&r.1, color(k));
    }
    Ok(Figure {
        name: format!("isospace_{}_{}", pair.0 + 1, pair.1 + 1),
        table,
        svg: chart.render(),
    })
}

/// Histogram of proportion draws for one observation, one series per source.
pub fn prop_histogram(model: &FittedModel, obs: usize) -> Result<Figure> {
    let draws = fitted_proportions(model, &[obs])?;
    let p = &draws.draws[0];
    let names = &model.input.source_names;
    let headers: Vec<&str> = std::iter::once("draw").chain(names.iter().map(String::as_str)).collect();
    let mut table = PlotTable::new(&headers);
    for s in 0..p.nrows() {
        let mut row = vec![(s + 1).to_string()];
        row.extend(p.row(s).iter().map(|v| num(*v)));
        table.push(row);
    }
    let series: Vec<(Vec<usize>, Vec<f64>)> = (0..p.ncols())
        .map(|c| {
            let (edges, counts) = histogram(&p.column(c).iter().copied().collect::<Vec<_>>(), BINS, (0.0, 1.0));
            (counts, edges)
        })
        .collect();
    let ymax = series
        .iter()
        .flat_map(|(counts, _)| counts.iter().map(|&c| c as f64 * BINS as f64 / p.nrows() as f64))
        .fold(0.0, f64::max);
    let mut chart = Chart::new(
        &format!("Proportions for observation {obs}"),
        "proportion",
        "density",
        (0.0, 1.0),
        (0.0, ymax * 1.05 + 1e-9),
    );
    for (c, (counts, edges)) in series.iter().enumerate() {
        chart.histogram(edges, counts, color(c));
        chart.legend(&names[c], color(c));
    }
    Ok(Figure {
        name: format!("prop_histogram_obs{obs}"),
        table,
        svg: chart.render(),
    })
}

fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BoxStats {
        low: quantile_sorted(&v, 0.025),
        q1: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q3: quantile_sorted(&v, 0.75),
        high: quantile_sorted(&v, 0.975),
    }
}

/// One figure per covariate: a mean +/- 2 sd ribbon over the observed range
/// for continuous covariates, per-level boxplots for categorical ones.
pub fn covariates_plot(model: &FittedModel, grid_points: usize) -> Result<Vec<Figure>> {
    let names = &model.input.source_names;
    let mut figures = Vec::new();
    for term in &model.input.design.terms {
        let cov = term.name();
        match term {
            EncodedTerm::Continuous { .. } => {
                let grid = observed_grid(model, cov, grid_points)?;
                let curve = covariate_effect_curve(model, cov, &grid)?;
                let mut table = PlotTable::new(&["covariate", "value", "source", "mean", "lower", "upper"]);
                let mut chart = Chart::new(
                    &format!("Proportions by {cov}"),
                    cov,
                    "proportion",
                    padded_range(grid.iter().copied()),
                    (0.0, 1.0),
                );
                for (k, source) in names.iter().enumerate() {
                    let mean: Vec<f64> = (0..grid.len()).map(|g| curve.mean[g][k]).collect();
                    let lower: Vec<f64> = (0..grid.len()).map(|g| curve.lower(g, k)).collect();
                    let upper: Vec<f64> = (0..grid.len()).map(|g| curve.upper(g, k)).collect();
                    for g in 0..grid.len() {
                        table.push(vec![
                            cov.to_string(),
                            num(grid[g]),
                            source.clone(),
                            num(mean[g]),
                            num(lower[g]),
                            num(upper[g]),
                        ]);
                    }
                    chart.ribbon(&grid, &lower, &upper, color(k));
                    let line: Vec<(f64, f64)> = grid.iter().copied().zip(mean).collect();
                    chart.line(&line, color(k));
                    chart.legend(source, color(k));
                }
                figures.push(Figure {
                    name: format!("covariates_{cov}"),
                    table,
                    svg: chart.render(),
                });
            }
            EncodedTerm::Categorical { .. } => {
                let (levels, draws) = categorical_levels(model, cov)?;
                let k = names.len();
                let mut table =
                    PlotTable::new(&["covariate", "level", "source", "q2.5", "q25", "q50", "q75", "q97.5"]);
                let ticks = levels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (i as f64 + 0.5, l.clone()))
                    .collect();
                let mut chart = Chart::new(
                    &format!("Proportions by {cov}"),
                    cov,
                    "proportion",
                    (0.0, levels.len() as f64),
                    (0.0, 1.0),
                )
                .with_x_ticks(ticks);
                let slot = 0.8 / k as f64;
                for (g, level) in levels.iter().enumerate() {
                    for (c, source) in names.iter().enumerate() {
                        let col: Vec<f64> = draws.draws[g].column(c).iter().copied().collect();
                        let b = box_stats(&col);
                        table.push(vec![
                            cov.to_string(),
                            level.clone(),
                            source.clone(),
                            num(b.low),
                            num(b.q1),
                            num(b.median),
                            num(b.q3),
                            num(b.high),
                        ]);
                        let x = g as f64 + 0.1 + slot * (c as f64 + 0.5);
                        chart.boxplot(x, slot * 0.4, b, color(c));
                    }
                }
                for (c, source) in names.iter().enumerate() {
                    chart.legend(source, color(c));
                }
                figures.push(Figure {
                    name: format!("covariates_{cov}"),
                    table,
                    svg: chart.render(),
                });
            }
        }
    }
    if figures.is_empty() {
        return Err(Error::Invalid("model has no covariates to plot".into()));
    }
    Ok(figures)
}

/// Histograms of coefficient draws, one figure per source.
pub fn beta_histogram(model: &FittedModel) -> Result<Vec<Figure>> {
    let (k, l) = (model.input.n_sources(), model.input.n_covariates());
    let labels: Vec<String> = model.input.design.columns.iter().map(|c| c.label()).collect();
    let mut figures = Vec::with_capacity(k);
    for s in 0..k {
        let source = &model.input.source_names[s];
        let headers: Vec<&str> = std::iter::once("draw").chain(labels.iter().map(String::as_str)).collect();
        let mut table = PlotTable::new(&headers);
        let cols: Vec<Vec<f64>> = (0..l)
            .map(|c| model.theta_draws.column(s * l + c).iter().copied().collect())
            .collect();
        for d in 0..model.n_draws() {
            let mut row = vec![(d + 1).to_string()];
            row.extend(cols.iter().map(|c| num(c[d])));
            table.push(row);
        }
        let xr = padded_range(cols.iter().flatten().copied());
        let hists: Vec<(Vec<f64>, Vec<usize>)> = cols.iter().map(|c| histogram(c, BINS, xr)).collect();
        let width = (xr.1 - xr.0) / BINS as f64;
        let ymax = hists
            .iter()
            .flat_map(|(_, counts)| counts.iter().map(|&c| c as f64 / (model.n_draws() as f64 * width)))
            .fold(0.0, f64::max);
        let mut chart = Chart::new(
            &format!("Coefficients for {source}"),
            "beta",
            "density",
            xr,
            (0.0, ymax * 1.05 + 1e-9),
        );
        for (c, (edges, counts)) in hists.iter().enumerate() {
            chart.histogram(edges, counts, color(c));
            chart.legend(&labels[c], color(c));
        }
        figures.push(Figure {
            name: format!("beta_histogram_{source}"),
            table,
            svg: chart.render(),
        });
    }
    Ok(figures)
}

/// Prior and posterior proportion histograms per source.
pub fn prior_viz_figures(pp: &PriorPosterior) -> Vec<Figure> {
    let n = pp.prior.nrows().max(pp.posterior.nrows());
    pp.source_names
        .iter()
        .enumerate()
        .map(|(k, source)| {
            let mut table = PlotTable::new(&["draw", "prior", "posterior"]);
            for d in 0..n {
                let cell = |m: &nalgebra::DMatrix<f64>| {
                    if d < m.nrows() {
                        num(m[(d, k)])
                    } else {
                        String::new()
                    }
                };
                table.push(vec![(d + 1).to_string(), cell(&pp.prior), cell(&pp.posterior)]);
            }
            let prior: Vec<f64> = pp.prior.column(k).iter().copied().collect();
            let post: Vec<f64> = pp.posterior.column(k).iter().copied().collect();
            let (pe, pc) = histogram(&prior, BINS, (0.0, 1.0));
            let (qe, qc) = histogram(&post, BINS, (0.0, 1.0));
            let dens = |c: &[usize], total: usize| {
                c.iter().map(|&v| v as f64 * BINS as f64 / total.max(1) as f64).fold(0.0, f64::max)
            };
            let ymax = dens(&pc, prior.len()).max(dens(&qc, post.len()));
            let mut chart = Chart::new(
                &format!("Prior and posterior of P({source}), observation {}", pp.observation),
                "proportion",
                "density",
                (0.0, 1.0),
                (0.0, ymax * 1.05 + 1e-9),
            );
            chart.histogram(&pe, &pc, color(7));
            chart.histogram(&qe, &qc, color(k));
            chart.legend("prior", color(7));
            chart.legend("posterior", color(k));
            Figure {
                name: format!("prior_viz_obs{}_{source}", pp.observation),
                table,
                svg: chart.render(),
            }
        })
        .collect()
}

/// Lower-bound trace with its moving average.
pub fn convergence_figure(model: &FittedModel) -> Figure {
    let trace = convergence_trace(model);
    let mut table = PlotTable::new(&["t", "lower_bound", "moving_average"]);
    for p in &trace {
        table.push(vec![
            p.t.to_string(),
            num(p.lower_bound),
            p.moving_average.map_or(String::new(), num),
        ]);
    }
    let lb: Vec<(f64, f64)> = trace.iter().map(|p| (p.t as f64, p.lower_bound)).collect();
    let ma: Vec<(f64, f64)> = trace
        .iter()
        .filter_map(|p| p.moving_average.map(|m| (p.t as f64, m)))
        .collect();
    // Early iterations dwarf the converged level; scale to the settled part.
    let settled = &lb[lb.len() / 10..];
    let yr = padded_range(settled.iter().map(|p| p.1));
    let mut chart = Chart::new(
        "Lower bound",
        "iteration",
        "lower bound",
        padded_range(lb.iter().map(|p| p.0)),
        yr,
    );
    chart.line(&lb, color(7));
    chart.line(&ma, color(1));
    chart.legend("estimate", color(7));
    chart.legend("moving average", color(1));
    Figure {
        name: "convergence".into(),
        table,
        svg: chart.render(),
    }
}

/// Interval table for all cells and one interval figure per tracer.
pub fn posterior_predictive_figures(pp: &PosteriorPredictive) -> (PlotTable, Vec<Figure>) {
    let (n, j) = pp.observed.shape();
    let mut all = PlotTable::new(&["observation", "tracer", "observed", "lower", "median", "upper", "inside"]);
    let mut figures = Vec::with_capacity(j);
    for t in 0..j {
        let tracer = &pp.tracer_names[t];
        let mut table = PlotTable::new(&["observation", "observed", "lower", "median", "upper", "inside"]);
        let mut chart = Chart::new(
            &format!("Posterior predictive {:.0}% intervals: {tracer}", pp.level * 100.0),
            "observation",
            tracer,
            (0.0, n as f64 + 1.0),
            padded_range((0..n).flat_map(|i| [pp.lower[(i, t)], pp.upper[(i, t)], pp.observed[(i, t)]])),
        );
        let mut inside_pts = Vec::new();
        let mut outside_pts = Vec::new();
        for i in 0..n {
            let inside = pp.inside(i, t);
            let row = vec![
                (i + 1).to_string(),
                num(pp.observed[(i, t)]),
                num(pp.lower[(i, t)]),
                num(pp.median[(i, t)]),
                num(pp.upper[(i, t)]),
                inside.to_string(),
            ];
            let mut full = row.clone();
            full.insert(1, tracer.clone());
            all.push(full);
            table.push(row);
            let x = i as f64 + 1.0;
            chart.segment((x, pp.lower[(i, t)]), (x, pp.upper[(i, t)]), color(2), 1.5);
            if inside {
                inside_pts.push((x, pp.observed[(i, t)]));
            } else {
                outside_pts.push((x, pp.observed[(i, t)]));
            }
        }
        chart.points(&inside_pts, color(0), 2.5);
        chart.points(&outside_pts, color(1), 2.5);
        chart.legend("interval", color(2));
        chart.legend("observed, inside", color(0));
        chart.legend("observed, outside", color(1));
        figures.push(Figure {
            name: format!("postpred_{tracer}"),
            table,
            svg: chart.render(),
        });
    }
    (all, figures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic_example;

    #[test]
    fn isospace_rows_and_sd_bars() {
        let input = synthetic_example();
        let t = isospace_plot_data(&input, (0, 1), None).unwrap();
        assert_eq!(t.rows.iter().filter(|r| r[0] == "mixture").count(), 10);
        let sources: Vec<_> = t.rows.iter().filter(|r| r[0] == "source").collect();
        assert_eq!(sources.len(), 3);
        for r in sources {
            assert_eq!(r[4], "1");
            assert_eq!(r[5], "1");
        }
    }

    #[test]
    fn isospace_colour_is_raw_covariate() {
        let input = synthetic_example();
        let t = isospace_plot_data(&input, (0, 1), Some("x")).unwrap();
        assert_eq!(t.rows[0][6], "1.6");
        assert_eq!(t.rows[9][6], "7.7");
        assert!(isospace_plot_data(&input, (0, 1), Some("length")).is_err());
        assert!(isospace_plot_data(&input, (1, 1), None).is_err());
    }

    #[test]
    fn isospace_labels_selected_tracers() {
        let mut input = synthetic_example();
        input.tracer_names = vec!["d13C".into(), "d15N".into()];
        let f = isospace_figure(&input, (1, 0), None).unwrap();
        assert!(f.svg.contains("d15N"));
        assert_eq!(f.name, "isospace_2_1");
    }

    #[test]
    fn csv_quotes_fields() {
        let mut t = PlotTable::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n\"x,y\",1\n");
    }
}
