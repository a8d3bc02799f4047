//! Mixing-polygon checks in iso-space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input::SimmInput;

pub type Point = (f64, f64);

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by monotone chain, counter-clockwise, without collinear
/// points. Fewer than three returned vertices means the hull is degenerate.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Point in a counter-clockwise convex polygon; the boundary counts as inside.
pub fn point_in_convex_polygon(hull: &[Point], p: Point, tol: f64) -> bool {
    let n = hull.len();
    (0..n).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        cross(a, b, p) >= -tol * len
    })
}

pub fn distance_to_segment(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub tracers: (usize, usize),
    pub hull: Vec<Point>,
    pub degenerate: bool,
    /// Zero-based indices of mixtures outside this projection's hull.
    pub outside: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Per observation: inside the hull in every tracer-pair projection.
    pub inside: Vec<bool>,
    pub pairs: Vec<PairReport>,
    pub warnings: Vec<String>,
}

impl GeometryReport {
    pub fn outside_indices(&self) -> Vec<usize> {
        self.inside
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| (!ok).then_some(i))
            .collect()
    }
}

/// Tests every mixture against the hull of the TDF-adjusted source means.
///
/// Two tracers give the exact test; more tracers are checked in every
/// pairwise projection. When the hull collapses to a segment or a point, a
/// mixture counts as inside if it lies within the mean combined source sd of
/// the degenerate hull.
pub fn validate_geometry(input: &SimmInput) -> Result<GeometryReport> {
    let j = input.n_tracers();
    if j < 2 {
        return Err(Error::Invalid("geometry check needs at least two tracers".into()));
    }
    let mu = input.mu_sc();
    let var = input.var_sc();
    let n = input.n_obs();
    let mut inside = vec![true; n];
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for a in 0..j {
        for b in (a + 1)..j {
            let sources: Vec<Point> = (0..input.n_sources()).map(|k| (mu[(k, a)], mu[(k, b)])).collect();
            let hull = convex_hull(&sources);
            let scale = sources
                .iter()
                .flat_map(|p| [p.0.abs(), p.1.abs()])
                .fold(1.0f64, f64::max);
            let degenerate = hull.len() < 3;
            let band = if degenerate {
                let k = input.n_sources() as f64;
                let mean_sd = (0..input.n_sources())
                    .map(|s| (0.5 * (var[(s, a)] + var[(s, b)])).sqrt())
                    .sum::<f64>()
                    / k;
                warnings.push(format!(
                    "degenerate polygon for tracers ({}, {}): sources span a segment; using a {:.3} distance band",
                    input.tracer_names[a], input.tracer_names[b], mean_sd
                ));
                mean_sd
            } else {
                0.0
            };
            let mut outside = Vec::new();
            for i in 0..n {
                let p = (input.y[(i, a)], input.y[(i, b)]);
                let ok = if degenerate {
                    let (s, e) = (hull[0], *hull.last().unwrap());
                    distance_to_segment(s, e, p) <= band + 1e-9 * scale
                } else {
                    point_in_convex_polygon(&hull, p, 1e-9 * scale)
                };
                if !ok {
                    outside.push(i);
                    inside[i] = false;
                }
            }
            if !outside.is_empty() {
                warnings.push(format!(
                    "{} mixture(s) outside the mixing polygon for tracers ({}, {}): observations {}",
                    outside.len(),
                    input.tracer_names[a],
                    input.tracer_names[b],
                    outside.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(", ")
                ));
            }
            pairs.push(PairReport {
                tracers: (a, b),
                hull,
                degenerate,
                outside,
            });
        }
    }
    Ok(GeometryReport {
        inside,
        pairs,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TRI: [Point; 3] = [(-10.0, -10.0), (0.0, 10.0), (10.0, 0.0)];

    #[test]
    fn triangle_membership() {
        let hull = convex_hull(&TRI);
        assert_eq!(hull.len(), 3);
        assert!(point_in_convex_polygon(&hull, (5.0, 3.1), 1e-9));
        assert!(!point_in_convex_polygon(&hull, (100.0, 100.0), 1e-9));
        assert!(point_in_convex_polygon(&hull, (0.0, 10.0), 1e-9));
        // edge midpoint
        assert!(point_in_convex_polygon(&hull, (5.0, 5.0), 1e-9));
    }

    #[test]
    fn interior_points_dropped_from_hull() {
        let pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (2.0, 2.0), (2.0, 0.0)];
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    #[test]
    fn collinear_sources_are_degenerate() {
        let hull = convex_hull(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(hull.len(), 2);
        assert!((distance_to_segment(hull[0], hull[1], (1.0, 0.0)) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn convex_combinations_are_inside(w in proptest::collection::vec(0.0f64..1.0, 3)) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let p = TRI.iter().zip(&w).fold((0.0, 0.0), |acc, (v, wi)| {
                (acc.0 + v.0 * wi / s, acc.1 + v.1 * wi / s)
            });
            let hull = convex_hull(&TRI);
            prop_assert!(point_in_convex_polygon(&hull, p, 1e-9 * 10.0));
        }
    }
}
