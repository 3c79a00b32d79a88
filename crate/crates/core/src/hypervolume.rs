//! Exact hypervolume and hypervolume improvement (maximize orientation).
//!
//! Inputs are translated so the reference point sits at the origin and
//! points that do not strictly dominate it are dropped. Two objectives use
//! a sort-and-sweep; more objectives use a WFG-style recursion on
//! exclusive volumes, slicing on the last objective so each level drops one
//! dimension. The sweep performs exactly the arithmetic the recursion
//! performs at m = 2, so the two agree bit for bit.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::pareto::{lex_cmp, weakly_dominates, ParetoFront, ReferencePoint};
use crate::seeding::rng_for;

/// Hypervolume dominated by `front` and bounded below by `reference`.
pub fn hv(front: &ParetoFront, reference: &ReferencePoint) -> Result<f64> {
    check_dim(front.n_objectives(), reference.len())?;
    Ok(hv_points(front.points(), reference.values()))
}

/// Hypervolume of an arbitrary point collection. Dominated points,
/// duplicates and points not strictly above the reference are ignored.
pub fn hv_points(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    let pts = prepare(points, reference);
    volume(pts, reference.len())
}

/// `hv(front ∪ new_points) - hv(front)`, computed as a sum of exclusive
/// contributions of the new points. Never negative.
pub fn hvi(front: &ParetoFront, new_points: &[Vec<f64>], reference: &ReferencePoint) -> Result<f64> {
    let m = reference.len();
    check_dim(front.n_objectives(), m)?;
    for p in new_points {
        check_dim(m, p.len())?;
    }
    let base = prepare(front.points(), reference.values());
    Ok(hvi_prepared(&base, new_points.iter().map(Vec::as_slice), reference.values()))
}

/// A front already translated to the reference and filtered; reusable across
/// many improvement queries against the same front.
#[derive(Debug, Clone)]
pub struct PreparedFront {
    points: Vec<Vec<f64>>,
    reference: Vec<f64>,
}

impl PreparedFront {
    pub fn new(front: &ParetoFront, reference: &ReferencePoint) -> Result<Self> {
        check_dim(front.n_objectives(), reference.len())?;
        Ok(Self { points: prepare(front.points(), reference.values()), reference: reference.0.clone() })
    }

    pub fn n_objectives(&self) -> usize {
        self.reference.len()
    }

    /// Improvement of the given points (no dimension checks).
    pub fn improvement<'a, I>(&self, new_points: I) -> f64
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        hvi_prepared(&self.points, new_points, &self.reference)
    }
}

fn hvi_prepared<'a, I>(base: &[Vec<f64>], new_points: I, reference: &[f64]) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let m = reference.len();
    let mut added: Vec<Vec<f64>> = Vec::new();
    let mut total = 0.0;
    for x in new_points {
        let t: Vec<f64> = x.iter().zip(reference).map(|(a, r)| a - r).collect();
        if t.iter().any(|&v| !(v > 0.0)) {
            continue;
        }
        if base.iter().chain(added.iter()).any(|s| weakly_dominates(s, &t)) {
            continue;
        }
        let limit: Vec<Vec<f64>> = base
            .iter()
            .chain(added.iter())
            .map(|s| s.iter().zip(&t).map(|(a, b)| a.min(*b)).collect())
            .collect();
        let limit = nondominated(limit);
        let contribution = product(&t) - volume(limit, m);
        total += contribution.max(0.0);
        added.push(t);
    }
    total
}

fn product(t: &[f64]) -> f64 {
    t.iter().fold(1.0, |acc, v| acc * v)
}

/// Translate to the reference, clip and reduce to unique nondominated points.
fn prepare(points: &[Vec<f64>], reference: &[f64]) -> Vec<Vec<f64>> {
    let translated: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.len() == reference.len())
        .map(|p| p.iter().zip(reference).map(|(a, r)| a - r).collect::<Vec<f64>>())
        .filter(|t| t.iter().all(|&v| v > 0.0))
        .collect();
    nondominated(translated)
}

/// Unique nondominated subset (order unspecified).
fn nondominated(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    if pts.len() <= 1 {
        return pts;
    }
    pts.sort_by(|a, b| lex_cmp(b, a));
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        if !kept.iter().any(|k| weakly_dominates(k, &p)) {
            kept.push(p);
        }
    }
    kept
}

/// Volume of translated, filtered points using the fast 2-D path.
fn volume(pts: Vec<Vec<f64>>, m: usize) -> f64 {
    match m {
        0 => 0.0,
        1 => pts.iter().map(|p| p[0]).fold(0.0, f64::max),
        2 => sweep_2d(pts),
        _ => wfg(pts, m, true),
    }
}

/// Two-objective sort-and-sweep on translated nondominated points.
fn sweep_2d(mut pts: Vec<Vec<f64>>) -> f64 {
    pts.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let mut total = 0.0;
    for i in 0..pts.len() {
        let next_x = if i + 1 < pts.len() { pts[i + 1][0] } else { 0.0 };
        total += pts[i][1] * (pts[i][0] - next_x);
    }
    total
}

/// Exclusive-volume recursion over the first `m` coordinates of `pts`
/// (translated, nondominated in those coordinates).
fn wfg(mut pts: Vec<Vec<f64>>, m: usize, shortcut_2d: bool) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    if m == 1 {
        return pts.iter().map(|p| p[0]).fold(0.0, f64::max);
    }
    if m == 2 && shortcut_2d {
        return sweep_2d(pts);
    }
    let last = m - 1;
    pts.sort_by(|a, b| a[last].total_cmp(&b[last]).then_with(|| lex_cmp(a, b)));
    let mut total = 0.0;
    for i in 0..pts.len() {
        let p = &pts[i];
        let limit: Vec<Vec<f64>> = pts[i + 1..]
            .iter()
            .map(|q| (0..last).map(|k| p[k].min(q[k])).collect())
            .collect();
        let limit = nondominated(limit);
        let inclusive = product(&p[..last]);
        total += p[last] * (inclusive - wfg(limit, last, shortcut_2d));
    }
    total
}

/// Hypervolume algorithms exposed for cross-checking and benchmarking.
pub mod algorithms {
    use super::*;

    /// Sort-and-sweep; `points` must be 2-objective.
    pub fn sweep(points: &[Vec<f64>], reference: &[f64]) -> f64 {
        assert_eq!(reference.len(), 2, "sweep is two-objective only");
        sweep_2d(prepare(points, reference))
    }

    /// The general recursion all the way down to one dimension.
    pub fn recursive(points: &[Vec<f64>], reference: &[f64]) -> f64 {
        wfg(prepare(points, reference), reference.len(), false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Box-sampling hypervolume estimate over `[reference, upper_bounds]`.
/// Used as an independent oracle in tests.
pub fn hv_monte_carlo(
    front: &ParetoFront,
    reference: &ReferencePoint,
    upper_bounds: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let m = reference.len();
    check_dim(front.n_objectives(), m)?;
    check_dim(m, upper_bounds.len())?;
    for p in front.points() {
        if p.iter().zip(upper_bounds).any(|(a, u)| a > u) {
            return Err(Error::Precondition(format!("front point {p:?} exceeds the upper bounds")));
        }
    }
    if front.is_empty() || n_samples == 0 {
        return Ok(McEstimate { estimate: 0.0, std_error: 0.0 });
    }
    let r = reference.values();
    let box_volume: f64 = upper_bounds.iter().zip(r).map(|(u, l)| (u - l).max(0.0)).product();
    let mut rng = rng_for(seed, 0);
    let mut hits = 0u64;
    let mut y = vec![0.0; m];
    for _ in 0..n_samples {
        for k in 0..m {
            y[k] = r[k] + rng.random::<f64>() * (upper_bounds[k] - r[k]);
        }
        if front.points().iter().any(|p| weakly_dominates(p, &y)) {
            hits += 1;
        }
    }
    let f = hits as f64 / n_samples as f64;
    Ok(McEstimate {
        estimate: f * box_volume,
        std_error: box_volume * (f * (1.0 - f) / n_samples as f64).sqrt(),
    })
}
