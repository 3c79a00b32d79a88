//! Continuous-relaxation comparison arm: multi-start coordinate pattern
//! search on the box, then snapping each point to its nearest candidate.
//!
//! This stands in for an SLSQP optimizer with relax-and-round; it is a local
//! derivative-free method, not a sequential quadratic program.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionContext;
use crate::benchmarks::CandidateSet;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};

/// Label written into result metadata for this arm.
pub const BASELINE_DESCRIPTION: &str =
    "multi-start coordinate pattern search with relax-and-round (stand-in for SLSQP)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_restarts: usize,
    pub max_local_iters: usize,
    /// Initial step as a fraction of each box width.
    pub initial_step: f64,
    pub shrink: f64,
    pub enforce_unique: bool,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_restarts: 10, max_local_iters: 200, initial_step: 0.1, shrink: 0.5, enforce_unique: true, seed: 0 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_restarts == 0 {
            return Err(Error::Config("n_restarts must be at least 1".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Config("initial_step must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRecord {
    pub restart: usize,
    pub iter: usize,
    /// Best value so far within this restart.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub continuous: Vec<Vec<f64>>,
    pub continuous_value: f64,
    pub indices: Vec<usize>,
    pub value: f64,
    pub trace: Vec<BaselineRecord>,
}

pub fn write_trace_csv<W: Write>(trace: &[BaselineRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["restart", "iter", "value"])?;
    for r in trace {
        out.write_record([r.restart.to_string(), r.iter.to_string(), r.value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

struct LocalRun {
    x: Vec<f64>,
    value: f64,
    trace: Vec<BaselineRecord>,
}

fn score(ctx: &AcquisitionContext, x: &[f64], d: usize) -> Result<f64> {
    let pts: Vec<&[f64]> = x.chunks(d).collect();
    ctx.qehvi_points(&pts)
}

fn local_search(ctx: &AcquisitionContext, q: usize, config: &BaselineConfig, restart: usize) -> Result<LocalRun> {
    let bounds = ctx.candidates.bounds();
    let d = bounds.len();
    let dim = q * d;
    let mut rng = rng_for(derive_seed(config.seed, &[restart as u64]), 0);
    let mut x: Vec<f64> = (0..dim)
        .map(|i| {
            let (lo, hi) = bounds[i % d];
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
        .collect();
    let mut value = score(ctx, &x, d)?;
    let mut trace = vec![BaselineRecord { restart, iter: 0, value }];
    let mut step = config.initial_step;
    let mut improved_in_cycle = false;
    for iter in 1..=config.max_local_iters {
        let c = (iter - 1) % dim;
        let (lo, hi) = bounds[c % d];
        let delta = step * (hi - lo);
        for sign in [1.0, -1.0] {
            let mut trial = x.clone();
            trial[c] = (x[c] + sign * delta).clamp(lo, hi);
            if trial[c] == x[c] {
                continue;
            }
            let v = score(ctx, &trial, d)?;
            if v > value {
                x = trial;
                value = v;
                improved_in_cycle = true;
                break;
            }
        }
        if c == dim - 1 {
            if !improved_in_cycle {
                step *= config.shrink;
            }
            improved_in_cycle = false;
        }
        trace.push(BaselineRecord { restart, iter, value });
    }
    Ok(LocalRun { x, value, trace })
}

/// Best continuous batch (`q` rows of length d) over all restarts.
pub fn optimize_continuous(
    ctx: &AcquisitionContext,
    q: usize,
    config: &BaselineConfig,
) -> Result<(Vec<Vec<f64>>, f64, Vec<BaselineRecord>)> {
    config.validate()?;
    if q == 0 {
        return Err(Error::Precondition("q must be at least 1".into()));
    }
    let runs: Vec<LocalRun> = (0..config.n_restarts)
        .into_par_iter()
        .map(|r| local_search(ctx, q, config, r))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.value > runs[best].value {
            best = i;
        }
    }
    let d = ctx.candidates.dim();
    let x = runs[best].x.chunks(d).map(<[f64]>::to_vec).collect();
    let value = runs[best].value;
    let trace = runs.into_iter().flat_map(|r| r.trace).collect();
    Ok((x, value, trace))
}

/// Maps each point to its nearest candidate in unit-box coordinates; ties go
/// to the lowest index. Under `enforce_unique`, points are assigned greedily
/// in batch order to the nearest unused candidate.
pub fn relax_and_round(points: &[Vec<f64>], candidates: &CandidateSet, enforce_unique: bool) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::Precondition("candidate set is empty".into()));
    }
    if enforce_unique && candidates.len() < points.len() {
        return Err(Error::Config(format!(
            "cannot assign {} distinct candidates from a pool of {}",
            points.len(),
            candidates.len()
        )));
    }
    let normalized: Vec<Vec<f64>> = candidates.rows().iter().map(|r| candidates.normalize(r)).collect();
    let mut used = vec![false; candidates.len()];
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        crate::error::check_dim(candidates.dim(), p.len())?;
        let z = candidates.normalize(p);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in normalized.iter().enumerate() {
            if enforce_unique && used[i] {
                continue;
            }
            let dist: f64 = c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("pool has an unused candidate");
        used[i] = true;
        out.push(i);
    }
    Ok(out)
}

/// Continuous optimization, rounding, and re-scoring on the discrete problem.
pub fn run_baseline(ctx: &AcquisitionContext, q: usize, config: &BaselineConfig) -> Result<BaselineOutcome> {
    let (continuous, continuous_value, trace) = optimize_continuous(ctx, q, config)?;
    let indices = relax_and_round(&continuous, &ctx.candidates, config.enforce_unique)?;
    let value = ctx.qehvi(&indices)?;
    Ok(BaselineOutcome { continuous, continuous_value, indices, value, trace })
}
