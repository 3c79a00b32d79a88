//! Monte-Carlo q-expected hypervolume improvement over candidate batches.
//!
//! Base normals are fixed per context, so the estimate is a deterministic
//! function of the batch and annealing sees a fixed surface.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::benchmarks::CandidateSet;
use crate::error::{check_dim, Error, Result};
use crate::gp::{self, BatchPosterior, CandidateFeatures, GpModel, StandardNormals};
use crate::hypervolume::{hv, PreparedFront};
use crate::pareto::{ParetoFront, ReferencePoint};

/// Anything that can produce a joint posterior over a batch of inputs.
pub trait PosteriorModel: Send + Sync {
    fn n_objectives(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn posterior(&self, points: &[&[f64]]) -> Result<BatchPosterior>;

    /// Posterior over candidate-set rows; models may override with a cache.
    fn posterior_candidates(&self, candidates: &CandidateSet, indices: &[usize]) -> Result<BatchPosterior> {
        let rows = indices.iter().map(|&i| candidates.row(i)).collect::<Result<Vec<_>>>()?;
        self.posterior(&rows)
    }
}

/// Independent GPs, one per objective, optionally with cached features for
/// one candidate set.
pub struct GpEnsemble {
    models: Vec<GpModel>,
    cache: Option<(usize, Vec<CandidateFeatures>)>,
}

impl GpEnsemble {
    pub fn new(models: Vec<GpModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Precondition("ensemble needs at least one model".into()));
        }
        Ok(Self { models, cache: None })
    }

    /// Caches posterior features for every row of `candidates`.
    pub fn with_candidate_cache(mut self, candidates: &CandidateSet) -> Result<Self> {
        let feats = self
            .models
            .iter()
            .map(|m| m.candidate_features(candidates.rows()))
            .collect::<Result<Vec<_>>>()?;
        self.cache = Some((candidates.len(), feats));
        Ok(self)
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }
}

impl PosteriorModel for GpEnsemble {
    fn n_objectives(&self) -> usize {
        self.models.len()
    }

    fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    fn posterior(&self, points: &[&[f64]]) -> Result<BatchPosterior> {
        gp::posterior(&self.models, points)
    }

    fn posterior_candidates(&self, candidates: &CandidateSet, indices: &[usize]) -> Result<BatchPosterior> {
        match &self.cache {
            Some((n, feats)) if *n == candidates.len() => {
                let mut means = Vec::with_capacity(feats.len());
                let mut covariances = Vec::with_capacity(feats.len());
                for f in feats {
                    let (m, c) = f.joint(indices)?;
                    means.push(m);
                    covariances.push(c);
                }
                Ok(BatchPosterior { means, covariances })
            }
            _ => {
                let rows = indices.iter().map(|&i| candidates.row(i)).collect::<Result<Vec<_>>>()?;
                self.posterior(&rows)
            }
        }
    }
}

type SurfaceFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A noiseless "posterior" that returns a known function with zero
/// covariance.
pub struct DeterministicSurface {
    m: usize,
    d: usize,
    f: Box<SurfaceFn>,
}

impl DeterministicSurface {
    pub fn new(d: usize, m: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { m, d, f: Box::new(f) }
    }

    /// Surface defined only on candidate rows, by per-row values (`[row][objective]`).
    pub fn from_table(candidates: &CandidateSet, values: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(candidates.len(), values.len())?;
        let m = values.first().map_or(0, Vec::len);
        let keys: HashMap<Vec<u64>, usize> = candidates
            .rows()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().map(|v| v.to_bits()).collect(), i))
            .collect();
        let d = candidates.dim();
        Ok(Self::new(d, m, move |x| {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            match keys.get(&key) {
                Some(&i) => values[i].clone(),
                None => vec![f64::NAN; m],
            }
        }))
    }
}

impl PosteriorModel for DeterministicSurface {
    fn n_objectives(&self) -> usize {
        self.m
    }

    fn input_dim(&self) -> usize {
        self.d
    }

    fn posterior(&self, points: &[&[f64]]) -> Result<BatchPosterior> {
        let means = points
            .iter()
            .map(|p| {
                check_dim(self.d, p.len())?;
                let y = (self.f)(p);
                check_dim(self.m, y.len())?;
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain("surface is undefined at this point".into()));
                }
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchPosterior::deterministic(&means))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QehviConfig {
    pub n_mc_samples: usize,
    pub base_normals: StandardNormals,
    pub reference: ReferencePoint,
}

impl QehviConfig {
    pub const DEFAULT_SAMPLES: usize = 128;

    /// Generates `n_mc_samples × q × m` base normals from `seed`.
    pub fn new(n_mc_samples: usize, q: usize, reference: ReferencePoint, seed: u64) -> Result<Self> {
        if n_mc_samples == 0 || q == 0 {
            return Err(Error::Config("n_mc_samples and q must be positive".into()));
        }
        let m = reference.len();
        Ok(Self { n_mc_samples, base_normals: StandardNormals::generate(n_mc_samples, q, m, seed), reference })
    }
}

/// Estimate with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QehviEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Everything needed to score a batch.
pub struct AcquisitionContext {
    pub model: Arc<dyn PosteriorModel>,
    pub front: ParetoFront,
    pub config: QehviConfig,
    pub candidates: Arc<CandidateSet>,
    prepared: PreparedFront,
    front_hv: f64,
}

impl AcquisitionContext {
    pub fn new(
        model: Arc<dyn PosteriorModel>,
        front: ParetoFront,
        config: QehviConfig,
        candidates: Arc<CandidateSet>,
    ) -> Result<Self> {
        let m = model.n_objectives();
        check_dim(m, front.n_objectives())?;
        check_dim(m, config.reference.len())?;
        check_dim(m, config.base_normals.m)?;
        check_dim(model.input_dim(), candidates.dim())?;
        let prepared = PreparedFront::new(&front, &config.reference)?;
        let front_hv = hv(&front, &config.reference)?;
        Ok(Self { model, front, config, candidates, prepared, front_hv })
    }

    /// Hypervolume of the current front under the context reference.
    pub fn front_hypervolume(&self) -> f64 {
        self.front_hv
    }

    pub fn max_batch(&self) -> usize {
        self.config.base_normals.q
    }

    fn check_batch(&self, q: usize) -> Result<()> {
        if q == 0 {
            return Err(Error::Precondition("batch must not be empty".into()));
        }
        if q > self.max_batch() {
            return Err(Error::Dimension { expected: self.max_batch(), got: q });
        }
        Ok(())
    }

    /// qEHVI of a batch of candidate indices.
    pub fn qehvi(&self, batch: &[usize]) -> Result<f64> {
        Ok(self.qehvi_detailed(batch)?.value)
    }

    pub fn qehvi_detailed(&self, batch: &[usize]) -> Result<QehviEstimate> {
        self.check_batch(batch.len())?;
        for &i in batch {
            if i >= self.candidates.len() {
                return Err(Error::Index { index: i, len: self.candidates.len() });
            }
        }
        let post = self.model.posterior_candidates(&self.candidates, batch)?;
        self.estimate(&post)
    }

    /// qEHVI at arbitrary (in-bounds) input points.
    pub fn qehvi_points(&self, points: &[&[f64]]) -> Result<f64> {
        self.check_batch(points.len())?;
        let post = self.model.posterior(points)?;
        Ok(self.estimate(&post)?.value)
    }

    /// qEHVI for many batches; identical to calling [`Self::qehvi`] on each.
    pub fn qehvi_batched(&self, batches: &[Vec<usize>]) -> Result<Vec<f64>> {
        if let Some(first) = batches.first() {
            if batches.iter().any(|b| b.len() != first.len()) {
                return Err(Error::Precondition("all batches must have the same size".into()));
            }
        }
        batches.par_iter().map(|b| self.qehvi(b)).collect()
    }

    /// Average hypervolume improvement over samples of `post`.
    pub fn estimate(&self, post: &BatchPosterior) -> Result<QehviEstimate> {
        let samples = gp::sample(post, &self.config.base_normals)?;
        let q = post.q();
        let s_count = samples.n_samples;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for s in 0..s_count {
            let v = self.prepared.improvement((0..q).map(|i| samples.point(s, i)));
            sum += v;
            sum_sq += v * v;
        }
        let n = s_count as f64;
        let value = (sum / n).max(0.0);
        let var = if s_count > 1 { ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0) } else { 0.0 };
        Ok(QehviEstimate { value, std_error: (var / n).sqrt() })
    }
}
