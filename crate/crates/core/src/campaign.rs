//! The closed optimization loop: initial design, per-iteration GP fitting,
//! batch selection by the configured arm, evaluation, and hypervolume
//! tracking, repeated over independent seeds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionContext, GpEnsemble, QehviConfig};
use crate::annealer::{run_parallel, run_sequential, ParallelSaConfig, SaConfig};
use crate::baseline::{run_baseline, BaselineConfig, BASELINE_DESCRIPTION};
use crate::benchmarks::{generate_candidates, BenchmarkKind, CandidateSet, ProblemDef, SamplingScheme};
use crate::error::{check_dim, Error, Result};
use crate::gp::{self, FitConfig, KernelParams, NoiseMode};
use crate::hypervolume::hv;
use crate::pareto::{extract_front, Dataset, Direction, Evaluation, Orientation, ParetoFront, ReferencePoint};
use crate::seeding::{derive_seed, rng_for, stream_seed, Stream};

pub const STATE_SCHEMA_VERSION: u32 = 1;

/// Jitter added to every kernel diagonal when an iteration is retried.
pub const RETRY_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `zdt1`, `dtlz2`, `kursawe`, `latent_aware`, or `table`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Direction>>,
    /// CSV with input columns followed by objective columns (`table` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inputs: Option<usize>,
}

impl ProblemConfig {
    pub fn benchmark(kind: BenchmarkKind) -> Self {
        Self { kind: kind.name().into(), d: None, bounds: None, directions: None, path: None, n_inputs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    pub scheme: SamplingScheme,
    pub n: usize,
    /// Fixed pool seed; when absent it is derived from each campaign seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self { scheme: SamplingScheme::LatinHypercube, n: 2000, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Sa,
    Baseline,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Self::Sa => "sa",
            Self::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Defaults to twice the input dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_init: Option<usize>,
    pub q: usize,
    pub n_bo_iterations: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { n_init: None, q: 4, n_bo_iterations: 20, seeds: vec![1, 2, 3, 4, 5], arms: vec![Arm::Sa] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferencePolicy {
    /// Values in the problem's native orientation.
    Fixed { values: Vec<f64> },
    /// Worst observed value minus `fraction` of the observed range, frozen
    /// after the initial design.
    WorstObservedMinusMargin {
        #[serde(default = "default_margin")]
        fraction: f64,
    },
}

fn default_margin() -> f64 {
    0.1
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        Self::WorstObservedMinusMargin { fraction: default_margin() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaVariant {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub variant: SaVariant,
    pub t0: f64,
    pub alpha: f64,
    pub n_iterations: usize,
    pub p_change: Vec<f64>,
    pub enforce_unique: bool,
    pub n_chains: usize,
    pub proposals_per_chain: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let b = SaConfig::benchmark(1, 0);
        Self {
            variant: SaVariant::Sequential,
            t0: b.t0,
            alpha: b.alpha,
            n_iterations: b.n_iterations,
            p_change: b.p_change,
            enforce_unique: b.enforce_unique,
            n_chains: 10,
            proposals_per_chain: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn sa_config(&self, q: usize, seed: u64) -> SaConfig {
        SaConfig {
            q,
            t0: self.t0,
            alpha: self.alpha,
            n_iterations: self.n_iterations,
            p_change: self.p_change.clone(),
            enforce_unique: self.enforce_unique,
            seed,
        }
    }

    pub fn parallel_config(&self, q: usize, seed: u64) -> ParallelSaConfig {
        ParallelSaConfig {
            base: self.sa_config(q, seed),
            n_chains: self.n_chains,
            proposals_per_chain: self.proposals_per_chain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub restarts: usize,
    pub max_iters: usize,
    pub noise: NoiseMode,
}

impl Default for GpSettings {
    fn default() -> Self {
        let f = FitConfig::default();
        Self { restarts: f.restarts, max_iters: f.max_iters, noise: f.noise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QehviSettings {
    pub n_mc_samples: usize,
}

impl Default for QehviSettings {
    fn default() -> Self {
        Self { n_mc_samples: QehviConfig::DEFAULT_SAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub candidates: CandidateConfig,
    #[serde(default)]
    pub campaign: LoopConfig,
    #[serde(default)]
    pub reference: ReferencePolicy,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub gp: GpSettings,
    #[serde(default)]
    pub qehvi: QehviSettings,
}

impl CampaignConfig {
    pub fn new(problem: ProblemConfig) -> Self {
        Self {
            problem,
            candidates: CandidateConfig::default(),
            campaign: LoopConfig::default(),
            reference: ReferencePolicy::default(),
            optimizer: OptimizerConfig::default(),
            baseline: BaselineConfig::default(),
            gp: GpSettings::default(),
            qehvi: QehviSettings::default(),
        }
    }

    /// Checks everything that can be checked without building the pool.
    pub fn validate(&self) -> Result<()> {
        let c = &self.campaign;
        if c.q == 0 {
            return Err(Error::Config("campaign.q must be at least 1".into()));
        }
        if c.seeds.is_empty() {
            return Err(Error::Config("campaign.seeds must not be empty".into()));
        }
        if c.arms.is_empty() {
            return Err(Error::Config("campaign.arms must not be empty".into()));
        }
        if let Some(n) = c.n_init {
            if n < 2 {
                return Err(Error::Config("campaign.n_init must be at least 2".into()));
            }
        }
        if self.qehvi.n_mc_samples == 0 {
            return Err(Error::Config("qehvi.n_mc_samples must be at least 1".into()));
        }
        if self.gp.restarts == 0 {
            return Err(Error::Config("gp.restarts must be at least 1".into()));
        }
        self.optimizer
            .parallel_config(c.q, 0)
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        self.baseline.validate().map_err(|e| Error::Config(format!("baseline: {e}")))?;
        if let ReferencePolicy::WorstObservedMinusMargin { fraction } = self.reference {
            if !(fraction >= 0.0) || !fraction.is_finite() {
                return Err(Error::Config("reference.fraction must be a nonnegative number".into()));
            }
        }
        Ok(())
    }
}

/// An objective-value table addressed by candidate row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableProblem {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    /// Native-orientation objective values, one row per input row.
    pub values: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
    pub orientation: Orientation,
}

impl TableProblem {
    /// Reads a CSV whose first `n_inputs` columns are inputs and the rest
    /// objectives.
    pub fn read_csv(path: &Path, n_inputs: usize) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut rd = csv::Reader::from_reader(file);
        let width = rd.headers()?.len();
        if n_inputs == 0 || width <= n_inputs {
            return Err(Error::Config(format!(
                "{}: need {n_inputs} input columns plus at least one objective, found {width} columns",
                path.display()
            )));
        }
        let mut inputs = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: '{s}': {e}", i + 2))))
                .collect::<Result<Vec<f64>>>()?;
            check_dim(width, row.len())?;
            inputs.push(row[..n_inputs].to_vec());
            values.push(row[n_inputs..].to_vec());
        }
        if inputs.is_empty() {
            return Err(Error::Config(format!("{}: table has no rows", path.display())));
        }
        let bounds = (0..n_inputs)
            .map(|k| {
                let lo = inputs.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = inputs.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    (lo, hi)
                } else {
                    (lo - 0.5, hi + 0.5)
                }
            })
            .collect();
        let m = width - n_inputs;
        let name = path.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
        Ok(Self { name, inputs, values, bounds, orientation: Orientation::all(Direction::Maximize, m) })
    }
}

/// The problem a campaign evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Benchmark(ProblemDef),
    Table(TableProblem),
}

impl Problem {
    pub fn from_config(cfg: &ProblemConfig) -> Result<Self> {
        if cfg.kind == "table" {
            let path = cfg.path.as_ref().ok_or_else(|| Error::Config("problem.path is required for a table".into()))?;
            let n_inputs =
                cfg.n_inputs.ok_or_else(|| Error::Config("problem.n_inputs is required for a table".into()))?;
            let mut t = TableProblem::read_csv(path, n_inputs)?;
            if let Some(b) = &cfg.bounds {
                check_dim(n_inputs, b.len())?;
                t.bounds = b.clone();
            }
            if let Some(dirs) = &cfg.directions {
                check_dim(t.orientation.len(), dirs.len())?;
                t.orientation = Orientation::new(dirs.clone());
            }
            return Ok(Self::Table(t));
        }
        let kind = BenchmarkKind::parse(&cfg.kind)?;
        let mut p = match (kind, cfg.d) {
            (BenchmarkKind::Zdt1, Some(d)) => ProblemDef::zdt1(d)?,
            (BenchmarkKind::Dtlz2, Some(d)) => ProblemDef::dtlz2(d)?,
            (k, Some(d)) if d != k.default_dim() => {
                return Err(Error::Config(format!("{} has fixed dimension {}", k.name(), k.default_dim())))
            }
            (k, _) => ProblemDef::standard(k),
        };
        if let Some(b) = &cfg.bounds {
            p = p.with_bounds(b.clone())?;
        }
        if let Some(dirs) = &cfg.directions {
            p = p.with_orientation(Orientation::new(dirs.clone()))?;
        }
        Ok(Self::Benchmark(p))
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Benchmark(p) => &p.name,
            Self::Table(t) => &t.name,
        }
    }

    pub fn d(&self) -> usize {
        self.bounds().len()
    }

    pub fn m(&self) -> usize {
        self.orientation().len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        match self {
            Self::Benchmark(p) => &p.bounds,
            Self::Table(t) => &t.bounds,
        }
    }

    pub fn orientation(&self) -> &Orientation {
        match self {
            Self::Benchmark(p) => &p.orientation,
            Self::Table(t) => &t.orientation,
        }
    }

    /// Canonical (maximize) objectives of candidate `index` with input `x`.
    pub fn evaluate_canonical(&self, index: usize, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Benchmark(p) => p.evaluate_canonical(x),
            Self::Table(t) => {
                let v = t.values.get(index).ok_or(Error::Index { index, len: t.values.len() })?;
                Ok(t.orientation.to_canonical(v))
            }
        }
    }
}

/// Per-phase wall-clock seconds; never part of deterministic outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub init_s: f64,
    pub fit_s: f64,
    pub optimize_s: f64,
    pub evaluate_s: f64,
}

/// Resumable per-seed campaign state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub seed: u64,
    pub dataset: Dataset,
    pub front: ParetoFront,
    /// Canonical orientation.
    pub reference: ReferencePoint,
    pub iteration: usize,
    /// Candidate indices not yet evaluated, ascending.
    pub pool: Vec<usize>,
    /// Entry i is the hypervolume after iteration i (0 = initial design).
    pub hv_trace: Vec<f64>,
    pub hyperparameters: Option<Vec<KernelParams>>,
    /// Best acquisition value found in each iteration.
    pub acquisition_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub batch: Vec<usize>,
    pub acquisition_value: f64,
    pub retried: bool,
    pub timings: PhaseTimings,
}

/// A configured campaign for one seed: the problem and its candidate pool.
pub struct Campaign {
    pub config: CampaignConfig,
    pub problem: Problem,
    pub candidates: Arc<CandidateSet>,
    pub seed: u64,
}

fn maximin_design(candidates: &CandidateSet, n: usize, seed: u64) -> Vec<usize> {
    let unit: Vec<Vec<f64>> = candidates.rows().iter().map(|r| candidates.normalize(r)).collect();
    let mut rng = rng_for(seed, 0);
    let first = rng.random_range(0..unit.len());
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = unit.iter().map(|u| sq_dist(u, &unit[first])).collect();
    min_d[first] = f64::NEG_INFINITY;
    while chosen.len() < n {
        let mut best = 0;
        for i in 1..unit.len() {
            if min_d[i] > min_d[best] {
                best = i;
            }
        }
        chosen.push(best);
        min_d[best] = f64::NEG_INFINITY;
        for (i, u) in unit.iter().enumerate() {
            if min_d[i] > f64::NEG_INFINITY {
                min_d[i] = min_d[i].min(sq_dist(u, &unit[best]));
            }
        }
    }
    chosen
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Worst observed value minus `fraction` of the range, per objective
/// (canonical orientation). A zero range uses a unit margin base.
pub fn margin_reference(dataset: &Dataset, fraction: f64) -> Result<ReferencePoint> {
    if dataset.is_empty() {
        return Err(Error::Precondition("reference needs at least one evaluation".into()));
    }
    let values = (0..dataset.m)
        .map(|j| {
            let col = dataset.objective_column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            lo - fraction * range
        })
        .collect();
    ReferencePoint::new(values)
}

/// Seed of the candidate pool used by the campaign for `seed`.
pub fn candidate_seed(config: &CampaignConfig, seed: u64) -> u64 {
    config.candidates.seed.unwrap_or_else(|| stream_seed(seed, Stream::Candidates, 0))
}

impl Campaign {
    pub fn new(config: CampaignConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let problem = Problem::from_config(&config.problem)?;
        let candidates = match &problem {
            Problem::Benchmark(p) => {
                generate_candidates(p, config.candidates.n, config.candidates.scheme, candidate_seed(&config, seed))?
            }
            Problem::Table(t) => CandidateSet::new(t.bounds.clone(), t.inputs.clone(), 0)?,
        };
        let c = &config.campaign;
        let n_init = c.n_init.unwrap_or(2 * problem.d()).max(2);
        let needed = n_init + c.q * c.n_bo_iterations;
        if candidates.len() < needed {
            return Err(Error::Config(format!(
                "candidate pool of {} is smaller than n_init + q * n_bo_iterations = {needed}",
                candidates.len()
            )));
        }
        if let ReferencePolicy::Fixed { values } = &config.reference {
            check_dim(problem.m(), values.len())
                .map_err(|_| Error::Config(format!("reference.values must have {} entries", problem.m())))?;
        }
        Ok(Self { config, problem, candidates: Arc::new(candidates), seed })
    }

    pub fn n_init(&self) -> usize {
        self.config.campaign.n_init.unwrap_or(2 * self.problem.d()).max(2)
    }

    fn evaluate(&self, index: usize) -> Result<Evaluation> {
        let x = self.candidates.row(index)?.to_vec();
        let objectives = self.problem.evaluate_canonical(index, &x)?;
        Ok(Evaluation { input: x, objectives, candidate_index: Some(index) })
    }

    /// Space-filling initial design, its front, and the frozen reference.
    pub fn initialize(&self) -> Result<CampaignState> {
        let design = maximin_design(&self.candidates, self.n_init(), stream_seed(self.seed, Stream::InitialDesign, 0));
        let mut dataset = Dataset::new(self.problem.d(), self.problem.m());
        for &i in &design {
            dataset.push(self.evaluate(i)?)?;
        }
        let front = extract_front(&dataset);
        let reference = match &self.config.reference {
            ReferencePolicy::Fixed { values } => ReferencePoint::new(self.problem.orientation().to_canonical(values))?,
            ReferencePolicy::WorstObservedMinusMargin { fraction } => margin_reference(&dataset, *fraction)?,
        };
        let mut pool: Vec<usize> = (0..self.candidates.len()).collect();
        let mut taken = design.clone();
        taken.sort_unstable();
        pool.retain(|i| taken.binary_search(i).is_err());
        let hv0 = hv(&front, &reference)?;
        Ok(CampaignState {
            seed: self.seed,
            dataset,
            front,
            reference,
            iteration: 0,
            pool,
            hv_trace: vec![hv0],
            hyperparameters: None,
            acquisition_values: Vec::new(),
        })
    }

    /// Fitted models and the acquisition context for the next iteration.
    pub fn context(&self, state: &CampaignState, min_jitter: f64) -> Result<(AcquisitionContext, Vec<KernelParams>)> {
        let it = state.iteration as u64 + 1;
        let gp_seed = stream_seed(self.seed, Stream::GpFit, it);
        let bounds = self.problem.bounds().to_vec();
        let models = (0..self.problem.m())
            .into_par_iter()
            .map(|j| {
                let cfg = FitConfig {
                    restarts: self.config.gp.restarts,
                    max_iters: self.config.gp.max_iters,
                    noise: self.config.gp.noise,
                    seed: derive_seed(gp_seed, &[j as u64]),
                    min_jitter,
                    warm_start: state.hyperparameters.as_ref().and_then(|h| h.get(j).cloned()),
                    input_bounds: Some(bounds.clone()),
                };
                gp::fit(&state.dataset, j, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let params = models.iter().map(|m| m.params().clone()).collect();
        let pool = self.candidates.subset(&state.pool)?;
        let ensemble = GpEnsemble::new(models)?.with_candidate_cache(&pool)?;
        let qcfg = QehviConfig::new(
            self.config.qehvi.n_mc_samples,
            self.config.campaign.q,
            state.reference.clone(),
            stream_seed(self.seed, Stream::BaseNormals, it),
        )?;
        let ctx = AcquisitionContext::new(Arc::new(ensemble), state.front.clone(), qcfg, Arc::new(pool))?;
        Ok((ctx, params))
    }

    fn select(&self, state: &CampaignState, arm: Arm, min_jitter: f64, t: &mut PhaseTimings) -> Result<(Vec<usize>, f64, Vec<KernelParams>)> {
        let start = Instant::now();
        let (ctx, params) = self.context(state, min_jitter)?;
        t.fit_s += start.elapsed().as_secs_f64();
        let start = Instant::now();
        let q = self.config.campaign.q;
        let seed = stream_seed(self.seed, Stream::Optimizer, state.iteration as u64 + 1);
        let (local, value) = match arm {
            Arm::Sa => match self.config.optimizer.variant {
                SaVariant::Sequential => {
                    let out = run_sequential(&ctx, &self.config.optimizer.sa_config(q, seed))?;
                    (out.best_batch, out.best_value)
                }
                SaVariant::Parallel => {
                    let out = run_parallel(&ctx, &self.config.optimizer.parallel_config(q, seed))?;
                    (out.best_batch, out.best_value)
                }
            },
            Arm::Baseline => {
                let cfg = BaselineConfig { seed, ..self.config.baseline.clone() };
                let out = run_baseline(&ctx, q, &cfg)?;
                (out.indices, out.value)
            }
        };
        t.optimize_s += start.elapsed().as_secs_f64();
        let mut global: Vec<usize> = Vec::with_capacity(local.len());
        for i in local {
            let g = state.pool[i];
            if !global.contains(&g) {
                global.push(g);
            }
        }
        Ok((global, value, params))
    }

    /// One optimization iteration. On failure the iteration is retried once
    /// with extra jitter; if that fails too the state is left untouched.
    pub fn step(&self, state: &mut CampaignState, arm: Arm) -> Result<StepReport> {
        let mut timings = PhaseTimings::default();
        let (batch, value, params, retried) = match self.select(state, arm, 0.0, &mut timings) {
            Ok((b, v, p)) => (b, v, p, false),
            Err(_) => {
                let (b, v, p) = self.select(state, arm, RETRY_JITTER, &mut timings)?;
                (b, v, p, true)
            }
        };
        let start = Instant::now();
        let evals = batch.iter().map(|&i| self.evaluate(i)).collect::<Result<Vec<_>>>()?;
        let mut next = state.clone();
        for e in evals {
            next.dataset.push(e.clone())?;
            next.front.insert(e.objectives)?;
        }
        next.pool.retain(|i| !batch.contains(i));
        next.iteration += 1;
        next.hv_trace.push(hv(&next.front, &next.reference)?);
        next.hyperparameters = Some(params);
        next.acquisition_values.push(value);
        timings.evaluate_s += start.elapsed().as_secs_f64();
        *state = next;
        Ok(StepReport { iteration: state.iteration, batch, acquisition_value: value, retried, timings })
    }
}

/// One evaluated point in native orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub iteration: usize,
    pub candidate_index: usize,
    pub input: Vec<f64>,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub hv_trace: Vec<f64>,
    /// Native orientation.
    pub reference: Vec<f64>,
    pub final_front: Vec<Vec<f64>>,
    pub evaluations: Vec<EvaluationRecord>,
    pub acquisition_values: Vec<f64>,
    pub failed: Option<String>,
    #[serde(skip)]
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub description: String,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub iteration: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ArmResult {
    /// Mean/min/max hypervolume per iteration over successful seeds.
    pub fn aggregate(&self) -> Vec<AggregatePoint> {
        let ok: Vec<&SeedResult> = self.seeds.iter().filter(|s| s.failed.is_none()).collect();
        let len = ok.iter().map(|s| s.hv_trace.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| {
                let vals: Vec<f64> = ok.iter().map(|s| s.hv_trace[i]).collect();
                AggregatePoint {
                    iteration: i,
                    mean: vals.iter().sum::<f64>() / vals.len() as f64,
                    min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.aggregate().last().map(|p| p.mean)
    }

    pub fn failed_seeds(&self) -> Vec<u64> {
        self.seeds.iter().filter(|s| s.failed.is_some()).map(|s| s.seed).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub problem: String,
    pub arms: Vec<ArmResult>,
}

impl CampaignResult {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    /// Deterministic JSON (no timings).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn arm_description(config: &CampaignConfig, arm: Arm) -> String {
    match arm {
        Arm::Sa => match config.optimizer.variant {
            SaVariant::Sequential => "sequential simulated annealing over candidate indices".into(),
            SaVariant::Parallel => format!(
                "parallel simulated annealing over candidate indices ({} chains, {} proposals per chain)",
                config.optimizer.n_chains, config.optimizer.proposals_per_chain
            ),
        },
        Arm::Baseline => BASELINE_DESCRIPTION.into(),
    }
}

fn seed_result(campaign: &Campaign, state: &CampaignState, failed: Option<String>, timings: PhaseTimings) -> SeedResult {
    let orientation = campaign.problem.orientation();
    let n_init = campaign.n_init();
    let q = campaign.config.campaign.q;
    let evaluations = state
        .dataset
        .evaluations()
        .iter()
        .enumerate()
        .map(|(k, e)| EvaluationRecord {
            iteration: if k < n_init { 0 } else { (k - n_init) / q + 1 },
            candidate_index: e.candidate_index.unwrap_or(usize::MAX),
            input: e.input.clone(),
            objectives: orientation.to_native(&e.objectives),
        })
        .collect();
    SeedResult {
        seed: state.seed,
        hv_trace: state.hv_trace.clone(),
        reference: orientation.to_native(state.reference.values()),
        final_front: state.front.points().iter().map(|p| orientation.to_native(p)).collect(),
        evaluations,
        acquisition_values: state.acquisition_values.clone(),
        failed,
        timings,
    }
}

fn run_seed(config: &CampaignConfig, seed: u64, arms: &[Arm]) -> Result<Vec<SeedResult>> {
    let campaign = Campaign::new(config.clone(), seed)?;
    let start = Instant::now();
    let init = campaign.initialize();
    let init_s = start.elapsed().as_secs_f64();
    let mut out = Vec::with_capacity(arms.len());
    for &arm in arms {
        let mut timings = PhaseTimings { init_s, ..Default::default() };
        let mut state = match &init {
            Ok(s) => s.clone(),
            Err(e) => {
                let empty = CampaignState {
                    seed,
                    dataset: Dataset::new(campaign.problem.d(), campaign.problem.m()),
                    front: ParetoFront::empty(campaign.problem.m()),
                    reference: ReferencePoint(vec![0.0; campaign.problem.m()]),
                    iteration: 0,
                    pool: Vec::new(),
                    hv_trace: Vec::new(),
                    hyperparameters: None,
                    acquisition_values: Vec::new(),
                };
                out.push(seed_result(&campaign, &empty, Some(e.to_string()), timings));
                continue;
            }
        };
        let mut failed = None;
        for _ in 0..config.campaign.n_bo_iterations {
            match campaign.step(&mut state, arm) {
                Ok(r) => {
                    timings.fit_s += r.timings.fit_s;
                    timings.optimize_s += r.timings.optimize_s;
                    timings.evaluate_s += r.timings.evaluate_s;
                }
                Err(e) => {
                    failed = Some(format!("iteration {}: {e}", state.iteration + 1));
                    break;
                }
            }
        }
        out.push(seed_result(&campaign, &state, failed, timings));
    }
    Ok(out)
}

/// Runs every configured seed for each arm. Arms of one seed share the
/// candidate pool, the initial design, and per-iteration base samples.
/// Seed failures after setup are recorded, not propagated.
pub fn run(config: &CampaignConfig, arms: &[Arm]) -> Result<CampaignResult> {
    config.validate()?;
    if arms.is_empty() {
        return Err(Error::Config("at least one arm must be selected".into()));
    }
    let problem = Problem::from_config(&config.problem)?;
    // Configuration errors should surface once, before any seed runs.
    Campaign::new(config.clone(), config.campaign.seeds[0])?;
    let per_seed: Vec<Vec<SeedResult>> = config
        .campaign
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, s, arms))
        .collect::<Result<_>>()?;
    let arms = arms
        .iter()
        .enumerate()
        .map(|(a, &arm)| ArmResult {
            arm,
            description: arm_description(config, arm),
            seeds: per_seed.iter().map(|s| s[a].clone()).collect(),
        })
        .collect();
    Ok(CampaignResult { config: config.clone(), problem: problem.name().to_string(), arms })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_hv_trace_csv<W: Write>(trace: &[f64], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["iteration", "hypervolume"])?;
    for (i, v) in trace.iter().enumerate() {
        out.write_record([i.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(points: &[AggregatePoint], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["iteration", "mean", "min", "max"])?;
    for p in points {
        out.write_record([p.iteration.to_string(), p.mean.to_string(), p.min.to_string(), p.max.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `seed,iteration,candidate_index,x1..xd,y1..ym` for every seed of an arm.
pub fn write_evaluations_csv<W: Write>(arm: &ArmResult, d: usize, m: usize, w: W) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["seed".to_string(), "iteration".into(), "candidate_index".into()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|j| format!("y{j}")));
    out.write_record(&header)?;
    for s in &arm.seeds {
        for e in &s.evaluations {
            let mut row = vec![s.seed.to_string(), e.iteration.to_string(), e.candidate_index.to_string()];
            row.extend(e.input.iter().map(f64::to_string));
            row.extend(e.objectives.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    schema_version: u32,
    config: CampaignConfig,
    state: CampaignState,
}

pub fn save_state(config: &CampaignConfig, state: &CampaignState, path: &Path) -> Result<()> {
    let file = StateFile { schema_version: STATE_SCHEMA_VERSION, config: config.clone(), state: state.clone() };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_state(path: &Path) -> Result<(CampaignConfig, CampaignState)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(Error::Parse(format!("{}: empty state file", path.display())));
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Parse(format!("{}: missing schema_version", path.display())))?;
    if found != u64::from(STATE_SCHEMA_VERSION) {
        return Err(Error::Schema { expected: STATE_SCHEMA_VERSION, found: found as u32 });
    }
    let file: StateFile = serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((file.config, file.state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(kind: BenchmarkKind) -> CampaignConfig {
        let mut c = CampaignConfig::new(ProblemConfig::benchmark(kind));
        c.candidates.n = 60;
        c.campaign = LoopConfig { n_init: Some(6), q: 2, n_bo_iterations: 2, seeds: vec![3], arms: vec![Arm::Sa] };
        c.optimizer.n_iterations = 60;
        c.baseline.n_restarts = 2;
        c.baseline.max_local_iters = 10;
        c.gp.restarts = 2;
        c.gp.max_iters = 30;
        c.qehvi.n_mc_samples = 16;
        c
    }

    #[test]
    fn initialize_contract() {
        let c = small_config(BenchmarkKind::Dtlz2);
        let camp = Campaign::new(c, 1).unwrap();
        let s = camp.initialize().unwrap();
        assert_eq!(s.dataset.len(), 6);
        for e in s.dataset.evaluations() {
            let i = e.candidate_index.unwrap();
            assert_eq!(camp.candidates.row(i).unwrap(), e.input.as_slice());
            assert!(!s.pool.contains(&i));
        }
        assert_eq!(s.pool.len(), 54);
        assert_eq!(s.hv_trace.len(), 1);
    }

    #[test]
    fn fixed_reference_is_used_verbatim() {
        let mut c = small_config(BenchmarkKind::Kursawe);
        c.reference = ReferencePolicy::Fixed { values: vec![-4.0, 12.5] };
        let camp = Campaign::new(c, 1).unwrap();
        let s = camp.initialize().unwrap();
        assert_eq!(camp.problem.orientation().to_native(s.reference.values()), vec![-4.0, 12.5]);
    }

    #[test]
    fn margin_reference_formula() {
        let evals = [[1.0, 5.0], [3.0, 2.0], [2.0, 4.0]]
            .iter()
            .enumerate()
            .map(|(i, y)| Evaluation { input: vec![i as f64], objectives: y.to_vec(), candidate_index: None })
            .collect();
        let ds = Dataset::from_evaluations(1, 2, evals).unwrap();
        let r = margin_reference(&ds, 0.1).unwrap();
        assert_eq!(r.values(), &[1.0 - 0.1 * 2.0, 2.0 - 0.1 * 3.0]);
    }

    #[test]
    fn step_grows_dataset_and_trace() {
        let c = small_config(BenchmarkKind::Zdt1);
        let camp = Campaign::new(c, 2).unwrap();
        let mut s = camp.initialize().unwrap();
        for arm in [Arm::Sa, Arm::Baseline] {
            let before = s.dataset.len();
            let r = camp.step(&mut s, arm).unwrap();
            assert_eq!(s.dataset.len(), before + 2);
            assert_eq!(r.batch.len(), 2);
            assert!(s.hv_trace[s.hv_trace.len() - 1] >= s.hv_trace[s.hv_trace.len() - 2]);
        }
    }

    #[test]
    fn run_is_deterministic_and_paired() {
        let mut c = small_config(BenchmarkKind::LatentAware);
        c.campaign.seeds = vec![1, 2];
        let arms = [Arm::Sa, Arm::Baseline];
        let a = run(&c, &arms).unwrap();
        let b = run(&c, &arms).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for k in 0..2 {
            let sa = &a.arms[0].seeds[k];
            let bl = &a.arms[1].seeds[k];
            assert_eq!(sa.evaluations[..6], bl.evaluations[..6]);
            assert_eq!(sa.hv_trace[0], bl.hv_trace[0]);
            assert!(sa.failed.is_none() && bl.failed.is_none());
            assert_eq!(sa.hv_trace.len(), 3);
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_hv_only() {
        let mut c = small_config(BenchmarkKind::Kursawe);
        c.campaign.n_bo_iterations = 0;
        let r = run(&c, &[Arm::Sa]).unwrap();
        assert_eq!(r.arms[0].seeds[0].hv_trace.len(), 1);
    }

    #[test]
    fn save_load_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let c = small_config(BenchmarkKind::Dtlz2);
        let camp = Campaign::new(c.clone(), 4).unwrap();
        let mut s = camp.initialize().unwrap();
        camp.step(&mut s, Arm::Sa).unwrap();
        save_state(&c, &s, &path).unwrap();
        let (c2, mut s2) = load_state(&path).unwrap();
        assert_eq!(c2, c);
        assert_eq!(s2, s);
        let camp2 = Campaign::new(c2, s2.seed).unwrap();
        camp.step(&mut s, Arm::Sa).unwrap();
        camp2.step(&mut s2, Arm::Sa).unwrap();
        assert_eq!(s, s2);

        let text = fs::read_to_string(&path).unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_state(&path), Err(Error::Schema { expected: 1, found: 7 })));
        fs::write(&path, "").unwrap();
        assert!(matches!(load_state(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn pool_too_small_is_config_error() {
        let mut c = small_config(BenchmarkKind::Kursawe);
        c.candidates.n = 7;
        assert!(matches!(Campaign::new(c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn table_problem_runs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let mut text = String::from("a,b,f,g\n");
        for i in 0..30 {
            let (a, b) = (i as f64 / 29.0, ((i * 7) % 30) as f64 / 29.0);
            text += &format!("{a},{b},{},{}\n", a * (1.0 - b), b - a * a);
        }
        fs::write(&path, text).unwrap();
        let mut c = small_config(BenchmarkKind::Kursawe);
        c.problem = ProblemConfig {
            kind: "table".into(),
            d: None,
            bounds: None,
            directions: None,
            path: Some(path),
            n_inputs: Some(2),
        };
        let r = run(&c, &[Arm::Sa]).unwrap();
        let s = &r.arms[0].seeds[0];
        assert!(s.failed.is_none());
        assert_eq!(s.evaluations.len(), 10);
    }

    #[test]
    fn csv_outputs() {
        let mut buf = Vec::new();
        write_hv_trace_csv(&[0.5, 0.75], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,hypervolume\n0,0.5\n1,0.75\n");
        let mut buf = Vec::new();
        write_aggregate_csv(&[AggregatePoint { iteration: 0, mean: 1.5, min: 1.0, max: 2.0 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,mean,min,max\n0,1.5,1,2\n");
    }
}
