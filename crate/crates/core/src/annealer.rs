//! Simulated annealing over index batches of a candidate set.
//!
//! The sequential annealer perturbs `k ∈ {1, 2, 3}` batch members per step and
//! applies the Metropolis rule under geometric cooling. The parallel variant
//! runs M chains, each scoring r proposals per step in one batched call,
//! and cools all chains together.

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionContext;
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// A scalar score over batches of candidate indices.
pub trait BatchObjective: Sync {
    fn n_candidates(&self) -> usize;

    fn evaluate(&self, batch: &[usize]) -> Result<f64>;

    /// Must return exactly what [`Self::evaluate`] returns for each batch.
    fn evaluate_many(&self, batches: &[Vec<usize>]) -> Result<Vec<f64>> {
        batches.iter().map(|b| self.evaluate(b)).collect()
    }
}

impl BatchObjective for AcquisitionContext {
    fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    fn evaluate(&self, batch: &[usize]) -> Result<f64> {
        self.qehvi(batch)
    }

    fn evaluate_many(&self, batches: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.qehvi_batched(batches)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaConfig {
    pub q: usize,
    pub t0: f64,
    pub alpha: f64,
    pub n_iterations: usize,
    pub p_change: Vec<f64>,
    pub enforce_unique: bool,
    pub seed: u64,
}

impl SaConfig {
    /// T0 = 5, alpha = 0.95, 4000 iterations.
    pub fn benchmark(q: usize, seed: u64) -> Self {
        Self { q, t0: 5.0, alpha: 0.95, n_iterations: 4000, p_change: vec![0.6, 0.3, 0.1], enforce_unique: true, seed }
    }

    /// T0 = 1, alpha = 0.9999, 100000 iterations.
    pub fn campaign(q: usize, seed: u64) -> Self {
        Self { t0: 1.0, alpha: 0.9999, n_iterations: 100_000, ..Self::benchmark(q, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(Error::Config("t0 must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.p_change.is_empty()
            || self.p_change.iter().any(|p| !(*p >= 0.0))
            || (self.p_change.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Config("p_change must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelSaConfig {
    pub base: SaConfig,
    pub n_chains: usize,
    pub proposals_per_chain: usize,
}

impl ParallelSaConfig {
    /// M = 10 chains, r = 2 proposals, 20000 iterations on top of `base`.
    pub fn standard(base: SaConfig) -> Self {
        Self { base: SaConfig { n_iterations: 20_000, ..base }, n_chains: 10, proposals_per_chain: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_chains == 0 || self.proposals_per_chain == 0 {
            return Err(Error::Config("n_chains and proposals_per_chain must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Temperature used for this iteration's acceptance test.
    pub temperature: f64,
    pub current: f64,
    pub best: f64,
    pub accepted: bool,
    pub n_changed: usize,
    /// Score of the (selected) proposal.
    pub proposal: f64,
    pub proposal_batch: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SaTrace {
    pub initial_batch: Vec<usize>,
    pub initial_value: f64,
    pub records: Vec<TraceRecord>,
    pub final_batch: Vec<usize>,
}

impl SaTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["iter", "temperature", "current", "best", "accepted", "n_changed"])?;
        for r in &self.records {
            out.write_record([
                r.iter.to_string(),
                r.temperature.to_string(),
                r.current.to_string(),
                r.best.to_string(),
                r.accepted.to_string(),
                r.n_changed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Best value after each iteration (initial value if no iterations).
    pub fn best_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub best_batch: Vec<usize>,
    pub best_value: f64,
    pub trace: SaTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelOutcome {
    pub best_batch: Vec<usize>,
    pub best_value: f64,
    pub best_chain: usize,
    pub chains: Vec<SaOutcome>,
}

/// Draws the number of positions to change, clamped to `q`.
pub fn sample_k(p_change: &[f64], q: usize, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = p_change.len();
    for (i, p) in p_change.iter().enumerate() {
        acc += p;
        if u < acc {
            k = i + 1;
            break;
        }
    }
    k.min(q).max(1)
}

/// Replaces exactly `k` distinct positions of `batch` with new candidate
/// indices. Under `enforce_unique` replacements avoid every index already in
/// the batch; otherwise they only avoid the index they replace.
pub fn perturb(
    batch: &[usize],
    k: usize,
    n_candidates: usize,
    enforce_unique: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let q = batch.len();
    if k == 0 || k > q {
        return Err(Error::Precondition(format!("cannot change {k} of {q} positions")));
    }
    if enforce_unique && n_candidates <= q {
        return Err(Error::Config(format!(
            "enforce_unique with {n_candidates} candidates and q = {q} leaves no distinct replacement; enlarge the candidate set or reduce q"
        )));
    }
    if n_candidates < 2 {
        return Err(Error::Config("a single candidate cannot be perturbed".into()));
    }
    let mut out = batch.to_vec();
    for pos in sample_indices(rng, q, k).into_iter() {
        let old = out[pos];
        let new = loop {
            let c = rng.random_range(0..n_candidates);
            let clash = if enforce_unique { out.contains(&c) } else { c == old };
            if !clash {
                break c;
            }
        };
        out[pos] = new;
    }
    Ok(out)
}

/// Metropolis rule: always accept improvements, otherwise accept with
/// probability `exp(delta / temperature)`.
pub fn accept(delta: f64, temperature: f64, rng: &mut ChaCha8Rng) -> bool {
    if delta > 0.0 {
        return true;
    }
    let ratio = if delta == 0.0 { 0.0 } else { delta / temperature };
    let u: f64 = rng.random();
    u < ratio.exp()
}

pub fn cool(temperature: f64, alpha: f64) -> f64 {
    alpha * temperature
}

fn initial_batch(q: usize, n: usize, unique: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if unique {
        sample_indices(rng, n, q).into_vec()
    } else {
        (0..q).map(|_| rng.random_range(0..n)).collect()
    }
}

fn check_run<O: BatchObjective + ?Sized>(obj: &O, config: &SaConfig) -> Result<usize> {
    config.validate()?;
    let n = obj.n_candidates();
    if n == 0 {
        return Err(Error::Precondition("candidate set is empty".into()));
    }
    if config.enforce_unique && n < config.q {
        return Err(Error::Config(format!(
            "enforce_unique needs at least q = {} candidates, found {n}",
            config.q
        )));
    }
    Ok(n)
}

/// Whether any move exists from a batch of size q.
fn has_moves(n: usize, q: usize, unique: bool) -> bool {
    if unique {
        n > q
    } else {
        n > 1
    }
}

struct Chain {
    rng: ChaCha8Rng,
    batch: Vec<usize>,
    value: f64,
    best_batch: Vec<usize>,
    best_value: f64,
    trace: SaTrace,
}

impl Chain {
    fn start(seed: u64, index: u64, config: &SaConfig, n: usize) -> Self {
        let mut rng = rng_for(seed, index);
        let batch = initial_batch(config.q, n, config.enforce_unique, &mut rng);
        Self {
            rng,
            batch: batch.clone(),
            value: f64::NAN,
            best_batch: batch.clone(),
            best_value: f64::NAN,
            trace: SaTrace { initial_batch: batch, ..Default::default() },
        }
    }

    fn set_initial(&mut self, value: f64) {
        self.value = value;
        self.best_value = value;
        self.trace.initial_value = value;
    }

    fn propose(&mut self, config: &SaConfig, n: usize) -> Result<(Vec<usize>, usize)> {
        let k = sample_k(&config.p_change, config.q, &mut self.rng);
        let p = perturb(&self.batch, k, n, config.enforce_unique, &mut self.rng)?;
        Ok((p, k))
    }

    fn step(&mut self, iter: usize, temperature: f64, proposal: Vec<usize>, k: usize, value: f64) {
        let accepted = accept(value - self.value, temperature, &mut self.rng);
        if accepted {
            self.batch.clone_from(&proposal);
            self.value = value;
            if value > self.best_value {
                self.best_value = value;
                self.best_batch.clone_from(&proposal);
            }
        }
        self.trace.records.push(TraceRecord {
            iter,
            temperature,
            current: self.value,
            best: self.best_value,
            accepted,
            n_changed: k,
            proposal: value,
            proposal_batch: proposal,
        });
    }

    fn finish(mut self) -> SaOutcome {
        self.trace.final_batch = self.batch;
        SaOutcome { best_batch: self.best_batch, best_value: self.best_value, trace: self.trace }
    }
}

/// Single-chain annealing. Returns the best batch ever visited.
pub fn run_sequential<O: BatchObjective + ?Sized>(obj: &O, config: &SaConfig) -> Result<SaOutcome> {
    let n = check_run(obj, config)?;
    let mut chain = Chain::start(config.seed, 0, config, n);
    chain.set_initial(obj.evaluate(&chain.batch)?);
    if !has_moves(n, config.q, config.enforce_unique) {
        return Ok(chain.finish());
    }
    let mut t = config.t0;
    for iter in 0..config.n_iterations {
        let (proposal, k) = chain.propose(config, n)?;
        let value = obj.evaluate(&proposal)?;
        chain.step(iter, t, proposal, k, value);
        t = cool(t, config.alpha);
    }
    Ok(chain.finish())
}

/// Multi-chain annealing with r proposals per chain per iteration and
/// synchronized cooling. With one chain and one proposal this reproduces
/// [`run_sequential`] exactly.
pub fn run_parallel<O: BatchObjective + ?Sized>(obj: &O, config: &ParallelSaConfig) -> Result<ParallelOutcome> {
    config.validate()?;
    let base = &config.base;
    let n = check_run(obj, base)?;
    let (m, r) = (config.n_chains, config.proposals_per_chain);
    let mut chains: Vec<Chain> = (0..m).map(|c| Chain::start(base.seed, c as u64, base, n)).collect();
    let starts: Vec<Vec<usize>> = chains.iter().map(|c| c.batch.clone()).collect();
    for (c, v) in chains.iter_mut().zip(obj.evaluate_many(&starts)?) {
        c.set_initial(v);
    }
    if has_moves(n, base.q, base.enforce_unique) {
        let mut t = base.t0;
        for iter in 0..base.n_iterations {
            let mut proposals = Vec::with_capacity(m * r);
            let mut ks = Vec::with_capacity(m * r);
            for chain in chains.iter_mut() {
                for _ in 0..r {
                    let (p, k) = chain.propose(base, n)?;
                    proposals.push(p);
                    ks.push(k);
                }
            }
            let values = obj.evaluate_many(&proposals)?;
            let mut proposals = proposals.into_iter();
            for (c, chain) in chains.iter_mut().enumerate() {
                let own: Vec<Vec<usize>> = proposals.by_ref().take(r).collect();
                let vals = &values[c * r..(c + 1) * r];
                let mut j = 0;
                for (i, v) in vals.iter().enumerate() {
                    if *v > vals[j] {
                        j = i;
                    }
                }
                let chosen = own.into_iter().nth(j).expect("r proposals per chain");
                chain.step(iter, t, chosen, ks[c * r + j], vals[j]);
            }
            t = cool(t, base.alpha);
        }
    }
    let chains: Vec<SaOutcome> = chains.into_iter().map(Chain::finish).collect();
    let mut best_chain = 0;
    for (i, c) in chains.iter().enumerate() {
        if c.best_value > chains[best_chain].best_value {
            best_chain = i;
        }
    }
    Ok(ParallelOutcome {
        best_batch: chains[best_chain].best_batch.clone(),
        best_value: chains[best_chain].best_value,
        best_chain,
        chains,
    })
}

/// Exhaustive maximum over all unique size-q subsets (sorted index order);
/// for small oracle instances.
pub fn enumerate_best<O: BatchObjective + ?Sized>(obj: &O, q: usize) -> Result<(Vec<usize>, f64)> {
    let n = obj.n_candidates();
    if q == 0 || q > n {
        return Err(Error::Precondition(format!("cannot enumerate size-{q} subsets of {n} candidates")));
    }
    let mut idx: Vec<usize> = (0..q).collect();
    let mut best = (idx.clone(), obj.evaluate(&idx)?);
    loop {
        let mut i = q;
        while i > 0 && idx[i - 1] == n - q + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..q {
            idx[j] = idx[j - 1] + 1;
        }
        let v = obj.evaluate(&idx)?;
        if v > best.1 {
            best = (idx.clone(), v);
        }
    }
    Ok(best)
}
