//! Independent per-objective Gaussian-process surrogates.
//!
//! Each objective gets a Matérn-5/2 ARD kernel with a constant mean, fitted
//! by multi-start projected gradient ascent on the exact log marginal
//! likelihood. Inputs are mapped to the unit box and targets standardized
//! before fitting; posteriors are reported in the original target units.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pareto::Dataset;
use crate::seeding::rng_for;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Diagonal jitter tried, in order, when a kernel matrix fails to factor.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Kernel hyperparameters in normalized-input / standardized-target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub constant_mean: f64,
}

impl KernelParams {
    pub fn new(d: usize) -> Self {
        Self { lengthscales: vec![0.5; d], signal_variance: 1.0, noise_variance: 1e-3, constant_mean: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Value("lengthscales must be positive and finite".into()));
        }
        if !(self.signal_variance > 0.0) || !(self.noise_variance >= 0.0) || !self.constant_mean.is_finite() {
            return Err(Error::Value("signal variance must be positive and noise nonnegative".into()));
        }
        Ok(())
    }

    /// Matérn-5/2 covariance between two points.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = scaled_distance(&self.lengthscales, a, b);
        self.signal_variance * matern52(r)
    }
}

#[inline]
fn scaled_distance(ls: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..ls.len() {
        let t = (a[k] - b[k]) / ls[k];
        s += t * t;
    }
    s.sqrt()
}

#[inline]
fn matern52(r: f64) -> f64 {
    let sr = SQRT5 * r;
    (1.0 + sr + 5.0 / 3.0 * r * r) * (-sr).exp()
}

/// Signal-only kernel matrix over the rows of `x`.
fn signal_matrix(params: &KernelParams, x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = params.kernel(&x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + (noise + jitter) I`, walking the jitter ladder.
fn factor_with_jitter(k: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Numerical {
        message: "kernel matrix is not positive definite".into(),
        jitter_ladder: JITTER_LADDER.to_vec(),
    })
}

fn centered(targets: &[f64], c: f64) -> DVector<f64> {
    DVector::from_iterator(targets.len(), targets.iter().map(|y| y - c))
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(resid);
    let n = resid.len() as f64;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    (lml, alpha)
}

/// Exact Gaussian log marginal likelihood of `targets` under `params`.
pub fn log_marginal_likelihood(params: &KernelParams, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    check_dim(inputs.len(), targets.len())?;
    params.validate()?;
    let k = signal_matrix(params, inputs);
    let (chol, _) = factor_with_jitter(&k, params.noise_variance)?;
    Ok(lml_from_factor(&chol, &centered(targets, params.constant_mean)).0)
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln l_1, .., ln l_d, ln signal_variance, ln noise_variance, constant_mean]`.
pub fn lml_gradient(params: &KernelParams, inputs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(inputs.len(), targets.len())?;
    params.validate()?;
    let n = inputs.len();
    let d = params.lengthscales.len();
    let k = signal_matrix(params, inputs);
    let (chol, _) = factor_with_jitter(&k, params.noise_variance)?;
    let (lml, alpha) = lml_from_factor(&chol, &centered(targets, params.constant_mean));
    let kinv = chol.inverse();
    // W = alpha alpha^T - K^-1; dLML/dθ = tr(W dK/dθ) / 2.
    let w = |i: usize, j: usize| alpha[i] * alpha[j] - kinv[(i, j)];

    let mut grad = vec![0.0; d + 3];
    let ls2: Vec<f64> = params.lengthscales.iter().map(|l| l * l).collect();
    let mut sig_term = 0.0;
    for i in 0..n {
        sig_term += w(i, i) * k[(i, i)];
        for j in 0..i {
            let wij = w(i, j);
            sig_term += 2.0 * wij * k[(i, j)];
            let r = scaled_distance(&params.lengthscales, &inputs[i], &inputs[j]);
            let sr = SQRT5 * r;
            let coef = 2.0 * wij * params.signal_variance * (5.0 / 3.0) * (1.0 + sr) * (-sr).exp();
            for kk in 0..d {
                let delta = inputs[i][kk] - inputs[j][kk];
                grad[kk] += coef * delta * delta / ls2[kk];
            }
        }
    }
    for g in grad.iter_mut().take(d) {
        *g *= 0.5;
    }
    grad[d] = 0.5 * sig_term;
    let trace_w: f64 = (0..n).map(|i| w(i, i)).sum();
    grad[d + 1] = 0.5 * trace_w * params.noise_variance;
    grad[d + 2] = alpha.sum();
    Ok((lml, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Fixed(f64),
    Learned { floor: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub noise: NoiseMode,
    pub seed: u64,
    /// Extra jitter applied on top of the ladder; raised when a campaign
    /// retries a failed iteration.
    pub min_jitter: f64,
    #[serde(skip)]
    pub warm_start: Option<KernelParams>,
    #[serde(skip)]
    pub input_bounds: Option<Vec<(f64, f64)>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 200,
            noise: NoiseMode::Learned { floor: 1e-6, max: 1.0 },
            seed: 0,
            min_jitter: 0.0,
            warm_start: None,
            input_bounds: None,
        }
    }
}

/// A fitted single-objective GP.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    train_inputs: Vec<Vec<f64>>,
    target_mean: f64,
    target_std: f64,
    input_lo: Vec<f64>,
    input_width: Vec<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

struct ParamBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParamBox {
    fn project(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *t = t.clamp(*lo, *hi);
        }
    }
}

fn to_theta(p: &KernelParams) -> Vec<f64> {
    let mut t: Vec<f64> = p.lengthscales.iter().map(|l| l.ln()).collect();
    t.push(p.signal_variance.ln());
    t.push(p.noise_variance.max(1e-300).ln());
    t.push(p.constant_mean);
    t
}

fn from_theta(t: &[f64], d: usize) -> KernelParams {
    KernelParams {
        lengthscales: t[..d].iter().map(|v| v.exp()).collect(),
        signal_variance: t[d].exp(),
        noise_variance: t[d + 1].exp(),
        constant_mean: t[d + 2],
    }
}

/// Fits the GP for objective `objective_index` of `dataset`.
pub fn fit(dataset: &Dataset, objective_index: usize, config: &FitConfig) -> Result<GpModel> {
    if dataset.len() < 2 {
        return Err(Error::Precondition("GP fitting needs at least 2 evaluations".into()));
    }
    if objective_index >= dataset.m {
        return Err(Error::Index { index: objective_index, len: dataset.m });
    }
    let raw_targets = dataset.objective_column(objective_index);
    let inputs = dataset.inputs();
    fit_raw(&inputs, &raw_targets, config)
}

/// Fits a GP on raw inputs and targets.
pub fn fit_raw(inputs: &[Vec<f64>], raw_targets: &[f64], config: &FitConfig) -> Result<GpModel> {
    let n = inputs.len();
    if n < 2 {
        return Err(Error::Precondition("GP fitting needs at least 2 evaluations".into()));
    }
    check_dim(n, raw_targets.len())?;
    if raw_targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::Value("non-finite GP target".into()));
    }
    let d = inputs[0].len();
    let (input_lo, input_width) = match &config.input_bounds {
        Some(b) => {
            check_dim(d, b.len())?;
            (b.iter().map(|v| v.0).collect::<Vec<_>>(), b.iter().map(|v| v.1 - v.0).collect::<Vec<_>>())
        }
        None => {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for x in inputs {
                check_dim(d, x.len())?;
                for k in 0..d {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
            let w = lo.iter().zip(&hi).map(|(l, h)| if h > l { h - l } else { 1.0 }).collect();
            (lo, w)
        }
    };
    let xs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.iter().zip(input_lo.iter().zip(&input_width)).map(|(v, (l, w))| (v - l) / w).collect())
        .collect();

    let mean = raw_targets.iter().sum::<f64>() / n as f64;
    let var = raw_targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let std = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
    let ys: Vec<f64> = raw_targets.iter().map(|y| (y - mean) / std).collect();

    let (noise_lo, noise_hi) = match config.noise {
        NoiseMode::Fixed(v) => (v, v),
        NoiseMode::Learned { floor, max } => (floor, max.max(floor)),
    };
    if !(noise_lo >= 0.0) {
        return Err(Error::Config("noise variance must be nonnegative".into()));
    }
    let noise_fixed = noise_lo == noise_hi;
    let mut lo = vec![(1e-2f64).ln(); d];
    let mut hi = vec![(1e2f64).ln(); d];
    lo.push((1e-3f64).ln());
    hi.push((1e3f64).ln());
    lo.push(noise_lo.max(1e-300).ln());
    hi.push(noise_hi.max(1e-300).ln());
    lo.push(-10.0);
    hi.push(10.0);
    let pbox = ParamBox { lo, hi };

    let mut rng = rng_for(config.seed, 0);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.restarts.max(1));
    let default_start = {
        let mut p = KernelParams::new(d);
        p.noise_variance = 1e-3f64.clamp(noise_lo, noise_hi);
        p
    };
    starts.push(to_theta(config.warm_start.as_ref().unwrap_or(&default_start)));
    if config.warm_start.is_some() && config.restarts > 1 {
        starts.push(to_theta(&default_start));
    }
    while starts.len() < config.restarts.max(1) {
        let mut t: Vec<f64> = (0..d).map(|_| rng.random_range((0.05f64).ln()..(2.0f64).ln())).collect();
        t.push(rng.random_range((0.1f64).ln()..(10.0f64).ln()));
        let nl = noise_lo.max(1e-300).ln();
        let nh = noise_hi.min(0.1).max(noise_lo).max(1e-300).ln();
        t.push(if nh > nl { rng.random_range(nl..nh) } else { nl });
        t.push(rng.random_range(-0.5..0.5));
        starts.push(t);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mut theta in starts {
        pbox.project(&mut theta);
        if let Some((f, t)) = ascend(theta, &pbox, &xs, &ys, d, config.max_iters, noise_fixed) {
            if best.as_ref().map_or(true, |(bf, _)| f > *bf) {
                best = Some((f, t));
            }
        }
    }
    let (_, theta) = best.ok_or_else(|| Error::Numerical {
        message: "every GP fitting restart failed to evaluate the likelihood".into(),
        jitter_ladder: JITTER_LADDER.to_vec(),
    })?;
    let params = from_theta(&theta, d);
    GpModel::from_parts(params, xs, ys, mean, std, input_lo, input_width, config.min_jitter)
}

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking. Returns the final likelihood and parameters.
fn ascend(
    mut theta: Vec<f64>,
    pbox: &ParamBox,
    xs: &[Vec<f64>],
    ys: &[f64],
    d: usize,
    max_iters: usize,
    noise_fixed: bool,
) -> Option<(f64, Vec<f64>)> {
    let eval = |t: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (f, mut g) = lml_gradient(&from_theta(t, d), xs, ys).ok()?;
        if noise_fixed {
            g[d + 1] = 0.0;
        }
        f.is_finite().then_some((f, g))
    };
    let (mut f, mut g) = eval(&theta)?;
    let mut step = 0.1 / g.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
    for _ in 0..max_iters {
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            pbox.project(&mut cand);
            let moved: f64 = cand.iter().zip(&theta).zip(&g).map(|((c, t), gi)| (c - t) * gi).sum();
            if moved <= 0.0 {
                break;
            }
            if let Some((fc, gc)) = eval(&cand) {
                if fc >= f + 1e-4 * moved {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let improvement = fc - f;
        theta = cand;
        f = fc;
        g = gc;
        step = if sy < 0.0 { (ss / -sy).clamp(1e-8, 1e3) } else { (step * 2.0).min(1e3) };
        if improvement <= 1e-10 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((f, theta))
}

impl GpModel {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        params: KernelParams,
        train_inputs: Vec<Vec<f64>>,
        train_targets: Vec<f64>,
        target_mean: f64,
        target_std: f64,
        input_lo: Vec<f64>,
        input_width: Vec<f64>,
        min_jitter: f64,
    ) -> Result<Self> {
        params.validate()?;
        let k = signal_matrix(&params, &train_inputs);
        let (chol, jitter) = factor_with_jitter(&k, params.noise_variance + min_jitter)?;
        let alpha = chol.solve(&centered(&train_targets, params.constant_mean));
        Ok(Self {
            params,
            train_inputs,
            target_mean,
            target_std,
            input_lo,
            input_width,
            chol: chol.unpack(),
            alpha,
            jitter: jitter + min_jitter,
        })
    }

    /// Rebuilds a model from stored hyperparameters without refitting.
    pub fn with_params(
        params: KernelParams,
        inputs: &[Vec<f64>],
        raw_targets: &[f64],
        input_bounds: &[(f64, f64)],
    ) -> Result<Self> {
        let n = inputs.len();
        check_dim(n, raw_targets.len())?;
        let mean = raw_targets.iter().sum::<f64>() / n as f64;
        let var = raw_targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let std = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
        let lo: Vec<f64> = input_bounds.iter().map(|b| b.0).collect();
        let w: Vec<f64> = input_bounds.iter().map(|b| b.1 - b.0).collect();
        let xs = inputs
            .iter()
            .map(|x| x.iter().zip(lo.iter().zip(&w)).map(|(v, (l, w))| (v - l) / w).collect())
            .collect();
        let ys = raw_targets.iter().map(|y| (y - mean) / std).collect();
        Self::from_parts(params, xs, ys, mean, std, lo, w, 0.0)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_lo.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Prior mean in original target units.
    pub fn prior_mean(&self) -> f64 {
        self.params.constant_mean * self.target_std + self.target_mean
    }

    /// Prior (signal) variance in original target units.
    pub fn prior_variance(&self) -> f64 {
        self.params.signal_variance * self.target_std * self.target_std
    }

    /// Noise variance in original target units.
    pub fn noise_variance(&self) -> f64 {
        self.params.noise_variance * self.target_std * self.target_std
    }

    /// Reconstruction error of the stored factor relative to the kernel
    /// matrix it factors.
    pub fn factorization_residual(&self) -> f64 {
        let mut k = signal_matrix(&self.params, &self.train_inputs);
        for i in 0..k.nrows() {
            k[(i, i)] += self.params.noise_variance + self.jitter;
        }
        let rec = &self.chol * self.chol.transpose();
        (&rec - &k).norm() / k.norm()
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_lo.iter().zip(&self.input_width))
            .map(|(v, (l, w))| (v - l) / w)
            .collect()
    }

    /// Joint posterior mean and covariance of the latent function at `points`
    /// (original units).
    pub fn joint(&self, points: &[&[f64]]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let q = points.len();
        let n = self.train_inputs.len();
        let xs: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                check_dim(self.input_dim(), p.len())?;
                Ok(self.normalize(p))
            })
            .collect::<Result<_>>()?;
        let mut ks = DMatrix::zeros(n, q);
        for j in 0..q {
            for i in 0..n {
                ks[(i, j)] = self.params.kernel(&self.train_inputs[i], &xs[j]);
            }
        }
        let v = self
            .chol
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Numerical { message: "singular Cholesky factor".into(), jitter_ladder: vec![] })?;
        let s2 = self.target_std * self.target_std;
        let mean: Vec<f64> = (0..q)
            .map(|j| (self.params.constant_mean + ks.column(j).dot(&self.alpha)) * self.target_std + self.target_mean)
            .collect();
        let vtv = v.transpose() * &v;
        let mut cov = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let prior = if i == j { self.params.signal_variance } else { self.params.kernel(&xs[i], &xs[j]) };
                let c = (prior - vtv[(i, j)]) * s2;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        Ok((mean, cov))
    }

    /// Precomputes the posterior features of fixed candidate rows so batch
    /// posteriors over them cost O(q² n) instead of a triangular solve.
    pub fn candidate_features(&self, rows: &[Vec<f64>]) -> Result<CandidateFeatures> {
        let n = self.train_inputs.len();
        let xs: Vec<Vec<f64>> = rows
            .iter()
            .map(|p| {
                check_dim(self.input_dim(), p.len())?;
                Ok(self.normalize(p))
            })
            .collect::<Result<_>>()?;
        let mut ks = DMatrix::zeros(n, xs.len());
        for (j, x) in xs.iter().enumerate() {
            for i in 0..n {
                ks[(i, j)] = self.params.kernel(&self.train_inputs[i], x);
            }
        }
        let mean = (0..xs.len())
            .map(|j| (self.params.constant_mean + ks.column(j).dot(&self.alpha)) * self.target_std + self.target_mean)
            .collect();
        let v = self
            .chol
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Numerical { message: "singular Cholesky factor".into(), jitter_ladder: vec![] })?;
        Ok(CandidateFeatures {
            rows: xs,
            mean,
            v,
            params: self.params.clone(),
            scale2: self.target_std * self.target_std,
        })
    }

    /// Pointwise posterior mean and variance.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, c) = self.joint(&[x])?;
        Ok((m[0], c[(0, 0)]))
    }
}

/// Cached posterior pieces for a fixed set of candidate rows.
#[derive(Debug, Clone)]
pub struct CandidateFeatures {
    rows: Vec<Vec<f64>>,
    mean: Vec<f64>,
    v: DMatrix<f64>,
    params: KernelParams,
    scale2: f64,
}

impl CandidateFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Joint posterior mean and covariance over the given candidate indices.
    pub fn joint(&self, indices: &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let q = indices.len();
        for &i in indices {
            if i >= self.rows.len() {
                return Err(Error::Index { index: i, len: self.rows.len() });
            }
        }
        let mean = indices.iter().map(|&i| self.mean[i]).collect();
        let mut cov = DMatrix::zeros(q, q);
        for a in 0..q {
            let ia = indices[a];
            for b in 0..=a {
                let ib = indices[b];
                let prior = if ia == ib {
                    self.params.signal_variance
                } else {
                    self.params.kernel(&self.rows[ia], &self.rows[ib])
                };
                let c = (prior - self.v.column(ia).dot(&self.v.column(ib))) * self.scale2;
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        Ok((mean, cov))
    }
}

/// Per-objective joint posterior over a batch of q points.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosterior {
    /// `means[j][i]`: objective j at batch point i.
    pub means: Vec<Vec<f64>>,
    /// `covariances[j]`: q×q covariance of objective j.
    pub covariances: Vec<DMatrix<f64>>,
}

impl BatchPosterior {
    pub fn q(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.means.len()
    }

    /// A zero-covariance posterior at the given per-point means (`[i][j]`).
    pub fn deterministic(point_means: &[Vec<f64>]) -> Self {
        let q = point_means.len();
        let m = point_means.first().map_or(0, Vec::len);
        Self {
            means: (0..m).map(|j| point_means.iter().map(|p| p[j]).collect()).collect(),
            covariances: vec![DMatrix::zeros(q, q); m],
        }
    }
}

/// Joint posterior of independent per-objective models at `batch`.
pub fn posterior(models: &[GpModel], batch: &[&[f64]]) -> Result<BatchPosterior> {
    if models.is_empty() {
        return Err(Error::Precondition("posterior needs at least one model".into()));
    }
    let mut means = Vec::with_capacity(models.len());
    let mut covariances = Vec::with_capacity(models.len());
    for model in models {
        let (m, c) = model.joint(batch)?;
        means.push(m);
        covariances.push(c);
    }
    Ok(BatchPosterior { means, covariances })
}

/// Standard-normal draws laid out `[sample][point][objective]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardNormals {
    pub n_samples: usize,
    pub q: usize,
    pub m: usize,
    data: Vec<f64>,
}

impl StandardNormals {
    pub fn generate(n_samples: usize, q: usize, m: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let data = (0..n_samples * q * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { n_samples, q, m, data }
    }

    pub fn from_vec(n_samples: usize, q: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(n_samples * q * m, data.len())?;
        Ok(Self { n_samples, q, m, data })
    }

    #[inline]
    pub fn get(&self, s: usize, i: usize, j: usize) -> f64 {
        self.data[(s * self.q + i) * self.m + j]
    }
}

/// Posterior samples laid out `[sample][point][objective]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub n_samples: usize,
    pub q: usize,
    pub m: usize,
    data: Vec<f64>,
}

impl Samples {
    /// Objective vector of batch point `i` in draw `s`.
    #[inline]
    pub fn point(&self, s: usize, i: usize) -> &[f64] {
        let start = (s * self.q + i) * self.m;
        &self.data[start..start + self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lower factor `L` with `L L^T = cov`.
///
/// Column-by-column Cholesky that zeroes non-positive pivots, so duplicated
/// points share their row and the factor of a leading sub-batch is the
/// leading block of the full factor. Falls back to a clamped
/// eigendecomposition when a pivot is clearly negative.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = cov.nrows();
    if cov.ncols() != q {
        return Err(Error::Dimension { expected: q, got: cov.ncols() });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { message: "non-finite posterior covariance".into(), jitter_ladder: vec![] });
    }
    let scale = (0..q).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-10 * scale;
    let mut l = DMatrix::zeros(q, q);
    let mut ok = true;
    for j in 0..q {
        let mut dj = cov[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)];
        }
        if dj < -tol - 1e-8 * scale {
            ok = false;
            break;
        }
        if dj <= tol {
            continue;
        }
        let ljj = dj.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..q {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    if ok {
        return Ok(l);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut f = eig.eigenvectors.clone();
    for (c, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for r in 0..q {
            f[(r, c)] *= s;
        }
    }
    Ok(f)
}

/// `mean + L z` per objective, using the supplied normals.
pub fn sample(post: &BatchPosterior, normals: &StandardNormals) -> Result<Samples> {
    let (q, m) = (post.q(), post.m());
    if normals.q < q || normals.m != m {
        return Err(Error::Dimension { expected: q * m, got: normals.q * normals.m });
    }
    let factors = post.covariances.iter().map(covariance_factor).collect::<Result<Vec<_>>>()?;
    let s_count = normals.n_samples;
    let mut data = vec![0.0; s_count * q * m];
    for s in 0..s_count {
        for j in 0..m {
            let l = &factors[j];
            for i in 0..q {
                let mut v = post.means[j][i];
                for k in 0..=i {
                    let lik = l[(i, k)];
                    if lik != 0.0 {
                        v += lik * normals.get(s, k, j);
                    }
                }
                data[(s * q + i) * m + j] = v;
            }
        }
    }
    // The eigen fallback yields a full (not lower-triangular) factor.
    for (j, l) in factors.iter().enumerate() {
        let lower = (0..q).all(|i| (i + 1..q).all(|k| l[(i, k)] == 0.0));
        if !lower {
            for s in 0..s_count {
                for i in 0..q {
                    let mut v = post.means[j][i];
                    for k in 0..q {
                        v += l[(i, k)] * normals.get(s, k, j);
                    }
                    data[(s * q + i) * m + j] = v;
                }
            }
        }
    }
    Ok(Samples { n_samples: s_count, q, m, data })
}

/// Convenience wrapper drawing fresh normals from `seed`.
pub fn sample_seeded(post: &BatchPosterior, n_samples: usize, seed: u64) -> Result<Samples> {
    sample(post, &StandardNormals::generate(n_samples, post.q(), post.m(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::Evaluation;
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset_1d(xs: &[f64], ys: &[f64]) -> Dataset {
        let evals = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| Evaluation { input: vec![*x], objectives: vec![*y], candidate_index: None })
            .collect();
        Dataset::from_evaluations(1, 1, evals).unwrap()
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (KernelParams, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_for(seed, 9);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + rng.random::<f64>() * 0.1).collect();
        let p = KernelParams {
            lengthscales: (0..d).map(|_| rng.random_range(0.1..2.0)).collect(),
            signal_variance: rng.random_range(0.3..3.0),
            noise_variance: rng.random_range(1e-3..0.3),
            constant_mean: rng.random_range(-0.5..0.5),
        };
        (p, xs, ys)
    }

    #[test]
    fn lml_single_point_closed_form() {
        let p = KernelParams { lengthscales: vec![0.7], signal_variance: 1.3, noise_variance: 0.2, constant_mean: 0.0 };
        let y = 0.8;
        let v = 1.5;
        let expected = -0.5 * y * y / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
        let got = log_marginal_likelihood(&p, &[vec![0.3]], &[y]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn lml_noise_sweep_peaks_near_sample_variance() {
        let mut rng = rng_for(5, 0);
        let n = 400;
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7).collect();
        let sample_var = ys.iter().map(|y| y * y).sum::<f64>() / n as f64;
        // Tiny lengthscale and signal: the noise term carries everything.
        let lml = |noise: f64| {
            let p = KernelParams { lengthscales: vec![1e-3], signal_variance: 1e-9, noise_variance: noise, constant_mean: 0.0 };
            log_marginal_likelihood(&p, &xs, &ys).unwrap()
        };
        let mut noise = sample_var / 64.0;
        let mut prev = lml(noise);
        while noise * 2.0 <= sample_var {
            noise *= 2.0;
            let cur = lml(noise);
            assert!(cur > prev, "LML must increase while noise < sample variance");
            prev = cur;
        }
        assert!(lml(sample_var * 4.0) < lml(sample_var));
    }

    #[test]
    fn lml_gradient_matches_central_differences() {
        for seed in 0..10 {
            let (p, xs, ys) = random_problem(seed, 10, 3);
            let (_, g) = lml_gradient(&p, &xs, &ys).unwrap();
            let theta = to_theta(&p);
            let h = 1e-5;
            let fd: Vec<f64> = (0..theta.len())
                .map(|k| {
                    let mut a = theta.clone();
                    let mut b = theta.clone();
                    a[k] += h;
                    b[k] -= h;
                    let fa = log_marginal_likelihood(&from_theta(&a, 3), &xs, &ys).unwrap();
                    let fb = log_marginal_likelihood(&from_theta(&b, 3), &xs, &ys).unwrap();
                    (fa - fb) / (2.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(1e-8f64, |a, v| a.max(v.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err / scale < 1e-4, "seed {seed}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn fit_interpolates_two_points() {
        let ds = dataset_1d(&[0.0, 1.0], &[0.0, 1.0]);
        let cfg = FitConfig { noise: NoiseMode::Fixed(1e-6), ..Default::default() };
        let model = fit(&ds, 0, &cfg).unwrap();
        let (m, _) = model.predict(&[0.0]).unwrap();
        assert!(m.abs() < 1e-3, "mean at 0 was {m}");
    }

    #[test]
    fn fit_constant_targets() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let ds = dataset_1d(&xs, &[5.0; 8]);
        let model = fit(&ds, 0, &FitConfig::default()).unwrap();
        assert!((model.prior_mean() - 5.0).abs() < 1e-3);
        for x in [0.0, 0.33, 0.9, 3.0] {
            assert!((model.predict(&[x]).unwrap().0 - 5.0).abs() < 1e-3);
        }
    }

    #[test]
    fn fit_requires_two_points() {
        let ds = dataset_1d(&[0.0], &[1.0]);
        assert!(matches!(fit(&ds, 0, &FitConfig::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn fitted_model_reproduces_training_targets() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin() + x).collect();
        let ds = dataset_1d(&xs, &ys);
        let model = fit(&ds, 0, &FitConfig::default()).unwrap();
        assert!(model.factorization_residual() < 1e-8);
        let tol = 3.0 * model.noise_variance().sqrt();
        for (x, y) in xs.iter().zip(&ys) {
            let (m, _) = model.predict(&[*x]).unwrap();
            assert!((m - y).abs() <= tol.max(1e-9), "x={x}: {m} vs {y} (tol {tol})");
        }
    }

    #[test]
    fn posterior_limits() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let ds = dataset_1d(&xs, &ys);
        let cfg = FitConfig { noise: NoiseMode::Fixed(1e-8), ..Default::default() };
        let model = fit(&ds, 0, &cfg).unwrap();
        let (m, v) = model.predict(&[0.4]).unwrap();
        assert!((m - 0.16).abs() < 1e-3);
        assert!(v <= 1e-4 * model.prior_variance());
        let far = 1.0 + 10.0 * model.params().lengthscales[0] + 1.0;
        let (m, v) = model.predict(&[far]).unwrap();
        assert!((v - model.prior_variance()).abs() <= 0.01 * model.prior_variance());
        assert!((m - model.prior_mean()).abs() <= 0.01 * model.prior_mean().abs().max(1e-12) + 1e-9);

        let post = posterior(std::slice::from_ref(&model), &[&[0.55], &[0.55]]).unwrap();
        let c = &post.covariances[0];
        assert!((c[(0, 0)] - c[(0, 1)]).abs() < 1e-8 && (c[(1, 1)] - c[(1, 0)]).abs() < 1e-8);
        let (_, v1) = model.predict(&[0.55]).unwrap();
        assert_eq!(c[(0, 0)], v1);
    }

    #[test]
    fn scaling_targets_scales_posterior() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (4.0 * x).cos()).collect();
        let ys10: Vec<f64> = ys.iter().map(|y| 10.0 * y).collect();
        let a = fit(&dataset_1d(&xs, &ys), 0, &FitConfig::default()).unwrap();
        let b = fit(&dataset_1d(&xs, &ys10), 0, &FitConfig::default()).unwrap();
        for x in [0.05, 0.5, 0.77] {
            let (ma, va) = a.predict(&[x]).unwrap();
            let (mb, vb) = b.predict(&[x]).unwrap();
            assert!((mb - 10.0 * ma).abs() <= 1e-6 * (10.0 * ma).abs().max(1e-6));
            assert!((vb - 100.0 * va).abs() <= 1e-6 * 100.0 * a.prior_variance());
        }
    }

    #[test]
    fn zero_covariance_samples_equal_mean() {
        let post = BatchPosterior::deterministic(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        let s = sample_seeded(&post, 16, 3).unwrap();
        for k in 0..16 {
            assert_eq!(s.point(k, 0), &[1.0, 2.0]);
            assert_eq!(s.point(k, 1), &[3.0, -1.0]);
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let post = BatchPosterior { means: vec![vec![0.5, -1.0]], covariances: vec![cov] };
        let n = 100_000;
        let s = sample_seeded(&post, n, 11).unwrap();
        for (i, var) in [(0usize, 1.0f64), (1, 2.0)] {
            let mean: f64 = (0..n).map(|k| s.point(k, i)[0]).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - post.means[0][i]).abs() < 4.0 * se);
        }
        assert_eq!(s, sample_seeded(&post, n, 11).unwrap());
    }

    #[test]
    fn factor_handles_duplicates_and_prefixes() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 2.0, 0.5, 1.0, 0.5, 2.0, 0.5, 2.0]);
        let l = covariance_factor(&cov).unwrap();
        assert!(((&l * l.transpose()) - &cov).norm() < 1e-12);
        for k in 0..3 {
            assert!((l[(2, k)] - l[(0, k)]).abs() < 1e-12);
        }
        let sub = covariance_factor(&cov.view((0, 0), (2, 2)).into_owned()).unwrap();
        assert_eq!(sub, l.view((0, 0), (2, 2)).into_owned());
    }

    #[test]
    fn factor_falls_back_on_indefinite_input() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let f = covariance_factor(&cov).unwrap();
        // Clamped PSD approximation: eigenvalues 3 and -1 -> 3 and 0.
        let rec = &f * f.transpose();
        assert!((rec[(0, 0)] - 1.5).abs() < 1e-12 && (rec[(0, 1)] - 1.5).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn posterior_covariance_is_psd(
            seed in 0u64..500,
            batch in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..7),
            repeat_first in any::<bool>(),
        ) {
            let mut rng = rng_for(seed, 3);
            let evals = (0..8)
                .map(|_| {
                    let x = vec![rng.random::<f64>(), rng.random::<f64>()];
                    let y = (4.0 * x[0]).sin() + x[1] * x[1];
                    Evaluation { input: x, objectives: vec![y], candidate_index: None }
                })
                .collect();
            let ds = Dataset::from_evaluations(2, 1, evals).unwrap();
            let model = fit(&ds, 0, &FitConfig { restarts: 2, max_iters: 60, seed, ..Default::default() }).unwrap();
            let mut rows: Vec<Vec<f64>> = batch.iter().map(|&(a, b)| vec![a, b]).collect();
            if repeat_first {
                rows.push(rows[0].clone());
            }
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let post = posterior(std::slice::from_ref(&model), &refs).unwrap();
            let c = &post.covariances[0];
            let eig = c.clone().symmetric_eigen();
            let floor = -1e-8 * c.trace().abs().max(f64::MIN_POSITIVE);
            prop_assert!(eig.eigenvalues.iter().all(|&e| e >= floor), "{:?}", eig.eigenvalues);
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12 * c.abs().max().max(1.0));
        }
    }
}
