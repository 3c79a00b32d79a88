//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use moboa_core::acquisition::{AcquisitionContext, GpEnsemble, QehviConfig};
use moboa_core::benchmarks::{generate_candidates, ProblemDef, SamplingScheme};
use moboa_core::gp::{self, FitConfig};
use moboa_core::pareto::{extract_front, Dataset, Evaluation, ReferencePoint};
use moboa_core::seeding::rng_for;
use rand::Rng;

/// `n` mutually nondominated points on the positive unit sphere.
pub fn sphere_front(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// A DTLZ2 (d = 7) acquisition context with GPs fitted on `n_train`
/// candidates and `n_candidates` rows in the pool.
pub fn dtlz2_context(n_candidates: usize, n_train: usize, q: usize, seed: u64) -> AcquisitionContext {
    let problem = ProblemDef::dtlz2(7).expect("valid dimension");
    let cands = generate_candidates(&problem, n_candidates, SamplingScheme::LatinHypercube, seed).expect("candidates");
    let evals = (0..n_train)
        .map(|i| {
            let x = cands.rows()[i].clone();
            let y = problem.evaluate_canonical(&x).expect("in bounds");
            Evaluation { input: x, objectives: y, candidate_index: Some(i) }
        })
        .collect();
    let ds = Dataset::from_evaluations(7, 3, evals).expect("distinct rows");
    let cfg = FitConfig { input_bounds: Some(problem.bounds.clone()), seed, ..Default::default() };
    let models = (0..3).map(|j| gp::fit(&ds, j, &cfg).expect("fit")).collect();
    let ensemble = GpEnsemble::new(models).expect("models").with_candidate_cache(&cands).expect("cache");
    let reference = ReferencePoint::new(vec![-2.0; 3]).expect("finite");
    let qcfg = QehviConfig::new(QehviConfig::DEFAULT_SAMPLES, q, reference, seed).expect("config");
    AcquisitionContext::new(Arc::new(ensemble), extract_front(&ds), qcfg, Arc::new(cands)).expect("context")
}
