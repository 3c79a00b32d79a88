//! Synthetic test problems and candidate-set generation over their boxes.

use std::f64::consts::FRAC_PI_2;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pareto::{Direction, Orientation};
use crate::seeding::rng_for;

/// Latent-Aware default box. Keeps every denominator away from zero.
pub const LATENT_AWARE_DEFAULT_BOUNDS: (f64, f64) = (0.1, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Zdt1,
    Dtlz2,
    Kursawe,
    LatentAware,
}

impl BenchmarkKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "zdt1" => Ok(Self::Zdt1),
            "dtlz2" => Ok(Self::Dtlz2),
            "kursawe" => Ok(Self::Kursawe),
            "latent_aware" | "latentaware" => Ok(Self::LatentAware),
            other => Err(Error::Config(format!("unknown benchmark '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Zdt1 => "zdt1",
            Self::Dtlz2 => "dtlz2",
            Self::Kursawe => "kursawe",
            Self::LatentAware => "latent_aware",
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            Self::Zdt1 => 30,
            Self::Dtlz2 => 7,
            Self::Kursawe => 3,
            Self::LatentAware => 4,
        }
    }
}

/// A box-bounded multi-objective problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub name: String,
    pub kind: BenchmarkKind,
    pub d: usize,
    pub m: usize,
    pub bounds: Vec<(f64, f64)>,
    pub orientation: Orientation,
}

impl ProblemDef {
    pub fn zdt1(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config("ZDT1 needs at least 2 inputs".into()));
        }
        Ok(Self::build(BenchmarkKind::Zdt1, d, 2, vec![(0.0, 1.0); d], Direction::Minimize))
    }

    pub fn dtlz2(d: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::Config("DTLZ2 needs at least 3 inputs".into()));
        }
        Ok(Self::build(BenchmarkKind::Dtlz2, d, 3, vec![(0.0, 1.0); d], Direction::Minimize))
    }

    pub fn kursawe() -> Self {
        Self::build(BenchmarkKind::Kursawe, 3, 2, vec![(-5.0, 5.0); 3], Direction::Minimize)
    }

    pub fn latent_aware() -> Self {
        let (lo, hi) = LATENT_AWARE_DEFAULT_BOUNDS;
        Self::build(BenchmarkKind::LatentAware, 4, 2, vec![(lo, hi); 4], Direction::Maximize)
    }

    /// The default-sized instance of a benchmark.
    pub fn standard(kind: BenchmarkKind) -> Self {
        match kind {
            BenchmarkKind::Zdt1 => Self::zdt1(30).unwrap(),
            BenchmarkKind::Dtlz2 => Self::dtlz2(7).unwrap(),
            BenchmarkKind::Kursawe => Self::kursawe(),
            BenchmarkKind::LatentAware => Self::latent_aware(),
        }
    }

    fn build(kind: BenchmarkKind, d: usize, m: usize, bounds: Vec<(f64, f64)>, dir: Direction) -> Self {
        Self {
            name: kind.name().to_string(),
            kind,
            d,
            m,
            bounds,
            orientation: Orientation::all(dir, m),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_dim(self.d, bounds.len())?;
        self.bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Result<Self> {
        check_dim(self.m, orientation.len())?;
        self.orientation = orientation;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.d, self.bounds.len())?;
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("bound {i} must satisfy low < high, got ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, x: &[f64]) -> bool {
        x.len() == self.d && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.d, x.len())?;
        if let Some(i) = x
            .iter()
            .zip(&self.bounds)
            .position(|(&v, &(lo, hi))| !(v >= lo && v <= hi))
        {
            return Err(Error::Domain(format!(
                "{}: coordinate {i} = {} outside [{}, {}]",
                self.name, x[i], self.bounds[i].0, self.bounds[i].1
            )));
        }
        Ok(())
    }

    /// Objective values in the problem's native orientation.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        match self.kind {
            BenchmarkKind::Zdt1 => Ok(zdt1(x).to_vec()),
            BenchmarkKind::Dtlz2 => Ok(dtlz2(x).to_vec()),
            BenchmarkKind::Kursawe => Ok(kursawe(x).to_vec()),
            BenchmarkKind::LatentAware => latent_aware(x).map(|v| v.to_vec()),
        }
    }

    /// Objective values in canonical (maximize) orientation.
    pub fn evaluate_canonical(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.orientation.to_canonical(&self.evaluate(x)?))
    }
}

fn zdt1(x: &[f64]) -> [f64; 2] {
    let n = x.len() as f64;
    let f1 = x[0];
    let g = 1.0 + 9.0 / (n - 1.0) * x[1..].iter().sum::<f64>();
    [f1, g * (1.0 - (f1 / g).sqrt())]
}

fn dtlz2(x: &[f64]) -> [f64; 3] {
    let g: f64 = x[2..].iter().map(|v| (v - 0.5).powi(2)).sum();
    let (s1, c1) = (FRAC_PI_2 * x[0]).sin_cos();
    let (s2, c2) = (FRAC_PI_2 * x[1]).sin_cos();
    let r = 1.0 + g;
    [r * c1 * c2, r * c1 * s2, r * s1]
}

fn kursawe(x: &[f64]) -> [f64; 2] {
    let f1 = -10.0 * (-0.2 * (x[0] * x[0] + x[1] * x[1]).sqrt()).exp()
        - 10.0 * (-0.2 * (x[1] * x[1] + x[2] * x[2]).sqrt()).exp();
    let f2 = x.iter().map(|v| v.abs().powf(0.8) + 5.0 * (v * v * v).sin()).sum();
    [f1, f2]
}

fn latent_aware(x: &[f64]) -> Result<[f64; 2]> {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    if x3 == 0.0 {
        return Err(Error::Domain("latent_aware: x3 = 0 divides by zero".into()));
    }
    if x3 == -1.0 {
        return Err(Error::Domain("latent_aware: x3 = -1 divides by zero".into()));
    }
    let f1 = x1 * x1 + (-x2 / x3).exp();
    let f2 = x1 + x3;
    let f3 = x2 / (1.0 + x3);
    if f1 == 0.0 || f3 == 0.0 {
        return Err(Error::Domain("latent_aware: intermediate f1 or f3 is zero".into()));
    }
    let f4 = (x4 + 1.0).ln() * x1;
    let f5 = x2 * x4.sin() + x1.exp();
    let f6 = x3.sin() + x4.cos();
    let y = (f1 * f2 + f2 / f3 + f5 * f4 + f6) / 10.0;
    let y_prime = f3 * f2 * f2 + f4 / f1 + f5 * f6;
    Ok([y, y_prime])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    LatinHypercube,
    UniformRandom,
    Grid,
}

/// The finite design pool. Rows are in-bounds and pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    d: usize,
    bounds: Vec<(f64, f64)>,
    points: Vec<Vec<f64>>,
    pub seed: u64,
}

impl CandidateSet {
    pub fn new(bounds: Vec<(f64, f64)>, points: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let d = bounds.len();
        if points.is_empty() {
            return Err(Error::Config("candidate set must contain at least one row".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, p) in points.iter().enumerate() {
            check_dim(d, p.len())?;
            if !p.iter().zip(&bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi) {
                return Err(Error::Domain(format!("candidate row {i} lies outside the bounds")));
            }
            let key: Vec<u64> = p.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect();
            if !seen.insert(key) {
                return Err(Error::Duplicate(format!("candidate row {i} repeats an earlier row")));
            }
        }
        Ok(Self { d, bounds, points, seed })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        self.points
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::Index { index: i, len: self.points.len() })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Coordinates mapped to the unit box.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(&v, &(lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    /// The sub-pool made of `indices`, keeping this set's bounds and seed.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices.iter().map(|&i| self.row(i).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
        Ok(Self { d: self.d, bounds: self.bounds.clone(), points: pts, seed: self.seed })
    }

    /// Writes `x1,...,xd` CSV with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wr.write_record((1..=self.d).map(|i| format!("x{i}")))?;
        for p in &self.points {
            wr.write_record(p.iter().map(|v| format!("{v}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, bounds: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let d = rd.headers()?.len();
        check_dim(bounds.len(), d)?;
        let mut pts = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: '{s}': {e}", line + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            pts.push(row);
        }
        Self::new(bounds, pts, seed)
    }
}

/// Draws `n` distinct in-bounds candidates, deterministically in `seed`.
pub fn generate_candidates(problem: &ProblemDef, n: usize, scheme: SamplingScheme, seed: u64) -> Result<CandidateSet> {
    if n == 0 {
        return Err(Error::Config("candidate count must be at least 1".into()));
    }
    problem.validate()?;
    let d = problem.d;
    let unit = match scheme {
        SamplingScheme::LatinHypercube => latin_hypercube(n, d, seed),
        SamplingScheme::UniformRandom => uniform_unique(n, d, seed),
        SamplingScheme::Grid => grid(n, d)?,
    };
    let points = unit
        .into_iter()
        .map(|u| {
            u.iter()
                .zip(&problem.bounds)
                .map(|(&t, &(lo, hi))| (lo + t * (hi - lo)).clamp(lo, hi))
                .collect()
        })
        .collect();
    CandidateSet::new(problem.bounds.clone(), points, seed)
}

fn latin_hypercube(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0);
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[j] = (perm[i] as f64 + u) / n as f64;
        }
    }
    pts
}

fn uniform_unique(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0);
    let mut seen = std::collections::HashSet::new();
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        if seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()) {
            pts.push(p);
        }
    }
    pts
}

fn grid(n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let k = (n as f64).powf(1.0 / d as f64).round().max(1.0) as usize;
    let total = k.checked_pow(d as u32);
    if total != Some(n) {
        let below = (k.saturating_sub(1)).max(1).pow(d as u32);
        let at = k.pow(d as u32);
        let above = (k + 1).pow(d as u32);
        let mut options = vec![below, at, above];
        options.sort_unstable();
        options.dedup();
        return Err(Error::Config(format!(
            "grid sampling needs n = k^{d}; {n} is not a perfect power, nearest grid sizes are {options:?}"
        )));
    }
    let mut pts = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for c in p.iter_mut() {
            let level = rem % k;
            rem /= k;
            *c = if k == 1 { 0.5 } else { level as f64 / (k - 1) as f64 };
        }
        pts.push(p);
    }
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zdt1_examples() {
        let p = ProblemDef::zdt1(30).unwrap();
        assert_eq!(p.evaluate(&[0.0; 30]).unwrap(), vec![0.0, 1.0]);
        let mut x = vec![0.0; 30];
        x[0] = 1.0;
        assert_eq!(p.evaluate(&x).unwrap(), vec![1.0, 0.0]);
        let y = p.evaluate(&[1.0; 30]).unwrap();
        assert!(close(y[0], 1.0, 1e-10) && close(y[1], 6.83772233983162, 1e-6));
        assert!(matches!(p.evaluate(&[1.5; 30]), Err(Error::Domain(_))));
        assert!(matches!(p.evaluate(&[0.5; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dtlz2_examples() {
        let p = ProblemDef::dtlz2(7).unwrap();
        let y = p.evaluate(&[0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(close(y[0], 1.0, 1e-10) && close(y[1], 0.0, 1e-10) && close(y[2], 0.0, 1e-10));
        let y = p.evaluate(&[1.0, 0.37, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(close(y[0], 0.0, 1e-10) && close(y[1], 0.0, 1e-10) && close(y[2], 1.0, 1e-10));
        let y = p.evaluate(&[0.5; 7]).unwrap();
        assert!(close(y[0], 0.5, 1e-6) && close(y[1], 0.5, 1e-6) && close(y[2], 0.7071067811865475, 1e-6));
    }

    #[test]
    fn kursawe_examples() {
        let p = ProblemDef::kursawe();
        assert_eq!(p.evaluate(&[0.0; 3]).unwrap(), vec![-20.0, 0.0]);
        for x in [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] {
            let y = p.evaluate(&x).unwrap();
            assert!(close(y[0], -18.18730753077982, 1e-6));
            assert!(close(y[1], 5.207354924039483, 1e-6));
        }
    }

    #[test]
    fn latent_aware_examples() {
        let p = ProblemDef::latent_aware();
        let y = p.evaluate(&[1.0; 4]).unwrap();
        assert!(close(y[0], 1.0584964799025236, 1e-6));
        assert!(close(y[1], 7.425502551382689, 1e-6));
        let y = p.evaluate(&[1.0, 0.1, 1.0, 0.1]).unwrap();
        assert!(close(y[0], 4.590618143007622, 1e-6) && close(y[1], 5.260427048529315, 1e-6));
        // x2 = 0 makes f3 vanish; rejected even if the box is widened.
        let wide = ProblemDef::latent_aware().with_bounds(vec![(-1.0, 2.0); 4]).unwrap();
        assert!(matches!(wide.evaluate(&[1.0, 0.0, 1.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(wide.evaluate(&[1.0, 1.0, 0.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(p.evaluate(&[1.0, 0.0, 1.0, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn orientation_defaults() {
        assert_eq!(ProblemDef::kursawe().evaluate_canonical(&[0.0; 3]).unwrap(), vec![20.0, -0.0]);
        assert_eq!(ProblemDef::latent_aware().orientation.directions, vec![Direction::Maximize; 2]);
    }

    #[test]
    fn candidates_are_deterministic_and_in_bounds() {
        let zdt = ProblemDef::zdt1(30).unwrap();
        let a = generate_candidates(&zdt, 1000, SamplingScheme::LatinHypercube, 7).unwrap();
        let b = generate_candidates(&zdt, 1000, SamplingScheme::LatinHypercube, 7).unwrap();
        assert_eq!(a, b);
        let k = generate_candidates(&ProblemDef::kursawe(), 4, SamplingScheme::UniformRandom, 0).unwrap();
        assert_eq!(k.len(), 4);
        assert!(k.rows().iter().all(|r| r.iter().all(|v| (-5.0..=5.0).contains(v))));
    }

    #[test]
    fn latin_hypercube_stratification() {
        let p = ProblemDef::kursawe();
        let n = 1000;
        let c = generate_candidates(&p, n, SamplingScheme::LatinHypercube, 11).unwrap();
        for j in 0..3 {
            let mut counts = vec![0usize; n];
            for r in c.rows() {
                let u = (r[j] + 5.0) / 10.0;
                counts[((u * n as f64).floor() as usize).min(n - 1)] += 1;
            }
            assert!(counts.iter().all(|&k| k == 1), "dimension {j} is not stratified");
        }
    }

    #[test]
    fn grid_sizes() {
        let p = ProblemDef::kursawe();
        let g = generate_candidates(&p, 27, SamplingScheme::Grid, 0).unwrap();
        assert_eq!(g.len(), 27);
        let err = generate_candidates(&p, 30, SamplingScheme::Grid, 0).unwrap_err();
        assert!(err.to_string().contains("27"), "{err}");
        assert!(generate_candidates(&p, 0, SamplingScheme::Grid, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let p = ProblemDef::dtlz2(7).unwrap();
        let c = generate_candidates(&p, 50, SamplingScheme::UniformRandom, 3).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2,x3,x4,x5,x6,x7\n"));
        let back = CandidateSet::read_csv(buf.as_slice(), p.bounds.clone(), 3).unwrap();
        assert_eq!(back, c);
    }
}
