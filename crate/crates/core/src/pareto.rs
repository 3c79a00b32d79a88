//! Value types shared by every module: objective orientation, dominance,
//! Pareto fronts, reference points and the observed dataset.
//!
//! All objective vectors inside the library are in the canonical
//! maximize-all orientation. Problems with minimized objectives are negated
//! on the way in ([`Orientation::to_canonical`]) and restored on the way out.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// Per-objective optimization directions of a problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub directions: Vec<Direction>,
}

impl Orientation {
    pub fn new(directions: Vec<Direction>) -> Self {
        Self { directions }
    }

    pub fn all(direction: Direction, m: usize) -> Self {
        Self::new(vec![direction; m])
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Native problem values to canonical (maximize) values.
    pub fn to_canonical(&self, native: &[f64]) -> Vec<f64> {
        self.flip(native)
    }

    /// Canonical values back to the problem's native orientation.
    pub fn to_native(&self, canonical: &[f64]) -> Vec<f64> {
        self.flip(canonical)
    }

    fn flip(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.directions)
            .map(|(&x, d)| match d {
                Direction::Maximize => x,
                Direction::Minimize => -x,
            })
            .collect()
    }
}

/// `a` dominates `b` (maximize orientation): `a >= b` everywhere and `a > b`
/// somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    check_dim(a.len(), b.len())?;
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

#[inline]
pub(crate) fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Value(format!(
            "non-finite objective value {} at position {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

/// A set of mutually nondominated objective vectors, kept in lexicographic
/// order with duplicates collapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    m: usize,
    points: Vec<Vec<f64>>,
}

impl ParetoFront {
    pub fn empty(m: usize) -> Self {
        Self { m, points: Vec::new() }
    }

    /// Builds the front of an arbitrary point collection.
    pub fn from_points(m: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut front = Self::empty(m);
        for p in points {
            front.insert(p.clone())?;
        }
        Ok(front)
    }

    pub fn n_objectives(&self) -> usize {
        self.m
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Inserts `candidate` in place. Returns whether the front changed.
    pub fn insert(&mut self, candidate: Vec<f64>) -> Result<bool> {
        check_dim(self.m, candidate.len())?;
        check_finite(&candidate)?;
        if self.points.iter().any(|p| weakly_dominates(p, &candidate)) {
            return Ok(false);
        }
        self.points.retain(|p| !dominates_unchecked(&candidate, p));
        let pos = self
            .points
            .binary_search_by(|p| lex_cmp(p, &candidate))
            .unwrap_or_else(|e| e);
        self.points.insert(pos, candidate);
        Ok(true)
    }

    /// Whether some front member weakly dominates `y`.
    pub fn covers(&self, y: &[f64]) -> bool {
        self.points.iter().any(|p| weakly_dominates(p, y))
    }
}

/// Functional form of [`ParetoFront::insert`].
pub fn update_front(front: &ParetoFront, candidate: &[f64]) -> Result<ParetoFront> {
    let mut next = front.clone();
    next.insert(candidate.to_vec())?;
    Ok(next)
}

/// Nondominated subset of the dataset's objective vectors.
pub fn extract_front(dataset: &Dataset) -> ParetoFront {
    let mut pts: Vec<&Vec<f64>> = dataset.evaluations.iter().map(|e| &e.objectives).collect();
    // Sorting descending lexicographically means no later point can dominate
    // an earlier one, so a single pass against the kept set suffices.
    pts.sort_by(|a, b| lex_cmp(b, a));
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in pts {
        if !kept.iter().any(|k| weakly_dominates(k, p)) {
            kept.push(p.clone());
        }
    }
    kept.reverse();
    ParetoFront { m: dataset.m, points: kept }
}

/// Anchor of the hypervolume, in canonical orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint(pub Vec<f64>);

impl ReferencePoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One observed input/objective pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub input: Vec<f64>,
    /// Canonical (maximize) orientation.
    pub objectives: Vec<f64>,
    pub candidate_index: Option<usize>,
}

/// Ordered collection of evaluations sharing input and objective dimensions.
/// Inputs are unique by exact bit pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    pub d: usize,
    pub m: usize,
    evaluations: Vec<Evaluation>,
    seen: HashSet<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    d: usize,
    m: usize,
    evaluations: Vec<Evaluation>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::from_evaluations(r.d, r.m, r.evaluations)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr { d: d.d, m: d.m, evaluations: d.evaluations }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.m == other.m && self.evaluations == other.evaluations
    }
}

fn input_key(x: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same coordinate.
    x.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

impl Dataset {
    pub fn new(d: usize, m: usize) -> Self {
        Self { d, m, evaluations: Vec::new(), seen: HashSet::new() }
    }

    pub fn from_evaluations(d: usize, m: usize, evals: Vec<Evaluation>) -> Result<Self> {
        let mut ds = Self::new(d, m);
        for e in evals {
            ds.push(e)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, eval: Evaluation) -> Result<()> {
        check_dim(self.d, eval.input.len())?;
        check_dim(self.m, eval.objectives.len())?;
        check_finite(&eval.objectives)?;
        let key = input_key(&eval.input);
        if self.seen.contains(&key) {
            return Err(Error::Duplicate(format!("input {:?} already evaluated", eval.input)));
        }
        self.seen.insert(key);
        self.evaluations.push(eval);
        Ok(())
    }

    pub fn contains_input(&self, x: &[f64]) -> bool {
        self.seen.contains(&input_key(x))
    }

    pub fn evaluations(&self) -> &[Evaluation] {
        &self.evaluations
    }

    pub fn len(&self) -> usize {
        self.evaluations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evaluations.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.evaluations.iter().map(|e| e.input.clone()).collect()
    }

    pub fn objective_column(&self, j: usize) -> Vec<f64> {
        self.evaluations.iter().map(|e| e.objectives[j]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_front(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let dominated = points.iter().enumerate().any(|(j, q)| j != i && dominates_unchecked(q, p));
            if !dominated && !out.contains(p) {
                out.push(p.clone());
            }
        }
        out.sort_by(|a, b| lex_cmp(a, b));
        out
    }

    fn dataset_of(points: &[Vec<f64>]) -> Dataset {
        let m = points.first().map_or(1, |p| p.len());
        let evals = points
            .iter()
            .enumerate()
            .map(|(i, p)| Evaluation { input: vec![i as f64], objectives: p.clone(), candidate_index: None })
            .collect();
        Dataset::from_evaluations(1, m, evals).unwrap()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[2.0, 2.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[2.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!(matches!(dominates(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn update_front_examples() {
        let front = ParetoFront::from_points(2, &[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let f = update_front(&front, &[3.0, 3.0]).unwrap();
        assert_eq!(f.points(), &[vec![3.0, 3.0]]);
        let f = update_front(&front, &[0.0, 0.0]).unwrap();
        assert_eq!(f, front);
        let f = update_front(&ParetoFront::empty(2), &[1.0, 1.0]).unwrap();
        assert_eq!(f.points(), &[vec![1.0, 1.0]]);
        assert!(matches!(update_front(&front, &[f64::NAN, 1.0]), Err(Error::Value(_))));
    }

    #[test]
    fn extract_front_examples() {
        let ds = dataset_of(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(extract_front(&ds).points(), &[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let ds = dataset_of(&[vec![5.0]]);
        assert_eq!(extract_front(&ds).points(), &[vec![5.0]]);
        let ds = dataset_of(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(extract_front(&ds).points(), &[vec![1.0, 1.0]]);
        assert!(extract_front(&Dataset::new(1, 2)).is_empty());
    }

    #[test]
    fn dataset_rejects_duplicates_and_nonfinite() {
        let mut ds = Dataset::new(2, 1);
        let e = Evaluation { input: vec![0.5, 0.5], objectives: vec![1.0], candidate_index: None };
        ds.push(e.clone()).unwrap();
        assert!(matches!(ds.push(e), Err(Error::Duplicate(_))));
        let bad = Evaluation { input: vec![0.1, 0.5], objectives: vec![f64::INFINITY], candidate_index: None };
        assert!(ds.push(bad).is_err());
    }

    #[test]
    fn orientation_round_trip() {
        let o = Orientation::new(vec![Direction::Minimize, Direction::Maximize]);
        let c = o.to_canonical(&[1.5, -2.0]);
        assert_eq!(c, vec![-1.5, -2.0]);
        assert_eq!(o.to_native(&c), vec![1.5, -2.0]);
    }

    fn small_grid_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
        // Coarse values so ties and duplicates actually occur.
        proptest::collection::vec((0..6i32).prop_map(|v| v as f64 * 0.5), m)
    }

    proptest! {
        #[test]
        fn dominance_irreflexive_and_transitive(
            a in small_grid_vec(3), b in small_grid_vec(3), c in small_grid_vec(3)
        ) {
            prop_assert!(!dominates_unchecked(&a, &a));
            if dominates_unchecked(&a, &b) && dominates_unchecked(&b, &c) {
                prop_assert!(dominates_unchecked(&a, &c));
            }
        }

        #[test]
        fn extract_front_matches_brute_force(
            m in 1usize..=5,
            seed_pts in proptest::collection::vec(proptest::collection::vec(0..8i32, 5), 1..200)
        ) {
            let pts: Vec<Vec<f64>> = seed_pts.iter().map(|p| p[..m].iter().map(|&v| v as f64).collect()).collect();
            let front = extract_front(&dataset_of(&pts));
            prop_assert_eq!(front.points().to_vec(), brute_front(&pts));
            for a in front.points() {
                for b in front.points() {
                    prop_assert!(!dominates_unchecked(a, b));
                }
            }
        }

        #[test]
        fn incremental_front_is_order_independent(
            pts in proptest::collection::vec(small_grid_vec(3), 1..60),
            shuffle_seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            let mut order = pts.clone();
            order.shuffle(&mut crate::seeding::rng_for(shuffle_seed, 0));
            let mut f = ParetoFront::empty(3);
            for p in &order {
                f = update_front(&f, p).unwrap();
            }
            prop_assert_eq!(f, extract_front(&dataset_of(&pts)));
        }
    }
}
