//! Graph representation and the dense operators built on top of it.
//!
//! Adjacency matrices are dense `f64` arrays holding 0/1 entries. Meta-gradients
//! are dense over node pairs anyway, so a dense layout costs nothing extra at the
//! sizes this crate targets (a few thousand nodes).

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected edge set stored as canonical `(u, v)` pairs with `u < v`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct EdgeSet {
    edges: BTreeSet<(usize, usize)>,
}

pub fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts the pair in canonical order. Returns false if already present.
    /// Self-loops are rejected by [`EdgeSet::validate`], not here.
    pub fn insert(&mut self, u: usize, v: usize) -> bool {
        self.edges.insert(canonical(u, v))
    }

    pub fn remove(&mut self, u: usize, v: usize) -> bool {
        self.edges.remove(&canonical(u, v))
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&canonical(u, v))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// All edges of a symmetric 0/1 adjacency (upper triangle).
    pub fn from_adjacency(a: &Array2<f64>) -> Self {
        let n = a.nrows();
        let mut edges = BTreeSet::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if a[[u, v]] != 0.0 {
                    edges.insert((u, v));
                }
            }
        }
        Self { edges }
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        Self { edges: self.edges.union(&other.edges).copied().collect() }
    }

    pub fn intersection(&self, other: &EdgeSet) -> EdgeSet {
        Self { edges: self.edges.intersection(&other.edges).copied().collect() }
    }

    pub fn intersection_len(&self, other: &EdgeSet) -> usize {
        self.edges.intersection(&other.edges).count()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for &(u, v) in &self.edges {
            if u == v {
                return Err(Error::Consistency(format!("self-loop ({u},{v}) in edge set")));
            }
            if v >= n {
                return Err(Error::Consistency(format!("edge ({u},{v}) out of range for n={n}")));
            }
        }
        Ok(())
    }
}

impl From<Vec<(usize, usize)>> for EdgeSet {
    fn from(v: Vec<(usize, usize)>) -> Self {
        v.into_iter().collect()
    }
}

impl From<EdgeSet> for Vec<(usize, usize)> {
    fn from(s: EdgeSet) -> Self {
        s.edges.into_iter().collect()
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self { edges: iter.into_iter().map(|(u, v)| canonical(u, v)).collect() }
    }
}

/// The attacker's edit set. Ground truth for sanitation metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub inserted: EdgeSet,
    pub deleted: EdgeSet,
}

impl PoisonRecord {
    /// All attacker-flipped pairs, insertions and deletions together.
    pub fn flips(&self) -> EdgeSet {
        self.inserted.union(&self.deleted)
    }

    pub fn len(&self) -> usize {
        self.inserted.len() + self.deleted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Undoes the attack: clean = poisoned - inserted + deleted.
    pub fn revert(&self, poisoned: &Array2<f64>) -> Result<Array2<f64>> {
        apply_edits(poisoned, &self.inserted, &self.deleted)
    }
}

/// Train/validation/test node indices, each kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::Consistency("train and val splits must be nonempty".into()));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Consistency(format!("split index {i} out of range for n={n}")));
            }
            if seen[i] {
                return Err(Error::Consistency(format!("node {i} appears in more than one split")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Every node outside the training set.
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        let mut is_train = vec![false; n];
        for &i in &self.train {
            is_train[i] = true;
        }
        (0..n).filter(|&i| !is_train[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub adjacency: Array2<f64>,
    pub features: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub split: Split,
}

impl GraphBundle {
    pub fn new(
        adjacency: Array2<f64>,
        features: Option<Array2<f64>>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let bundle = Self { adjacency, features, labels, num_classes, split };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn edges(&self) -> EdgeSet {
        EdgeSet::from_adjacency(&self.adjacency)
    }

    pub fn num_edges(&self) -> usize {
        let total: f64 = self.adjacency.sum();
        (total / 2.0).round() as usize
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    /// Node features for the GNN: the attribute matrix, or the identity for
    /// attribute-free graphs.
    pub fn gnn_features(&self) -> Array2<f64> {
        match &self.features {
            Some(x) => x.clone(),
            None => Array2::eye(self.n()),
        }
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Consistency("bundle has no labels".into()))
    }

    /// Same bundle with a different adjacency.
    pub fn with_adjacency(&self, adjacency: Array2<f64>) -> Self {
        Self { adjacency, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        check_adjacency(&self.adjacency)?;
        if let Some(x) = &self.features {
            if x.nrows() != n {
                return Err(Error::Consistency(format!(
                    "features have {} rows, expected {n}",
                    x.nrows()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Consistency("features contain non-finite values".into()));
            }
        }
        if let Some(y) = &self.labels {
            if y.len() != n {
                return Err(Error::Consistency(format!("{} labels, expected {n}", y.len())));
            }
            if let Some(&bad) = y.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::Consistency(format!(
                    "label {bad} outside 0..{}",
                    self.num_classes
                )));
            }
        }
        self.split.validate(n)
    }
}

/// Checks the adjacency is square, symmetric, binary and has a zero diagonal.
pub fn check_adjacency(a: &Array2<f64>) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Consistency(format!("adjacency is {r}x{c}, not square")));
    }
    for i in 0..r {
        if a[[i, i]] != 0.0 {
            return Err(Error::Consistency(format!("self-loop at node {i}")));
        }
        for j in (i + 1)..r {
            let v = a[[i, j]];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Consistency(format!("adjacency entry ({i},{j}) = {v} not binary")));
            }
            if v != a[[j, i]] {
                return Err(Error::Consistency(format!("adjacency asymmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

pub fn adjacency_from_edges(n: usize, edges: &EdgeSet) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for (u, v) in edges.iter() {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    a
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`. Works for any real (possibly relaxed) `A`
/// whose row sums exceed -1.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        out[[i, i]] += 1.0;
    }
    let r: Vec<f64> = out.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v *= r[i] * r[j];
    }
    out
}

/// `D^{-1/2} r` with `1/sqrt(0)` taken as 0.
pub(crate) fn inv_sqrt_degrees(a: &Array2<f64>) -> Vec<f64> {
    a.sum_axis(Axis(1))
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect()
}

/// Normalized Laplacian `D^{-1/2} (D - A) D^{-1/2}`; isolated nodes get an
/// all-zero row and column.
pub fn laplacian(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let deg = a.sum_axis(Axis(1));
    let q = inv_sqrt_degrees(a);
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let dij = if i == j { deg[i] } else { 0.0 };
            l[[i, j]] = q[i] * (dij - a[[i, j]]) * q[j];
        }
    }
    l
}

/// `Tr(Xᵀ L X)`.
pub fn smoothness(x: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let lx = l.dot(x);
    (x * &lx).sum()
}

/// Deletes then inserts edges. Fails if a deletion targets a non-edge or an
/// insertion targets an existing edge.
pub fn apply_edits(
    a: &Array2<f64>,
    deletions: &EdgeSet,
    insertions: &EdgeSet,
) -> Result<Array2<f64>> {
    let n = a.nrows();
    deletions.validate(n)?;
    insertions.validate(n)?;
    let mut out = a.clone();
    for (u, v) in deletions.iter() {
        if out[[u, v]] == 0.0 {
            return Err(Error::EditConflict(format!("cannot delete non-edge ({u},{v})")));
        }
        out[[u, v]] = 0.0;
        out[[v, u]] = 0.0;
    }
    for (u, v) in insertions.iter() {
        if out[[u, v]] != 0.0 {
            return Err(Error::EditConflict(format!("cannot insert existing edge ({u},{v})")));
        }
        out[[u, v]] = 1.0;
        out[[v, u]] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::sbm::erdos_renyi;

    fn normalize_loop(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut deg = vec![1.0; n];
        for i in 0..n {
            for j in 0..n {
                deg[i] += a[[i, j]];
            }
        }
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let at = a[[i, j]] + if i == j { 1.0 } else { 0.0 };
                out[[i, j]] = at / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
        out
    }

    #[test]
    fn normalize_two_node_path() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let na = normalize_adjacency(&a);
        for v in na.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_isolated_is_identity() {
        let na = normalize_adjacency(&Array2::zeros((3, 3)));
        assert_eq!(na, Array2::<f64>::eye(3));
    }

    #[test]
    fn normalize_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let n = 2 + case % 9;
            let a = erdos_renyi(n, 0.4, &mut rng);
            let fast = normalize_adjacency(&a);
            let slow = normalize_loop(&a);
            for (x, y) in fast.iter().zip(slow.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(fast, fast.t());
        }
    }

    #[test]
    fn laplacian_single_edge() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(laplacian(&a), array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_of_empty_graph_is_zero() {
        assert_eq!(laplacian(&Array2::zeros((2, 2))), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn laplacian_spectrum_in_zero_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = erdos_renyi(12, 0.35, &mut rng);
            let l = laplacian(&a);
            let m = nalgebra::DMatrix::from_fn(12, 12, |i, j| l[[i, j]]);
            let eig = nalgebra::SymmetricEigen::new(m);
            for &e in eig.eigenvalues.iter() {
                assert!(e >= -1e-9 && e <= 2.0 + 1e-9, "eigenvalue {e}");
            }
        }
    }

    #[test]
    fn smoothness_examples() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let l = laplacian(&a);
        assert!(smoothness(&array![[1.0], [1.0]], &l).abs() < 1e-15);
        // unnormalized single-edge Laplacian
        let lu = array![[1.0, -1.0], [-1.0, 1.0]];
        assert_eq!(smoothness(&array![[1.0], [-1.0]], &lu), 4.0);
    }

    #[test]
    fn smoothness_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = erdos_renyi(10, 0.4, &mut rng);
        let l = laplacian(&a);
        let x = Array2::from_shape_fn((10, 3), |_| rng.random::<f64>() - 0.5);
        let mut slow = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = (0..3).map(|k| x[[i, k]] * x[[j, k]]).sum();
                slow += l[[i, j]] * dot;
            }
        }
        assert!((smoothness(&x, &l) - slow).abs() < 1e-10);
        assert!(slow >= -1e-9);
    }

    #[test]
    fn smoothness_relabeling_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let a = erdos_renyi(n, 0.4, &mut rng);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let perm: Vec<usize> = (0..n).rev().collect();
        let ap = Array2::from_shape_fn((n, n), |(i, j)| a[[perm[i], perm[j]]]);
        let xp = Array2::from_shape_fn((n, 2), |(i, k)| x[[perm[i], k]]);
        let s1 = smoothness(&x, &laplacian(&a));
        let s2 = smoothness(&xp, &laplacian(&ap));
        assert!((s1 - s2).abs() < 1e-10);
    }

    #[test]
    fn apply_edits_examples() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let del: EdgeSet = vec![(0, 1)].into();
        let out = apply_edits(&a, &del, &EdgeSet::new()).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((2, 2)));
        let back = apply_edits(&out, &EdgeSet::new(), &del).unwrap();
        assert_eq!(back, a);
        assert!(matches!(
            apply_edits(&out, &del, &EdgeSet::new()),
            Err(Error::EditConflict(_))
        ));
        assert!(matches!(
            apply_edits(&a, &EdgeSet::new(), &del),
            Err(Error::EditConflict(_))
        ));
    }

    #[test]
    fn edge_set_canonicalizes() {
        let mut s = EdgeSet::new();
        assert!(s.insert(3, 1));
        assert!(!s.insert(1, 3));
        assert!(s.contains(3, 1));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![(1, 3)]);
        let mut bad = EdgeSet::new();
        bad.insert(2, 2);
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn split_rejects_overlap() {
        let s = Split::new(vec![0, 1], vec![1], vec![]);
        assert!(s.validate(3).is_err());
        let s = Split::new(vec![0], vec![], vec![1]);
        assert!(s.validate(3).is_err());
        assert!(Split::new(vec![0], vec![1], vec![2]).validate(3).is_ok());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn random_edits_keep_simple_graph(seed in 0u64..1000, steps in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let mut a = erdos_renyi(n, 0.3, &mut rng);
            for _ in 0..steps {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n);
                if u == v { continue; }
                let e: EdgeSet = vec![(u, v)].into();
                let before = EdgeSet::from_adjacency(&a).len();
                a = if a[[u, v]] == 1.0 {
                    apply_edits(&a, &e, &EdgeSet::new()).unwrap()
                } else {
                    apply_edits(&a, &EdgeSet::new(), &e).unwrap()
                };
                let after = EdgeSet::from_adjacency(&a).len();
                prop_assert_eq!(before.abs_diff(after), 1);
                prop_assert!(check_adjacency(&a).is_ok());
            }
        }
    }
}
