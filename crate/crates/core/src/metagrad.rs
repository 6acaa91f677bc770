//! Outer sanitation loss and its gradient with respect to the adjacency.
//!
//! The loss is a weighted cross-entropy over a set of focus nodes plus an
//! attribute smoother `η·Tr(Xᵀ L X)`:
//!
//! ```text
//! L_S(A) = -Σ_i w_i ln S_i[y_i]  +  η Tr(Xᵀ L(A) X),   S = softmax(Â(A)² X W)
//! ```
//!
//! Gradients are taken with respect to a continuous relaxation of `A` where every
//! entry is an independent variable, then symmetrized as `(G + Gᵀ)/2`. For a
//! symmetric perturbation `A[u,v] = A[v,u] = a`, `dL/da = 2·G[u,v]`.

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::softmax_rows;
use crate::graph::{inv_sqrt_degrees, laplacian, normalize_adjacency, smoothness, EdgeSet};

/// How the inner training enters the meta-gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaMode {
    /// `W*` held constant.
    FirstOrder,
    /// Differentiate through `steps` plain gradient-descent steps started at `W*`.
    Unrolled { steps: usize, step_size: f64 },
}

impl Default for MetaMode {
    fn default() -> Self {
        MetaMode::FirstOrder
    }
}

impl MetaMode {
    pub fn unrolled(steps: usize) -> Self {
        MetaMode::Unrolled { steps, step_size: 0.1 }
    }

    pub fn label(&self) -> String {
        match self {
            MetaMode::FirstOrder => "first_order".into(),
            MetaMode::Unrolled { steps, .. } => format!("unrolled({steps})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterLossConfig {
    pub eta: f64,
    pub budget: usize,
    pub mode: MetaMode,
}

impl OuterLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig("eta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPair {
    pub lambda_val: f64,
    pub lambda_test: f64,
}

impl LambdaPair {
    pub fn validation_only() -> Self {
        Self { lambda_val: 1.0, lambda_test: 0.0 }
    }
}

/// `λ_val = 1 - t/B`, `λ_test = t/B`.
pub fn lambda_schedule(t: usize, budget: usize) -> Result<LambdaPair> {
    if budget == 0 || t > budget {
        return Err(Error::OutOfRange { what: "step index must satisfy 0 <= t <= B", value: t as f64 });
    }
    let lambda_test = t as f64 / budget as f64;
    Ok(LambdaPair { lambda_val: 1.0 - lambda_test, lambda_test })
}

/// One weighted cross-entropy term `-weight · ln S[node, class]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeTerm {
    pub node: usize,
    pub class: usize,
    pub weight: f64,
}

/// Cross-entropy terms of the focused outer loss: validation nodes with true
/// labels weighted by `λ_val`, test nodes with pseudo-labels weighted by
/// `λ_test`, both restricted to `normals`.
pub fn focus_terms(
    val: &[usize],
    test: &[usize],
    labels: &[usize],
    pseudo: &[usize],
    normals: &[bool],
    lambdas: LambdaPair,
) -> Result<Vec<CeTerm>> {
    let mut terms = Vec::new();
    for &i in val.iter().filter(|&&i| normals[i]) {
        terms.push(CeTerm { node: i, class: labels[i], weight: lambdas.lambda_val });
    }
    for &i in test.iter().filter(|&&i| normals[i]) {
        terms.push(CeTerm { node: i, class: pseudo[i], weight: lambdas.lambda_test });
    }
    if terms.is_empty() {
        return Err(Error::EmptyFocus);
    }
    Ok(terms)
}

/// Everything the outer loss needs besides the adjacency and weights.
#[derive(Debug, Clone)]
pub struct OuterProblem<'a> {
    /// GNN input features.
    pub x: &'a Array2<f64>,
    /// Features entering the smoother; `None` disables it regardless of `eta`.
    pub smooth_x: Option<&'a Array2<f64>>,
    pub eta: f64,
    /// Needed only by unrolled mode.
    pub labels: &'a [usize],
    pub train: &'a [usize],
    gram: Option<Array2<f64>>,
}

impl<'a> OuterProblem<'a> {
    pub fn new(
        x: &'a Array2<f64>,
        smooth_x: Option<&'a Array2<f64>>,
        eta: f64,
        labels: &'a [usize],
        train: &'a [usize],
    ) -> Self {
        let gram = match smooth_x {
            Some(sx) if eta > 0.0 => Some(sx.dot(&sx.t())),
            _ => None,
        };
        Self { x, smooth_x, eta, labels, train, gram }
    }

    /// Loss at a (possibly relaxed) adjacency with weights held at `w`.
    pub fn loss(&self, a: &Array2<f64>, w: &Array2<f64>, terms: &[CeTerm]) -> f64 {
        let a_hat = normalize_adjacency(a);
        let p = a_hat.dot(&a_hat.dot(self.x));
        let probs = softmax_rows(&p.dot(w));
        ce_sum(&probs, terms) + self.smooth_term(a)
    }

    /// Loss after `steps` plain gradient steps on the training NLL from `w`.
    pub fn unrolled_loss(
        &self,
        a: &Array2<f64>,
        w: &Array2<f64>,
        terms: &[CeTerm],
        steps: usize,
        step_size: f64,
    ) -> f64 {
        let a_hat = normalize_adjacency(a);
        let p = a_hat.dot(&a_hat.dot(self.x));
        let mut w = w.clone();
        for _ in 0..steps {
            let r = train_residual(&softmax_rows(&p.dot(&w)), self.labels, self.train);
            w = &w - &(p.t().dot(&r) * step_size);
        }
        ce_sum(&softmax_rows(&p.dot(&w)), terms) + self.smooth_term(a)
    }

    fn smooth_term(&self, a: &Array2<f64>) -> f64 {
        match self.smooth_x {
            Some(sx) if self.eta > 0.0 => self.eta * smoothness(sx, &laplacian(a)),
            _ => 0.0,
        }
    }

    /// Symmetrized `∂L_S/∂A` with a zero diagonal.
    pub fn meta_gradient(
        &self,
        a: &Array2<f64>,
        w_star: &Array2<f64>,
        terms: &[CeTerm],
        mode: MetaMode,
    ) -> Result<Array2<f64>> {
        let n = a.nrows();
        let a_hat = normalize_adjacency(a);
        let m = a_hat.dot(self.x);
        let p = a_hat.dot(&m);

        // ∂L/∂P = left · rightᵀ, accumulated as rank-C factors
        let (left, right) = match mode {
            MetaMode::FirstOrder => {
                let probs = softmax_rows(&p.dot(w_star));
                (ce_logit_grad(&probs, terms), w_star.clone())
            }
            MetaMode::Unrolled { steps, step_size } => {
                self.unrolled_factors(&p, w_star, terms, steps, step_size)
            }
        };

        // ∂L/∂Â = G_P Mᵀ + Â G_P Xᵀ with G_P = left·rightᵀ
        let mr = m.dot(&right);
        let xr = self.x.dot(&right);
        let mut g_hat = left.dot(&mr.t());
        g_hat += &a_hat.dot(&left).dot(&xr.t());

        let mut g = normalization_backward(a, &g_hat);
        if let Some(gram) = &self.gram {
            g += &(smoother_gradient(a, gram) * self.eta);
        }

        let mut sym = (&g + &g.t()) * 0.5;
        for i in 0..n {
            sym[[i, i]] = 0.0;
        }
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("meta-gradient"));
        }
        Ok(sym)
    }

    fn unrolled_factors(
        &self,
        p: &Array2<f64>,
        w_star: &Array2<f64>,
        terms: &[CeTerm],
        steps: usize,
        step_size: f64,
    ) -> (Array2<f64>, Array2<f64>) {
        let train_n = self.train.len().max(1) as f64;
        let mut ws = vec![w_star.clone()];
        let mut residuals = Vec::with_capacity(steps);
        let mut softmaxes = Vec::with_capacity(steps);
        for k in 0..steps {
            let s = softmax_rows(&p.dot(&ws[k]));
            let r = train_residual(&s, self.labels, self.train);
            ws.push(&ws[k] - &(p.t().dot(&r) * step_size));
            residuals.push(r);
            softmaxes.push(s);
        }
        let w_last = &ws[steps];
        let g_z = ce_logit_grad(&softmax_rows(&p.dot(w_last)), terms);
        let mut lefts = vec![g_z.clone()];
        let mut rights = vec![w_last.clone()];
        let mut v = p.t().dot(&g_z);
        for k in (0..steps).rev() {
            let u = p.dot(&v);
            let s = &softmaxes[k];
            let mut q = Array2::zeros(s.raw_dim());
            for &i in self.train {
                let su: f64 = s.row(i).dot(&u.row(i));
                for c in 0..s.ncols() {
                    q[[i, c]] = -step_size / train_n * s[[i, c]] * (u[[i, c]] - su);
                }
            }
            lefts.push(&residuals[k] * -step_size);
            rights.push(v.clone());
            lefts.push(q.clone());
            rights.push(ws[k].clone());
            v = &v + &p.t().dot(&q);
        }
        let lv: Vec<_> = lefts.iter().map(|a| a.view()).collect();
        let rv: Vec<_> = rights.iter().map(|a| a.view()).collect();
        (
            concatenate(Axis(1), &lv).expect("same row count"),
            concatenate(Axis(1), &rv).expect("same row count"),
        )
    }
}

fn ce_sum(probs: &Array2<f64>, terms: &[CeTerm]) -> f64 {
    terms
        .iter()
        .map(|t| -t.weight * probs[[t.node, t.class]].max(1e-300).ln())
        .sum()
}

/// `∂(Σ -w ln S)/∂Z`: `w (s_i - e_y)` on each term's row.
fn ce_logit_grad(probs: &Array2<f64>, terms: &[CeTerm]) -> Array2<f64> {
    let mut g = Array2::zeros(probs.raw_dim());
    for t in terms {
        let mut row = g.row_mut(t.node);
        row.scaled_add(t.weight, &probs.row(t.node));
        row[t.class] -= t.weight;
    }
    g
}

/// Mean-NLL residual `(s_i - e_y)/|T|` on training rows, zero elsewhere.
fn train_residual(probs: &Array2<f64>, labels: &[usize], train: &[usize]) -> Array2<f64> {
    let mut r = Array2::zeros(probs.raw_dim());
    let m = train.len().max(1) as f64;
    for &i in train {
        r.row_mut(i).assign(&(&probs.row(i) / m));
        r[[i, labels[i]]] -= 1.0 / m;
    }
    r
}

/// Chains `∂L/∂Â` through `Â = D̃^{-1/2}(A+I)D̃^{-1/2}` with row-sum degrees.
fn normalization_backward(a: &Array2<f64>, g_hat: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut a_tilde = a.clone();
    for i in 0..n {
        a_tilde[[i, i]] += 1.0;
    }
    let r: Vec<f64> = a_tilde.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    // h_u = Σ_j G[u,j] Ã[u,j] r_j + Σ_i G[i,u] Ã[i,u] r_i
    let mut h = vec![0.0; n];
    for u in 0..n {
        for j in 0..n {
            h[u] += g_hat[[u, j]] * a_tilde[[u, j]] * r[j] + g_hat[[j, u]] * a_tilde[[j, u]] * r[j];
        }
    }
    Array2::from_shape_fn((n, n), |(u, v)| {
        g_hat[[u, v]] * r[u] * r[v] - 0.5 * r[u].powi(3) * h[u]
    })
}

/// `∂Tr(XᵀLX)/∂A` for independent entries, given the Gram matrix `XXᵀ`.
fn smoother_gradient(a: &Array2<f64>, gram: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let q = inv_sqrt_degrees(a);
    // k_u = Σ_j q_j (A[u,j] K[u,j] + A[j,u] K[j,u])
    let mut k = vec![0.0; n];
    for u in 0..n {
        for j in 0..n {
            k[u] += q[j] * (a[[u, j]] * gram[[u, j]] + a[[j, u]] * gram[[j, u]]);
        }
    }
    Array2::from_shape_fn((n, n), |(u, v)| {
        -q[u] * q[v] * gram[[u, v]] + 0.5 * q[u].powi(3) * k[u]
    })
}

/// Zeroes every entry whose endpoints are both normal.
pub fn mask_gradient(g: &Array2<f64>, normals: &[bool]) -> Array2<f64> {
    let mut out = g.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if normals[i] && normals[j] {
            *v = 0.0;
        }
    }
    out
}

/// The candidate with the largest strictly positive gradient; ties go to the
/// lexicographically smallest pair.
pub fn select_edge(g: &Array2<f64>, candidates: &EdgeSet) -> Option<((usize, usize), f64)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (u, v) in candidates.iter() {
        let val = g[[u, v]];
        if val > 0.0 && best.is_none_or(|(_, b)| val > b) {
            best = Some(((u, v), val));
        }
    }
    best
}

/// Slice helper used by callers that keep dense node flags.
pub fn flags_from_nodes(n: usize, nodes: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut flags = vec![false; n];
    for i in nodes {
        flags[i] = true;
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbm::erdos_renyi;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_schedule_examples() {
        assert_eq!(lambda_schedule(0, 10).unwrap(), LambdaPair { lambda_val: 1.0, lambda_test: 0.0 });
        assert_eq!(lambda_schedule(10, 10).unwrap(), LambdaPair { lambda_val: 0.0, lambda_test: 1.0 });
        assert_eq!(lambda_schedule(5, 10).unwrap(), LambdaPair { lambda_val: 0.5, lambda_test: 0.5 });
        assert!(matches!(lambda_schedule(11, 10), Err(Error::OutOfRange { .. })));
        for t in 0..=37 {
            let l = lambda_schedule(t, 37).unwrap();
            assert_eq!(l.lambda_val + l.lambda_test, 1.0);
        }
    }

    #[test]
    fn focus_terms_empty_focus() {
        let normals = vec![false; 4];
        let r = focus_terms(&[0], &[1], &[0; 4], &[0; 4], &normals, LambdaPair::validation_only());
        assert!(matches!(r, Err(Error::EmptyFocus)));
    }

    #[test]
    fn mask_examples() {
        let g = array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        assert_eq!(mask_gradient(&g, &[true; 3]), Array2::<f64>::zeros((3, 3)));
        assert_eq!(mask_gradient(&g, &[false; 3]), g);
        let m = mask_gradient(&g, &[true, false, true]);
        assert_eq!(m, array![[0.0, 1.0, 0.0], [1.0, 0.0, 3.0], [0.0, 3.0, 0.0]]);
        assert_eq!(mask_gradient(&m, &[true, false, true]), m);
    }

    #[test]
    fn select_edge_examples() {
        let mut g = Array2::zeros((6, 6));
        g[[0, 1]] = 0.7;
        let single: EdgeSet = vec![(0, 1)].into();
        assert_eq!(select_edge(&g, &single), Some(((0, 1), 0.7)));
        g[[0, 1]] = -0.7;
        assert_eq!(select_edge(&g, &single), None);
        g[[1, 5]] = 0.4;
        g[[2, 3]] = 0.4;
        let two: EdgeSet = vec![(2, 3), (1, 5)].into();
        assert_eq!(select_edge(&g, &two), Some(((1, 5), 0.4)));
    }

    struct Instance {
        a: Array2<f64>,
        x: Array2<f64>,
        w: Array2<f64>,
        labels: Vec<usize>,
        train: Vec<usize>,
        terms: Vec<CeTerm>,
    }

    fn instance(seed: u64, n: usize, d: usize, c: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = erdos_renyi(n, 0.4, &mut rng);
        // ring keeps every degree positive
        for i in 0..n {
            let j = (i + 1) % n;
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() - 0.5);
        let w = Array2::from_shape_fn((d, c), |_| 2.0 * rng.random::<f64>() - 1.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let train = (0..n / 3).collect();
        let terms = (n / 3..n)
            .map(|i| CeTerm { node: i, class: labels[i], weight: 0.3 + rng.random::<f64>() })
            .collect();
        Instance { a, x, w, labels, train, terms }
    }

    fn fd_check(prob: &OuterProblem, inst: &Instance, mode: MetaMode, tol: f64) {
        let g = prob.meta_gradient(&inst.a, &inst.w, &inst.terms, mode).unwrap();
        let loss = |a: &Array2<f64>| match mode {
            MetaMode::FirstOrder => prob.loss(a, &inst.w, &inst.terms),
            MetaMode::Unrolled { steps, step_size } => {
                prob.unrolled_loss(a, &inst.w, &inst.terms, steps, step_size)
            }
        };
        let n = inst.a.nrows();
        let h = 1e-4;
        for u in 0..n {
            for v in (u + 1)..n {
                let mut ap = inst.a.clone();
                ap[[u, v]] += h;
                ap[[v, u]] += h;
                let mut am = inst.a.clone();
                am[[u, v]] -= h;
                am[[v, u]] -= h;
                let fd = (loss(&ap) - loss(&am)) / (4.0 * h);
                let err = (fd - g[[u, v]]).abs() / fd.abs().max(1e-6);
                assert!(err < tol, "({u},{v}) fd={fd} analytic={}", g[[u, v]]);
            }
        }
    }

    #[test]
    fn first_order_matches_finite_differences() {
        let inst = instance(1, 8, 4, 3);
        let prob = OuterProblem::new(&inst.x, Some(&inst.x), 0.5, &inst.labels, &inst.train);
        fd_check(&prob, &inst, MetaMode::FirstOrder, 1e-4);
    }

    #[test]
    fn unrolled_matches_finite_differences() {
        let inst = instance(2, 8, 4, 3);
        let prob = OuterProblem::new(&inst.x, Some(&inst.x), 0.1, &inst.labels, &inst.train);
        fd_check(&prob, &inst, MetaMode::Unrolled { steps: 3, step_size: 0.5 }, 1e-4);
    }

    #[test]
    fn unrolled_zero_steps_is_first_order() {
        let inst = instance(3, 8, 4, 3);
        let prob = OuterProblem::new(&inst.x, Some(&inst.x), 0.2, &inst.labels, &inst.train);
        let g1 = prob.meta_gradient(&inst.a, &inst.w, &inst.terms, MetaMode::FirstOrder).unwrap();
        let g0 = prob
            .meta_gradient(&inst.a, &inst.w, &inst.terms, MetaMode::Unrolled { steps: 0, step_size: 0.1 })
            .unwrap();
        assert_eq!(g1, g0);
    }

    #[test]
    fn smoother_only_gradient_matches_closed_form() {
        let inst = instance(4, 8, 3, 2);
        let eta = 1.0;
        let prob = OuterProblem::new(&inst.x, Some(&inst.x), eta, &inst.labels, &inst.train);
        let g = prob.meta_gradient(&inst.a, &inst.w, &[], MetaMode::FirstOrder).unwrap();
        // Symmetric A: Tr = Σ_i ||x_i||² - Σ_{ij} A_ij <x_i,x_j>/sqrt(d_i d_j).
        // Derivative w.r.t. the symmetric edge weight a_uv, halved.
        let n = 8;
        let a = &inst.a;
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let dot = |i: usize, j: usize| inst.x.row(i).dot(&inst.x.row(j));
        for u in 0..n {
            for v in (u + 1)..n {
                let mut d = -2.0 * dot(u, v) / (deg[u] * deg[v]).sqrt();
                for e in [u, v] {
                    // degree of each endpoint moves with a_uv
                    let s: f64 = (0..n).map(|j| a[[e, j]] * dot(e, j) / deg[j].sqrt()).sum();
                    d += deg[e].powf(-1.5) * s;
                }
                let expected = eta * d / 2.0;
                assert!((g[[u, v]] - expected).abs() < 1e-8, "({u},{v})");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let inst = instance(5, 7, 3, 2);
        let n = 7;
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let pa = Array2::from_shape_fn((n, n), |(i, j)| inst.a[[perm[i], perm[j]]]);
        let px = Array2::from_shape_fn((n, 3), |(i, k)| inst.x[[perm[i], k]]);
        let mut inv = [0usize; 7];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let pterms: Vec<CeTerm> = inst
            .terms
            .iter()
            .map(|t| CeTerm { node: inv[t.node], ..*t })
            .collect();
        let plabels: Vec<usize> = (0..n).map(|i| inst.labels[perm[i]]).collect();
        let ptrain: Vec<usize> = inst.train.iter().map(|&i| inv[i]).collect();
        let p1 = OuterProblem::new(&inst.x, Some(&inst.x), 0.3, &inst.labels, &inst.train);
        let p2 = OuterProblem::new(&px, Some(&px), 0.3, &plabels, &ptrain);
        let g = p1.meta_gradient(&inst.a, &inst.w, &inst.terms, MetaMode::FirstOrder).unwrap();
        let gp = p2.meta_gradient(&pa, &inst.w, &pterms, MetaMode::FirstOrder).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((gp[[i, j]] - g[[perm[i], perm[j]]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_reductions() {
        let inst = instance(6, 6, 3, 2);
        let prob = OuterProblem::new(&inst.x, None, 0.0, &inst.labels, &inst.train);
        // loop oracle
        let a_hat = normalize_adjacency(&inst.a);
        let z = a_hat.dot(&a_hat).dot(&inst.x).dot(&inst.w);
        let mut expected = 0.0;
        for t in &inst.terms {
            let row = z.row(t.node);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            expected -= t.weight * (row[t.class] - lse);
        }
        assert!((prob.loss(&inst.a, &inst.w, &inst.terms) - expected).abs() < 1e-10);
    }
}
