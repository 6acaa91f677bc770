//! Class-divergence measures between a node's predicted distribution and its
//! neighbours'.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::gnn::softmax_rows;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Temperature softmax `exp(z_i/T) / Σ_j exp(z_j/T)` per row.
pub fn soft_class_prob(logits: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    Ok(softmax_rows(&(logits / temperature)))
}

/// `KL[i, j] = Σ_c S[i,c] ln(S[i,c] / S[j,c])`, computed as
/// `rowsum(S ⊙ ln S) 1ᵀ - S (ln S)ᵀ`.
pub fn pairwise_kl(s: &Array2<f64>) -> Array2<f64> {
    let log_s = s.mapv(|p| p.max(PROB_FLOOR).ln());
    let neg_entropy: Array1<f64> = (s * &log_s).sum_axis(Axis(1));
    let cross = s.dot(&log_s.t());
    let mut kl = -cross;
    for (i, mut row) in kl.rows_mut().into_iter().enumerate() {
        row += neg_entropy[i];
        row[i] = 0.0;
    }
    kl
}

/// Neighbour-averaged KL measures.
///
/// `prox1(i) = (1/D_i) Σ_j A_ij KL(i,j)` and
/// `prox2(i) = 1/(D_i (D_i - 1)) Σ_{j,k} A_ij A_ik KL(j,k)`; nodes with too few
/// neighbours for either denominator get 0.
pub fn proximity_metrics(s: &Array2<f64>, a: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let kl = pairwise_kl(s);
    proximity_from_kl(&kl, a)
}

pub(crate) fn proximity_from_kl(kl: &Array2<f64>, a: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let deg = a.sum_axis(Axis(1));
    let p1_sum = (kl * a).sum_axis(Axis(1));
    let p2_sum = (a * &a.dot(kl)).sum_axis(Axis(1));
    let prox1 = Array1::from_shape_fn(deg.len(), |i| {
        if deg[i] > 0.0 { p1_sum[i] / deg[i] } else { 0.0 }
    });
    let prox2 = Array1::from_shape_fn(deg.len(), |i| {
        if deg[i] >= 2.0 { p2_sum[i] / (deg[i] * (deg[i] - 1.0)) } else { 0.0 }
    });
    (prox1, prox2)
}

fn kl_row(p: ndarray::ArrayView1<f64>, q: &Array1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// Jensen–Shannon divergence between two distributions (natural log).
pub fn js(p: ndarray::ArrayView1<f64>, q: ndarray::ArrayView1<f64>) -> f64 {
    let m = (&p + &q) * 0.5;
    0.5 * kl_row(p, &m) + 0.5 * kl_row(q, &m)
}

/// Mean JS divergence to neighbours; isolated nodes get 0.
pub fn js_divergence(s: &Array2<f64>, a: &Array2<f64>) -> Array1<f64> {
    let n = s.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut total = 0.0;
        let mut deg = 0.0;
        for j in 0..n {
            if a[[i, j]] != 0.0 {
                total += a[[i, j]] * js(s.row(i), s.row(j));
                deg += a[[i, j]];
            }
        }
        if deg > 0.0 {
            out[i] = total / deg;
        }
    }
    out
}
