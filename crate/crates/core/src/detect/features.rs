use ndarray::{Array2, Axis};

use super::divergence::{js_divergence, proximity_metrics, soft_class_prob};
use crate::error::Result;
use crate::gnn::softmax_rows;
use crate::pca::pca_reduce;

/// `softmax(PCA(X, k) / T)`.
pub fn pca_softmax(x: &Array2<f64>, k: usize, temperature: f64) -> Result<Array2<f64>> {
    let reduced = pca_reduce(x, k)?;
    if !(temperature > 0.0) {
        return Err(crate::Error::InvalidTemperature(temperature));
    }
    Ok(softmax_rows(&(reduced / temperature)))
}

/// Column order `(P1X, P2X, DX, P1S, P2S, DS)`, or `(P1S, P2S, DS)` when
/// `x_soft` is absent.
pub fn hybrid_features(a: &Array2<f64>, s_temp: &Array2<f64>, x_soft: Option<&Array2<f64>>) -> Array2<f64> {
    let n = a.nrows();
    let mut cols = Vec::with_capacity(6);
    for dist in x_soft.into_iter().chain(std::iter::once(s_temp)) {
        let (p1, p2) = proximity_metrics(dist, a);
        cols.push(p1);
        cols.push(p2);
        cols.push(js_divergence(dist, a));
    }
    let mut m = Array2::zeros((n, cols.len()));
    for (j, c) in cols.into_iter().enumerate() {
        m.column_mut(j).assign(&c);
    }
    m
}

/// Hybrid features from GNN logits at temperature `T`.
pub fn build_hybrid_features(
    a: &Array2<f64>,
    logits: &Array2<f64>,
    temperature: f64,
    x_soft: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let s_temp = soft_class_prob(logits, temperature)?;
    Ok(hybrid_features(a, &s_temp, x_soft))
}

/// Zero-mean, unit-variance columns; constant columns become zero.
pub fn standardize_columns(m: &Array2<f64>) -> Array2<f64> {
    let mean = m.mean_axis(Axis(0)).expect("nonempty");
    let std = m.std_axis(Axis(0), 0.0);
    let mut out = m - &mean;
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        if std[j] > 1e-12 {
            col /= std[j];
        } else {
            col.fill(0.0);
        }
    }
    out
}
