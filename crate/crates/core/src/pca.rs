//! Principal component scores via a symmetric eigendecomposition of the
//! smaller of the two Gram matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Fitted principal axes. `loadings` is `d x k` with unit-norm columns.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    pub loadings: Array2<f64>,
    /// Eigenvalues of the covariance `XcᵀXc / n`, descending, one per kept axis.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Array2<f64>, k: usize) -> Result<Self> {
        let (n, d) = x.dim();
        if k > d {
            return Err(Error::Dimension(format!("cannot keep {k} components of {d} columns")));
        }
        if n == 0 {
            return Err(Error::Dimension("PCA on an empty matrix".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let xc = x - &mean;

        let mut loadings = Array2::zeros((d, k));
        let mut variances = vec![0.0; k];
        if d <= n {
            let cov = xc.t().dot(&xc);
            let (vals, vecs) = sorted_eigen(&cov);
            for c in 0..k {
                variances[c] = vals[c].max(0.0) / n as f64;
                loadings.column_mut(c).assign(&vecs.column(c));
            }
        } else {
            let gram = xc.dot(&xc.t());
            let (vals, vecs) = sorted_eigen(&gram);
            for c in 0..k.min(n) {
                let lambda = vals[c];
                if lambda <= 1e-12 * vals[0].abs().max(1.0) {
                    continue;
                }
                // v = Xcᵀ u / sqrt(lambda)
                let v = xc.t().dot(&vecs.column(c)) / lambda.sqrt();
                variances[c] = lambda / n as f64;
                loadings.column_mut(c).assign(&v);
            }
        }
        for mut col in loadings.columns_mut() {
            let pivot = col
                .iter()
                .copied()
                .fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if pivot < 0.0 {
                col.mapv_inplace(|v| -v);
            }
        }
        Ok(Self { mean, loadings, variances })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.loadings)
    }
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
fn sorted_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Scores of the top-`k` principal components of mean-centred `x`.
pub fn pca_reduce(x: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    Ok(Pca::fit(x, k)?.transform(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_axes_of_already_reduced_data() {
        // variance 4 along axis 0, 1 along axis 1
        let x = array![[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let pca = Pca::fit(&x, 2).unwrap();
        assert!((pca.loadings[[0, 0]].abs() - 1.0).abs() < 1e-12);
        assert!((pca.loadings[[1, 1]].abs() - 1.0).abs() < 1e-12);
        let s = pca.transform(&x);
        assert!((s[[0, 0]].abs() - 2.0).abs() < 1e-12);
        assert!((s[[2, 1]].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_has_zero_second_component() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [-1.0, -2.0]];
        let s = pca_reduce(&x, 2).unwrap();
        for v in s.column(1) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_too_many_components() {
        let x = Array2::<f64>::zeros((5, 2));
        assert!(matches!(pca_reduce(&x, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn sign_convention_largest_loading_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random::<f64>());
        let pca = Pca::fit(&x, 3).unwrap();
        for col in pca.loadings.columns() {
            let pivot = col.iter().copied().fold(0.0_f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot > 0.0);
        }
    }

    fn reconstruction_check(n: usize, d: usize, k: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |(_, j)| rng.random::<f64>() * (j + 1) as f64);
        let pca = Pca::fit(&x, k).unwrap();
        let xc = &x - &pca.mean;
        let recon = pca.transform(&x).dot(&pca.loadings.t());
        let err: f64 = (&xc - &recon).mapv(|v| v * v).sum();

        // independent oracle: full eigendecomposition of the covariance
        let cov = xc.t().dot(&xc) / n as f64;
        let dm = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
        let mut vals: Vec<f64> = SymmetricEigen::new(dm).eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = vals[k..].iter().map(|v| v.max(0.0)).sum();
        assert!((err - discarded * n as f64).abs() < 1e-6, "{err} vs {}", discarded * n as f64);
    }

    #[test]
    fn reconstruction_error_is_discarded_variance() {
        reconstruction_check(40, 6, 2, 9);
        // wide matrix goes through the n x n Gram path
        reconstruction_check(5, 12, 3, 10);
    }
}
