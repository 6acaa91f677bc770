//! Deep Gaussian mixture model: a small MLP assigns soft memberships, the
//! memberships define a Gaussian mixture over the inputs, and the mixture's
//! negative log-density is the per-sample energy. Training minimizes the mean
//! energy with Adam, back-propagating through the mixture statistics.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::softmax_rows;
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgmmConfig {
    pub components: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub reg_eps: f64,
    pub seed: u64,
}

impl Default for DgmmConfig {
    fn default() -> Self {
        Self { components: 2, hidden: 10, epochs: 200, learning_rate: 1e-3, reg_eps: 1e-6, seed: 0 }
    }
}

/// Mixture weights, means (`K x D`) and covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub phi: Array1<f64>,
    pub mu: Array2<f64>,
    pub sigma: Vec<Array2<f64>>,
}

struct Factored {
    inv: Vec<Array2<f64>>,
    log_norm: Vec<f64>,
}

impl GmmParams {
    /// Membership-weighted sample statistics.
    pub fn from_memberships(m: &Array2<f64>, gamma: &Array2<f64>) -> Self {
        let (n, d) = m.dim();
        let k = gamma.ncols();
        let nk: Array1<f64> = gamma.sum_axis(Axis(0)).mapv(|v| v.max(1e-12));
        let phi = &nk / n as f64;
        let mu = gamma.t().dot(m) / &nk.view().insert_axis(Axis(1));
        let mut sigma = Vec::with_capacity(k);
        for c in 0..k {
            let centred = m - &mu.row(c);
            let weighted = &centred * &gamma.column(c).insert_axis(Axis(1));
            sigma.push(weighted.t().dot(&centred) / nk[c]);
        }
        debug_assert_eq!(sigma.first().map_or(d, |s| s.nrows()), d);
        Self { phi, mu, sigma }
    }

    fn factor(&self, reg_eps: f64) -> Result<Factored> {
        let d = self.mu.ncols();
        let mut inv = Vec::with_capacity(self.sigma.len());
        let mut log_norm = Vec::with_capacity(self.sigma.len());
        for (c, s) in self.sigma.iter().enumerate() {
            let reg = DMatrix::from_fn(d, d, |i, j| s[[i, j]] + if i == j { reg_eps } else { 0.0 });
            let chol = reg.cholesky().ok_or(Error::SingularCovariance(c))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let inverse = chol.inverse();
            inv.push(Array2::from_shape_fn((d, d), |(i, j)| inverse[(i, j)]));
            log_norm.push(0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det));
        }
        Ok(Factored { inv, log_norm })
    }

    /// `E(x) = -ln Σ_k φ_k N(x; μ_k, Σ_k + εI)` per row, plus the
    /// responsibilities used by the backward pass.
    fn energies_and_resp(
        &self,
        m: &Array2<f64>,
        reg_eps: f64,
    ) -> Result<(Array1<f64>, Array2<f64>, Factored)> {
        let f = self.factor(reg_eps)?;
        let (n, _) = m.dim();
        let k = self.phi.len();
        let mut logp = Array2::zeros((n, k));
        for c in 0..k {
            let centred = m - &self.mu.row(c);
            let maha = (&centred.dot(&f.inv[c]) * &centred).sum_axis(Axis(1));
            let base = self.phi[c].max(1e-300).ln() - f.log_norm[c];
            logp.column_mut(c).assign(&(maha.mapv(|q| base - 0.5 * q)));
        }
        let mut energy = Array1::zeros(n);
        let mut resp = logp.clone();
        for i in 0..n {
            let row = logp.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            energy[i] = -lse;
            resp.row_mut(i).mapv_inplace(|v| (v - lse).exp());
        }
        if energy.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("mixture energy"));
        }
        Ok((energy, resp, f))
    }

    pub fn energies(&self, m: &Array2<f64>, reg_eps: f64) -> Result<Array1<f64>> {
        Ok(self.energies_and_resp(m, reg_eps)?.0)
    }
}

#[derive(Debug, Clone)]
pub struct DgmmModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub gmm: GmmParams,
    pub reg_eps: f64,
}

#[derive(Clone)]
struct Net {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

struct Grads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl Net {
    fn init(d: usize, hidden: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
        };
        let w1 = gauss(d, hidden);
        let w2 = gauss(hidden, k);
        Self { w1, b1: Array1::zeros(hidden), w2, b2: Array1::zeros(k) }
    }

    fn forward(&self, m: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let pre = m.dot(&self.w1) + &self.b1;
        let h1 = pre.mapv(|v| v.max(0.0));
        let gamma = softmax_rows(&(h1.dot(&self.w2) + &self.b2));
        (pre, h1, gamma)
    }

    fn loss_and_grads(&self, m: &Array2<f64>, reg_eps: f64) -> Result<(f64, Grads)> {
        let (n, d) = m.dim();
        let (pre, h1, gamma) = self.forward(m);
        let params = GmmParams::from_memberships(m, &gamma);
        let (energy, resp, f) = params.energies_and_resp(m, reg_eps)?;
        let loss = energy.mean().expect("n > 0");
        let k = gamma.ncols();
        let nf = n as f64;
        let nk = gamma.sum_axis(Axis(0)).mapv(|v| v.max(1e-12));

        let mut g_gamma = Array2::zeros((n, k));
        for c in 0..k {
            let inv = &f.inv[c];
            let centred = m - &params.mu.row(c);
            let r = resp.column(c);
            // ∂L/∂φ_c, ∂L/∂μ_c, ∂L/∂Σ_c
            let g_phi = -r.sum() / (nf * params.phi[c]);
            let proj = centred.dot(inv); // rows: Σ⁻¹ δ_i
            let g_mu = -(proj.t().dot(&r)) / nf;
            let weighted = &proj * &r.insert_axis(Axis(1));
            let g_sigma = -(weighted.t().dot(&proj) - inv * r.sum()) * (0.5 / nf);

            let g_sigma_dot_sigma = (&g_sigma * &params.sigma[c]).sum();
            let quad = (&centred.dot(&g_sigma) * &centred).sum_axis(Axis(1));
            let lin = centred.dot(&g_mu);
            for i in 0..n {
                g_gamma[[i, c]] =
                    g_phi / nf + (lin[i] + quad[i] - g_sigma_dot_sigma) / nk[c];
            }
        }
        // softmax backward
        let dot = (&g_gamma * &gamma).sum_axis(Axis(1));
        let g_logits = &gamma * &(&g_gamma - &dot.insert_axis(Axis(1)));
        let w2 = h1.t().dot(&g_logits);
        let b2 = g_logits.sum_axis(Axis(0));
        let mut g_h1 = g_logits.dot(&self.w2.t());
        ndarray::Zip::from(&mut g_h1).and(&pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = m.t().dot(&g_h1);
        let b1 = g_h1.sum_axis(Axis(0));
        debug_assert_eq!(w1.nrows(), d);
        Ok((loss, Grads { w1, b1, w2, b2 }))
    }
}

/// Fits the membership network by minimizing mean energy.
pub fn dgmm_train(m: &Array2<f64>, cfg: &DgmmConfig) -> Result<DgmmModel> {
    if cfg.components == 0 {
        return Err(Error::InvalidConfig("DGMM needs at least one component".into()));
    }
    if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("DGMM input"));
    }
    let mut net = Net::init(m.ncols(), cfg.hidden, cfg.components, cfg.seed);
    let lr = cfg.learning_rate;
    let mut o_w1 = Adam::new(net.w1.raw_dim(), lr, 0.0);
    let mut o_b1 = Adam::new(net.b1.raw_dim(), lr, 0.0);
    let mut o_w2 = Adam::new(net.w2.raw_dim(), lr, 0.0);
    let mut o_b2 = Adam::new(net.b2.raw_dim(), lr, 0.0);
    for _ in 0..cfg.epochs {
        let (_, g) = net.loss_and_grads(m, cfg.reg_eps)?;
        o_w1.step(&mut net.w1, &g.w1);
        o_b1.step(&mut net.b1, &g.b1);
        o_w2.step(&mut net.w2, &g.w2);
        o_b2.step(&mut net.b2, &g.b2);
    }
    let (_, _, gamma) = net.forward(m);
    let gmm = GmmParams::from_memberships(m, &gamma);
    Ok(DgmmModel { w1: net.w1, b1: net.b1, w2: net.w2, b2: net.b2, gmm, reg_eps: cfg.reg_eps })
}

impl DgmmModel {
    pub fn memberships(&self, m: &Array2<f64>) -> Array2<f64> {
        let pre = m.dot(&self.w1) + &self.b1;
        softmax_rows(&(pre.mapv(|v| v.max(0.0)).dot(&self.w2) + &self.b2))
    }

    pub fn mean_energy(&self, m: &Array2<f64>) -> Result<f64> {
        Ok(dgmm_energy(self, m)?.mean().unwrap_or(0.0))
    }
}

/// Energy of each row under the fitted mixture.
pub fn dgmm_energy(model: &DgmmModel, m: &Array2<f64>) -> Result<Array1<f64>> {
    model.gmm.energies(m, model.reg_eps)
}

/// Mean energy of the mixture implied by an untrained network with `cfg`.
pub fn initial_mean_energy(m: &Array2<f64>, cfg: &DgmmConfig) -> Result<f64> {
    let net = Net::init(m.ncols(), cfg.hidden, cfg.components, cfg.seed);
    let (_, _, gamma) = net.forward(m);
    Ok(GmmParams::from_memberships(m, &gamma).energies(m, cfg.reg_eps)?.mean().unwrap_or(0.0))
}
