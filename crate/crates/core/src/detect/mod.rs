//! Victim-node detectors.
//!
//! ClassDiv scores each node by how far its predicted class distribution (and
//! reduced attributes) diverge from its neighbours', feeds those divergences
//! to a DGMM, and thresholds the energies with a momentum-smoothed quantile.
//! LinkPred scores edges with a small autoencoder and flags endpoints of
//! low-scored edges.

pub mod dgmm;
pub mod divergence;
pub mod features;
pub mod linkpred;
pub mod threshold;

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::TrainedGnn;
use crate::graph::GraphBundle;

pub use dgmm::{dgmm_energy, dgmm_train, DgmmConfig, DgmmModel};
pub use features::{build_hybrid_features, hybrid_features, pca_softmax, standardize_columns};
pub use linkpred::{gmean_threshold, linkpred_detect, linkpred_train, LinkPredConfig, LinkPredModel, VictimRule};
pub use threshold::{quantile, ThresholdState};

/// Per-node scores and the victim/normal partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub scores: Vec<f64>,
    pub is_victim: Vec<bool>,
}

impl DetectorOutput {
    pub fn all_victims(n: usize) -> Self {
        Self { scores: vec![f64::INFINITY; n], is_victim: vec![true; n] }
    }

    pub fn no_victims(n: usize) -> Self {
        Self { scores: vec![0.0; n], is_victim: vec![false; n] }
    }

    pub fn victims(&self) -> Vec<usize> {
        (0..self.is_victim.len()).filter(|&i| self.is_victim[i]).collect()
    }

    pub fn normals(&self) -> Vec<usize> {
        (0..self.is_victim.len()).filter(|&i| !self.is_victim[i]).collect()
    }

    pub fn normal_flags(&self) -> Vec<bool> {
        self.is_victim.iter().map(|v| !v).collect()
    }

    pub fn num_victims(&self) -> usize {
        self.is_victim.iter().filter(|&&v| v).count()
    }
}

/// Victims are nodes whose energy is strictly above `κ`.
pub fn classdiv_detect(energies: &Array1<f64>, state: &ThresholdState) -> DetectorOutput {
    DetectorOutput {
        scores: energies.to_vec(),
        is_victim: energies.iter().map(|&e| e > state.kappa).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassDivConfig {
    pub temperature: f64,
    pub beta: f64,
    pub tau: f64,
    /// `components = 0` means "use the class count".
    pub dgmm: DgmmConfig,
    /// Rescale each feature column to zero mean and unit variance before the
    /// DGMM sees it.
    pub standardize: bool,
}

impl Default for ClassDivConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            beta: 0.3,
            tau: 0.6,
            dgmm: DgmmConfig { components: 0, ..DgmmConfig::default() },
            standardize: true,
        }
    }
}

/// ClassDiv across sanitation steps; holds the threshold state between calls.
#[derive(Debug, Clone)]
pub struct ClassDivDetector {
    pub cfg: ClassDivConfig,
    pub state: Option<ThresholdState>,
    pca_soft: Option<Array2<f64>>,
}

impl ClassDivDetector {
    /// `attributes` enables the PCA-derived columns; pass `None` for
    /// attribute-free graphs.
    pub fn new(cfg: ClassDivConfig, attributes: Option<&Array2<f64>>, num_classes: usize) -> Result<Self> {
        let pca_soft = match attributes {
            Some(x) => Some(pca_softmax(x, num_classes.min(x.ncols()), cfg.temperature)?),
            None => None,
        };
        Ok(Self { cfg, state: None, pca_soft })
    }

    pub fn pca_features(&self) -> Option<&Array2<f64>> {
        self.pca_soft.as_ref()
    }

    /// Builds features from the current graph and model, refits the DGMM, and
    /// advances the threshold.
    pub fn step(&mut self, bundle: &GraphBundle, gnn: &TrainedGnn) -> Result<DetectorOutput> {
        let m = build_hybrid_features(&bundle.adjacency, &gnn.logits, self.cfg.temperature, self.pca_soft.as_ref())?;
        let m = if self.cfg.standardize { standardize_columns(&m) } else { m };
        let mut dcfg = self.cfg.dgmm;
        if dcfg.components == 0 {
            dcfg.components = bundle.num_classes.max(1);
        }
        let model = dgmm_train(&m, &dcfg)?;
        let energies = dgmm_energy(&model, &m)?;
        let e = energies.to_vec();
        let state = match self.state {
            None => ThresholdState::init(&e, self.cfg.tau, self.cfg.beta)?,
            Some(s) => s.update(&e),
        };
        self.state = Some(state);
        Ok(classdiv_detect(&energies, &state))
    }
}

/// Writes `node,score,is_victim,step` rows for each recorded detector output.
pub fn write_diagnostics(path: impl AsRef<Path>, outputs: &[(usize, DetectorOutput)]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(f, "node,score,is_victim,step")?;
        for (step, out) in outputs {
            for (i, (&s, &v)) in out.scores.iter().zip(&out.is_victim).enumerate() {
                writeln!(f, "{i},{s:?},{},{step}", v as u8)?;
            }
        }
        f.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}
