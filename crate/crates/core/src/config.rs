//! Run configuration (one JSON document) and problem construction.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{assemble_family, Mesh, StochasticMatrixFamily};
use crate::kle::{kle_1d, kle_2d, KleMode2D};
use crate::newton::NewtonConfig;
use crate::pce::GalerkinTensors;

/// How `sigma_a` enters the fluctuation matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// KLE of the unit-variance kernel; `A_k` carries `sigma_a sqrt(gamma_k)`.
    UnitKernelScaled,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_elem: usize,
    pub m: usize,
    pub r: usize,
    pub sigma_a: f64,
    pub correlation_lengths: [f64; 2],
    pub variance_convention: VarianceConvention,
    /// Mean of the random coefficient.
    pub mean_coefficient: f64,
    /// One-dimensional KLE modes generated per direction.
    pub kle_modes_1d: usize,
    pub newton: NewtonConfig,
    pub mc_samples: usize,
    pub pdf_samples: usize,
    pub pdf_bins: usize,
    /// Dump the dense eigenvector coefficients next to the factors.
    pub write_dense_phi: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_elem: 8,
            m: 6,
            r: 4,
            sigma_a: 0.01,
            correlation_lengths: [1.0, 1.0],
            variance_convention: VarianceConvention::UnitKernelScaled,
            mean_coefficient: 1.0,
            kle_modes_1d: 10,
            newton: NewtonConfig::default(),
            mc_samples: 10_000,
            pdf_samples: 10_000,
            pdf_bins: 50,
            write_dense_phi: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Assembled matrices and chaos tensors for one configuration.
pub struct Problem {
    pub family: StochasticMatrixFamily,
    pub tensors: GalerkinTensors,
    pub kle: Vec<KleMode2D>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elem < 2 {
            return Err(Error::Config(format!("n_elem must be >= 2, got {}", self.n_elem)));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite()) {
            return Err(Error::Config(format!("sigma_a must be finite and >= 0, got {}", self.sigma_a)));
        }
        if self.correlation_lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("correlation lengths must be positive".into()));
        }
        if !(self.mean_coefficient > 0.0 && self.mean_coefficient.is_finite()) {
            return Err(Error::Config("mean_coefficient must be positive".into()));
        }
        if self.kle_modes_1d < self.m {
            return Err(Error::Config(format!(
                "kle_modes_1d = {} cannot cover m = {}",
                self.kle_modes_1d, self.m
            )));
        }
        if self.newton.eigen_index > (self.n_elem - 1).pow(2) {
            return Err(Error::Config(format!(
                "eigen_index {} exceeds N_x = {}",
                self.newton.eigen_index,
                (self.n_elem - 1).pow(2)
            )));
        }
        if self.mc_samples == 0 || self.pdf_samples == 0 || self.pdf_bins == 0 {
            return Err(Error::Config("sample and bin counts must be positive".into()));
        }
        crate::pce::count_basis(self.m, self.r).map_err(|e| Error::Config(e.to_string()))?;
        self.newton.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&canon).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build(&self) -> Result<Problem> {
        self.validate()?;
        let mesh = Mesh::new(self.n_elem)?;
        let [l1, l2] = self.correlation_lengths;
        let mx = kle_1d(1.0 / l1, 1.0, self.kle_modes_1d)?;
        let my = kle_1d(1.0 / l2, 1.0, self.kle_modes_1d)?;
        let kle = kle_2d(&mx, &my, self.m)?;
        let family = assemble_family(&mesh, &kle, self.sigma_a, self.mean_coefficient)?;
        let tensors = GalerkinTensors::for_degree(self.m, self.r)?;
        Ok(Problem { family, tensors, kle })
    }
}
