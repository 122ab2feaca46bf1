//! Experiment configuration, read from TOML.
//!
//! ```toml
//! algorithm = "compare"           # amp | als | se | phase | compare
//! dims = [200, 160, 250]
//! rank = 1
//! priors = ["gaussian(0.2,1)"]    # one entry per mode, or one for all
//! deltas = [0.05, 0.1, 0.2]       # or `delta = 0.1`
//! init = "uninformed"             # informed | uninformed
//! seeds = [0, 1, 2]
//! output = "results"
//!
//! [amp]
//! damping = 0.5
//!
//! [als]
//! ridge = 1e-10
//!
//! [phase]
//! nx_grid = [0.5, 1.0, 2.0]
//! ```
//!
//! Every field has a default; the effective configuration, defaults
//! included, is echoed next to the results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amp::{AmpConfig, OnsagerNorm, OnsagerTerm};
use crate::als::AlsConfig;
use crate::error::{Error, Result};
use crate::phase::{InitRegime, PhaseQuery};
use crate::priors::PriorSpec;
use crate::state_evolution::{ModeScaling, SeParams};
use crate::tensor::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Amp,
    Als,
    Se,
    Phase,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpSection {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub blend: f64,
    pub scaling: ModeScaling,
    pub onsager_norm: OnsagerNorm,
    pub onsager: OnsagerTerm,
}

impl Default for AmpSection {
    fn default() -> Self {
        let d = AmpConfig::default();
        Self {
            damping: d.damping,
            tol: d.tol,
            max_iter: d.max_iter,
            blend: 1.0,
            scaling: d.scaling,
            onsager_norm: d.onsager_norm,
            onsager: d.onsager,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsSection {
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AlsSection {
    fn default() -> Self {
        let d = AlsConfig::default();
        Self {
            ridge: d.ridge,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeSection {
    pub quadrature_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub mc_samples: usize,
}

impl Default for SeSection {
    fn default() -> Self {
        Self {
            quadrature_nodes: 41,
            tol: 1e-10,
            max_iter: 10_000,
            mc_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSection {
    pub bracket: [f64; 2],
    pub mse_threshold: f64,
    pub bisect_tol: f64,
    pub nx_grid: Vec<f64>,
    pub mu1_grid: Vec<f64>,
    pub mu2_grid: Vec<f64>,
}

impl Default for PhaseSection {
    fn default() -> Self {
        Self {
            bracket: [1e-4, 10.0],
            mse_threshold: 0.75,
            bisect_tol: 1e-4,
            nx_grid: Vec::new(),
            mu1_grid: Vec::new(),
            mu2_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub priors: Vec<PriorSpec>,
    pub delta: Option<f64>,
    pub deltas: Vec<f64>,
    pub init: InitRegime,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub deterministic: bool,
    pub threads: usize,
    /// Aligned factor MSE below which a run counts as a success.
    pub success_threshold: f64,
    pub amp: AmpSection,
    pub als: AlsSection,
    pub se: SeSection,
    pub phase: PhaseSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Amp,
            dims: vec![50, 50, 50],
            rank: 1,
            priors: vec![PriorSpec::Gaussian { mu: 0.2, sigma2: 1.0 }],
            delta: None,
            deltas: Vec::new(),
            init: InitRegime::Uninformed,
            seeds: vec![0],
            output: PathBuf::from("results"),
            deterministic: true,
            threads: 0,
            success_threshold: 0.5,
            amp: AmpSection::default(),
            als: AlsSection::default(),
            se: SeSection::default(),
            phase: PhaseSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.shape().map_err(wrap)?;
        self.mode_priors().map_err(wrap)?;
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !self.deltas.is_empty() {
                return Err(Error::Config("give either `delta` or `deltas`, not both".into()));
            }
            if !(d > 0.0) {
                return Err(Error::Config(format!("delta must be positive, got {d}")));
            }
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Config(format!("delta must be positive, got {d}")));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::Config("success_threshold must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.amp.blend) {
            return Err(Error::Config(format!("blend {} not in [0, 1]", self.amp.blend)));
        }
        self.amp_config().validate().map_err(wrap)?;
        self.als_config(0).validate().map_err(wrap)?;
        if self.se.quadrature_nodes < 3 {
            return Err(Error::Config("quadrature_nodes must be at least 3".into()));
        }
        if matches!(self.algorithm, Algorithm::Amp | Algorithm::Als | Algorithm::Compare | Algorithm::Se)
            && self.delta_grid().is_empty()
        {
            return Err(Error::Config("this algorithm needs `delta` or `deltas`".into()));
        }
        if self.algorithm == Algorithm::Phase {
            self.phase_query().map_err(wrap)?;
        }
        Ok(())
    }

    pub fn shape(&self) -> Result<TensorShape> {
        TensorShape::new(&self.dims)
    }

    /// One prior per mode; a single entry applies to every mode.
    pub fn mode_priors(&self) -> Result<Vec<PriorSpec>> {
        let p = self.dims.len();
        match self.priors.len() {
            1 => Ok(vec![self.priors[0]; p]),
            n if n == p => Ok(self.priors.clone()),
            n => Err(Error::Config(format!("{n} priors for {p} modes"))),
        }
    }

    pub fn delta_grid(&self) -> Vec<f64> {
        match self.delta {
            Some(d) => vec![d],
            None => self.deltas.clone(),
        }
    }

    pub fn amp_config(&self) -> AmpConfig {
        AmpConfig {
            damping: self.amp.damping,
            tol: self.amp.tol,
            max_iter: self.amp.max_iter,
            scaling: self.amp.scaling,
            onsager_norm: self.amp.onsager_norm,
            onsager: self.amp.onsager,
        }
    }

    pub fn als_config(&self, seed: u64) -> AlsConfig {
        AlsConfig {
            rank: self.rank,
            ridge: self.als.ridge,
            tol: self.als.tol,
            max_iter: self.als.max_iter,
            seed,
        }
    }

    pub fn se_params(&self, delta: f64) -> Result<SeParams> {
        let shape = self.shape()?;
        let mut p = SeParams::new(self.mode_priors()?, &shape, delta)?;
        p.rank = self.rank;
        p.quadrature_nodes = self.se.quadrature_nodes;
        p.mc_samples = self.se.mc_samples;
        p.scaling = self.amp.scaling;
        Ok(p)
    }

    pub fn phase_query(&self) -> Result<PhaseQuery> {
        let shape = self.shape()?;
        let mut q = PhaseQuery::new(self.mode_priors()?, shape.ratios().to_vec())?;
        q.delta_bracket = (self.phase.bracket[0], self.phase.bracket[1]);
        q.mse_threshold = self.phase.mse_threshold;
        q.bisect_tol = self.phase.bisect_tol;
        q.se_tol = self.se.tol;
        q.se_max_iter = self.se.max_iter;
        q.quadrature_nodes = self.se.quadrature_nodes;
        q.scaling = self.amp.scaling;
        q.validate()?;
        Ok(q)
    }
}
