//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.
//!
//! ```toml
//! scales = [1, 2, 3]
//! gallery_scales = [1, 2, 3]   # omit to reuse `scales`
//! normalization = "none"   # or "unit_l2"
//! workers = 0              # 0 = all cores
//! seed = 0
//! network = "c8,p,c16,p,c16"
//!
//! [solver]
//! beta = 0.4
//! tol_kkt = 1e-8
//! max_iters = 1000
//!
//! [train]
//! lr = 0.0005
//! seed = 0
//! margin = 1.5             # omit for 2 x output channels
//! epochs = 25
//! batch_size = 8
//! pretrain_epochs = 15
//! pretrain_lr = 0.02
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::feature_maps::Normalization;
use crate::learning::{FcnConfig, FineTuneOptions, PretrainOptions};
use crate::scalar::Scalar;
use crate::sparse_solver::{SolverOptions, DEFAULT_BETA, DEFAULT_MAX_ITERS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub beta: f64,
    pub tol_kkt: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub seed: u64,
    pub margin: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub scales: Vec<usize>,
    /// Gallery scales when they differ from the probe scales.
    pub gallery_scales: Option<Vec<usize>>,
    pub normalization: Normalization,
    pub workers: usize,
    pub seed: u64,
    pub network: String,
    pub solver: SolverConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 3],
            gallery_scales: None,
            normalization: Normalization::None,
            workers: 0,
            seed: 0,
            network: FcnConfig::desk(3).to_string(),
            solver: SolverConfig {
                beta: DEFAULT_BETA,
                tol_kkt: f64::default_kkt_tol(),
                max_iters: DEFAULT_MAX_ITERS,
            },
            train: TrainConfig {
                lr: 5e-4,
                seed: 0,
                margin: None,
                epochs: 25,
                batch_size: 8,
                pretrain_epochs: 15,
                pretrain_lr: 0.02,
            },
        }
    }
}

/// A partially specified configuration, as read from a file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scales: Option<Vec<usize>>,
    pub gallery_scales: Option<Vec<usize>>,
    pub normalization: Option<Normalization>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub network: Option<String>,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub train: TrainFile,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    pub beta: Option<f64>,
    pub tol_kkt: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub pretrain_lr: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DsrError::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DsrError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub beta: Option<f64>,
    pub scales: Option<Vec<usize>>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl Config {
    pub fn resolve(file: Option<&ConfigFile>, cli: &Overrides) -> Result<Self> {
        let mut c = Config::default();
        if let Some(f) = file {
            c.apply_file(f);
        }
        if let Some(v) = cli.beta {
            c.solver.beta = v;
        }
        if let Some(v) = &cli.scales {
            c.scales = v.clone();
        }
        if let Some(v) = cli.workers {
            c.workers = v;
        }
        if let Some(v) = cli.seed {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn apply_file(&mut self, f: &ConfigFile) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut self.scales, &f.scales);
        if f.gallery_scales.is_some() {
            self.gallery_scales = f.gallery_scales.clone();
        }
        set(&mut self.normalization, &f.normalization);
        set(&mut self.workers, &f.workers);
        set(&mut self.seed, &f.seed);
        set(&mut self.network, &f.network);
        set(&mut self.solver.beta, &f.solver.beta);
        set(&mut self.solver.tol_kkt, &f.solver.tol_kkt);
        set(&mut self.solver.max_iters, &f.solver.max_iters);
        set(&mut self.train.lr, &f.train.lr);
        set(&mut self.train.seed, &f.train.seed);
        if f.train.margin.is_some() {
            self.train.margin = f.train.margin;
        }
        set(&mut self.train.epochs, &f.train.epochs);
        set(&mut self.train.batch_size, &f.train.batch_size);
        set(&mut self.train.pretrain_epochs, &f.train.pretrain_epochs);
        set(&mut self.train.pretrain_lr, &f.train.pretrain_lr);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DsrError::Config(m));
        if !(self.solver.beta.is_finite() && self.solver.beta >= 0.0) {
            return bad(format!(
                "solver.beta must be a finite value >= 0, got {}",
                self.solver.beta
            ));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad(format!(
                "scales must be non-empty positive integers, got {:?}",
                self.scales
            ));
        }
        if let Some(g) = &self.gallery_scales {
            if g.is_empty() || g.contains(&0) {
                return bad(format!(
                    "gallery_scales must be non-empty positive integers, got {g:?}"
                ));
            }
        }
        if !(self.solver.tol_kkt.is_finite() && self.solver.tol_kkt > 0.0) {
            return bad(format!(
                "solver.tol_kkt must be positive, got {}",
                self.solver.tol_kkt
            ));
        }
        if self.solver.max_iters == 0 {
            return bad("solver.max_iters must be at least 1".into());
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return bad(format!("train.lr must be >= 0, got {}", self.train.lr));
        }
        if !(self.train.pretrain_lr.is_finite() && self.train.pretrain_lr >= 0.0) {
            return bad(format!(
                "train.pretrain_lr must be >= 0, got {}",
                self.train.pretrain_lr
            ));
        }
        if let Some(m) = self.train.margin {
            if !(m.is_finite() && m > 0.0) {
                return bad(format!("train.margin must be positive, got {m}"));
            }
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        self.network_config()?;
        Ok(())
    }

    pub fn network_config(&self) -> Result<FcnConfig> {
        self.network
            .parse()
            .map_err(|e: DsrError| DsrError::Config(format!("network: {e}")))
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        SolverOptions {
            tol_kkt: self.solver.tol_kkt,
            max_iters: self.solver.max_iters,
        }
    }

    pub fn fine_tune_options(&self) -> FineTuneOptions<f64> {
        FineTuneOptions {
            beta: self.solver.beta,
            margin: self.train.margin,
            scales: vec![1],
            solver: self.solver_options(),
            batch_size: self.train.batch_size,
        }
    }

    pub fn pretrain_options(&self) -> PretrainOptions {
        PretrainOptions {
            epochs: self.train.pretrain_epochs,
            learning_rate: self.train.pretrain_lr,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
        }
    }
}

/// Parses `"1,2,3"`.
pub fn parse_scales(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| DsrError::Config(format!("bad scale {t:?} in {s:?}")))
        })
        .collect()
}
