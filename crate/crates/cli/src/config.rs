//! Flat JSON run configuration. Keys missing from the file take their
//! documented defaults; command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use spamm::em::EmConfig;
use spamm::experiments::{ExperimentConfig, ImageConfig};
use spamm::selection::SelectionConfig;
use spamm::sparsity::ProxConfig;
use spamm::Family;

/// Every key of the configuration file. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Component family: wrapped, diag or vonmises [default: diag]
    #[arg(long)]
    pub family: Option<Family>,
    /// Number of expansion rounds of the selection heuristic [default: 3; 4 for image]
    #[arg(long)]
    pub d_s: Option<usize>,
    /// Critical value of the weighted KS test [default: 3.0]
    #[arg(long)]
    pub c1: Option<f64>,
    /// Threshold on absolute weighted correlations [default: 0.2]
    #[arg(long)]
    pub c2: Option<f64>,
    /// Weight of the support size in the reported objective [default: 0.1·N/1000]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Step size of the sparsity prox [default: 0.0005]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Lattice truncation of wrapped densities, 1..=8 [default: 3, or 5 when a variance exceeds 0.25]
    #[arg(long)]
    pub l_max: Option<u32>,
    /// Uniform draws per relative-error estimate [default: 100000]
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Symmetrized KL threshold for merging components [default: 0.15]
    #[arg(long)]
    pub kl_threshold: Option<f64>,
    /// Relative tolerance of a single EM run [default: 1e-7]
    #[arg(long)]
    pub em_tol: Option<f64>,
    /// Iteration cap of a single EM run [default: 200]
    #[arg(long)]
    pub em_max_iter: Option<usize>,
    /// Relative tolerance of the penalized outer loop [default: 1e-7]
    #[arg(long)]
    pub prox_tol: Option<f64>,
    /// Iteration cap of the penalized outer loop [default: 500]
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Top-level random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeats per experiment [default: 3 quick, 10 full]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Samples per repeat in table experiments [default: 10000]
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Training samples of the image experiment [default: 10000]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test samples of the image experiment [default: 1000]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Labeled samples per class in the image experiment [default: 3]
    #[arg(long)]
    pub n_labeled: Option<usize>,
    /// Output directory [default: depends on the command]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File values, if any, overridden by the keys set in `flags`.
    pub fn load(path: Option<&Path>, flags: &RunConfig) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.overlay(flags);
        Ok(cfg)
    }

    pub fn overlay(&mut self, o: &RunConfig) {
        overlay!(self, o; family, d_s, c1, c2, lambda, gamma, l_max, n_mc, kl_threshold, em_tol,
            em_max_iter, prox_tol, max_outer, seed, repeats, n_samples, n_train, n_test, n_labeled, out_dir);
    }

    /// Names of keys left unset.
    pub fn missing_keys(&self) -> Vec<&'static str> {
        let value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object().expect("config is an object");
        KEYS.iter().copied().filter(|k| obj.get(*k).is_none_or(|v| v.is_null())).collect()
    }

    pub fn log_defaults(&self) {
        for key in self.missing_keys() {
            log::info!("config key '{key}' not set; using its default");
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn n_mc(&self) -> usize {
        self.n_mc.unwrap_or(100_000)
    }

    /// Selection settings starting from `base`.
    pub fn selection_from(&self, base: SelectionConfig) -> Result<SelectionConfig> {
        let mut s = base;
        let def_em = EmConfig::default();
        let def_prox = ProxConfig::default();
        if let Some(f) = self.family {
            s.family = f;
        }
        if let Some(v) = self.d_s {
            s.d_s = v;
        }
        if let Some(v) = self.c1 {
            s.c1 = v;
        }
        if let Some(v) = self.c2 {
            s.c2 = v;
        }
        if let Some(v) = self.kl_threshold {
            s.kl_threshold = v;
        }
        s.prox = ProxConfig {
            gamma: self.gamma.unwrap_or(s.prox.gamma),
            lambda: self.lambda.or(s.prox.lambda),
            tol: self.prox_tol.unwrap_or(def_prox.tol),
            max_outer: self.max_outer.unwrap_or(def_prox.max_outer),
        };
        s.em = EmConfig {
            tol: self.em_tol.unwrap_or(def_em.tol),
            max_iter: self.em_max_iter.unwrap_or(def_em.max_iter),
            l_max: self.l_max.or(def_em.l_max),
            ..s.em
        };
        if let Some(l) = self.l_max {
            if !(1..=8).contains(&l) {
                bail!("l_max must lie in 1..=8, got {l}");
            }
        }
        if let Some(v) = self.kl_threshold {
            if !(v >= 0.0) {
                bail!("kl_threshold must be nonnegative, got {v}");
            }
        }
        if self.n_mc == Some(0) {
            bail!("n_mc must be positive");
        }
        if self.repeats == Some(0) {
            bail!("repeats must be positive");
        }
        s.validate()?;
        s.prox.validate()?;
        Ok(s)
    }

    pub fn selection(&self) -> Result<SelectionConfig> {
        self.selection_from(SelectionConfig::default())
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            selection: self.selection()?,
            n_mc: self.n_mc(),
            ..ExperimentConfig::default()
        })
    }

    pub fn image(&self) -> Result<ImageConfig> {
        let def = ImageConfig::default();
        let cfg = ImageConfig {
            n_train: self.n_train.unwrap_or(def.n_train),
            n_test: self.n_test.unwrap_or(def.n_test),
            n_labeled: self.n_labeled.unwrap_or(def.n_labeled),
            selection: self.selection_from(def.selection)?,
            ..def
        };
        if cfg.n_train == 0 || cfg.n_test == 0 || cfg.n_labeled == 0 {
            bail!("n_train, n_test and n_labeled must be positive");
        }
        Ok(cfg)
    }
}

/// All configuration keys, in documentation order.
pub const KEYS: [&str; 20] = [
    "family",
    "d_s",
    "c1",
    "c2",
    "lambda",
    "gamma",
    "l_max",
    "n_mc",
    "kl_threshold",
    "em_tol",
    "em_max_iter",
    "prox_tol",
    "max_outer",
    "seed",
    "repeats",
    "n_samples",
    "n_train",
    "n_test",
    "n_labeled",
    "out_dir",
];
