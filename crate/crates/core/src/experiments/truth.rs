//! Ground-truth mixtures of the synthetic recovery experiment.

use serde::{Deserialize, Serialize};

use crate::mixture::{ComponentParams, IndexSet, SparseMixture};

/// Covariance structure of the synthetic ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Isotropic covariances.
    A,
    /// Correlated covariances.
    B,
}

impl std::str::FromStr for Setting {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "a" | "A" => Ok(Setting::A),
            "b" | "B" => Ok(Setting::B),
            other => Err(crate::Error::InvalidInput(format!("unknown setting '{other}'"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::A => "a",
            Setting::B => "b",
        })
    }
}

/// Ambient dimension of the synthetic ground truth.
pub const TRUTH_DIM: usize = 10;

/// Index sets of the six ground-truth components.
pub fn truth_couplings() -> Vec<IndexSet> {
    [&[0, 1][..], &[2, 3], &[4, 5, 6], &[6, 7], &[8, 9], &[2]]
        .iter()
        .map(|u| IndexSet::new(u.to_vec()).expect("distinct indices"))
        .collect()
}

pub const TRUTH_ALPHA: [f64; 6] = [0.2, 0.2, 0.2, 0.2, 0.1, 0.1];
const SIGMA2: f64 = 0.01;

/// The six-component wrapped normal mixture on `T^10`.
pub fn build_ground_truth(setting: Setting) -> SparseMixture {
    let corr2 = |c: f64| vec![1.0, c, c, 1.0];
    let correlations: Vec<Vec<f64>> = match setting {
        Setting::A => vec![
            corr2(0.0),
            corr2(0.0),
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            corr2(0.0),
            corr2(0.0),
            vec![1.0],
        ],
        Setting::B => vec![
            corr2(0.5),
            corr2(0.5),
            vec![1.0, 0.3, 0.2, 0.3, 1.0, 0.1, 0.2, 0.1, 1.0],
            corr2(-0.6),
            corr2(0.1),
            vec![1.0],
        ],
    };
    let components = truth_couplings()
        .into_iter()
        .zip(correlations)
        .map(|(u, c)| ComponentParams::Wrapped {
            mu: vec![0.5; u.len()],
            sigma: c.iter().map(|v| SIGMA2 * v).collect(),
            u,
        })
        .collect();
    SparseMixture::new(TRUTH_DIM, TRUTH_ALPHA.to_vec(), components).expect("ground truth is valid")
}
