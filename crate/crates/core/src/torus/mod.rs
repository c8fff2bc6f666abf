//! Special functions for circular distributions: truncated wrapped-normal
//! densities, products of von Mises densities, Bessel ratios and the
//! quadrant-aware arctangent.

mod bessel;
mod wrapped;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bessel::{
    bessel_i0_scaled, bessel_i1_scaled, bessel_ratio, bessel_ratio_derivative,
    bessel_ratio_inverse, log_bessel_i0,
};
pub use wrapped::{spd_guard, unpack_offset, WrappedNormal, WrappedNormal1d};
pub(crate) use wrapped::cholesky;

/// Lattice truncation radius per coordinate for wrapped-normal sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruncationLevel(u32);

impl TruncationLevel {
    pub const DEFAULT: TruncationLevel = TruncationLevel(3);
    /// Used once any component variance exceeds [`Self::WIDE_VARIANCE`].
    pub const WIDE: TruncationLevel = TruncationLevel(5);
    pub const WIDE_VARIANCE: f64 = 0.25;

    pub const fn new(l_max: u32) -> Self {
        TruncationLevel(l_max)
    }

    pub const fn l_max(self) -> u32 {
        self.0
    }

    /// Number of offsets per coordinate, `2·l_max + 1`.
    pub const fn side(self) -> usize {
        2 * self.0 as usize + 1
    }

    /// Default level, escalated when `max_variance` is wide.
    pub fn for_max_variance(max_variance: f64) -> Self {
        if max_variance > Self::WIDE_VARIANCE {
            Self::WIDE
        } else {
            Self::DEFAULT
        }
    }
}

impl Default for TruncationLevel {
    fn default() -> Self {
        Self::DEFAULT
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}

/// Truncated wrapped-normal density `Σ_l N(x + l | μ, Σ)`, `Σ` row-major.
pub fn wrapped_normal_pdf(x: &[f64], mu: &[f64], sigma: &[f64], trunc: TruncationLevel) -> Result<f64> {
    check_len(mu.len(), x.len())?;
    let wn = WrappedNormal::new(mu, sigma)?;
    Ok(wn.log_pdf(x, trunc).exp())
}

/// All lattice terms `(l, ln N(x + l | μ, Σ))`; combine with log-sum-exp.
pub fn wrapped_normal_logpdf_terms(
    x: &[f64],
    mu: &[f64],
    sigma: &[f64],
    trunc: TruncationLevel,
) -> Result<Vec<(Vec<i32>, f64)>> {
    check_len(mu.len(), x.len())?;
    WrappedNormal::new(mu, sigma)?.log_terms(x, trunc)
}

/// `ln` of the von Mises factor `exp(κ cos 2π(x−μ)) / I₀(κ)`.
#[inline]
pub fn von_mises_log_pdf_1d(x: f64, mu: f64, kappa: f64) -> f64 {
    kappa * (2.0 * PI * (x - mu)).cos() - log_bessel_i0(kappa)
}

/// Product of univariate von Mises densities on `T^n`.
pub fn von_mises_product_pdf(x: &[f64], mu: &[f64], kappa: &[f64]) -> Result<f64> {
    check_len(mu.len(), x.len())?;
    check_len(kappa.len(), x.len())?;
    if let Some(k) = kappa.iter().find(|k| !(**k > 0.0)) {
        return Err(Error::InvalidParameter(format!("concentration must be positive, got {k}")));
    }
    let log: f64 = x
        .iter()
        .zip(mu)
        .zip(kappa)
        .map(|((x, m), k)| von_mises_log_pdf_1d(*x, *m, *k))
        .sum();
    Ok(log.exp())
}

/// Quadrant-specific inverse tangent of `S/C`, with values in `[0, 2π)`.
pub fn arctan_star(s: f64, c: f64) -> Result<f64> {
    let angle = if c > 0.0 && s >= 0.0 {
        (s / c).atan()
    } else if c == 0.0 && s > 0.0 {
        PI / 2.0
    } else if c < 0.0 {
        (s / c).atan() + PI
    } else if c > 0.0 && s < 0.0 {
        (s / c).atan() + 2.0 * PI
    } else if c == 0.0 && s < 0.0 {
        1.5 * PI
    } else {
        return Err(Error::DegenerateDirection);
    };
    // atan(tiny negative) + 2π can round up to exactly 2π
    Ok(if angle >= 2.0 * PI { 0.0 } else { angle })
}

/// Reduces a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Circular mean in `[0,1)` and mean resultant length of weighted angles.
pub fn weighted_circular_moments(x: &[f64], w: &[f64]) -> Option<(f64, f64)> {
    let (mut c, mut s, mut tot) = (0.0, 0.0, 0.0);
    for (xi, wi) in x.iter().zip(w) {
        let a = 2.0 * PI * xi;
        c += wi * a.cos();
        s += wi * a.sin();
        tot += wi;
    }
    if !(tot > 0.0) {
        return None;
    }
    let mean = arctan_star(s, c).map(|a| wrap_unit(a / (2.0 * PI))).unwrap_or(0.0);
    Some((mean, ((c * c + s * s).sqrt() / tot).min(1.0)))
}
