//! Wrapped normal densities on `T^n = [0,1)^n` with a truncated lattice sum.

use nalgebra::DMatrix;

use super::TruncationLevel;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lattice terms whose Gaussian exponent is more than this below the
/// nearest-lattice-point term are skipped by the fast evaluators.
const NEGLIGIBLE_EXPONENT: f64 = 60.0;

/// Cholesky factor of an SPD matrix, row-major lower triangle.
pub(crate) fn cholesky(sigma: &[f64], n: usize) -> Result<Vec<f64>> {
    if sigma.len() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: sigma.len(),
        });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (sigma[i * n + j], sigma[j * n + i]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    let m = DMatrix::from_row_slice(n, n, sigma);
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Returns `sigma` symmetrized and, if the Cholesky factorization fails,
/// with `1e-8·trace/n` added to the diagonal once.
pub fn spd_guard(sigma: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut s = sigma.to_vec();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (s[i * n + j] + s[j * n + i]);
            s[i * n + j] = avg;
            s[j * n + i] = avg;
        }
    }
    if cholesky(&s, n).is_ok() {
        return Ok(s);
    }
    let trace: f64 = (0..n).map(|i| s[i * n + i]).sum();
    let jitter = 1e-8 * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
    for i in 0..n {
        s[i * n + i] += jitter;
    }
    cholesky(&s, n)?;
    Ok(s)
}

/// A wrapped normal distribution `N_w(μ, Σ)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct WrappedNormal {
    dim: usize,
    mu: Vec<f64>,
    chol: Vec<f64>,
    /// `-(n/2) ln 2π - ½ ln|Σ|`
    log_norm: f64,
    /// Diagonal of `Σ`; bounds the exponent per coordinate.
    var: Vec<f64>,
}

impl WrappedNormal {
    pub fn new(mu: &[f64], sigma: &[f64]) -> Result<Self> {
        let n = mu.len();
        let chol = cholesky(sigma, n)?;
        let log_det: f64 = (0..n).map(|i| 2.0 * chol[i * n + i].ln()).sum();
        Ok(Self {
            dim: n,
            mu: mu.to_vec(),
            chol,
            log_norm: -0.5 * (n as f64) * LN_2PI - 0.5 * log_det,
            var: (0..n).map(|i| sigma[i * n + i]).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    /// Row-major lower Cholesky factor of `Σ`.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `(y-μ)ᵀ Σ⁻¹ (y-μ)` for `y − μ = diff`, via forward substitution.
    #[inline]
    fn mahalanobis(&self, diff: &[f64], scratch: &mut [f64]) -> f64 {
        let n = self.dim;
        let mut q = 0.0;
        for i in 0..n {
            let mut s = diff[i];
            let row = &self.chol[i * n..i * n + i];
            for (j, lij) in row.iter().enumerate() {
                s -= lij * scratch[j];
            }
            let z = s / self.chol[i * n + i];
            scratch[i] = z;
            q += z * z;
        }
        q
    }

    /// Log Gaussian density `ln N(x + l | μ, Σ)` for one lattice offset.
    pub fn log_gaussian_at(&self, x: &[f64], offset: &[i32]) -> f64 {
        let diff: Vec<f64> = x
            .iter()
            .zip(offset)
            .zip(&self.mu)
            .map(|((xi, li), mi)| xi + *li as f64 - mi)
            .collect();
        let mut scratch = vec![0.0; self.dim];
        self.log_norm - 0.5 * self.mahalanobis(&diff, &mut scratch)
    }

    /// Every term `(l, ln N(x + l | μ, Σ))` for `l ∈ {−l_max..l_max}^n`,
    /// in lexicographic order of `l` (first coordinate slowest).
    pub fn log_terms(&self, x: &[f64], trunc: TruncationLevel) -> Result<Vec<(Vec<i32>, f64)>> {
        self.check_dim(x)?;
        let lm = trunc.l_max() as i32;
        let side = (2 * lm + 1) as usize;
        let total = side.pow(self.dim as u32);
        let mut out = Vec::with_capacity(total);
        let mut offset = vec![-lm; self.dim];
        let mut diff = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        for _ in 0..total {
            for j in 0..self.dim {
                diff[j] = x[j] + offset[j] as f64 - self.mu[j];
            }
            let lp = self.log_norm - 0.5 * self.mahalanobis(&diff, &mut scratch);
            out.push((offset.clone(), lp));
            advance(&mut offset, -lm, lm);
        }
        Ok(out)
    }

    /// Visits the non-negligible lattice terms as `(packed offset, x + l, ln N)`.
    ///
    /// Terms more than `e^{-60}` below the nearest-lattice-point term are
    /// skipped; the per-coordinate bound `(y_j − μ_j)²/Σ_jj ≤ (y−μ)ᵀΣ⁻¹(y−μ)`
    /// prunes whole slabs of the lattice before any quadratic form is formed.
    pub(crate) fn for_each_term<F>(&self, x: &[f64], trunc: TruncationLevel, mut visit: F)
    where
        F: FnMut(u32, &[f64], f64),
    {
        let n = self.dim;
        let lm = trunc.l_max() as i32;
        let side = 2 * lm + 1;
        let mut diff = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for j in 0..n {
            let d = x[j] - self.mu[j];
            diff[j] = d + (-d).round().clamp(-lm as f64, lm as f64);
        }
        let q_star = self.mahalanobis(&diff, &mut scratch);
        let budget = q_star + 2.0 * NEGLIGIBLE_EXPONENT;
        // allowed offsets per coordinate
        let mut lo = vec![0i32; n];
        let mut hi = vec![0i32; n];
        for j in 0..n {
            let d = x[j] - self.mu[j];
            let r = (self.var[j] * budget).sqrt();
            lo[j] = ((-r - d).ceil() as i32).max(-lm);
            hi[j] = ((r - d).floor() as i32).min(lm);
            if lo[j] > hi[j] {
                // rounding at the boundary; keep the nearest point
                let c = (-d).round().clamp(-lm as f64, lm as f64) as i32;
                lo[j] = c;
                hi[j] = c;
            }
        }
        let mut offset = lo.clone();
        let mut y = vec![0.0; n];
        loop {
            let mut packed = 0u32;
            for j in 0..n {
                y[j] = x[j] + offset[j] as f64;
                diff[j] = y[j] - self.mu[j];
                packed = packed * side as u32 + (offset[j] + lm) as u32;
            }
            let q = self.mahalanobis(&diff, &mut scratch);
            if q <= budget {
                visit(packed, &y, self.log_norm - 0.5 * q);
            }
            // odometer over [lo, hi]
            let mut j = n;
            loop {
                if j == 0 {
                    return;
                }
                j -= 1;
                if offset[j] < hi[j] {
                    offset[j] += 1;
                    break;
                }
                offset[j] = lo[j];
            }
        }
    }

    /// `ln N_w(x | μ, Σ)` over the truncated lattice.
    pub fn log_pdf(&self, x: &[f64], trunc: TruncationLevel) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        let mut max = f64::NEG_INFINITY;
        let mut terms: smallterms::Terms = smallterms::Terms::default();
        self.for_each_term(x, trunc, |_, _, lp| {
            if lp > max {
                max = lp;
            }
            terms.push(lp);
        });
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

mod smallterms {
    /// Inline buffer for the handful of surviving lattice terms.
    #[derive(Default)]
    pub struct Terms {
        inline: [f64; 16],
        len: usize,
        spill: Vec<f64>,
    }

    impl Terms {
        #[inline]
        pub fn push(&mut self, v: f64) {
            if self.len < 16 {
                self.inline[self.len] = v;
            } else {
                self.spill.push(v);
            }
            self.len += 1;
        }

        pub fn iter(&self) -> impl Iterator<Item = &f64> {
            self.inline[..self.len.min(16)].iter().chain(self.spill.iter())
        }
    }
}

fn advance(offset: &mut [i32], lo: i32, hi: i32) {
    for v in offset.iter_mut().rev() {
        if *v < hi {
            *v += 1;
            return;
        }
        *v = lo;
    }
}

/// Decodes a packed lattice offset produced by the fast term visitor.
pub fn unpack_offset(mut packed: u32, dim: usize, trunc: TruncationLevel) -> Vec<i32> {
    let lm = trunc.l_max() as i32;
    let side = (2 * lm + 1) as u32;
    let mut out = vec![0; dim];
    for j in (0..dim).rev() {
        out[j] = (packed % side) as i32 - lm;
        packed /= side;
    }
    out
}

/// Univariate wrapped normal `N_w(μ, σ²)`.
#[derive(Debug, Clone, Copy)]
pub struct WrappedNormal1d {
    pub mu: f64,
    pub var: f64,
    log_norm: f64,
    inv_var: f64,
}

impl WrappedNormal1d {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "variance must be positive, got {var}"
            )));
        }
        Ok(Self {
            mu,
            var,
            log_norm: -0.5 * (LN_2PI + var.ln()),
            inv_var: 1.0 / var,
        })
    }

    #[inline]
    pub fn log_gaussian(&self, y: f64) -> f64 {
        let d = y - self.mu;
        self.log_norm - 0.5 * d * d * self.inv_var
    }

    /// Offset range `[lo, hi]` holding every non-negligible term at `x`.
    #[inline]
    pub fn offset_range(&self, x: f64, trunc: TruncationLevel) -> (i32, i32) {
        let lm = trunc.l_max() as i32;
        let d = x - self.mu;
        let near = (-d).round().clamp(-lm as f64, lm as f64);
        let q_star = (d + near).powi(2) * self.inv_var;
        let r = (self.var * (q_star + 2.0 * NEGLIGIBLE_EXPONENT)).sqrt();
        let lo = ((-r - d).ceil() as i32).max(-lm);
        let hi = ((r - d).floor() as i32).min(lm);
        if lo > hi {
            (near as i32, near as i32)
        } else {
            (lo, hi)
        }
    }

    /// `ln N_w(x | μ, σ²)`.
    #[inline]
    pub fn log_pdf(&self, x: f64, trunc: TruncationLevel) -> f64 {
        let (lo, hi) = self.offset_range(x, trunc);
        if lo == hi {
            return self.log_gaussian(x + lo as f64);
        }
        let mut max = f64::NEG_INFINITY;
        for m in lo..=hi {
            max = max.max(self.log_gaussian(x + m as f64));
        }
        let mut s = 0.0;
        for m in lo..=hi {
            s += (self.log_gaussian(x + m as f64) - max).exp();
        }
        max + s.ln()
    }
}
