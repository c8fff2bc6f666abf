//! Modified Bessel functions of the first kind, orders 0 and 1, and the
//! mean-resultant ratio `A(κ) = I₁(κ)/I₀(κ)` with its inverse.
//!
//! Values are produced in exponentially scaled form (`e^{-x} I_ν(x)`) so that
//! concentrations in the thousands stay finite.

use crate::error::{Error, Result};

/// Switch point between the power series and the asymptotic expansion.
const SERIES_LIMIT: f64 = 15.0;

fn series_scaled(x: f64, order: u32) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut k) = match order {
        0 => (1.0, 0.0),
        _ => (0.5 * x, 0.0),
    };
    let shift = order as f64;
    let mut sum = term;
    loop {
        k += 1.0;
        term *= q / (k * (k + shift));
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum * (-x).exp()
}

fn asymptotic_scaled(x: f64, order: u32) -> f64 {
    let mu = 4.0 * (order as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= -(mu - odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// `e^{-x} I₀(x)` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x < SERIES_LIMIT {
        series_scaled(x, 0)
    } else {
        asymptotic_scaled(x, 0)
    }
}

/// `e^{-x} I₁(x)` for `x ≥ 0`.
pub fn bessel_i1_scaled(x: f64) -> f64 {
    if x < 0.0 {
        return -bessel_i1_scaled(-x);
    }
    if x < SERIES_LIMIT {
        series_scaled(x, 1)
    } else {
        asymptotic_scaled(x, 1)
    }
}

/// `ln I₀(x)`, finite for any finite `x`.
pub fn log_bessel_i0(x: f64) -> f64 {
    bessel_i0_scaled(x).ln() + x.abs()
}

/// `A(κ) = I₁(κ)/I₀(κ)`.
pub fn bessel_ratio(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "concentration must be positive and finite, got {kappa}"
        )));
    }
    Ok(ratio_unchecked(kappa))
}

fn ratio_unchecked(kappa: f64) -> f64 {
    bessel_i1_scaled(kappa) / bessel_i0_scaled(kappa)
}

/// `A'(κ) = 1 − A(κ)/κ − A(κ)²`.
pub fn bessel_ratio_derivative(kappa: f64) -> Result<f64> {
    let a = bessel_ratio(kappa)?;
    Ok(1.0 - a / kappa - a * a)
}

/// Relative step or bracket width that ends the inversion.
const INVERSE_REL_TOL: f64 = 1e-12;
const BRACKET: (f64, f64) = (1e-12, 1e9);

/// Solves `A(κ) = r` for `κ`.
///
/// Newton's method starts from `r(2 − r²)/(1 − r²)` and stops once a step
/// changes `κ` by less than [`INVERSE_REL_TOL`] relatively. If an iterate
/// leaves `(0, ∞)` or 100 iterations pass, bisection on `[1e-12, 1e9]` takes
/// over.
pub fn bessel_ratio_inverse(r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mean resultant length must lie in (0, 1), got {r}"
        )));
    }
    let mut kappa = r * (2.0 - r * r) / (1.0 - r * r);
    for _ in 0..100 {
        let a = ratio_unchecked(kappa);
        let resid = a - r;
        if resid == 0.0 {
            return Ok(kappa);
        }
        let slope = 1.0 - a / kappa - a * a;
        let next = kappa - resid / slope;
        if !(next > 0.0) || !next.is_finite() {
            break;
        }
        if (next - kappa).abs() <= INVERSE_REL_TOL * next {
            return Ok(next);
        }
        kappa = next;
    }
    bisect_inverse(r)
}

fn bisect_inverse(r: f64) -> Result<f64> {
    let (mut lo, mut hi) = BRACKET;
    if ratio_unchecked(hi) < r {
        return Ok(hi);
    }
    while hi - lo > INVERSE_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio_unchecked(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_matches_reference_values() {
        // I0(2) = 2.2795853023360673
        let i0 = bessel_i0_scaled(2.0) * 2f64.exp();
        assert!((i0 - 2.279_585_302_336_067_3).abs() < 1e-14);
        // I1(1) = 0.5651591039924851
        let i1 = bessel_i1_scaled(1.0) * 1f64.exp();
        assert!((i1 - 0.565_159_103_992_485_1).abs() < 1e-14);
    }

    #[test]
    fn series_and_asymptotic_agree_at_switch() {
        for order in [0, 1] {
            let s = series_scaled(SERIES_LIMIT, order);
            let a = asymptotic_scaled(SERIES_LIMIT, order);
            assert!((s - a).abs() / s < 1e-12, "order {order}: {s} vs {a}");
        }
    }

    #[test]
    fn large_arguments_stay_finite() {
        let v = bessel_i0_scaled(1e6);
        assert!(v.is_finite() && v > 0.0);
        assert!(log_bessel_i0(800.0).is_finite());
    }

    #[test]
    fn ratio_limits() {
        assert!(bessel_ratio(1e-6).unwrap() < 1e-5);
        assert!((1.0 - bessel_ratio(1e6).unwrap()).abs() < 1e-5);
        assert!(bessel_ratio(0.0).is_err());
        assert!(bessel_ratio(-1.0).is_err());
    }

    #[test]
    fn ratio_strictly_increasing() {
        let mut prev = 0.0;
        let mut k = 1e-3;
        while k < 1e4 {
            let a = bessel_ratio(k).unwrap();
            assert!(a > prev, "A not increasing at {k}");
            prev = a;
            k *= 1.1;
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let mut k: f64 = 0.1;
        while k <= 50.0 {
            let h = 1e-5 * k.max(1.0);
            let fd = (bessel_ratio(k + h).unwrap() - bessel_ratio(k - h).unwrap()) / (2.0 * h);
            let an = bessel_ratio_derivative(k).unwrap();
            assert!((fd - an).abs() < 1e-6, "kappa {k}: {fd} vs {an}");
            k += 0.37;
        }
    }

    fn bisection_oracle(r: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12, 1e6);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if ratio_unchecked(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn inverse_round_trip_and_oracle() {
        for r in [0.1, 0.5, 0.9] {
            let k = bessel_ratio_inverse(r).unwrap();
            assert!((bessel_ratio(k).unwrap() - r).abs() < 1e-9);
        }
        let k = bessel_ratio_inverse(0.5).unwrap();
        let oracle = bisection_oracle(0.5);
        assert!((k - oracle).abs() < 1e-8, "{k} vs {oracle}");
        assert!((k - 1.159_319_920_750_138_4).abs() < 1e-9);
    }

    #[test]
    fn inverse_is_increasing() {
        let mut prev = 0.0;
        for i in 1..200 {
            let r = i as f64 / 200.0;
            let k = bessel_ratio_inverse(r).unwrap();
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn inverse_extremes() {
        let k = bessel_ratio_inverse(1e-9).unwrap();
        assert!(k > 0.0 && k < 1e-8);
        let k = bessel_ratio_inverse(1.0 - 1e-9).unwrap();
        assert!(k > 1e7);
        assert!(bessel_ratio_inverse(0.0).is_err());
        assert!(bessel_ratio_inverse(1.0).is_err());
    }
}
