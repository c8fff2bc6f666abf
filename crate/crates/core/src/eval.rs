//! Target densities, rejection sampling, the spline and Friedman test
//! functions, and Monte-Carlo relative `L_q` errors.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use gauss_quad::GaussLegendre;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixture::{SparseMixture, WeightedSampleBatch};
use crate::rng::{derive_seed, stream_rng, streams};

/// Points evaluated per block in Monte-Carlo loops; each block draws from its
/// own stream so results do not depend on the thread count.
const MC_BLOCK: usize = 4096;

/// Proposal count after which a vanishing acceptance rate is reported.
const MAX_PROPOSALS: usize = 10_000_000;
const MIN_ACCEPTANCE: f64 = 1e-6;

/// Safety factor applied to a probe maximum when no analytic bound is known.
pub const PROBE_SAFETY: f64 = 1.2;

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A nonnegative function on `[0,1)^d` together with an upper bound `M`.
#[derive(Clone)]
pub struct TargetDensity {
    d: usize,
    evaluator: Evaluator,
    sup_bound: f64,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("d", &self.d)
            .field("sup_bound", &self.sup_bound)
            .finish_non_exhaustive()
    }
}

impl TargetDensity {
    pub fn new<F>(d: usize, evaluator: F, sup_bound: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if d == 0 {
            return Err(Error::InvalidParameter("target dimension must be positive".into()));
        }
        if !(sup_bound > 0.0 && sup_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("sup bound must be positive, got {sup_bound}")));
        }
        Ok(Self {
            d,
            evaluator: Arc::new(evaluator),
            sup_bound,
        })
    }

    /// The density of a mixture. The bound adds the component peaks, which sit
    /// at the means, and inflates the sum by [`PROBE_SAFETY`].
    pub fn from_mixture(model: &SparseMixture) -> Result<Self> {
        let mut peak = 0.0;
        for ((c, k), a) in model.components().iter().zip(model.kernels()).zip(model.alpha()) {
            if *a > 0.0 {
                peak += a * k.log_density(c.mu(), model.truncation()).exp();
            }
        }
        let m = model.clone();
        Self::new(model.dim(), move |x| m.pdf(x).unwrap_or(0.0), PROBE_SAFETY * peak.max(1.0))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// The same evaluator with a different bound.
    pub fn with_sup_bound(&self, sup_bound: f64) -> Result<Self> {
        if !(sup_bound > 0.0 && sup_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("sup bound must be positive, got {sup_bound}")));
        }
        Ok(Self {
            sup_bound,
            ..self.clone()
        })
    }
}

/// Draws `n` unit-weight samples: a uniform proposal `x` is kept when
/// `z < f(x)/M` for uniform `z`.
pub fn rejection_sample(target: &TargetDensity, n: usize, rng_seed: u64) -> Result<WeightedSampleBatch> {
    let d = target.dim();
    let m = target.sup_bound();
    let mut rng = stream_rng(rng_seed, streams::REJECTION);
    let mut points = Vec::with_capacity(n * d);
    let mut x = vec![0.0; d];
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut exceeded = false;
    while accepted < n {
        if proposed >= MAX_PROPOSALS && (accepted as f64) < MIN_ACCEPTANCE * proposed as f64 {
            return Err(Error::BoundTooLoose { accepted, proposed });
        }
        proposed += 1;
        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
        let z: f64 = rng.random();
        let fx = target.eval(&x);
        if fx > m && !exceeded {
            log::warn!("target value {fx} exceeds the sup bound {m}; the sample is clipped there");
            exceeded = true;
        }
        if z * m < fx {
            points.extend_from_slice(&x);
            accepted += 1;
        }
    }
    log::debug!("rejection sampling accepted {accepted} of {proposed} proposals");
    WeightedSampleBatch::unit(d, points)
}

/// Cardinal B-spline of order `k` on the uniform knots `0, 1/k, ..., 1` by the
/// Cox–de Boor recursion. Its integral is `1/k`.
pub fn cardinal_bspline(k: usize, x: f64) -> f64 {
    if k == 0 || !(0.0..1.0).contains(&x) {
        return 0.0;
    }
    let t = x * k as f64;
    let cell = (t.floor() as usize).min(k - 1);
    // order-1 values on the k knot intervals, raised one order at a time
    let mut b = vec![0.0; k];
    b[cell] = 1.0;
    for p in 2..=k {
        let pf = (p - 1) as f64;
        for i in 0..=(k - p) {
            let left = (t - i as f64) / pf * b[i];
            let right = ((i + p) as f64 - t) / pf * b[i + 1];
            b[i] = left + right;
        }
    }
    b[0]
}

/// Largest spline order with a cached normalization.
const MAX_SPLINE_ORDER: usize = 8;

fn spline_l2_norms() -> &'static [f64; MAX_SPLINE_ORDER + 1] {
    static NORMS: OnceLock<[f64; MAX_SPLINE_ORDER + 1]> = OnceLock::new();
    NORMS.get_or_init(|| {
        let rule = GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero"));
        let mut out = [0.0; MAX_SPLINE_ORDER + 1];
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            let h = 1.0 / k as f64;
            let sq: f64 = (0..k)
                .map(|c| rule.integrate(c as f64 * h, (c + 1) as f64 * h, |x| cardinal_bspline(k, x).powi(2)))
                .sum();
            *slot = sq.sqrt();
        }
        out
    })
}

/// Order-`k` B-spline on `[0,1]` scaled to unit `L_2` norm.
pub fn normalized_bspline(k: usize, x: f64) -> f64 {
    assert!((1..=MAX_SPLINE_ORDER).contains(&k), "spline order {k} outside 1..={MAX_SPLINE_ORDER}");
    cardinal_bspline(k, x) / spline_l2_norms()[k]
}

/// Integral over `[0,1]` of [`normalized_bspline`].
pub fn normalized_bspline_integral(k: usize) -> f64 {
    1.0 / (k as f64 * spline_l2_norms()[k])
}

/// Coordinate triples (zero-based) of the three spline products and their
/// spline orders.
pub const SPLINE_TERMS: [[usize; 3]; 3] = [[0, 2, 7], [1, 4, 5], [3, 6, 8]];
pub const SPLINE_ORDERS: [usize; 3] = [2, 4, 6];

/// Sum of three products of `L_2`-normalized B-splines of orders 2, 4 and 6
/// on `[0,1]^9`.
pub fn spline_f1(x: &[f64]) -> f64 {
    SPLINE_TERMS
        .iter()
        .map(|t| t.iter().zip(SPLINE_ORDERS).map(|(&j, k)| normalized_bspline(k, x[j])).product::<f64>())
        .sum()
}

/// `10 sin(π x0 x1) + 20 (x2 + 1/2)² + 10 x3 + 5 x4` on `[0,1]^10`; the last
/// five coordinates are inactive.
pub fn friedman1_f2(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] + 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Supremum of `friedman1_f2` on the unit cube.
pub const FRIEDMAN_SUP: f64 = 70.0;

/// Monte-Carlo sums over uniform points, reduced in block order.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    n: usize,
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
    min_b: f64,
    max_b: f64,
}

impl Sums {
    fn merge(mut self, o: Sums) -> Sums {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        self.n += o.n;
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.bb += o.bb;
        self.ab += o.ab;
        self.min_b = self.min_b.min(o.min_b);
        self.max_b = self.max_b.max(o.max_b);
        self
    }
}

/// Accumulates `(a(x), b(x))` over `n` uniform points of `[0,1)^d`.
fn mc_sums<F>(d: usize, n: usize, seed: u64, stream: u64, pair: F) -> Sums
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    let base = derive_seed(seed, stream);
    let blocks = n.div_ceil(MC_BLOCK);
    let partial: Vec<Sums> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = stream_rng(base, blk as u64);
            let count = MC_BLOCK.min(n - blk * MC_BLOCK);
            let mut x = vec![0.0; d];
            let mut s = Sums {
                min_b: f64::INFINITY,
                max_b: f64::NEG_INFINITY,
                ..Default::default()
            };
            for _ in 0..count {
                for v in x.iter_mut() {
                    *v = rng.random::<f64>();
                }
                let (a, b) = pair(&x);
                s.n += 1;
                s.a += a;
                s.b += b;
                s.aa += a * a;
                s.bb += b * b;
                s.ab += a * b;
                s.min_b = s.min_b.min(b);
                s.max_b = s.max_b.max(b);
            }
            s
        })
        .collect();
    partial.into_iter().fold(Sums::default(), Sums::merge)
}

/// Monte-Carlo `L_1` norm of a nonnegative function and the largest value
/// seen on the same points.
fn mc_l1_norm<F>(f_raw: &F, d: usize, n_mc: usize, rng_seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_mc == 0 {
        return Err(Error::InvalidParameter("normalization needs at least one point".into()));
    }
    let s = mc_sums(d, n_mc, rng_seed, streams::NORMALIZE, |x| (0.0, f_raw(x)));
    if s.min_b < 0.0 {
        return Err(Error::InvalidInput(format!("target takes the negative value {}", s.min_b)));
    }
    // a constant function has its value as the exact mean
    let norm = if s.min_b == s.max_b { s.min_b } else { s.b / s.n as f64 };
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateNorm(format!("L1 norm estimate {norm}")));
    }
    Ok((norm, s.max_b))
}

/// Divides `f_raw` by a Monte-Carlo estimate of its `L_1` norm from `n_mc`
/// uniform points. `M` is the largest normalized value seen on those points
/// times [`PROBE_SAFETY`].
pub fn normalize_target<F>(f_raw: F, d: usize, n_mc: usize, rng_seed: u64) -> Result<TargetDensity>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    let (norm, max) = mc_l1_norm(&f_raw, d, n_mc, rng_seed)?;
    TargetDensity::new(d, move |x| f_raw(x) / norm, PROBE_SAFETY * max / norm)
}

/// `spline_f1` divided by its exact `L_1` norm, with the exact supremum.
pub fn spline_target() -> TargetDensity {
    let product_integral = |f: fn(usize) -> f64| SPLINE_ORDERS.iter().map(|&k| f(k)).product::<f64>();
    let norm = 3.0 * product_integral(normalized_bspline_integral);
    let sup = 3.0 * product_integral(|k| normalized_bspline(k, 0.5));
    TargetDensity::new(9, move |x| spline_f1(x) / norm, sup / norm).expect("valid spline target")
}

/// `friedman1_f2` divided by a Monte-Carlo `L_1` estimate on `n_mc` points.
/// The bound uses the exact supremum of 70.
pub fn friedman_target(n_mc: usize, rng_seed: u64) -> Result<TargetDensity> {
    let (norm, _) = mc_l1_norm(&friedman1_f2, 10, n_mc, rng_seed)?;
    TargetDensity::new(10, move |x| friedman1_f2(x) / norm, FRIEDMAN_SUP / norm)
}

/// Monte-Carlo estimate of `‖f − p̂‖_q / ‖f‖_q` and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    pub value: f64,
    pub std_error: f64,
}

/// Relative `L_q` error from `n_mc` uniform draws, using `|f − p̂|^q`.
pub fn mc_relative_error_estimate(
    f: &TargetDensity,
    p_hat: &SparseMixture,
    q: u32,
    n_mc: usize,
    rng_seed: u64,
) -> Result<RelativeError> {
    if f.dim() != p_hat.dim() {
        return Err(Error::Dimension {
            expected: f.dim(),
            got: p_hat.dim(),
        });
    }
    if !(q == 1 || q == 2) {
        return Err(Error::InvalidParameter(format!("q must be 1 or 2, got {q}")));
    }
    if n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be positive".into()));
    }
    let qi = q as i32;
    let s = mc_sums(f.dim(), n_mc, rng_seed, streams::MC_ERROR, |x| {
        let fx = f.eval(x);
        let px = p_hat.pdf(x).unwrap_or(f64::NAN);
        ((fx - px).abs().powi(qi), fx.abs().powi(qi))
    });
    let n = s.n as f64;
    let (ma, mb) = (s.a / n, s.b / n);
    if !(mb > 0.0) {
        return Err(Error::DegenerateNorm(format!("estimated ‖f‖ is {mb}")));
    }
    if !ma.is_finite() {
        return Err(Error::InvalidInput("mixture density is not finite on the probe".into()));
    }
    let ratio = ma / mb;
    let value = ratio.powf(1.0 / q as f64);
    // delta method for a ratio of means
    let var_a = (s.aa / n - ma * ma).max(0.0);
    let var_b = (s.bb / n - mb * mb).max(0.0);
    let cov = s.ab / n - ma * mb;
    let var_ratio = ((var_a - 2.0 * ratio * cov + ratio * ratio * var_b) / (mb * mb * n)).max(0.0);
    let std_error = if ratio > 0.0 {
        var_ratio.sqrt() * ratio.powf(1.0 / q as f64 - 1.0) / q as f64
    } else {
        0.0
    };
    Ok(RelativeError { value, std_error })
}

/// Relative `L_q` error `‖f − p̂‖_q / ‖f‖_q` from `n_mc` uniform draws.
pub fn mc_relative_error(f: &TargetDensity, p_hat: &SparseMixture, q: u32, n_mc: usize, rng_seed: u64) -> Result<f64> {
    mc_relative_error_estimate(f, p_hat, q, n_mc, rng_seed).map(|e| e.value)
}
