//! Sparse mixtures on the torus: each component is a low-dimensional
//! wrapped normal, diagonal wrapped normal or von Mises product on its index
//! set `u`, times the uniform density on the remaining coordinates.

pub(crate) mod io;
pub(crate) mod sample;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{log_bessel_i0, wrap_unit, TruncationLevel, WrappedNormal, WrappedNormal1d};

pub use io::{format_decimal, read_batch_csv, read_model_json, write_batch_csv, write_model_json, MixtureDocument};
pub use sample::{sample, sample_component, sample_with_labels};

/// A strictly increasing set of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Builds an index set; the input may be unsorted but must not repeat.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate index in {indices:?}")));
        }
        Ok(IndexSet(indices))
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Position of coordinate `i` within the set.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.0.binary_search(&i).ok()
    }

    /// `self ∪ {m}` together with the insertion position of `m`.
    pub fn with(&self, m: usize) -> (IndexSet, usize) {
        match self.0.binary_search(&m) {
            Ok(p) => (self.clone(), p),
            Err(p) => {
                let mut v = self.0.clone();
                v.insert(p, m);
                (IndexSet(v), p)
            }
        }
    }

    pub fn intersect(&self, other: &IndexSet) -> IndexSet {
        IndexSet(self.0.iter().copied().filter(|i| other.contains(*i)).collect())
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl TryFrom<Vec<usize>> for IndexSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        IndexSet::new(v)
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(u: IndexSet) -> Self {
        u.0
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Component family shared by every summand of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Wrapped normal with full covariance.
    Wrapped,
    /// Wrapped normal with diagonal covariance.
    #[serde(rename = "diag")]
    DiagWrapped,
    /// Product of univariate von Mises densities.
    #[serde(rename = "vonmises")]
    VonMises,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Wrapped, Family::DiagWrapped, Family::VonMises];

    pub fn name(self) -> &'static str {
        match self {
            Family::Wrapped => "wrapped",
            Family::DiagWrapped => "diag",
            Family::VonMises => "vonmises",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrapped" | "full" => Ok(Family::Wrapped),
            "diag" | "diagonal" => Ok(Family::DiagWrapped),
            "vonmises" | "von_mises" | "vm" => Ok(Family::VonMises),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one mixture summand.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentParams {
    /// `N_w(μ, Σ)` on `T^|u|`; `sigma` is row-major `|u|×|u|`.
    Wrapped { u: IndexSet, mu: Vec<f64>, sigma: Vec<f64> },
    DiagWrapped { u: IndexSet, mu: Vec<f64>, sigma2: Vec<f64> },
    VonMises { u: IndexSet, mu: Vec<f64>, kappa: Vec<f64> },
}

impl ComponentParams {
    /// The uniform component `u = ∅` of the given family.
    pub fn uniform(family: Family) -> Self {
        match family {
            Family::Wrapped => ComponentParams::Wrapped {
                u: IndexSet::empty(),
                mu: vec![],
                sigma: vec![],
            },
            Family::DiagWrapped => ComponentParams::DiagWrapped {
                u: IndexSet::empty(),
                mu: vec![],
                sigma2: vec![],
            },
            Family::VonMises => ComponentParams::VonMises {
                u: IndexSet::empty(),
                mu: vec![],
                kappa: vec![],
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ComponentParams::Wrapped { .. } => Family::Wrapped,
            ComponentParams::DiagWrapped { .. } => Family::DiagWrapped,
            ComponentParams::VonMises { .. } => Family::VonMises,
        }
    }

    pub fn u(&self) -> &IndexSet {
        match self {
            ComponentParams::Wrapped { u, .. }
            | ComponentParams::DiagWrapped { u, .. }
            | ComponentParams::VonMises { u, .. } => u,
        }
    }

    pub fn mu(&self) -> &[f64] {
        match self {
            ComponentParams::Wrapped { mu, .. }
            | ComponentParams::DiagWrapped { mu, .. }
            | ComponentParams::VonMises { mu, .. } => mu,
        }
    }

    /// Largest per-coordinate variance; von Mises components report 0.
    pub fn max_variance(&self) -> f64 {
        match self {
            ComponentParams::Wrapped { u, sigma, .. } => {
                let n = u.len();
                (0..n).map(|i| sigma[i * n + i]).fold(0.0, f64::max)
            }
            ComponentParams::DiagWrapped { sigma2, .. } => sigma2.iter().copied().fold(0.0, f64::max),
            ComponentParams::VonMises { .. } => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.u().len();
        if self.mu().len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.mu().len(),
            });
        }
        if self.mu().iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean".into()));
        }
        match self {
            ComponentParams::Wrapped { sigma, .. } => {
                if sigma.len() != n * n {
                    return Err(Error::Dimension {
                        expected: n * n,
                        got: sigma.len(),
                    });
                }
                crate::torus::cholesky(sigma, n).map(|_| ())
            }
            ComponentParams::DiagWrapped { sigma2, .. } => {
                if sigma2.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: sigma2.len(),
                    });
                }
                if sigma2.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::InvalidParameter("variances must be positive".into()));
                }
                Ok(())
            }
            ComponentParams::VonMises { kappa, .. } => {
                if kappa.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: kappa.len(),
                    });
                }
                if kappa.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
                    return Err(Error::InvalidParameter("concentrations must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Marginal onto `v ∩ u`; coordinates outside `u` are already uniform.
    pub fn marginalize(&self, v: &IndexSet) -> ComponentParams {
        let u = self.u();
        let keep: Vec<usize> = (0..u.len()).filter(|&p| v.contains(u.as_slice()[p])).collect();
        let new_u = IndexSet(keep.iter().map(|&p| u.as_slice()[p]).collect());
        let pick = |xs: &[f64]| keep.iter().map(|&p| xs[p]).collect::<Vec<f64>>();
        match self {
            ComponentParams::Wrapped { mu, sigma, .. } => {
                let n = u.len();
                let mut block = Vec::with_capacity(keep.len() * keep.len());
                for &a in &keep {
                    for &b in &keep {
                        block.push(sigma[a * n + b]);
                    }
                }
                ComponentParams::Wrapped {
                    u: new_u,
                    mu: pick(mu),
                    sigma: block,
                }
            }
            ComponentParams::DiagWrapped { mu, sigma2, .. } => ComponentParams::DiagWrapped {
                u: new_u,
                mu: pick(mu),
                sigma2: pick(sigma2),
            },
            ComponentParams::VonMises { mu, kappa, .. } => ComponentParams::VonMises {
                u: new_u,
                mu: pick(mu),
                kappa: pick(kappa),
            },
        }
    }

    /// Builds the cached evaluator.
    pub fn kernel(&self) -> Result<Kernel> {
        self.validate()?;
        if self.u().is_empty() {
            return Ok(Kernel::Uniform);
        }
        Ok(match self {
            ComponentParams::Wrapped { mu, sigma, .. } => Kernel::Wrapped(WrappedNormal::new(mu, sigma)?),
            ComponentParams::DiagWrapped { mu, sigma2, .. } => Kernel::Diag(
                mu.iter()
                    .zip(sigma2)
                    .map(|(m, s)| WrappedNormal1d::new(*m, *s))
                    .collect::<Result<_>>()?,
            ),
            ComponentParams::VonMises { mu, kappa, .. } => Kernel::VonMises(
                mu.iter()
                    .zip(kappa)
                    .map(|(m, k)| VonMisesFactor {
                        mu: *m,
                        kappa: *k,
                        log_i0: log_bessel_i0(*k),
                    })
                    .collect(),
            ),
        })
    }

    /// Density on `T^|u|` at local coordinates `xu`.
    pub fn log_density_local(&self, xu: &[f64], trunc: TruncationLevel) -> Result<f64> {
        if xu.len() != self.u().len() {
            return Err(Error::Dimension {
                expected: self.u().len(),
                got: xu.len(),
            });
        }
        Ok(self.kernel()?.log_density(xu, trunc))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VonMisesFactor {
    pub mu: f64,
    pub kappa: f64,
    pub log_i0: f64,
}

/// Precomputed evaluator of one component density on its local coordinates.
#[derive(Debug, Clone)]
pub enum Kernel {
    Uniform,
    Wrapped(WrappedNormal),
    Diag(Vec<WrappedNormal1d>),
    VonMises(Vec<VonMisesFactor>),
}

impl Kernel {
    /// `ln p_u(xu)` for local coordinates `xu`.
    #[inline]
    pub fn log_density(&self, xu: &[f64], trunc: TruncationLevel) -> f64 {
        match self {
            Kernel::Uniform => 0.0,
            Kernel::Wrapped(wn) => wn.log_pdf(xu, trunc),
            Kernel::Diag(factors) => factors.iter().zip(xu).map(|(f, x)| f.log_pdf(*x, trunc)).sum(),
            Kernel::VonMises(factors) => factors
                .iter()
                .zip(xu)
                .map(|(f, x)| f.kappa * (std::f64::consts::TAU * (x - f.mu)).cos() - f.log_i0)
                .sum(),
        }
    }
}

/// Gathers `x_u` into `out`.
#[inline]
pub(crate) fn gather(x: &[f64], u: &IndexSet, out: &mut Vec<f64>) {
    out.clear();
    out.extend(u.iter().map(|i| x[i]));
}

/// Log-sum-exp of a slice; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A mixture `Σ_k α_k p_{u_k}(x_{u_k})` on `T^d` with a single family.
#[derive(Debug, Clone)]
pub struct SparseMixture {
    family: Family,
    d: usize,
    alpha: Vec<f64>,
    components: Vec<ComponentParams>,
    kernels: Vec<Kernel>,
    trunc: TruncationLevel,
}

impl PartialEq for SparseMixture {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.d == other.d
            && self.alpha == other.alpha
            && self.components == other.components
    }
}

impl SparseMixture {
    pub fn new(d: usize, alpha: Vec<f64>, components: Vec<ComponentParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("a mixture needs at least one component".into()));
        }
        if alpha.len() != components.len() {
            return Err(Error::Dimension {
                expected: components.len(),
                got: alpha.len(),
            });
        }
        let family = components[0].family();
        if components.iter().any(|c| c.family() != family) {
            return Err(Error::InvalidInput("mixed component families are not supported".into()));
        }
        for c in &components {
            if let Some(max) = c.u().max_index() {
                if max >= d {
                    return Err(Error::InvalidInput(format!(
                        "index {max} out of range for dimension {d}"
                    )));
                }
            }
        }
        check_simplex(&alpha, 1e-10)?;
        let kernels = components.iter().map(|c| c.kernel()).collect::<Result<Vec<_>>>()?;
        let max_var = components.iter().map(|c| c.max_variance()).fold(0.0, f64::max);
        Ok(Self {
            family,
            d,
            alpha,
            components,
            kernels,
            trunc: TruncationLevel::for_max_variance(max_var),
        })
    }

    /// The single uniform component on `T^d`.
    pub fn uniform(family: Family, d: usize) -> Self {
        Self::new(d, vec![1.0], vec![ComponentParams::uniform(family)]).expect("uniform model is valid")
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn components(&self) -> &[ComponentParams] {
        &self.components
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    /// Lattice truncation used for this model's wrapped densities.
    pub fn truncation(&self) -> TruncationLevel {
        self.trunc
    }

    /// Number of strictly positive weights, `‖α‖₀`.
    pub fn support_size(&self) -> usize {
        self.alpha.iter().filter(|a| **a > 0.0).count()
    }

    /// Same components with new weights.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != self.alpha.len() {
            return Err(Error::Dimension {
                expected: self.alpha.len(),
                got: alpha.len(),
            });
        }
        check_simplex(&alpha, 1e-10)?;
        Ok(Self {
            alpha,
            ..self.clone()
        })
    }

    /// Drops every component with `α_k = 0` exactly.
    pub fn without_empty(&self) -> Self {
        let keep: Vec<usize> = (0..self.alpha.len()).filter(|&k| self.alpha[k] > 0.0).collect();
        if keep.len() == self.alpha.len() {
            return self.clone();
        }
        Self {
            family: self.family,
            d: self.d,
            alpha: keep.iter().map(|&k| self.alpha[k]).collect(),
            components: keep.iter().map(|&k| self.components[k].clone()).collect(),
            kernels: keep.iter().map(|&k| self.kernels[k].clone()).collect(),
            trunc: self.trunc,
        }
    }

    /// `ln p_{u_k}(x_{u_k})` for every component, written to `out`.
    pub fn component_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        let mut xu = Vec::with_capacity(8);
        out.clear();
        for (c, kern) in self.components.iter().zip(&self.kernels) {
            gather(x, c.u(), &mut xu);
            out.push(kern.log_density(&xu, self.trunc));
        }
    }

    /// `ln p(x | α, ϑ)` with log-sum-exp over components.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        let mut terms = Vec::with_capacity(self.alpha.len());
        self.component_log_densities(x, &mut terms);
        for (t, a) in terms.iter_mut().zip(&self.alpha) {
            *t += a.ln();
        }
        Ok(log_sum_exp(&terms))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Per-sample `ln p(x^i)`.
    pub fn log_pdf_batch(&self, batch: &WeightedSampleBatch) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        if batch.dim() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: batch.dim(),
            });
        }
        Ok((0..batch.len())
            .into_par_iter()
            .map(|i| self.log_pdf(batch.point(i)).expect("dimension checked"))
            .collect())
    }
}

impl SparseMixture {
    /// Component posteriors `β_{i,k}`, row-major `N × K`.
    pub fn posteriors(&self, batch: &WeightedSampleBatch) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        if batch.dim() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                got: batch.dim(),
            });
        }
        let k = self.alpha.len();
        let log_alpha: Vec<f64> = self.alpha.iter().map(|a| a.ln()).collect();
        let rows: Vec<Result<Vec<f64>>> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let mut lp = Vec::with_capacity(k);
                self.component_log_densities(batch.point(i), &mut lp);
                for (v, la) in lp.iter_mut().zip(&log_alpha) {
                    *v += la;
                }
                let total = log_sum_exp(&lp);
                if total == f64::NEG_INFINITY {
                    return Err(Error::DegenerateSample { index: i });
                }
                Ok(lp.iter().map(|v| (v - total).exp()).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len() * k);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }
}

pub(crate) fn check_simplex(alpha: &[f64], tol: f64) -> Result<()> {
    if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::InvalidInput("weights must be nonnegative and finite".into()));
    }
    let s: f64 = alpha.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidInput(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `mixture_pdf`: density of the full model at `x`.
pub fn mixture_pdf(model: &SparseMixture, x: &[f64]) -> Result<f64> {
    model.pdf(x)
}

/// Weighted negative log-likelihood `−Σ_i w_i ln p(x^i)`.
///
/// A sample with zero density under every component makes the objective
/// `+∞`; the first such index is logged.
pub fn neg_log_likelihood(model: &SparseMixture, batch: &WeightedSampleBatch) -> Result<f64> {
    let logs = model.log_pdf_batch(batch)?;
    Ok(weighted_nll(&logs, batch.weights()))
}

pub(crate) fn weighted_nll(logs: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, (lp, w)) in logs.iter().zip(weights).enumerate() {
        if *w == 0.0 {
            continue;
        }
        if *lp == f64::NEG_INFINITY {
            log::warn!("sample {i} has zero density under every component");
            return f64::INFINITY;
        }
        total -= w * lp;
    }
    total
}

/// `N` points on `T^d` with nonnegative importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSampleBatch {
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSampleBatch {
    /// Row-major points (reduced modulo 1) and weights as given.
    pub fn new(d: usize, mut points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if points.len() != d * weights.len() {
            return Err(Error::Dimension {
                expected: d * weights.len(),
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be nonnegative".into()));
        }
        for p in points.iter_mut() {
            *p = wrap_unit(*p);
        }
        Ok(Self { d, points, weights })
    }

    /// Points with unit weights.
    pub fn unit(d: usize, points: Vec<f64>) -> Result<Self> {
        let n = if d == 0 { 0 } else { points.len() / d };
        Self::new(d, points, vec![1.0; n])
    }

    /// Rescales the weights so that `Σ w_i = N`.
    pub fn normalized(&self) -> Result<Self> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        let scale = self.len() as f64 / total;
        Ok(Self {
            d: self.d,
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w * scale).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Coordinate `m` of every sample.
    pub fn column(&self, m: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.points[i * self.d + m]).collect()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut points = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            points.extend_from_slice(self.point(r));
        }
        Self {
            d: self.d,
            points,
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
        }
    }
}
