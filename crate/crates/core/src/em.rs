//! Expectation maximization for the three component families.
//!
//! The E-step works per sample in log space. Wrapped components carry the
//! hidden lattice offset `l` as an extra latent label; diagonal components use
//! the per-coordinate factorization `γ_{ikmj} = β_ik N(x_j+m)/N_w(x_j)`, so
//! their cost is linear in `|u_k|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{gather, ComponentParams, Family, Kernel, SparseMixture, WeightedSampleBatch};
use crate::torus::{arctan_star, bessel_ratio_inverse, spd_guard, wrap_unit, TruncationLevel};

/// Samples per reduction block; fixed so sums do not depend on thread count.
const BLOCK: usize = 256;

/// Controls for EM iterations and M-step safeguards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Relative objective improvement that ends an EM loop.
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound on von Mises concentrations.
    pub kappa_max: f64,
    /// Lower bound on variances.
    pub sigma2_floor: f64,
    /// Mean resultant lengths are clamped to `[r_clamp, 1 − r_clamp]`.
    pub r_clamp: f64,
    /// Components whose posterior mass falls below this are emptied.
    pub empty_mass: f64,
    /// Lattice radius; `None` picks it from the model's largest variance.
    pub l_max: Option<u32>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            kappa_max: 1e4,
            sigma2_floor: 1e-8,
            r_clamp: 1e-9,
            empty_mass: 1e-12,
            l_max: None,
        }
    }
}

impl EmConfig {
    pub fn truncation_for(&self, model: &SparseMixture) -> TruncationLevel {
        match self.l_max {
            Some(l) => TruncationLevel::new(l),
            None => model.truncation(),
        }
    }
}

/// Outcome of one E+M cycle.
#[derive(Debug, Clone)]
pub struct EmStepResult {
    pub model: SparseMixture,
    pub nll_before: f64,
    pub nll_after: f64,
}

/// One lattice term of a sample/component pair.
#[derive(Debug, Clone, Copy)]
struct Term {
    /// Packed lattice offset (wrapped) or scalar offset (diagonal).
    tag: i64,
    /// Position of the coordinate within `u_k` (diagonal only).
    group: usize,
    /// Log of the term's share within its component or coordinate.
    log_share: f64,
    /// Index of the term's displacement in `Scratch::z`.
    z_at: usize,
}

/// Per-sample work buffers.
#[derive(Default)]
struct Scratch {
    xu: Vec<f64>,
    log_p: Vec<f64>,
    start: Vec<usize>,
    terms: Vec<Term>,
    /// `x + l − μ` per term, `|u|` entries for wrapped and one for diagonal.
    z: Vec<f64>,
    beta: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            log_p: vec![0.0; k],
            start: vec![0; k + 1],
            beta: vec![0.0; k],
            ..Default::default()
        }
    }
}

/// Evaluates all components at `x`, records lattice terms, and fills the
/// component posteriors. Returns `ln p(x)`.
fn posterior(
    model: &SparseMixture,
    x: &[f64],
    trunc: TruncationLevel,
    log_alpha: &[f64],
    s: &mut Scratch,
) -> f64 {
    s.terms.clear();
    s.z.clear();
    for (k, (comp, kern)) in model.components().iter().zip(model.kernels()).enumerate() {
        s.start[k] = s.terms.len();
        if log_alpha[k] == f64::NEG_INFINITY {
            s.log_p[k] = f64::NEG_INFINITY;
            continue;
        }
        gather(x, comp.u(), &mut s.xu);
        s.log_p[k] = match kern {
            Kernel::Uniform => 0.0,
            Kernel::VonMises(_) => kern.log_density(&s.xu, trunc),
            Kernel::Wrapped(wn) => {
                let first = s.terms.len();
                let mu = wn.mean();
                let (terms, z) = (&mut s.terms, &mut s.z);
                wn.for_each_term(&s.xu, trunc, |packed, y, ln| {
                    terms.push(Term {
                        tag: packed as i64,
                        group: 0,
                        log_share: ln,
                        z_at: z.len(),
                    });
                    z.extend(y.iter().zip(mu).map(|(a, b)| a - b));
                });
                let lp = log_sum_exp_terms(&s.terms[first..]);
                for t in &mut s.terms[first..] {
                    t.log_share -= lp;
                }
                lp
            }
            Kernel::Diag(factors) => {
                let mut lp = 0.0;
                for (j, (f, xj)) in factors.iter().zip(&s.xu).enumerate() {
                    let first = s.terms.len();
                    let (lo, hi) = f.offset_range(*xj, trunc);
                    for m in lo..=hi {
                        let y = xj + m as f64;
                        s.terms.push(Term {
                            tag: m as i64,
                            group: j,
                            log_share: f.log_gaussian(y),
                            z_at: s.z.len(),
                        });
                        s.z.push(y - f.mu);
                    }
                    let lw = log_sum_exp_terms(&s.terms[first..]);
                    for t in &mut s.terms[first..] {
                        t.log_share -= lw;
                    }
                    lp += lw;
                }
                lp
            }
        };
    }
    s.start[model.n_components()] = s.terms.len();
    let mut max = f64::NEG_INFINITY;
    for (lp, la) in s.log_p.iter().zip(log_alpha) {
        max = max.max(lp + la);
    }
    if max == f64::NEG_INFINITY {
        s.beta.iter_mut().for_each(|b| *b = 0.0);
        return max;
    }
    let mut total = 0.0;
    for k in 0..s.beta.len() {
        let v = (s.log_p[k] + log_alpha[k] - max).exp();
        s.beta[k] = v;
        total += v;
    }
    for b in s.beta.iter_mut() {
        *b /= total;
    }
    max + total.ln()
}

fn log_sum_exp_terms(terms: &[Term]) -> f64 {
    let max = terms.iter().map(|t| t.log_share).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t.log_share - max).exp()).sum::<f64>().ln()
}

fn log_alpha(model: &SparseMixture) -> Vec<f64> {
    model.alpha().iter().map(|a| if *a > 0.0 { a.ln() } else { f64::NEG_INFINITY }).collect()
}

/// Weighted sufficient statistics of one component.
#[derive(Debug, Clone)]
struct Stats {
    mass: f64,
    /// Centered first moments (wrapped/diagonal) or cosine sums (von Mises).
    s1: Vec<f64>,
    /// Centered second moments (matrix for wrapped) or sine sums.
    s2: Vec<f64>,
}

impl Stats {
    fn zeros(c: &ComponentParams) -> Self {
        let n = c.u().len();
        let n2 = if c.family() == Family::Wrapped { n * n } else { n };
        Self {
            mass: 0.0,
            s1: vec![0.0; n],
            s2: vec![0.0; n2],
        }
    }

    fn add(&mut self, o: &Stats) {
        self.mass += o.mass;
        self.s1.iter_mut().zip(&o.s1).for_each(|(a, b)| *a += b);
        self.s2.iter_mut().zip(&o.s2).for_each(|(a, b)| *a += b);
    }
}

fn accumulate(model: &SparseMixture, x: &[f64], w: f64, s: &Scratch, stats: &mut [Stats]) {
    use std::f64::consts::TAU;
    for (k, comp) in model.components().iter().enumerate() {
        let wb = w * s.beta[k];
        if wb == 0.0 {
            continue;
        }
        let st = &mut stats[k];
        st.mass += wb;
        let n = comp.u().len();
        let terms = &s.terms[s.start[k]..s.start[k + 1]];
        match comp {
            ComponentParams::VonMises { u, .. } => {
                for (p, j) in u.iter().enumerate() {
                    let a = TAU * x[j];
                    st.s1[p] += wb * a.cos();
                    st.s2[p] += wb * a.sin();
                }
            }
            ComponentParams::Wrapped { .. } => {
                for t in terms {
                    let r = wb * t.log_share.exp();
                    let z = &s.z[t.z_at..t.z_at + n];
                    for a in 0..n {
                        let rz = r * z[a];
                        st.s1[a] += rz;
                        for b in 0..n {
                            st.s2[a * n + b] += rz * z[b];
                        }
                    }
                }
            }
            ComponentParams::DiagWrapped { .. } => {
                for t in terms {
                    let r = wb * t.log_share.exp();
                    let z = s.z[t.z_at];
                    st.s1[t.group] += r * z;
                    st.s2[t.group] += r * z * z;
                }
            }
        }
    }
}

/// Posterior tables of one E-step.
///
/// `β_{i,k}` is stored densely. Lattice posteriors are stored sparsely per
/// `(i, k)`: terms below `e^{-60}` of the leading term are omitted.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    family: Family,
    n: usize,
    k: usize,
    trunc: TruncationLevel,
    beta: Vec<f64>,
    start: Vec<usize>,
    entries: Vec<LatticeEntry>,
    log_density: Vec<f64>,
}

/// One lattice posterior `β_{i,k,l}` or `γ_{i,k,m,j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeEntry {
    /// Packed offset vector (wrapped) or scalar offset `m` (diagonal).
    pub offset: i64,
    /// Position of the coordinate within `u_k` (diagonal; 0 otherwise).
    pub coordinate: usize,
    pub weight: f64,
}

impl Responsibilities {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn truncation(&self) -> TruncationLevel {
        self.trunc
    }

    /// `β_{i,k}`.
    pub fn beta(&self, i: usize, k: usize) -> f64 {
        self.beta[i * self.k + k]
    }

    /// `(β_{i,1}, …, β_{i,K})`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.beta[i * self.k..(i + 1) * self.k]
    }

    /// `ln p(x^i)` under the model used for the E-step.
    pub fn log_density(&self, i: usize) -> f64 {
        self.log_density[i]
    }

    /// Raw lattice entries of pair `(i, k)`.
    pub fn lattice(&self, i: usize, k: usize) -> &[LatticeEntry] {
        let p = i * self.k + k;
        &self.entries[self.start[p]..self.start[p + 1]]
    }

    /// `(l, β_{i,k,l})` with decoded offsets for a wrapped component on `dim` coordinates.
    pub fn wrapped_terms(&self, i: usize, k: usize, dim: usize) -> Vec<(Vec<i32>, f64)> {
        self.lattice(i, k)
            .iter()
            .map(|e| (crate::torus::unpack_offset(e.offset as u32, dim, self.trunc), e.weight))
            .collect()
    }

    /// `(m, γ_{i,k,m,j})` for the coordinate at position `pos` of `u_k`.
    pub fn gamma_terms(&self, i: usize, k: usize, pos: usize) -> Vec<(i32, f64)> {
        self.lattice(i, k)
            .iter()
            .filter(|e| e.coordinate == pos)
            .map(|e| (e.offset as i32, e.weight))
            .collect()
    }
}

struct Block {
    stats: Vec<Stats>,
    nll: f64,
    degenerate: Option<usize>,
    resp: Option<(Vec<f64>, Vec<usize>, Vec<LatticeEntry>, Vec<f64>)>,
}

fn run_blocks(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    trunc: TruncationLevel,
    keep_resp: bool,
) -> Result<Vec<Block>> {
    if batch.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: batch.dim(),
        });
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty sample batch".into()));
    }
    let la = log_alpha(model);
    let kk = model.n_components();
    let n_blocks = batch.len().div_ceil(BLOCK);
    let blocks: Vec<Block> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut s = Scratch::new(kk);
            let mut stats: Vec<Stats> = model.components().iter().map(Stats::zeros).collect();
            let mut nll = 0.0;
            let mut degenerate = None;
            let mut resp = keep_resp.then(|| (Vec::new(), Vec::new(), Vec::new(), Vec::new()));
            for i in b * BLOCK..((b + 1) * BLOCK).min(batch.len()) {
                let x = batch.point(i);
                let w = batch.weights()[i];
                let lp = posterior(model, x, trunc, &la, &mut s);
                if lp == f64::NEG_INFINITY {
                    degenerate.get_or_insert(i);
                    continue;
                }
                nll -= w * lp;
                accumulate(model, x, w, &s, &mut stats);
                if let Some((beta, start, entries, logd)) = resp.as_mut() {
                    beta.extend_from_slice(&s.beta);
                    logd.push(lp);
                    for k in 0..kk {
                        start.push(entries.len());
                        for t in &s.terms[s.start[k]..s.start[k + 1]] {
                            entries.push(LatticeEntry {
                                offset: t.tag,
                                coordinate: t.group,
                                weight: s.beta[k] * t.log_share.exp(),
                            });
                        }
                    }
                }
            }
            Block {
                stats,
                nll,
                degenerate,
                resp,
            }
        })
        .collect();
    if let Some(i) = blocks.iter().find_map(|b| b.degenerate) {
        return Err(Error::DegenerateSample { index: i });
    }
    Ok(blocks)
}

fn reduce_stats(model: &SparseMixture, blocks: &[Block]) -> (Vec<Stats>, f64) {
    let mut stats: Vec<Stats> = model.components().iter().map(Stats::zeros).collect();
    let mut nll = 0.0;
    for b in blocks {
        for (a, o) in stats.iter_mut().zip(&b.stats) {
            a.add(o);
        }
        nll += b.nll;
    }
    (stats, nll)
}

/// E-step for any family.
pub fn e_step(model: &SparseMixture, batch: &WeightedSampleBatch, trunc: TruncationLevel) -> Result<Responsibilities> {
    let blocks = run_blocks(model, batch, trunc, true)?;
    let kk = model.n_components();
    let mut beta = Vec::with_capacity(batch.len() * kk);
    let mut start = Vec::with_capacity(batch.len() * kk + 1);
    let mut entries = Vec::new();
    let mut log_density = Vec::with_capacity(batch.len());
    for b in blocks {
        let (bb, st, en, ld) = b.resp.expect("responsibilities requested");
        let shift = entries.len();
        beta.extend(bb);
        start.extend(st.into_iter().map(|p| p + shift));
        entries.extend(en);
        log_density.extend(ld);
    }
    start.push(entries.len());
    Ok(Responsibilities {
        family: model.family(),
        n: batch.len(),
        k: kk,
        trunc,
        beta,
        start,
        entries,
        log_density,
    })
}

fn require_family(model: &SparseMixture, family: Family) -> Result<()> {
    if model.family() != family {
        return Err(Error::InvalidInput(format!(
            "expected a {family} model, got {}",
            model.family()
        )));
    }
    Ok(())
}

/// `β_{i,k} = α_k p_{u_k}(x^i) / Σ_j α_j p_{u_j}(x^i)` for von Mises products.
pub fn e_step_von_mises(model: &SparseMixture, batch: &WeightedSampleBatch) -> Result<Responsibilities> {
    require_family(model, Family::VonMises)?;
    e_step(model, batch, model.truncation())
}

/// `β_{i,k,l}` over the truncated lattice for full wrapped normals.
pub fn e_step_wrapped(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    trunc: TruncationLevel,
) -> Result<Responsibilities> {
    require_family(model, Family::Wrapped)?;
    e_step(model, batch, trunc)
}

/// `γ_{i,k,m,j}` for diagonal wrapped normals.
pub fn e_step_diag(model: &SparseMixture, batch: &WeightedSampleBatch, trunc: TruncationLevel) -> Result<Responsibilities> {
    require_family(model, Family::DiagWrapped)?;
    e_step(model, batch, trunc)
}

fn stats_from_resp(model: &SparseMixture, batch: &WeightedSampleBatch, resp: &Responsibilities) -> Result<Vec<Stats>> {
    use std::f64::consts::TAU;
    if resp.n != batch.len() || resp.k != model.n_components() || resp.family != model.family() {
        return Err(Error::InvalidInput("responsibilities do not match model and batch".into()));
    }
    let mut stats: Vec<Stats> = model.components().iter().map(Stats::zeros).collect();
    for i in 0..batch.len() {
        let x = batch.point(i);
        let w = batch.weights()[i];
        for (k, comp) in model.components().iter().enumerate() {
            let b = resp.beta(i, k);
            if b == 0.0 || w == 0.0 {
                continue;
            }
            let st = &mut stats[k];
            st.mass += w * b;
            let u = comp.u();
            let n = u.len();
            match comp {
                ComponentParams::VonMises { .. } => {
                    for (p, j) in u.iter().enumerate() {
                        st.s1[p] += w * b * (TAU * x[j]).cos();
                        st.s2[p] += w * b * (TAU * x[j]).sin();
                    }
                }
                ComponentParams::Wrapped { mu, .. } => {
                    for e in resp.lattice(i, k) {
                        let l = crate::torus::unpack_offset(e.offset as u32, n, resp.trunc);
                        let z: Vec<f64> = (0..n).map(|a| x[u.as_slice()[a]] + l[a] as f64 - mu[a]).collect();
                        for a in 0..n {
                            st.s1[a] += w * e.weight * z[a];
                            for c in 0..n {
                                st.s2[a * n + c] += w * e.weight * z[a] * z[c];
                            }
                        }
                    }
                }
                ComponentParams::DiagWrapped { mu, .. } => {
                    for e in resp.lattice(i, k) {
                        let p = e.coordinate;
                        let z = x[u.as_slice()[p]] + e.offset as f64 - mu[p];
                        st.s1[p] += w * e.weight * z;
                        st.s2[p] += w * e.weight * z * z;
                    }
                }
            }
        }
    }
    Ok(stats)
}

/// Closed-form parameter updates from the weighted sufficient statistics.
fn finish_m_step(model: &SparseMixture, stats: &[Stats], cfg: &EmConfig) -> Result<SparseMixture> {
    let alive: Vec<bool> = stats
        .iter()
        .zip(model.alpha())
        .map(|(s, a)| *a > 0.0 && s.mass >= cfg.empty_mass)
        .collect();
    let total: f64 = stats.iter().zip(&alive).filter(|(_, a)| **a).map(|(s, _)| s.mass).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let alpha: Vec<f64> = stats
        .iter()
        .zip(&alive)
        .map(|(s, a)| if *a { s.mass / total } else { 0.0 })
        .collect();
    let mut components = Vec::with_capacity(stats.len());
    for ((comp, st), live) in model.components().iter().zip(stats).zip(&alive) {
        if !live || comp.u().is_empty() {
            components.push(comp.clone());
            continue;
        }
        components.push(update_component(comp, st, cfg));
    }
    SparseMixture::new(model.dim(), alpha, components)
}

fn update_component(comp: &ComponentParams, st: &Stats, cfg: &EmConfig) -> ComponentParams {
    let n = comp.u().len();
    match comp {
        ComponentParams::VonMises { u, mu, kappa } => {
            let mut new_mu = mu.clone();
            let mut new_kappa = kappa.clone();
            for p in 0..n {
                let c = st.s1[p] / st.mass;
                let s = st.s2[p] / st.mass;
                if let Ok(angle) = arctan_star(s, c) {
                    new_mu[p] = wrap_unit(angle / std::f64::consts::TAU);
                }
                let r = (c * c + s * s).sqrt().clamp(cfg.r_clamp, 1.0 - cfg.r_clamp);
                new_kappa[p] = bessel_ratio_inverse(r)
                    .map(|k| k.min(cfg.kappa_max))
                    .unwrap_or(cfg.kappa_max);
            }
            ComponentParams::VonMises {
                u: u.clone(),
                mu: new_mu,
                kappa: new_kappa,
            }
        }
        ComponentParams::DiagWrapped { u, mu, .. } => {
            let mut new_mu = Vec::with_capacity(n);
            let mut new_s2 = Vec::with_capacity(n);
            for p in 0..n {
                let m = st.s1[p] / st.mass;
                new_mu.push(wrap_unit(mu[p] + m));
                new_s2.push((st.s2[p] / st.mass - m * m).max(cfg.sigma2_floor));
            }
            ComponentParams::DiagWrapped {
                u: u.clone(),
                mu: new_mu,
                sigma2: new_s2,
            }
        }
        ComponentParams::Wrapped { u, mu, sigma } => {
            let m: Vec<f64> = st.s1.iter().map(|v| v / st.mass).collect();
            let mut cov = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    let v = 0.5 * (st.s2[a * n + b] + st.s2[b * n + a]) / st.mass - m[a] * m[b];
                    cov[a * n + b] = v;
                }
                cov[a * n + a] = cov[a * n + a].max(cfg.sigma2_floor);
            }
            match spd_guard(&cov, n) {
                Ok(cov) => ComponentParams::Wrapped {
                    u: u.clone(),
                    mu: mu.iter().zip(&m).map(|(a, b)| wrap_unit(a + b)).collect(),
                    sigma: cov,
                },
                Err(_) => {
                    log::warn!("covariance update for component on {u} is not positive definite; keeping previous value");
                    ComponentParams::Wrapped {
                        u: u.clone(),
                        mu: mu.iter().zip(&m).map(|(a, b)| wrap_unit(a + b)).collect(),
                        sigma: sigma.clone(),
                    }
                }
            }
        }
    }
}

/// M-step from explicit responsibilities (von Mises).
pub fn m_step_von_mises(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    resp: &Responsibilities,
    cfg: &EmConfig,
) -> Result<SparseMixture> {
    require_family(model, Family::VonMises)?;
    m_step(model, batch, resp, cfg)
}

/// M-step from explicit responsibilities (full wrapped normal).
pub fn m_step_wrapped(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    resp: &Responsibilities,
    cfg: &EmConfig,
) -> Result<SparseMixture> {
    require_family(model, Family::Wrapped)?;
    m_step(model, batch, resp, cfg)
}

/// M-step from explicit responsibilities (diagonal wrapped normal).
pub fn m_step_diag(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    resp: &Responsibilities,
    cfg: &EmConfig,
) -> Result<SparseMixture> {
    require_family(model, Family::DiagWrapped)?;
    m_step(model, batch, resp, cfg)
}

/// M-step for any family; parameters of empty components are kept.
pub fn m_step(
    model: &SparseMixture,
    batch: &WeightedSampleBatch,
    resp: &Responsibilities,
    cfg: &EmConfig,
) -> Result<SparseMixture> {
    let stats = stats_from_resp(model, batch, resp)?;
    finish_m_step(model, &stats, cfg)
}

/// One E+M cycle without materializing responsibilities; returns the updated
/// model and the objective of the input model.
pub fn em_update(model: &SparseMixture, batch: &WeightedSampleBatch, cfg: &EmConfig) -> Result<(SparseMixture, f64)> {
    let trunc = cfg.truncation_for(model);
    let blocks = run_blocks(model, batch, trunc, false)?;
    let (stats, nll) = reduce_stats(model, &blocks);
    Ok((finish_m_step(model, &stats, cfg)?, nll))
}

/// One E+M cycle with the objective before and after.
pub fn em_step(model: &SparseMixture, batch: &WeightedSampleBatch, cfg: &EmConfig) -> Result<EmStepResult> {
    let (updated, nll_before) = em_update(model, batch, cfg)?;
    let nll_after = objective(&updated, batch, cfg)?;
    Ok(EmStepResult {
        model: updated,
        nll_before,
        nll_after,
    })
}

/// Weighted negative log-likelihood at the truncation `cfg` selects.
pub fn objective(model: &SparseMixture, batch: &WeightedSampleBatch, cfg: &EmConfig) -> Result<f64> {
    let trunc = cfg.truncation_for(model);
    if trunc == model.truncation() {
        return crate::mixture::neg_log_likelihood(model, batch);
    }
    let blocks = run_blocks(model, batch, trunc, false)?;
    Ok(reduce_stats(model, &blocks).1)
}

/// Iterates EM until the relative improvement drops below `cfg.tol` or
/// `cfg.max_iter` steps; returns the model and the objective trace.
pub fn run_em(model: &SparseMixture, batch: &WeightedSampleBatch, cfg: &EmConfig) -> Result<(SparseMixture, Vec<f64>)> {
    let mut current = model.clone();
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        let (next, nll) = em_update(&current, batch, cfg)?;
        if let Some(prev) = trace.last() {
            let prev: f64 = *prev;
            if (prev - nll).abs() <= cfg.tol * nll.abs().max(1e-300) {
                trace.push(nll);
                return Ok((current, trace));
            }
        }
        trace.push(nll);
        current = next;
    }
    let last = objective(&current, batch, cfg)?;
    trace.push(last);
    Ok((current, trace))
}

#[cfg(test)]
mod tests;
