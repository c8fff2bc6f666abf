//! Growing coupling sets from the uniform model: weighted Kolmogorov–Smirnov
//! uniformity tests and correlation tests decide which coordinates join each
//! component, followed by a penalized refit and a merge of similar components.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::mixture::{neg_log_likelihood, ComponentParams, Family, IndexSet, SparseMixture, WeightedSampleBatch};
use crate::rng::derive_seed;
use crate::sparsity::{merge_similar, penalized_fit, FitTrace, ProxConfig};
use crate::torus::{bessel_ratio_inverse, weighted_circular_moments};

/// Controls of the selection heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub family: Family,
    /// Number of expansion rounds, i.e. the largest interaction order.
    pub d_s: usize,
    /// Critical value of the weighted KS statistic.
    pub c1: f64,
    /// Threshold on absolute weighted correlations.
    pub c2: f64,
    /// Monte Carlo sample count of the KL estimate used for merging.
    pub n_mc: usize,
    pub kl_threshold: f64,
    /// Bounds on the variance assigned to a newly added coordinate.
    pub init_sigma2_min: f64,
    pub init_sigma2_max: f64,
    pub prox: ProxConfig,
    pub em: EmConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            family: Family::DiagWrapped,
            d_s: 3,
            c1: 3.0,
            c2: 0.2,
            n_mc: 2000,
            kl_threshold: 0.15,
            init_sigma2_min: 1e-4,
            init_sigma2_max: 0.25,
            prox: ProxConfig::default(),
            em: EmConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 {
            return Err(Error::InvalidParameter("d_s must be at least 1".into()));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::InvalidParameter("c1 must be positive".into()));
        }
        if !(self.c2 > 0.0 && self.c2 < 1.0) {
            return Err(Error::InvalidParameter("c2 must lie in (0, 1)".into()));
        }
        if self.n_mc == 0 || !(self.kl_threshold > 0.0) {
            return Err(Error::InvalidParameter("n_mc and kl_threshold must be positive".into()));
        }
        if !(self.init_sigma2_min > 0.0 && self.init_sigma2_min <= self.init_sigma2_max) {
            return Err(Error::InvalidParameter("invalid initial variance bounds".into()));
        }
        self.prox.validate()
    }
}

/// Weighted KS statistic against the uniform law on `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsStatistic {
    /// `√n_eff · sup_t |F_w(t) − t|`.
    pub value: f64,
    /// `(Σw)²/Σw²`.
    pub effective_n: f64,
}

/// `√n_eff · max_i max(s_i − x_i, x_i − s_{i−1})` over the sorted samples with
/// cumulative normalized weights `s_i`.
pub fn weighted_ks_uniform(samples: &[f64], weights: &[f64]) -> Result<KsStatistic> {
    if samples.len() != weights.len() {
        return Err(Error::Dimension {
            expected: samples.len(),
            got: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let (mut cum, mut sup) = (0.0, 0.0f64);
    for &i in &order {
        let below = cum / total;
        cum += weights[i];
        let x = samples[i];
        sup = sup.max(cum / total - x).max(x - below);
    }
    let effective_n = total * total / sq;
    Ok(KsStatistic {
        value: effective_n.sqrt() * sup,
        effective_n,
    })
}

/// `true` when the weighted KS statistic reaches `c1`.
pub fn uniformity_rejected(samples: &[f64], weights: &[f64], c1: f64) -> Result<bool> {
    Ok(weighted_ks_uniform(samples, weights)?.value >= c1)
}

/// Weighted Pearson correlation; `None` when either series has no spread.
pub fn weighted_correlation(weights: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let ma = weights.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() / total;
    let mb = weights.iter().zip(b).map(|(w, x)| w * x).sum::<f64>() / total;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for ((w, x), y) in weights.iter().zip(a).zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += w * dx * dy;
        saa += w * dx * dx;
        sbb += w * dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `true` when `|Corr_w(x_m, x_j)| ≥ c2` for some series `x_j` of `x_u`.
pub fn correlation_rejected(weights_beta: &[f64], x_m: &[f64], x_u: &[Vec<f64>], c2: f64) -> bool {
    x_u.iter()
        .any(|xj| weighted_correlation(weights_beta, x_m, xj).is_some_and(|r| r.abs() >= c2))
}

/// Adds coordinate `m` to a component, giving it an independent univariate
/// factor with the supplied parameters.
fn extend_component(c: &ComponentParams, m: usize, mu_hat: f64, spread: f64) -> ComponentParams {
    let (u, p) = c.u().with(m);
    let insert = |v: &[f64], x: f64| {
        let mut out = v.to_vec();
        out.insert(p, x);
        out
    };
    match c {
        ComponentParams::Wrapped { mu, sigma, .. } => {
            let n = mu.len();
            let mut s = vec![0.0; (n + 1) * (n + 1)];
            let old = |i: usize| if i < p { Some(i) } else if i > p { Some(i - 1) } else { None };
            for a in 0..=n {
                for b in 0..=n {
                    s[a * (n + 1) + b] = match (old(a), old(b)) {
                        (Some(i), Some(j)) => sigma[i * n + j],
                        (None, None) => spread,
                        _ => 0.0,
                    };
                }
            }
            ComponentParams::Wrapped {
                u,
                mu: insert(mu, mu_hat),
                sigma: s,
            }
        }
        ComponentParams::DiagWrapped { mu, sigma2, .. } => ComponentParams::DiagWrapped {
            u,
            mu: insert(mu, mu_hat),
            sigma2: insert(sigma2, spread),
        },
        ComponentParams::VonMises { mu, kappa, .. } => ComponentParams::VonMises {
            u,
            mu: insert(mu, mu_hat),
            kappa: insert(kappa, spread),
        },
    }
}

/// Univariate initialization `(μ̂, σ̂² or κ̂)` from weighted circular moments.
fn univariate_init(x: &[f64], w: &[f64], family: Family, cfg: &SelectionConfig) -> (f64, f64) {
    let (mu, rbar) = weighted_circular_moments(x, w).unwrap_or((0.5, 0.0));
    let rbar = rbar.clamp(cfg.em.r_clamp, 1.0 - cfg.em.r_clamp);
    let spread = match family {
        Family::VonMises => bessel_ratio_inverse(rbar).unwrap_or(cfg.em.kappa_max).min(cfg.em.kappa_max),
        _ => {
            let tau2 = (2.0 * std::f64::consts::PI).powi(2);
            (-2.0 * rbar.ln() / tau2).clamp(cfg.init_sigma2_min, cfg.init_sigma2_max)
        }
    };
    (mu, spread)
}

/// One expansion: every component `u_k` is replaced by `U_k`, the set holding
/// `u_k` and each `u_k ∪ {m}` for which a test rejects, with `α_k` split
/// equally among the members.
pub fn expand_components(model: &SparseMixture, batch: &WeightedSampleBatch, cfg: &SelectionConfig) -> Result<SparseMixture> {
    let beta = model.posteriors(batch)?;
    let k = model.n_components();
    let d = model.dim();
    let columns: Vec<Vec<f64>> = (0..d).map(|m| batch.column(m)).collect();
    let mut alpha = Vec::new();
    let mut comps = Vec::new();
    for (kk, comp) in model.components().iter().enumerate() {
        let a = model.alpha()[kk];
        let wb: Vec<f64> = (0..batch.len()).map(|i| batch.weights()[i] * beta[i * k + kk]).collect();
        let mut members = vec![comp.clone()];
        if a > 0.0 && wb.iter().any(|w| *w > 0.0) {
            let xu: Vec<Vec<f64>> = comp.u().iter().map(|j| columns[j].clone()).collect();
            for m in (0..d).filter(|m| !comp.u().contains(*m)) {
                let ks = weighted_ks_uniform(&columns[m], &wb)?;
                let corr = correlation_rejected(&wb, &columns[m], &xu, cfg.c2);
                if ks.value >= cfg.c1 || corr {
                    log::debug!(
                        "component {} gains coordinate {m} (KS {:.3}, correlation test {})",
                        comp.u(),
                        ks.value,
                        if corr { "rejected" } else { "accepted" }
                    );
                    let (mu_hat, spread) = univariate_init(&columns[m], &wb, comp.family(), cfg);
                    members.push(extend_component(comp, m, mu_hat, spread));
                }
            }
        }
        let share = a / members.len() as f64;
        for c in members {
            alpha.push(share);
            comps.push(c);
        }
    }
    let total: f64 = alpha.iter().sum();
    SparseMixture::new(d, alpha.iter().map(|a| a / total).collect(), comps)
}

/// A distinct coupling with the summed weight of its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub u: IndexSet,
    pub weight: f64,
}

/// Summary of one expansion round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub expanded_components: usize,
    pub fitted_components: usize,
    pub merged_components: usize,
    pub trace: FitTrace,
}

/// Result of [`select_and_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub couplings: Vec<Coupling>,
    pub nll: f64,
    #[serde(default)]
    pub trace_file: Option<String>,
    #[serde(skip)]
    pub rounds: Vec<RoundSummary>,
}

impl FitReport {
    /// CSV `coupling_label,aggregated_weight`.
    pub fn write_couplings_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_couplings_csv(&self.couplings, writer)
    }

    /// Outer-loop traces of all rounds, numbered consecutively.
    pub fn write_trace_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut offset = 0;
        let mut first = true;
        for round in &self.rounds {
            let mut buf = Vec::new();
            round.trace.write_csv_from(&mut buf, offset, first)?;
            writer.write_all(&buf)?;
            offset += round.trace.rows.len();
            first = false;
        }
        if first {
            FitTrace::default().write_csv(writer)?;
        }
        Ok(())
    }

    /// Distinct couplings as a sorted list of index sets.
    pub fn coupling_sets(&self) -> Vec<IndexSet> {
        self.couplings.iter().map(|c| c.u.clone()).collect()
    }
}

pub fn write_couplings_csv<W: Write>(couplings: &[Coupling], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["coupling_label", "aggregated_weight"]).map_err(io)?;
    for c in couplings {
        w.write_record([c.u.to_string(), crate::mixture::format_decimal(c.weight)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Sums the weights of components sharing an index set; sorted by size, then
/// lexicographically.
pub fn aggregate_couplings(model: &SparseMixture) -> Vec<Coupling> {
    let mut map: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
    for (c, a) in model.components().iter().zip(model.alpha()) {
        if *a > 0.0 {
            *map.entry((c.u().len(), c.u().as_slice().to_vec())).or_insert(0.0) += a;
        }
    }
    map.into_iter()
        .map(|((_, u), weight)| Coupling {
            u: IndexSet::new(u).expect("index set from a valid model"),
            weight,
        })
        .collect()
}

/// Starts from the uniform model and runs `d_s` rounds of expansion,
/// penalized refit, and merging. The batch is rescaled so that `Σw = N`.
pub fn select_and_fit(batch: &WeightedSampleBatch, cfg: &SelectionConfig, rng_seed: u64) -> Result<(SparseMixture, FitReport)> {
    cfg.validate()?;
    let batch = batch.normalized()?;
    let mut model = SparseMixture::uniform(cfg.family, batch.dim());
    let mut rounds = Vec::new();
    for round in 0..cfg.d_s {
        let expanded = expand_components(&model, &batch, cfg)?;
        if expanded.n_components() == model.n_components() {
            log::info!("round {round}: no component was expanded");
            break;
        }
        let (fitted, trace) = penalized_fit(&expanded, &batch, &cfg.prox, &cfg.em)?;
        let merged = merge_similar(&fitted, cfg.n_mc, cfg.kl_threshold, derive_seed(rng_seed, round as u64))?;
        log::info!(
            "round {round}: {} expanded, {} after refit, {} after merge",
            expanded.n_components(),
            fitted.n_components(),
            merged.n_components()
        );
        rounds.push(RoundSummary {
            round,
            expanded_components: expanded.n_components(),
            fitted_components: fitted.n_components(),
            merged_components: merged.n_components(),
            trace,
        });
        model = merged;
    }
    let nll = neg_log_likelihood(&model, &batch)?;
    let report = FitReport {
        couplings: aggregate_couplings(&model),
        nll,
        trace_file: None,
        rounds,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests;
