//! The `ℓ0` proximal step on the simplex, the alternating EM/prox loop, and
//! reduction of redundant components.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::em::{em_update, objective, EmConfig};
use crate::error::{Error, Result};
use crate::mixture::{sample::draw_local, SparseMixture, WeightedSampleBatch};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::torus::TruncationLevel;

/// Step size and penalty weight of the penalized objective
/// `L_λ = L + λ‖α‖₀` and the outer loop controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxConfig {
    /// Prox step size `γ`.
    pub gamma: f64,
    /// Penalty weight `λ`; `None` means `0.1·N/1000` for a batch of size `N`.
    pub lambda: Option<f64>,
    /// Relative change of `L_λ` that ends the loop once the support is stable.
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            lambda: None,
            tol: 1e-7,
            max_outer: 500,
        }
    }
}

/// Default prox step size.
pub const DEFAULT_GAMMA: f64 = 5e-4;

impl ProxConfig {
    pub fn lambda_for(&self, n_samples: usize) -> f64 {
        self.lambda.unwrap_or(0.1 * n_samples as f64 / 1000.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidParameter(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// `prox_{γh}(α)` for `h = ‖·‖₀ + ι_Δ`.
///
/// The `n` smallest weights are zeroed and their mass is spread evenly over
/// the survivors, with `n` the smallest minimizer of
/// `g(n) = (S_n²/(K−n) + Σ_{k≤n} α_k²)/(2γ) − n` over the ascending order.
pub fn prox_l0_simplex(alpha: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let k = alpha.len();
    if k == 0 {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    crate::mixture::check_simplex(alpha, 1e-9)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| alpha[a].total_cmp(&alpha[b]).then(a.cmp(&b)));
    let (mut s, mut q) = (0.0, 0.0);
    let (mut best_n, mut best_g, mut best_s) = (0, 0.0, 0.0);
    for n in 1..k {
        let a = alpha[order[n - 1]];
        s += a;
        q += a * a;
        let g = (s * s / (k - n) as f64 + q) / (2.0 * gamma) - n as f64;
        if g < best_g {
            best_n = n;
            best_g = g;
            best_s = s;
        }
    }
    let mut out = alpha.to_vec();
    if best_n == 0 {
        return Ok(out);
    }
    let share = best_s / (k - best_n) as f64;
    for (rank, &idx) in order.iter().enumerate() {
        if rank < best_n {
            out[idx] = 0.0;
        } else {
            out[idx] += share;
        }
    }
    Ok(out)
}

/// Prox objective `(1/2γ)‖β−α‖² + ‖β‖₀`.
pub fn prox_objective(beta: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let dist: f64 = beta.iter().zip(alpha).map(|(b, a)| (b - a) * (b - a)).sum();
    dist / (2.0 * gamma) + beta.iter().filter(|b| **b > 0.0).count() as f64
}

/// One row of the outer-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// `L(α^{(r)}, ϑ^{(r)}) + λ‖α^{(r)}‖₀`.
    pub l_lambda: f64,
    pub nll: f64,
    pub nnz_alpha: usize,
    /// Components held in the model at iteration `r`.
    pub k_alive: usize,
}

/// History of a penalized fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
    /// `(r, λ_r)` at iterations where the prox step shrank the support:
    /// the penalty weight above which that step does not increase `L_λ`.
    pub lambda_r: Vec<(usize, f64)>,
    pub lambda: f64,
    pub gamma: f64,
}

impl FitTrace {
    /// CSV with header `iteration,L_lambda,nnz_alpha,K_alive`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_csv_from(writer, 0, true)
    }

    pub(crate) fn write_csv_from<W: Write>(&self, writer: W, offset: usize, header: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        if header {
            w.write_record(["iteration", "L_lambda", "nnz_alpha", "K_alive"]).map_err(io)?;
        }
        for r in &self.rows {
            w.write_record([
                (r.iteration + offset).to_string(),
                crate::mixture::format_decimal(r.l_lambda),
                r.nnz_alpha.to_string(),
                r.k_alive.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.rows.last().map(|r| r.nll)
    }
}

/// Alternates one EM step and one prox step until the support is stable and
/// `L_λ` changes by less than `prox.tol` relatively, or `prox.max_outer`
/// iterations. Components with exactly zero weight are removed.
pub fn penalized_fit(
    model0: &SparseMixture,
    batch: &WeightedSampleBatch,
    prox: &ProxConfig,
    em: &EmConfig,
) -> Result<(SparseMixture, FitTrace)> {
    prox.validate()?;
    let lambda = prox.lambda_for(batch.len());
    let mut trace = FitTrace {
        lambda,
        gamma: prox.gamma,
        ..Default::default()
    };
    let mut current = model0.clone();
    let mut prev_l: Option<f64> = None;
    let mut prev_nnz = current.support_size();
    for r in 0..prox.max_outer {
        let (half, nll) = em_update(&current, batch, em)?;
        let nnz = current.support_size();
        let l_lambda = nll + lambda * nnz as f64;
        trace.rows.push(TraceRow {
            iteration: r,
            l_lambda,
            nll,
            nnz_alpha: nnz,
            k_alive: current.n_components(),
        });
        if let Some(p) = prev_l {
            if nnz == prev_nnz && (p - l_lambda).abs() <= prox.tol * l_lambda.abs().max(1e-300) {
                return Ok((current.without_empty(), trace));
            }
        }
        prev_l = Some(l_lambda);
        prev_nnz = nnz;
        let alpha = prox_l0_simplex(half.alpha(), prox.gamma)?;
        let next = half.with_alpha(alpha)?;
        let drop = half.support_size() - next.support_size();
        if drop > 0 {
            let before = objective(&half, batch, em)?;
            let after = objective(&next, batch, em)?;
            let lam_r = (after - before) / drop as f64;
            log::info!("iteration {r}: support {} -> {}, lambda_r = {lam_r:.6e}", half.support_size(), next.support_size());
            trace.lambda_r.push((r, lam_r));
        }
        current = next.without_empty();
    }
    let nll = objective(&current, batch, em)?;
    let nnz = current.support_size();
    trace.rows.push(TraceRow {
        iteration: prox.max_outer,
        l_lambda: nll + lambda * nnz as f64,
        nll,
        nnz_alpha: nnz,
        k_alive: current.n_components(),
    });
    Ok((current.without_empty(), trace))
}

/// Monte Carlo estimate of `½(KL(p‖q) + KL(q‖p))` between two components on
/// the same index set.
pub fn symmetric_kl(
    p: &crate::mixture::ComponentParams,
    q: &crate::mixture::ComponentParams,
    n_mc: usize,
    rng_seed: u64,
    trunc: TruncationLevel,
) -> Result<f64> {
    if p.u() != q.u() {
        return Err(Error::InvalidInput("components live on different index sets".into()));
    }
    if p.u().is_empty() {
        return Ok(0.0);
    }
    let kp = p.kernel()?;
    let kq = q.kernel()?;
    let one_way = |from: &crate::mixture::ComponentParams, kf: &crate::mixture::Kernel, kt: &crate::mixture::Kernel, stream| {
        let mut rng = stream_rng(rng_seed, stream);
        let mut s = Vec::new();
        let mut acc = 0.0;
        for _ in 0..n_mc {
            draw_local(from, kf, &mut rng, &mut s);
            acc += kf.log_density(&s, trunc) - kt.log_density(&s, trunc);
        }
        acc / n_mc as f64
    };
    Ok(0.5 * (one_way(p, &kp, &kq, 0) + one_way(q, &kq, &kp, 1)))
}

/// Removes zero-weight components, then merges pairs with identical index
/// sets whose symmetrized KL estimate is below `kl_threshold`. The merged
/// component carries the summed weight and the parameters of the heavier one.
pub fn merge_similar(model: &SparseMixture, n_mc: usize, kl_threshold: f64, rng_seed: u64) -> Result<SparseMixture> {
    let model = model.without_empty();
    let k = model.n_components();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| model.alpha()[b].total_cmp(&model.alpha()[a]).then(a.cmp(&b)));
    let mut weight = model.alpha().to_vec();
    let mut absorbed = vec![false; k];
    let trunc = model.truncation();
    let base = derive_seed(rng_seed, streams::MERGE);
    for (rank, &a) in order.iter().enumerate() {
        if absorbed[a] {
            continue;
        }
        for &b in &order[rank + 1..] {
            if absorbed[b] || model.components()[a].u() != model.components()[b].u() {
                continue;
            }
            let pair_seed = derive_seed(base, (a * k + b) as u64);
            let kl = symmetric_kl(&model.components()[a], &model.components()[b], n_mc, pair_seed, trunc)?;
            if kl < kl_threshold {
                log::debug!(
                    "merging component {b} into {a} on {} (KL {kl:.4})",
                    model.components()[a].u()
                );
                weight[a] += weight[b];
                weight[b] = 0.0;
                absorbed[b] = true;
            }
        }
    }
    if !absorbed.iter().any(|x| *x) {
        return Ok(model);
    }
    let keep: Vec<usize> = (0..k).filter(|&i| !absorbed[i]).collect();
    let total: f64 = keep.iter().map(|&i| weight[i]).sum();
    SparseMixture::new(
        model.dim(),
        keep.iter().map(|&i| weight[i] / total).collect(),
        keep.iter().map(|&i| model.components()[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests;
