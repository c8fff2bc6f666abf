//! Exact sampling from sparse mixtures.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{ComponentParams, Kernel, SparseMixture, WeightedSampleBatch};
use crate::error::Result;
use crate::rng::{stream_rng, streams, Rng};
use crate::torus::wrap_unit;

/// Draws `n` i.i.d. points from `model` with unit weights.
pub fn sample(model: &SparseMixture, n: usize, rng_seed: u64) -> Result<WeightedSampleBatch> {
    Ok(sample_with_labels(model, n, rng_seed)?.0)
}

/// Like [`sample`], also returning the component index of each draw.
pub fn sample_with_labels(
    model: &SparseMixture,
    n: usize,
    rng_seed: u64,
) -> Result<(WeightedSampleBatch, Vec<usize>)> {
    let mut rng = stream_rng(rng_seed, streams::SAMPLE);
    let d = model.dim();
    let mut cumulative = Vec::with_capacity(model.n_components());
    let mut acc = 0.0;
    for a in model.alpha() {
        acc += a;
        cumulative.push(acc);
    }
    let mut points = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut local = Vec::with_capacity(d);
    for i in 0..n {
        let z: f64 = rng.random::<f64>() * acc;
        let k = cumulative
            .iter()
            .position(|c| z < *c)
            .unwrap_or_else(|| last_positive(model.alpha()));
        let row = &mut points[i * d..(i + 1) * d];
        for x in row.iter_mut() {
            *x = rng.random::<f64>();
        }
        let comp = &model.components()[k];
        draw_local(comp, &model.kernels()[k], &mut rng, &mut local);
        for (p, j) in comp.u().iter().enumerate() {
            row[j] = local[p];
        }
        labels.push(k);
    }
    Ok((WeightedSampleBatch::new(d, points, vec![1.0; n])?, labels))
}

fn last_positive(alpha: &[f64]) -> usize {
    alpha.iter().rposition(|a| *a > 0.0).unwrap_or(0)
}

/// Draws one point of `component` on `T^|u|` (local coordinates).
pub fn sample_component(component: &ComponentParams, rng: &mut Rng) -> Result<Vec<f64>> {
    let kernel = component.kernel()?;
    let mut out = Vec::new();
    draw_local(component, &kernel, rng, &mut out);
    Ok(out)
}

pub(crate) fn draw_local(component: &ComponentParams, kernel: &Kernel, rng: &mut Rng, out: &mut Vec<f64>) {
    out.clear();
    match (component, kernel) {
        (_, Kernel::Uniform) => {}
        (ComponentParams::Wrapped { mu, .. }, Kernel::Wrapped(wn)) => {
            let n = mu.len();
            let l = wn.cholesky_factor();
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..n {
                let y: f64 = (0..=i).map(|j| l[i * n + j] * z[j]).sum();
                out.push(wrap_unit(mu[i] + y));
            }
        }
        (ComponentParams::DiagWrapped { mu, sigma2, .. }, _) => {
            for (m, s) in mu.iter().zip(sigma2) {
                let z: f64 = rng.sample(StandardNormal);
                out.push(wrap_unit(m + s.sqrt() * z));
            }
        }
        (ComponentParams::VonMises { mu, kappa, .. }, _) => {
            for (m, k) in mu.iter().zip(kappa) {
                let theta = von_mises_angle(*k, rng);
                out.push(wrap_unit(m + theta / std::f64::consts::TAU));
            }
        }
        _ => unreachable!("kernel built from the same component"),
    }
}

/// Best–Fisher wrapped-Cauchy rejection sampler; returns an angle in `(−π, π]`.
pub fn von_mises_angle(kappa: f64, rng: &mut Rng) -> f64 {
    use std::f64::consts::PI;
    if kappa < 1e-8 {
        return PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}
