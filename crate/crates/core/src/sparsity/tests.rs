use super::*;
use crate::em::run_em;
use crate::mixture::{sample, ComponentParams, Family, IndexSet};
use rand::Rng as _;

/// Euclidean projection of `v` onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Minimum of the prox objective over all supports.
pub(crate) fn brute_force_min(alpha: &[f64], gamma: f64) -> f64 {
    let k = alpha.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| alpha[i]).collect();
        let proj = project_simplex(&sub);
        let mut beta = vec![0.0; k];
        for (p, &i) in idx.iter().enumerate() {
            beta[i] = proj[p];
        }
        best = best.min(prox_objective(&beta, alpha, gamma));
    }
    best
}

fn random_simplex(rng: &mut crate::rng::Rng, k: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..k)
        .map(|_| if rng.random::<f64>() < 0.15 { 0.0 } else { -rng.random::<f64>().ln() })
        .collect();
    if a.iter().all(|x| *x == 0.0) {
        a[0] = 1.0;
    }
    let s: f64 = a.iter().sum();
    a.iter().map(|x| x / s).collect()
}

#[test]
fn vanishing_step_keeps_weights() {
    let a = [0.1, 0.2, 0.3, 0.4];
    assert_eq!(prox_l0_simplex(&a, 1e-12).unwrap(), a.to_vec());
}

#[test]
fn zeros_stay_zero() {
    for gamma in [1e-3, 0.1, 1.0, 5.0] {
        let out = prox_l0_simplex(&[0.0, 0.5, 0.5], gamma).unwrap();
        assert_eq!(out[0], 0.0);
    }
}

#[test]
fn rejects_non_simplex_input() {
    assert!(prox_l0_simplex(&[0.5, 0.6], 0.1).is_err());
    assert!(prox_l0_simplex(&[-0.1, 1.1], 0.1).is_err());
    assert!(prox_l0_simplex(&[0.5, 0.5], 0.0).is_err());
}

#[test]
fn matches_exhaustive_oracle() {
    let mut rng = stream_rng(1, 0);
    for _ in 0..300 {
        let k = rng.random_range(2..=8usize);
        let alpha = random_simplex(&mut rng, k);
        let gamma = rng.random_range(0.001..2.0);
        let out = prox_l0_simplex(&alpha, gamma).unwrap();
        let gap = prox_objective(&out, &alpha, gamma) - brute_force_min(&alpha, gamma);
        assert!(gap.abs() <= 1e-12, "gap {gap} for {alpha:?}, γ={gamma}");
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-12 && out.iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn permutation_equivariant() {
    let mut rng = stream_rng(2, 0);
    for _ in 0..200 {
        let k = rng.random_range(2..=10usize);
        let alpha = random_simplex(&mut rng, k);
        let gamma = rng.random_range(0.001..1.0);
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f64> = perm.iter().map(|&p| alpha[p]).collect();
        let a = prox_l0_simplex(&alpha, gamma).unwrap();
        let b = prox_l0_simplex(&permuted, gamma).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((b[i] - a[p]).abs() < 1e-15);
        }
    }
}

#[test]
fn unchanged_support_returns_input_exactly() {
    let a = [0.3, 0.3, 0.4];
    assert_eq!(prox_l0_simplex(&a, 0.01).unwrap(), a.to_vec());
}

#[test]
fn ties_break_toward_fewer_zeros() {
    // g(0) = 0 = g(1) when α₁²·K/(K−1) = 2γ
    let a = [0.2, 0.8];
    let gamma = 0.04;
    let g1 = (0.2f64.powi(2) + 0.04) / (2.0 * gamma) - 1.0;
    assert!(g1.abs() < 1e-12);
    assert_eq!(prox_l0_simplex(&a, gamma).unwrap(), a.to_vec());
}

fn diag(u: &[usize], mu: &[f64], s2: &[f64]) -> ComponentParams {
    ComponentParams::DiagWrapped {
        u: IndexSet::new(u.to_vec()).unwrap(),
        mu: mu.to_vec(),
        sigma2: s2.to_vec(),
    }
}

fn toy_truth() -> SparseMixture {
    SparseMixture::new(
        3,
        vec![0.5, 0.3, 0.2],
        vec![
            diag(&[0, 1], &[0.3, 0.6], &[0.01, 0.01]),
            diag(&[2], &[0.8], &[0.02]),
            ComponentParams::uniform(Family::DiagWrapped),
        ],
    )
    .unwrap()
}

fn overcomplete_start() -> SparseMixture {
    SparseMixture::new(
        3,
        vec![0.3, 0.2, 0.2, 0.1, 0.1, 0.1],
        vec![
            diag(&[0, 1], &[0.32, 0.55], &[0.02, 0.02]),
            diag(&[2], &[0.75], &[0.03]),
            ComponentParams::uniform(Family::DiagWrapped),
            diag(&[0, 1], &[0.25, 0.65], &[0.02, 0.02]),
            diag(&[1], &[0.1], &[0.05]),
            diag(&[0], &[0.9], &[0.05]),
        ],
    )
    .unwrap()
}

#[test]
fn tiny_penalty_matches_plain_em() {
    let b = sample(&toy_truth(), 600, 3).unwrap();
    let start = overcomplete_start();
    let em = EmConfig {
        max_iter: 30,
        tol: 0.0,
        ..Default::default()
    };
    let prox = ProxConfig {
        gamma: 1e-10,
        lambda: Some(1e-10),
        tol: 0.0,
        max_outer: 30,
    };
    let (_, trace) = penalized_fit(&start, &b, &prox, &em).unwrap();
    let (_, plain) = run_em(&start, &b, &em).unwrap();
    for (row, nll) in trace.rows.iter().zip(&plain) {
        assert!((row.l_lambda - nll).abs() < 1e-8 * nll.abs().max(1.0) + 6e-10);
    }
}

#[test]
fn penalized_fit_prunes_and_respects_threshold() {
    let b = sample(&toy_truth(), 2000, 5).unwrap();
    let prox = ProxConfig {
        gamma: 0.01,
        ..Default::default()
    };
    let (fit, trace) = penalized_fit(&overcomplete_start(), &b, &prox, &EmConfig::default()).unwrap();
    assert!(trace.rows.windows(2).all(|w| w[1].nnz_alpha <= w[0].nnz_alpha));
    let k0 = fit.support_size() as f64;
    let bound = (2.0 * prox.gamma * (k0 - 1.0) / k0).sqrt();
    assert!(fit.alpha().iter().all(|a| *a >= bound - 1e-9), "{:?} vs {bound}", fit.alpha());
    assert!(fit.n_components() < 6);
    // L_λ is nonincreasing once λ exceeds every empirical λ_r
    let lam = trace.lambda_r.iter().map(|x| x.1).fold(0.0, f64::max) + 1.0;
    let l: Vec<f64> = trace.rows.iter().map(|r| r.nll + lam * r.nnz_alpha as f64).collect();
    assert!(l.windows(2).all(|w| w[1] <= w[0] + 1e-8));
}

#[test]
fn trace_csv_has_expected_columns() {
    let b = sample(&toy_truth(), 300, 5).unwrap();
    let (_, trace) = penalized_fit(&overcomplete_start(), &b, &ProxConfig::default(), &EmConfig::default()).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,L_lambda,nnz_alpha,K_alive\n"));
    assert_eq!(text.lines().count(), trace.rows.len() + 1);
}

#[test]
fn merge_identical_components() {
    let c = diag(&[0], &[0.3], &[0.01]);
    let m = SparseMixture::new(2, vec![0.25, 0.35, 0.4], vec![c.clone(), c, ComponentParams::uniform(Family::DiagWrapped)]).unwrap();
    let merged = merge_similar(&m, 2000, 0.15, 1).unwrap();
    assert_eq!(merged.n_components(), 2);
    assert!((merged.alpha()[0] - 0.6).abs() < 1e-15);
}

#[test]
fn merge_keeps_heavier_parameters() {
    let a = diag(&[1], &[0.3], &[0.01]);
    let b = diag(&[1], &[0.305], &[0.0102]);
    let m = SparseMixture::new(2, vec![0.3, 0.7], vec![a, b.clone()]).unwrap();
    let merged = merge_similar(&m, 2000, 0.15, 1).unwrap();
    assert_eq!(merged.n_components(), 1);
    assert_eq!(merged.components()[0], b);
}

#[test]
fn merge_requires_identical_index_sets() {
    let m = SparseMixture::new(2, vec![0.5, 0.5], vec![diag(&[0], &[0.3], &[0.01]), diag(&[1], &[0.3], &[0.01])]).unwrap();
    assert_eq!(merge_similar(&m, 2000, 0.15, 1).unwrap().n_components(), 2);
}

#[test]
fn distinct_components_do_not_merge() {
    let w = |mu: f64| ComponentParams::Wrapped {
        u: IndexSet::new(vec![0]).unwrap(),
        mu: vec![mu],
        sigma: vec![0.005],
    };
    let m = SparseMixture::new(1, vec![0.5, 0.5], vec![w(0.2), w(0.8)]).unwrap();
    let kl = symmetric_kl(&m.components()[0], &m.components()[1], 2000, 3, m.truncation()).unwrap();
    assert!(kl > 10.0, "{kl}");
    assert_eq!(merge_similar(&m, 2000, 0.1, 1).unwrap().n_components(), 2);
}

#[test]
fn merge_drops_zero_weights() {
    let m = SparseMixture::new(2, vec![1.0, 0.0], vec![diag(&[0], &[0.3], &[0.01]), diag(&[1], &[0.3], &[0.01])]).unwrap();
    assert_eq!(merge_similar(&m, 100, 0.15, 1).unwrap().n_components(), 1);
}
