use super::*;
use crate::mixture::{sample, IndexSet};
use crate::rng::stream_rng;
use crate::torus::{log_bessel_i0, TruncationLevel};
use rand::Rng as _;

fn set(v: &[usize]) -> IndexSet {
    IndexSet::new(v.to_vec()).unwrap()
}

fn vm(u: &[usize], mu: &[f64], kappa: &[f64]) -> ComponentParams {
    ComponentParams::VonMises {
        u: set(u),
        mu: mu.to_vec(),
        kappa: kappa.to_vec(),
    }
}

fn wn(u: &[usize], mu: &[f64], sigma: &[f64]) -> ComponentParams {
    ComponentParams::Wrapped {
        u: set(u),
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
    }
}

fn dg(u: &[usize], mu: &[f64], sigma2: &[f64]) -> ComponentParams {
    ComponentParams::DiagWrapped {
        u: set(u),
        mu: mu.to_vec(),
        sigma2: sigma2.to_vec(),
    }
}

fn diag_matrix(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = v[i];
    }
    m
}

const T3: TruncationLevel = TruncationLevel::DEFAULT;

#[test]
fn single_component_posterior_is_one() {
    let m = SparseMixture::new(2, vec![1.0], vec![vm(&[0], &[0.3], &[2.0])]).unwrap();
    let b = sample(&m, 100, 1).unwrap();
    let r = e_step_von_mises(&m, &b).unwrap();
    assert!((0..100).all(|i| r.beta(i, 0) == 1.0));
}

#[test]
fn identical_components_split_by_weight() {
    let c = vm(&[0, 1], &[0.3, 0.6], &[2.0, 5.0]);
    let m = SparseMixture::new(2, vec![0.3, 0.7], vec![c.clone(), c]).unwrap();
    let b = sample(&m, 100, 2).unwrap();
    let r = e_step_von_mises(&m, &b).unwrap();
    for i in 0..100 {
        assert!((r.beta(i, 0) - 0.3).abs() < 1e-14 && (r.beta(i, 1) - 0.7).abs() < 1e-14);
    }
}

#[test]
fn separated_clusters_assign_confidently() {
    let m = SparseMixture::new(1, vec![0.5, 0.5], vec![vm(&[0], &[0.2], &[50.0]), vm(&[0], &[0.7], &[50.0])]).unwrap();
    let b = WeightedSampleBatch::unit(1, vec![0.2]).unwrap();
    let r = e_step_von_mises(&m, &b).unwrap();
    assert!(r.beta(0, 0) > 0.999);
}

#[test]
fn von_mises_point_mass_update() {
    let m = SparseMixture::new(1, vec![1.0], vec![vm(&[0], &[0.6], &[1.0])]).unwrap();
    let b = WeightedSampleBatch::unit(1, vec![0.25; 20]).unwrap();
    let cfg = EmConfig::default();
    let r = e_step_von_mises(&m, &b).unwrap();
    let up = m_step_von_mises(&m, &b, &r, &cfg).unwrap();
    match &up.components()[0] {
        ComponentParams::VonMises { mu, kappa, .. } => {
            assert!((mu[0] - 0.25).abs() < 1e-15, "{}", mu[0]);
            assert_eq!(kappa[0], cfg.kappa_max);
        }
        _ => unreachable!(),
    }
}

#[test]
fn von_mises_uniform_grid_gives_tiny_concentration() {
    let m = SparseMixture::new(1, vec![1.0], vec![vm(&[0], &[0.6], &[1.0])]).unwrap();
    let pts: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let b = WeightedSampleBatch::unit(1, pts).unwrap();
    let r = e_step_von_mises(&m, &b).unwrap();
    let up = m_step_von_mises(&m, &b, &r, &EmConfig::default()).unwrap();
    match &up.components()[0] {
        ComponentParams::VonMises { kappa, .. } => assert!(kappa[0] < 0.05),
        _ => unreachable!(),
    }
}

/// Weighted log-likelihood of one von Mises coordinate.
fn vm_q(x: &[f64], w: &[f64], mu: f64, kappa: f64) -> f64 {
    x.iter()
        .zip(w)
        .map(|(xi, wi)| wi * (kappa * (std::f64::consts::TAU * (xi - mu)).cos() - log_bessel_i0(kappa)))
        .sum()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn von_mises_update_maximizes_q_term() {
    let truth = SparseMixture::new(1, vec![1.0], vec![vm(&[0], &[0.8], &[3.0])]).unwrap();
    let b = sample(&truth, 200, 5).unwrap();
    let mut rng = stream_rng(5, 100);
    let w: Vec<f64> = (0..200).map(|_| rng.random_range(0.2..2.0)).collect();
    let b = WeightedSampleBatch::new(1, b.points().to_vec(), w.clone()).unwrap();
    let start = SparseMixture::new(1, vec![1.0], vec![vm(&[0], &[0.1], &[1.0])]).unwrap();
    let r = e_step_von_mises(&start, &b).unwrap();
    let up = m_step_von_mises(&start, &b, &r, &EmConfig::default()).unwrap();
    let (mu, kappa) = match &up.components()[0] {
        ComponentParams::VonMises { mu, kappa, .. } => (mu[0], kappa[0]),
        _ => unreachable!(),
    };
    // grid then alternating golden-section refinement
    let x = b.column(0);
    let mut best = (0.0, 1.0, f64::NEG_INFINITY);
    for gi in 0..400 {
        for gk in 1..100 {
            let (m0, k0) = (gi as f64 / 400.0, gk as f64 * 0.1);
            let v = vm_q(&x, &w, m0, k0);
            if v > best.2 {
                best = (m0, k0, v);
            }
        }
    }
    let (mut om, mut ok) = (best.0, best.1);
    for _ in 0..20 {
        om = golden_max(|m| vm_q(&x, &w, m, ok), om - 0.01, om + 0.01);
        ok = golden_max(|k| vm_q(&x, &w, om, k), (ok - 0.2).max(1e-6), ok + 0.2);
    }
    assert!((mu - om).abs() < 1e-4 && (kappa - ok).abs() < 1e-4, "({mu},{kappa}) vs ({om},{ok})");
    let q0 = vm_q(&x, &w, mu, kappa);
    for (dm, dk) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
        assert!(vm_q(&x, &w, mu + dm, kappa + dk) <= q0);
    }
}

fn wrapped_model() -> SparseMixture {
    SparseMixture::new(
        3,
        vec![0.2, 0.5, 0.3],
        vec![
            ComponentParams::uniform(Family::Wrapped),
            wn(&[0, 1], &[0.1, 0.95], &[0.01, 0.004, 0.004, 0.02]),
            wn(&[2], &[0.5], &[0.01]),
        ],
    )
    .unwrap()
}

#[test]
fn wrapped_posteriors_are_normalized_and_collapse() {
    let m = wrapped_model();
    let b = sample(&m, 300, 3).unwrap();
    let r = e_step_wrapped(&m, &b, T3).unwrap();
    for i in 0..300 {
        let mut total = 0.0;
        for k in 0..3 {
            let n = m.components()[k].u().len();
            let s: f64 = if n == 0 {
                r.beta(i, k)
            } else {
                r.wrapped_terms(i, k, n).iter().map(|t| t.1).sum()
            };
            if n > 0 {
                assert!((s - r.beta(i, k)).abs() < 1e-12);
            }
            total += s;
        }
        assert!((total - 1.0).abs() < 1e-10);
        // component posterior from wrapped pdfs
        let x = b.point(i);
        let dens: Vec<f64> = m
            .components()
            .iter()
            .zip(m.alpha())
            .map(|(c, a)| {
                let xu: Vec<f64> = c.u().iter().map(|j| x[j]).collect();
                a * c.log_density_local(&xu, T3).unwrap().exp()
            })
            .collect();
        let sum: f64 = dens.iter().sum();
        for k in 0..3 {
            assert!((dens[k] / sum - r.beta(i, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn wrapped_central_offset_dominates_at_mean() {
    let m = SparseMixture::new(1, vec![1.0], vec![wn(&[0], &[0.5], &[0.01])]).unwrap();
    let b = WeightedSampleBatch::unit(1, vec![0.5]).unwrap();
    let r = e_step_wrapped(&m, &b, T3).unwrap();
    let terms = r.wrapped_terms(0, 0, 1);
    let central: f64 = terms.iter().filter(|t| t.0 == vec![0]).map(|t| t.1).sum();
    assert!(central >= 1.0 - 1e-10);
}

#[test]
fn wrapped_update_reduces_to_gaussian_mle() {
    let mut rng = stream_rng(8, 0);
    let n = 400;
    let mut pts = Vec::new();
    let mut w = Vec::new();
    for _ in 0..n {
        pts.push(0.5 + rng.random_range(-0.08..0.08));
        pts.push(0.4 + rng.random_range(-0.06..0.06));
        w.push(rng.random_range(0.5..1.5));
    }
    let b = WeightedSampleBatch::new(2, pts.clone(), w.clone()).unwrap();
    let m = SparseMixture::new(2, vec![1.0], vec![wn(&[0, 1], &[0.5, 0.4], &[0.001, 0.0, 0.0, 0.001])]).unwrap();
    let r = e_step_wrapped(&m, &b, T3).unwrap();
    let up = m_step_wrapped(&m, &b, &r, &EmConfig::default()).unwrap();
    let wt: f64 = w.iter().sum();
    let mean: Vec<f64> = (0..2).map(|j| (0..n).map(|i| w[i] * pts[2 * i + j]).sum::<f64>() / wt).collect();
    let mut cov = [0.0; 4];
    for a in 0..2 {
        for c in 0..2 {
            cov[a * 2 + c] = (0..n)
                .map(|i| w[i] * (pts[2 * i + a] - mean[a]) * (pts[2 * i + c] - mean[c]))
                .sum::<f64>()
                / wt;
        }
    }
    match &up.components()[0] {
        ComponentParams::Wrapped { mu, sigma, .. } => {
            for j in 0..2 {
                assert!((mu[j] - mean[j]).abs() < 1e-12);
            }
            for e in 0..4 {
                assert!((sigma[e] - cov[e]).abs() < 1e-12, "{sigma:?} vs {cov:?}");
            }
        }
        _ => unreachable!(),
    }
}

#[test]
fn wrapped_point_mass_hits_floor() {
    let m = SparseMixture::new(2, vec![1.0], vec![wn(&[0, 1], &[0.3, 0.3], &[0.001, 0.0, 0.0, 0.001])]).unwrap();
    let b = WeightedSampleBatch::unit(2, [0.31, 0.27].repeat(30)).unwrap();
    let cfg = EmConfig::default();
    let res = em_step(&m, &b, &cfg).unwrap();
    match &res.model.components()[0] {
        ComponentParams::Wrapped { mu, sigma, .. } => {
            assert!((mu[0] - 0.31).abs() < 1e-12 && (mu[1] - 0.27).abs() < 1e-12);
            assert!(sigma[0] < 1e-7 && sigma[3] < 1e-7);
            assert!(sigma[0] >= cfg.sigma2_floor);
        }
        _ => unreachable!(),
    }
}

fn diag_model() -> SparseMixture {
    SparseMixture::new(
        3,
        vec![0.25, 0.45, 0.3],
        vec![
            ComponentParams::uniform(Family::DiagWrapped),
            dg(&[0, 2], &[0.05, 0.5], &[0.02, 0.01]),
            dg(&[1], &[0.9], &[0.03]),
        ],
    )
    .unwrap()
}

fn diag_as_full(m: &SparseMixture) -> SparseMixture {
    let comps = m
        .components()
        .iter()
        .map(|c| match c {
            ComponentParams::DiagWrapped { u, mu, sigma2 } => ComponentParams::Wrapped {
                u: u.clone(),
                mu: mu.clone(),
                sigma: diag_matrix(sigma2),
            },
            _ => unreachable!(),
        })
        .collect();
    SparseMixture::new(m.dim(), m.alpha().to_vec(), comps).unwrap()
}

#[test]
fn diag_coordinate_posteriors_agree() {
    let m = diag_model();
    let b = sample(&m, 300, 4).unwrap();
    let r = e_step_diag(&m, &b, T3).unwrap();
    for i in 0..300 {
        for k in 1..3 {
            for pos in 0..m.components()[k].u().len() {
                let s: f64 = r.gamma_terms(i, k, pos).iter().map(|t| t.1).sum();
                assert!((s - r.beta(i, k)).abs() < 1e-10);
            }
        }
        let total: f64 = r.row(i).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn diag_gamma_matches_full_lattice_oracle() {
    let m = diag_model();
    let full = diag_as_full(&m);
    let b = sample(&m, 200, 6).unwrap();
    let rd = e_step_diag(&m, &b, T3).unwrap();
    let rf = e_step_wrapped(&full, &b, T3).unwrap();
    for i in 0..200 {
        for pos in 0..2 {
            for (mm, g) in rd.gamma_terms(i, 1, pos) {
                let oracle: f64 = rf
                    .wrapped_terms(i, 1, 2)
                    .iter()
                    .filter(|(l, _)| l[pos] == mm)
                    .map(|t| t.1)
                    .sum();
                assert!((g - oracle).abs() < 1e-10, "{g} vs {oracle}");
            }
        }
    }
}

#[test]
fn diag_step_matches_full_step_with_diagonal_sigma() {
    let m = diag_model();
    let full = diag_as_full(&m);
    let b = sample(&m, 500, 7).unwrap();
    let cfg = EmConfig::default();
    let d = em_step(&m, &b, &cfg).unwrap().model;
    let f = em_step(&full, &b, &cfg).unwrap().model;
    for (a, bb) in d.alpha().iter().zip(f.alpha()) {
        assert!((a - bb).abs() < 1e-10);
    }
    for (cd, cf) in d.components().iter().zip(f.components()) {
        match (cd, cf) {
            (ComponentParams::DiagWrapped { mu, sigma2, .. }, ComponentParams::Wrapped { mu: mf, sigma, .. }) => {
                let n = mu.len();
                for p in 0..n {
                    assert!((mu[p] - mf[p]).abs() < 1e-8);
                    assert!((sigma2[p] - sigma[p * n + p]).abs() < 1e-8);
                }
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn diag_alpha_update_uses_any_coordinate() {
    let m = diag_model();
    let b = sample(&m, 300, 9).unwrap();
    let r = e_step_diag(&m, &b, T3).unwrap();
    let up = m_step_diag(&m, &b, &r, &EmConfig::default()).unwrap();
    let total = b.total_weight();
    for pos in 0..2 {
        let mass: f64 = (0..300)
            .map(|i| b.weights()[i] * r.gamma_terms(i, 1, pos).iter().map(|t| t.1).sum::<f64>())
            .sum();
        assert!((mass / total - up.alpha()[1]).abs() < 1e-10);
    }
    let u_mass: f64 = (0..300).map(|i| r.beta(i, 0)).sum::<f64>() / total;
    assert!((u_mass - up.alpha()[0]).abs() < 1e-10);
    assert!(up.components()[0].u().is_empty());
    assert!(up.components()[0].mu().is_empty());
}

#[test]
fn zero_weight_components_stay_empty() {
    for family in Family::ALL {
        let c = match family {
            Family::Wrapped => wn(&[0], &[0.3], &[0.02]),
            Family::DiagWrapped => dg(&[0], &[0.3], &[0.02]),
            Family::VonMises => vm(&[0], &[0.3], &[5.0]),
        };
        let m = SparseMixture::new(2, vec![0.6, 0.0, 0.4], vec![ComponentParams::uniform(family), c.clone(), c]).unwrap();
        let b = sample(&m, 200, 10).unwrap();
        let r = e_step(&m, &b, T3).unwrap();
        assert!((0..200).all(|i| r.beta(i, 1) == 0.0 && r.lattice(i, 1).is_empty()));
        let res = em_step(&m, &b, &EmConfig::default()).unwrap();
        assert_eq!(res.model.alpha()[1], 0.0);
        assert_eq!(res.model.components()[1], m.components()[1]);
    }
}

#[test]
fn converged_model_is_a_fixed_point() {
    let truth = SparseMixture::new(
        2,
        vec![0.5, 0.5],
        vec![wn(&[0], &[0.25], &[0.01]), wn(&[1], &[0.75], &[0.01])],
    )
    .unwrap();
    let b = sample(&truth, 400, 12).unwrap();
    let cfg = EmConfig::default();
    let mut m = truth.clone();
    for _ in 0..2000 {
        m = em_step(&m, &b, &cfg).unwrap().model;
    }
    let next = em_step(&m, &b, &cfg).unwrap().model;
    for (c0, c1) in m.components().iter().zip(next.components()) {
        for (a, bb) in c0.mu().iter().zip(c1.mu()) {
            assert!((a - bb).abs() < 1e-9);
        }
    }
    for (a, bb) in m.alpha().iter().zip(next.alpha()) {
        assert!((a - bb).abs() < 1e-9);
    }
}

#[test]
fn em_steps_descend_on_random_instances() {
    for family in Family::ALL {
        for seed in 0..10 {
            let (model, batch) = crate::em::tests::random_instance(family, seed);
            let res = em_step(&model, &batch, &EmConfig::default()).unwrap();
            assert!(res.nll_after <= res.nll_before + 1e-8, "{family} seed {seed}");
        }
    }
}

/// Random model and a batch drawn from a different random model.
pub(crate) fn random_instance(family: Family, seed: u64) -> (SparseMixture, WeightedSampleBatch) {
    let mut rng = stream_rng(seed, family as u64 + 1000);
    let d = rng.random_range(1..=3usize);
    let mut draw = || {
        let k = rng.random_range(1..=4usize);
        let mut comps = Vec::new();
        let mut alpha = Vec::new();
        for _ in 0..k {
            let size = rng.random_range(0..=d);
            let mut idx: Vec<usize> = (0..d).collect();
            for i in (1..d).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            idx.truncate(size);
            let u = IndexSet::new(idx).unwrap();
            let mu: Vec<f64> = (0..size).map(|_| rng.random::<f64>()).collect();
            let c = match family {
                Family::VonMises => ComponentParams::VonMises {
                    u,
                    mu,
                    kappa: (0..size).map(|_| rng.random_range(0.5..30.0)).collect(),
                },
                Family::DiagWrapped => ComponentParams::DiagWrapped {
                    u,
                    mu,
                    sigma2: (0..size).map(|_| rng.random_range(0.003..0.1)).collect(),
                },
                Family::Wrapped => {
                    let var: Vec<f64> = (0..size).map(|_| rng.random_range(0.003..0.1)).collect();
                    let mut sigma = diag_matrix(&var);
                    for a in 0..size {
                        for c in 0..a {
                            let v = rng.random_range(-0.4..0.4) * (var[a] * var[c]).sqrt();
                            sigma[a * size + c] = v;
                            sigma[c * size + a] = v;
                        }
                    }
                    ComponentParams::Wrapped { u, mu, sigma }
                }
            };
            comps.push(c);
            alpha.push(rng.random_range(0.1..1.0));
        }
        let s: f64 = alpha.iter().sum();
        let alpha = alpha.iter().map(|a| a / s).collect();
        SparseMixture::new(d, alpha, comps).unwrap()
    };
    let model = draw();
    let truth = draw();
    let batch = sample(&truth, 300, seed).unwrap();
    (model, batch)
}

#[test]
fn reductions_do_not_depend_on_thread_count() {
    let m = diag_model();
    let b = sample(&m, 3000, 13).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| em_step(&m, &b, &EmConfig::default()).unwrap())
    };
    let a = run(1);
    let c = run(3);
    assert_eq!(a.model, c.model);
    assert_eq!(a.nll_before.to_bits(), c.nll_before.to_bits());
}

#[test]
fn family_mismatch_is_rejected() {
    let m = diag_model();
    let b = sample(&m, 10, 1).unwrap();
    assert!(e_step_von_mises(&m, &b).is_err());
    assert!(e_step_wrapped(&m, &b, T3).is_err());
}

#[test]
fn run_em_trace_is_monotone() {
    let (model, batch) = random_instance(Family::Wrapped, 3);
    let (_, trace) = run_em(&model, &batch, &EmConfig::default()).unwrap();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-8));
}
