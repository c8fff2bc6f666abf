use super::*;
use crate::experiments::{build_ground_truth, Setting};
use crate::mixture::sample;
use crate::rng::stream_rng;
use rand::Rng as _;

/// `√N · sup_t |F_N(t) − t|` from the empirical CDF evaluated by counting.
fn brute_force_ks(x: &[f64]) -> f64 {
    let n = x.len();
    let mut sup = 0.0f64;
    for &t in x {
        let at = x.iter().filter(|&&y| y <= t).count() as f64 / n as f64;
        let below = x.iter().filter(|&&y| y < t).count() as f64 / n as f64;
        sup = sup.max(at - t).max(t - below);
    }
    (n as f64).sqrt() * sup
}

#[test]
fn midpoint_grid_statistic() {
    let x: Vec<f64> = (1..=100).map(|i| (i as f64 - 0.5) / 100.0).collect();
    let ks = weighted_ks_uniform(&x, &vec![1.0; 100]).unwrap();
    assert!((ks.value - 0.05).abs() < 1e-12);
    assert!((ks.effective_n - 100.0).abs() < 1e-9);
}

#[test]
fn point_mass_statistic() {
    let ks = weighted_ks_uniform(&[0.0; 49], &[1.0; 49]).unwrap();
    assert!((ks.value - 7.0).abs() < 1e-12);
}

#[test]
fn duplicated_half_weights_match_deduplicated() {
    let mut rng = stream_rng(1, 0);
    let x: Vec<f64> = (0..60).map(|_| rng.random()).collect();
    let base = weighted_ks_uniform(&x, &vec![1.0; 60]).unwrap();
    let doubled: Vec<f64> = x.iter().chain(x.iter()).copied().collect();
    let dup = weighted_ks_uniform(&doubled, &vec![0.5; 120]).unwrap();
    assert!((base.value / 60f64.sqrt() - dup.value / dup.effective_n.sqrt()).abs() < 1e-15);
    // the effective size of the duplicated set doubles
    assert!((dup.effective_n - 120.0).abs() < 1e-9);
}

#[test]
fn invariant_under_weight_rescaling() {
    let mut rng = stream_rng(2, 0);
    let x: Vec<f64> = (0..80).map(|_| rng.random()).collect();
    let w: Vec<f64> = (0..80).map(|_| rng.random_range(0.1..3.0)).collect();
    let a = weighted_ks_uniform(&x, &w).unwrap();
    let w7: Vec<f64> = w.iter().map(|v| 7.0 * v).collect();
    let b = weighted_ks_uniform(&x, &w7).unwrap();
    assert!((a.value - b.value).abs() < 1e-12 && (a.effective_n - b.effective_n).abs() < 1e-9);
}

#[test]
fn unit_weights_match_brute_force_exactly() {
    let mut rng = stream_rng(3, 0);
    for _ in 0..200 {
        let n = rng.random_range(1..=100usize);
        let x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 50.0).floor() / 50.0).collect();
        let ks = weighted_ks_uniform(&x, &vec![1.0; n]).unwrap();
        assert_eq!(ks.value, brute_force_ks(&x));
    }
}

#[test]
fn zero_weights_are_rejected() {
    assert_eq!(weighted_ks_uniform(&[0.1, 0.2], &[0.0, 0.0]), Err(Error::ZeroWeights));
}

#[test]
fn single_sample_never_rejects() {
    let mut rng = stream_rng(4, 0);
    for _ in 0..100 {
        let x: f64 = rng.random();
        let ks = weighted_ks_uniform(&[x], &[1.0]).unwrap();
        assert!(ks.value <= 1.0);
        assert!(!uniformity_rejected(&[x], &[1.0], 1.36).unwrap());
    }
}

#[test]
fn concentrated_samples_are_rejected() {
    let c = crate::mixture::ComponentParams::Wrapped {
        u: IndexSet::new(vec![0]).unwrap(),
        mu: vec![0.5],
        sigma: vec![0.01],
    };
    let m = SparseMixture::new(1, vec![1.0], vec![c]).unwrap();
    for seed in 0..20 {
        let b = sample(&m, 10_000, seed).unwrap();
        assert!(uniformity_rejected(&b.column(0), b.weights(), 1.36).unwrap());
    }
}

#[test]
fn correlation_test_rules() {
    let mut rng = stream_rng(5, 0);
    let x: Vec<f64> = (0..500).map(|_| rng.random()).collect();
    let w = vec![1.0; 500];
    assert!(correlation_rejected(&w, &x, &[x.clone()], 0.99));
    assert!(!correlation_rejected(&w, &x, &[], 0.01));
    assert!(!correlation_rejected(&w, &x, &[vec![0.3; 500]], 0.01));
    let mut accepted = 0;
    for seed in 0..40 {
        let mut rng = stream_rng(seed, 1);
        let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        if !correlation_rejected(&vec![1.0; 10_000], &a, &[b], 0.1) {
            accepted += 1;
        }
    }
    assert!(accepted >= 38);
}

#[test]
fn weighted_correlation_matches_definition() {
    let w = [1.0, 2.0, 0.5, 1.5];
    let a = [0.1, 0.4, 0.2, 0.9];
    let b = [0.3, 0.2, 0.1, 0.8];
    let sw: f64 = w.iter().sum();
    let ma: f64 = (0..4).map(|i| w[i] * a[i]).sum::<f64>() / sw;
    let mb: f64 = (0..4).map(|i| w[i] * b[i]).sum::<f64>() / sw;
    let cov: f64 = (0..4).map(|i| w[i] * (a[i] - ma) * (b[i] - mb)).sum::<f64>();
    let va: f64 = (0..4).map(|i| w[i] * (a[i] - ma).powi(2)).sum::<f64>();
    let vb: f64 = (0..4).map(|i| w[i] * (b[i] - mb).powi(2)).sum::<f64>();
    let r = weighted_correlation(&w, &a, &b).unwrap();
    assert!((r - cov / (va * vb).sqrt()).abs() < 1e-14);
}

#[test]
fn true_model_is_not_expanded() {
    for setting in [Setting::A, Setting::B] {
        let truth = build_ground_truth(setting);
        let b = sample(&truth, 20_000, 6).unwrap();
        let cfg = SelectionConfig {
            family: crate::mixture::Family::Wrapped,
            ..Default::default()
        };
        assert_eq!(expand_components(&truth, &b, &cfg).unwrap(), truth);
    }
}

#[test]
fn uniform_start_expands_every_coupled_coordinate() {
    let truth = build_ground_truth(Setting::A);
    let b = sample(&truth, 10_000, 7).unwrap();
    for family in crate::mixture::Family::ALL {
        let cfg = SelectionConfig {
            family,
            ..Default::default()
        };
        let start = SparseMixture::uniform(family, 10);
        let out = expand_components(&start, &b, &cfg).unwrap();
        assert_eq!(out.n_components(), 11);
        assert!(out.components()[0].u().is_empty());
        for m in 0..10 {
            assert_eq!(out.components()[m + 1].u().as_slice(), &[m]);
            let mu = out.components()[m + 1].mu()[0];
            // four standard errors of the circular mean direction
            let (_, rbar) = crate::torus::weighted_circular_moments(&b.column(m), b.weights()).unwrap();
            let tol = 4.0 / (2.0 * std::f64::consts::PI * rbar * (2.0 * b.len() as f64).sqrt());
            assert!((mu - 0.5).abs() < tol, "{family} coordinate {m}: {mu} (tolerance {tol})");
        }
        assert!(out.alpha().iter().all(|a| (a - 1.0 / 11.0).abs() < 1e-15));
    }
}

#[test]
fn extension_builds_block_diagonal_covariance() {
    let c = crate::mixture::ComponentParams::Wrapped {
        u: IndexSet::new(vec![1, 5]).unwrap(),
        mu: vec![0.1, 0.2],
        sigma: vec![0.02, 0.005, 0.005, 0.03],
    };
    let e = extend_component(&c, 3, 0.7, 0.04);
    assert_eq!(
        e,
        crate::mixture::ComponentParams::Wrapped {
            u: IndexSet::new(vec![1, 3, 5]).unwrap(),
            mu: vec![0.1, 0.7, 0.2],
            sigma: vec![0.02, 0.0, 0.005, 0.0, 0.04, 0.0, 0.005, 0.0, 0.03],
        }
    );
}

#[test]
fn circular_variance_initialization() {
    let cfg = SelectionConfig::default();
    let truth: Vec<f64> = {
        let c = crate::mixture::ComponentParams::Wrapped {
            u: IndexSet::new(vec![0]).unwrap(),
            mu: vec![0.95],
            sigma: vec![0.02],
        };
        let m = SparseMixture::new(1, vec![1.0], vec![c]).unwrap();
        sample(&m, 50_000, 3).unwrap().column(0)
    };
    let w = vec![1.0; truth.len()];
    let (mu, s2) = univariate_init(&truth, &w, crate::mixture::Family::DiagWrapped, &cfg);
    assert!(((mu - 0.95 + 0.5).rem_euclid(1.0) - 0.5).abs() < 0.01);
    assert!((s2 - 0.02).abs() < 0.002, "{s2}");
    let (_, kappa) = univariate_init(&truth, &w, crate::mixture::Family::VonMises, &cfg);
    assert!(kappa > 1.0);
}

#[test]
fn uniform_data_yields_uniform_model() {
    let m = SparseMixture::uniform(crate::mixture::Family::DiagWrapped, 5);
    let b = sample(&m, 10_000, 8).unwrap();
    let (fit, report) = select_and_fit(&b, &SelectionConfig::default(), 1).unwrap();
    assert_eq!(fit.n_components(), 1);
    assert!(fit.components()[0].u().is_empty());
    assert_eq!(report.couplings.len(), 1);
    assert_eq!(report.couplings[0].weight, 1.0);
}

#[test]
fn one_round_gives_singleton_couplings() {
    let truth = build_ground_truth(Setting::A);
    let b = sample(&truth, 3000, 9).unwrap();
    let cfg = SelectionConfig {
        d_s: 1,
        ..Default::default()
    };
    let (fit, report) = select_and_fit(&b, &cfg, 2).unwrap();
    assert!(fit.components().iter().all(|c| c.u().len() <= 1));
    let total: f64 = report.couplings.iter().map(|c| c.weight).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let mut buf = Vec::new();
    report.write_couplings_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("coupling_label,aggregated_weight\n"));
}
