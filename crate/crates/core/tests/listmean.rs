use batchreg::listmean::*;
use batchreg::moments::{certify_moment_bound, mean};
use batchreg::rng::rng_for;
use batchreg::{Error, Exec};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss_cloud(seed: u64, count: usize, center: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "cloud", &[]);
    (0..count)
        .map(|_| center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    batchreg::linalg::distance(a, b)
}

#[test]
fn point_mass_gives_single_candidate() {
    let p = vec![1.5, -2.0, 0.25];
    let pts = vec![p.clone(); 40];
    let out = list_decode_mean(&pts, 0.1, 2, 1.0, &ListMeanConfig::default(), 3).unwrap();
    assert_eq!(out.candidates.len(), 1);
    assert_eq!(out.candidates[0].mean, p);
}

#[test]
fn two_separated_clusters_are_both_found() {
    let mut pts = gauss_cloud(1, 1000, &[10.0, 0.0]);
    pts.extend(gauss_cloud(2, 1000, &[-10.0, 0.0]));
    let out = list_decode_mean(&pts, 0.5, 1, 3.0, &ListMeanConfig::default(), 9).unwrap();
    for c in [[10.0, 0.0], [-10.0, 0.0]] {
        let best = out.candidates.iter().map(|m| dist(&m.mean, &c)).fold(f64::INFINITY, f64::min);
        assert!(best <= 0.5, "{best}");
    }
}

#[test]
fn clean_cloud_reduces_to_averaging() {
    let d = 4;
    let pts = gauss_cloud(5, 2000, &vec![1.0; d]);
    let out = list_decode_mean(&pts, 1.0, 1, 1.5, &ListMeanConfig::default(), 1).unwrap();
    assert_eq!(out.candidates.len(), 1);
    let tol = 3.0 * (d as f64 / pts.len() as f64).sqrt();
    assert!(dist(&out.candidates[0].mean, &mean(&pts)) <= tol);
}

#[test]
fn identity_on_certified_clean_data() {
    for trial in 0..20 {
        let pts = gauss_cloud(100 + trial, 500, &[0.5, -1.0, 2.0]);
        let k = 2;
        let m = certify_moment_bound(&pts, k, 1.0).unwrap().lambda_max;
        assert!(certify_moment_bound(&pts, k, m).unwrap().passed);
        let out = list_decode_mean(&pts, 1.0, k, m, &ListMeanConfig::default(), trial).unwrap();
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.stats.filter_steps, 0);
        assert!(dist(&out.candidates[0].mean, &mean(&pts)) <= 1e-6);
    }
}

/// `j` unit-Gaussian clusters of equal size at separation `sep` along distinct axes.
fn planted(seed: u64, j: usize, per: usize, sep: f64, d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pts = Vec::new();
    let mut means = Vec::new();
    for c in 0..j {
        let mut center = vec![0.0; d];
        center[c % d] = sep * (1 + c / d) as f64 / std::f64::consts::SQRT_2;
        let cloud = gauss_cloud(seed * 31 + c as u64, per, &center);
        means.push(mean(&cloud));
        pts.extend(cloud);
    }
    (pts, means)
}

/// The good set's moment bound is taken from its own certificate, so every
/// cluster is certifiably bounded at `M`.
fn planted_recovery(k: usize, alpha: f64, mode: FilterMode) -> usize {
    let j = (1.0 / alpha).round() as usize;
    let probe = gauss_cloud(999, 150, &[0.0; 3]);
    let m = 1.5 * certify_moment_bound(&probe, k, 1.0).unwrap().lambda_max;
    let sep = 20.0 * m.powf(0.5 / k as f64) * alpha.powf(-3.0 / k as f64);
    let cfg = ListMeanConfig {
        filter_mode: mode,
        ..Default::default()
    };
    (0..50u64)
        .filter(|&trial| {
            let (pts, means) = planted(trial, j, 150, sep, 3);
            let out = list_decode_mean(&pts, alpha, k, m, &cfg, trial).unwrap();
            means.iter().all(|mu| out.candidates.iter().any(|c| dist(&c.mean, mu) <= sep / 4.0))
        })
        .count()
}

#[test]
fn planted_clusters_recovered_k1() {
    assert!(planted_recovery(1, 0.25, FilterMode::Randomized) >= 45);
}

#[test]
fn planted_clusters_recovered_k2() {
    assert!(planted_recovery(2, 0.25, FilterMode::Randomized) >= 45);
}

#[test]
fn planted_clusters_recovered_deterministic_filter() {
    assert!(planted_recovery(2, 0.25, FilterMode::Deterministic) >= 45);
}

#[test]
fn too_few_points_rejected() {
    let pts = gauss_cloud(1, 19, &[0.0]);
    assert!(matches!(
        list_decode_mean(&pts, 0.1, 1, 1.0, &ListMeanConfig::default(), 0),
        Err(Error::TooFewPoints { needed: 20, got: 19 })
    ));
}

#[test]
fn degree_overflow_rejected() {
    let pts = gauss_cloud(1, 10, &[0.0; 65]);
    assert!(matches!(
        list_decode_mean(&pts, 0.5, 2, 1.0, &ListMeanConfig::default(), 0),
        Err(Error::DimensionOverflow { .. })
    ));
}

#[test]
fn same_seed_same_list_under_both_schedules() {
    let (mut pts, _) = planted(4, 3, 100, 30.0, 3);
    pts.extend(gauss_cloud(7, 200, &[5.0, 5.0, 5.0]).into_iter().map(|p| p.iter().map(|v| v * 4.0).collect::<Vec<_>>()));
    let run = |exec| {
        let cfg = ListMeanConfig { exec, ..Default::default() };
        list_decode_mean(&pts, 0.2, 2, 4.0, &cfg, 42).unwrap()
    };
    let a = run(Exec::Sequential);
    assert_eq!(a, run(Exec::Sequential));
    assert_eq!(a, run(Exec::Parallel));
}

#[test]
fn randomized_filter_never_increases_weight() {
    let mut rng = rng_for(3, "f", &[]);
    let cfg = ListMeanConfig::default();
    let mut w: Vec<f64> = (0..200).map(|i| if i % 7 == 0 { 0.0 } else { 1.0 }).collect();
    let scores: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
    let mut total: f64 = w.iter().sum();
    for _ in 0..10 {
        let before = w.clone();
        let removed = filter_weights(&mut w, &scores, &cfg, &mut rng);
        let now: f64 = w.iter().sum();
        assert!(w.iter().zip(&before).all(|(a, b)| a <= b));
        assert!((total - now - removed).abs() < 1e-9);
        total = now;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn list_respects_cap(seed in any::<u64>(), alpha in 0.05f64..0.5, k in 1usize..3, m in 0.01f64..10.0) {
        let mut rng = rng_for(seed, "p", &[]);
        let pts: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..3).map(|_| rng.random_range(-20.0..20.0) * rng.random::<f64>().powi(3)).collect())
            .collect();
        let cfg = ListMeanConfig::default();
        let out = list_decode_mean(&pts, alpha, k, m, &cfg, seed).unwrap();
        prop_assert!(out.candidates.len() <= (8.0 / alpha).ceil() as usize);
        for c in &out.candidates {
            prop_assert!(c.support.iter().all(|w| (0.0..=1.0).contains(w)));
            prop_assert!(c.mean.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn deterministic_filter_is_monotone(seed in any::<u64>(), frac in 0.01f64..0.5) {
        let mut rng = rng_for(seed, "d", &[]);
        let mut w: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let scores: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let cfg = ListMeanConfig { filter_mode: FilterMode::Deterministic, deterministic_fraction: frac, ..Default::default() };
        let before = w.clone();
        filter_weights(&mut w, &scores, &cfg, &mut rng);
        prop_assert!(w.iter().zip(&before).all(|(a, b)| a <= b));
    }
}
