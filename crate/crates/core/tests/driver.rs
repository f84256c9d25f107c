use batchreg::driver::*;
use batchreg::linalg::distance;
use batchreg::model::*;
use batchreg::moments::{batch_statistics, mean};
use batchreg::pruning::list_size_bound;
use batchreg::rng::rng_for;
use batchreg::{Error, Exec};
use proptest::prelude::*;

fn gauss(k: usize) -> CovariateModel {
    CovariateModel::new(CovariateKind::StandardGaussian, k)
}

fn dataset(p: &ProblemParams, beta: &[f64], adv: AdversaryModel) -> Dataset {
    sample_dataset(p, &gauss(p.k), beta, &adv).unwrap()
}

fn est(p: &ProblemParams, radius: f64, rounds: usize) -> EstimatorParams {
    EstimatorParams {
        alpha: p.alpha,
        k: p.k,
        n: p.n,
        sigma: p.sigma,
        radius,
        q: gauss(p.k).q,
        c_m: default_c_m(p.k),
        rounds,
        listmean: Default::default(),
    }
}

fn small(seed: u64) -> ProblemParams {
    ProblemParams { d: 3, n: 5, m: 20, alpha: 0.5, sigma: 0.5, radius: 4.0, k: 1, seed }
}

#[test]
fn residualize_by_zero_is_identity() {
    let ds = dataset(&small(1), &[1.0, 2.0, 3.0], AdversaryModel::GaussianNoiseBatches);
    assert_eq!(residualize(&ds.batches, &[0.0; 3]).unwrap(), ds.batches);
}

#[test]
fn residualize_by_truth_zeroes_noiseless_inliers() {
    let mut p = small(2);
    p.sigma = 0.0;
    p.alpha = 1.0;
    let beta = [0.5, -1.0, 2.0];
    let ds = dataset(&p, &beta, AdversaryModel::GaussianNoiseBatches);
    for b in residualize(&ds.batches, &beta).unwrap() {
        assert!(b.ys().iter().all(|y| y.abs() < 1e-12));
    }
}

#[test]
fn residualize_is_linear() {
    let ds = dataset(&small(3), &[1.0, 2.0, 3.0], AdversaryModel::GaussianNoiseBatches);
    let (b1, b2) = ([0.3, -0.2, 1.1], [-1.5, 0.25, 0.4]);
    let twice = residualize(&residualize(&ds.batches, &b1).unwrap(), &b2).unwrap();
    let once = residualize(&ds.batches, &batchreg::linalg::add(&b1, &b2)).unwrap();
    for (a, b) in twice.iter().zip(&once) {
        assert_eq!(a.xs(), b.xs());
        for (x, y) in a.ys().iter().zip(b.ys()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn residualize_checks_dimension() {
    let ds = dataset(&small(4), &[1.0, 2.0, 3.0], AdversaryModel::GaussianNoiseBatches);
    assert!(matches!(residualize(&ds.batches, &[0.0; 2]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn clean_noiseless_zero_regressor_is_exact() {
    let p = ProblemParams { d: 4, n: 16, m: 200, alpha: 1.0, sigma: 0.0, radius: 1.0, k: 2, seed: 5 };
    let ds = dataset(&p, &[0.0; 4], AdversaryModel::GaussianNoiseBatches);
    let out = single_iteration_estimate(&ds.batches, &est(&p, 1.0, 1), 1).unwrap();
    assert_eq!(out.len(), 1);
    assert!(distance(&out[0], &[0.0; 4]) <= 1e-3);
}

#[test]
fn clean_noiseless_estimate_is_the_averaging_rate() {
    // Even without noise, Z_B has covariance (|beta|^2 I + beta beta^T) / n.
    let p = ProblemParams { d: 4, n: 16, m: 200, alpha: 1.0, sigma: 0.0, radius: 2.0, k: 2, seed: 6 };
    let beta = [1.0, -1.0, 0.5, 0.0];
    let ds = dataset(&p, &beta, AdversaryModel::GaussianNoiseBatches);
    let out = single_iteration_estimate(&ds.batches, &est(&p, 2.0, 1), 1).unwrap();
    assert_eq!(out.len(), 1);
    let b2: f64 = beta.iter().map(|v| v * v).sum();
    let tol = 3.0 * ((p.d as f64 + 1.0) * b2 / (p.m * p.n) as f64).sqrt();
    assert!(distance(&out[0], &beta) <= tol);
}

#[test]
fn single_decoy_gives_both_models() {
    let p = ProblemParams { d: 4, n: 16, m: 2000, alpha: 0.4, sigma: 0.5, radius: 4.0, k: 2, seed: 7 };
    let beta = vec![2.0, 0.0, 0.0, -1.0];
    let decoy = vec![-2.0, 3.0, 0.0, 1.0];
    let ds = dataset(&p, &beta, AdversaryModel::DecoyRegressors { decoys: vec![decoy.clone()] });
    let out = single_iteration_estimate(&ds.batches, &est(&p, 4.0, 1), 3).unwrap();
    let stats = batch_statistics(&ds.batches, Exec::Sequential).unwrap();
    let split = |inlier: bool| -> Vec<Vec<f64>> {
        stats.iter().zip(&ds.provenance).filter(|(_, pr)| pr.is_inlier() == inlier).map(|(s, _)| s.z.clone()).collect()
    };
    for cluster in [split(true), split(false)] {
        let target = mean(&cluster);
        let best = out.iter().map(|c| distance(c, &target)).fold(f64::INFINITY, f64::min);
        assert!(best <= 0.5, "{best}");
    }
}

#[test]
fn too_few_batches_rejected() {
    let p = ProblemParams { d: 2, n: 4, m: 10, alpha: 0.1, sigma: 1.0, radius: 2.0, k: 1, seed: 8 };
    let ds = dataset(&p, &[0.0, 0.0], AdversaryModel::GaussianNoiseBatches);
    assert!(matches!(
        single_iteration_estimate(&ds.batches, &est(&p, 2.0, 1), 0),
        Err(Error::InsufficientBatches { .. })
    ));
}

fn run(p: &ProblemParams, beta: &[f64], adv: AdversaryModel, cfg: &DriverConfig) -> (DriverOutput, Vec<ProgressEvent>) {
    let mut sampler = GeneratorSampler::new(p.clone(), gauss(p.k), beta.to_vec(), adv).unwrap().without_log();
    let mut events = Vec::new();
    let out = batch_list_decode(&mut sampler, p, gauss(p.k).q, cfg, &mut |e| events.push(e.clone())).unwrap();
    (out, events)
}

fn quick_cfg() -> DriverConfig {
    DriverConfig {
        tau: Some(0.1),
        batches_per_call: Some(300),
        prune_batches: Some(600),
        ..Default::default()
    }
}

#[test]
fn single_iteration_clean_run() {
    let p = ProblemParams { d: 4, n: 16, m: 200, alpha: 1.0, sigma: 1.0, radius: 1.0, k: 2, seed: 9 };
    let beta = [0.5, 0.5, -0.5, 0.0];
    let cfg = DriverConfig { batches_per_call: Some(200), ..Default::default() };
    let (out, events) = run(&p, &beta, AdversaryModel::GaussianNoiseBatches, &cfg);
    assert_eq!(out.iterations, 1);
    assert_eq!(events.len(), 1);
    assert_eq!(out.list.len(), 1);
    assert!(out.list.min_distance(&beta) <= 3.0 * (p.d as f64 / (p.m * p.n) as f64).sqrt());
}

#[test]
fn decoy_run_respects_bound_and_emits_events() {
    let p = ProblemParams { d: 4, n: 16, m: 300, alpha: 0.2, sigma: 1.0, radius: 8.0, k: 2, seed: 10 };
    let beta = [4.0, 0.0, 0.0, 0.0];
    let adv = AdversaryModel::DecoyRegressors { decoys: vec![vec![-4.0, 0.0, 0.0, 0.0], vec![0.0, 5.0, 0.0, 0.0]] };
    let (out, events) = run(&p, &beta, adv, &quick_cfg());
    assert_eq!(events.len(), out.iterations);
    assert_eq!(out.iterations, 4);
    for e in &events {
        assert!(e.list_size <= list_size_bound(p.alpha));
        let parsed: ProgressEvent = serde_json::from_str(&e.to_json_line()).unwrap();
        assert_eq!(&parsed, e);
    }
    assert_eq!(events.last().unwrap().samples, out.batches_used);
}

#[test]
fn same_seed_same_output_under_both_schedules() {
    let p = ProblemParams { d: 3, n: 8, m: 300, alpha: 0.25, sigma: 1.0, radius: 4.0, k: 2, seed: 11 };
    let beta = [2.0, -1.0, 0.0];
    let adv = || AdversaryModel::DecoyRegressors { decoys: vec![vec![-3.0, 0.0, 1.0]] };
    let seq = DriverConfig { exec: Exec::Sequential, ..quick_cfg() };
    let par = DriverConfig { exec: Exec::Parallel, ..quick_cfg() };
    let a = run(&p, &beta, adv(), &seq);
    assert_eq!(a, run(&p, &beta, adv(), &seq));
    assert_eq!(a, run(&p, &beta, adv(), &par));
}

#[test]
fn reuse_mode_draws_one_pool_per_iteration() {
    let p = ProblemParams { d: 3, n: 8, m: 300, alpha: 0.5, sigma: 1.0, radius: 2.0, k: 1, seed: 12 };
    let cfg = DriverConfig { reuse: true, ..quick_cfg() };
    let (out, _) = run(&p, &[1.0, 0.0, 0.0], AdversaryModel::GaussianNoiseBatches, &cfg);
    assert_eq!(out.batches_used, out.iterations * 3 * 600);
}

#[test]
fn sampler_exhaustion_is_an_error() {
    let p = ProblemParams { d: 2, n: 4, m: 50, alpha: 1.0, sigma: 1.0, radius: 2.0, k: 1, seed: 13 };
    let ds = dataset(&p, &[1.0, 0.0], AdversaryModel::GaussianNoiseBatches);
    let mut pool = PoolSampler::new(ds.batches);
    let cfg = DriverConfig { batches_per_call: Some(40), ..Default::default() };
    let r = batch_list_decode(&mut pool, &p, 3.0, &cfg, &mut |_| {});
    assert!(matches!(r, Err(Error::SamplerExhausted { .. })));
}

#[test]
fn refinement_on_clean_data_is_geometric() {
    let mut ok = 0;
    for trial in 0..20 {
        let p = ProblemParams { d: 4, n: 16, m: 400, alpha: 1.0, sigma: 0.01, radius: 8.0, k: 1, seed: 100 + trial };
        let beta = [6.0, -3.0, 2.0, 1.0];
        let floor = 3.0 * p.sigma * (p.d as f64 / (p.m * p.n) as f64).sqrt();
        let mut dists = vec![distance(&beta, &[0.0; 4])];
        let total = loop_length(p.radius, p.sigma, 1.0) + 1;
        for t in 1..=total {
            let cfg = DriverConfig { max_iterations: Some(t), tau: Some(0.1), batches_per_call: Some(400), prune_batches: Some(400), ..Default::default() };
            dists.push(run(&p, &beta, AdversaryModel::GaussianNoiseBatches, &cfg).0.list.min_distance(&beta));
        }
        if dists.windows(2).all(|w| w[1] <= floor || w[1] * 1.5 <= w[0]) {
            ok += 1;
        }
    }
    assert!(ok >= 18, "{ok}");
}

#[test]
fn translation_equivariance_via_origin() {
    // Both regressors must respect the norm bound for the generator.
    let p = ProblemParams { d: 3, n: 8, m: 300, alpha: 0.3, sigma: 0.5, radius: 8.0, k: 2, seed: 14 };
    let beta = vec![1.0, 2.0, -1.0];
    let decoy = vec![-2.0, 0.0, 1.0];
    let v = vec![3.0, -5.0, 0.5];
    let shift = |b: &[f64]| batchreg::linalg::add(b, &v);
    let (base, _) = run(&p, &beta, AdversaryModel::DecoyRegressors { decoys: vec![decoy.clone()] }, &quick_cfg());
    let cfg = DriverConfig { origin: Some(v.clone()), ..quick_cfg() };
    let (moved, _) = run(&p, &shift(&beta), AdversaryModel::DecoyRegressors { decoys: vec![shift(&decoy)] }, &cfg);
    assert_eq!(base.list.len(), moved.list.len());
    for (a, b) in base.list.candidates.iter().zip(&moved.list.candidates) {
        assert!(distance(&shift(&a.beta), &b.beta) < 1e-8);
    }
}

#[test]
fn reduction_with_unit_batches_is_identity() {
    let pts: Vec<LabeledPoint> = (0..6).map(|i| LabeledPoint { x: vec![i as f64, 1.0], y: -(i as f64) }).collect();
    let r = self_batching_reduce(&pts, 1, 0.3).unwrap();
    assert_eq!(r.alpha_batch, 0.3);
    assert_eq!(r.batches.len(), 6);
    assert_eq!(r.batches[4].points(), vec![pts[4].clone()]);
}

#[test]
fn reduction_rate_arithmetic_and_divisibility() {
    let pts: Vec<LabeledPoint> = (0..6).map(|i| LabeledPoint { x: vec![i as f64], y: 0.0 }).collect();
    assert_eq!(self_batching_reduce(&pts, 2, 0.5).unwrap().alpha_batch, 0.25);
    assert_eq!(self_batching_reduce(&pts, 4, 0.5).unwrap_err(), Error::NotDivisible { count: 6, n: 4 });
}

#[test]
fn reduction_all_inlier_fraction_is_binomial() {
    use rand::Rng;
    let p = ProblemParams { d: 2, n: 1, m: 40_000, alpha: 1.0, sigma: 1.0, radius: 2.0, k: 1, seed: 15 };
    let ds = dataset(&p, &[1.0, 0.0], AdversaryModel::GaussianNoiseBatches);
    let mut rng = rng_for(15, "coins", &[]);
    let inlier: Vec<bool> = (0..p.m).map(|_| rng.random::<f64>() < 0.9).collect();
    let pts: Vec<LabeledPoint> = ds.batches.iter().flat_map(|b| b.points()).collect();
    let r = self_batching_reduce(&pts, 4, 0.9).unwrap();
    assert!((r.alpha_batch - 0.6561).abs() < 1e-12);
    assert_eq!(r.batches.len(), 10_000);
    let clean = inlier.chunks(4).filter(|c| c.iter().all(|x| *x)).count();
    let frac = clean as f64 / r.batches.len() as f64;
    let tol = 3.0 * (0.6561 * 0.3439 / 10_000f64).sqrt();
    assert!((frac - 0.6561).abs() <= tol, "{frac}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn list_stays_within_bound(seed in any::<u64>(), alpha in 0.1f64..0.5, k in 1usize..3) {
        let p = ProblemParams { d: 3, n: 8, m: 200, alpha, sigma: 1.0, radius: 4.0, k, seed };
        let mut rng = rng_for(seed, "decoys", &[]);
        let decoys = (0..3).map(|_| gauss(1).sample(&mut rng, 3).iter().map(|v| 4.0 * v).collect()).collect();
        let cfg = DriverConfig { batches_per_call: Some(200), prune_batches: Some(400), tau: Some(0.1), ..Default::default() };
        let (out, events) = run(&p, &[1.0, 1.0, 1.0], AdversaryModel::DecoyRegressors { decoys }, &cfg);
        for e in &events {
            prop_assert!(e.list_size <= list_size_bound(alpha));
        }
        prop_assert!(out.list.len() <= list_size_bound(alpha));
    }
}
