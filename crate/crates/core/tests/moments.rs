use batchreg::model::*;
use batchreg::moments::*;
use batchreg::rng::rng_for;
use batchreg::tensor::tensor_power;
use batchreg::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn fixed_batch() -> Batch {
    let xs = vec![0.5, -1.2, 2.0, 1.5, 0.3, -0.7, -0.4, 0.9, 1.1, 2.2, -0.6, 0.05];
    Batch::new(3, xs, vec![1.0, -2.5, 0.75, 3.2]).unwrap()
}

#[test]
fn batch_average_of_identical_points() {
    let p = LabeledPoint { x: vec![1.0, 0.0], y: 2.0 };
    let b = Batch::from_points(&[p.clone(), p.clone(), p]).unwrap();
    assert_eq!(batch_average(&b).unwrap().z, vec![2.0, 0.0]);
}

#[test]
fn batch_average_zero_labels() {
    let b = Batch::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0]).unwrap();
    assert_eq!(batch_average(&b).unwrap().z, vec![0.0, 0.0]);
}

#[test]
fn batch_average_matches_reference_values() {
    // Reference computed independently with numpy.
    let z = batch_average(&fixed_batch()).unwrap().z;
    let want = [0.8725000000000003, -0.79875, 1.18375];
    for (a, b) in z.iter().zip(want) {
        assert!((a - b).abs() <= 1e-12 * b.abs());
    }
}

#[test]
fn empty_batch_rejected() {
    assert!(Batch::from_points(&[]).is_err());
    let b = Batch::new(2, vec![], vec![]).unwrap();
    assert_eq!(batch_average(&b).unwrap_err(), Error::EmptyBatch);
}

#[test]
fn degenerate_centering_gives_zero_matrix() {
    let p = vec![vec![1.5, -2.0]];
    let m = empirical_moment_matrix(&p, 2, &p[0]).unwrap();
    assert!(m.mat.iter().all(|v| *v == 0.0));
}

#[test]
fn four_point_degree_four_matrix_matches_enumeration() {
    // Entries from an independent einsum over the 16 index tuples.
    let pts = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -1.5], vec![2.0, -0.25]];
    let m = empirical_moment_matrix(&pts, 2, &[0.1, -0.2]).unwrap();
    let want = [
        [3.7884749999999996, 0.07968750000000008, 0.07968750000000006, 1.1474812500000002],
        [0.07968750000000008, 1.1474812500000002, 1.1474812500000002, 2.1915656250000004],
        [0.07968750000000008, 1.1474812500000002, 1.1474812500000002, 2.1915656250000004],
        [1.1474812500000002, 2.1915656250000004, 2.1915656250000004, 6.630451562500002],
    ];
    for r in 0..4 {
        for c in 0..4 {
            assert!((m.mat[(r, c)] - want[r][c]).abs() < 1e-12, "({r},{c})");
        }
    }
    assert!((m.lambda_max().unwrap() - 8.4895662932613).abs() < 1e-10);
}

#[test]
fn zero_order_rejected() {
    assert!(empirical_moment_matrix(&[vec![1.0]], 0, &[0.0]).is_err());
}

#[test]
fn constant_points_certify_any_positive_bound() {
    let pts = vec![vec![3.0, 1.0]; 10];
    let c = certify_moment_bound(&pts, 2, 1e-9).unwrap();
    assert_eq!(c.lambda_max, 0.0);
    assert!(c.passed);
    assert_eq!((c.degree, c.sos_degree), (4, 4));
}

#[test]
fn certificate_needs_two_points() {
    assert!(matches!(certify_moment_bound(&[vec![1.0]], 1, 1.0), Err(Error::TooFewPoints { .. })));
}

#[test]
fn gaussian_fourth_moment_certificate() {
    let mut rng = rng_for(11, "g", &[]);
    let pts: Vec<Vec<f64>> = (0..100_000).map(|_| vec![gauss(&mut rng)]).collect();
    let c = certify_moment_bound(&pts, 2, 3.0).unwrap();
    assert!((2.6..=3.4).contains(&c.lambda_max), "{}", c.lambda_max);
}

#[test]
fn rademacher_sum_ratio_is_one_half() {
    let mut rng = rng_for(12, "mz", &[]);
    let r = mz_monte_carlo(&mut rng, |g| if g.random_bool(0.5) { 1.0 } else { -1.0 }, 0.0, 10, 2, 20_000, Some(1.0)).unwrap();
    assert!((r.ratio - 0.5).abs() < 0.03, "{}", r.ratio);
    assert!(!r.violated);
}

#[test]
fn single_summand_mz_ratio_at_most_one() {
    let cov = CovariateModel::new(CovariateKind::StandardGaussian, 2);
    let mut rng = rng_for(13, "mz", &[]);
    let r = verify_mz_bound(&cov, &[1.0, -0.5], 0.5, 1, 2, 20_000, &mut rng).unwrap();
    assert!(r.ratio <= 1.0 + r.tolerance, "{}", r.ratio);
}

#[test]
fn gaussian_mz_ratio_below_one() {
    let cov = CovariateModel::new(CovariateKind::StandardGaussian, 2);
    let mut rng = rng_for(14, "mz", &[]);
    let r = verify_mz_bound(&cov, &[1.0, 0.0, -1.0, 0.5], 1.0, 8, 2, 10_000, &mut rng).unwrap();
    assert!(r.ratio <= 1.0, "{}", r.ratio);
}

fn inlier_stats(d: usize, n: usize, sigma: f64, beta: &[f64], count: usize, seed: u64) -> (ProblemParams, CovariateModel, Vec<BatchStatistic>) {
    let params = ProblemParams { d, n, m: count, alpha: 1.0, sigma, radius: 10.0, k: 2, seed };
    let cov = CovariateModel::new(CovariateKind::StandardGaussian, 2);
    let ds = sample_dataset(&params, &cov, beta, &AdversaryModel::GaussianNoiseBatches).unwrap();
    (params.clone(), cov, batch_statistics(&ds.batches, batchreg::Exec::Sequential).unwrap())
}

#[test]
fn degenerate_instance_passes_both_checks() {
    let (p, cov, stats) = inlier_stats(2, 4, 0.0, &[0.0, 0.0], 50, 1);
    let r = check_batch_moment_bounds(&stats, &p, &cov, &[0.0, 0.0], BatchMomentConstants::default()).unwrap();
    assert_eq!(r.certificate.lambda_max, 0.0);
    assert_eq!(r.cov_lambda_max, 0.0);
    assert!(r.passed());
}

#[test]
fn batch_moment_bounds_hold_with_default_constants() {
    let beta = [1.0, -0.5];
    let (p, cov, stats) = inlier_stats(2, 16, 1.0, &beta, 10_000, 2);
    let r = check_batch_moment_bounds(&stats, &p, &cov, &beta, BatchMomentConstants::default()).unwrap();
    let scale = (1.25 + 1.0) / 16.0;
    assert!(r.cov_lambda_max <= 3.0 * scale && r.cov_lambda_max >= scale / 3.0, "{}", r.cov_lambda_max);
    assert!(r.passed());
}

#[test]
fn moment_matrix_serializes() {
    let m = empirical_moment_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1, &[0.0, 0.0]).unwrap();
    let json = serde_json::to_string(&m).unwrap();
    let back: FlattenedMomentMatrix = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m);
}

fn cloud(seed: u64, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "cloud", &[]);
    (0..count)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0) + gauss(&mut rng) * 0.5).collect())
        .collect()
}

fn direct_moment(points: &[Vec<f64>], mu: &[f64], v: &[f64], p: i32) -> f64 {
    points
        .iter()
        .map(|z| z.iter().zip(mu).zip(v).map(|((a, b), c)| (a - b) * c).sum::<f64>().powi(p))
        .sum::<f64>()
        / points.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn flattened_matrix_is_symmetric_psd(seed in any::<u64>(), d in 1usize..5, t in 1usize..3) {
        let pts = cloud(seed, 40, d);
        let mu = mean(&pts);
        let m = empirical_moment_matrix(&pts, t, &mu).unwrap();
        let amax = m.mat.amax();
        prop_assert!((&m.mat - m.mat.transpose()).amax() <= 1e-10 * amax);
        let e = batchreg::linalg::sym_eigen(&m.mat).unwrap();
        let lmax = e.values[0];
        prop_assert!(*e.values.last().unwrap() >= -1e-8 * lmax.max(1.0));
    }

    #[test]
    fn flattening_matches_directional_moment(seed in any::<u64>(), d in 1usize..5, t in 1usize..4) {
        let pts = cloud(seed, 30, d);
        let mu = mean(&pts);
        let m = empirical_moment_matrix(&pts, t, &mu).unwrap();
        let mut rng = rng_for(seed, "v", &[]);
        for _ in 0..5 {
            let v: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
            let nv = batchreg::linalg::norm(&v);
            let v: Vec<f64> = v.iter().map(|a| a / nv).collect();
            let q = m.quadratic_form(&v);
            let direct = direct_moment(&pts, &mu, &v, 2 * t as i32);
            prop_assert!((q - direct).abs() <= 1e-8 * direct.abs().max(1e-12), "{} vs {}", q, direct);
        }
    }

    #[test]
    fn certificate_is_sound(seed in any::<u64>(), d in 1usize..4, k in 1usize..3, slack in 0.5f64..3.0) {
        let pts = cloud(seed, 25, d);
        let mu = mean(&pts);
        let lambda = empirical_moment_matrix(&pts, k, &mu).unwrap().lambda_max().unwrap();
        let c = certify_moment_bound(&pts, k, lambda * slack).unwrap();
        prop_assert_eq!(c.passed, c.lambda_max <= c.bound);
        if c.passed {
            let mut rng = rng_for(seed, "dirs", &[]);
            for _ in 0..200 {
                let v: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
                let nv = batchreg::linalg::norm(&v);
                let v: Vec<f64> = v.iter().map(|a| a / nv).collect();
                prop_assert!(direct_moment(&pts, &mu, &v, 2 * k as i32) <= c.bound * (1.0 + 1e-6));
            }
        }
    }

    #[test]
    fn scaling_multiplies_lambda_by_power(seed in any::<u64>(), d in 1usize..4, k in 1usize..3, c in 0.2f64..5.0) {
        let pts = cloud(seed, 20, d);
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| c * v).collect()).collect();
        let a = certify_moment_bound(&pts, k, 1.0).unwrap().lambda_max;
        let b = certify_moment_bound(&scaled, k, 1.0).unwrap().lambda_max;
        let want = a * c.powi(2 * k as i32);
        prop_assert!((b - want).abs() <= 1e-8 * want.abs().max(1e-300), "{} vs {}", b, want);
    }

    #[test]
    fn tensor_power_has_unit_norm(seed in any::<u64>(), d in 1usize..5, t in 1usize..4) {
        let mut rng = rng_for(seed, "tp", &[]);
        let v: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let nv = batchreg::linalg::norm(&v);
        let v: Vec<f64> = v.iter().map(|a| a / nv).collect();
        let n = batchreg::linalg::norm(&tensor_power(&v, t));
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_sequential_accumulation_agree(seed in any::<u64>(), d in 1usize..4) {
        let pts = cloud(seed, 700, d);
        let mu = mean(&pts);
        let w: Vec<f64> = (0..pts.len()).map(|i| ((i * 7919) % 13) as f64 / 12.0).collect();
        let a = weighted_moment_matrix(&pts, Some(&w), 2, &mu, batchreg::Exec::Parallel).unwrap();
        let b = weighted_moment_matrix(&pts, Some(&w), 2, &mu, batchreg::Exec::Sequential).unwrap();
        prop_assert_eq!(a, b);
    }
}
