use std::f64::consts::PI;

use curvegp::applications::{draw_subsets, pointwise_mean};
use curvegp::coreg::{CoregMatrix, MultiLevelKernel, Site};
use curvegp::geometry::{Curve, Point};
use curvegp::gp::{CurveSamples, FittedModel, TrainingDesign};
use curvegp::io::FitRecord;
use curvegp::kernels::{KernelFamily, NoiseSpec, PeriodicKernel};
use curvegp::metrics::{esd, iuea, wasserstein2, EllipseScale};
use curvegp::preprocess::{center, rotation_seed_align, scale_to_unit_length};
use curvegp::synthetic::{generate, Sampling, Shape};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::PeriodicRbf),
        Just(KernelFamily::PeriodicMatern32),
        Just(KernelFamily::PeriodicMatern12),
    ]
}

fn star(seed: u64, n: usize) -> Curve {
    generate(&Shape::Star { radius: 0.16, amplitude: 0.25, petals: 3 }, n, Sampling::Equal, 0.003, seed).unwrap()
}

fn kernel(family: KernelFamily, tau: f64, rho_fraction: f64) -> MultiLevelKernel {
    let coords = CoregMatrix::new(DMatrix::from_row_slice(2, 1, &[0.1, 0.02]), DVector::from_vec(vec![0.01, 0.015])).unwrap();
    MultiLevelKernel {
        input: PeriodicKernel::new(family, 1.0, rho_fraction * tau, tau).unwrap(),
        coords,
        curves: None,
        groups: None,
    }
}

fn sites(grid: &[f64]) -> Vec<Site> {
    grid.iter().flat_map(|&s| [Site::new(s, 0, 0, 0), Site::new(s, 1, 0, 0)]).collect()
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), n).prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_bounded_and_decreasing_on_half_period(fam in family(), tau in 0.1..5.0f64, frac in 0.01..0.5f64) {
        let k = PeriodicKernel::new(fam, 2.0, frac * tau, tau).unwrap();
        let mut prev = k.eval_distance(0.0);
        prop_assert!((prev - 2.0).abs() < 1e-12);
        for i in 1..=50 {
            let v = k.eval_distance(0.5 * tau * i as f64 / 50.0);
            prop_assert!(v > 0.0 && v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn posterior_covariance_is_psd(fam in family(), seed in 0u64..1000, frac in 0.05..0.5f64) {
        let c = star(seed, 10);
        let model = FittedModel::condition(TrainingDesign::from_curve(&c), kernel(fam, c.length(), frac), NoiseSpec::shared(1e-5)).unwrap();
        let grid: Vec<f64> = (0..25).map(|i| i as f64 * c.length() / 25.0).collect();
        let p = model.predict(&sites(&grid)).unwrap();
        let min = SymmetricEigen::new(p.covariance.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-9 * p.covariance.amax().max(1.0));
    }

    #[test]
    fn more_noise_never_shrinks_variance(fam in family(), seed in 0u64..1000, lo in 1e-6..1e-5f64, factor in 1.5..10.0f64) {
        let c = star(seed, 9);
        let design = TrainingDesign::from_curve(&c);
        let k = kernel(fam, c.length(), 0.2);
        let a = FittedModel::condition(design.clone(), k.clone(), NoiseSpec::shared(lo)).unwrap();
        let b = FittedModel::condition(design, k, NoiseSpec::shared(lo * factor)).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.3) * c.length() / 20.0).collect();
        let pa = a.predict(&sites(&grid)).unwrap();
        let pb = b.predict(&sites(&grid)).unwrap();
        for i in 0..pa.mean.len() {
            prop_assert!(pb.covariance[(i, i)] >= pa.covariance[(i, i)] - 1e-12);
        }
    }

    #[test]
    fn extra_observations_never_increase_variance(fam in family(), seed in 0u64..1000, drop in 0usize..10) {
        let c = star(seed, 10);
        let full = CurveSamples::from_curve(&c, 0);
        let keep: Vec<usize> = (0..10).filter(|&i| i != drop).collect();
        let k = kernel(fam, c.length(), 0.2);
        let noise = NoiseSpec::shared(1e-5);
        let big = FittedModel::condition(TrainingDesign::new(std::slice::from_ref(&full)).unwrap(), k.clone(), noise).unwrap();
        let small = FittedModel::condition(TrainingDesign::new(&[full.subset(&keep)]).unwrap(), k, noise).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) * c.length() / 20.0).collect();
        let pb = big.predict(&sites(&grid)).unwrap();
        let ps = small.predict(&sites(&grid)).unwrap();
        for i in 0..pb.mean.len() {
            prop_assert!(pb.covariance[(i, i)] <= ps.covariance[(i, i)] + 1e-12);
        }
    }

    #[test]
    fn center_and_scale_are_idempotent(seed in 0u64..1000, dx in -5.0..5.0f64, dy in -5.0..5.0f64, s in 0.1..10.0f64) {
        let c = star(seed, 20).map_points(|p| Point::new(s * p.x + dx, s * p.y + dy)).unwrap();
        let once = scale_to_unit_length(&center(&c)).unwrap();
        let twice = scale_to_unit_length(&center(&once)).unwrap();
        prop_assert!((once.length() - 1.0).abs() < 1e-12);
        prop_assert!(once.centroid().coords.norm() < 1e-12);
        for (a, b) in once.points().iter().zip(twice.points()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn alignment_undoes_rotation_and_seed_shift(seed in 0u64..1000, angle in -PI..PI, shift in 0usize..16) {
        let template = scale_to_unit_length(&center(&star(seed, 16))).unwrap();
        let (sn, cs) = angle.sin_cos();
        let moved = template.cyclic_shift(shift).map_points(|p| Point::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y)).unwrap();
        let a = rotation_seed_align(&moved, &template).unwrap();
        let back = a.apply(&moved);
        for (p, q) in back.points().iter().zip(template.points()) {
            prop_assert!((p - q).norm() < 1e-9);
        }
        prop_assert!(a.residual < 1e-9);
    }

    #[test]
    fn wasserstein_is_a_symmetric_permutation_invariant_metric(a in cloud(6), b in cloud(6), c in cloud(6), rot in 0usize..6) {
        let ab = wasserstein2(&a, &b).unwrap();
        prop_assert!(wasserstein2(&a, &a).unwrap().abs() < 1e-15);
        prop_assert!((ab - wasserstein2(&b, &a).unwrap()).abs() < 1e-12);
        let mut shuffled = b.clone();
        shuffled.rotate_left(rot);
        prop_assert!((ab - wasserstein2(&a, &shuffled).unwrap()).abs() < 1e-12);
        let (d_ab, d_bc, d_ac) = (ab.sqrt(), wasserstein2(&b, &c).unwrap().sqrt(), wasserstein2(&a, &c).unwrap().sqrt());
        prop_assert!(d_ac <= d_ab + d_bc + 1e-12);
    }

    #[test]
    fn iuea_scales_with_k_squared(seed in 0u64..1000, k in 0.5..3.0f64) {
        let c = star(seed, 8);
        let model = FittedModel::condition(TrainingDesign::from_curve(&c), kernel(KernelFamily::PeriodicMatern32, c.length(), 0.2), NoiseSpec::shared(1e-5)).unwrap();
        let pred = model.predict_curve(0, 40).unwrap();
        let one = iuea(&pred, EllipseScale::StdDev(1.0)).unwrap();
        let scaled = iuea(&pred, EllipseScale::StdDev(k)).unwrap();
        prop_assert!(one > 0.0);
        prop_assert!((scaled - k * k * one).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn subset_draws_are_reproducible_distinct_and_sorted(n in 4usize..14, p in 1usize..4, trials in 1usize..40, seed in 0u64..100) {
        let a = draw_subsets(n, p, trials, seed);
        prop_assert_eq!(&a, &draw_subsets(n, p, trials, seed));
        let mut uniq = a.clone();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), a.len());
        for s in &a {
            prop_assert_eq!(s.len(), p);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&i| i < n));
        }
    }
}

#[test]
fn pointwise_mean_of_duplicates_matches_each_curve() {
    let c = star(3, 12);
    let copies = vec![CurveSamples::from_curve(&c, 0); 3];
    let design = TrainingDesign::new(&copies).unwrap();
    let mut k = kernel(KernelFamily::PeriodicRbf, c.length(), 0.2);
    k.curves = Some(CoregMatrix::new(DMatrix::from_element(3, 1, 0.5), DVector::from_element(3, 0.1)).unwrap());
    let model = FittedModel::condition(design, k, NoiseSpec::shared(1e-5)).unwrap();
    let mean = pointwise_mean(&model, 30).unwrap();
    for j in 0..3 {
        let pred = model.predict_curve(j, 30).unwrap();
        for (a, b) in mean.iter().zip(&pred.means) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}

#[test]
fn predicted_curve_closes_on_itself() {
    let c = star(5, 11);
    let model = FittedModel::condition(TrainingDesign::from_curve(&c), kernel(KernelFamily::PeriodicMatern12, c.length(), 0.3), NoiseSpec::shared(1e-5)).unwrap();
    let ends = model.predict_at(0, &[0.0, c.length()]).unwrap();
    assert!((ends.means[0] - ends.means[1]).norm() < 1e-12);
    assert!((ends.covariances[0] - ends.covariances[1]).amax() < 1e-12);
}

#[test]
fn fit_record_round_trip_reproduces_predictions() {
    let c = star(8, 10);
    let model = FittedModel::condition(TrainingDesign::from_curve(&c), kernel(KernelFamily::PeriodicMatern32, c.length(), 0.25), NoiseSpec::shared(2e-5)).unwrap();
    let record = FitRecord::new(&model, vec!["a".into()], Vec::new());
    let json = serde_json::to_string(&record).unwrap();
    let back: FitRecord = serde_json::from_str(&json).unwrap();
    let rebuilt = back.to_model().unwrap();
    let a = model.predict_curve(0, 30).unwrap();
    let b = rebuilt.predict_curve(0, 30).unwrap();
    assert_eq!(a.means, b.means);
    assert_eq!(a.covariances, b.covariances);
}

#[test]
fn esd_is_near_symmetric_and_zero_on_self() {
    let a = generate(&Shape::Ellipse { a: 1.5, b: 1.0 }, 60, Sampling::Equal, 0.0, 0).unwrap();
    let b = generate(&Shape::Star { radius: 1.0, amplitude: 0.2, petals: 4 }, 60, Sampling::Equal, 0.0, 0).unwrap();
    assert!(esd(&a, &a).unwrap() < 1e-6);
    let (ab, ba) = (esd(&a, &b).unwrap(), esd(&b, &a).unwrap());
    assert!(ab > 0.05);
    assert!((ab - ba).abs() < 0.05 * ab.max(ba));
}
