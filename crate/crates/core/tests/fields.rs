//! Correlation structure and marginals of the displacement fields, estimated
//! over seeds.

use difflab_core::perturb::{displace, stationary_cp_field, FieldSampler, ShellPlan};
use difflab_core::pointset::{generate_cut_and_project, generate_lattice};
use difflab_core::rng::realization_seed;
use difflab_core::stats::{correlation, ks_two_sample, mean_estimate};
use difflab_core::*;

fn z2(r: f64) -> PointSet {
    generate_lattice(&Lattice::integer(2), r).unwrap()
}

/// Fisher-z standard error of a sample correlation, at the true value.
fn corr_se(rho: f64, n: usize) -> f64 {
    (1.0 - rho * rho) / ((n - 1) as f64).sqrt()
}

#[test]
fn odd_shell_correlation_with_anchor_follows_rank() {
    let ps = z2(12.0);
    let radii = vec![3.0, 12.0];
    let c = 0.5;
    let model = PerturbationModel::shell_mixing(Distribution::gaussian(2, 0.1), radii.clone(), c, 77);
    let plan = ShellPlan::new(&ps, &radii).unwrap();
    let sampler = FieldSampler::new(&ps, &model).unwrap();
    let pick = |rank: usize| (0..ps.len()).find(|&i| plan.rank(i) == rank).unwrap();
    let dependents = [pick(1), pick(2), pick(3)];
    let seeds = 1000;
    let draws: Vec<Vec<f64>> = (0..seeds).map(|s| sampler.sample(realization_seed(77, s)).unwrap()).collect();
    for &p in &dependents {
        let q = plan.anchor(p).unwrap();
        let xp: Vec<f64> = draws.iter().map(|x| x[2 * p]).collect();
        let xq: Vec<f64> = draws.iter().map(|x| x[2 * q]).collect();
        let target = plan.anchor_correlation(p, c);
        let r = correlation(&xp, &xq);
        assert!((r - target).abs() <= 3.0 * corr_se(target, seeds as usize), "rank {}: {r} vs {target}", plan.rank(p));
    }
    assert!((plan.anchor_correlation(dependents[0], c) - c / 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn points_in_one_shell_are_uncorrelated() {
    let ps = z2(12.0);
    let radii = vec![3.0, 12.0];
    let model = PerturbationModel::shell_mixing(Distribution::gaussian(2, 0.1), radii.clone(), 0.5, 78);
    let plan = ShellPlan::new(&ps, &radii).unwrap();
    let sampler = FieldSampler::new(&ps, &model).unwrap();
    // Two dependents of one anchor (odd shell) and two points of the even shell.
    let a = plan.anchor((0..ps.len()).find(|&i| plan.rank(i) == 2).unwrap()).unwrap();
    let deps: Vec<usize> = (0..ps.len()).filter(|&i| plan.anchor(i) == Some(a)).take(2).collect();
    let evens: Vec<usize> = (0..ps.len()).filter(|&i| plan.shell(i) == 0).take(2).collect();
    let seeds = 1000;
    let draws: Vec<Vec<f64>> = (0..seeds).map(|s| sampler.sample(realization_seed(78, s)).unwrap()).collect();
    for pair in [&deps, &evens] {
        let x: Vec<f64> = draws.iter().map(|d| d[2 * pair[0]]).collect();
        let y: Vec<f64> = draws.iter().map(|d| d[2 * pair[1]]).collect();
        let r = correlation(&x, &y);
        assert!(r.abs() <= 3.0 * corr_se(0.0, seeds as usize), "{r}");
    }
}

#[test]
fn zero_coupling_matches_iid_marginals() {
    let ps = z2(25.0);
    let mut accepted = 0;
    for run in 0..20u64 {
        let shell = PerturbationModel::shell_mixing(Distribution::gaussian(2, 0.1), vec![5.0, 40.0], 0.0, run);
        let iid = PerturbationModel::iid(Distribution::gaussian(2, 0.1), 1000 + run);
        let norms =
            |pps: &PerturbedPointSet| -> Vec<f64> { (0..pps.len()).map(|i| geometry::norm(pps.displacement(i))).collect() };
        let ks = ks_two_sample(&norms(&displace(&ps, &shell).unwrap()), &norms(&displace(&ps, &iid).unwrap()));
        accepted += usize::from(ks.p_value > 0.01);
    }
    assert!(accepted >= 19, "{accepted}/20");
}

#[test]
fn shell_marginals_agree_across_shells() {
    let ps = z2(30.0);
    let radii = vec![18.0, 60.0];
    let plan = ShellPlan::new(&ps, &radii).unwrap();
    let inner: Vec<usize> = (0..ps.len()).filter(|&i| plan.shell(i) == 0).collect();
    let outer: Vec<usize> = (0..ps.len()).filter(|&i| plan.shell(i) == 1).collect();
    assert!(inner.len() >= 1000 && outer.len() >= 1000);
    let mut rejections = 0;
    for trial in 0..100u64 {
        let model = PerturbationModel::shell_mixing(Distribution::gaussian(2, 0.1), radii.clone(), 0.5, trial);
        let pps = displace(&ps, &model).unwrap();
        let norms = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| geometry::norm(pps.displacement(i))).collect() };
        rejections += usize::from(ks_two_sample(&norms(&inner), &norms(&outer)).p_value < 0.01);
    }
    assert!(rejections <= 3, "{rejections}/100");
}

#[test]
fn stationary_field_pair_correlation_at_one_length() {
    let scheme = CutProjectScheme::fibonacci();
    let zero = vec![0.0; scheme.total_dim()];
    let sigma = 0.2;
    let base = stationary_cp_field(&scheme, &Distribution::gaussian(1, sigma), 1.0, 0, 6.0, Some(&zero)).unwrap();
    let lift = |i: usize| -> Vec<f64> {
        let m = base.base().label(i).unwrap();
        (0..2).map(|r| (0..2).map(|c| scheme.lattice_basis[c][r] * m[c] as f64).sum()).collect()
    };
    let (i, j) = (0, base.len() / 2);
    let ell = geometry::dist2(&lift(i), &lift(j)).sqrt();
    let seeds = 1000u64;
    let (mut xi, mut xj) = (Vec::new(), Vec::new());
    for s in 0..seeds {
        let f = stationary_cp_field(&scheme, &Distribution::gaussian(1, sigma), ell, s, 6.0, Some(&zero)).unwrap();
        assert_eq!(f.base().coords(), base.base().coords());
        xi.push(f.displacement(i)[0]);
        xj.push(f.displacement(j)[0]);
    }
    let products: Vec<f64> = xi.iter().zip(&xj).map(|(a, b)| a * b).collect();
    let cov = mean_estimate(&products);
    let target = (-1.0f64).exp() * sigma * sigma;
    assert!((cov.mean - target).abs() <= 3.0 * cov.std_error, "{} vs {target} (se {})", cov.mean, cov.std_error);
}

#[test]
fn stationary_shift_averages_out() {
    let scheme = CutProjectScheme::fibonacci();
    let means: Vec<f64> = (0..1000u64)
        .map(|s| {
            let f =
                stationary_cp_field(&scheme, &Distribution::gaussian(1, 0.1), 0.5, realization_seed(11, s), 8.0, None).unwrap();
            f.displacements().iter().sum::<f64>() / f.len() as f64
        })
        .collect();
    let est = mean_estimate(&means);
    assert!(est.mean.abs() <= 3.0 * est.std_error, "{} (se {})", est.mean, est.std_error);
}

#[test]
fn stationary_field_without_kernel_or_shift_is_the_iid_field() {
    let scheme = CutProjectScheme::fibonacci();
    let zero = vec![0.0; scheme.total_dim()];
    let dist = Distribution::gaussian(1, 0.1);
    let f = stationary_cp_field(&scheme, &dist, 0.0, 5, 50.0, Some(&zero)).unwrap();
    let ps = generate_cut_and_project(&scheme, 50.0).unwrap();
    let g = displace(&ps, &PerturbationModel::iid(dist, 5)).unwrap();
    assert_eq!(f.base().coords(), g.base().coords());
    assert_eq!(f.displacements(), g.displacements());
}
