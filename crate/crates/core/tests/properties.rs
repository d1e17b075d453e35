//! Property tests over randomly drawn laws, frequencies, grids and point sets.

use difflab_core::appendix::{hellinger_cs_bound, hellinger_density, truncated_slln_trace};
use difflab_core::io::{read_spectrum_csv, write_spectrum_csv};
use difflab_core::perturb::{characteristic_function, displace};
use difflab_core::pointset::generate_lattice;
use difflab_core::recover::{detect_cloaking, recover_spectrum};
use difflab_core::spectral::fourier_sum;
use difflab_core::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn law() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (1usize..=3, 0.01f64..1.0).prop_map(|(dim, sigma)| Distribution::gaussian(dim, sigma)),
        (1usize..=3, 0.01f64..1.0).prop_map(|(dim, a)| Distribution::UniformBox { dim, half_width: a }),
        (1usize..=3, prop::collection::vec((0.1f64..1.0, 0.01f64..0.5, -1.0f64..1.0), 1..4)).prop_map(|(dim, parts)| {
            let total: f64 = parts.iter().map(|p| p.0).sum();
            Distribution::GaussianMixture {
                dim,
                weights: parts.iter().map(|p| p.0 / total).collect(),
                sigmas: parts.iter().map(|p| p.1).collect(),
                means: parts.iter().map(|p| vec![p.2; dim]).collect(),
            }
        }),
    ]
}

fn law_and_frequency() -> impl Strategy<Value = (Distribution, Vec<f64>)> {
    law().prop_flat_map(|d| {
        let dim = d.dim();
        (Just(d), prop::collection::vec(-5.0f64..5.0, dim))
    })
}

proptest! {
    #[test]
    fn characteristic_function_is_bounded_and_hermitian((dist, lambda) in law_and_frequency()) {
        let model = PerturbationModel::iid(dist, 0);
        let phi = characteristic_function(&model, &lambda).value;
        let neg: Vec<f64> = lambda.iter().map(|x| -x).collect();
        let phi_neg = characteristic_function(&model, &neg).value;
        prop_assert!(phi.norm() <= 1.0 + 1e-12);
        prop_assert!((phi_neg - phi.conj()).norm() <= 1e-12);
        let zero = vec![0.0; lambda.len()];
        prop_assert!((characteristic_function(&model, &zero).value - 1.0).norm() <= 1e-12);
    }

    #[test]
    fn cloaked_set_grows_with_threshold(a in 0.05f64..1.0, t1 in 0.001f64..0.5, t2 in 0.001f64..0.5) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let model = PerturbationModel::iid(Distribution::UniformBox { dim: 1, half_width: a }, 0);
        let freqs = FrequencySet::uniform_grid(&[-4.0], &[4.0], 0.05).unwrap();
        let small = detect_cloaking(&model, &freqs, lo);
        let large = detect_cloaking(&model, &freqs, hi);
        prop_assert!(small.iter().all(|f| large.contains(f)));
    }

    #[test]
    fn displacements_extend_without_resampling(seed in any::<u64>(), r in 3.0f64..10.0, extra in 0.5f64..10.0) {
        let model = PerturbationModel::iid(Distribution::gaussian(2, 0.3), seed);
        let small = displace(&generate_lattice(&Lattice::integer(2), r).unwrap(), &model).unwrap();
        let large = displace(&generate_lattice(&Lattice::integer(2), r + extra).unwrap(), &model).unwrap();
        for i in 0..small.len() {
            let p = small.base().point(i);
            let j = (0..large.len()).find(|&j| large.base().point(j) == p).unwrap();
            prop_assert_eq!(small.displacement(i), large.displacement(j));
        }
    }

    #[test]
    fn dirac_recovery_returns_the_measurement(lx in -3.0f64..3.0, ly in -3.0f64..3.0, r in 2.0f64..12.0) {
        let model = PerturbationModel::iid(Distribution::Dirac0 { dim: 2 }, 0);
        let pps = displace(&generate_lattice(&Lattice::integer(2), r).unwrap(), &model).unwrap();
        let freqs = FrequencySet::explicit(2, vec![vec![lx, ly]]).unwrap();
        let measured = fourier_sum(&pps, &freqs, r).unwrap();
        let rep = recover_spectrum(&measured, &model, DEFAULT_CLOAK_THRESHOLD).unwrap();
        prop_assert_eq!(rep.records[0].recovered, Some(measured[0].value));
    }

    #[test]
    fn spectrum_csv_round_trips(values in prop::collection::vec((-1e6f64..1e6, -1e3f64..1e3, -1e3f64..1e3), 0..20)) {
        let est: Vec<SpectralEstimate> = values
            .iter()
            .enumerate()
            .map(|(i, (lam, re, im))| SpectralEstimate {
                frequency: vec![*lam, i as f64 / 7.0],
                value: Complex64::new(*re, *im),
                radius: 10.0 + i as f64,
                kind: SpectralKind::FourierSum,
            })
            .collect();
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, 2, &est).unwrap();
        let back = read_spectrum_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, est);
    }
}

fn grid_pair() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..60).prop_flat_map(|n| {
        let cell = prop_oneof![Just(0.0), 0.0f64..10.0];
        (Just(n), prop::collection::vec(cell.clone(), n), prop::collection::vec(cell, n), prop::collection::vec(0.0f64..10.0, n))
    })
}

fn grid(values: Vec<f64>) -> GriddedMeasure {
    let n = values.len();
    GriddedMeasure::new(vec![-1.0], vec![0.25], vec![n], values).unwrap()
}

proptest! {
    #[test]
    fn hellinger_density_identities((_n, a, b, _f) in grid_pair()) {
        let (g1, g2) = (grid(a.clone()), grid(b.clone()));
        let r12 = hellinger_density(&g1, &g2).unwrap();
        let r21 = hellinger_density(&g2, &g1).unwrap();
        prop_assert_eq!(&r12.densities, &r21.densities);
        prop_assert_eq!(&hellinger_density(&g1, &g1).unwrap().densities, &a);
        for ((r, x), y) in r12.densities.iter().zip(&a).zip(&b) {
            prop_assert!(*r <= 0.5 * (x + y) + 1e-12);
            if *x == 0.0 || *y == 0.0 {
                prop_assert_eq!(*r, 0.0);
            }
        }
    }

    #[test]
    fn hellinger_cauchy_schwarz((_n, a, b, f) in grid_pair()) {
        let cs = hellinger_cs_bound(&grid(a), &grid(b), &f).unwrap();
        prop_assert!(cs.holds);
        prop_assert!(cs.lhs <= cs.rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn truncation_of_a_constant(c in 0.5f64..40.0) {
        let spec = CorrelatedSequenceSpec::new(SequenceKind::Iid, ScalarLaw::Constant { value: c });
        let trace = truncated_slln_trace(&spec, 10_000, 1).unwrap();
        for t in trace {
            // X_k = c is kept once k >= c.
            let kept = (t.n as f64 - c.ceil() + 1.0).max(0.0);
            prop_assert!((t.value - c * kept / t.n as f64).abs() <= 1e-12 * c);
        }
    }
}
