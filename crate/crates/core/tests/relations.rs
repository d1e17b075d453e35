//! Finite-radius checks of the recovery and second-order relations on
//! perturbed lattices.

use difflab_core::appendix::slln_trace;
use difflab_core::perturb::{characteristic_function, displace};
use difflab_core::pointset::generate_lattice;
use difflab_core::recover::{recover_spectrum, structure_factor_with, verify_diffraction_relation, Membership};
use difflab_core::rng::realization_seed;
use difflab_core::spectral::{fourier_sum, weak_fourier_transform};
use difflab_core::*;

fn z2(r: f64) -> PointSet {
    generate_lattice(&Lattice::integer(2), r).unwrap()
}

#[test]
fn recovered_bragg_amplitude_ignores_sigma() {
    let base = z2(61.0);
    let freqs = FrequencySet::explicit(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let rec: Vec<Vec<f64>> = [0.05, 0.1, 0.15]
        .iter()
        .map(|&s| {
            let model = PerturbationModel::iid(Distribution::gaussian(2, s), 3);
            let m = fourier_sum(&displace(&base, &model).unwrap(), &freqs, 60.0).unwrap();
            let rep = recover_spectrum(&m, &model, DEFAULT_CLOAK_THRESHOLD).unwrap();
            rep.records.iter().map(|r| r.recovered.unwrap().re).collect()
        })
        .collect();
    // Z^2 has unit amplitude at every dual point; the noise is O(1/(R phi)).
    for r in &rec {
        for v in r {
            assert!((v - 1.0).abs() < 0.08, "{v}");
        }
    }
}

#[test]
fn unperturbed_lattice_amplitude_converges_to_one() {
    let f = FrequencySet::explicit(2, vec![vec![1.0, 0.0], vec![0.5, 0.0]]).unwrap();
    let t =
        weak_fourier_transform(&GeneratorSpec::IntegerLattice { dim: 2 }, &f, &[20.0, 40.0, 80.0], PointCap::default()).unwrap();
    assert!((t[0].estimate - 1.0).norm() < 1e-2);
    // Half-integer frequencies alternate in sign and average out.
    assert!(t[1].estimate.norm() < 2e-2);
}

#[test]
fn diffraction_relation_holds_off_bragg() {
    let base = z2(61.0);
    let freqs = FrequencySet::explicit(2, vec![vec![0.37, 0.21], vec![0.5, 0.5]]).unwrap();
    let seeds = 40;
    let mut within = 0;
    let mut total = 0;
    for s in 0..seeds {
        let model = PerturbationModel::iid(Distribution::gaussian(2, 0.1), realization_seed(9, s));
        let rows = verify_diffraction_relation(&displace(&base, &model).unwrap(), &freqs, 6.0, 60.0).unwrap();
        for r in rows {
            total += 1;
            within += usize::from(r.residual.abs() <= r.threshold);
        }
    }
    assert!(within as f64 >= 0.9 * total as f64, "{within}/{total}");
}

#[test]
fn structure_factor_membership_rules_agree_off_bragg() {
    let gen = GeneratorSpec::IntegerLattice { dim: 2 };
    let model = PerturbationModel::iid(Distribution::gaussian(2, 0.1), 4);
    let freqs = FrequencySet::explicit(2, vec![vec![0.37, 0.21], vec![0.13, 0.44]]).unwrap();
    let a = structure_factor_with(&gen, &model, &freqs, 30.0, 40, Membership::Unperturbed, PointCap::default()).unwrap();
    let b = structure_factor_with(&gen, &model, &freqs, 30.0, 40, Membership::Perturbed, PointCap::default()).unwrap();
    let phi2 = characteristic_function(&model, &[0.37, 0.21]).value.norm_sqr();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let se = x.std_error.hypot(y.std_error);
        assert!((x.s - y.s).abs() <= 4.0 * se, "{} vs {} (se {se})", x.s, y.s);
    }
    // Off the dual lattice only the incoherent part 1 - |phi|^2 survives, up to
    // the ball-truncation term.
    let r = &a.rows[0];
    assert!((r.s - (1.0 - phi2)).abs() <= 4.0 * r.std_error + 0.02, "{} vs {}", r.s, 1.0 - phi2);
}

#[test]
fn slln_trace_shrinks_for_geometric_covariance() {
    let spec =
        CorrelatedSequenceSpec::new(SequenceKind::GeometricCovariance { beta: 0.5 }, ScalarLaw::Uniform { lo: 0.0, hi: 1.0 });
    let trace = slln_trace(&spec, 100_000, 2).unwrap();
    let first = trace.first().unwrap().value.abs();
    let last = trace.last().unwrap().value.abs();
    // Standard deviation of the mean at n = 1e5 is about 1.5e-3.
    assert!(last < 0.01, "{last}");
    assert!(last <= first.max(0.01));
}
