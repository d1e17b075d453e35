//! Shared fixtures for the benchmarks in `benches/`.

use difflab_core::perturb::displace;
use difflab_core::pointset::generate_lattice;
use difflab_core::{Distribution, Lattice, PerturbationModel, PerturbedPointSet, PointSet};

pub const SEED: u64 = 20_240_601;

/// `Z^2` out to `radius`.
pub fn z2(radius: f64) -> PointSet {
    generate_lattice(&Lattice::integer(2), radius).expect("lattice fits the point cap")
}

/// `Z^2` displaced by an IID Gaussian field.
pub fn perturbed_z2(radius: f64, sigma: f64) -> PerturbedPointSet {
    displace(&z2(radius + 1.0), &PerturbationModel::iid(Distribution::gaussian(2, sigma), SEED)).expect("valid model")
}
