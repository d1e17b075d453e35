//! Deconvolution of measured spectra by the characteristic function,
//! cloaking detection and the structure-factor relations.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, unit_phase, ComplexKahan};
use crate::perturb::{characteristic_function, FieldSampler, PerturbationModel, PerturbedPointSet};
use crate::pointset::{GeneratorSpec, PointCap};
use crate::rng::realization_seed;
use crate::special::ball_volume;
use crate::spectral::{smoothed_periodogram, FrequencySet, SpectralEstimate, SpectralKind};
use crate::stats::mean_estimate;

/// Default cloaking threshold on `|phi(lambda)|`.
pub const DEFAULT_CLOAK_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub frequency: Vec<f64>,
    pub measured: Complex64,
    pub phi: Complex64,
    /// `measured / phi`; absent when cloaked.
    pub recovered: Option<Complex64>,
    pub reference: Option<Complex64>,
    pub abs_error: Option<f64>,
    pub cloaked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSource {
    Model,
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub records: Vec<RecoveryRecord>,
    pub radius: Option<f64>,
    pub seed: Option<u64>,
    pub model: Option<PerturbationModel>,
    pub tau: f64,
    pub phi_source: PhiSource,
}

impl RecoveryReport {
    /// Attaches a reference spectrum aligned with the records and fills
    /// `abs_error` wherever a recovered value exists.
    pub fn with_reference(mut self, reference: &[Complex64]) -> Result<Self> {
        if reference.len() != self.records.len() {
            return Err(Error::DimensionMismatch { expected: self.records.len(), got: reference.len() });
        }
        for (r, &v) in self.records.iter_mut().zip(reference) {
            r.reference = Some(v);
            r.abs_error = r.recovered.map(|x| (x - v).norm());
        }
        Ok(self)
    }

    pub fn cloaked_count(&self) -> usize {
        self.records.iter().filter(|r| r.cloaked).count()
    }

    pub fn recovered(&self) -> impl Iterator<Item = Option<Complex64>> + '_ {
        self.records.iter().map(|r| r.recovered)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("cloaking threshold must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

fn build_report(measured: &[SpectralEstimate], tau: f64, phi: impl Fn(&[f64]) -> Complex64) -> Result<Vec<RecoveryRecord>> {
    check_tau(tau)?;
    measured
        .iter()
        .map(|m| {
            if m.kind != SpectralKind::FourierSum {
                return Err(Error::invalid(format!("recovery expects Fourier sums, got {}", m.kind.as_str())));
            }
            let phi = phi(&m.frequency);
            let cloaked = phi.norm() < tau;
            Ok(RecoveryRecord {
                frequency: m.frequency.clone(),
                measured: m.value,
                phi,
                recovered: (!cloaked).then(|| m.value / phi),
                reference: None,
                abs_error: None,
                cloaked,
            })
        })
        .collect()
}

/// `recovered(lambda) = measured(lambda) / phi(lambda)` wherever
/// `|phi(lambda)| >= tau`, with `phi` from the model.
pub fn recover_spectrum(measured: &[SpectralEstimate], model: &PerturbationModel, tau: f64) -> Result<RecoveryReport> {
    model.validate()?;
    let records = build_report(measured, tau, |l| characteristic_function(model, l).value)?;
    Ok(RecoveryReport {
        records,
        radius: measured.first().map(|m| m.radius),
        seed: Some(model.seed),
        model: Some(model.clone()),
        tau,
        phi_source: PhiSource::Model,
    })
}

/// `(1/n) sum_j exp(-2 pi i <xi_j, lambda>)` over flat displacement samples.
pub fn empirical_characteristic(dim: usize, samples: &[f64], lambda: &[f64]) -> Complex64 {
    let mut acc = ComplexKahan::default();
    let n = samples.len() / dim;
    for xi in samples.chunks_exact(dim) {
        acc.add(unit_phase(dot(xi, lambda)));
    }
    acc.value() / n as f64
}

/// Recovery with `phi` estimated from observed displacement samples, for
/// data whose displacement law is not known in closed form.
pub fn recover_spectrum_empirical(
    measured: &[SpectralEstimate],
    dim: usize,
    samples: &[f64],
    tau: f64,
) -> Result<RecoveryReport> {
    if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
        return Err(Error::invalid("displacement samples must be a nonempty flat array of d-vectors"));
    }
    let records = build_report(measured, tau, |l| empirical_characteristic(dim, samples, l))?;
    Ok(RecoveryReport {
        records,
        radius: measured.first().map(|m| m.radius),
        seed: None,
        model: None,
        tau,
        phi_source: PhiSource::Empirical,
    })
}

/// `{lambda in freqs : |phi(lambda)| < tau}`.
pub fn detect_cloaking(model: &PerturbationModel, freqs: &FrequencySet, tau: f64) -> Vec<Vec<f64>> {
    freqs.iter().filter(|l| characteristic_function(model, l).value.norm() < tau).map(<[f64]>::to_vec).collect()
}

// ---------------------------------------------------------------------------
// Structure factor

/// Which points enter the sum over `B_R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    /// `p in X cap B_R`, phase taken at `p + xi_p`.
    #[default]
    Unperturbed,
    /// `p + xi_p in B_R`.
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFactorRow {
    pub frequency: Vec<f64>,
    pub s: f64,
    pub std_error: f64,
    pub n_realizations: usize,
}

/// Per-point normalization: every realization is divided by `#(X cap B_R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFactorEstimate {
    pub rows: Vec<StructureFactorRow>,
    pub radius: f64,
    pub point_count: usize,
    pub membership: Membership,
}

/// Average over `n_realizations` seeds of
/// `|sum_{p in X cap B_R} exp(-2 pi i <p + xi_p, lambda>)|^2 / #(X cap B_R)`.
pub fn structure_factor(
    generator: &GeneratorSpec,
    model: &PerturbationModel,
    freqs: &FrequencySet,
    radius: f64,
    n_realizations: usize,
) -> Result<StructureFactorEstimate> {
    structure_factor_with(generator, model, freqs, radius, n_realizations, Membership::Unperturbed, PointCap::default())
}

pub fn structure_factor_with(
    generator: &GeneratorSpec,
    model: &PerturbationModel,
    freqs: &FrequencySet,
    radius: f64,
    n_realizations: usize,
    membership: Membership,
    cap: PointCap,
) -> Result<StructureFactorEstimate> {
    if n_realizations < 10 {
        return Err(Error::config(format!("structure factor needs at least 10 realizations, got {n_realizations}")));
    }
    if freqs.dim() != generator.dim() || model.dim() != generator.dim() {
        return Err(Error::DimensionMismatch { expected: generator.dim(), got: freqs.dim() });
    }
    if freqs.iter().any(|l| norm(l) <= 1e-12) {
        return Err(Error::invalid("the zero frequency is excluded from the structure factor"));
    }
    let d = generator.dim();
    let generation_radius = match membership {
        Membership::Unperturbed => radius,
        Membership::Perturbed => radius + 10.0 * model.dist.scale_equivalent(),
    };
    let ps = generator.generate(generation_radius, cap)?;
    let sampler = FieldSampler::new(&ps, model)?;
    let inside_base: Vec<bool> = ps.points().map(|p| norm(p) <= radius).collect();
    let count = inside_base.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::invalid("no points inside B_R"));
    }
    let per_seed: Vec<Vec<f64>> = (0..n_realizations)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let xi = sampler.sample(realization_seed(model.seed, r as u64))?;
            let positions: Vec<f64> = ps
                .points()
                .zip(xi.chunks_exact(d))
                .zip(&inside_base)
                .filter_map(|((p, x), &inside)| {
                    let q: Vec<f64> = p.iter().zip(x).map(|(a, b)| a + b).collect();
                    let keep = match membership {
                        Membership::Unperturbed => inside,
                        Membership::Perturbed => norm(&q) <= radius,
                    };
                    keep.then_some(q)
                })
                .flatten()
                .collect();
            Ok(freqs.iter().map(|l| crate::spectral::exponential_sum(d, &positions, l).norm_sqr() / count as f64).collect())
        })
        .collect::<Result<_>>()?;
    let rows = freqs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let xs: Vec<f64> = per_seed.iter().map(|v| v[i]).collect();
            let m = mean_estimate(&xs);
            StructureFactorRow { frequency: l.to_vec(), s: m.mean, std_error: m.std_error, n_realizations }
        })
        .collect();
    Ok(StructureFactorEstimate { rows, radius, point_count: count, membership })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRelationRow {
    pub frequency: Vec<f64>,
    pub s_base: f64,
    pub s_pert: f64,
    pub phi_sq: f64,
    /// `(S_pert - 1) - |phi|^2 (S_base - 1)`.
    pub residual: f64,
    /// `sqrt(se_pert^2 + |phi|^4 se_base^2)`.
    pub combined_se: f64,
    /// `|residual| / |S_pert - 1|`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRelationTrace {
    pub rows: Vec<StructureRelationRow>,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
    pub mean_combined_se: f64,
}

/// Residual of `S_pert - 1 = |phi|^2 (S_base - 1)` per frequency.
pub fn verify_structure_relation(
    base: &StructureFactorEstimate,
    pert: &StructureFactorEstimate,
    model: &PerturbationModel,
) -> Result<StructureRelationTrace> {
    if !model.is_iid() {
        return Err(Error::config("the structure-factor relation assumes an IID field"));
    }
    if base.rows.len() != pert.rows.len()
        || base.rows.iter().zip(&pert.rows).any(|(a, b)| crate::geometry::dist2(&a.frequency, &b.frequency).sqrt() > 1e-12)
    {
        return Err(Error::invalid("structure-factor estimates are on different frequency sets"));
    }
    if (base.radius - pert.radius).abs() > 1e-12 * base.radius {
        return Err(Error::invalid("structure-factor estimates use different radii"));
    }
    let rows: Vec<StructureRelationRow> = base
        .rows
        .iter()
        .zip(&pert.rows)
        .map(|(b, p)| {
            let phi_sq = characteristic_function(model, &b.frequency).value.norm_sqr();
            let residual = (p.s - 1.0) - phi_sq * (b.s - 1.0);
            StructureRelationRow {
                frequency: b.frequency.clone(),
                s_base: b.s,
                s_pert: p.s,
                phi_sq,
                residual,
                combined_se: (p.std_error.powi(2) + phi_sq * phi_sq * b.std_error.powi(2)).sqrt(),
                relative: residual.abs() / (p.s - 1.0).abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let n = rows.len().max(1) as f64;
    Ok(StructureRelationTrace {
        max_abs_residual: rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max),
        mean_abs_residual: rows.iter().map(|r| r.residual.abs()).sum::<f64>() / n,
        mean_combined_se: rows.iter().map(|r| r.combined_se).sum::<f64>() / n,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffractionRelationRow {
    pub frequency: Vec<f64>,
    /// Smoothed periodogram of `X_xi` minus the density.
    pub left: f64,
    /// `|phi|^2` times the smoothed periodogram of `X` minus the density.
    pub right: f64,
    pub residual: f64,
    /// `|residual| / |right|`.
    pub relative: f64,
    /// `5 / sqrt(Vol(B_R))`.
    pub threshold: f64,
}

/// Single-realization check of `gamma_hat(X_xi) - dens = |phi|^2
/// (gamma_hat(X) - dens)` at each frequency, both sides estimated by the
/// periodogram averaged over a band of width `2 / K`.
pub fn verify_diffraction_relation(
    pps: &PerturbedPointSet,
    freqs: &FrequencySet,
    lag_scale: f64,
    radius: f64,
) -> Result<Vec<DiffractionRelationRow>> {
    if !pps.model().is_iid() {
        return Err(Error::config("the diffraction relation assumes an IID field"));
    }
    let base = pps.base();
    let vol = ball_volume(pps.dim(), radius);
    let dens = base.claimed_density.unwrap_or_else(|| base.points().filter(|p| norm(p) <= radius).count() as f64 / vol);
    let left = smoothed_periodogram(pps, freqs, radius, lag_scale)?;
    let right = smoothed_periodogram(base, freqs, radius, lag_scale)?;
    let threshold = 5.0 / vol.sqrt();
    Ok(left
        .iter()
        .zip(&right)
        .map(|(l, r)| {
            let phi_sq = characteristic_function(pps.model(), &l.frequency).value.norm_sqr();
            let lv = l.value.re - dens;
            let rv = phi_sq * (r.value.re - dens);
            let residual = lv - rv;
            DiffractionRelationRow {
                frequency: l.frequency.clone(),
                left: lv,
                right: rv,
                residual,
                relative: residual.abs() / rv.abs().max(f64::MIN_POSITIVE),
                threshold,
            }
        })
        .collect())
}
