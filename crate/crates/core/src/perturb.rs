//! Random displacement fields `(xi_p)` attached to a point set.
//!
//! Every field is a pure function of the model seed and the point (or its
//! lattice label), never of enumeration order, so computing the field on a
//! larger ball extends it without resampling.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, norm, Grid};
use crate::pointset::{self, CutProjectScheme, Descriptor, PointCap, PointSet};
use crate::rng::{self, stream, StreamRng};
use crate::special::{bessel_j0, bessel_j1, gauss_legendre};
use crate::stats;

/// Law of a single displacement vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Dirac0 {
        dim: usize,
    },
    GaussianIso {
        dim: usize,
        sigma: f64,
    },
    GaussianMixture {
        dim: usize,
        weights: Vec<f64>,
        sigmas: Vec<f64>,
        means: Vec<Vec<f64>>,
    },
    /// Independent uniform coordinates on `[-a, a]`.
    UniformBox {
        dim: usize,
        half_width: f64,
    },
    /// Spherically symmetric, `|xi| / scale` with density `alpha (1 + r)^{-alpha-1}`.
    HeavyTail {
        dim: usize,
        exponent: f64,
        scale: f64,
    },
}

/// Value of a characteristic function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharValue {
    pub value: Complex64,
    /// True when obtained by quadrature.
    pub numeric: bool,
    /// Bound on the absolute error (zero for closed forms).
    pub error_bound: f64,
}

impl CharValue {
    fn exact(value: Complex64) -> Self {
        CharValue { value, numeric: false, error_bound: 0.0 }
    }
}

const HEAVY_TAIL_TOLERANCE: f64 = 2e-9;
const MAX_QUADRATURE_PANELS: usize = 4_000_000;

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Dirac0 { dim }
            | Distribution::GaussianIso { dim, .. }
            | Distribution::GaussianMixture { dim, .. }
            | Distribution::UniformBox { dim, .. }
            | Distribution::HeavyTail { dim, .. } => *dim,
        }
    }

    pub fn gaussian(dim: usize, sigma: f64) -> Self {
        Distribution::GaussianIso { dim, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("dist.dim must be positive"));
        }
        match self {
            Distribution::Dirac0 { .. } => {}
            Distribution::GaussianIso { sigma, .. } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("dist.sigma must be positive"));
                }
            }
            Distribution::GaussianMixture { weights, sigmas, means, .. } => {
                if weights.is_empty() || weights.len() != sigmas.len() || weights.len() != means.len() {
                    return Err(Error::config("dist.weights, dist.sigmas and dist.means must have equal nonzero length"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::config("dist.weights must be nonnegative and sum to 1"));
                }
                if sigmas.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::config("dist.sigmas must be positive"));
                }
                if means.iter().any(|m| m.len() != d) {
                    return Err(Error::config(format!("dist.means entries must have length {d}")));
                }
            }
            Distribution::UniformBox { half_width, .. } => {
                if !(*half_width > 0.0 && half_width.is_finite()) {
                    return Err(Error::config("dist.half_width must be positive"));
                }
            }
            Distribution::HeavyTail { exponent, scale, .. } => {
                if !(*exponent > d as f64) {
                    return Err(Error::config(format!("dist.exponent must exceed the dimension {d}")));
                }
                if !(*scale > 0.0) {
                    return Err(Error::config("dist.scale must be positive"));
                }
                if d > 4 {
                    return Err(Error::Unsupported("heavy-tailed laws are implemented for dimension at most 4".into()));
                }
            }
        }
        Ok(())
    }

    /// Centered isotropic Gaussian (or the point mass): the family closed
    /// under `sqrt(1 - c^2) X + c Y`.
    pub fn is_centered_gaussian(&self) -> bool {
        matches!(self, Distribution::Dirac0 { .. } | Distribution::GaussianIso { .. })
    }

    /// Per-coordinate scale used for boundary margins: the root-mean-square
    /// coordinate when finite, else a third of the 0.999 quantile of `|xi|`.
    pub fn scale_equivalent(&self) -> f64 {
        let d = self.dim() as f64;
        match self {
            Distribution::Dirac0 { .. } => 0.0,
            Distribution::GaussianIso { sigma, .. } => *sigma,
            Distribution::GaussianMixture { weights, sigmas, means, .. } => {
                weights.iter().zip(sigmas).zip(means).map(|((w, s), m)| w * (s * s + geometry::dot(m, m) / d)).sum::<f64>().sqrt()
            }
            Distribution::UniformBox { half_width, .. } => half_width / 3f64.sqrt(),
            Distribution::HeavyTail { exponent, scale, .. } => {
                let a = *exponent;
                if a > 2.0 {
                    scale * (2.0 / ((a - 1.0) * (a - 2.0)) / d).sqrt()
                } else {
                    scale * (1000f64.powf(1.0 / a) - 1.0) / 3.0
                }
            }
        }
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        match self {
            Distribution::Dirac0 { .. } => vec![0.0; d],
            Distribution::GaussianIso { sigma, .. } => (0..d).map(|_| sigma * normal(rng)).collect(),
            Distribution::GaussianMixture { weights, sigmas, means, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                (0..d).map(|j| means[k][j] + sigmas[k] * normal(rng)).collect()
            }
            Distribution::UniformBox { half_width, .. } => {
                (0..d).map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0)).collect()
            }
            Distribution::HeavyTail { exponent, scale, .. } => {
                let u = 1.0 - rng.random::<f64>();
                let r = scale * (u.powf(-1.0 / exponent) - 1.0);
                unit_vector(d, rng).into_iter().map(|c| r * c).collect()
            }
        }
    }

    /// `E exp(-2 pi i <xi, lambda>)`.
    pub fn characteristic(&self, lambda: &[f64]) -> CharValue {
        let q2 = geometry::dot(lambda, lambda);
        match self {
            Distribution::Dirac0 { .. } => CharValue::exact(Complex64::new(1.0, 0.0)),
            Distribution::GaussianIso { sigma, .. } => {
                CharValue::exact(Complex64::new((-2.0 * PI * PI * sigma * sigma * q2).exp(), 0.0))
            }
            Distribution::GaussianMixture { weights, sigmas, means, .. } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for ((w, s), m) in weights.iter().zip(sigmas).zip(means) {
                    acc += geometry::unit_phase(geometry::dot(m, lambda)) * (w * (-2.0 * PI * PI * s * s * q2).exp());
                }
                CharValue::exact(acc)
            }
            Distribution::UniformBox { half_width, .. } => {
                CharValue::exact(Complex64::new(lambda.iter().map(|l| sinc(2.0 * PI * half_width * l)).product(), 0.0))
            }
            Distribution::HeavyTail { dim, exponent, scale } => {
                heavy_tail_characteristic(*dim, *exponent, 2.0 * PI * scale * q2.sqrt())
            }
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let l = norm(&v);
        if l > 1e-12 {
            return v.into_iter().map(|c| c / l).collect();
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `E exp(-i t <u, e>)` for `u` uniform on the sphere of `R^d`.
fn spherical_average(d: usize, t: f64) -> f64 {
    match d {
        1 => t.cos(),
        2 => bessel_j0(t),
        3 => sinc(t),
        _ => {
            if t.abs() < 1e-6 {
                1.0 - t * t / 12.0
            } else {
                2.0 * bessel_j1(t) / t
            }
        }
    }
}

/// Upper bound of `|spherical_average(d, s)|` over `s >= t`.
fn spherical_envelope(d: usize, t: f64) -> f64 {
    let e = match d {
        1 => 1.0,
        2 => (2.0 / (PI * t)).sqrt(),
        3 => 1.0 / t,
        _ => 2.2 / t * (2.0 / (PI * t)).sqrt(),
    };
    e.min(1.0)
}

/// Radial quadrature of `int alpha (1+r)^{-alpha-1} Omega_d(k r) dr` with
/// Gauss-Legendre panels no wider than a sixth of an oscillation; the tail
/// beyond the last panel is bounded by mass times envelope.
fn heavy_tail_characteristic(d: usize, alpha: f64, k: f64) -> CharValue {
    if k == 0.0 {
        return CharValue::exact(Complex64::new(1.0, 0.0));
    }
    let tail = |r: f64| (1.0 + r).powf(-alpha) * spherical_envelope(d, k * r);
    let mut r_max = 1.0;
    while tail(r_max) > HEAVY_TAIL_TOLERANCE && r_max < 1e15 {
        r_max *= 2.0;
    }
    let rule = gauss_legendre(10);
    let density = |r: f64| alpha * (1.0 + r).powf(-alpha - 1.0);
    let mut acc = geometry::Kahan::default();
    let mut a = 0.0;
    let mut panels = 0usize;
    while a < r_max && panels < MAX_QUADRATURE_PANELS {
        let h = (0.25 * (1.0 + a)).min(1.0 / k).min(r_max - a).max(1e-12);
        let (mid, half) = (a + 0.5 * h, 0.5 * h);
        let s: f64 = rule
            .iter()
            .map(|(x, w)| {
                let r = mid + half * x;
                w * density(r) * spherical_average(d, k * r)
            })
            .sum();
        acc.add(half * s);
        a += h;
        panels += 1;
    }
    CharValue { value: Complex64::new(acc.value(), 0.0), numeric: true, error_bound: tail(a) + 1e-13 * panels as f64 }
}

// ---------------------------------------------------------------------------
// Models

/// Correlation structure of the field.
#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    Iid,
    /// Independent fields on even shells; each odd-shell displacement is
    /// coupled to the displacement of its nearest point in the previous shell.
    /// The `j`-th dependent of an anchor has correlation
    /// `coupling / sqrt(j (j + 1))` with it and none with the other dependents,
    /// so odd-shell points stay pairwise uncorrelated.
    ShellMixing {
        shells: Vec<f64>,
        coupling: f64,
    },
    /// Lattice-stationary Gaussian field on a cut-and-project set.
    StationaryCp {
        scheme: CutProjectScheme,
        correlation_length: f64,
    },
    /// Gaussian field on lattice labels with covariance
    /// `sigma^2 prod_i r(k_i)`, `r(k) ~ rho^|k|`, built from a separable
    /// moving average of `terms` coefficients.
    LatticeAr {
        rho: f64,
        terms: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfig", into = "ModelConfig")]
pub struct PerturbationModel {
    pub dist: Distribution,
    pub correlation: Correlation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Iid,
    ShellMixing,
    StationaryCp,
    LatticeAr,
}

/// Flat configuration schema of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub dist: Distribution,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<CutProjectScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_terms: Option<usize>,
}

impl TryFrom<ModelConfig> for PerturbationModel {
    type Error = Error;
    fn try_from(c: ModelConfig) -> Result<Self> {
        let missing = |f: &str| Error::config(format!("model.{f} is required for this variant"));
        let correlation = match c.variant {
            ModelVariant::Iid => Correlation::Iid,
            ModelVariant::ShellMixing => Correlation::ShellMixing {
                shells: c.shells.ok_or_else(|| missing("shells"))?,
                coupling: c.coupling.ok_or_else(|| missing("coupling"))?,
            },
            ModelVariant::StationaryCp => Correlation::StationaryCp {
                scheme: c.scheme.unwrap_or_else(CutProjectScheme::fibonacci),
                correlation_length: c.correlation_length.ok_or_else(|| missing("correlation_length"))?,
            },
            ModelVariant::LatticeAr => Correlation::LatticeAr { rho: c.ar_rho.unwrap_or(0.5), terms: c.ar_terms.unwrap_or(30) },
        };
        let m = PerturbationModel { dist: c.dist, correlation, seed: c.seed };
        m.validate()?;
        Ok(m)
    }
}

impl From<PerturbationModel> for ModelConfig {
    fn from(m: PerturbationModel) -> Self {
        let mut c = ModelConfig {
            variant: ModelVariant::Iid,
            dist: m.dist,
            seed: m.seed,
            shells: None,
            coupling: None,
            correlation_length: None,
            scheme: None,
            ar_rho: None,
            ar_terms: None,
        };
        match m.correlation {
            Correlation::Iid => {}
            Correlation::ShellMixing { shells, coupling } => {
                c.variant = ModelVariant::ShellMixing;
                c.shells = Some(shells);
                c.coupling = Some(coupling);
            }
            Correlation::StationaryCp { scheme, correlation_length } => {
                c.variant = ModelVariant::StationaryCp;
                c.scheme = Some(scheme);
                c.correlation_length = Some(correlation_length);
            }
            Correlation::LatticeAr { rho, terms } => {
                c.variant = ModelVariant::LatticeAr;
                c.ar_rho = Some(rho);
                c.ar_terms = Some(terms);
            }
        }
        c
    }
}

impl PerturbationModel {
    pub fn iid(dist: Distribution, seed: u64) -> Self {
        PerturbationModel { dist, correlation: Correlation::Iid, seed }
    }

    pub fn shell_mixing(dist: Distribution, shells: Vec<f64>, coupling: f64, seed: u64) -> Self {
        PerturbationModel { dist, correlation: Correlation::ShellMixing { shells, coupling }, seed }
    }

    pub fn lattice_ar(dist: Distribution, rho: f64, terms: usize, seed: u64) -> Self {
        PerturbationModel { dist, correlation: Correlation::LatticeAr { rho, terms }, seed }
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PerturbationModel { seed, ..self.clone() }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.correlation, Correlation::Iid)
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        match &self.correlation {
            Correlation::Iid => {}
            Correlation::ShellMixing { shells, coupling } => {
                if shells.is_empty() || shells[0] <= 0.0 || shells.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config("model.shells must be positive and strictly increasing"));
                }
                let ratios: Vec<f64> = shells.windows(2).map(|w| w[1] / w[0]).collect();
                if ratios.windows(2).any(|r| r[1] <= r[0]) {
                    return Err(Error::config("model.shells ratios R_k / R_(k-1) must be strictly increasing"));
                }
                if !(0.0..1.0).contains(coupling) {
                    return Err(Error::config("model.coupling must lie in [0, 1)"));
                }
                if *coupling > 0.0 && !self.dist.is_centered_gaussian() {
                    return Err(Error::Unsupported(
                        "shell coupling preserves the marginal only for centered isotropic Gaussian laws".into(),
                    ));
                }
            }
            Correlation::StationaryCp { scheme, correlation_length } => {
                scheme.validate()?;
                if !(*correlation_length >= 0.0) {
                    return Err(Error::config("model.correlation_length must be nonnegative"));
                }
                if scheme.phys_dim() != self.dim() {
                    return Err(Error::DimensionMismatch { expected: scheme.phys_dim(), got: self.dim() });
                }
                if !self.dist.is_centered_gaussian() {
                    return Err(Error::Unsupported("stationary fields need a centered isotropic Gaussian base law".into()));
                }
            }
            Correlation::LatticeAr { rho, terms } => {
                if !(0.0..1.0).contains(rho) || *terms == 0 {
                    return Err(Error::config("model.ar_rho must lie in [0, 1) and model.ar_terms be positive"));
                }
                if !self.dist.is_centered_gaussian() {
                    return Err(Error::Unsupported("lattice fields need a centered isotropic Gaussian base law".into()));
                }
            }
        }
        Ok(())
    }
}

/// `phi(lambda) = E exp(-2 pi i <xi, lambda>)` of the one-point marginal.
pub fn characteristic_function(model: &PerturbationModel, lambda: &[f64]) -> CharValue {
    model.dist.characteristic(lambda)
}

// ---------------------------------------------------------------------------
// Realized fields

/// A point set together with one realization of its displacement field.
#[derive(Debug, Clone)]
pub struct PerturbedPointSet {
    base: PointSet,
    displacements: Vec<f64>,
    model: PerturbationModel,
}

impl PerturbedPointSet {
    pub fn new(base: PointSet, displacements: Vec<f64>, model: PerturbationModel) -> Result<Self> {
        if displacements.len() != base.coords().len() {
            return Err(Error::DimensionMismatch { expected: base.coords().len(), got: displacements.len() });
        }
        Ok(PerturbedPointSet { base, displacements, model })
    }

    pub fn base(&self) -> &PointSet {
        &self.base
    }

    pub fn model(&self) -> &PerturbationModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn displacement(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.displacements[i * d..(i + 1) * d]
    }

    /// Flat displacement array aligned with `base().coords()`.
    pub fn displacements(&self) -> &[f64] {
        &self.displacements
    }

    /// `p + xi_p`.
    pub fn position(&self, i: usize) -> Vec<f64> {
        self.base.point(i).iter().zip(self.displacement(i)).map(|(p, x)| p + x).collect()
    }

    /// Flat array of perturbed positions aligned with the base points.
    pub fn positions(&self) -> Vec<f64> {
        self.base.coords().iter().zip(&self.displacements).map(|(p, x)| p + x).collect()
    }
}

/// The IID displacement of the point `p`.
pub fn iid_displacement(dist: &Distribution, seed: u64, p: &[f64]) -> Vec<f64> {
    dist.sample(&mut rng::point_rng(seed, p, stream::DISPLACEMENT))
}

/// Per-point-set preparation shared by every realization of a model (shell
/// anchors, label boxes); `sample` then only depends on the seed.
#[derive(Debug, Clone)]
pub struct FieldSampler<'a> {
    ps: &'a PointSet,
    dist: Distribution,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Iid,
    Shell { plan: ShellPlan, coupling: f64 },
    LatticeAr { coefficients: Vec<f64> },
}

impl<'a> FieldSampler<'a> {
    pub fn new(ps: &'a PointSet, model: &PerturbationModel) -> Result<Self> {
        model.validate()?;
        if model.dim() != ps.dim() {
            return Err(Error::DimensionMismatch { expected: ps.dim(), got: model.dim() });
        }
        let kind = match &model.correlation {
            Correlation::Iid => SamplerKind::Iid,
            Correlation::ShellMixing { shells, coupling } => {
                SamplerKind::Shell { plan: ShellPlan::new(ps, shells)?, coupling: *coupling }
            }
            Correlation::LatticeAr { rho, terms } => {
                if ps.label(0).is_some_and(|l| l.len() != ps.dim()) || (!ps.is_empty() && ps.label(0).is_none()) {
                    return Err(Error::invalid("lattice fields need a point set labelled by d-dimensional lattice coordinates"));
                }
                SamplerKind::LatticeAr { coefficients: ar_coefficients(*rho, *terms) }
            }
            Correlation::StationaryCp { .. } => {
                return Err(Error::Unsupported(
                    "stationary cut-and-project fields shift the window; use stationary_cp_field".into(),
                ))
            }
        };
        Ok(FieldSampler { ps, dist: model.dist.clone(), kind })
    }

    /// False when the displacements of points `i` and `j` are independent by
    /// construction, so their covariance is exactly zero.
    pub fn may_depend(&self, i: usize, j: usize) -> bool {
        if i == j {
            return true;
        }
        match &self.kind {
            SamplerKind::Iid => false,
            SamplerKind::Shell { plan, coupling } => {
                *coupling > 0.0 && (plan.anchors[i] == Some(j as u32) || plan.anchors[j] == Some(i as u32))
            }
            SamplerKind::LatticeAr { coefficients } => {
                let (a, b) = (self.ps.label(i), self.ps.label(j));
                match (a, b) {
                    (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.abs_diff(*y) < coefficients.len() as u64),
                    _ => true,
                }
            }
        }
    }

    /// Flat displacement array for one seed.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        let ps = self.ps;
        let d = ps.dim();
        let n = ps.len();
        match &self.kind {
            SamplerKind::Iid => {
                Ok((0..n).into_par_iter().flat_map_iter(|i| iid_displacement(&self.dist, seed, ps.point(i))).collect())
            }
            SamplerKind::Shell { plan, coupling } => {
                let c = *coupling;
                let mut out: Vec<f64> = (0..n)
                    .into_par_iter()
                    .flat_map_iter(|i| match plan.anchors[i] {
                        Some(_) => self.dist.sample(&mut rng::point_rng(seed, ps.point(i), stream::SHELL_FRESH)),
                        None => iid_displacement(&self.dist, seed, ps.point(i)),
                    })
                    .collect();
                if c > 0.0 {
                    let keep = (1.0 - c * c).sqrt();
                    let coupled: Vec<(u32, Vec<f64>)> = plan
                        .groups
                        .par_iter()
                        .flat_map_iter(|(a, deps)| {
                            let q = ps.point(*a as usize);
                            let anchor = &out[*a as usize * d..(*a as usize + 1) * d];
                            let mut aux = rng::point_rng(seed, q, stream::SHELL_AUX);
                            let mut prefix = vec![0.0; d];
                            deps.iter()
                                .enumerate()
                                .map(|(r, &i)| {
                                    // Helmert step j: unit variance, correlation c/sqrt(j(j+1))
                                    // with the anchor, orthogonal to earlier dependents.
                                    let j = (r + 1) as f64;
                                    let g = self.dist.sample(&mut aux);
                                    let base = &out[i as usize * d..(i as usize + 1) * d];
                                    let xi: Vec<f64> = (0..d)
                                        .map(|k| {
                                            let h =
                                                (anchor[k] - prefix[k]) / (j * (j + 1.0)).sqrt() + (j / (j + 1.0)).sqrt() * g[k];
                                            c * h + keep * base[k]
                                        })
                                        .collect();
                                    for k in 0..d {
                                        prefix[k] += g[k];
                                    }
                                    (i, xi)
                                })
                                .collect::<Vec<_>>()
                        })
                        .collect();
                    for (i, xi) in coupled {
                        out[i as usize * d..(i as usize + 1) * d].copy_from_slice(&xi);
                    }
                }
                Ok(out)
            }
            SamplerKind::LatticeAr { coefficients } => {
                let sigma = match self.dist {
                    Distribution::GaussianIso { sigma, .. } => sigma,
                    _ => 0.0,
                };
                if sigma == 0.0 || n == 0 {
                    return Ok(vec![0.0; n * d]);
                }
                lattice_ar_field(ps, coefficients, sigma, seed)
            }
        }
    }
}

/// One realization of the model's field on `ps` using `model.seed`.
pub fn displace(ps: &PointSet, model: &PerturbationModel) -> Result<PerturbedPointSet> {
    let displacements = FieldSampler::new(ps, model)?.sample(model.seed)?;
    PerturbedPointSet::new(ps.clone(), displacements, model.clone())
}

// ---------------------------------------------------------------------------
// Shell mixing

/// Shell index and nearest previous-shell anchor of every point. Each
/// anchor's dependents are ranked by norm, then lexicographically, so the rank
/// of a point does not change when the generation radius grows.
#[derive(Debug, Clone)]
pub struct ShellPlan {
    shells: Vec<usize>,
    anchors: Vec<Option<u32>>,
    ranks: Vec<u32>,
    groups: Vec<(u32, Vec<u32>)>,
}

impl ShellPlan {
    pub fn new(ps: &PointSet, radii: &[f64]) -> Result<Self> {
        let last = *radii.last().ok_or_else(|| Error::config("model.shells must be nonempty"))?;
        if last < ps.generation_radius {
            return Err(Error::config(format!(
                "largest shell radius {last} is below the generation radius {}",
                ps.generation_radius
            )));
        }
        let n = ps.len();
        let shells: Vec<usize> = ps.points().map(|p| radii.partition_point(|&r| r < norm(p))).collect();
        let mut anchors = vec![None; n];
        for k in (1..radii.len()).step_by(2) {
            let inner_idx: Vec<u32> = (0..n).filter(|&i| shells[i] == k - 1).map(|i| i as u32).collect();
            if inner_idx.is_empty() {
                continue;
            }
            let d = ps.dim();
            let inner: Vec<f64> = inner_idx.iter().flat_map(|&i| ps.point(i as usize).iter().copied()).collect();
            let r_in = radii[k - 1];
            let vol = crate::special::ball_volume(d, r_in);
            let cell = (vol / inner_idx.len() as f64).powf(1.0 / d as f64).max(ps.separation_radius).max(1e-9) * 2.0;
            let grid = Grid::new(d, &inner, cell);
            let outer: Vec<usize> = (0..n).filter(|&i| shells[i] == k).collect();
            let found: Vec<(usize, u32)> =
                outer.par_iter().map(|&i| (i, inner_idx[nearest_inner(&grid, ps.point(i), r_in, cell)])).collect();
            for (i, a) in found {
                anchors[i] = Some(a);
            }
        }
        let norms: Vec<f64> = ps.points().map(norm).collect();
        let mut dependents: Vec<(u32, u32)> = (0..n).filter_map(|i| anchors[i].map(|a| (a, i as u32))).collect();
        // Point indices follow lexicographic order, so they break norm ties.
        dependents.sort_by(|x, y| x.0.cmp(&y.0).then(norms[x.1 as usize].total_cmp(&norms[y.1 as usize])).then(x.1.cmp(&y.1)));
        let mut ranks = vec![0u32; n];
        let mut groups: Vec<(u32, Vec<u32>)> = Vec::new();
        for (a, i) in dependents {
            match groups.last_mut() {
                Some((b, deps)) if *b == a => deps.push(i),
                _ => groups.push((a, vec![i])),
            }
            ranks[i as usize] = groups.last().map_or(0, |g| g.1.len() as u32);
        }
        Ok(ShellPlan { shells, anchors, ranks, groups })
    }

    pub fn shell(&self, i: usize) -> usize {
        self.shells[i]
    }

    pub fn anchor(&self, i: usize) -> Option<usize> {
        self.anchors[i].map(|a| a as usize)
    }

    /// 1-based rank of `i` among its anchor's dependents; 0 when unanchored.
    pub fn rank(&self, i: usize) -> usize {
        self.ranks[i] as usize
    }

    /// Correlation of each coordinate of point `i` with its anchor under coupling `c`.
    pub fn anchor_correlation(&self, i: usize, c: f64) -> f64 {
        match self.ranks[i] {
            0 => 0.0,
            j => c / ((j as f64) * (j as f64 + 1.0)).sqrt(),
        }
    }
}

/// Index (into the grid) of the nearest stored point to `p`, all stored
/// points lying in the ball of radius `r_in < |p|`; ties go to the lowest
/// index, i.e. the lexicographically smallest point.
fn nearest_inner(grid: &Grid<'_>, p: &[f64], r_in: f64, cell: f64) -> usize {
    let np = norm(p);
    let t: Vec<f64> = p.iter().map(|x| x * r_in / np).collect();
    // Any stored point close to the radial projection gives an upper bound.
    let mut radius = cell;
    let mut upper = f64::INFINITY;
    loop {
        grid.for_each_within(&t, radius, |j, _| upper = upper.min(geometry::dist2(p, grid.point(j))));
        if upper.is_finite() {
            break;
        }
        radius *= 2.0;
    }
    // Points of B_{r_in} within sqrt(upper) of p lie within rho of t.
    let x = (r_in * r_in - upper + np * np) / (2.0 * np);
    let rho = (2.0 * r_in * (r_in - x)).max(0.0).sqrt() + 1e-9 * (1.0 + r_in);
    let mut best = (f64::INFINITY, usize::MAX);
    grid.for_each_within(&t, rho, |j, _| {
        let d2 = geometry::dist2(p, grid.point(j));
        if d2 < best.0 {
            best = (d2, j);
        }
    });
    best.1
}

/// Field with fresh draws on even shells and anchor coupling on odd shells.
pub fn shell_mixing_field(ps: &PointSet, model: &PerturbationModel) -> Result<PerturbedPointSet> {
    if !matches!(model.correlation, Correlation::ShellMixing { .. }) {
        return Err(Error::config("shell_mixing_field needs a shell-mixing model"));
    }
    displace(ps, model)
}

// ---------------------------------------------------------------------------
// Lattice-label field

/// Moving-average coefficients `rho^j`, normalized to unit sum of squares.
pub fn ar_coefficients(rho: f64, terms: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..terms).map(|j| rho.powi(j as i32)).collect();
    let s = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    raw.into_iter().map(|c| c / s).collect()
}

/// Correlation at lag `k` along one axis of the lattice-label field.
pub fn ar_correlation(rho: f64, terms: usize, k: i64) -> f64 {
    let c = ar_coefficients(rho, terms);
    let k = k.unsigned_abs() as usize;
    (0..terms.saturating_sub(k)).map(|j| c[j] * c[j + k]).sum()
}

const MAX_LABEL_CELLS: usize = 50_000_000;

fn lattice_ar_field(ps: &PointSet, coefficients: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let d = ps.dim();
    let n = ps.len();
    let terms = coefficients.len() as i64;
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for i in 0..n {
        let l = ps.label(i).expect("checked by the sampler");
        for k in 0..d {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(l[k]);
        }
    }
    for v in lo.iter_mut() {
        *v -= terms - 1;
    }
    let widths: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as usize).collect();
    let cells: usize = widths.iter().product();
    if cells.saturating_mul(d) > MAX_LABEL_CELLS {
        return Err(Error::CapExceeded { requested: (cells * d) as u64, cap: MAX_LABEL_CELLS as u64 });
    }
    let strides: Vec<usize> = (0..d).map(|k| widths[k + 1..].iter().product()).collect();
    let label_of = |mut idx: usize| -> Vec<i64> {
        let mut l = vec![0; d];
        for k in 0..d {
            l[k] = lo[k] + (idx / strides[k]) as i64;
            idx %= strides[k];
        }
        l
    };
    // White noise keyed by label, coordinate-major inside each cell.
    let mut field: Vec<f64> = (0..cells)
        .into_par_iter()
        .flat_map_iter(|idx| {
            let mut r = rng::label_rng(seed, &label_of(idx), stream::LATTICE_FIELD);
            (0..d).map(move |_| normal(&mut r)).collect::<Vec<_>>()
        })
        .collect();
    for axis in 0..d {
        let stride = strides[axis];
        let width = widths[axis];
        let src = field.clone();
        field.par_chunks_mut(d).enumerate().for_each(|(idx, out)| {
            let pos = (idx / stride) % width;
            for (c, v) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, cj) in coefficients.iter().enumerate().take(pos + 1) {
                    acc += cj * src[(idx - j * stride) * d + c];
                }
                *v = acc;
            }
        });
    }
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let l = ps.label(i).expect("checked by the sampler");
        let idx: usize = (0..d).map(|k| (l[k] - lo[k]) as usize * strides[k]).sum();
        out.extend(field[idx * d..(idx + 1) * d].iter().map(|z| sigma * z));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stationary cut-and-project field

const RFF_FEATURES: usize = 256;
const RFF_STREAM: u64 = 0x5246_4600;
const ETA_STREAM: u64 = 0x4554_4100;

/// Shift `eta = B u`, `u` uniform on `[-1/2, 1/2)^n`.
pub fn stationary_shift(scheme: &CutProjectScheme, seed: u64) -> Vec<f64> {
    let n = scheme.total_dim();
    let mut r = rng::global_rng(seed, ETA_STREAM);
    let u: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    (0..n).map(|i| (0..n).map(|j| scheme.lattice_basis[j][i] * u[j]).sum()).collect()
}

/// Random Fourier features for the kernel `sigma^2 exp(-|q - q'|^2 / l^2)`:
/// for each output coordinate, `M` pairs `(omega, b)` with
/// `omega ~ N(0, I / (2 pi^2 l^2))` and `b` uniform on `[0, 2 pi)`.
struct FourierFeatures {
    omegas: Vec<Vec<f64>>,
    phases: Vec<f64>,
    amplitude: f64,
}

impl FourierFeatures {
    fn new(n: usize, d: usize, sigma: f64, length: f64, seed: u64) -> Self {
        let mut r: StreamRng = rng::global_rng(seed, RFF_STREAM);
        let spread = 1.0 / (PI * length * 2f64.sqrt());
        let total = d * RFF_FEATURES;
        let omegas = (0..total).map(|_| (0..n).map(|_| spread * normal(&mut r)).collect()).collect();
        let phases = (0..total).map(|_| 2.0 * PI * r.random::<f64>()).collect();
        FourierFeatures { omegas, phases, amplitude: sigma * (2.0 / RFF_FEATURES as f64).sqrt() }
    }

    fn eval(&self, q: &[f64], d: usize) -> Vec<f64> {
        (0..d)
            .map(|c| {
                let range = c * RFF_FEATURES..(c + 1) * RFF_FEATURES;
                let s: f64 = range.map(|m| (2.0 * PI * geometry::dot(&self.omegas[m], q) + self.phases[m]).cos()).sum();
                self.amplitude * s
            })
            .collect()
    }
}

/// `{q + xi'_q + eta : q in L}` projected: the window is shifted by
/// `-eta_int`, and each projected point `p = pi_phys(q)` is displaced by
/// `xi'_q + eta_phys`. `correlation_length = 0` gives the IID field keyed by
/// `p`. `eta_override` replaces the seeded shift.
pub fn stationary_cp_field(
    scheme: &CutProjectScheme,
    base: &Distribution,
    correlation_length: f64,
    seed: u64,
    radius: f64,
    eta_override: Option<&[f64]>,
) -> Result<PerturbedPointSet> {
    let model = PerturbationModel {
        dist: base.clone(),
        correlation: Correlation::StationaryCp { scheme: scheme.clone(), correlation_length },
        seed,
    };
    model.validate()?;
    let n = scheme.total_dim();
    let d = scheme.phys_dim();
    let eta: Vec<f64> = match eta_override {
        Some(e) if e.len() != n => return Err(Error::DimensionMismatch { expected: n, got: e.len() }),
        Some(e) => e.to_vec(),
        None => stationary_shift(scheme, seed),
    };
    let project = |rows: &[Vec<f64>], v: &[f64]| -> Vec<f64> { rows.iter().map(|r| geometry::dot(r, v)).collect() };
    let eta_phys = project(&scheme.proj_phys, &eta);
    let eta_int = project(&scheme.proj_int, &eta);
    let mut shifted = scheme.clone();
    shifted.window = scheme.window.shifted(&eta_int.iter().map(|x| -x).collect::<Vec<_>>());
    let mut ps = pointset::generate_cut_and_project_with(&shifted, radius, None, PointCap::default())?;
    ps.descriptor = Descriptor {
        seed: Some(seed),
        ..Descriptor::new(
            "stationary_cut_and_project",
            serde_json::json!({ "scheme": scheme, "radius": radius, "eta": eta, "correlation_length": correlation_length }),
        )
    };
    let sigma = match base {
        Distribution::GaussianIso { sigma, .. } => *sigma,
        _ => 0.0,
    };
    let features = (correlation_length > 0.0 && sigma > 0.0).then(|| FourierFeatures::new(n, d, sigma, correlation_length, seed));
    let displacements: Vec<f64> = (0..ps.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let field = match &features {
                Some(f) => {
                    let m = ps.label(i).expect("cut-and-project points carry labels");
                    let q: Vec<f64> = (0..n).map(|r| (0..n).map(|c| scheme.lattice_basis[c][r] * m[c] as f64).sum()).collect();
                    f.eval(&q, d)
                }
                None => iid_displacement(base, seed, ps.point(i)),
            };
            field.into_iter().zip(&eta_phys).map(|(a, b)| a + b).collect::<Vec<_>>()
        })
        .collect();
    PerturbedPointSet::new(ps, displacements, model)
}

// ---------------------------------------------------------------------------
// Moments and covariance surrogates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    /// `d + eps`.
    pub order: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Running estimate at `n / 1000, n / 100, n / 10, n` samples.
    pub trace: Vec<(usize, f64)>,
    /// True when the moment is infinite by tail-integral comparison.
    pub diverging: bool,
    /// Closed form when available and finite.
    pub analytic: Option<f64>,
}

/// Monte Carlo estimate of `E |xi|^{d + eps}`.
pub fn verify_moment(dist: &Distribution, eps: f64, n_samples: usize, seed: u64) -> Result<MomentEstimate> {
    dist.validate()?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if n_samples < 10_000 {
        return Err(Error::invalid("at least 10^4 samples are required"));
    }
    let d = dist.dim() as f64;
    let s = d + eps;
    let mut r = rng::global_rng(seed, 0x4d4f_4d00);
    let values: Vec<f64> = (0..n_samples).map(|_| norm(&dist.sample(&mut r)).powf(s)).collect();
    let checkpoints = [n_samples / 1000, n_samples / 100, n_samples / 10, n_samples];
    let mut acc = geometry::Kahan::default();
    let mut trace = Vec::new();
    let mut next = 0;
    for (i, v) in values.iter().enumerate() {
        acc.add(*v);
        while next < checkpoints.len() && i + 1 == checkpoints[next] {
            trace.push((i + 1, acc.value() / (i + 1) as f64));
            next += 1;
        }
    }
    let est = stats::mean_estimate(&values);
    let (diverging, analytic) = match dist {
        Distribution::Dirac0 { .. } => (false, Some(0.0)),
        Distribution::GaussianIso { sigma, .. } => {
            (false, Some(sigma.powf(s) * 2f64.powf(s / 2.0) * libm::tgamma((d + s) / 2.0) / libm::tgamma(d / 2.0)))
        }
        Distribution::HeavyTail { exponent, scale, .. } => {
            let a = *exponent;
            if a <= s {
                (true, None)
            } else {
                (false, Some(scale.powf(s) * a * libm::tgamma(s + 1.0) * libm::tgamma(a - s) / libm::tgamma(a + 1.0)))
            }
        }
        _ => (false, None),
    };
    Ok(MomentEstimate { order: s, estimate: est.mean, std_error: est.std_error, trace, diverging, analytic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub n: usize,
    /// Ordered pairs `p != q` in `B_N`.
    pub pairs: usize,
    /// `sum |Cov-hat(Y_p, Y_q)|` over those pairs.
    pub raw_sum: f64,
    /// Same sum restricted to estimates above `z` standard errors.
    pub significant_sum: f64,
    /// Pairs whose estimate exceeds 3 standard errors.
    pub exceed_3se: usize,
    /// `raw_sum / N^2`.
    pub increment: f64,
    /// Running sum of `increment`.
    pub partial_sum: f64,
    /// Running sum of `significant_sum / N^2`.
    pub significant_partial_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTrace {
    pub rows: Vec<CovarianceRow>,
    pub n_seeds: usize,
    pub z: f64,
}

/// Monte Carlo surrogate of `sum_N N^{-2} sum_{p != q in B_N} |Cov(Y_p, Y_q)|`
/// with `Y_p = |xi_p| 1{|xi_p| <= |p|}`, using `n_seeds` realizations.
/// Pairs whose displacements are independent by construction contribute an
/// exact zero; only the remaining pairs are estimated. Without that filter the
/// sum of `N^4` absolute noise terms grows with `N` whatever the model.
/// `significant_sum` further keeps estimates above `z` standard errors
/// (`sd_p sd_q / sqrt(n_seeds)`).
pub fn covariance_condition_estimate(
    model: &PerturbationModel,
    ps: &PointSet,
    n_max: usize,
    n_seeds: usize,
    z: f64,
) -> Result<CovarianceTrace> {
    if n_seeds < 500 {
        return Err(Error::invalid("covariance estimates need at least 500 seeds"));
    }
    if n_max as f64 > ps.generation_radius || n_max == 0 {
        return Err(Error::invalid("N_max must lie in [1, generation radius]"));
    }
    let sampler = FieldSampler::new(ps, model)?;
    let d = ps.dim();
    let idx: Vec<usize> = (0..ps.len()).filter(|&i| norm(ps.point(i)) <= n_max as f64).collect();
    let m = idx.len();
    let norms: Vec<f64> = idx.iter().map(|&i| norm(ps.point(i))).collect();
    // ys[s * m + j]
    let mut ys = vec![0.0; n_seeds * m];
    for s in 0..n_seeds {
        let xi = sampler.sample(rng::realization_seed(model.seed, s as u64))?;
        for (j, &i) in idx.iter().enumerate() {
            let r = norm(&xi[i * d..(i + 1) * d]);
            ys[s * m + j] = if r <= norms[j] { r } else { 0.0 };
        }
    }
    let means: Vec<f64> = (0..m).map(|j| (0..n_seeds).map(|s| ys[s * m + j]).sum::<f64>() / n_seeds as f64).collect();
    for s in 0..n_seeds {
        for j in 0..m {
            ys[s * m + j] -= means[j];
        }
    }
    let sds: Vec<f64> =
        (0..m).map(|j| ((0..n_seeds).map(|s| ys[s * m + j].powi(2)).sum::<f64>() / (n_seeds - 1) as f64).sqrt()).collect();
    // Shell of a pair: the smallest N containing both points.
    let shell = |j: usize| (norms[j].ceil() as usize).max(1);
    let per_row: Vec<Vec<(f64, f64, usize, usize)>> = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![(0.0, 0.0, 0usize, 0usize); n_max + 1];
            for b in a + 1..m {
                let k = shell(a).max(shell(b));
                acc[k].3 += 2;
                if !sampler.may_depend(idx[a], idx[b]) {
                    continue;
                }
                let cov = (0..n_seeds).map(|s| ys[s * m + a] * ys[s * m + b]).sum::<f64>() / (n_seeds - 1) as f64;
                let se = sds[a] * sds[b] / (n_seeds as f64).sqrt();
                let e = &mut acc[k];
                e.0 += 2.0 * cov.abs();
                if cov.abs() > z * se {
                    e.1 += 2.0 * cov.abs();
                }
                if cov.abs() > 3.0 * se {
                    e.2 += 2;
                }
            }
            acc
        })
        .collect();
    let mut rows = Vec::with_capacity(n_max);
    let (mut raw, mut sig, mut exceed, mut pairs) = (0.0, 0.0, 0usize, 0usize);
    let (mut partial, mut sig_partial) = (0.0, 0.0);
    for k in 1..=n_max {
        for row in &per_row {
            raw += row[k].0;
            sig += row[k].1;
            exceed += row[k].2;
            pairs += row[k].3;
        }
        let inc = raw / (k * k) as f64;
        partial += inc;
        sig_partial += sig / (k * k) as f64;
        rows.push(CovarianceRow {
            n: k,
            pairs,
            raw_sum: raw,
            significant_sum: sig,
            exceed_3se: exceed,
            increment: inc,
            partial_sum: partial,
            significant_partial_sum: sig_partial,
        });
    }
    Ok(CovarianceTrace { rows, n_seeds, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::{generate_lattice, Lattice};

    /// Tensor Gauss-Legendre oracle of `E exp(-2 pi i <xi, lambda>)` for a
    /// density on a box.
    fn quadrature_oracle(density: impl Fn(&[f64]) -> f64, half: f64, lambda: &[f64]) -> Complex64 {
        let rule = gauss_legendre(20);
        let panels = 200;
        let h = 2.0 * half / panels as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        if lambda.len() == 1 {
            for p in 0..panels {
                let mid = -half + (p as f64 + 0.5) * h;
                for (x, w) in &rule {
                    let t = mid + 0.5 * h * x;
                    acc += Complex64::from_polar(1.0, -2.0 * PI * t * lambda[0]) * (w * 0.5 * h * density(&[t]));
                }
            }
        }
        acc
    }

    #[test]
    fn gaussian_characteristic_matches_quadrature() {
        let dist = Distribution::gaussian(1, 0.3);
        for l in [0.0, 0.4, 1.0, 1.7] {
            let oracle = quadrature_oracle(|x| (-x[0] * x[0] / (2.0 * 0.09)).exp() / (0.3 * (2.0 * PI).sqrt()), 4.0, &[l]);
            let phi = dist.characteristic(&[l]);
            assert!(!phi.numeric);
            assert!((phi.value - oracle).norm() < 1e-10, "{l}: {} vs {oracle}", phi.value);
        }
    }

    #[test]
    fn uniform_characteristic_matches_quadrature_and_vanishes() {
        let a = 0.4;
        let dist = Distribution::UniformBox { dim: 1, half_width: a };
        for l in [0.3, 0.9, 2.2] {
            let oracle = quadrature_oracle(|_| 1.0 / (2.0 * a), a, &[l]);
            assert!((dist.characteristic(&[l]).value - oracle).norm() < 1e-10);
        }
        assert!(dist.characteristic(&[1.0 / (2.0 * a)]).value.norm() < 1e-15);
    }

    #[test]
    fn dirac_is_one() {
        let dist = Distribution::Dirac0 { dim: 3 };
        assert_eq!(dist.characteristic(&[0.3, -2.0, 5.0]).value, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn mixture_characteristic_is_hermitian() {
        let dist = Distribution::GaussianMixture {
            dim: 2,
            weights: vec![0.3, 0.7],
            sigmas: vec![0.1, 0.2],
            means: vec![vec![0.05, 0.0], vec![-0.02, 0.1]],
        };
        dist.validate().unwrap();
        let l = [0.7, -1.3];
        let a = dist.characteristic(&l).value;
        let b = dist.characteristic(&[-0.7, 1.3]).value;
        assert!((a - b.conj()).norm() < 1e-15);
        assert!(a.norm() <= 1.0);
    }

    #[test]
    fn heavy_tail_characteristic_matches_monte_carlo() {
        // Direct radial integration in closed form at lambda = 0 and a
        // large-sample Monte Carlo comparison elsewhere.
        let dist = Distribution::HeavyTail { dim: 2, exponent: 3.0, scale: 0.2 };
        assert_eq!(dist.characteristic(&[0.0, 0.0]).value.re, 1.0);
        let l = [0.8, 0.0];
        let phi = dist.characteristic(&l);
        assert!(phi.numeric && phi.error_bound <= 1e-8, "{}", phi.error_bound);
        let mut r = rng::global_rng(1, 99);
        let n = 400_000;
        let mc: f64 = (0..n).map(|_| (2.0 * PI * geometry::dot(&dist.sample(&mut r), &l)).cos()).sum::<f64>() / n as f64;
        assert!((phi.value.re - mc).abs() < 4.0 / (n as f64).sqrt(), "{} vs {mc}", phi.value.re);
    }

    #[test]
    fn heavy_tail_one_dimensional_against_closed_integral() {
        // d = 1, alpha = 2: phi(lambda) = int_0^inf 2 (1+r)^{-3} cos(k r) dr,
        // evaluated independently by substitution on [0, 1] in u = 1/(1+r).
        let dist = Distribution::HeavyTail { dim: 1, exponent: 2.0, scale: 1.0 };
        let k = 2.0 * PI * 0.15;
        let rule = gauss_legendre(20);
        let panels = 20_000;
        let mut oracle = 0.0;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (x, w) in &rule {
                let u = 0.5 * (a + b) + 0.5 * (b - a) * x;
                let r = 1.0 / u - 1.0;
                oracle += w * 0.5 * (b - a) * 2.0 * u * (k * r).cos();
            }
        }
        let phi = dist.characteristic(&[0.15]);
        assert!((phi.value.re - oracle).abs() < 1e-7, "{} vs {oracle}", phi.value.re);
    }

    #[test]
    fn displacement_is_function_of_point() {
        let model = PerturbationModel::iid(Distribution::gaussian(2, 0.1), 7);
        let small = displace(&generate_lattice(&Lattice::integer(2), 10.0).unwrap(), &model).unwrap();
        let large = displace(&generate_lattice(&Lattice::integer(2), 30.0).unwrap(), &model).unwrap();
        for i in 0..small.len() {
            let p = small.base().point(i);
            let j = (0..large.len()).find(|&j| large.base().point(j) == p).unwrap();
            assert_eq!(small.displacement(i), large.displacement(j));
        }
    }

    #[test]
    fn dirac_displacement_is_zero() {
        let ps = generate_lattice(&Lattice::integer(2), 5.0).unwrap();
        let pps = displace(&ps, &PerturbationModel::iid(Distribution::Dirac0 { dim: 2 }, 1)).unwrap();
        assert!(pps.displacements().iter().all(|&x| x == 0.0));
        assert_eq!(pps.positions(), ps.coords());
    }

    #[test]
    fn gaussian_mean_norm_on_lattice() {
        let ps = generate_lattice(&Lattice::integer(2), 100.0).unwrap();
        let pps = displace(&ps, &PerturbationModel::iid(Distribution::gaussian(2, 0.1), 3)).unwrap();
        let norms: Vec<f64> = (0..pps.len()).map(|i| norm(pps.displacement(i))).collect();
        let est = stats::mean_estimate(&norms);
        // Rayleigh mean sigma sqrt(pi/2), cross-checked against direct draws.
        let target = 0.1 * (PI / 2.0).sqrt();
        let mut r = rng::global_rng(5, 0);
        let direct: Vec<f64> = (0..1_000_000).map(|_| norm(&Distribution::gaussian(2, 0.1).sample(&mut r))).collect();
        assert!((stats::mean_estimate(&direct).mean - target).abs() < 3.0 * stats::mean_estimate(&direct).std_error);
        assert!((est.mean - target).abs() < 3.0 * est.std_error, "{} vs {target}", est.mean);
    }

    #[test]
    fn moments() {
        let m = verify_moment(&Distribution::Dirac0 { dim: 2 }, 1.0, 10_000, 1).unwrap();
        assert_eq!(m.estimate, 0.0);
        let m = verify_moment(&Distribution::gaussian(1, 1.0), 1.0, 200_000, 1).unwrap();
        assert!((m.analytic.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.estimate - 1.0).abs() < 3.0 * m.std_error);
        let m = verify_moment(&Distribution::HeavyTail { dim: 2, exponent: 2.5, scale: 1.0 }, 1.0, 100_000, 1).unwrap();
        assert!(m.diverging);
        let m = verify_moment(&Distribution::HeavyTail { dim: 1, exponent: 4.0, scale: 1.0 }, 0.5, 400_000, 1).unwrap();
        assert!(!m.diverging);
        assert!((m.estimate - m.analytic.unwrap()).abs() < 4.0 * m.std_error);
    }

    #[test]
    fn heavy_tail_exponent_must_exceed_dimension() {
        assert!(Distribution::HeavyTail { dim: 2, exponent: 2.0, scale: 1.0 }.validate().is_err());
    }

    #[test]
    fn shell_model_validation() {
        let g = Distribution::gaussian(2, 0.1);
        assert!(PerturbationModel::shell_mixing(g.clone(), vec![1.0, 4.0, 30.0, 400.0], 0.5, 1).validate().is_ok());
        assert!(PerturbationModel::shell_mixing(g.clone(), vec![1.0, 4.0, 8.0], 0.5, 1).validate().is_err());
        assert!(PerturbationModel::shell_mixing(g, vec![1.0, 4.0], 1.0, 1).validate().is_err());
        let u = Distribution::UniformBox { dim: 2, half_width: 0.1 };
        assert!(matches!(PerturbationModel::shell_mixing(u, vec![1.0, 4.0], 0.5, 1).validate(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn shell_anchor_is_nearest_previous_shell_point() {
        let ps = generate_lattice(&Lattice::integer(2), 40.0).unwrap();
        let radii = [2.0, 7.0, 40.0];
        let plan = ShellPlan::new(&ps, &radii).unwrap();
        for i in 0..ps.len() {
            if plan.shell(i) != 1 {
                assert!(plan.anchor(i).is_none());
                continue;
            }
            let p = ps.point(i);
            let brute = (0..ps.len())
                .filter(|&j| plan.shell(j) == 0)
                .min_by(|&a, &b| geometry::dist2(p, ps.point(a)).total_cmp(&geometry::dist2(p, ps.point(b))))
                .unwrap();
            assert_eq!(plan.anchor(i), Some(brute));
        }
    }

    #[test]
    fn shell_displacements_are_extension_stable() {
        let small = generate_lattice(&Lattice::integer(2), 12.0).unwrap();
        let big = generate_lattice(&Lattice::integer(2), 20.0).unwrap();
        let m = PerturbationModel::shell_mixing(Distribution::gaussian(2, 0.1), vec![2.0, 7.0, 40.0], 0.6, 9);
        let a = displace(&small, &m).unwrap();
        let b = displace(&big, &m).unwrap();
        for i in 0..small.len() {
            let j = (0..big.len()).find(|&j| big.point(j) == small.point(i)).unwrap();
            assert_eq!(a.displacement(i), b.displacement(j));
        }
    }

    #[test]
    fn shell_coupling_is_helmert() {
        let ps = generate_lattice(&Lattice::integer(2), 9.0).unwrap();
        let radii = [2.0, 40.0];
        let plan = ShellPlan::new(&ps, &radii).unwrap();
        let c = 0.8;
        let m = PerturbationModel::shell_mixing(Distribution::gaussian(2, 1.0), radii.to_vec(), c, 0);
        let sampler = FieldSampler::new(&ps, &m).unwrap();
        // Two dependents of one anchor and the anchor itself.
        let (a, deps) = plan.groups.iter().find(|g| g.1.len() >= 2).unwrap();
        let (a, p1, p2) = (*a as usize, deps[0] as usize, deps[1] as usize);
        let trials = 20_000;
        let (mut s_a1, mut s_a2, mut s_12, mut s_22) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..trials {
            let x = sampler.sample(seed).unwrap();
            s_a1 += x[a * 2] * x[p1 * 2];
            s_a2 += x[a * 2] * x[p2 * 2];
            s_12 += x[p1 * 2] * x[p2 * 2];
            s_22 += x[p2 * 2] * x[p2 * 2];
        }
        let t = trials as f64;
        let tol = 4.0 / t.sqrt();
        assert!((s_a1 / t - plan.anchor_correlation(p1, c)).abs() < tol);
        assert!((s_a2 / t - plan.anchor_correlation(p2, c)).abs() < tol);
        assert!((s_12 / t).abs() < tol, "{}", s_12 / t);
        assert!((s_22 / t - 1.0).abs() < 3.0 * tol);
        assert_eq!(plan.rank(p1), 1);
        assert!((plan.anchor_correlation(p2, c) - c / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ar_correlation_is_geometric() {
        assert!((ar_correlation(0.5, 30, 0) - 1.0).abs() < 1e-15);
        assert!((ar_correlation(0.5, 30, 1) - 0.5).abs() < 1e-15);
        assert!((ar_correlation(0.5, 30, 3) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn model_config_round_trip() {
        let json = r#"{"variant":"shell_mixing","dist":{"family":"gaussian_iso","dim":2,"sigma":0.1},"seed":4,"shells":[1,4,30,400],"coupling":0.5}"#;
        let m: PerturbationModel = serde_json::from_str(json).unwrap();
        assert!(matches!(m.correlation, Correlation::ShellMixing { .. }));
        let back: PerturbationModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = r#"{"variant":"shell_mixing","dist":{"family":"gaussian_iso","dim":2,"sigma":0.1}}"#;
        let err = serde_json::from_str::<PerturbationModel>(bad).unwrap_err().to_string();
        assert!(err.contains("model.shells"), "{err}");
    }

    #[test]
    fn stationary_field_degenerates_to_iid() {
        let scheme = CutProjectScheme::fibonacci();
        let base = Distribution::gaussian(1, 0.1);
        let pps = stationary_cp_field(&scheme, &base, 0.0, 9, 200.0, Some(&[0.0, 0.0])).unwrap();
        let ps = pointset::generate_cut_and_project(&scheme, 200.0).unwrap();
        let iid = displace(&ps, &PerturbationModel::iid(base, 9)).unwrap();
        assert_eq!(pps.base().coords(), ps.coords());
        assert_eq!(pps.displacements(), iid.displacements());
    }
}
