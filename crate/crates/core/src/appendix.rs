//! Strong laws for correlated scalar sequences, the localized Hellinger
//! density of gridded measures and its bound on the cross term of two
//! atomic measures.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, unit_phase, ComplexKahan, Grid, Kahan, MAX_GRID_DIM};
use crate::perturb::PerturbedPointSet;
use crate::rng::{global_rng, stream};
use crate::special::{ball_volume, normal_cdf};
use crate::spectral::{exponential_sum, mu_lambda_weights};

// ---------------------------------------------------------------------------
// Correlated sequences

/// Scalar marginal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ScalarLaw {
    Constant {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Density `alpha x_min^alpha / x^(alpha + 1)` on `[x_min, inf)`.
    Pareto {
        alpha: f64,
        x_min: f64,
    },
}

impl ScalarLaw {
    /// Pareto law rescaled to mean one.
    pub fn pareto_unit_mean(alpha: f64) -> Self {
        ScalarLaw::Pareto { alpha, x_min: (alpha - 1.0) / alpha }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarLaw::Constant { value } => value.is_finite(),
            ScalarLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            ScalarLaw::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            ScalarLaw::Exponential { rate } => rate.is_finite() && rate > 0.0,
            ScalarLaw::Pareto { alpha, x_min } => alpha > 1.0 && x_min > 0.0 && x_min.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid marginal {self:?} (finite mean required)")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarLaw::Constant { value } => value,
            ScalarLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarLaw::Gaussian { mean, .. } => mean,
            ScalarLaw::Exponential { rate } => 1.0 / rate,
            ScalarLaw::Pareto { alpha, x_min } => alpha * x_min / (alpha - 1.0),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, ScalarLaw::Constant { .. } | ScalarLaw::Uniform { .. })
    }

    /// Support inside `[0, inf)` with positive mean.
    pub fn is_positive(&self) -> bool {
        match *self {
            ScalarLaw::Constant { value } => value > 0.0,
            ScalarLaw::Uniform { lo, .. } => lo >= 0.0,
            ScalarLaw::Gaussian { sd, mean } => sd == 0.0 && mean > 0.0,
            ScalarLaw::Exponential { .. } | ScalarLaw::Pareto { .. } => true,
        }
    }

    /// Value at standard normal score `z`, via the quantile of `Phi(z)`.
    fn from_normal_score(&self, z: f64) -> f64 {
        match *self {
            ScalarLaw::Constant { value } => value,
            ScalarLaw::Gaussian { mean, sd } => mean + sd * z,
            ScalarLaw::Uniform { lo, hi } => lo + (hi - lo) * normal_cdf(z),
            // Upper tail `1 - Phi(z) = Phi(-z)` keeps precision for large z.
            ScalarLaw::Exponential { rate } => -normal_cdf(-z).ln() / rate,
            ScalarLaw::Pareto { alpha, x_min } => x_min * normal_cdf(-z).powf(-1.0 / alpha),
        }
    }
}

/// Dependence structure of the sequence. Non-IID kinds are Gaussian
/// processes with unit variance mapped through the marginal quantile, so
/// `|Corr(X_i, X_j)|` is at most the Gaussian correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceKind {
    IidBounded,
    /// Independent draws from any marginal with finite mean.
    Iid,
    /// AR(1) with correlation `beta^|i - j|`.
    GeometricCovariance {
        beta: f64,
    },
    /// Moving average `sum_j a_j eps_{k - j}`, normalized to unit variance.
    Custom {
        coefficients: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedSequenceSpec {
    pub kind: SequenceKind,
    pub marginal: ScalarLaw,
    #[serde(default = "default_cap")]
    pub length_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_SEQUENCE_CAP
}

pub const DEFAULT_SEQUENCE_CAP: usize = 100_000_000;

impl CorrelatedSequenceSpec {
    pub fn new(kind: SequenceKind, marginal: ScalarLaw) -> Self {
        CorrelatedSequenceSpec { kind, marginal, length_cap: DEFAULT_SEQUENCE_CAP }
    }

    pub fn validate(&self) -> Result<()> {
        self.marginal.validate()?;
        match &self.kind {
            SequenceKind::IidBounded if !self.marginal.is_bounded() => {
                Err(Error::config("kind iid_bounded needs a bounded marginal"))
            }
            SequenceKind::GeometricCovariance { beta } if !(*beta > 0.0 && *beta < 1.0) => {
                Err(Error::config(format!("beta must lie in (0, 1), got {beta}")))
            }
            SequenceKind::Custom { coefficients }
                if coefficients.is_empty()
                    || coefficients.iter().any(|a| !a.is_finite())
                    || coefficients.iter().all(|&a| a == 0.0) =>
            {
                Err(Error::config("custom coefficients must be finite and not all zero"))
            }
            _ => Ok(()),
        }
    }

    /// First `n` terms for a seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        if n > self.length_cap {
            return Err(Error::CapExceeded { requested: n as u64, cap: self.length_cap as u64 });
        }
        let mut rng = global_rng(seed, stream::GLOBAL);
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };
        let out = match &self.kind {
            SequenceKind::IidBounded | SequenceKind::Iid => (0..n).map(|_| self.marginal.from_normal_score(normal())).collect(),
            SequenceKind::GeometricCovariance { beta } => {
                let innovation = (1.0 - beta * beta).sqrt();
                let mut z = normal();
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    out.push(self.marginal.from_normal_score(z));
                    z = beta * z + innovation * normal();
                }
                out
            }
            SequenceKind::Custom { coefficients } => {
                let scale = coefficients.iter().map(|a| a * a).sum::<f64>().sqrt();
                let a: Vec<f64> = coefficients.iter().map(|c| c / scale).collect();
                let q = a.len();
                let mut window: std::collections::VecDeque<f64> = (0..q).map(|_| normal()).collect();
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let z: f64 = a.iter().zip(window.iter().rev()).map(|(c, e)| c * e).sum();
                    out.push(self.marginal.from_normal_score(z));
                    window.pop_front();
                    window.push_back(normal());
                }
                out
            }
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n: usize,
    pub value: f64,
}

/// Checkpoints `10^3, 10^4, ...` up to `n_max`, plus `n_max` itself.
pub fn decade_checkpoints(n_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = 1000usize;
    while n <= n_max {
        out.push(n);
        n = n.saturating_mul(10);
    }
    if out.last() != Some(&n_max) {
        out.push(n_max);
    }
    out
}

fn running_trace(n_max: usize, terms: impl Iterator<Item = f64>) -> Vec<TracePoint> {
    let checkpoints = decade_checkpoints(n_max);
    let mut acc = Kahan::default();
    let mut next = 0;
    let mut out = Vec::with_capacity(checkpoints.len());
    for (k, x) in terms.enumerate() {
        acc.add(x);
        if k + 1 == checkpoints[next] {
            out.push(TracePoint { n: k + 1, value: acc.value() / (k + 1) as f64 });
            next += 1;
            if next == checkpoints.len() {
                break;
            }
        }
    }
    out
}

/// `(1/n) sum_{k <= n} (X_k - E X_k)` at the decade checkpoints.
pub fn slln_trace(spec: &CorrelatedSequenceSpec, n_max: usize, seed: u64) -> Result<Vec<TracePoint>> {
    if n_max == 0 {
        return Err(Error::invalid("n_max must be positive"));
    }
    let xs = spec.sample(n_max, seed)?;
    let mean = spec.marginal.mean();
    Ok(running_trace(n_max, xs.into_iter().map(|x| x - mean)))
}

/// `S_n / n` with `S_n = sum_{i <= n} X_i 1{X_i <= i}`.
pub fn truncated_slln_trace(spec: &CorrelatedSequenceSpec, n_max: usize, seed: u64) -> Result<Vec<TracePoint>> {
    if !spec.marginal.is_positive() {
        return Err(Error::config("truncated strong law needs a positive marginal"));
    }
    if n_max == 0 {
        return Err(Error::invalid("n_max must be positive"));
    }
    let xs = spec.sample(n_max, seed)?;
    Ok(running_trace(n_max, xs.into_iter().enumerate().map(|(k, x)| if x <= (k + 1) as f64 { x } else { 0.0 })))
}

// ---------------------------------------------------------------------------
// Gridded measures

/// Density per cell on the uniform grid `origin + step * (m + 1/2)`,
/// `0 <= m < counts`; cell mass is density times cell volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedMeasure {
    pub origin: Vec<f64>,
    pub step: Vec<f64>,
    pub counts: Vec<usize>,
    pub densities: Vec<f64>,
}

impl GriddedMeasure {
    pub fn new(origin: Vec<f64>, step: Vec<f64>, counts: Vec<usize>, densities: Vec<f64>) -> Result<Self> {
        let g = GriddedMeasure { origin, step, counts, densities };
        g.validate()?;
        Ok(g)
    }

    /// Grid with every density computed from the cell centre.
    pub fn from_fn(origin: Vec<f64>, step: Vec<f64>, counts: Vec<usize>, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let mut g = GriddedMeasure { origin, step, counts, densities: Vec::new() };
        let total: usize = g.counts.iter().product();
        g.densities = (0..total).into_par_iter().map(|i| f(&g.center(i))).collect();
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.origin.len();
        if d == 0 || self.step.len() != d || self.counts.len() != d {
            return Err(Error::invalid("grid origin, step and counts must share a positive dimension"));
        }
        if self.step.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("grid steps must be positive"));
        }
        if self.densities.len() != self.counts.iter().product::<usize>() {
            return Err(Error::invalid("one density per cell is required"));
        }
        if self.densities.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("densities must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.step.iter().product()
    }

    /// Multi-index of cell `i`, last axis fastest.
    pub fn cell_index(&self, mut i: usize) -> Vec<usize> {
        let mut m = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            m[k] = i % self.counts[k];
            i /= self.counts[k];
        }
        m
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        self.cell_index(i).iter().enumerate().map(|(k, &m)| self.origin[k] + self.step[k] * (m as f64 + 0.5)).collect()
    }

    pub fn same_grid(&self, other: &GriddedMeasure) -> bool {
        self.origin == other.origin && self.step == other.step && self.counts == other.counts
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = Kahan::default();
        for x in &self.densities {
            acc.add(*x);
        }
        acc.value() * self.cell_volume()
    }

    /// `int f d gamma` with `f` given per cell.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: f.len() });
        }
        let mut acc = Kahan::default();
        for (g, w) in self.densities.iter().zip(f) {
            acc.add(g * w);
        }
        Ok(acc.value() * self.cell_volume())
    }
}

/// `sqrt(a b)`, exactly `a` when `a == b`, symmetric, free of overflow.
fn geometric_mean(a: f64, b: f64) -> f64 {
    if a == b {
        return a;
    }
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if p.is_finite() && p >= f64::MIN_POSITIVE {
        p.sqrt()
    } else {
        a.sqrt() * b.sqrt()
    }
}

/// Cell density of `rho(g1, g2)`: with `sigma = g1 + g2`,
/// `(g1 / sigma)^(1/2) (g2 / sigma)^(1/2) sigma = sqrt(g1 g2)`.
pub fn hellinger_density(g1: &GriddedMeasure, g2: &GriddedMeasure) -> Result<GriddedMeasure> {
    if !g1.same_grid(g2) || g1.len() != g2.len() {
        return Err(Error::invalid("Hellinger density needs both measures on the same grid"));
    }
    Ok(GriddedMeasure {
        origin: g1.origin.clone(),
        step: g1.step.clone(),
        counts: g1.counts.clone(),
        densities: g1.densities.iter().zip(&g2.densities).map(|(&a, &b)| geometric_mean(a, b)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsBound {
    /// `<rho(g1, g2), f>`.
    pub lhs: f64,
    /// `sqrt(<g1, f>) sqrt(<g2, f>)`.
    pub rhs: f64,
    pub holds: bool,
}

/// Both sides of `<rho(g1, g2), f> <= sqrt(<g1, f>) sqrt(<g2, f>)`.
pub fn hellinger_cs_bound(g1: &GriddedMeasure, g2: &GriddedMeasure, f: &[f64]) -> Result<CsBound> {
    if f.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("test function must be nonnegative"));
    }
    let rho = hellinger_density(g1, g2)?;
    let lhs = rho.integrate(f)?;
    let rhs = g1.integrate(f)?.sqrt() * g2.integrate(f)?.sqrt();
    Ok(CsBound { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) })
}

// ---------------------------------------------------------------------------
// Diffraction cross term

/// `f(x) = amplitude exp(-|x - center|^2 / (2 width^2))` on frequency space,
/// with transform `f_hat(k) = int f(x) exp(-2 pi i <x, k>) dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

/// Relative level below which `|f_hat|` is truncated.
const BUMP_TRUNCATION: f64 = 1e-12;

impl GaussianBump {
    pub fn validate(&self) -> Result<()> {
        if self.center.is_empty() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("bump center must be a finite vector"));
        }
        if !(self.width > 0.0 && self.amplitude > 0.0) {
            return Err(Error::invalid("bump width and amplitude must be positive"));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    pub fn transform(&self, k: &[f64]) -> Complex64 {
        let d = self.center.len() as f64;
        let w2 = self.width * self.width;
        let mag = self.amplitude * (2.0 * PI * w2).powf(0.5 * d) * (-2.0 * PI * PI * w2 * dot(k, k)).exp();
        unit_phase(dot(k, &self.center)) * mag
    }

    /// `|k|` beyond which `|f_hat(k)| < 1e-12 |f_hat(0)|`.
    pub fn lag_radius(&self) -> f64 {
        (-BUMP_TRUNCATION.ln() / (2.0 * PI * PI)).sqrt() / self.width
    }

    /// `int f dx`.
    pub fn mass(&self) -> f64 {
        self.amplitude * (2.0 * PI * self.width * self.width).powf(0.5 * self.center.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellingerBoundRow {
    pub radius: f64,
    /// `|Vol(B_R)^{-1} sum_{p, q} mu(p) conj(nu(q)) f_hat(p - q)|`.
    pub lhs: f64,
    /// `<rho(P_mu, P_nu), f>` with periodograms gridded at spacing `1 / (2R)`.
    pub rhs: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellingerBoundTrace {
    pub rows: Vec<HellingerBoundRow>,
    pub lag_radius: f64,
    /// Maximum of `lhs` over the upper half of the radius schedule.
    pub tail_max_lhs: f64,
    /// `rhs` at the largest radius, the surrogate for the limiting bound.
    pub rhs_limit: f64,
}

/// Cells per unit of `R` along each axis of the periodogram grid.
const GRID_OVERSAMPLING: f64 = 2.0;
/// The grid covers `center +- BUMP_SPAN width`.
const BUMP_SPAN: f64 = 5.0;

/// Cross term of `mu = mu_xi^lambda` and `nu = mu_X^lambda` against `f_hat`,
/// and its Hellinger bound from gridded periodograms, per radius.
pub fn hellinger_diffraction_bound(
    pps: &PerturbedPointSet,
    lambda: &[f64],
    bump: &GaussianBump,
    radii: &[f64],
) -> Result<HellingerBoundTrace> {
    bump.validate()?;
    let d = pps.dim();
    if bump.center.len() != d || lambda.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: bump.center.len() });
    }
    if d > MAX_GRID_DIM {
        return Err(Error::Unsupported(format!("pair sums support dimension at most {MAX_GRID_DIM}")));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("radius schedule must be nonempty and increasing"));
    }
    if *radii.last().unwrap() > pps.base().generation_radius * (1.0 + 1e-12) {
        return Err(Error::invalid("radius schedule exceeds the generation radius"));
    }
    let (nu, mu) = mu_lambda_weights(pps, lambda)?;
    let lag_radius = bump.lag_radius();
    let rows = radii
        .iter()
        .map(|&radius| -> Result<HellingerBoundRow> {
            let mu_r = mu.restrict(radius);
            let nu_r = nu.restrict(radius);
            let vol = ball_volume(d, radius);
            let lhs = cross_pair_sum(d, mu_r.positions(), mu_r.weights(), nu_r.weights(), bump, lag_radius).norm() / vol;

            let step = 1.0 / (GRID_OVERSAMPLING * radius);
            let per_axis = (2.0 * BUMP_SPAN * bump.width / step).ceil() as usize;
            let origin: Vec<f64> = bump.center.iter().map(|c| c - 0.5 * per_axis as f64 * step).collect();
            let counts = vec![per_axis; d];
            let positions = mu_r.positions();
            let p_mu = GriddedMeasure::from_fn(origin.clone(), vec![step; d], counts.clone(), |x| {
                weighted_sum(d, positions, mu_r.weights(), x).norm_sqr() / vol
            })?;
            let p_nu = GriddedMeasure::from_fn(origin, vec![step; d], counts, |x| {
                weighted_sum(d, positions, nu_r.weights(), x).norm_sqr() / vol
            })?;
            let f: Vec<f64> = (0..p_mu.len()).map(|i| bump.value(&p_mu.center(i))).collect();
            let rhs = hellinger_density(&p_mu, &p_nu)?.integrate(&f)?;
            Ok(HellingerBoundRow { radius, lhs, rhs, cells: p_mu.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = &rows[rows.len() / 2..];
    Ok(HellingerBoundTrace {
        tail_max_lhs: tail.iter().map(|r| r.lhs).fold(0.0, f64::max),
        rhs_limit: rows.last().unwrap().rhs,
        rows,
        lag_radius,
    })
}

/// `sum_p w_p exp(-2 pi i <p, x>)`.
fn weighted_sum(d: usize, positions: &[f64], weights: &[Complex64], x: &[f64]) -> Complex64 {
    if weights.iter().all(|w| *w == Complex64::new(0.0, 0.0)) {
        return Complex64::new(0.0, 0.0);
    }
    let mut acc = ComplexKahan::default();
    for (p, w) in positions.chunks_exact(d).zip(weights) {
        acc.add(*w * unit_phase(dot(p, x)));
    }
    acc.value()
}

/// `sum_{p, q} a_p conj(b_q) f_hat(p - q)` over pairs within the lag radius.
fn cross_pair_sum(
    d: usize,
    positions: &[f64],
    a: &[Complex64],
    b: &[Complex64],
    bump: &GaussianBump,
    lag_radius: f64,
) -> Complex64 {
    let grid = Grid::new(d, positions, lag_radius);
    let r2 = lag_radius * lag_radius;
    let partial: Vec<Complex64> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            if a[i] == Complex64::new(0.0, 0.0) {
                return Complex64::new(0.0, 0.0);
            }
            let p = grid.point(i);
            let mut inner = ComplexKahan::default();
            grid.for_each_within(p, lag_radius, |j, d2| {
                if d2 <= r2 {
                    let k: Vec<f64> = p.iter().zip(grid.point(j)).map(|(x, y)| x - y).collect();
                    inner.add(b[j].conj() * bump.transform(&k));
                }
            });
            a[i] * inner.value()
        })
        .collect();
    let mut acc = ComplexKahan::default();
    for z in partial {
        acc.add(z);
    }
    acc.value()
}

/// `exp(-2 pi i <p, x>)` summed with unit weights; shared with the spectral
/// module for callers that want the unweighted transform on a grid.
pub fn gridded_periodogram(
    dim: usize,
    positions: &[f64],
    radius: f64,
    origin: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
) -> Result<GriddedMeasure> {
    let vol = ball_volume(dim, radius);
    let inside: Vec<f64> = positions.chunks_exact(dim).filter(|p| norm(p) <= radius).flatten().copied().collect();
    GriddedMeasure::from_fn(origin, step, counts, |x| exponential_sum(dim, &inside, x).norm_sqr() / vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{displace, Distribution, PerturbationModel};
    use crate::pointset::{generate_lattice, Lattice};

    fn grid(densities: Vec<f64>) -> GriddedMeasure {
        let n = densities.len();
        GriddedMeasure::new(vec![0.0], vec![0.5], vec![n], densities).unwrap()
    }

    #[test]
    fn constant_sequence_traces() {
        let spec = CorrelatedSequenceSpec::new(SequenceKind::IidBounded, ScalarLaw::Constant { value: 0.7 });
        assert!(slln_trace(&spec, 10_000, 1).unwrap().iter().all(|t| t.value == 0.0));
        let t = truncated_slln_trace(&spec, 10_000, 1).unwrap();
        assert!(t.iter().all(|t| (t.value - 0.7).abs() < 1e-15));
    }

    #[test]
    fn truncation_drops_early_large_terms() {
        // Y_i = 3 only from i = 3 on: S_n / n = 3 (n - 2) / n.
        let spec = CorrelatedSequenceSpec::new(SequenceKind::IidBounded, ScalarLaw::Constant { value: 3.0 });
        let t = truncated_slln_trace(&spec, 1000, 1).unwrap();
        assert!((t[0].value - 3.0 * 998.0 / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoints() {
        assert_eq!(decade_checkpoints(1_000_000), vec![1000, 10_000, 100_000, 1_000_000]);
        assert_eq!(decade_checkpoints(25_000), vec![1000, 10_000, 25_000]);
        assert_eq!(decade_checkpoints(500), vec![500]);
    }

    #[test]
    fn sequence_validation() {
        let bad = CorrelatedSequenceSpec::new(
            SequenceKind::GeometricCovariance { beta: 1.0 },
            ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 },
        );
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let unbounded = CorrelatedSequenceSpec::new(SequenceKind::IidBounded, ScalarLaw::Exponential { rate: 1.0 });
        assert!(unbounded.validate().is_err());
        let gauss = CorrelatedSequenceSpec::new(
            SequenceKind::GeometricCovariance { beta: 0.5 },
            ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 },
        );
        assert!(matches!(truncated_slln_trace(&gauss, 1000, 0), Err(Error::Config(_))));
        let mut capped = gauss.clone();
        capped.length_cap = 10;
        assert!(matches!(capped.sample(11, 0), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let spec = CorrelatedSequenceSpec::new(
            SequenceKind::GeometricCovariance { beta: 0.5 },
            ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 },
        );
        let xs = spec.sample(200_000, 9).unwrap();
        let r = crate::stats::correlation(&xs[..xs.len() - 1], &xs[1..]);
        assert!((r - 0.5).abs() < 0.01, "{r}");
    }

    #[test]
    fn custom_moving_average_correlation() {
        // a = (1, 1): unit-variance MA(1) with lag-one correlation 1/2.
        let spec = CorrelatedSequenceSpec::new(
            SequenceKind::Custom { coefficients: vec![1.0, 1.0] },
            ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 },
        );
        let xs = spec.sample(200_000, 2).unwrap();
        let r1 = crate::stats::correlation(&xs[..xs.len() - 1], &xs[1..]);
        let r2 = crate::stats::correlation(&xs[..xs.len() - 2], &xs[2..]);
        assert!((r1 - 0.5).abs() < 0.01 && r2.abs() < 0.01, "{r1} {r2}");
    }

    #[test]
    fn pareto_unit_mean() {
        assert!((ScalarLaw::pareto_unit_mean(1.5).mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hellinger_identities() {
        let g = grid(vec![0.0, 1.5, 3.25, 1e-200, 7.0]);
        let h = grid(vec![2.0, 0.0, 1.0, 4.0, 7.0]);
        assert_eq!(hellinger_density(&g, &g).unwrap().densities, g.densities);
        assert_eq!(hellinger_density(&g, &h).unwrap(), hellinger_density(&h, &g).unwrap());
        let rho = hellinger_density(&g, &h).unwrap();
        assert_eq!(rho.densities[0], 0.0);
        assert_eq!(rho.densities[1], 0.0);
        for ((r, a), b) in rho.densities.iter().zip(&g.densities).zip(&h.densities) {
            assert!(*r <= a.max(*b));
        }
    }

    #[test]
    fn hellinger_ratio_two() {
        let rho = hellinger_density(&grid(vec![2.0]), &grid(vec![1.0])).unwrap();
        assert!((rho.densities[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hellinger_grid_mismatch() {
        let a = grid(vec![1.0, 2.0]);
        let b = GriddedMeasure::new(vec![0.0], vec![0.25], vec![2], vec![1.0, 2.0]).unwrap();
        assert!(hellinger_density(&a, &b).is_err());
    }

    #[test]
    fn cs_equality_and_disjoint_cases() {
        let g = grid(vec![1.0, 2.0, 0.5]);
        let f = [1.0, 0.5, 2.0];
        let b = hellinger_cs_bound(&g, &g, &f).unwrap();
        assert!((b.lhs - b.rhs).abs() <= 1e-12 * b.rhs && b.holds);
        let b = hellinger_cs_bound(&grid(vec![1.0, 0.0, 0.0]), &grid(vec![0.0, 2.0, 3.0]), &f).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!(b.holds);
    }

    #[test]
    fn bump_transform_at_zero_is_mass() {
        let b = GaussianBump { center: vec![0.3, -0.2], width: 0.1, amplitude: 2.0 };
        assert!((b.transform(&[0.0, 0.0]).re - b.mass()).abs() < 1e-15);
        let k = [b.lag_radius(), 0.0];
        assert!((b.transform(&k).norm() / b.mass() - 1e-12).abs() < 1e-15);
    }

    #[test]
    fn dirac_cross_term_vanishes() {
        let ps = generate_lattice(&Lattice::integer(2), 20.0).unwrap();
        let pps = displace(&ps, &PerturbationModel::iid(Distribution::Dirac0 { dim: 2 }, 0)).unwrap();
        let bump = GaussianBump { center: vec![0.0, 0.0], width: 0.1, amplitude: 1.0 };
        let t = hellinger_diffraction_bound(&pps, &[1.0, 0.0], &bump, &[10.0, 15.0]).unwrap();
        assert!(t.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0));
    }
}
