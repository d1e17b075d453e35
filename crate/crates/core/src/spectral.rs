//! Fourier-side estimators: finite Fourier sums `M_R(lambda)`, periodograms,
//! autocorrelation coefficients of weighted atoms and the diagnostics built
//! on them.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, lex_cmp, norm, unit_phase, ComplexKahan, Grid, MAX_GRID_DIM};
use crate::perturb::{self, Correlation, PerturbedPointSet};
use crate::pointset::{CutProjectScheme, GeneratorSpec, Lattice, PointCap, PointSet};
use crate::special::ball_volume;

/// Where a frequency set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyProvenance {
    DualLattice { max_norm: f64 },
    DualModule { max_norm: f64, intensity_floor: f64 },
    UniformGrid { lo: Vec<f64>, hi: Vec<f64>, step: f64 },
    Explicit,
}

/// Finite set of frequencies, deduplicated to `1e-12`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    dim: usize,
    frequencies: Vec<Vec<f64>>,
    /// Analytic Bragg amplitudes aligned with the frequencies, when known.
    reference: Option<Vec<Complex64>>,
    pub provenance: FrequencyProvenance,
}

const DEDUP_TOLERANCE: f64 = 1e-12;

impl FrequencySet {
    fn build(dim: usize, items: Vec<(Vec<f64>, Option<Complex64>)>, provenance: FrequencyProvenance) -> Result<Self> {
        if items.iter().any(|(f, _)| f.len() != dim) {
            return Err(Error::invalid(format!("frequencies must have dimension {dim}")));
        }
        if items.iter().any(|(f, _)| f.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("frequencies must be finite"));
        }
        // Keep the first of any cluster closer than the tolerance.
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(&items[a].0, &items[b].0).then(a.cmp(&b)));
        let mut drop = vec![false; items.len()];
        for w in 0..order.len() {
            if drop[order[w]] {
                continue;
            }
            for &o in &order[w + 1..] {
                if (items[o].0[0] - items[order[w]].0[0]).abs() > DEDUP_TOLERANCE {
                    break;
                }
                if geometry::dist2(&items[o].0, &items[order[w]].0).sqrt() <= DEDUP_TOLERANCE {
                    drop[o.max(order[w])] = true;
                }
            }
        }
        let has_reference = items.iter().all(|(_, r)| r.is_some()) && !items.is_empty();
        let mut frequencies = Vec::new();
        let mut reference = Vec::new();
        for (i, (f, r)) in items.into_iter().enumerate() {
            if !drop[i] {
                frequencies.push(f);
                reference.push(r.unwrap_or_default());
            }
        }
        Ok(FrequencySet { dim, frequencies, reference: has_reference.then_some(reference), provenance })
    }

    pub fn explicit(dim: usize, frequencies: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(dim, frequencies.into_iter().map(|f| (f, None)).collect(), FrequencyProvenance::Explicit)
    }

    /// Dual-lattice points with `|lambda| <= max_norm`, lexicographic order;
    /// every reference amplitude is `dens(L)`.
    pub fn dual_lattice(lattice: &Lattice, max_norm: f64) -> Result<Self> {
        let dual = lattice.dual();
        let ps = crate::pointset::generate_lattice_with(&dual, max_norm, PointCap::default())?;
        let amp = Complex64::new(lattice.density(), 0.0);
        Self::build(
            lattice.dim(),
            ps.points().map(|p| (p.to_vec(), Some(amp))).collect(),
            FrequencyProvenance::DualLattice { max_norm },
        )
    }

    /// Bragg frequencies of a cut-and-project set whose analytic amplitude is
    /// at least `intensity_floor`, strongest first.
    pub fn dual_module(scheme: &CutProjectScheme, max_norm: f64, intensity_floor: f64) -> Result<Self> {
        let peaks = scheme.dual_module(max_norm, intensity_floor)?;
        Self::build(
            scheme.phys_dim(),
            peaks.into_iter().map(|p| (p.frequency, Some(p.amplitude))).collect(),
            FrequencyProvenance::DualModule { max_norm, intensity_floor },
        )
    }

    /// All points `lo + step m` inside the box `[lo, hi]`.
    pub fn uniform_grid(lo: &[f64], hi: &[f64], step: f64) -> Result<Self> {
        let d = lo.len();
        if hi.len() != d || d == 0 || !(step > 0.0) {
            return Err(Error::invalid("uniform grid needs matching bounds and a positive step"));
        }
        let counts: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| ((b - a) / step + 1e-9).floor().max(-1.0) as i64 + 1)
            .map(|c| c.max(0) as usize)
            .collect();
        let total: usize = counts.iter().product();
        if total > 10_000_000 {
            return Err(Error::CapExceeded { requested: total as u64, cap: 10_000_000 });
        }
        let mut items = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut f = vec![0.0; d];
            for k in (0..d).rev() {
                f[k] = lo[k] + step * (idx % counts[k]) as f64;
                idx /= counts[k];
            }
            items.push((f, None));
        }
        Self::build(d, items, FrequencyProvenance::UniformGrid { lo: lo.to_vec(), hi: hi.to_vec(), step })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.frequencies[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.frequencies.iter().map(Vec::as_slice)
    }

    pub fn reference(&self) -> Option<&[Complex64]> {
        self.reference.as_deref()
    }

    /// The first `n` frequencies.
    pub fn truncated(&self, n: usize) -> FrequencySet {
        FrequencySet {
            dim: self.dim,
            frequencies: self.frequencies.iter().take(n).cloned().collect(),
            reference: self.reference.as_ref().map(|r| r.iter().take(n).copied().collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// The set without frequencies of norm below `1e-12`.
    pub fn without_zero(&self) -> FrequencySet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| norm(&self.frequencies[i]) > DEDUP_TOLERANCE).collect();
        FrequencySet {
            dim: self.dim,
            frequencies: keep.iter().map(|&i| self.frequencies[i].clone()).collect(),
            reference: self.reference.as_ref().map(|r| keep.iter().map(|&i| r[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralKind {
    FourierSum,
    Periodogram,
    Recovered,
}

impl SpectralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectralKind::FourierSum => "fourier_sum",
            SpectralKind::Periodogram => "periodogram",
            SpectralKind::Recovered => "recovered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub frequency: Vec<f64>,
    pub value: Complex64,
    pub radius: f64,
    pub kind: SpectralKind,
}

/// Anything that can be restricted to `B_R`: a point set, or a perturbed
/// point set (membership tested on the perturbed position).
pub trait SpectralSource: Sync {
    fn dim(&self) -> usize;
    fn generation_radius(&self) -> f64;
    /// Flat coordinates of the positions inside the closed ball, in base order.
    fn positions_in_ball(&self, radius: f64) -> Vec<f64>;
}

impl SpectralSource for PointSet {
    fn dim(&self) -> usize {
        PointSet::dim(self)
    }

    fn generation_radius(&self) -> f64 {
        self.generation_radius
    }

    fn positions_in_ball(&self, radius: f64) -> Vec<f64> {
        self.points().filter(|p| norm(p) <= radius).flatten().copied().collect()
    }
}

impl SpectralSource for PerturbedPointSet {
    fn dim(&self) -> usize {
        PerturbedPointSet::dim(self)
    }

    fn generation_radius(&self) -> f64 {
        self.base().generation_radius
    }

    fn positions_in_ball(&self, radius: f64) -> Vec<f64> {
        let d = self.dim();
        self.positions().chunks_exact(d).filter(|p| norm(p) <= radius).flatten().copied().collect()
    }
}

fn check_source<S: SpectralSource + ?Sized>(src: &S, freqs: &FrequencySet, radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    if radius > src.generation_radius() * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("radius {radius} exceeds the generation radius {}", src.generation_radius())));
    }
    if !freqs.is_empty() && freqs.dim() != src.dim() {
        return Err(Error::DimensionMismatch { expected: src.dim(), got: freqs.dim() });
    }
    Ok(())
}

/// `sum_p exp(-2 pi i <p, lambda>)`, compensated, in the given order.
pub fn exponential_sum(dim: usize, positions: &[f64], lambda: &[f64]) -> Complex64 {
    let mut acc = ComplexKahan::default();
    for p in positions.chunks_exact(dim) {
        acc.add(unit_phase(geometry::dot(p, lambda)));
    }
    acc.value()
}

/// `M_R(lambda) = Vol(B_R)^{-1} sum_{p in B_R} exp(-2 pi i <p, lambda>)`.
pub fn fourier_sum<S: SpectralSource + ?Sized>(src: &S, freqs: &FrequencySet, radius: f64) -> Result<Vec<SpectralEstimate>> {
    check_source(src, freqs, radius)?;
    let d = src.dim();
    let positions = src.positions_in_ball(radius);
    let vol = ball_volume(d, radius);
    Ok((0..freqs.len())
        .into_par_iter()
        .map(|i| SpectralEstimate {
            frequency: freqs.get(i).to_vec(),
            value: exponential_sum(d, &positions, freqs.get(i)) / vol,
            radius,
            kind: SpectralKind::FourierSum,
        })
        .collect())
}

/// `|sum_{p in B_R} exp(-2 pi i <p, lambda>)|^2 / Vol(B_R)`.
pub fn periodogram<S: SpectralSource + ?Sized>(src: &S, freqs: &FrequencySet, radius: f64) -> Result<Vec<SpectralEstimate>> {
    check_source(src, freqs, radius)?;
    let d = src.dim();
    let positions = src.positions_in_ball(radius);
    let vol = ball_volume(d, radius);
    Ok((0..freqs.len())
        .into_par_iter()
        .map(|i| SpectralEstimate {
            frequency: freqs.get(i).to_vec(),
            value: Complex64::new(exponential_sum(d, &positions, freqs.get(i)).norm_sqr() / vol, 0.0),
            radius,
            kind: SpectralKind::Periodogram,
        })
        .collect())
}

/// Frequency-averaged periodogram: the mean of the periodogram over the
/// grid `lambda + eta`, `eta` in `(1/R) Z^d` with `|eta_i| <= 1/K`. The
/// averaging band has width `2/K`, the frequency-side counterpart of a
/// lag window of scale `K`; ordinates `1/R` apart are nearly uncorrelated,
/// so the variance drops by about `(2R/K)^d`.
pub fn smoothed_periodogram<S: SpectralSource + ?Sized>(
    src: &S,
    freqs: &FrequencySet,
    radius: f64,
    lag_scale: f64,
) -> Result<Vec<SpectralEstimate>> {
    check_source(src, freqs, radius)?;
    if !(lag_scale > 0.0) {
        return Err(Error::invalid("lag scale must be positive"));
    }
    let d = src.dim();
    let positions = src.positions_in_ball(radius);
    let vol = ball_volume(d, radius);
    let m = (radius / lag_scale).floor() as i64;
    let side = (2 * m + 1) as usize;
    let offsets: Vec<Vec<f64>> = (0..side.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let o = (code % side) as i64 - m;
                    code /= side;
                    o as f64 / radius
                })
                .collect()
        })
        .collect();
    Ok(freqs
        .iter()
        .map(|lambda| {
            let total: f64 = offsets
                .par_iter()
                .map(|eta| {
                    let l: Vec<f64> = lambda.iter().zip(eta).map(|(a, b)| a + b).collect();
                    exponential_sum(d, &positions, &l).norm_sqr()
                })
                .collect::<Vec<_>>()
                .into_iter()
                .sum();
            SpectralEstimate {
                frequency: lambda.to_vec(),
                value: Complex64::new(total / (vol * offsets.len() as f64), 0.0),
                radius,
                kind: SpectralKind::Periodogram,
            }
        })
        .collect())
}

/// Convergence record of one frequency of the weak Fourier transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFourierTrace {
    pub frequency: Vec<f64>,
    /// `(R, M_R(lambda))` over the schedule.
    pub values: Vec<(f64, Complex64)>,
    /// Value at the largest radius.
    pub estimate: Complex64,
    /// False when the successive deviations fail to shrink.
    pub converged: bool,
}

/// Successive deviations `|v_{i+1} - v_i|` shrink (last <= first) or are
/// already below `1e-3`.
fn deviations_shrink(values: &[Complex64]) -> bool {
    let devs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    match (devs.first(), devs.last()) {
        (Some(first), Some(last)) => last <= first || *last <= 1e-3,
        _ => true,
    }
}

/// Traces of `M_R(lambda)` of the unperturbed configuration over an
/// increasing radius schedule.
pub fn weak_fourier_transform(
    generator: &GeneratorSpec,
    freqs: &FrequencySet,
    radii: &[f64],
    cap: PointCap,
) -> Result<Vec<WeakFourierTrace>> {
    if radii.len() < 3 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("the radius schedule needs at least 3 increasing radii"));
    }
    let ps = generator.generate(*radii.last().unwrap(), cap)?;
    weak_fourier_trace(&ps, freqs, radii)
}

/// Same as [`weak_fourier_transform`] on an already generated source.
pub fn weak_fourier_trace<S: SpectralSource + ?Sized>(
    src: &S,
    freqs: &FrequencySet,
    radii: &[f64],
) -> Result<Vec<WeakFourierTrace>> {
    let per_radius: Vec<Vec<SpectralEstimate>> = radii.iter().map(|&r| fourier_sum(src, freqs, r)).collect::<Result<_>>()?;
    Ok((0..freqs.len())
        .map(|i| {
            let values: Vec<(f64, Complex64)> = radii.iter().zip(&per_radius).map(|(&r, e)| (r, e[i].value)).collect();
            let v: Vec<Complex64> = values.iter().map(|x| x.1).collect();
            WeakFourierTrace {
                frequency: freqs.get(i).to_vec(),
                estimate: *v.last().unwrap(),
                converged: deviations_shrink(&v),
                values,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Atomic measures and autocorrelation

/// `sum_p w_p delta_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<Complex64>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || positions.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch { expected: dim * weights.len(), got: positions.len() });
        }
        if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        Ok(AtomicMeasure { dim, positions, weights })
    }

    /// `delta_X` restricted to the points of `ps`.
    pub fn dirac_comb(ps: &PointSet) -> Self {
        AtomicMeasure { dim: ps.dim(), positions: ps.coords().to_vec(), weights: vec![Complex64::new(1.0, 0.0); ps.len()] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    /// Atoms inside the closed ball.
    pub fn restrict(&self, radius: f64) -> AtomicMeasure {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| norm(self.position(i)) <= radius).collect();
        AtomicMeasure {
            dim: self.dim,
            positions: keep.iter().flat_map(|&i| self.position(i).iter().copied()).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

type LagKey = [i64; MAX_GRID_DIM];

const LAG_QUANTUM: f64 = 1e-9;

fn lag_key(k: &[f64]) -> LagKey {
    let mut key = [0i64; MAX_GRID_DIM];
    for (slot, x) in key.iter_mut().zip(k) {
        *slot = (x / LAG_QUANTUM).round() as i64;
    }
    key
}

fn key_is_positive(key: &LagKey) -> bool {
    key.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

#[derive(Debug, Clone)]
struct LagPairs {
    key: LagKey,
    k: Vec<f64>,
    pairs: Vec<(u32, u32)>,
}

/// All pairs `(p, q)` of atoms in `B_R` with `0 < |p - q| <= K`, grouped by
/// lag `k = p - q` (quantized at `1e-9`). Only lexicographically positive
/// lags are stored; negative lags follow by conjugation, which makes the
/// coefficients exactly Hermitian. Reusable across weightings of the same
/// positions.
#[derive(Debug, Clone)]
pub struct PairIndex {
    dim: usize,
    n_atoms: usize,
    lag_radius: f64,
    radius: f64,
    lags: Vec<LagPairs>,
}

const PAIR_CHUNK: usize = 4096;

impl PairIndex {
    /// `positions` are the atoms inside `B_R`, in the order their weights
    /// will be supplied.
    pub fn new(dim: usize, positions: &[f64], lag_radius: f64, radius: f64) -> Result<Self> {
        if dim > MAX_GRID_DIM {
            return Err(Error::Unsupported(format!("lag search supports dimension at most {MAX_GRID_DIM}")));
        }
        if !(lag_radius > 0.0) || lag_radius > radius / 10.0 {
            return Err(Error::config(format!(
                "lag radius K = {lag_radius} must be positive and at most R / 10 = {}",
                radius / 10.0
            )));
        }
        let n = positions.len() / dim;
        if n > u32::MAX as usize {
            return Err(Error::CapExceeded { requested: n as u64, cap: u32::MAX as u64 });
        }
        let grid = Grid::new(dim, positions, lag_radius);
        let mut map: HashMap<LagKey, usize> = HashMap::new();
        let mut lags: Vec<LagPairs> = Vec::new();
        let r2 = lag_radius * lag_radius;
        for start in (0..n).step_by(PAIR_CHUNK) {
            let end = (start + PAIR_CHUNK).min(n);
            let found: Vec<Vec<(LagKey, u32)>> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let p = grid.point(i);
                    let mut out = Vec::new();
                    grid.for_each_within(p, lag_radius, |j, d2| {
                        if j == i || d2 > r2 {
                            return;
                        }
                        let k: Vec<f64> = p.iter().zip(grid.point(j)).map(|(a, b)| a - b).collect();
                        let key = lag_key(&k);
                        if key_is_positive(&key) {
                            out.push((key, j as u32));
                        }
                    });
                    out
                })
                .collect();
            for (off, hits) in found.into_iter().enumerate() {
                let i = start + off;
                for (key, j) in hits {
                    let slot = *map.entry(key).or_insert_with(|| {
                        let k = grid.point(i).iter().zip(grid.point(j as usize)).map(|(a, b)| a - b).collect();
                        lags.push(LagPairs { key, k, pairs: Vec::new() });
                        lags.len() - 1
                    });
                    lags[slot].pairs.push((i as u32, j));
                }
            }
        }
        lags.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(PairIndex { dim, n_atoms: n, lag_radius, radius, lags })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Number of stored (positive) lags.
    pub fn positive_lags(&self) -> usize {
        self.lags.len()
    }

    /// Autocorrelation coefficients of the weights at every lag in `B_K`.
    pub fn correlate(&self, weights: &[Complex64]) -> Result<AutocorrEstimate> {
        if weights.len() != self.n_atoms {
            return Err(Error::DimensionMismatch { expected: self.n_atoms, got: weights.len() });
        }
        let vol = ball_volume(self.dim, self.radius);
        let mut zero = ComplexKahan::default();
        for w in weights {
            zero.add(Complex64::new(w.norm_sqr(), 0.0));
        }
        let positive: Vec<Lag> = self
            .lags
            .par_iter()
            .map(|lag| {
                let mut acc = ComplexKahan::default();
                for &(i, j) in &lag.pairs {
                    acc.add(weights[i as usize] * weights[j as usize].conj());
                }
                Lag { k: lag.k.clone(), coefficient: acc.value() / vol, pair_count: lag.pairs.len() }
            })
            .collect();
        let mut lags = Vec::with_capacity(2 * positive.len() + 1);
        for lag in positive.iter().rev() {
            lags.push(Lag {
                k: lag.k.iter().map(|x| -x).collect(),
                coefficient: lag.coefficient.conj(),
                pair_count: lag.pair_count,
            });
        }
        lags.push(Lag { k: vec![0.0; self.dim], coefficient: zero.value() / vol, pair_count: self.n_atoms });
        lags.extend(positive);
        Ok(AutocorrEstimate { dim: self.dim, lags, lag_radius: self.lag_radius, radius: self.radius })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lag {
    pub k: Vec<f64>,
    pub coefficient: Complex64,
    pub pair_count: usize,
}

/// Lags sorted lexicographically (negative half, zero, positive half).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrEstimate {
    pub dim: usize,
    pub lags: Vec<Lag>,
    pub lag_radius: f64,
    pub radius: f64,
}

impl AutocorrEstimate {
    pub fn zero_lag(&self) -> &Lag {
        let key = [0i64; MAX_GRID_DIM];
        self.lags.iter().find(|l| lag_key(&l.k) == key).expect("the zero lag is always present")
    }

    /// Coefficient at the lag closest to `k` (within `1e-9`).
    pub fn at(&self, k: &[f64]) -> Option<&Lag> {
        let key = lag_key(k);
        self.lags.iter().find(|l| lag_key(&l.k) == key)
    }

    pub fn nonzero_lags(&self) -> impl Iterator<Item = &Lag> {
        let zero = [0i64; MAX_GRID_DIM];
        self.lags.iter().filter(move |l| lag_key(&l.k) != zero)
    }
}

/// `(1 / Vol(B_R)) sum_{p, p - k in B_R} mu(p) conj(mu(p - k))` for every
/// lag `k` in `(X - X) cap B_K`. Requires `K <= R / 10`.
pub fn autocorrelation(measure: &AtomicMeasure, lag_radius: f64, radius: f64) -> Result<AutocorrEstimate> {
    let m = measure.restrict(radius);
    PairIndex::new(m.dim(), m.positions(), lag_radius, radius)?.correlate(m.weights())
}

/// `(mu_X^lambda, mu_xi^lambda)`: weights `exp(-2 pi i <p, lambda>)` and
/// `exp(-2 pi i <xi_p, lambda>) - phi(lambda)`, both at the unperturbed `p`.
pub fn mu_lambda_weights(pps: &PerturbedPointSet, lambda: &[f64]) -> Result<(AtomicMeasure, AtomicMeasure)> {
    let d = pps.dim();
    if lambda.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lambda.len() });
    }
    let phi = perturb::characteristic_function(pps.model(), lambda).value;
    let base = pps.base();
    let wx: Vec<Complex64> = base.points().map(|p| unit_phase(geometry::dot(p, lambda))).collect();
    let wxi: Vec<Complex64> = (0..pps.len()).map(|i| unit_phase(geometry::dot(pps.displacement(i), lambda)) - phi).collect();
    Ok((
        AtomicMeasure { dim: d, positions: base.coords().to_vec(), weights: wx },
        AtomicMeasure { dim: d, positions: base.coords().to_vec(), weights: wxi },
    ))
}

fn check_mixing_model(pps: &PerturbedPointSet) -> Result<()> {
    match pps.model().correlation {
        Correlation::Iid | Correlation::ShellMixing { .. } => Ok(()),
        _ => Err(Error::config("this diagnostic assumes an IID or shell-mixing field")),
    }
}

/// Autocorrelation of `mu_xi^lambda`.
pub fn gamma_xi_lambda(pps: &PerturbedPointSet, lambda: &[f64], lag_radius: f64, radius: f64) -> Result<AutocorrEstimate> {
    check_mixing_model(pps)?;
    let (_, mu_xi) = mu_lambda_weights(pps, lambda)?;
    autocorrelation(&mu_xi, lag_radius, radius)
}

/// Same as [`gamma_xi_lambda`] with a pair index built on
/// `pps.base().restrict(R)`, for repeated realizations on one point set.
pub fn gamma_xi_lambda_indexed(pps: &PerturbedPointSet, lambda: &[f64], index: &PairIndex) -> Result<AutocorrEstimate> {
    check_mixing_model(pps)?;
    let (_, mu_xi) = mu_lambda_weights(pps, lambda)?;
    let restricted = mu_xi.restrict(index.radius);
    index.correlate(restricted.weights())
}

/// `Vol(B_R)^{-1} sum_{p in X cap B_R} exp(-2 pi i <p, lambda>)
/// (exp(-2 pi i <xi_p, lambda>) - phi(lambda))`.
pub fn residual_sum(pps: &PerturbedPointSet, lambda: &[f64], radius: f64) -> Result<Complex64> {
    let d = pps.dim();
    if lambda.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lambda.len() });
    }
    if radius > pps.base().generation_radius * (1.0 + 1e-12) {
        return Err(Error::invalid("radius exceeds the generation radius"));
    }
    let phi = perturb::characteristic_function(pps.model(), lambda).value;
    let mut acc = ComplexKahan::default();
    for i in 0..pps.len() {
        let p = pps.base().point(i);
        if norm(p) <= radius {
            acc.add(unit_phase(geometry::dot(p, lambda)) * (unit_phase(geometry::dot(pps.displacement(i), lambda)) - phi));
        }
    }
    Ok(acc.value() / ball_volume(d, radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeFractions {
    /// `#{|p| <= R, |p + xi_p| > R} / Vol(B_R)`.
    pub out_fraction: f64,
    /// `#{|p| > R, |p + xi_p| <= R} / Vol(B_R)`.
    pub in_fraction: f64,
    pub out_count: usize,
    pub in_count: usize,
}

/// Points crossing the sphere of radius `R` under the perturbation. The
/// base set must extend `10` scale units beyond `R`.
pub fn boundary_escape_fraction(pps: &PerturbedPointSet, radius: f64) -> Result<EscapeFractions> {
    let margin = 10.0 * pps.model().dist.scale_equivalent();
    if pps.base().generation_radius < radius + margin {
        return Err(Error::config(format!(
            "generation radius {} must be at least R + {margin} to capture incoming points",
            pps.base().generation_radius
        )));
    }
    let (mut out, mut inn) = (0usize, 0usize);
    for i in 0..pps.len() {
        let a = norm(pps.base().point(i)) <= radius;
        let b = norm(&pps.position(i)) <= radius;
        match (a, b) {
            (true, false) => out += 1,
            (false, true) => inn += 1,
            _ => {}
        }
    }
    let vol = ball_volume(pps.dim(), radius);
    Ok(EscapeFractions { out_fraction: out as f64 / vol, in_fraction: inn as f64 / vol, out_count: out, in_count: inn })
}

/// Mean of `|c(k)|` over the nonzero lags of the estimate: small compared
/// with `c(0)` when the weights carry no periodic component.
pub fn strungaru_statistic(ac: &AutocorrEstimate) -> f64 {
    let (sum, count) = ac.nonzero_lags().fold((0.0, 0usize), |(s, c), l| (s + l.coefficient.norm(), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
