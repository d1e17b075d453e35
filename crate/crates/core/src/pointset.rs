//! Deterministic point configurations: lattices, cut-and-project sets,
//! visible lattice points and asymptotically affine deformations of lattices.
//!
//! Every generator returns the points of the configuration inside the closed
//! ball `|p| <= R`, sorted lexicographically so that the output is the same
//! regardless of how the enumeration was parallelised.

use nalgebra::DMatrix;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, lex_cmp, norm};
use crate::rng::{self, stream};
use crate::special::{ball_volume, bessel_j1, zeta};

/// Default guardrail on the number of generated points.
pub const DEFAULT_POINT_CAP: u64 = 10_000_000;

/// Relative slack used when turning real constraints into integer ranges.
const ENUM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointCap(pub u64);

impl Default for PointCap {
    fn default() -> Self {
        PointCap(DEFAULT_POINT_CAP)
    }
}

/// Provenance of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub generator: String,
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// How `claimed_density` was obtained ("exact" or "analytic").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_source: Option<String>,
}

impl Descriptor {
    pub fn new(generator: &str, params: serde_json::Value) -> Self {
        Descriptor { generator: generator.to_owned(), params, seed: None, density_source: None }
    }
}

/// A finite uniformly discrete configuration in `R^d`.
#[derive(Debug, Clone)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    /// Integer lattice coordinates aligned with the points, `label_dim` per point.
    labels: Option<Vec<i64>>,
    label_dim: usize,
    pub separation_radius: f64,
    pub claimed_density: Option<f64>,
    pub generation_radius: f64,
    pub descriptor: Descriptor,
}

impl PointSet {
    /// Builds a point set from raw coordinates: sorts, deduplicates exact
    /// repeats and checks ball containment. `separation_radius` defaults to
    /// the exact minimum gap of the sample.
    pub fn from_points(
        dim: usize,
        coords: Vec<f64>,
        generation_radius: f64,
        separation_radius: Option<f64>,
        claimed_density: Option<f64>,
        descriptor: Descriptor,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::invalid("coordinate array length is not a multiple of the dimension"));
        }
        let mut ps = PointSet {
            dim,
            coords,
            labels: None,
            label_dim: 0,
            separation_radius: 0.0,
            claimed_density,
            generation_radius,
            descriptor,
        };
        ps.normalize_order();
        ps.dedup_exact();
        let sep = match separation_radius {
            Some(r) => r,
            None => ps.sample_separation(),
        };
        ps.separation_radius = sep;
        ps.check_ball()?;
        Ok(ps)
    }

    /// Like [`PointSet::from_points`] with an integer label per point;
    /// labels travel with their points through the sort.
    #[allow(clippy::too_many_arguments)]
    pub fn from_labelled_points(
        dim: usize,
        coords: Vec<f64>,
        labels: Vec<i64>,
        label_dim: usize,
        generation_radius: f64,
        separation_radius: Option<f64>,
        claimed_density: Option<f64>,
        descriptor: Descriptor,
    ) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::invalid("coordinate array length is not a multiple of the dimension"));
        }
        if labels.len() != label_dim * (coords.len() / dim) {
            return Err(Error::invalid("one label of length label_dim is required per point"));
        }
        let mut ps = Self::with_labels(dim, coords, labels, label_dim, generation_radius, descriptor);
        ps.dedup_exact();
        ps.separation_radius = separation_radius.unwrap_or_else(|| ps.sample_separation());
        ps.claimed_density = claimed_density;
        ps.check_ball()?;
        Ok(ps)
    }

    fn with_labels(
        dim: usize,
        coords: Vec<f64>,
        labels: Vec<i64>,
        label_dim: usize,
        generation_radius: f64,
        descriptor: Descriptor,
    ) -> Self {
        let mut ps = PointSet {
            dim,
            coords,
            labels: Some(labels),
            label_dim,
            separation_radius: 0.0,
            claimed_density: None,
            generation_radius,
            descriptor,
        };
        ps.normalize_order();
        ps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    /// Flat coordinate array, `dim` entries per point.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Integer coordinates of the lattice point each entry came from, when
    /// the generator has one (lattices, cut-and-project, deformations).
    pub fn label(&self, i: usize) -> Option<&[i64]> {
        self.labels.as_ref().map(|l| &l[i * self.label_dim..(i + 1) * self.label_dim])
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    /// Restriction to the closed ball of radius `radius` (labels kept).
    pub fn restrict(&self, radius: f64) -> PointSet {
        let mut coords = Vec::new();
        let mut labels = self.labels.as_ref().map(|_| Vec::new());
        for i in 0..self.len() {
            if norm(self.point(i)) <= radius {
                coords.extend_from_slice(self.point(i));
                if let (Some(out), Some(l)) = (labels.as_mut(), self.label(i)) {
                    out.extend_from_slice(l);
                }
            }
        }
        PointSet {
            dim: self.dim,
            coords,
            labels,
            label_dim: self.label_dim,
            separation_radius: self.separation_radius,
            claimed_density: self.claimed_density,
            generation_radius: radius.min(self.generation_radius),
            descriptor: self.descriptor.clone(),
        }
    }

    fn normalize_order(&mut self) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        let d = self.dim;
        let c = &self.coords;
        order.par_sort_unstable_by(|&a, &b| lex_cmp(&c[a * d..(a + 1) * d], &c[b * d..(b + 1) * d]));
        let coords: Vec<f64> = order.iter().flat_map(|&i| c[i * d..(i + 1) * d].iter().copied()).collect();
        if let Some(l) = &self.labels {
            let ld = self.label_dim;
            self.labels = Some(order.iter().flat_map(|&i| l[i * ld..(i + 1) * ld].iter().copied()).collect());
        }
        self.coords = coords;
    }

    fn dedup_exact(&mut self) {
        let d = self.dim;
        let n = self.len();
        if n < 2 {
            return;
        }
        let mut keep = vec![true; n];
        for i in 1..n {
            if self.coords[i * d..(i + 1) * d] == self.coords[(i - 1) * d..i * d] {
                keep[i] = false;
            }
        }
        if keep.iter().all(|&k| k) {
            return;
        }
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut labels = self.labels.as_ref().map(|_| Vec::new());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                coords.extend_from_slice(self.point(i));
                if let (Some(out), Some(l)) = (labels.as_mut(), self.label(i)) {
                    out.extend_from_slice(l);
                }
            }
        }
        self.coords = coords;
        self.labels = labels;
    }

    fn sample_separation(&self) -> f64 {
        geometry::min_pair_distance(self.dim, &self.coords).unwrap_or(2.0 * self.generation_radius.max(f64::MIN_POSITIVE))
    }

    fn check_ball(&self) -> Result<()> {
        let r = self.generation_radius * (1.0 + 1e-12);
        if let Some(p) = self.points().find(|p| norm(p) > r) {
            return Err(Error::Invariant(format!(
                "point {p:?} lies outside the generation ball of radius {}",
                self.generation_radius
            )));
        }
        Ok(())
    }

    /// Checks the point-set invariants: ball containment, no duplicates and
    /// pairwise separation. Exact up to 1e5 points, a deterministic sample of
    /// 1e5 points above.
    pub fn validate(&self) -> Result<()> {
        self.check_ball()?;
        let n = self.len();
        let coords: std::borrow::Cow<'_, [f64]> = if n <= 100_000 {
            std::borrow::Cow::Borrowed(&self.coords)
        } else {
            // Contiguous windows keep near neighbours together.
            let step = n / 10;
            let mut sample = Vec::with_capacity(100_000 * self.dim);
            for w in 0..10 {
                let start = w * step;
                sample.extend_from_slice(&self.coords[start * self.dim..(start + 10_000) * self.dim]);
            }
            std::borrow::Cow::Owned(sample)
        };
        if let Some(gap) = geometry::min_pair_distance(self.dim, &coords) {
            if gap == 0.0 {
                return Err(Error::Invariant("duplicate points".into()));
            }
            if gap < self.separation_radius * (1.0 - 1e-12) {
                return Err(Error::Invariant(format!(
                    "minimum gap {gap} is below the separation radius {}",
                    self.separation_radius
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Integer enumeration

/// All integer vectors `m` with `lo <= A m <= hi` (up to a small slack), for a
/// square nonsingular `A`. The last coordinate is solved exactly from the
/// constraints, the others are bounded by the box `A^{-1}[lo, hi]`. `keep`
/// maps each candidate to an output; outputs come back ordered by `m`.
fn scan_integer_region<T, F>(a: &DMatrix<f64>, lo: &[f64], hi: &[f64], cap: PointCap, keep: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[i64]) -> Option<T> + Sync,
{
    let n = a.ncols();
    assert_eq!(a.nrows(), n);
    let inv = a.clone().try_inverse().ok_or_else(|| Error::Invariant("singular enumeration matrix".into()))?;
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let (mut lo_i, mut hi_i) = (0.0, 0.0);
        for j in 0..n {
            let (x, y) = (inv[(i, j)] * lo[j], inv[(i, j)] * hi[j]);
            lo_i += x.min(y);
            hi_i += x.max(y);
        }
        let pad = ENUM_SLACK * (1.0 + lo_i.abs().max(hi_i.abs()));
        bounds.push(((lo_i - pad).ceil() as i64, (hi_i + pad).floor() as i64));
    }
    let outer_count: f64 = bounds[..n - 1].iter().map(|(l, h)| (h - l + 1).max(0) as f64).product();
    if outer_count > 1e10 {
        return Err(Error::CapExceeded { requested: outer_count as u64, cap: cap.0 });
    }
    let last = n - 1;
    let scan_prefix = |prefix: &mut Vec<i64>, out: &mut Vec<T>| {
        // Range of the last coordinate from every constraint.
        let (mut t_lo, mut t_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for j in 0..n {
            let base: f64 = (0..last).map(|i| a[(j, i)] * prefix[i] as f64).sum();
            let coef = a[(j, last)];
            let pad = ENUM_SLACK * (1.0 + lo[j].abs().max(hi[j].abs()));
            if coef.abs() < 1e-300 {
                if base < lo[j] - pad || base > hi[j] + pad {
                    return;
                }
                continue;
            }
            let (u, v) = ((lo[j] - pad - base) / coef, (hi[j] + pad - base) / coef);
            t_lo = t_lo.max(u.min(v));
            t_hi = t_hi.min(u.max(v));
        }
        if t_lo > t_hi {
            return;
        }
        let (m_lo, m_hi) = (t_lo.ceil() as i64, t_hi.floor() as i64);
        prefix.push(0);
        for m in m_lo..=m_hi {
            prefix[last] = m;
            if let Some(t) = keep(prefix) {
                out.push(t);
            }
        }
        prefix.pop();
    };
    let slabs: Vec<Vec<T>> = if n == 1 {
        let mut out = Vec::new();
        scan_prefix(&mut Vec::new(), &mut out);
        vec![out]
    } else {
        let (l0, h0) = bounds[0];
        (l0..=h0.max(l0 - 1))
            .into_par_iter()
            .map(|m0| {
                let mut out = Vec::new();
                let mut prefix = vec![m0];
                // Odometer over the middle coordinates.
                let mids = &bounds[1..last];
                if mids.iter().any(|(l, h)| l > h) {
                    return out;
                }
                prefix.extend(mids.iter().map(|b| b.0));
                loop {
                    scan_prefix(&mut prefix, &mut out);
                    let mut k = mids.len();
                    loop {
                        if k == 0 {
                            return out;
                        }
                        k -= 1;
                        if prefix[1 + k] < mids[k].1 {
                            prefix[1 + k] += 1;
                            break;
                        }
                        prefix[1 + k] = mids[k].0;
                    }
                }
            })
            .collect()
    };
    let total: usize = slabs.iter().map(Vec::len).sum();
    if total as u64 > cap.0 {
        return Err(Error::CapExceeded { requested: total as u64, cap: cap.0 });
    }
    Ok(slabs.into_iter().flatten().collect())
}

fn matrix_from_columns(vectors: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = vectors.len();
    if n == 0 || vectors.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("basis must consist of n vectors of length n"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| vectors[j][i]))
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("projection rows must have length {ncols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn check_cap(estimate: f64, cap: PointCap) -> Result<()> {
    if estimate > cap.0 as f64 {
        return Err(Error::CapExceeded { requested: estimate.min(u64::MAX as f64) as u64, cap: cap.0 });
    }
    Ok(())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("radius must be positive and finite, got {radius}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Lattices

/// A full-rank lattice `B Z^d`; `basis` holds the basis vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct Lattice {
    basis: Vec<Vec<f64>>,
    matrix: DMatrix<f64>,
    covolume: f64,
}

#[derive(Serialize, Deserialize)]
struct LatticeRepr {
    basis: Vec<Vec<f64>>,
}

impl TryFrom<LatticeRepr> for Lattice {
    type Error = Error;
    fn try_from(r: LatticeRepr) -> Result<Self> {
        Lattice::new(r.basis)
    }
}

impl From<Lattice> for LatticeRepr {
    fn from(l: Lattice) -> Self {
        LatticeRepr { basis: l.basis }
    }
}

impl Lattice {
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Self> {
        let matrix = matrix_from_columns(&basis)?;
        let covolume = matrix.determinant().abs();
        let scale: f64 = basis.iter().map(|v| norm(v)).product();
        if !(covolume > 1e-12 * scale) || !covolume.is_finite() {
            return Err(Error::invalid("lattice basis is singular"));
        }
        Ok(Lattice { basis, matrix, covolume })
    }

    /// `Z^d`.
    pub fn integer(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(steps: &[f64]) -> Self {
        let d = steps.len();
        let basis = (0..d).map(|j| (0..d).map(|i| if i == j { steps[j] } else { 0.0 }).collect()).collect();
        Self::new(basis).expect("diagonal lattice with nonzero steps")
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn covolume(&self) -> f64 {
        self.covolume
    }

    pub fn density(&self) -> f64 {
        1.0 / self.covolume
    }

    /// Lattice point `B m`.
    pub fn point(&self, m: &[i64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.matrix[(i, j)] * m[j] as f64).sum()).collect()
    }

    /// The dual lattice `B^{-T} Z^d`.
    pub fn dual(&self) -> Lattice {
        let inv_t = self.matrix.clone().try_inverse().expect("nonsingular").transpose();
        let d = self.dim();
        Lattice::new((0..d).map(|j| (0..d).map(|i| inv_t[(i, j)]).collect()).collect()).expect("dual of a lattice")
    }

    /// The lattice `A L` for a `d x d` matrix given by rows.
    pub fn transformed(&self, rows: &[Vec<f64>]) -> Result<Lattice> {
        let a = matrix_from_rows(rows, self.dim())?;
        if a.nrows() != self.dim() {
            return Err(Error::invalid("linear map must be square"));
        }
        let m = a * &self.matrix;
        let d = self.dim();
        Lattice::new((0..d).map(|j| (0..d).map(|i| m[(i, j)]).collect()).collect())
    }

    /// Length of a shortest nonzero lattice vector.
    pub fn shortest_vector_length(&self) -> f64 {
        let r0 = self.basis.iter().map(|v| norm(v)).fold(f64::INFINITY, f64::min);
        let d = self.dim();
        let lo = vec![-r0; d];
        let hi = vec![r0; d];
        let found = scan_integer_region(&self.matrix, &lo, &hi, PointCap(u64::MAX), |m| {
            if m.iter().all(|&x| x == 0) {
                return None;
            }
            let l = norm(&self.point(m));
            (l <= r0 * (1.0 + 1e-12)).then_some(l)
        })
        .unwrap_or_default();
        found.into_iter().fold(r0, f64::min)
    }

    /// Lattice vectors `B m` with `|B m| <= radius`, paired with `m`.
    fn points_in_ball(&self, radius: f64, cap: PointCap) -> Result<Vec<(Vec<i64>, Vec<f64>)>> {
        let d = self.dim();
        check_cap(ball_volume(d, radius) / self.covolume * 1.05 + 1.0, cap)?;
        let lo = vec![-radius; d];
        let hi = vec![radius; d];
        scan_integer_region(&self.matrix, &lo, &hi, cap, |m| {
            let p = self.point(m);
            (norm(&p) <= radius).then(|| (m.to_vec(), p))
        })
    }
}

pub fn generate_lattice(lattice: &Lattice, radius: f64) -> Result<PointSet> {
    generate_lattice_with(lattice, radius, PointCap::default())
}

pub fn generate_lattice_with(lattice: &Lattice, radius: f64, cap: PointCap) -> Result<PointSet> {
    check_radius(radius)?;
    let d = lattice.dim();
    let found = lattice.points_in_ball(radius, cap)?;
    let mut coords = Vec::with_capacity(found.len() * d);
    let mut labels = Vec::with_capacity(found.len() * d);
    for (m, p) in found {
        labels.extend(m);
        coords.extend(p);
    }
    let descriptor = Descriptor {
        density_source: Some("exact".into()),
        ..Descriptor::new("lattice", serde_json::json!({ "basis": lattice.basis(), "radius": radius }))
    };
    let mut ps = PointSet::with_labels(d, coords, labels, d, radius, descriptor);
    ps.separation_radius = lattice.shortest_vector_length();
    ps.claimed_density = Some(lattice.density());
    Ok(ps)
}

// ---------------------------------------------------------------------------
// Visible points

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Integer vectors with coprime coordinates inside the ball.
pub fn generate_visible_points(dim: usize, radius: f64) -> Result<PointSet> {
    generate_visible_points_with(dim, radius, PointCap::default())
}

pub fn generate_visible_points_with(dim: usize, radius: f64, cap: PointCap) -> Result<PointSet> {
    if dim < 2 {
        return Err(Error::invalid("visible points need dimension at least 2"));
    }
    if !(radius >= 1.0 && radius.is_finite()) {
        return Err(Error::invalid("visible points need radius at least 1"));
    }
    let lattice = Lattice::integer(dim);
    check_cap(ball_volume(dim, radius) * 1.05 + 1.0, cap)?;
    let lo = vec![-radius; dim];
    let hi = vec![radius; dim];
    let found = scan_integer_region(lattice.matrix(), &lo, &hi, cap, |m| {
        let r2: f64 = m.iter().map(|&x| (x * x) as f64).sum();
        (r2 <= radius * radius && m.iter().fold(0, |g, &x| gcd(g, x)) == 1).then(|| m.to_vec())
    })?;
    let mut coords = Vec::with_capacity(found.len() * dim);
    let mut labels = Vec::with_capacity(found.len() * dim);
    for m in found {
        coords.extend(m.iter().map(|&x| x as f64));
        labels.extend(m);
    }
    let descriptor = Descriptor {
        density_source: Some("analytic".into()),
        ..Descriptor::new("visible_points", serde_json::json!({ "dim": dim, "radius": radius }))
    };
    let mut ps = PointSet::with_labels(dim, coords, labels, dim, radius, descriptor);
    ps.separation_radius = 1.0;
    ps.claimed_density = Some(1.0 / zeta(dim as u32));
    Ok(ps)
}

// ---------------------------------------------------------------------------
// Cut-and-project sets

/// Acceptance region in internal space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Window {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Window {
    pub fn dim(&self) -> usize {
        match self {
            Window::Box { lo, .. } => lo.len(),
            Window::Ball { center, .. } => center.len(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            Window::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a).max(0.0)).product(),
            Window::Ball { center, radius } => ball_volume(center.len(), radius.max(0.0)),
        }
    }

    /// Half-open box `[lo, hi)` or closed ball. The half-open box keeps the
    /// canonical Fibonacci window from picking up both boundary points.
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Window::Box { lo, hi } => y.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *a <= *v && *v < *b),
            Window::Ball { center, radius } => geometry::dist2(y, center) <= radius * radius,
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Window::Box { lo, hi } => (lo.clone(), hi.clone()),
            Window::Ball { center, radius } => {
                (center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
            }
        }
    }

    /// The window translated by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Window {
        match self {
            Window::Box { lo, hi } => Window::Box {
                lo: lo.iter().zip(shift).map(|(a, s)| a + s).collect(),
                hi: hi.iter().zip(shift).map(|(a, s)| a + s).collect(),
            },
            Window::Ball { center, radius } => {
                Window::Ball { center: center.iter().zip(shift).map(|(a, s)| a + s).collect(), radius: *radius }
            }
        }
    }

    /// `int_W exp(2 pi i <y, mu>) dy`.
    pub fn fourier(&self, mu: &[f64]) -> num_complex::Complex64 {
        use num_complex::Complex64;
        use std::f64::consts::PI;
        match self {
            Window::Box { lo, hi } => {
                let mut acc = Complex64::new(1.0, 0.0);
                for ((a, b), m) in lo.iter().zip(hi).zip(mu) {
                    let factor = if m.abs() < 1e-300 {
                        Complex64::new(b - a, 0.0)
                    } else {
                        let e = |t: f64| Complex64::from_polar(1.0, 2.0 * PI * t * m);
                        (e(*b) - e(*a)) / Complex64::new(0.0, 2.0 * PI * m)
                    };
                    acc *= factor;
                }
                acc
            }
            Window::Ball { center, radius } => {
                let k = center.len();
                let r = *radius;
                let q = norm(mu);
                let shift = Complex64::from_polar(1.0, 2.0 * PI * geometry::dot(center, mu));
                if q < 1e-300 {
                    return shift * self.volume();
                }
                let t = 2.0 * PI * r * q;
                let radial = match k {
                    1 => (t).sin() / (PI * q),
                    2 => r * bessel_j1(t) / q,
                    3 => (t.sin() - t * t.cos()) / (2.0 * PI * PI * q.powi(3)),
                    _ => f64::NAN,
                };
                shift * radial
            }
        }
    }

    /// A radius in frequency space beyond which `|fourier| < threshold`
    /// along every axis (boxes) or radially (balls).
    fn decay_bounds(&self, threshold: f64) -> Vec<f64> {
        use std::f64::consts::PI;
        match self {
            Window::Box { lo, hi } => {
                let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a).max(0.0)).collect();
                (0..widths.len())
                    .map(|k| {
                        let others: f64 = widths.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, w)| w).product();
                        others / (PI * threshold)
                    })
                    .collect()
            }
            Window::Ball { center, radius } => {
                let k = center.len() as f64;
                // |fourier| <= 2 vol (2 pi r |mu|)^{-(k+1)/2}
                let vol = self.volume();
                let m = (2.0 * vol / threshold).powf(2.0 / (k + 1.0)) / (2.0 * PI * radius);
                vec![m; center.len()]
            }
        }
    }
}

/// `X(L, W) = pi_phys(L cap pi_int^{-1}(W))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutProjectScheme {
    /// `n` basis vectors of the lattice in `R^n`.
    pub lattice_basis: Vec<Vec<f64>>,
    /// `d x n` physical projection, by rows.
    pub proj_phys: Vec<Vec<f64>>,
    /// `k x n` internal projection, by rows.
    pub proj_int: Vec<Vec<f64>>,
    pub window: Window,
}

/// A Bragg frequency of a cut-and-project set with its analytic amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPeak {
    pub label: Vec<i64>,
    pub frequency: Vec<f64>,
    pub internal: Vec<f64>,
    pub amplitude: num_complex::Complex64,
}

impl CutProjectScheme {
    /// The Fibonacci chain: `Z^2` cut along the line of slope `1/phi`, with
    /// the internal projection of the unit square as window.
    pub fn fibonacci() -> Self {
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        let s = (1.0 + phi * phi).sqrt();
        let e_phys = vec![phi / s, 1.0 / s];
        let e_int = vec![-1.0 / s, phi / s];
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let ys: Vec<f64> = corners.iter().map(|c| geometry::dot(c, &e_int)).collect();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        CutProjectScheme {
            lattice_basis: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            proj_phys: vec![e_phys],
            proj_int: vec![e_int],
            window: Window::Box { lo: vec![lo], hi: vec![hi] },
        }
    }

    pub fn total_dim(&self) -> usize {
        self.lattice_basis.len()
    }

    pub fn phys_dim(&self) -> usize {
        self.proj_phys.len()
    }

    pub fn int_dim(&self) -> usize {
        self.proj_int.len()
    }

    fn basis_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_columns(&self.lattice_basis)
    }

    /// `[proj_phys; proj_int]`.
    pub fn stacked(&self) -> Result<DMatrix<f64>> {
        let n = self.total_dim();
        let mut rows = self.proj_phys.clone();
        rows.extend(self.proj_int.iter().cloned());
        let t = matrix_from_rows(&rows, n)?;
        if t.nrows() != n {
            return Err(Error::invalid(format!(
                "physical ({}) plus internal ({}) dimensions must equal {n}",
                self.phys_dim(),
                self.int_dim()
            )));
        }
        Ok(t)
    }

    /// Structural checks: shapes, nonsingular lattice and stacked projection,
    /// window dimension and positive window volume.
    pub fn validate(&self) -> Result<()> {
        let n = self.total_dim();
        if self.phys_dim() == 0 || self.int_dim() == 0 {
            return Err(Error::invalid("both physical and internal spaces must be nontrivial"));
        }
        let b = self.basis_matrix()?;
        let t = self.stacked()?;
        let scale = |m: &DMatrix<f64>| m.column_iter().map(|c| c.norm()).product::<f64>();
        if !(b.determinant().abs() > 1e-12 * scale(&b)) {
            return Err(Error::Invariant("lattice basis is singular".into()));
        }
        let tt = t.transpose();
        if !(t.determinant().abs() > 1e-12 * scale(&tt)) {
            return Err(Error::Invariant("stacked projections are singular".into()));
        }
        if self.window.dim() != n - self.phys_dim() {
            return Err(Error::invalid("window dimension must equal the internal dimension"));
        }
        if !(self.window.volume() > 0.0) {
            return Err(Error::Invariant("window has empty interior".into()));
        }
        Ok(())
    }

    /// `Vol(W) / (covol(L) |det T|)`, the Weyl-equidistribution density.
    pub fn density(&self) -> Result<f64> {
        let b = self.basis_matrix()?;
        let t = self.stacked()?;
        Ok(self.window.volume() / (b.determinant().abs() * t.determinant().abs()))
    }

    /// Bragg frequencies `lambda` with `|lambda| <= max_norm` and analytic
    /// amplitude at least `floor`, strongest first.
    pub fn dual_module(&self, max_norm: f64, floor: f64) -> Result<Vec<DualPeak>> {
        self.validate()?;
        if !(floor > 0.0) {
            return Err(Error::invalid("intensity floor must be positive"));
        }
        let n = self.total_dim();
        let d = self.phys_dim();
        let tb = self.stacked()? * self.basis_matrix()?;
        let g = tb.clone().try_inverse().expect("validated").transpose();
        let norm_const = tb.determinant().abs();
        let mu_max = self.window.decay_bounds(floor * norm_const);
        let mut lo = vec![-max_norm; d];
        let mut hi = vec![max_norm; d];
        lo.extend(mu_max.iter().map(|m| -m));
        hi.extend(mu_max.iter().copied());
        let peaks = scan_integer_region(&g, &lo, &hi, PointCap(u64::MAX), |j| {
            let v: Vec<f64> = (0..n).map(|r| (0..n).map(|c| g[(r, c)] * j[c] as f64).sum()).collect();
            let (lambda, mu) = v.split_at(d);
            if norm(lambda) > max_norm {
                return None;
            }
            let amplitude = self.window.fourier(mu) / norm_const;
            (amplitude.norm() >= floor).then(|| DualPeak {
                label: j.to_vec(),
                frequency: lambda.to_vec(),
                internal: mu.to_vec(),
                amplitude,
            })
        })?;
        let mut peaks = peaks;
        peaks.sort_by(|a, b| b.amplitude.norm().total_cmp(&a.amplitude.norm()).then_with(|| lex_cmp(&a.frequency, &b.frequency)));
        Ok(peaks)
    }
}

pub fn generate_cut_and_project(scheme: &CutProjectScheme, radius: f64) -> Result<PointSet> {
    generate_cut_and_project_with(scheme, radius, None, PointCap::default())
}

/// Cut-and-project generation. `origin` re-centres the integer enumeration
/// at a lattice point; the output set does not depend on it.
pub fn generate_cut_and_project_with(
    scheme: &CutProjectScheme,
    radius: f64,
    origin: Option<&[i64]>,
    cap: PointCap,
) -> Result<PointSet> {
    check_radius(radius)?;
    let d = scheme.phys_dim();
    let n = scheme.total_dim();
    let params = serde_json::json!({ "scheme": scheme, "radius": radius });
    let descriptor = Descriptor { density_source: Some("analytic".into()), ..Descriptor::new("cut_and_project", params) };
    if !(scheme.window.volume() > 0.0) {
        let mut ps = PointSet::with_labels(d, Vec::new(), Vec::new(), n, radius, descriptor);
        ps.separation_radius = 2.0 * radius;
        ps.claimed_density = Some(0.0);
        return Ok(ps);
    }
    scheme.validate()?;
    let density = scheme.density()?;
    check_cap(ball_volume(d, radius) * density * 1.05 + 1.0, cap)?;
    let b = scheme.basis_matrix()?;
    let t = scheme.stacked()?;
    let tb = &t * &b;
    let origin: Vec<i64> = origin.map(<[i64]>::to_vec).unwrap_or_else(|| vec![0; n]);
    if origin.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: origin.len() });
    }
    // Constraints on j = m - origin: T B (origin + j) in [-R, R]^d x bbox(W).
    let shift: Vec<f64> = (0..n).map(|r| (0..n).map(|c| tb[(r, c)] * origin[c] as f64).sum()).collect();
    let (wlo, whi) = scheme.window.bounding_box();
    let mut lo: Vec<f64> = vec![-radius; d];
    let mut hi: Vec<f64> = vec![radius; d];
    lo.extend(wlo);
    hi.extend(whi);
    for r in 0..n {
        lo[r] -= shift[r];
        hi[r] -= shift[r];
    }
    let found = scan_integer_region(&tb, &lo, &hi, cap, |j| {
        let m: Vec<i64> = j.iter().zip(&origin).map(|(a, o)| a + o).collect();
        let v: Vec<f64> = (0..n).map(|r| (0..n).map(|c| tb[(r, c)] * m[c] as f64).sum()).collect();
        let (x, y) = v.split_at(d);
        (norm(x) <= radius && scheme.window.contains(y)).then(|| (m, x.to_vec()))
    })?;
    let mut coords = Vec::with_capacity(found.len() * d);
    let mut labels = Vec::with_capacity(found.len() * n);
    for (m, x) in found {
        coords.extend(x);
        labels.extend(m);
    }
    let mut ps = PointSet::with_labels(d, coords, labels, n, radius, descriptor);
    let gap = geometry::min_pair_distance(d, &ps.coords);
    if let Some(g) = gap {
        if g < 1e-9 {
            return Err(Error::Invariant(format!("physical projection is not injective on the sample (gap {g:e})")));
        }
    }
    ps.separation_radius = gap.unwrap_or(2.0 * radius);
    ps.claimed_density = Some(density);
    Ok(ps)
}

// ---------------------------------------------------------------------------
// Asymptotically affine deformations

/// `psi(x) = A x + c (1 + |x|)^{-beta} u(x)` with a seeded unit-vector field `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    /// `d x d` linear part, by rows.
    pub linear_part: Vec<Vec<f64>>,
    pub decay_amplitude: f64,
    pub decay_exponent: f64,
    pub direction_seed: u64,
}

impl DeformationSpec {
    pub fn identity(dim: usize, amplitude: f64, exponent: f64, seed: u64) -> Self {
        DeformationSpec {
            linear_part: (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
            decay_amplitude: amplitude,
            decay_exponent: exponent,
            direction_seed: seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let a = matrix_from_rows(&self.linear_part, dim)?;
        if a.nrows() != dim {
            return Err(Error::invalid("linear part must be square"));
        }
        if !(a.determinant().abs() > 1e-12) {
            return Err(Error::invalid("linear part is singular"));
        }
        if !(self.decay_exponent > 0.0) {
            return Err(Error::invalid("decay exponent must be positive"));
        }
        Ok(())
    }

    /// Seeded isotropic unit vector attached to `x`.
    pub fn direction(&self, x: &[f64]) -> Vec<f64> {
        let mut r = rng::point_rng(self.direction_seed, x, stream::DIRECTION);
        loop {
            let v: Vec<f64> = x.iter().map(|_| StandardNormal.sample(&mut r)).collect();
            let l = norm(&v);
            if l > 1e-12 {
                return v.into_iter().map(|c| c / l).collect();
            }
        }
    }

    /// The decaying part `c (1 + |x|)^{-beta} u(x)`.
    pub fn correction(&self, x: &[f64]) -> Vec<f64> {
        if self.decay_amplitude == 0.0 {
            return vec![0.0; x.len()];
        }
        let scale = self.decay_amplitude * (1.0 + norm(x)).powf(-self.decay_exponent);
        self.direction(x).into_iter().map(|u| scale * u).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ax: Vec<f64> = self.linear_part.iter().map(|row| geometry::dot(row, x)).collect();
        ax.iter().zip(self.correction(x)).map(|(a, c)| a + c).collect()
    }

    /// Largest `|psi(x) - psi(x + k) - F(k)|` over `n_dirs` points of the
    /// sphere `|x| = r` (evenly spaced angles in the first coordinate plane).
    /// Pointwise deviations inherit the randomness of `u`; the maximum tracks
    /// the envelope `2c (1 + r)^{-beta}`.
    pub fn sampled_deviation(&self, k: &[f64], r: f64, n_dirs: usize) -> f64 {
        let d = k.len();
        let f = self.limit_shift(k);
        (0..n_dirs.max(1))
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / n_dirs.max(1) as f64;
                let mut x = vec![0.0; d];
                x[0] = r * t.cos();
                if d > 1 {
                    x[1] = r * t.sin();
                }
                let xk: Vec<f64> = x.iter().zip(k).map(|(a, b)| a + b).collect();
                let (a, b) = (self.apply(&x), self.apply(&xk));
                a.iter().zip(&b).zip(&f).map(|((a, b), f)| (a - b - f).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// The limit `F(k) = lim psi(x) - psi(x + k) = -A k`.
    pub fn limit_shift(&self, k: &[f64]) -> Vec<f64> {
        self.linear_part.iter().map(|row| -geometry::dot(row, k)).collect()
    }
}

pub fn generate_deformed_lattice(lattice: &Lattice, spec: &DeformationSpec, radius: f64) -> Result<PointSet> {
    generate_deformed_lattice_with(lattice, spec, radius, PointCap::default())
}

/// Points `psi(x)`, `x` in `L`, with `|psi(x)| <= R`. Labels carry the
/// integer coordinates of `x`, so `x <-> psi(x)` stays recoverable.
pub fn generate_deformed_lattice_with(lattice: &Lattice, spec: &DeformationSpec, radius: f64, cap: PointCap) -> Result<PointSet> {
    check_radius(radius)?;
    let d = lattice.dim();
    spec.validate(d)?;
    let image = lattice.transformed(&spec.linear_part)?;
    let reach = radius + spec.decay_amplitude.abs();
    let found = image.points_in_ball(reach, cap)?;
    let mut coords = Vec::with_capacity(found.len() * d);
    let mut labels = Vec::with_capacity(found.len() * d);
    for (m, ax) in found {
        let x = lattice.point(&m);
        let p: Vec<f64> = ax.iter().zip(spec.correction(&x)).map(|(a, c)| a + c).collect();
        if norm(&p) <= radius {
            coords.extend(p);
            labels.extend(m);
        }
    }
    let params = serde_json::json!({ "basis": lattice.basis(), "deformation": spec, "radius": radius });
    let descriptor = Descriptor { density_source: Some("analytic".into()), ..Descriptor::new("deformed_lattice", params) };
    let mut ps = PointSet::with_labels(d, coords, labels, d, radius, descriptor);
    let lattice_min = image.shortest_vector_length();
    let gap = geometry::min_pair_distance(d, &ps.coords);
    if let Some(g) = gap {
        if g < 1e-3 * lattice_min {
            return Err(Error::Invariant(format!(
                "deformation breaks uniform discreteness: gap {g:e} against lattice minimum {lattice_min}"
            )));
        }
    }
    ps.separation_radius = gap.unwrap_or(lattice_min);
    ps.claimed_density = Some(image.density());
    Ok(ps)
}

// ---------------------------------------------------------------------------
// Generator descriptors

/// Serializable description of a deterministic configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    IntegerLattice { dim: usize },
    Lattice { basis: Vec<Vec<f64>> },
    Fibonacci,
    CutAndProject { scheme: CutProjectScheme },
    Visible { dim: usize },
    DeformedLattice { basis: Vec<Vec<f64>>, deformation: DeformationSpec },
}

impl GeneratorSpec {
    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::IntegerLattice { dim } | GeneratorSpec::Visible { dim } => *dim,
            GeneratorSpec::Lattice { basis } | GeneratorSpec::DeformedLattice { basis, .. } => basis.len(),
            GeneratorSpec::Fibonacci => 1,
            GeneratorSpec::CutAndProject { scheme } => scheme.phys_dim(),
        }
    }

    /// The cut-and-project scheme behind this generator, if any.
    pub fn scheme(&self) -> Option<CutProjectScheme> {
        match self {
            GeneratorSpec::Fibonacci => Some(CutProjectScheme::fibonacci()),
            GeneratorSpec::CutAndProject { scheme } => Some(scheme.clone()),
            _ => None,
        }
    }

    /// The underlying lattice, for lattice and deformed-lattice generators.
    pub fn lattice(&self) -> Option<Lattice> {
        match self {
            GeneratorSpec::IntegerLattice { dim } => Some(Lattice::integer(*dim)),
            GeneratorSpec::Lattice { basis } | GeneratorSpec::DeformedLattice { basis, .. } => Lattice::new(basis.clone()).ok(),
            _ => None,
        }
    }

    pub fn generate(&self, radius: f64, cap: PointCap) -> Result<PointSet> {
        match self {
            GeneratorSpec::IntegerLattice { dim } => generate_lattice_with(&Lattice::integer(*dim), radius, cap),
            GeneratorSpec::Lattice { basis } => generate_lattice_with(&Lattice::new(basis.clone())?, radius, cap),
            GeneratorSpec::Fibonacci => generate_cut_and_project_with(&CutProjectScheme::fibonacci(), radius, None, cap),
            GeneratorSpec::CutAndProject { scheme } => generate_cut_and_project_with(scheme, radius, None, cap),
            GeneratorSpec::Visible { dim } => generate_visible_points_with(*dim, radius, cap),
            GeneratorSpec::DeformedLattice { basis, deformation } => {
                generate_deformed_lattice_with(&Lattice::new(basis.clone())?, deformation, radius, cap)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Density and separation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub radius: f64,
    pub count: usize,
    /// `#(X cap B_R) / Vol(B_R)`.
    pub density: f64,
    /// `|#(X cap B_R) - dens Vol(B_R)| / R^d`, when a density is claimed.
    pub discrepancy: Option<f64>,
}

/// Density trace over increasing radii.
pub fn estimate_density(ps: &PointSet, radii: &[f64]) -> Result<Vec<DensityRow>> {
    if radii.is_empty() {
        return Err(Error::invalid("radii must be nonempty"));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::invalid("radii must be positive and strictly increasing"));
    }
    if *radii.last().unwrap() > ps.generation_radius * (1.0 + 1e-12) {
        return Err(Error::invalid("radii must not exceed the generation radius"));
    }
    let mut norms: Vec<f64> = ps.points().map(norm).collect();
    norms.sort_by(f64::total_cmp);
    let d = ps.dim();
    Ok(radii
        .iter()
        .map(|&r| {
            let count = norms.partition_point(|&x| x <= r);
            let vol = ball_volume(d, r);
            DensityRow {
                radius: r,
                count,
                density: count as f64 / vol,
                discrepancy: ps.claimed_density.map(|rho| (count as f64 - rho * vol).abs() / r.powi(d as i32)),
            }
        })
        .collect())
}

/// Exact minimum pairwise distance.
pub fn min_separation(ps: &PointSet) -> Result<f64> {
    geometry::min_pair_distance(ps.dim(), ps.coords())
        .ok_or_else(|| Error::invalid("minimum separation needs at least two points"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_lattice_count(r: f64) -> usize {
        let m = r.floor() as i64;
        let mut c = 0;
        for x in -m..=m {
            for y in -m..=m {
                if ((x * x + y * y) as f64) <= r * r {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn z2_radius_5_has_81_points() {
        assert_eq!(brute_lattice_count(5.0), 81);
        let ps = generate_lattice(&Lattice::integer(2), 5.0).unwrap();
        assert_eq!(ps.len(), 81);
        assert_eq!(ps.separation_radius, 1.0);
        assert_eq!(ps.claimed_density, Some(1.0));
        ps.validate().unwrap();
    }

    #[test]
    fn z1_radius_10() {
        let ps = generate_lattice(&Lattice::integer(1), 10.0).unwrap();
        let xs: Vec<f64> = ps.points().map(|p| p[0]).collect();
        assert_eq!(xs, (-10..=10).map(|x| x as f64).collect::<Vec<_>>());
    }

    #[test]
    fn scaled_lattice_density_and_separation() {
        let ps = generate_lattice(&Lattice::diagonal(&[2.0, 2.0]), 5.0).unwrap();
        assert_eq!(ps.claimed_density, Some(0.25));
        let ps = generate_lattice(&Lattice::diagonal(&[2.0, 3.0]), 12.0).unwrap();
        assert_eq!(min_separation(&ps).unwrap(), 2.0);
        assert_eq!(ps.separation_radius, 2.0);
    }

    #[test]
    fn skewed_basis_shortest_vector() {
        // Basis (1,0), (5,1) spans Z^2; shortest vector has length 1.
        let l = Lattice::new(vec![vec![1.0, 0.0], vec![5.0, 1.0]]).unwrap();
        assert!((l.shortest_vector_length() - 1.0).abs() < 1e-12);
        let ps = generate_lattice(&l, 7.0).unwrap();
        assert_eq!(ps.len(), brute_lattice_count(7.0));
    }

    #[test]
    fn cap_is_enforced() {
        let err = generate_lattice_with(&Lattice::integer(2), 1000.0, PointCap(1000)).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }

    #[test]
    fn singular_lattice_is_rejected() {
        assert!(Lattice::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).is_err());
    }

    #[test]
    fn visible_points_small_radius() {
        // Brute-force oracle over |x_i| <= 2.
        let mut oracle = Vec::new();
        for x in -2i64..=2 {
            for y in -2i64..=2 {
                if x * x + y * y <= 4 && gcd(x, y) == 1 {
                    oracle.push((x, y));
                }
            }
        }
        let ps = generate_visible_points(2, 2.0).unwrap();
        assert_eq!(ps.len(), oracle.len());
        assert!(ps.points().any(|p| p == [1.0, 0.0]));
        assert!(!ps.points().any(|p| p == [2.0, 0.0]));
        assert!((ps.claimed_density.unwrap() - 6.0 / std::f64::consts::PI.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn visible_points_subset_of_lattice() {
        let v = generate_visible_points(3, 6.0).unwrap();
        let l = generate_lattice(&Lattice::integer(3), 6.0).unwrap();
        let all: std::collections::HashSet<Vec<i64>> = l.points().map(|p| p.iter().map(|&x| x as i64).collect()).collect();
        assert!(v.points().all(|p| all.contains(&p.iter().map(|&x| x as i64).collect::<Vec<_>>())));
        assert!(v.len() < l.len());
    }

    /// Independent slab enumeration for the Fibonacci scheme.
    fn fibonacci_oracle(radius: f64) -> Vec<f64> {
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        let s = (1.0 + phi * phi).sqrt();
        let (lo, hi) = (-1.0 / s, phi / s);
        let bound = (radius * 2.0 + 4.0) as i64;
        let mut xs = Vec::new();
        for a in -bound..=bound {
            for b in -bound..=bound {
                let (af, bf) = (a as f64, b as f64);
                let x = (phi * af + bf) / s;
                let y = (-af + phi * bf) / s;
                if x.abs() <= radius && lo <= y && y < hi {
                    xs.push(x);
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        xs
    }

    #[test]
    fn fibonacci_matches_slab_oracle() {
        let oracle = fibonacci_oracle(100.0);
        let ps = generate_cut_and_project(&CutProjectScheme::fibonacci(), 100.0).unwrap();
        assert_eq!(ps.len(), oracle.len());
        for (p, o) in ps.points().zip(&oracle) {
            assert!((p[0] - o).abs() < 1e-12);
        }
    }

    #[test]
    fn fibonacci_has_two_gaps_in_golden_ratio() {
        let oracle = fibonacci_oracle(60.0);
        let mut gaps: Vec<f64> = oracle.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        gaps.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(gaps.len(), 2);
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        assert!((gaps[1] / gaps[0] - phi).abs() < 1e-9);

        let ps = generate_cut_and_project(&CutProjectScheme::fibonacci(), 60.0).unwrap();
        assert!((min_separation(&ps).unwrap() - gaps[0]).abs() < 1e-9);
        assert!((ps.separation_radius - gaps[0]).abs() < 1e-9);
    }

    #[test]
    fn zero_width_window_is_empty() {
        let mut scheme = CutProjectScheme::fibonacci();
        scheme.window = Window::Box { lo: vec![0.1], hi: vec![0.1] };
        let ps = generate_cut_and_project(&scheme, 50.0).unwrap();
        assert!(ps.is_empty());
    }

    #[test]
    fn cut_and_project_is_origin_independent() {
        let scheme = CutProjectScheme::fibonacci();
        let a = generate_cut_and_project(&scheme, 80.0).unwrap();
        for origin in [[3i64, -7], [-40, 25], [100, 100]] {
            let b = generate_cut_and_project_with(&scheme, 80.0, Some(&origin), PointCap::default()).unwrap();
            assert_eq!(a.len(), b.len());
            for (p, q) in a.points().zip(b.points()) {
                assert!((p[0] - q[0]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_projection_is_rejected() {
        let mut scheme = CutProjectScheme::fibonacci();
        scheme.proj_int = vec![scheme.proj_phys[0].clone()];
        assert!(matches!(generate_cut_and_project(&scheme, 10.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn rational_slope_breaks_injectivity() {
        // Physical line along (1, 0): every column of Z^2 collapses.
        let scheme = CutProjectScheme {
            lattice_basis: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            proj_phys: vec![vec![1.0, 0.0]],
            proj_int: vec![vec![0.0, 1.0]],
            window: Window::Box { lo: vec![-1.5], hi: vec![1.5] },
        };
        assert!(matches!(generate_cut_and_project(&scheme, 10.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn fibonacci_density_and_dual_module() {
        let scheme = CutProjectScheme::fibonacci();
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        let rho = scheme.density().unwrap();
        assert!((rho - phi * phi / (1.0 + phi * phi).sqrt()).abs() < 1e-12);
        let peaks = scheme.dual_module(2.5, 0.05).unwrap();
        assert!((peaks[0].amplitude.norm() - rho).abs() < 1e-12);
        assert!(peaks[0].frequency[0].abs() < 1e-12);
        assert!(peaks.windows(2).all(|w| w[0].amplitude.norm() >= w[1].amplitude.norm()));
        let ps = generate_cut_and_project(&scheme, 2000.0).unwrap();
        let trace = estimate_density(&ps, &[2000.0]).unwrap();
        assert!((trace[0].density - rho).abs() < 1e-3);
    }

    #[test]
    fn deformation_with_zero_amplitude_is_affine_image() {
        let lattice = Lattice::integer(2);
        let spec = DeformationSpec {
            linear_part: vec![vec![1.0, 0.5], vec![0.0, 2.0]],
            decay_amplitude: 0.0,
            decay_exponent: 1.0,
            direction_seed: 3,
        };
        let deformed = generate_deformed_lattice(&lattice, &spec, 20.0).unwrap();
        let affine = generate_lattice(&lattice.transformed(&spec.linear_part).unwrap(), 20.0).unwrap();
        assert_eq!(deformed.coords(), affine.coords());
    }

    #[test]
    fn deformation_shift_limit_one_dimensional() {
        let spec = DeformationSpec::identity(1, 0.3, 1.0, 11);
        let diff = spec.apply(&[40.0])[0] - spec.apply(&[41.0])[0];
        assert!((diff + 1.0).abs() <= 0.3 * (1.0 / 41.0 + 1.0 / 42.0) + 1e-12);
        let ps = generate_deformed_lattice(&Lattice::integer(1), &spec, 50.0).unwrap();
        ps.validate().unwrap();
    }

    #[test]
    fn deformation_limit_is_additive_and_approached() {
        let spec = DeformationSpec {
            linear_part: vec![vec![1.2, 0.3], vec![-0.1, 0.9]],
            decay_amplitude: 0.3,
            decay_exponent: 1.0,
            direction_seed: 5,
        };
        let (k1, k2) = ([1.0, 0.0], [2.0, -3.0]);
        let sum: Vec<f64> = spec.limit_shift(&k1).iter().zip(spec.limit_shift(&k2)).map(|(a, b)| a + b).collect();
        let direct = spec.limit_shift(&[3.0, -3.0]);
        assert!(sum.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-9));

        for k in [[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]] {
            let devs: Vec<f64> = [1e2, 1e3, 1e4].iter().map(|&r| spec.sampled_deviation(&k, r, 64)).collect();
            assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        }
    }

    #[test]
    fn density_trace_lattice_and_empty() {
        let ps = generate_lattice(&Lattice::integer(2), 150.0).unwrap();
        let trace = estimate_density(&ps, &[50.0, 100.0, 150.0]).unwrap();
        for row in &trace {
            assert_eq!(row.count, brute_lattice_count(row.radius));
            assert!((row.density - 1.0).abs() < 0.05);
        }
        let empty =
            PointSet::from_points(2, vec![], 10.0, Some(1.0), None, Descriptor::new("empty", serde_json::Value::Null)).unwrap();
        let trace = estimate_density(&empty, &[1.0, 5.0]).unwrap();
        assert!(trace.iter().all(|r| r.density == 0.0));
    }

    #[test]
    fn gauss_boundary_constant_is_stable() {
        let ps = generate_lattice(&Lattice::integer(2), 200.0).unwrap();
        let radii: Vec<f64> = (1..=20).map(|k| 10.0 * k as f64).collect();
        let trace = estimate_density(&ps, &radii).unwrap();
        // |N(R) - pi R^2| <= C R with one C over the whole range.
        let c_max = trace.iter().map(|r| r.discrepancy.unwrap() * r.radius).fold(0.0, f64::max);
        assert!(c_max < 2.0 * std::f64::consts::PI, "C = {c_max}");
    }

    #[test]
    fn min_separation_needs_two_points() {
        let one =
            PointSet::from_points(2, vec![0.0, 0.0], 1.0, None, None, Descriptor::new("one", serde_json::Value::Null)).unwrap();
        assert!(min_separation(&one).is_err());
    }
}
