//! Small vector helpers, compensated summation and a uniform grid for
//! fixed-radius neighbor queries.

use std::collections::HashMap;

use num_complex::Complex64;

pub const MAX_GRID_DIM: usize = 4;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lexicographic comparison with a total order on floats.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `exp(-2 pi i t)` with `t` reduced modulo one first, so integer phases are
/// exactly `1 + 0i`.
#[inline]
pub fn unit_phase(t: f64) -> Complex64 {
    let frac = t - t.round();
    if frac == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let (s, c) = (2.0 * std::f64::consts::PI * frac).sin_cos();
    Complex64::new(c, -s)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ComplexKahan {
    re: Kahan,
    im: Kahan,
}

impl ComplexKahan {
    #[inline]
    pub fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

pub type CellKey = [i64; MAX_GRID_DIM];

/// Points bucketed on a cubic grid of side `cell`.
#[derive(Debug)]
pub struct Grid<'a> {
    dim: usize,
    coords: &'a [f64],
    cell: f64,
    buckets: HashMap<CellKey, Vec<u32>>,
}

impl<'a> Grid<'a> {
    /// `coords` is a flat array of `dim`-vectors.
    pub fn new(dim: usize, coords: &'a [f64], cell: f64) -> Self {
        assert!(dim <= MAX_GRID_DIM, "grid search supports at most {MAX_GRID_DIM} dimensions");
        assert!(cell > 0.0 && cell.is_finite());
        let mut buckets: HashMap<CellKey, Vec<u32>> = HashMap::new();
        for (i, p) in coords.chunks_exact(dim.max(1)).enumerate() {
            buckets.entry(cell_of(p, cell)).or_default().push(i as u32);
        }
        Grid { dim, coords, cell, buckets }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Calls `f(j, |q_j - p|^2)` for every stored point within `radius` of
    /// `p`, in increasing index order.
    pub fn for_each_within(&self, p: &[f64], radius: f64, mut f: impl FnMut(usize, f64)) {
        let center = cell_of(p, self.cell);
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil().max(1.0) as i64;
        let side = (2 * reach + 1) as usize;
        let mut hits: Vec<(u32, f64)> = Vec::new();
        let n_cells = side.pow(self.dim as u32);
        for code in 0..n_cells {
            let mut key = center;
            let mut c = code;
            for k in key.iter_mut().take(self.dim) {
                *k += (c % side) as i64 - reach;
                c /= side;
            }
            if let Some(bucket) = self.buckets.get(&key) {
                for &j in bucket {
                    let d2 = dist2(p, self.point(j as usize));
                    if d2 <= r2 {
                        hits.push((j, d2));
                    }
                }
            }
        }
        hits.sort_unstable_by_key(|h| h.0);
        for (j, d2) in hits {
            f(j as usize, d2);
        }
    }
}

fn cell_of(p: &[f64], cell: f64) -> CellKey {
    let mut key = [0i64; MAX_GRID_DIM];
    for (k, x) in key.iter_mut().zip(p) {
        *k = (x / cell).floor() as i64;
    }
    key
}

/// Exact minimum pairwise distance (grid search with a doubling cell size;
/// brute force above [`MAX_GRID_DIM`]). `None` for fewer than two points.
pub fn min_pair_distance(dim: usize, coords: &[f64]) -> Option<f64> {
    let n = coords.len() / dim.max(1);
    if n < 2 {
        return None;
    }
    if dim > MAX_GRID_DIM || n < 64 {
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(dist2(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]));
            }
        }
        return Some(best.sqrt());
    }
    // Initial guess: mean spacing of the bounding box.
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in coords.chunks_exact(dim) {
        for k in 0..dim {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let vol: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-12)).product();
    let mut cell = (vol / n as f64).powf(1.0 / dim as f64).max(1e-12);
    loop {
        let grid = Grid::new(dim, coords, cell);
        let mut best = f64::INFINITY;
        for i in 0..n {
            grid.for_each_within(grid.point(i), cell, |j, d2| {
                if j != i && d2 < best {
                    best = d2;
                }
            });
        }
        if best.is_finite() {
            return Some(best.sqrt());
        }
        cell *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_phase_is_exact() {
        assert_eq!(unit_phase(12345.0), Complex64::new(1.0, 0.0));
        let z = unit_phase(0.25);
        assert!((z - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = Kahan::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn min_distance_grid_matches_brute_force() {
        let mut coords = Vec::new();
        let mut s = 17u64;
        for _ in 0..500 {
            for _ in 0..2 {
                s = crate::rng::splitmix64(s);
                coords.push((s >> 11) as f64 / (1u64 << 53) as f64 * 40.0);
            }
        }
        let grid = min_pair_distance(2, &coords).unwrap();
        let mut brute = f64::INFINITY;
        for i in 0..500 {
            for j in i + 1..500 {
                brute = brute.min(dist2(&coords[2 * i..2 * i + 2], &coords[2 * j..2 * j + 2]));
            }
        }
        assert_eq!(grid, brute.sqrt());
    }
}
