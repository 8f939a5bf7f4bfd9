//! EUGkM: publish a noisy uniform-grid histogram once, then run k-means on
//! the cell centres weighted by their signed noisy counts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{DpError, Result};
use crate::kmeans::{Centroids, DEFAULT_TOL_FACTOR};
use crate::mechanisms::{laplace_sample, Budget, Rng};

pub const DEFAULT_THETA: f64 = 10.0;

/// Clusters with less noisy mass than this keep their previous centroid.
pub const MIN_CLUSTER_MASS: f64 = 0.5;

/// Upper bound on the number of cells a synopsis may hold. Grids sized from
/// the cell-count formula are capped to stay below it.
pub const MAX_CELLS: usize = 1 << 20;

const CHUNK: usize = 4096;

/// Target cell count `(N * eps / theta)^(2d / (2 + d))`.
pub fn choose_m(n: usize, eps: f64, d: usize, theta: f64) -> f64 {
    let d = d as f64;
    (n as f64 * eps / theta).powf(2.0 * d / (2.0 + d))
}

/// `m` equal-width cells per dimension over `[-r, r]^d`. Cells are half-open
/// `[lo, hi)` except the last one in each dimension, which is closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub m: usize,
    pub r: f64,
}

impl Grid {
    pub fn new(d: usize, m: usize, r: f64) -> Result<Self> {
        if d == 0 || m == 0 || !(r > 0.0 && r.is_finite()) {
            return Err(DpError::param(format!("invalid grid d={d} m={m} r={r}")));
        }
        let cells = (m as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
        if cells > MAX_CELLS as u128 {
            return Err(DpError::param(format!(
                "grid with {m}^{d} cells exceeds the limit of {MAX_CELLS}"
            )));
        }
        Ok(Grid { d, m, r })
    }

    pub fn n_cells(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.r / self.m as f64
    }

    fn coord_cell(&self, x: f64) -> usize {
        let c = ((x + self.r) / self.cell_width()).floor();
        (c.max(0.0) as usize).min(self.m - 1)
    }

    /// Row-major flat index; the first dimension varies slowest.
    pub fn cell_index(&self, point: &[f64]) -> usize {
        point.iter().fold(0, |acc, &x| acc * self.m + self.coord_cell(x))
    }

    fn coord_center(&self, c: usize) -> f64 {
        -self.r + (c as f64 + 0.5) * self.cell_width()
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        let mut rem = index;
        for slot in out.iter_mut().rev() {
            *slot = self.coord_center(rem % self.m);
            rem /= self.m;
        }
        out
    }
}

/// Grid with `m = ceil(M^(1/d))` cells per side, so `m^d >= M`, unless that
/// would exceed [`MAX_CELLS`]; then the largest `m` that fits is used.
pub fn grid_layout(d: usize, r: f64, m_target: f64) -> Result<Grid> {
    if !(m_target.is_finite() && d >= 1) {
        return Err(DpError::param(format!("invalid cell target {m_target}")));
    }
    let target = m_target.max(1.0);
    let root = target.powf(1.0 / d as f64);
    let mut m = (root - 1e-9 * root).ceil().max(1.0) as usize;
    while (m as f64).powi(d as i32) < target * (1.0 - 1e-12) {
        m += 1;
    }
    while m > 1 && (m as u128).checked_pow(d as u32).is_none_or(|c| c > MAX_CELLS as u128) {
        m -= 1;
    }
    Grid::new(d, m, r)
}

/// Published grid of noisy counts. Counts are neither rounded nor clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Synopsis {
    pub grid: Grid,
    pub counts: Vec<f64>,
    pub eps_used: f64,
}

pub fn exact_histogram(data: &Dataset, grid: &Grid) -> Vec<f64> {
    let mut counts = vec![0.0; grid.n_cells()];
    for x in data.rows() {
        counts[grid.cell_index(x)] += 1.0;
    }
    counts
}

/// Adds `Lap(1/eps)` to every cell. Cells are disjoint, so one `eps` covers
/// the whole grid.
pub fn publish_synopsis(data: &Dataset, grid: &Grid, eps: f64, rng: &mut Rng, budget: &mut Budget) -> Result<Synopsis> {
    if data.d() != grid.d {
        return Err(DpError::param("grid and data dimensions differ"));
    }
    if data.r().is_none_or(|r| r > grid.r) {
        return Err(DpError::param("data domain is not covered by the grid"));
    }
    budget.check("eugkm.synopsis", eps)?;
    let mut counts = exact_histogram(data, grid);
    let scale = 1.0 / eps;
    for c in counts.iter_mut() {
        *c += laplace_sample(scale, rng)?;
    }
    budget.spend("eugkm.synopsis", eps)?;
    Ok(Synopsis {
        grid: *grid,
        counts,
        eps_used: eps,
    })
}

impl Synopsis {
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = format!("{} {} {} {}\n", g.d, g.m, g.r, self.eps_used);
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{i} {c:.16e}").expect("writing to a String");
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Synopsis> {
        let err = |line: usize, message: String| DpError::Format {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty synopsis file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(1, "header must be `d m r eps_used`".into()));
        }
        let bad = |what: &str| err(1, format!("bad {what} in header"));
        let d: usize = fields[0].parse().map_err(|_| bad("d"))?;
        let m: usize = fields[1].parse().map_err(|_| bad("m"))?;
        let r: f64 = fields[2].parse().map_err(|_| bad("r"))?;
        let eps_used: f64 = fields[3].parse().map_err(|_| bad("eps_used"))?;
        let grid = Grid::new(d, m, r).map_err(|e| err(1, e.to_string()))?;
        let mut counts = Vec::with_capacity(grid.n_cells());
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let (Some(i), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(lineno, "expected `index count`".into()));
            };
            let i: usize = i.parse().map_err(|_| err(lineno, format!("bad cell index `{i}`")))?;
            if i != counts.len() {
                return Err(err(lineno, format!("expected cell {} but found {i}", counts.len())));
            }
            let v: f64 = v.parse().map_err(|_| err(lineno, format!("bad count `{v}`")))?;
            counts.push(v);
        }
        if counts.len() != grid.n_cells() {
            return Err(err(
                text.lines().count(),
                format!("expected {} cells, found {}", grid.n_cells(), counts.len()),
            ));
        }
        Ok(Synopsis { grid, counts, eps_used })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| DpError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Synopsis> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DpError::io(path, e))?;
        Synopsis::from_text(&text, &path.display().to_string())
    }

    /// Per-cluster signed mass and weighted coordinate sums, plus the weighted
    /// squared-distance total. Chunks are reduced in index order, so the
    /// result does not depend on thread scheduling.
    ///
    /// Squared distances split by dimension, so per-dimension tables of
    /// `(center_i - o_ji)^2` plus prefix sums along the odometer make the
    /// nearest-centroid search cost about `k` additions per cell. Summation
    /// order matches [`nearest`], so assignments are identical.
    fn weighted_sums(&self, c: &Centroids) -> (Vec<f64>, Vec<f64>, f64) {
        let (k, d, m) = (c.k(), c.d(), self.grid.m);
        let n = self.counts.len();
        // table[(dim * m + digit) * k + j]
        let mut table = vec![0.0; d * m * k];
        for dim in 0..d {
            for digit in 0..m {
                let x = self.grid.coord_center(digit);
                for (j, o) in c.iter().enumerate() {
                    table[(dim * m + digit) * k + j] = (x - o[dim]) * (x - o[dim]);
                }
            }
        }
        let partials: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let mut mass = vec![0.0; k];
                let mut sums = vec![0.0; k * d];
                let mut sq = 0.0;
                let start = chunk * CHUNK;
                let end = ((chunk + 1) * CHUNK).min(n);
                let mut digits = vec![0usize; d];
                let mut rem = start;
                for slot in digits.iter_mut().rev() {
                    *slot = rem % m;
                    rem /= m;
                }
                let mut center: Vec<f64> = digits.iter().map(|&g| self.grid.coord_center(g)).collect();
                // prefix[level * k + j]: distance over dimensions below `level`.
                let mut prefix = vec![0.0; d * k];
                let refresh = |prefix: &mut [f64], digits: &[usize], from: usize| {
                    for level in from.max(1)..d {
                        let row = &table[((level - 1) * m + digits[level - 1]) * k..][..k];
                        for j in 0..k {
                            prefix[level * k + j] = prefix[(level - 1) * k + j] + row[j];
                        }
                    }
                };
                refresh(&mut prefix, &digits, 1);
                for idx in start..end {
                    let last = &table[((d - 1) * m + digits[d - 1]) * k..][..k];
                    let base = &prefix[(d - 1) * k..d * k];
                    let mut best = (0, f64::INFINITY);
                    for j in 0..k {
                        let dist = base[j] + last[j];
                        if dist < best.1 {
                            best = (j, dist);
                        }
                    }
                    let (j, dist) = best;
                    let w = self.counts[idx];
                    mass[j] += w;
                    for (acc, v) in sums[j * d..(j + 1) * d].iter_mut().zip(&center) {
                        *acc += w * v;
                    }
                    sq += w * dist;

                    let mut dim = d - 1;
                    loop {
                        digits[dim] += 1;
                        if digits[dim] < m {
                            center[dim] = self.grid.coord_center(digits[dim]);
                            break;
                        }
                        digits[dim] = 0;
                        center[dim] = self.grid.coord_center(0);
                        if dim == 0 {
                            break;
                        }
                        dim -= 1;
                    }
                    if dim + 1 < d {
                        refresh(&mut prefix, &digits, dim + 1);
                    }
                }
                (mass, sums, sq)
            })
            .collect();
        let mut mass = vec![0.0; k];
        let mut sums = vec![0.0; k * d];
        let mut sq = 0.0;
        for (m, s, q) in partials {
            mass.iter_mut().zip(m).for_each(|(a, b)| *a += b);
            sums.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            sq += q;
        }
        (mass, sums, sq)
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Weighted Lloyd over cell centres. Negative counts stay in the sums; a
/// cluster with mass below [`MIN_CLUSTER_MASS`] keeps its centroid. Updated
/// centroids are clamped into the domain. Signed weights can keep the
/// iteration from settling, so the iterate with the lowest synopsis NICV is
/// returned; with non-negative weights that is the last one.
pub fn synopsis_kmeans(s: &Synopsis, init: &Centroids, max_iter: usize, tol: f64) -> Centroids {
    let (k, d, r) = (init.k(), init.d(), s.grid.r);
    assert_eq!(d, s.grid.d, "centroids and synopsis disagree on dimension");
    let mut current = init.clone();
    let mut best: Option<(Centroids, f64)> = None;
    for _ in 0..max_iter {
        let (mass, sums, sq) = s.weighted_sums(&current);
        if best.as_ref().is_none_or(|(_, b)| sq <= *b) {
            best = Some((current.clone(), sq));
        }
        let mut next = current.as_flat().to_vec();
        for j in 0..k {
            if mass[j] >= MIN_CLUSTER_MASS {
                for i in 0..d {
                    next[j * d + i] = (sums[j * d + i] / mass[j]).clamp(-r, r);
                }
            }
        }
        let next = Centroids::from_flat(next, d).expect("finite centroids");
        let moved = next.max_displacement(&current);
        current = next;
        if moved < tol {
            break;
        }
    }
    let (_, _, sq) = s.weighted_sums(&current);
    match best {
        Some((c, b)) if b < sq => c,
        _ => current,
    }
}

/// Iteration cap for [`synopsis_kmeans_default`].
pub const SYNOPSIS_MAX_ITER: usize = 50;

pub fn synopsis_kmeans_default(s: &Synopsis, init: &Centroids) -> Centroids {
    synopsis_kmeans(s, init, SYNOPSIS_MAX_ITER, DEFAULT_TOL_FACTOR * s.grid.r)
}

/// NICV measured against the synopsis: signed-weight mean squared distance
/// from cell centres to their nearest centroid. The denominator is at least 1.
pub fn synopsis_nicv(s: &Synopsis, c: &Centroids) -> f64 {
    let (_, _, sq) = s.weighted_sums(c);
    sq / s.total_mass().max(1.0)
}

/// Runs synopsis k-means from every initial set and returns the result with
/// the lowest synopsis NICV (ties keep the earliest).
pub fn best_on_synopsis(s: &Synopsis, init_sets: &[Centroids]) -> Result<Centroids> {
    if init_sets.is_empty() {
        return Err(DpError::param("need at least one initial centroid set"));
    }
    let runs: Vec<(Centroids, f64)> = init_sets
        .par_iter()
        .map(|init| {
            let c = synopsis_kmeans_default(s, init);
            let score = synopsis_nicv(s, &c);
            (c, score)
        })
        .collect();
    let mut best = 0;
    for (i, (_, score)) in runs.iter().enumerate() {
        if *score < runs[best].1 {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("non-empty").0)
}

/// Grid sized by [`choose_m`] for this dataset and budget.
pub fn eugkm_grid(n: usize, d: usize, r: f64, eps: f64, theta: f64) -> Result<Grid> {
    grid_layout(d, r, choose_m(n, eps, d, theta))
}

pub fn eugkm(
    data: &Dataset,
    k: usize,
    eps: f64,
    theta: f64,
    init_sets: &[Centroids],
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<(Centroids, Synopsis)> {
    let r = data.domain()?;
    if init_sets.is_empty() {
        return Err(DpError::param("need at least one initial centroid set"));
    }
    if let Some(bad) = init_sets.iter().find(|c| c.k() != k || c.d() != data.d()) {
        return Err(DpError::param(format!(
            "initial set has k={}, d={}; expected k={k}, d={}",
            bad.k(),
            bad.d(),
            data.d()
        )));
    }
    let grid = eugkm_grid(data.n(), data.d(), r, eps, theta)?;
    let synopsis = publish_synopsis(data, &grid, eps, rng, budget)?;
    // From here on only the synopsis is used.
    let best = best_on_synopsis(&synopsis, init_sets)?;
    Ok((best, synopsis))
}
