//! Non-private Lloyd clustering, NICV scoring and the data-independent
//! sphere-packing initializer shared by every algorithm.

use rand::Rng as _;

use crate::data::Dataset;
use crate::error::{DpError, Result};
use crate::mechanisms::Rng;

/// Ordered list of `k` centroids in `d` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    points: Vec<f64>,
    k: usize,
    d: usize,
}

impl Centroids {
    pub fn from_flat(points: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return Err(DpError::param(format!(
                "centroid buffer of length {} is not a non-empty multiple of d={d}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(DpError::param("centroid coordinates must be finite"));
        }
        let k = points.len() / d;
        Ok(Centroids { points, k, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(DpError::param("centroid rows have differing dimensions"));
        }
        Centroids::from_flat(rows.concat(), d)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.points[j * self.d..(j + 1) * self.d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.points
    }

    pub fn clamp_to(&mut self, r: f64) {
        self.points.iter_mut().for_each(|v| *v = v.clamp(-r, r));
    }

    pub fn within(&self, r: f64) -> bool {
        self.points.iter().all(|v| (-r..=r).contains(v))
    }

    /// Largest Euclidean distance between corresponding centroids.
    pub fn max_displacement(&self, other: &Centroids) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest per-coordinate absolute difference.
    pub fn max_coord_diff(&self, other: &Centroids) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cluster index per point, 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
#[inline]
pub fn nearest(point: &[f64], c: &Centroids) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, o) in c.iter().enumerate() {
        let dist = sq_dist(point, o);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn check_dims(data: &Dataset, c: &Centroids) {
    assert_eq!(data.d(), c.d(), "dataset and centroids disagree on dimension");
}

pub fn assign(data: &Dataset, c: &Centroids) -> Assignment {
    check_dims(data, c);
    Assignment {
        labels: data.rows().map(|x| nearest(x, c).0).collect(),
    }
}

/// Per-cluster point counts and coordinate sums for a given assignment.
pub(crate) fn cluster_sums(data: &Dataset, a: &Assignment, k: usize) -> (Vec<f64>, Vec<f64>) {
    let d = data.d();
    let mut counts = vec![0.0; k];
    let mut sums = vec![0.0; k * d];
    for (x, &j) in data.rows().zip(&a.labels) {
        counts[j] += 1.0;
        sums[j * d..(j + 1) * d]
            .iter_mut()
            .zip(x)
            .for_each(|(s, v)| *s += v);
    }
    (counts, sums)
}

/// Cluster means; an empty cluster keeps its previous centroid.
pub fn update_centroids(data: &Dataset, a: &Assignment, previous: &Centroids) -> Centroids {
    check_dims(data, previous);
    let (k, d) = (previous.k(), previous.d());
    let (counts, sums) = cluster_sums(data, a, k);
    let mut out = previous.as_flat().to_vec();
    for j in 0..k {
        if counts[j] > 0.0 {
            for i in 0..d {
                out[j * d + i] = sums[j * d + i] / counts[j];
            }
        }
    }
    Centroids { points: out, k, d }
}

pub fn lloyd_step(data: &Dataset, c: &Centroids) -> Centroids {
    update_centroids(data, &assign(data, c), c)
}

/// Outcome of a Lloyd run, including how many assign/update rounds ran.
#[derive(Clone, Debug)]
pub struct LloydRun {
    pub centroids: Centroids,
    pub iterations: usize,
}

/// Lloyd iterations until the largest centroid move is below `tol` or
/// `max_iter` rounds have run.
pub fn lloyd_run(data: &Dataset, init: &Centroids, max_iter: usize, tol: f64) -> LloydRun {
    let mut current = init.clone();
    let mut iterations = 0;
    while iterations < max_iter {
        let next = lloyd_step(data, &current);
        iterations += 1;
        let moved = next.max_displacement(&current);
        current = next;
        if moved < tol {
            break;
        }
    }
    LloydRun {
        centroids: current,
        iterations,
    }
}

pub fn lloyd(data: &Dataset, init: &Centroids, max_iter: usize, tol: f64) -> Centroids {
    lloyd_run(data, init, max_iter, tol).centroids
}

/// Default stopping rule: tolerance `1e-6 * r`, at most 1000 rounds.
pub fn lloyd_default(data: &Dataset, init: &Centroids) -> Centroids {
    let r = data.r().unwrap_or(1.0);
    lloyd(data, init, DEFAULT_MAX_ITER, DEFAULT_TOL_FACTOR * r)
}

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL_FACTOR: f64 = 1e-6;

/// Exactly `t` Lloyd rounds with no convergence test.
pub fn lloyd_steps(data: &Dataset, init: &Centroids, t: usize) -> Centroids {
    (0..t).fold(init.clone(), |c, _| lloyd_step(data, &c))
}

/// Sum over points of the squared distance to the nearest centroid.
pub fn cost(data: &Dataset, c: &Centroids) -> f64 {
    check_dims(data, c);
    data.rows().map(|x| nearest(x, c).1).sum()
}

/// Normalized intra-cluster variance: mean squared distance to the nearest centroid.
pub fn nicv(data: &Dataset, c: &Centroids) -> f64 {
    cost(data, c) / data.n() as f64
}

/// `k` points drawn uniformly from `[-r, r]^d`.
pub fn uniform_init(k: usize, d: usize, r: f64, rng: &mut Rng) -> Centroids {
    let points = (0..k * d).map(|_| rng.gen_range(-r..=r)).collect();
    Centroids { points, k, d }
}

/// Sphere-packing initialization result and the radius it achieved.
#[derive(Clone, Debug)]
pub struct Packing {
    pub centroids: Centroids,
    pub radius: f64,
}

const PACKING_ATTEMPTS: usize = 200;
const PACKING_DRAWS_PER_CENTROID: usize = 20;
const PACKING_MAX_BISECTIONS: usize = 30;
const PACKING_TOL_FACTOR: f64 = 1e-3;

/// One randomized attempt to place `k` centres at least `a` from every border
/// and `2a` from each other.
fn try_place(d: usize, k: usize, r: f64, a: f64, rng: &mut Rng) -> Option<Vec<f64>> {
    let half = r - a;
    let mut placed: Vec<f64> = Vec::with_capacity(k * d);
    let mut candidate = vec![0.0; d];
    for _ in 0..k {
        let mut ok = false;
        for _ in 0..PACKING_DRAWS_PER_CENTROID {
            candidate
                .iter_mut()
                .for_each(|v| *v = if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 });
            let min_sep = (2.0 * a) * (2.0 * a);
            if placed.chunks_exact(d).all(|p| sq_dist(p, &candidate) >= min_sep) {
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
        placed.extend_from_slice(&candidate);
    }
    Some(placed)
}

fn place(d: usize, k: usize, r: f64, a: f64, rng: &mut Rng) -> Option<Vec<f64>> {
    (0..PACKING_ATTEMPTS).find_map(|_| try_place(d, k, r, a, rng))
}

/// Binary search for the largest radius `a` at which `k` centres can be
/// placed, then return that placement. Consumes no privacy budget.
pub fn sphere_packing(d: usize, k: usize, r: f64, seed: u64) -> Packing {
    assert!(k >= 1 && d >= 1 && r > 0.0);
    let mut rng = Rng::new(seed);
    let mut best = place(d, k, r, 0.0, &mut rng).expect("radius zero is always feasible");
    let (mut lo, mut hi) = (0.0, r);
    for _ in 0..PACKING_MAX_BISECTIONS {
        if hi - lo <= PACKING_TOL_FACTOR * r {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match place(d, k, r, mid, &mut rng) {
            Some(points) => {
                best = points;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    Packing {
        centroids: Centroids { points: best, k, d },
        radius: lo,
    }
}

pub fn sphere_packing_init(d: usize, k: usize, r: f64, seed: u64) -> Centroids {
    sphere_packing(d, k, r, seed).centroids
}
