//! Sample-and-aggregate k-means (GkM): cluster disjoint blocks without
//! privacy, average the block centroids position by position, then add
//! Laplace noise calibrated to the fixed data domain.

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;

use crate::data::{split_sizes, Dataset};
use crate::error::{DpError, Result};
use crate::kmeans::{lloyd, sphere_packing_init, Centroids, DEFAULT_TOL_FACTOR};
use crate::mechanisms::{laplace_sample, Budget, Rng};

/// Lloyd round cap for each block.
pub const BLOCK_MAX_ITER: usize = 50;

/// How the number of blocks `ell` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockPolicy {
    /// `ell = round(N^0.4)`.
    NPow04,
    /// Blocks of about `3k` points: `ell = floor(N / 3k)`.
    ThreeK,
    Explicit(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GkmParams {
    pub policy: BlockPolicy,
    /// Double the noise scale, as if half the budget had gone to estimating
    /// the output range.
    pub half_budget: bool,
    /// Sort each block's centroids lexicographically before averaging.
    pub canonical_sort: bool,
}

impl GkmParams {
    pub fn new(policy: BlockPolicy) -> Self {
        GkmParams {
            policy,
            half_budget: false,
            canonical_sort: false,
        }
    }
}

pub fn resolve_ell(n: usize, k: usize, policy: BlockPolicy) -> Result<usize> {
    if n == 0 {
        return Err(DpError::param("cannot split an empty dataset into blocks"));
    }
    match policy {
        BlockPolicy::NPow04 => Ok(((n as f64).powf(0.4).round() as usize).clamp(1, n)),
        BlockPolicy::ThreeK => Ok((n / (3 * k.max(1))).clamp(1, n)),
        BlockPolicy::Explicit(ell) if ell == 0 || ell > n => Err(DpError::param(format!(
            "explicit block count {ell} must lie in [1, {n}]"
        ))),
        BlockPolicy::Explicit(ell) => Ok(ell),
    }
}

/// Random permutation of the rows split into `ell` blocks whose sizes differ
/// by at most one.
pub fn partition_blocks(data: &Dataset, ell: usize, rng: &mut Rng) -> Vec<Dataset> {
    assert!(ell >= 1 && ell <= data.n(), "block count {ell} outside [1, {}]", data.n());
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(rng);
    let mut start = 0;
    split_sizes(data.n(), ell)
        .into_iter()
        .map(|size| {
            let block = data.select(&order[start..start + size]);
            start += size;
            block
        })
        .collect()
}

/// Laplace scale `2 * (max - min) * k * d / (ell * eps)` with the output
/// range fixed to `[-r, r]`.
pub fn noise_scale(r: f64, k: usize, d: usize, ell: usize, eps: f64) -> f64 {
    2.0 * (2.0 * r) * (k * d) as f64 / (ell as f64 * eps)
}

fn lexicographic(c: &Centroids) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = c.iter().collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("finite centroids"));
    rows
}

/// Data-independent initialization shared by every block, so that centroid
/// `j` of each block tends to describe the same cluster.
pub fn block_init(k: usize, d: usize, r: f64, rng: &mut Rng) -> Centroids {
    sphere_packing_init(d, k, r, rng.next_u64())
}

/// Average of per-block Lloyd outputs. The shared initialization is drawn
/// before the partition.
fn aggregate(data: &Dataset, k: usize, ell: usize, canonical_sort: bool, rng: &mut Rng) -> Result<Centroids> {
    let r = data.domain()?;
    let d = data.d();
    let init = block_init(k, d, r, rng);
    let blocks = partition_blocks(data, ell, rng);
    let block_centroids: Vec<Centroids> = blocks
        .par_iter()
        .map(|b| lloyd(b, &init, BLOCK_MAX_ITER, DEFAULT_TOL_FACTOR * r))
        .collect();
    let mut mean = vec![0.0; k * d];
    for c in &block_centroids {
        let rows: Vec<&[f64]> = if canonical_sort { lexicographic(c) } else { c.iter().collect() };
        for (j, row) in rows.into_iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                mean[j * d + i] += v;
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= ell as f64);
    Centroids::from_flat(mean, d)
}

/// The aggregate without noise; isolates the sample-and-aggregate error.
pub fn sag_only(data: &Dataset, k: usize, ell: usize, rng: &mut Rng) -> Result<Centroids> {
    aggregate(data, k, ell, false, rng)
}

pub fn gkm(
    data: &Dataset,
    k: usize,
    eps: f64,
    params: &GkmParams,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<Centroids> {
    let r = data.domain()?;
    budget.check("gkm", eps)?;
    let ell = resolve_ell(data.n(), k, params.policy)?;
    let mut scale = noise_scale(r, k, data.d(), ell, eps);
    if params.half_budget {
        scale *= 2.0;
    }
    let aggregated = aggregate(data, k, ell, params.canonical_sort, rng)?;
    let noisy = aggregated
        .as_flat()
        .iter()
        .map(|v| Ok((v + laplace_sample(scale, rng)?).clamp(-r, r)))
        .collect::<Result<Vec<f64>>>()?;
    budget.spend("gkm", eps)?;
    Centroids::from_flat(noisy, data.d())
}
