//! DPLloyd: a fixed number of Lloyd rounds where every per-cluster count and
//! coordinate sum is answered through the Laplace mechanism.

use crate::data::Dataset;
use crate::error::{DpError, Result};
use crate::kmeans::{assign, cluster_sums, Centroids};
use crate::mechanisms::{laplace_sample, Budget, Rng};

/// A noisy count below this leaves the centroid where it was.
pub const MIN_NOISY_COUNT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DPLloydParams {
    pub t: usize,
    pub clamp: bool,
}

impl Default for DPLloydParams {
    fn default() -> Self {
        DPLloydParams { t: 5, clamp: true }
    }
}

/// Per-query Laplace scale `(d*r + 1) * t / eps`.
pub fn laplace_scale(d: usize, r: f64, t: usize, eps: f64) -> f64 {
    (d as f64 * r + 1.0) * t as f64 / eps
}

pub fn dplloyd(
    data: &Dataset,
    init: &Centroids,
    eps: f64,
    params: &DPLloydParams,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<Centroids> {
    run(data, init, eps, params, rng, budget, "dplloyd")
}

/// A single DPLloyd round, used by the hybrid algorithm to refine centroids.
pub fn dplloyd_one_round(
    data: &Dataset,
    init: &Centroids,
    eps: f64,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<Centroids> {
    let params = DPLloydParams { t: 1, clamp: true };
    run(data, init, eps, &params, rng, budget, "dplloyd_one_round")
}

fn run(
    data: &Dataset,
    init: &Centroids,
    eps: f64,
    params: &DPLloydParams,
    rng: &mut Rng,
    budget: &mut Budget,
    label: &str,
) -> Result<Centroids> {
    let r = data.domain()?;
    let (k, d, t) = (init.k(), data.d(), params.t);
    if t == 0 {
        return Err(DpError::param("DPLloyd needs at least one iteration"));
    }
    if init.d() != d {
        return Err(DpError::param(format!(
            "initial centroids have d={}, data has d={d}",
            init.d()
        )));
    }
    budget.check(label, eps)?;
    let scale = laplace_scale(d, r, t, eps);
    // Each point contributes to one count (sensitivity 1) and d sums
    // (sensitivity r each) per round; clusters compose in parallel.
    let count_eps = eps / ((d as f64 * r + 1.0) * t as f64);
    let sum_eps = count_eps * r;

    let mut current = init.as_flat().to_vec();
    for iter in 0..t {
        let centroids = Centroids::from_flat(current.clone(), d)?;
        let (counts, sums) = cluster_sums(data, &assign(data, &centroids), k);
        budget.spend(&format!("{label}.iter{iter}.count"), count_eps)?;
        for i in 0..d {
            budget.spend(&format!("{label}.iter{iter}.sum{i}"), sum_eps)?;
        }
        for j in 0..k {
            let noisy_count = counts[j] + laplace_sample(scale, rng)?;
            let noisy_sums: Vec<f64> = (0..d)
                .map(|i| Ok(sums[j * d + i] + laplace_sample(scale, rng)?))
                .collect::<Result<_>>()?;
            if noisy_count < MIN_NOISY_COUNT {
                continue;
            }
            for (i, s) in noisy_sums.into_iter().enumerate() {
                let v = s / noisy_count;
                current[j * d + i] = if params.clamp { v.clamp(-r, r) } else { v };
            }
        }
    }
    Centroids::from_flat(current, d)
}
