//! PGkM: genetic k-means where each generation's parents are chosen with the
//! exponential mechanism, scored by the (negated) clustering cost.

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{DpError, Result};
use crate::kmeans::{cost, Centroids};
use crate::mechanisms::{exp_select_scores, Budget, Rng};

/// How parents are picked from the pool each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Exponential mechanism without replacement.
    Private,
    /// Deterministic top-`m_prime`; the non-private genetic baseline.
    ExactTop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgkmParams {
    pub pool_size: usize,
    pub m_prime: usize,
    /// Round-count coefficient `x` in `max(8, x * N * eps / m_prime)`.
    pub x: f64,
    /// Initial mutation half-width; `None` means `0.25 * r`.
    pub mutation_scale0: Option<f64>,
    pub mutation_decay: f64,
    pub selection: Selection,
}

impl Default for PgkmParams {
    fn default() -> Self {
        PgkmParams {
            pool_size: 200,
            m_prime: 10,
            x: 1.25e-3,
            mutation_scale0: None,
            mutation_decay: 0.95,
            selection: Selection::Private,
        }
    }
}

pub const MIN_ROUNDS: usize = 8;

pub fn num_rounds(n: usize, eps: f64, params: &PgkmParams) -> usize {
    let scaled = (params.x * n as f64 * eps / params.m_prime as f64).floor();
    if scaled.is_finite() && scaled > MIN_ROUNDS as f64 {
        scaled as usize
    } else {
        MIN_ROUNDS
    }
}

/// Budget for one exponential-mechanism selection in a regular round.
pub fn per_selection_budget(eps: f64, rounds: usize, m_prime: usize) -> f64 {
    eps / (rounds * m_prime) as f64
}

/// Largest change in the total clustering cost from adding or removing one
/// point: the squared diameter of the cube, `4 d r^2`.
pub fn quality_sensitivity(d: usize, r: f64) -> f64 {
    4.0 * d as f64 * r * r
}

/// One-point crossover: the tails after `split` are exchanged.
pub fn crossover_at(p1: &[f64], p2: &[f64], split: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(p1.len(), p2.len());
    let a = [&p1[..split], &p2[split..]].concat();
    let b = [&p2[..split], &p1[split..]].concat();
    (a, b)
}

pub fn crossover(p1: &[f64], p2: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    if p1.len() != p2.len() {
        return Err(DpError::param("crossover parents differ in length"));
    }
    if p1.len() < 2 {
        return Err(DpError::param("crossover needs vectors of length at least 2"));
    }
    let split = rng.gen_range(1..p1.len());
    Ok(crossover_at(p1, p2, split))
}

/// Perturbs one uniformly chosen coordinate by `U[-scale, scale]`, clamped to
/// `[-r, r]`.
pub fn mutate(p: &[f64], scale: f64, r: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = p.to_vec();
    let idx = rng.gen_range(0..out.len());
    if scale > 0.0 {
        let delta = rng.gen_range(-scale..=scale);
        out[idx] = (out[idx] + delta).clamp(-r, r);
    }
    out
}

/// Negated total squared distance to the nearest centroid (higher is better).
pub fn fitness(data: &Dataset, p: &[f64]) -> f64 {
    let c = Centroids::from_flat(p.to_vec(), data.d()).expect("parameter vector matches data dimension");
    -cost(data, &c)
}

/// Result of a PGkM run, with the best pool cost seen in each round.
#[derive(Clone, Debug)]
pub struct PgkmRun {
    pub centroids: Centroids,
    pub rounds: usize,
    pub best_cost_per_round: Vec<f64>,
}

fn select(
    qualities: &[f64],
    count: usize,
    eps_each: f64,
    sensitivity: f64,
    params: &PgkmParams,
    rng: &mut Rng,
    budget: &mut Budget,
    label: &str,
) -> Result<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..qualities.len()).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let pos = match params.selection {
            Selection::Private => {
                let scores: Vec<f64> = remaining.iter().map(|&i| qualities[i]).collect();
                exp_select_scores(&scores, eps_each, sensitivity, rng, budget, label)?
            }
            Selection::ExactTop => {
                budget.spend(label, eps_each)?;
                let mut best = 0;
                for (pos, &i) in remaining.iter().enumerate() {
                    if qualities[i] > qualities[remaining[best]] {
                        best = pos;
                    }
                }
                best
            }
        };
        chosen.push(remaining.remove(pos));
    }
    Ok(chosen)
}

pub fn pgkm_run(
    data: &Dataset,
    k: usize,
    eps: f64,
    params: &PgkmParams,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<PgkmRun> {
    let r = data.domain()?;
    let d = data.d();
    let len = k * d;
    if params.m_prime == 0 || params.m_prime > params.pool_size {
        return Err(DpError::param(format!(
            "need 1 <= m_prime ({}) <= pool_size ({})",
            params.m_prime, params.pool_size
        )));
    }
    if !(params.x > 0.0) {
        return Err(DpError::param("round coefficient x must be positive"));
    }
    budget.check("pgkm", eps)?;
    let rounds = num_rounds(data.n(), eps, params);
    let sensitivity = quality_sensitivity(d, r);
    let scale0 = params.mutation_scale0.unwrap_or(0.25 * r);

    let mut pool: Vec<Vec<f64>> = (0..params.pool_size)
        .map(|_| (0..len).map(|_| rng.gen_range(-r..=r)).collect())
        .collect();
    let mut best_cost_per_round = Vec::with_capacity(rounds);

    for round in 0..rounds {
        let qualities: Vec<f64> = pool.par_iter().map(|p| fitness(data, p)).collect();
        best_cost_per_round.push(-qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let last = round + 1 == rounds;
        // The final pick of the answer shares the last round's allocation.
        let picks = if last { params.m_prime + 1 } else { params.m_prime };
        let eps_each = eps / (rounds * picks) as f64;
        let label = format!("pgkm.round{round}");
        let selected = select(&qualities, params.m_prime, eps_each, sensitivity, params, rng, budget, &label)?;

        if last {
            let finalists: Vec<f64> = selected.iter().map(|&i| qualities[i]).collect();
            let pick = select(&finalists, 1, eps_each, sensitivity, params, rng, budget, "pgkm.final")?[0];
            let centroids = Centroids::from_flat(pool.swap_remove(selected[pick]), d)?;
            return Ok(PgkmRun {
                centroids,
                rounds,
                best_cost_per_round,
            });
        }

        let parents: Vec<Vec<f64>> = selected.iter().map(|&i| pool[i].clone()).collect();
        let scale = scale0 * params.mutation_decay.powi(round as i32);
        let mut next = parents.clone();
        while next.len() < params.pool_size {
            let a = rng.gen_range(0..parents.len());
            let b = if parents.len() > 1 {
                (a + rng.gen_range(1..parents.len())) % parents.len()
            } else {
                a
            };
            let (c1, c2) = if len >= 2 {
                crossover(&parents[a], &parents[b], rng)?
            } else {
                (parents[a].clone(), parents[b].clone())
            };
            for child in [c1, c2] {
                if next.len() < params.pool_size {
                    next.push(mutate(&child, scale, r, rng));
                }
            }
        }
        pool = next;
    }
    unreachable!("num_rounds is at least {MIN_ROUNDS}")
}

pub fn pgkm(
    data: &Dataset,
    k: usize,
    eps: f64,
    params: &PgkmParams,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<Centroids> {
    pgkm_run(data, k, eps, params, rng, budget).map(|run| run.centroids)
}
