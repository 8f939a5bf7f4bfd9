//! Hybrid selector: when the predicted one-round DPLloyd error beats the
//! EUGkM variance, spend half the budget on EUGkM and half on one DPLloyd
//! refinement round; otherwise run EUGkM with the whole budget.

use crate::data::Dataset;
use crate::dplloyd::dplloyd_one_round;
use crate::error::Result;
use crate::eugkm::eugkm;
use crate::kmeans::Centroids;
use crate::mechanisms::{Budget, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct HybridDecision {
    pub eps_threshold: f64,
    pub applied_hybrid: bool,
    pub t_condition: bool,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridParams {
    pub theta: f64,
    pub rho: f64,
    /// Iteration count of the DPLloyd run the hybrid is compared against.
    pub t: usize,
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams {
            theta: crate::eugkm::DEFAULT_THETA,
            rho: crate::error_models::DEFAULT_RHO,
            t: 5,
        }
    }
}

/// Threshold `eps_b = (X / Y)^((2 + d) / 2d)` with
/// `X = 8d (1 + (2 rho r)^2) (k (d r + 1) / N)^2` and
/// `Y = 2 d r^2 k^((d-2)/d) / (3 * 10^(2d/(2+d)) * N^(4/(2+d)))`.
/// Depends only on public sizes, never on data values.
pub fn hybrid_threshold(n: usize, d: usize, k: usize, r: f64, rho: f64, t: usize) -> HybridDecision {
    let (nf, df, kf) = (n as f64, d as f64, k as f64);
    let ratio = kf * (df * r + 1.0) / nf;
    let x = 8.0 * df * (1.0 + (2.0 * rho * r).powi(2)) * ratio * ratio;
    let y = 2.0 * df * r * r * kf.powf((df - 2.0) / df)
        / (3.0 * 10f64.powf(2.0 * df / (2.0 + df)) * nf.powf(4.0 / (2.0 + df)));
    HybridDecision {
        eps_threshold: (x / y).powf((2.0 + df) / (2.0 * df)),
        applied_hybrid: false,
        t_condition: t >= 2,
        x,
        y,
    }
}

pub fn decide(n: usize, d: usize, k: usize, r: f64, eps: f64, params: &HybridParams) -> HybridDecision {
    let mut decision = hybrid_threshold(n, d, k, r, params.rho, params.t);
    decision.applied_hybrid = decision.t_condition && eps >= decision.eps_threshold;
    decision
}

pub fn hybrid(
    data: &Dataset,
    k: usize,
    eps: f64,
    params: &HybridParams,
    init_sets: &[Centroids],
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<(Centroids, HybridDecision)> {
    let r = data.domain()?;
    budget.check("hybrid", eps)?;
    let decision = decide(data.n(), data.d(), k, r, eps, params);
    if !decision.applied_hybrid {
        let (c, _) = eugkm(data, k, eps, params.theta, init_sets, rng, budget)?;
        return Ok((c, decision));
    }
    let (intermediate, _) = eugkm(data, k, eps / 2.0, params.theta, init_sets, rng, budget)?;
    let refined = dplloyd_one_round(data, &intermediate, eps / 2.0, rng, budget)?;
    Ok((refined, decision))
}
