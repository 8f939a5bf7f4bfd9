//! Closed-form error predictors for DPLloyd and EUGkM centroids.

use crate::eugkm::choose_m;

/// Inputs shared by the predictors. `rho` is the mean normalized centroid
/// magnitude `|S_i| / (2 r C)`; `m_cells` overrides the grid size that would
/// otherwise come from [`choose_m`].
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModelParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub r: f64,
    pub rho: f64,
    pub eps: f64,
    pub m_cells: Option<f64>,
    pub theta: f64,
}

pub const DEFAULT_RHO: f64 = 0.25;

impl ErrorModelParams {
    pub fn new(n: usize, d: usize, k: usize, eps: f64) -> Self {
        ErrorModelParams {
            n,
            d,
            k,
            t: 5,
            r: 1.0,
            rho: DEFAULT_RHO,
            eps,
            m_cells: None,
            theta: crate::eugkm::DEFAULT_THETA,
        }
    }

    pub fn cells(&self) -> f64 {
        self.m_cells
            .unwrap_or_else(|| choose_m(self.n, self.eps, self.d, self.theta))
    }

    fn count_term(&self) -> f64 {
        1.0 + (2.0 * self.rho * self.r).powi(2)
    }
}

/// Per-round centroid MSE of DPLloyd:
/// `2d (1 + (2 rho r)^2) (k t (d r + 1) / (N eps))^2`.
pub fn predict_dplloyd_mse(p: &ErrorModelParams) -> f64 {
    let d = p.d as f64;
    let ratio = (p.k * p.t) as f64 * (d * p.r + 1.0) / (p.n as f64 * p.eps);
    2.0 * d * p.count_term() * ratio * ratio
}

/// Variance of a synopsis centroid: `2 d M r^2 k^((d-2)/d) / (3 N^2 eps^2)`.
pub fn predict_eugkm_variance(p: &ErrorModelParams) -> f64 {
    let d = p.d as f64;
    let n = p.n as f64;
    2.0 * d * p.cells() * p.r * p.r * (p.k as f64).powf((d - 2.0) / d) / (3.0 * n * n * p.eps * p.eps)
}

/// Upper bound on the squared bias of a synopsis centroid: `d r^2 / M^(2/d)`.
pub fn predict_eugkm_bias_bound(p: &ErrorModelParams) -> f64 {
    let d = p.d as f64;
    d * p.r * p.r / p.cells().powf(2.0 / d)
}

/// One DPLloyd round on half the budget:
/// `8d (1 + (2 rho r)^2) (k (d r + 1) / (N eps))^2`.
pub fn predict_hybrid_one_round_mse(p: &ErrorModelParams) -> f64 {
    let d = p.d as f64;
    let ratio = p.k as f64 * (d * p.r + 1.0) / (p.n as f64 * p.eps);
    8.0 * d * p.count_term() * ratio * ratio
}
