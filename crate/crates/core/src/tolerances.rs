//! Tolerance bands used by the checks. All bands scale with
//! `h = max(ht, hx, hy)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// `C` in the `C h^2` band for checks built from second derivatives.
    pub band_c: f64,
    /// `C` in the `C h` band for the a/b identities (third derivatives).
    pub residual_c: f64,
    /// Relative slack on the maximum principle for `Q`.
    pub q_rel: f64,
    /// Slack for monotonicity in `lambda` and in `eps`.
    pub monotone_slack: f64,
    /// Relative error allowed in the identity for the weight `u`.
    pub u_identity_rel: f64,
    /// Largest pairwise spread of `min (1 + a)` across an `eps` sweep.
    pub lower_bound_spread: f64,
    /// Largest ratio between the `LQ / (eps Q)` constants across a sweep.
    pub lq_factor: f64,
    /// Smallest acceptable convergence slope of the a/b residuals.
    pub min_residual_slope: f64,
    /// Multiplier of `eps_tilde` in the leaf threshold.
    pub leaf_eps_slack: f64,
    /// Leaf checks require `Q_B` below this value along the path.
    pub leaf_q_limit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            band_c: 10.0,
            residual_c: 10.0,
            q_rel: 1e-3,
            monotone_slack: 1e-8,
            u_identity_rel: 1e-6,
            lower_bound_spread: 0.05,
            lq_factor: 2.0,
            min_residual_slope: 0.9,
            leaf_eps_slack: 1.0,
            leaf_q_limit: 0.5,
        }
    }
}

impl Tolerances {
    pub fn band(&self, h: f64) -> f64 {
        self.band_c * h * h
    }

    pub fn residual_band(&self, h: f64) -> f64 {
        self.residual_c * h
    }
}
