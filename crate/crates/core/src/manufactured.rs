//! Manufactured solutions `Phi = A t^2 + P0 + t P1` with trigonometric `P0`, `P1`.
//!
//! For this family `Phi_tt = 2A`, `a = a(P0) + t a(P1)` and `Phi_tz = (P1)_z`,
//! so the right-hand side `2A (1 + a) - |(P1)_z|^2` is known in closed form.

use crate::boundary::{BoundaryError, BoundarySpec, FourierMode, TrigPolynomial};
use crate::grid::{Grid, ScalarField};
use crate::profile::{EpsilonProfile, ProfileError};

#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub quad: f64,
    pub p0: TrigPolynomial,
    pub p1: TrigPolynomial,
}

impl Manufactured {
    /// `0.1 t^2 + 0.01 cos(2 pi x) + t (0.01 cos(2 pi x) + 0.01 sin(2 pi y))`.
    pub fn standard() -> Self {
        Self {
            quad: 0.1,
            p0: TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.01, 0.0)]),
            p1: TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.01, 0.0), FourierMode::new(0, 1, 0.0, -0.01)]),
        }
    }

    pub fn value(&self, t: f64, x: f64, y: f64) -> f64 {
        self.quad * t * t + self.p0.eval(x, y) + t * self.p1.eval(x, y)
    }

    pub fn exact(&self, grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |t, x, y| self.value(t, x, y))
    }

    pub fn eps_tilde(&self, grid: &Grid, t: f64, x: f64, y: f64) -> f64 {
        let a = self.p0.ab(grid, x, y).0 + t * self.p1.ab(grid, x, y).0;
        2.0 * self.quad * (1.0 + a) - self.p1.d_z(grid, x, y).norm_sqr()
    }

    pub fn profile(&self, grid: Grid) -> Result<EpsilonProfile, ProfileError> {
        EpsilonProfile::field(ScalarField::from_fn(grid, |t, x, y| self.eps_tilde(&grid, t, x, y)))
    }

    pub fn boundary(&self) -> Result<BoundarySpec, BoundaryError> {
        let mut top = vec![FourierMode::new(0, 0, self.quad, 0.0)];
        top.extend(self.p0.modes.iter().chain(&self.p1.modes).copied());
        BoundarySpec::new(self.p0.clone(), TrigPolynomial::new(top))
    }
}
