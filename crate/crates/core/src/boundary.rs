//! Boundary potentials on the torus as real trigonometric polynomials.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{planar_ab, Grid, Node, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("boundary potential at t = {t} is not convex: 1 + a = {one_plus_a:.6e} at node ({ix}, {iy})")]
    NotConvex { t: f64, ix: usize, iy: usize, one_plus_a: f64 },
    #[error("boundary coefficient is not finite for mode ({kx}, {ky})")]
    NonFinite { kx: i32, ky: i32 },
}

/// One term `Re(A exp(2 pi i (kx x + ky y)))` in lattice coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub kx: i32,
    pub ky: i32,
    pub coeff: Complex64,
}

impl FourierMode {
    pub fn new(kx: i32, ky: i32, re: f64, im: f64) -> Self {
        Self { kx, ky, coeff: Complex64::new(re, im) }
    }
}

/// Real trigonometric polynomial on the torus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub modes: Vec<FourierMode>,
}

impl TrigPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(modes: Vec<FourierMode>) -> Self {
        Self { modes }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let ph = 2.0 * PI * (m.kx as f64 * x + m.ky as f64 * y);
                m.coeff.re * ph.cos() - m.coeff.im * ph.sin()
            })
            .sum()
    }

    /// Exact `(a, b) = (Phi_{z zbar}, Phi_{zz})` at lattice point `(x, y)`.
    pub fn ab(&self, grid: &Grid, x: f64, y: f64) -> (f64, Complex64) {
        let (k, nu) = grid.chain();
        let mut a = 0.0;
        let mut b = Complex64::new(0.0, 0.0);
        for m in &self.modes {
            // d/dX and d/dY act on exp(i theta) as i xi and i eta.
            let xi = 2.0 * PI * m.kx as f64;
            let eta = 2.0 * PI * (nu * m.ky as f64 - k * m.kx as f64);
            let ph = 2.0 * PI * (m.kx as f64 * x + m.ky as f64 * y);
            let v = m.coeff.re * ph.cos() - m.coeff.im * ph.sin();
            a -= 0.25 * (xi * xi + eta * eta) * v;
            b += 0.25 * Complex64::new(eta, xi).powi(2) * v;
        }
        (a, b)
    }

    /// Exact `Phi_z` at lattice point `(x, y)`.
    pub fn d_z(&self, grid: &Grid, x: f64, y: f64) -> Complex64 {
        let (k, nu) = grid.chain();
        let mut out = Complex64::new(0.0, 0.0);
        for m in &self.modes {
            let xi = 2.0 * PI * m.kx as f64;
            let eta = 2.0 * PI * (nu * m.ky as f64 - k * m.kx as f64);
            let ph = 2.0 * PI * (m.kx as f64 * x + m.ky as f64 * y);
            // Im(A exp(i theta)); d/dz of Re(A exp(i theta)) is (eta + i xi) i w / 2.
            let w = m.coeff.re * ph.sin() + m.coeff.im * ph.cos();
            out += 0.5 * Complex64::new(eta, xi) * Complex64::new(0.0, w);
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            modes: self
                .modes
                .iter()
                .map(|m| FourierMode { coeff: m.coeff * s, ..*m })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.coeff.norm() == 0.0)
    }

    /// Values on one grid plane, `ix`-major.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.plane_len());
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                out.push(self.eval(grid.x(ix), grid.y(iy)));
            }
        }
        out
    }
}

/// Potentials on `{0} x T` and `{1} x T`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub phi0: TrigPolynomial,
    pub phi1: TrigPolynomial,
}

impl BoundarySpec {
    pub fn new(phi0: TrigPolynomial, phi1: TrigPolynomial) -> Result<Self, BoundaryError> {
        for m in phi0.modes.iter().chain(&phi1.modes) {
            if !(m.coeff.re.is_finite() && m.coeff.im.is_finite()) {
                return Err(BoundaryError::NonFinite { kx: m.kx, ky: m.ky });
            }
        }
        Ok(Self { phi0, phi1 })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { phi0: self.phi0.scaled(s), phi1: self.phi1.scaled(s) }
    }

    pub fn is_zero(&self) -> bool {
        self.phi0.is_zero() && self.phi1.is_zero()
    }

    /// Writes the boundary planes of `phi`.
    pub fn impose(&self, phi: &mut ScalarField) {
        let g = phi.grid;
        let p = g.plane_len();
        let last = (g.nt - 1) * p;
        phi.values[..p].copy_from_slice(&self.phi0.sample(&g));
        phi.values[last..last + p].copy_from_slice(&self.phi1.sample(&g));
    }

    /// Checks `1 + a > 0` for the discrete `a` on both boundary planes and
    /// reports the worst node on failure.
    pub fn check_convexity(&self, grid: &Grid) -> Result<(), BoundaryError> {
        let mut phi = ScalarField::zeros(*grid);
        self.impose(&mut phi);
        for it in [0, grid.nt - 1] {
            let mut worst: Option<(Node, f64)> = None;
            for ix in 0..grid.nx {
                for iy in 0..grid.ny {
                    let (a, _) = planar_ab(&phi, it, ix as isize, iy as isize);
                    if worst.map_or(true, |(_, w)| 1.0 + a < w) {
                        worst = Some((Node::new(it, ix, iy), 1.0 + a));
                    }
                }
            }
            if let Some((n, v)) = worst {
                if !(v > 0.0) {
                    return Err(BoundaryError::NotConvex {
                        t: grid.t(it),
                        ix: n.ix,
                        iy: n.iy,
                        one_plus_a: v,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_matches_cosine_and_sine() {
        let p = TrigPolynomial::new(vec![FourierMode::new(1, 0, 2.0, 0.0), FourierMode::new(0, 1, 0.0, 1.0)]);
        let (x, y) = (0.1, 0.3);
        let expect = 2.0 * (2.0 * PI * x).cos() - (2.0 * PI * y).sin();
        assert!((p.eval(x, y) - expect).abs() < 1e-14);
        assert!((p.scaled(0.5).eval(x, y) - 0.5 * expect).abs() < 1e-14);
    }

    #[test]
    fn convexity_accepts_small_and_rejects_large() {
        let g = Grid::square(5, 32, 32).unwrap();
        let ok = BoundarySpec::new(TrigPolynomial::zero(), TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.005, 0.0)])).unwrap();
        assert!(ok.check_convexity(&g).is_ok());
        // 1 + a = 1 - pi^2 c cos(2 pi x) fails for c > 1/pi^2.
        let bad = BoundarySpec::new(TrigPolynomial::zero(), TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.2, 0.0)])).unwrap();
        match bad.check_convexity(&g) {
            Err(BoundaryError::NotConvex { t, ix, one_plus_a, .. }) => {
                assert_eq!(t, 1.0);
                assert_eq!(ix, 0);
                assert!(one_plus_a < 0.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn exact_ab_matches_planar_stencil() {
        let g = Grid::new(3, 64, 48, Complex64::new(0.3, 1.1)).unwrap();
        let p = TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.01, 0.0), FourierMode::new(1, -2, 0.003, 0.004)]);
        let b = BoundarySpec::new(p.clone(), p.clone()).unwrap();
        let mut phi = ScalarField::zeros(g);
        b.impose(&mut phi);
        // Stencil error is about (eta h)^2 / 12 relative; eta h is near 0.25 here.
        for (ix, iy) in [(0, 0), (5, 17), (40, 3)] {
            let (a0, b0) = p.ab(&g, g.x(ix), g.y(iy));
            let (a1, b1) = planar_ab(&phi, 0, ix as isize, iy as isize);
            assert!((a0 - a1).abs() < 3e-2 * a0.abs().max(0.01), "{a0} {a1}");
            assert!((b0 - b1).norm() < 3e-2 * b0.norm().max(0.01), "{b0} {b1}");
        }
        let c = TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.005, 0.0)]);
        let (a, b) = c.ab(&Grid::square(3, 8, 8).unwrap(), 0.0, 0.3);
        let expect = -PI * PI * 0.005;
        assert!((a - expect).abs() < 1e-15 && (b.re - expect).abs() < 1e-15 && b.im.abs() < 1e-15);
    }

    #[test]
    fn exact_dz_matches_central_differences() {
        let g = Grid::new(3, 8, 8, Complex64::new(0.3, 1.1)).unwrap();
        let p = TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.01, 0.02), FourierMode::new(2, -1, 0.003, -0.004)]);
        let (k, nu) = g.chain();
        let d = 1e-5;
        for (x, y) in [(0.1, 0.2), (0.77, 0.4)] {
            let px = (p.eval(x + d, y) - p.eval(x - d, y)) / (2.0 * d);
            let py = (p.eval(x, y + d) - p.eval(x, y - d)) / (2.0 * d);
            let dz = 0.5 * Complex64::new(px, -(-k * px + nu * py));
            assert!((p.d_z(&g, x, y) - dz).norm() < 1e-9, "{dz}");
        }
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        let p = TrigPolynomial::new(vec![FourierMode::new(1, 0, f64::NAN, 0.0)]);
        assert!(BoundarySpec::new(p, TrigPolynomial::zero()).is_err());
    }
}
