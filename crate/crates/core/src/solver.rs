//! Damped Newton solver for `Phi_tt (1 + a) - |Phi_tzbar|^2 = eps_tilde` on
//! `[0,1] x T` with Dirichlet data on both boundary tori.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryError, BoundarySpec};
use crate::grid::{wirtinger_jet, Grid, GridError, Jet, JetOrder, Node, ScalarField};
use crate::linear::{
    gmres, stencil_row, CsrMatrix, FrozenPlanePreconditioner, GmresOptions, StencilWeights,
};
use crate::profile::{EpsilonProfile, ProfileError, ProfileKind};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("initial guess is not admissible: {0}")]
    InadmissibleStart(String),
    #[error("line search exhausted at Newton iteration {iteration} (residual {residual:.3e})")]
    LineSearchExhausted { iteration: usize, residual: f64, last_iterate: Box<ScalarField> },
    #[error("linear solve failed at Newton iteration {iteration}: relative residual {rel_residual:.3e}")]
    LinearSolve { iteration: usize, rel_residual: f64 },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64, last_iterate: Box<ScalarField> },
    #[error("schedule must be non-empty with positive, strictly decreasing values")]
    BadSchedule,
    #[error("sweep parameters must be non-empty and finite")]
    BadSweep,
}

impl SolverError {
    /// Last iterate carried by the error, if any.
    pub fn last_iterate(&self) -> Option<&ScalarField> {
        match self {
            Self::LineSearchExhausted { last_iterate, .. } | Self::NotConverged { last_iterate, .. } => {
                Some(last_iterate)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub max_newton: usize,
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub max_linear_iters: usize,
    pub admissibility_margin: f64,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            linear_tol: 1e-12,
            gmres_restart: 40,
            max_linear_iters: 4000,
            admissibility_margin: 1e-8,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    /// Max-norm residual before each iteration and after the last one.
    pub residual_history: Vec<f64>,
    pub linear_iterations: Vec<usize>,
    pub linear_residuals: Vec<f64>,
    pub step_lengths: Vec<f64>,
    /// Largest `r_{k+1} / r_k^2` once `r_k < 1e-2`.
    pub quadratic_constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub phi: ScalarField,
    pub profile: EpsilonProfile,
    pub boundary: BoundarySpec,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub report: NewtonReport,
}

impl Solution {
    pub fn grid(&self) -> &Grid {
        &self.phi.grid
    }
}

/// Jet quantities entering the equation at one node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeCoeffs {
    pub one_plus_a: f64,
    pub phi_tt: f64,
    /// `|Phi_tzbar|^2`.
    pub mixed_sq: f64,
    /// Real-coordinate derivatives `Phi_tX`, `Phi_tY`.
    pub p_x: f64,
    pub p_y: f64,
}

impl NodeCoeffs {
    pub fn from_jet(j: &Jet) -> Self {
        Self {
            one_plus_a: j.one_plus_a(),
            phi_tt: j.d_tt,
            mixed_sq: j.d_tz.norm_sqr(),
            p_x: 2.0 * j.d_tz.re,
            p_y: -2.0 * j.d_tz.im,
        }
    }

    /// `Phi_tt (1 + a) - |Phi_tzbar|^2`, which is `4 det h`.
    pub fn four_det(&self) -> f64 {
        self.phi_tt * self.one_plus_a - self.mixed_sq
    }

    fn weights(&self, grid: &Grid) -> StencilWeights {
        let (k, nu) = grid.chain();
        let ca = self.phi_tt;
        StencilWeights {
            tt: self.one_plus_a,
            xx: 0.25 * ca * (1.0 + k * k),
            xy: -0.5 * ca * k * nu,
            yy: 0.25 * ca * nu * nu,
            tx: -0.5 * (self.p_x - k * self.p_y),
            ty: -0.5 * nu * self.p_y,
        }
    }
}

fn coeffs(phi: &ScalarField, node: Node) -> NodeCoeffs {
    // Nodes come from the grid itself, so the jet cannot fail.
    NodeCoeffs::from_jet(&wirtinger_jet(phi, node, JetOrder::Second).expect("node in grid"))
}

/// Residual of the equation at interior nodes; zero on the boundary planes.
pub fn residual(phi: &ScalarField, profile: &EpsilonProfile) -> ScalarField {
    let g = phi.grid;
    let mut out = ScalarField::zeros(g);
    for n in g.interior_nodes() {
        let c = coeffs(phi, n);
        out.values[g.node_index(n)] = c.four_det() - profile.at(&g, n);
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Exact Jacobian of [`residual`] at interior rows; identity on boundary rows.
pub fn linearize(phi: &ScalarField) -> CsrMatrix {
    let (m, _) = linearize_with_weights(phi);
    m
}

fn linearize_with_weights(phi: &ScalarField) -> (CsrMatrix, Vec<StencilWeights>) {
    let g = phi.grid;
    let weights: Vec<StencilWeights> = g
        .nodes()
        .map(|n| {
            if g.is_boundary_plane(n.it) {
                StencilWeights::default()
            } else {
                coeffs(phi, n).weights(&g)
            }
        })
        .collect();
    let rows = g.nodes().map(|n| {
        if g.is_boundary_plane(n.it) {
            vec![(g.node_index(n), 1.0)]
        } else {
            stencil_row(&g, n.it, n.ix, n.iy, &weights[g.node_index(n)])
        }
    });
    (CsrMatrix::from_rows(g.len(), rows), weights)
}

/// Worst admissibility margins over interior nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub min_one_plus_a: f64,
    pub min_one_plus_a_node: Node,
    /// Minimum of `det h / eps_tilde`, with `det h = (Phi_tt (1+a) - |Phi_tzbar|^2) / 4`.
    pub min_det_ratio: f64,
    pub min_det_node: Node,
}

impl Admissibility {
    pub fn holds(&self, margin: f64) -> bool {
        self.min_one_plus_a > margin && self.min_det_ratio > margin
    }
}

pub fn admissibility(phi: &ScalarField, profile: &EpsilonProfile) -> Admissibility {
    let g = phi.grid;
    let mut out = Admissibility {
        min_one_plus_a: f64::INFINITY,
        min_one_plus_a_node: Node::new(1, 0, 0),
        min_det_ratio: f64::INFINITY,
        min_det_node: Node::new(1, 0, 0),
    };
    for n in g.interior_nodes() {
        let c = coeffs(phi, n);
        if !(c.one_plus_a >= out.min_one_plus_a) {
            out.min_one_plus_a = c.one_plus_a;
            out.min_one_plus_a_node = n;
        }
        let r = 0.25 * c.four_det() / profile.at(&g, n);
        if !(r >= out.min_det_ratio) {
            out.min_det_ratio = r;
            out.min_det_node = n;
        }
    }
    out
}

/// Linear interpolation of the boundary data in `t`.
fn linear_interpolant(grid: Grid, boundary: &BoundarySpec) -> ScalarField {
    let f0 = boundary.phi0.sample(&grid);
    let f1 = boundary.phi1.sample(&grid);
    let p = grid.plane_len();
    let mut phi = ScalarField::zeros(grid);
    for it in 0..grid.nt {
        let t = grid.t(it);
        for k in 0..p {
            phi.values[it * p + k] = (1.0 - t) * f0[k] + t * f1[k];
        }
    }
    boundary.impose(&mut phi);
    phi
}

/// Default starting point `Phi_lin + C0 t (t - 1)`.
///
/// `C0` is chosen so that `Phi_tt (1 + a) - |Phi_tzbar|^2 >= 2 max eps_tilde`
/// at every interior node, which makes the start admissible whenever the
/// boundary data are convex.
pub fn initial_guess(grid: Grid, boundary: &BoundarySpec, profile: &EpsilonProfile) -> ScalarField {
    let mut phi = linear_interpolant(grid, boundary);
    let eps_max = profile.max_value();
    let mut c0: f64 = 0.0;
    for n in grid.interior_nodes() {
        let c = coeffs(&phi, n);
        c0 = c0.max((eps_max + c.mixed_sq) / c.one_plus_a.max(f64::MIN_POSITIVE));
    }
    for n in grid.interior_nodes() {
        let t = grid.t(n.it);
        phi.values[grid.node_index(n)] += c0 * t * (t - 1.0);
    }
    phi
}

/// Solves the equation by damped Newton iteration.
///
/// `initial`, when given, is used as the starting iterate after its boundary
/// planes are overwritten; if it is not admissible the default start is used.
pub fn newton_solve(
    grid: Grid,
    boundary: &BoundarySpec,
    profile: &EpsilonProfile,
    config: &SolverConfig,
    initial: Option<&ScalarField>,
) -> Result<Solution, SolverError> {
    boundary.check_convexity(&grid)?;
    let margin = config.admissibility_margin;
    let mut phi = match initial {
        Some(start) if start.grid == grid => {
            let mut p = start.clone();
            boundary.impose(&mut p);
            if admissibility(&p, profile).holds(margin) {
                p
            } else {
                initial_guess(grid, boundary, profile)
            }
        }
        _ => initial_guess(grid, boundary, profile),
    };
    let adm = admissibility(&phi, profile);
    if !adm.holds(margin) {
        return Err(SolverError::InadmissibleStart(format!(
            "min(1+a) = {:.3e}, min det/eps = {:.3e}",
            adm.min_one_plus_a, adm.min_det_ratio
        )));
    }

    let mut report = NewtonReport::default();
    let mut f = residual(&phi, profile);
    let mut r = max_abs(&f.values);
    report.residual_history.push(r);
    let mut iterations = 0;
    let gm = GmresOptions {
        restart: config.gmres_restart,
        max_iters: config.max_linear_iters,
        rel_tol: config.linear_tol,
    };

    while r > config.newton_tol {
        if iterations >= config.max_newton {
            return Err(SolverError::NotConverged {
                iterations,
                residual: r,
                last_iterate: Box::new(phi),
            });
        }
        iterations += 1;
        let (jac, weights) = linearize_with_weights(&phi);
        let pre = FrozenPlanePreconditioner::new(grid, &weights);
        let rhs: Vec<f64> = f.values.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; grid.len()];
        let out = gmres(&jac, &pre, &rhs, &mut delta, gm);
        report.linear_iterations.push(out.iterations);
        report.linear_residuals.push(out.rel_residual);
        if !out.converged {
            return Err(SolverError::LinearSolve { iteration: iterations, rel_residual: out.rel_residual });
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mut cand = phi.clone();
            for (c, d) in cand.values.iter_mut().zip(&delta) {
                *c += alpha * d;
            }
            if admissibility(&cand, profile).holds(margin) {
                let fc = residual(&cand, profile);
                let rc = max_abs(&fc.values);
                if rc < r {
                    accepted = Some((cand, fc, rc));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, fc, rc)) => {
                phi = cand;
                f = fc;
                r = rc;
                report.step_lengths.push(alpha);
                report.residual_history.push(r);
            }
            None => {
                return Err(SolverError::LineSearchExhausted {
                    iteration: iterations,
                    residual: r,
                    last_iterate: Box::new(phi),
                })
            }
        }
    }

    report.quadratic_constant = report
        .residual_history
        .windows(2)
        .filter(|w| w[0] < 1e-2 && w[1] > 0.0)
        .map(|w| w[1] / (w[0] * w[0]))
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));

    Ok(Solution {
        phi,
        profile: profile.clone(),
        boundary: boundary.clone(),
        converged: true,
        iterations,
        final_residual: r,
        report,
    })
}

/// Solves along a decreasing schedule of regularization parameters, warm
/// starting each rung from the previous solution.
pub fn continuation_solve(
    grid: Grid,
    boundary: &BoundarySpec,
    kind: ProfileKind,
    schedule: &[f64],
    config: &SolverConfig,
) -> Result<Vec<Solution>, SolverError> {
    let ok = !schedule.is_empty()
        && schedule.iter().all(|e| e.is_finite() && *e > 0.0)
        && schedule.windows(2).all(|w| w[1] < w[0]);
    if !ok {
        return Err(SolverError::BadSchedule);
    }
    let mut out: Vec<Solution> = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let profile = EpsilonProfile::from_kind(kind, eps)?;
        let start = out.last().map(|s| &s.phi);
        out.push(newton_solve(grid, boundary, &profile, config, start)?);
    }
    Ok(out)
}

/// Solves with boundary data `lambda * (phi0, phi1)` for each `lambda`,
/// warm starting from the previous rung shifted by the change in the linear
/// interpolant.
pub fn lambda_sweep(
    grid: Grid,
    boundary: &BoundarySpec,
    profile: &EpsilonProfile,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<Solution>, SolverError> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(SolverError::BadSweep);
    }
    let unit = linear_interpolant(grid, boundary);
    let mut out: Vec<Solution> = Vec::with_capacity(lambdas.len());
    let mut prev_lambda = 0.0;
    for &lambda in lambdas {
        let b = boundary.scaled(lambda);
        let start = out.last().map(|s| {
            let mut p = s.phi.clone();
            for (v, u) in p.values.iter_mut().zip(&unit.values) {
                *v += (lambda - prev_lambda) * u;
            }
            p
        });
        out.push(newton_solve(grid, &b, profile, config, start.as_ref())?);
        prev_lambda = lambda;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{FourierMode, TrigPolynomial};

    fn test_boundary() -> BoundarySpec {
        BoundarySpec::new(TrigPolynomial::zero(), TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.005, 0.0)]))
            .unwrap()
    }

    #[test]
    fn jacobian_matches_directional_derivative() {
        let g = Grid::new(6, 8, 8, num_complex::Complex64::new(0.2, 0.9)).unwrap();
        let profile = EpsilonProfile::annulus(1e-2).unwrap();
        let phi = ScalarField::from_fn(g, |t, x, y| {
            0.3 * t * t + 0.01 * t * (6.28 * x).cos() + 0.02 * (6.28 * (x + y)).sin() * t * t
        });
        let v = ScalarField::from_fn(g, |t, x, y| (3.0 * t + x).sin() * (6.28 * y).cos());
        let jac = linearize(&phi);
        let mut jv = vec![0.0; g.len()];
        jac.matvec(&v.values, &mut jv);
        let f0 = residual(&phi, &profile);
        let mut errs = Vec::new();
        for s in [1e-3, 5e-4] {
            let mut p = phi.clone();
            for (a, b) in p.values.iter_mut().zip(&v.values) {
                *a += s * b;
            }
            let f1 = residual(&p, &profile);
            let e = g
                .interior_nodes()
                .map(|n| {
                    let i = g.node_index(n);
                    ((f1.values[i] - f0.values[i]) / s - jv[i]).abs()
                })
                .fold(0.0, f64::max);
            errs.push(e);
        }
        // The residual is quadratic in Phi, so the error is exactly linear in s.
        assert!((errs[0] / errs[1] - 2.0).abs() < 1e-3, "{errs:?}");
    }

    #[test]
    fn initial_guess_is_admissible() {
        let g = Grid::square(9, 16, 16).unwrap();
        let p = EpsilonProfile::annulus(1e-3).unwrap();
        let phi = initial_guess(g, &test_boundary(), &p);
        let adm = admissibility(&phi, &p);
        assert!(adm.holds(1e-8), "{adm:?}");
        assert!(adm.min_det_ratio >= 0.5 - 1e-12);
    }

    #[test]
    fn solves_small_problem_quadratically() {
        let g = Grid::square(9, 16, 16).unwrap();
        let p = EpsilonProfile::annulus(1e-2).unwrap();
        let s = newton_solve(g, &test_boundary(), &p, &SolverConfig::default(), None).unwrap();
        assert!(s.converged);
        assert!(s.final_residual <= 1e-10);
        assert!(s.iterations <= 12, "{:?}", s.report);
    }

    #[test]
    fn rejects_non_convex_boundary() {
        let g = Grid::square(5, 16, 16).unwrap();
        let b = BoundarySpec::new(TrigPolynomial::zero(), TrigPolynomial::new(vec![FourierMode::new(1, 0, 0.2, 0.0)])).unwrap();
        let p = EpsilonProfile::annulus(1e-2).unwrap();
        let e = newton_solve(g, &b, &p, &SolverConfig::default(), None).unwrap_err();
        assert!(matches!(e, SolverError::Boundary(BoundaryError::NotConvex { .. })));
    }

    #[test]
    fn schedule_validation() {
        let g = Grid::square(5, 8, 8).unwrap();
        let c = SolverConfig::default();
        for bad in [vec![], vec![1e-2, 1e-2], vec![1e-3, 1e-2], vec![-1.0]] {
            let e = continuation_solve(g, &test_boundary(), ProfileKind::Annulus, &bad, &c).unwrap_err();
            assert!(matches!(e, SolverError::BadSchedule));
        }
    }

    #[test]
    fn stalls_are_reported_with_last_iterate() {
        let g = Grid::square(5, 8, 8).unwrap();
        let p = EpsilonProfile::annulus(1e-2).unwrap();
        let c = SolverConfig { max_newton: 1, newton_tol: 1e-30, ..Default::default() };
        let e = newton_solve(g, &test_boundary(), &p, &c, None).unwrap_err();
        assert!(e.last_iterate().is_some(), "{e}");
    }
}
