//! Approximate leaves of the degenerate direction and `Q_B` along them.
//!
//! A leaf solves `dz/dt = -Phi_{zeta zbar} / (1 + a) = -Phi_{t zbar} / (2 (1 + a))`.
//! Fields are interpolated linearly in `t`; in `(x, y)` the interpolant is
//! either bilinear or the trigonometric interpolant of each plane.
//! RK4 steps are snapped to `t`-cells so no stage crosses a `t` grid level.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{wirtinger_jet, Grid, JetOrder};
use crate::solver::Solution;
use crate::tolerances::Tolerances;
use crate::verifier::{CheckRecord, CheckStatus};

type C = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeafError {
    #[error("start time {0} outside [0, 1)")]
    StartOutside(f64),
    #[error("step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("path has {0} samples on grid levels, need at least 3")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Trilinear,
    /// Trigonometric in `(x, y)`, linear in `t`.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafSample {
    pub t: f64,
    /// Position in the plane, unreduced (it may leave the fundamental domain).
    pub z: C,
    pub one_plus_a: f64,
    pub q_b: f64,
    /// Whether `t` is a grid level.
    pub on_level: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPath {
    pub start: (f64, C),
    pub step: f64,
    pub samples: Vec<LeafSample>,
    /// Set when an interpolated state had `1 + a <= 0`.
    pub aborted: Option<String>,
}

impl LeafPath {
    pub fn end(&self) -> C {
        self.samples.last().map_or(self.start.1, |s| s.z)
    }

    /// `z` reduced modulo the lattice, as lattice coordinates.
    pub fn reduced(&self, grid: &Grid, z: C) -> (f64, f64) {
        grid.lattice_coords(z)
    }
}

/// One complex field on every node.
struct Nodal {
    values: Vec<C>,
    /// Per-plane 2-D DFT, present for spectral interpolation.
    spectra: Option<Vec<Vec<C>>>,
}

/// Interpolates `a`, `b` and `Phi_{t zbar}` of a solution.
pub struct LeafField {
    grid: Grid,
    mode: Interpolation,
    a: Nodal,
    b: Nodal,
    mixed: Nodal,
}

impl LeafField {
    pub fn new(solution: &Solution, mode: Interpolation) -> Self {
        let g = *solution.grid();
        let (mut a, mut b, mut m) = (Vec::new(), Vec::new(), Vec::new());
        for n in g.nodes() {
            let j = wirtinger_jet(&solution.phi, n, JetOrder::Second).expect("node in grid");
            a.push(C::new(j.a, 0.0));
            b.push(j.b);
            m.push(j.d_tzb());
        }
        let wrap = |v: Vec<C>| {
            let spectra = (mode == Interpolation::Spectral).then(|| plane_spectra(&g, &v));
            Nodal { values: v, spectra }
        };
        Self { grid: g, mode, a: wrap(a), b: wrap(b), mixed: wrap(m) }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `(1 + a, b, Phi_{t zbar})` at `(t, z)`.
    pub fn state(&self, t: f64, z: C) -> (f64, C, C) {
        let (x, y) = self.grid.lattice_coords(z);
        let (i0, w) = self.t_cell(t);
        let basis = (self.mode == Interpolation::Spectral).then(|| Basis::new(&self.grid, x, y));
        let eval = |f: &Nodal| {
            let at = |it: usize| match &basis {
                Some(bs) => bs.eval(&f.spectra.as_ref().expect("spectra")[it]),
                None => bilinear(&self.grid, &f.values, it, x, y),
            };
            if w == 0.0 {
                at(i0)
            } else {
                at(i0) * (1.0 - w) + at(i0 + 1) * w
            }
        };
        (1.0 + eval(&self.a).re, eval(&self.b), eval(&self.mixed))
    }

    /// Lower plane index and weight of the cell holding `t`.
    fn t_cell(&self, t: f64) -> (usize, f64) {
        let g = &self.grid;
        let s = (t / g.ht()).clamp(0.0, (g.nt - 1) as f64);
        let i0 = (s.floor() as usize).min(g.nt - 2);
        (i0, s - i0 as f64)
    }

    fn velocity(&self, t: f64, z: C) -> Result<C, f64> {
        let (r, _, m) = self.state(t, z);
        if r > 0.0 {
            Ok(-0.5 * m / r)
        } else {
            Err(r)
        }
    }
}

fn bilinear(g: &Grid, v: &[C], it: usize, x: f64, y: f64) -> C {
    let (sx, sy) = (x * g.nx as f64, y * g.ny as f64);
    let (ix, iy) = (sx.floor(), sy.floor());
    let (wx, wy) = (sx - ix, sy - iy);
    let (ix, iy) = (ix as isize, iy as isize);
    let f = |dx: isize, dy: isize| v[g.index(it, ix + dx, iy + dy)];
    f(0, 0) * ((1.0 - wx) * (1.0 - wy)) + f(1, 0) * (wx * (1.0 - wy)) + f(0, 1) * ((1.0 - wx) * wy) + f(1, 1) * (wx * wy)
}

fn plane_spectra(g: &Grid, v: &[C]) -> Vec<Vec<C>> {
    let mut planner = FftPlanner::new();
    let (fx, fy) = (planner.plan_fft_forward(g.nx), planner.plan_fft_forward(g.ny));
    let p = g.plane_len();
    let norm = 1.0 / p as f64;
    (0..g.nt)
        .map(|it| {
            let mut d = v[it * p..(it + 1) * p].to_vec();
            for row in d.chunks_mut(g.ny) {
                fy.process(row);
            }
            let mut col = vec![C::new(0.0, 0.0); g.nx];
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    col[ix] = d[ix * g.ny + iy];
                }
                fx.process(&mut col);
                for ix in 0..g.nx {
                    d[ix * g.ny + iy] = col[ix] * norm;
                }
            }
            d
        })
        .collect()
}

/// Trigonometric basis values at one point. The Nyquist mode uses a cosine so
/// real data interpolates to real values.
struct Basis {
    ex: Vec<C>,
    ey: Vec<C>,
}

impl Basis {
    fn new(g: &Grid, x: f64, y: f64) -> Self {
        let one = |n: usize, s: f64| -> Vec<C> {
            (0..n)
                .map(|k| {
                    if 2 * k == n {
                        C::new((PI * n as f64 * s).cos(), 0.0)
                    } else {
                        let f = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
                        C::from_polar(1.0, 2.0 * PI * f * s)
                    }
                })
                .collect()
        };
        Self { ex: one(g.nx, x), ey: one(g.ny, y) }
    }

    fn eval(&self, spec: &[C]) -> C {
        let ny = self.ey.len();
        let mut s = C::new(0.0, 0.0);
        for (kx, ex) in self.ex.iter().enumerate() {
            let row = &spec[kx * ny..(kx + 1) * ny];
            let inner: C = row.iter().zip(&self.ey).map(|(c, e)| c * e).sum();
            s += ex * inner;
        }
        s
    }
}

/// Traces the leaf through `(t0, z0)` up to `t = 1` with RK4.
///
/// The step is `ht / m` with `m = ceil(ht / step)`; if `t0` is not a grid
/// point of the `ht / m` lattice the first step is shortened to reach it.
pub fn trace_leaf(field: &LeafField, t0: f64, z0: C, step: f64) -> Result<LeafPath, LeafError> {
    let g = *field.grid();
    if !(0.0..1.0).contains(&t0) {
        return Err(LeafError::StartOutside(t0));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(LeafError::BadStep(step));
    }
    let ht = g.ht();
    let m = (ht / step - 1e-9).ceil().max(1.0) as usize;
    let h = ht / m as f64;
    let mut path = LeafPath { start: (t0, z0), step: h, samples: Vec::new(), aborted: None };
    let is_level = |t: f64| (t / ht - (t / ht).round()).abs() < 1e-9;

    let push = |path: &mut LeafPath, t: f64, z: C| -> bool {
        let (r, b, _) = field.state(t, z);
        path.samples.push(LeafSample { t, z, one_plus_a: r, q_b: b.norm_sqr() / (r * r), on_level: is_level(t) });
        if r > 0.0 {
            true
        } else {
            path.aborted = Some(format!("1 + a = {r:.3e} at t = {t:.6}"));
            false
        }
    };

    let mut t = t0;
    let mut z = z0;
    if !push(&mut path, t, z) {
        return Ok(path);
    }
    // Step times: first to the next sub-level of the uniform ht/m lattice.
    let total = (g.nt - 1) * m;
    let mut k = ((t / h) + 1e-9).floor() as usize + 1;
    while k <= total {
        let t1 = if k == total { 1.0 } else { k as f64 * h };
        let dt = t1 - t;
        if dt > 1e-14 {
            // Stage times stay in [t, t1], which lies in one cell.
            match rk4(field, t, z, dt) {
                Ok(zn) => z = zn,
                Err(r) => {
                    path.aborted = Some(format!("1 + a = {r:.3e} inside step from t = {t:.6}"));
                    return Ok(path);
                }
            }
            t = t1;
            if !push(&mut path, t, z) {
                return Ok(path);
            }
        }
        k += 1;
    }
    Ok(path)
}

fn rk4(field: &LeafField, t: f64, z: C, dt: f64) -> Result<C, f64> {
    let k1 = field.velocity(t, z)?;
    let k2 = field.velocity(t + 0.5 * dt, z + k1 * (0.5 * dt))?;
    let k3 = field.velocity(t + 0.5 * dt, z + k2 * (0.5 * dt))?;
    let k4 = field.velocity(t + dt, z + k3 * dt)?;
    Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// `Q_B` on the grid levels of a path and `(Q_B)_{X Xbar}` estimated as a
/// quarter of the second difference in `t` with stride `ht`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QbAlongLeaf {
    pub t: Vec<f64>,
    pub q_b: Vec<f64>,
    /// At interior levels `t[1..len-1]`.
    pub laplacian: Vec<f64>,
    pub min_laplacian: f64,
    pub max_q_b: f64,
}

pub fn qb_along_leaf(path: &LeafPath) -> Result<QbAlongLeaf, LeafError> {
    let lv: Vec<&LeafSample> = path.samples.iter().filter(|s| s.on_level).collect();
    if lv.len() < 3 {
        return Err(LeafError::TooFewSamples(lv.len()));
    }
    let t: Vec<f64> = lv.iter().map(|s| s.t).collect();
    let q: Vec<f64> = lv.iter().map(|s| s.q_b).collect();
    let ht = t[1] - t[0];
    let lap: Vec<f64> = q.windows(3).map(|w| 0.25 * (w[0] - 2.0 * w[1] + w[2]) / (ht * ht)).collect();
    Ok(QbAlongLeaf {
        min_laplacian: lap.iter().cloned().fold(f64::INFINITY, f64::min),
        max_q_b: q.iter().cloned().fold(0.0, f64::max),
        t,
        q_b: q,
        laplacian: lap,
    })
}

/// `min (Q_B)_{X Xbar} >= -(C_eps eps_tilde_max + C h^2 max Q_B)` on paths with `Q_B < 1/2`.
pub fn check_qb_along_leaf(solution: &Solution, path: &LeafPath, tol: &Tolerances) -> CheckRecord {
    const NAME: &str = "check_qb_along_leaf";
    let data = match qb_along_leaf(path) {
        Ok(d) => d,
        Err(e) => return out_of_hypothesis(NAME, e.to_string()),
    };
    if path.aborted.is_some() || !(data.max_q_b < tol.leaf_q_limit) {
        return out_of_hypothesis(NAME, "Q_B along the path reaches 1/2 or the path left the admissible set".into());
    }
    let h = solution.grid().h();
    let thr = tol.leaf_eps_slack * solution.profile.max_value() + tol.band(h) * data.max_q_b;
    let mut rec = CheckRecord {
        name: NAME.into(),
        status: if data.min_laplacian >= -thr { CheckStatus::Pass } else { CheckStatus::Fail },
        pass: data.min_laplacian >= -thr,
        measured: data.min_laplacian.is_finite().then_some(data.min_laplacian),
        bound: Some(0.0),
        tolerance: Some(thr),
        worst: None,
        extras: Default::default(),
        note: None,
    };
    rec.extras.insert("max_q_b".into(), data.max_q_b);
    rec
}

fn out_of_hypothesis(name: &str, note: String) -> CheckRecord {
    CheckRecord {
        name: name.into(),
        status: CheckStatus::OutOfHypothesis,
        pass: true,
        measured: None,
        bound: None,
        tolerance: None,
        worst: None,
        extras: Default::default(),
        note: Some(note),
    }
}

/// Endpoint errors `|z_end(h) - z_end(h/2)|` for `h = ht / m`, `m = 1, 2, 4, ...`.
pub fn richardson_errors(field: &LeafField, t0: f64, z0: C, levels: usize) -> Result<Vec<f64>, LeafError> {
    let ht = field.grid().ht();
    let ends: Vec<C> = (0..=levels)
        .map(|k| trace_leaf(field, t0, z0, ht / (1 << k) as f64).map(|p| p.end()))
        .collect::<Result<_, _>>()?;
    Ok(ends.windows(2).map(|w| (w[0] - w[1]).norm()).collect())
}

/// Largest `|end(z0 + hx) - end(z0)| / hx` over neighbouring starts along `x`.
pub fn endpoint_lipschitz(field: &LeafField, t0: f64, starts: &[C], step: f64) -> Result<f64, LeafError> {
    let ends: Vec<C> = starts.iter().map(|&z| trace_leaf(field, t0, z, step).map(|p| p.end())).collect::<Result<_, _>>()?;
    Ok(starts
        .windows(2)
        .zip(ends.windows(2))
        .map(|(s, e)| (e[1] - e[0]).norm() / (s[1] - s[0]).norm())
        .fold(0.0, f64::max))
}
