//! Uniform grids on `[0,1] x T` and finite-difference Wirtinger jets.
//!
//! The torus is `C / (Z + lambda Z)` with `Im lambda > 0`. Nodes are indexed by
//! `(it, ix, iy)` with `t = it * ht` and `z = x + lambda y`, `x = ix / nx`,
//! `y = iy / ny`. Field values are stored `it`-major, then `ix`, then `iy`.
//!
//! Derivatives are taken in the lattice coordinates `(x, y)` with central
//! differences and then mapped to real coordinates `X = Re z`, `Y = Im z`.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid dimensions nt={nt}, nx={nx}, ny={ny} (need nt >= 3, nx >= 4, ny >= 4)")]
    InvalidDimensions { nt: usize, nx: usize, ny: usize },
    #[error("torus modulus must have positive imaginary part, got {0}")]
    DegenerateModulus(Complex64),
    #[error("node ({it}, {ix}, {iy}) is outside the grid")]
    NodeOutOfRange { it: usize, ix: usize, iy: usize },
    #[error("t = {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("field has {got} values, grid has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
}

/// Node coordinates on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub it: usize,
    pub ix: usize,
    pub iy: usize,
}

impl Node {
    pub fn new(it: usize, ix: usize, iy: usize) -> Self {
        Self { it, ix, iy }
    }
}

/// Uniform grid on `[0,1] x C/(Z + lambda Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub modulus: Complex64,
}

impl Grid {
    pub fn new(nt: usize, nx: usize, ny: usize, modulus: Complex64) -> Result<Self, GridError> {
        if nt < 3 || nx < 4 || ny < 4 {
            return Err(GridError::InvalidDimensions { nt, nx, ny });
        }
        if !(modulus.im > 0.0) || !modulus.re.is_finite() || !modulus.im.is_finite() {
            return Err(GridError::DegenerateModulus(modulus));
        }
        Ok(Self { nt, nx, ny, modulus })
    }

    /// Square torus, `lambda = i`.
    pub fn square(nt: usize, nx: usize, ny: usize) -> Result<Self, GridError> {
        Self::new(nt, nx, ny, I)
    }

    pub fn ht(&self) -> f64 {
        1.0 / (self.nt - 1) as f64
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    /// Largest mesh width, used for all `C h^p` tolerance bands.
    pub fn h(&self) -> f64 {
        self.ht().max(self.hx()).max(self.hy())
    }

    pub fn len(&self) -> usize {
        self.nt * self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index with periodic wrap in `x` and `y`.
    #[inline]
    pub fn index(&self, it: usize, ix: isize, iy: isize) -> usize {
        let ix = ix.rem_euclid(self.nx as isize) as usize;
        let iy = iy.rem_euclid(self.ny as isize) as usize;
        (it * self.nx + ix) * self.ny + iy
    }

    #[inline]
    pub fn node_index(&self, node: Node) -> usize {
        (node.it * self.nx + node.ix) * self.ny + node.iy
    }

    #[inline]
    pub fn node(&self, idx: usize) -> Node {
        let iy = idx % self.ny;
        let rest = idx / self.ny;
        Node { it: rest / self.nx, ix: rest % self.nx, iy }
    }

    pub fn contains(&self, node: Node) -> bool {
        node.it < self.nt && node.ix < self.nx && node.iy < self.ny
    }

    pub fn t(&self, it: usize) -> f64 {
        it as f64 * self.ht()
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.hx()
    }

    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.hy()
    }

    pub fn z(&self, ix: usize, iy: usize) -> Complex64 {
        Complex64::new(self.x(ix), 0.0) + self.modulus * self.y(iy)
    }

    pub fn is_boundary_plane(&self, it: usize) -> bool {
        it == 0 || it + 1 == self.nt
    }

    /// Lattice coordinates `(x, y)` of a point `z`, reduced to `[0,1)^2`.
    pub fn lattice_coords(&self, z: Complex64) -> (f64, f64) {
        let y = z.im / self.modulus.im;
        let x = z.re - self.modulus.re * y;
        (x.rem_euclid(1.0), y.rem_euclid(1.0))
    }

    /// Coefficients `(kappa, nu)` with `d/dY = -kappa d/dx + nu d/dy`.
    pub fn chain(&self) -> (f64, f64) {
        (self.modulus.re / self.modulus.im, 1.0 / self.modulus.im)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = Node> + '_ {
        let start = self.plane_len();
        let end = self.len() - self.plane_len();
        (start..end).map(move |i| self.node(i))
    }
}

/// Real scalar field sampled on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { got: values.len(), expected: grid.len() });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(t, x, y)` in lattice coordinates.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let values = grid
            .nodes()
            .map(|n| f(grid.t(n.it), grid.x(n.ix), grid.y(n.iy)))
            .collect();
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, it: usize, ix: isize, iy: isize) -> f64 {
        self.values[self.grid.index(it, ix, iy)]
    }

    pub fn plane(&self, it: usize) -> &[f64] {
        let p = self.grid.plane_len();
        &self.values[it * p..(it + 1) * p]
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pointwise derivatives of a real field, in `t` and Wirtinger form.
///
/// `a = Phi_{z zbar}` and `b = Phi_{zz}`. `d_tz = Phi_{tz}`; the conjugate
/// derivatives follow from reality of the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d_t: f64,
    pub d_tt: f64,
    pub d_z: Complex64,
    pub a: f64,
    pub b: Complex64,
    pub d_tz: Complex64,
    /// True when the `t`-derivatives used one-sided stencils.
    pub one_sided_t: bool,
    pub third: Option<ThirdJet>,
}

impl Jet {
    pub fn d_zb(&self) -> Complex64 {
        self.d_z.conj()
    }

    pub fn d_tzb(&self) -> Complex64 {
        self.d_tz.conj()
    }

    pub fn one_plus_a(&self) -> f64 {
        1.0 + self.a
    }
}

/// Third derivatives, as derivatives of `a` and `b`.
///
/// `a_z` and `b_zb` both approximate `Phi_{zz zbar}`; they agree up to the
/// discretization error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThirdJet {
    pub a_t: f64,
    pub a_z: Complex64,
    pub b_t: Complex64,
    pub b_z: Complex64,
    pub b_zb: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetOrder {
    Second,
    Third,
}

/// Lattice-coordinate derivatives at one node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LatticeDerivs<T> {
    pub v: T,
    pub t: T,
    pub tt: T,
    pub x: T,
    pub y: T,
    pub xx: T,
    pub yy: T,
    pub xy: T,
    pub tx: T,
    pub ty: T,
    pub one_sided_t: bool,
}

pub(crate) trait FieldValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
}
impl FieldValue for f64 {}
impl FieldValue for Complex64 {}

/// `t`-derivative weights for plane `it`: first and second derivative stencils.
/// Returns `(offsets, d1, d2, one_sided)`.
fn t_weights(nt: usize, it: usize, ht: f64) -> ([usize; 4], [f64; 4], [f64; 4], bool) {
    let h2 = ht * ht;
    if it > 0 && it + 1 < nt {
        let o = [it - 1, it, it + 1, it];
        let d1 = [-0.5 / ht, 0.0, 0.5 / ht, 0.0];
        let d2 = [1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0];
        return (o, d1, d2, false);
    }
    let forward = it == 0;
    let o = if forward {
        [0, 1, 2, 3.min(nt - 1)]
    } else {
        let n = nt - 1;
        [n, n - 1, n - 2, n.saturating_sub(3)]
    };
    let s = if forward { 1.0 } else { -1.0 };
    let d1 = [-1.5 * s / ht, 2.0 * s / ht, -0.5 * s / ht, 0.0];
    let d2 = if nt >= 4 {
        [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2]
    } else {
        [1.0 / h2, -2.0 / h2, 1.0 / h2, 0.0]
    };
    (o, d1, d2, true)
}

pub(crate) fn lattice_derivs<T: FieldValue>(
    grid: &Grid,
    get: impl Fn(usize, isize, isize) -> T,
    node: Node,
) -> LatticeDerivs<T> {
    let (hx, hy, ht) = (grid.hx(), grid.hy(), grid.ht());
    let (ix, iy) = (node.ix as isize, node.iy as isize);
    let it = node.it;
    let v = get(it, ix, iy);

    let dx = |k: usize| (get(k, ix + 1, iy) - get(k, ix - 1, iy)) * (0.5 / hx);
    let dy = |k: usize| (get(k, ix, iy + 1) - get(k, ix, iy - 1)) * (0.5 / hy);

    let x = dx(it);
    let y = dy(it);
    let xx = (get(it, ix + 1, iy) - v * 2.0 + get(it, ix - 1, iy)) * (1.0 / (hx * hx));
    let yy = (get(it, ix, iy + 1) - v * 2.0 + get(it, ix, iy - 1)) * (1.0 / (hy * hy));
    let xy = (get(it, ix + 1, iy + 1) - get(it, ix + 1, iy - 1) - get(it, ix - 1, iy + 1)
        + get(it, ix - 1, iy - 1))
        * (0.25 / (hx * hy));

    let (o, d1, d2, one_sided_t) = t_weights(grid.nt, it, ht);
    let mut t = v * 0.0;
    let mut tt = v * 0.0;
    let mut tx = v * 0.0;
    let mut ty = v * 0.0;
    for k in 0..4 {
        if d1[k] != 0.0 {
            t = t + get(o[k], ix, iy) * d1[k];
            tx = tx + dx(o[k]) * d1[k];
            ty = ty + dy(o[k]) * d1[k];
        }
        if d2[k] != 0.0 {
            tt = tt + get(o[k], ix, iy) * d2[k];
        }
    }
    LatticeDerivs { v, t, tt, x, y, xx, yy, xy, tx, ty, one_sided_t }
}

/// Wirtinger derivatives of a (possibly complex) field at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexJet {
    pub value: Complex64,
    pub d_t: Complex64,
    pub d_tt: Complex64,
    pub d_z: Complex64,
    pub d_zb: Complex64,
    pub d_zz: Complex64,
    pub d_zbzb: Complex64,
    pub d_zzb: Complex64,
    pub d_tz: Complex64,
    pub d_tzb: Complex64,
    pub one_sided_t: bool,
}

fn to_complex_jet(grid: &Grid, d: LatticeDerivs<Complex64>) -> ComplexJet {
    let (k, nu) = grid.chain();
    let fx = d.x;
    let fy = d.y * nu - d.x * k;
    let fxx = d.xx;
    let fxy = d.xy * nu - d.xx * k;
    let fyy = d.xx * (k * k) - d.xy * (2.0 * k * nu) + d.yy * (nu * nu);
    let ftx = d.tx;
    let fty = d.ty * nu - d.tx * k;
    ComplexJet {
        value: d.v,
        d_t: d.t,
        d_tt: d.tt,
        d_z: (fx - I * fy) * 0.5,
        d_zb: (fx + I * fy) * 0.5,
        d_zz: (fxx - fyy - I * fxy * 2.0) * 0.25,
        d_zbzb: (fxx - fyy + I * fxy * 2.0) * 0.25,
        d_zzb: (fxx + fyy) * 0.25,
        d_tz: (ftx - I * fty) * 0.5,
        d_tzb: (ftx + I * fty) * 0.5,
        one_sided_t: d.one_sided_t,
    }
}

/// Jet of a complex field stored in grid order.
pub fn complex_jet(grid: &Grid, values: &[Complex64], node: Node) -> ComplexJet {
    to_complex_jet(grid, lattice_derivs(grid, |it, ix, iy| values[grid.index(it, ix, iy)], node))
}

/// `a` and `b` of a real field using only in-plane stencils.
pub(crate) fn planar_ab(field: &ScalarField, it: usize, ix: isize, iy: isize) -> (f64, Complex64) {
    let g = &field.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let (k, nu) = g.chain();
    let v = field.at(it, ix, iy);
    let xx = (field.at(it, ix + 1, iy) - 2.0 * v + field.at(it, ix - 1, iy)) / (hx * hx);
    let yy = (field.at(it, ix, iy + 1) - 2.0 * v + field.at(it, ix, iy - 1)) / (hy * hy);
    let xy = (field.at(it, ix + 1, iy + 1) - field.at(it, ix + 1, iy - 1)
        - field.at(it, ix - 1, iy + 1)
        + field.at(it, ix - 1, iy - 1))
        / (4.0 * hx * hy);
    let f_xx = xx;
    let f_xy = nu * xy - k * xx;
    let f_yy = k * k * xx - 2.0 * k * nu * xy + nu * nu * yy;
    let a = 0.25 * (f_xx + f_yy);
    let b = Complex64::new(0.25 * (f_xx - f_yy), -0.5 * f_xy);
    (a, b)
}

/// Finite-difference jet of a real field at `node`.
///
/// Interior planes use second-order central stencils. On `t = 0` and `t = 1`
/// the `t`-derivatives are one-sided and the jet is flagged.
pub fn wirtinger_jet(field: &ScalarField, node: Node, order: JetOrder) -> Result<Jet, GridError> {
    let g = &field.grid;
    if !g.contains(node) {
        return Err(GridError::NodeOutOfRange { it: node.it, ix: node.ix, iy: node.iy });
    }
    let d = lattice_derivs(g, |it, ix, iy| field.at(it, ix, iy), node);
    let (k, nu) = g.chain();
    let fx = d.x;
    let fy = nu * d.y - k * d.x;
    let fxx = d.xx;
    let fxy = nu * d.xy - k * d.xx;
    let fyy = k * k * d.xx - 2.0 * k * nu * d.xy + nu * nu * d.yy;
    let ftx = d.tx;
    let fty = nu * d.ty - k * d.tx;

    let third = match order {
        JetOrder::Second => None,
        JetOrder::Third => Some(third_jet(field, node)),
    };

    Ok(Jet {
        value: d.v,
        d_t: d.t,
        d_tt: d.tt,
        d_z: Complex64::new(0.5 * fx, -0.5 * fy),
        a: 0.25 * (fxx + fyy),
        b: Complex64::new(0.25 * (fxx - fyy), -0.5 * fxy),
        d_tz: Complex64::new(0.5 * ftx, -0.5 * fty),
        one_sided_t: d.one_sided_t,
        third,
    })
}

fn third_jet(field: &ScalarField, node: Node) -> ThirdJet {
    let g = &field.grid;
    let ab = |it: usize, ix: isize, iy: isize| {
        let (a, b) = planar_ab(field, it, ix, iy);
        (Complex64::new(a, 0.0), b)
    };
    let da = lattice_derivs(g, |it, ix, iy| ab(it, ix, iy).0, node);
    let db = lattice_derivs(g, |it, ix, iy| ab(it, ix, iy).1, node);
    let ja = to_complex_jet(g, da);
    let jb = to_complex_jet(g, db);
    ThirdJet { a_t: ja.d_t.re, a_z: ja.d_z, b_t: jb.d_t, b_z: jb.d_z, b_zb: jb.d_zb }
}

/// Trilinear interpolation at `(t, x, y)` with `x, y` in lattice coordinates
/// (wrapped periodically).
pub fn interpolate(field: &ScalarField, t: f64, x: f64, y: f64) -> Result<f64, GridError> {
    let g = &field.grid;
    if !(0.0..=1.0).contains(&t) {
        return Err(GridError::TimeOutOfRange(t));
    }
    let (it, ft) = cell(t / g.ht(), g.nt - 1);
    let (ix, fx) = cell(x.rem_euclid(1.0) * g.nx as f64, g.nx);
    let (iy, fy) = cell(y.rem_euclid(1.0) * g.ny as f64, g.ny);
    let (ix, iy) = (ix as isize, iy as isize);
    let plane = |k: usize| {
        let v00 = field.at(k, ix, iy);
        let v10 = field.at(k, ix + 1, iy);
        let v01 = field.at(k, ix, iy + 1);
        let v11 = field.at(k, ix + 1, iy + 1);
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    };
    Ok((1.0 - ft) * plane(it) + ft * plane(it + 1))
}

/// Cell index and fractional offset for a scaled coordinate `s` in `[0, n]`.
fn cell(s: f64, n: usize) -> (usize, f64) {
    let i = (s.floor() as usize).min(n - 1);
    (i, s - i as f64)
}
