//! Sparse storage, restarted GMRES and the frozen-coefficient preconditioner
//! used for the Newton updates.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from per-row entries. Duplicate columns are summed.
    pub fn from_rows(n: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        assert_eq!(row_ptr.len(), n + 1, "row count mismatch");
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }
}

pub trait Preconditioner {
    /// Approximates `z = A^{-1} r`.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { restart: 40, max_iters: 2000, rel_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted GMRES with right preconditioning and modified Gram-Schmidt.
///
/// Solves `A x = b` starting from the contents of `x`. The returned relative
/// residual is the true residual `|b - A x| / |b|` after the last restart.
pub fn gmres(
    a: &CsrMatrix,
    m: &dyn Preconditioner,
    b: &[f64],
    x: &mut [f64],
    opts: GmresOptions,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return GmresOutcome { iterations: 0, rel_residual: 0.0, converged: true };
    }
    let target = opts.rel_tol * bnorm;
    let mm = opts.restart.max(1);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(mm + 1);
    let mut h = vec![vec![0.0; mm]; mm + 1];
    let mut cs = vec![0.0; mm];
    let mut sn = vec![0.0; mm];
    let mut g = vec![0.0; mm + 1];
    let mut total = 0;

    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta <= target || total >= opts.max_iters {
            return GmresOutcome {
                iterations: total,
                rel_residual: beta / bnorm,
                converged: beta <= target,
            };
        }
        v.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut k = 0;
        while k < mm && total < opts.max_iters {
            m.apply(&v[k], &mut z);
            a.matvec(&z, &mut w);
            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(&v[i]) {
                    *wj -= hik * vj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            if g[k].abs() <= 0.5 * target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // Back substitution and update x += M^{-1} V y.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        w.iter_mut().for_each(|wi| *wi = 0.0);
        for (j, yj) in y.iter().enumerate() {
            for (wi, vi) in w.iter_mut().zip(&v[j]) {
                *wi += yj * vi;
            }
        }
        m.apply(&w, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
    }
}

/// Coefficients of the linearized operator at one node, in lattice
/// second-derivative form:
/// `w_tt D_tt + w_xx D_xx + w_xy D_xy + w_yy D_yy + w_tx D_tx + w_ty D_ty`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StencilWeights {
    pub tt: f64,
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl StencilWeights {
    fn add_scaled(&mut self, o: &StencilWeights, s: f64) {
        self.tt += s * o.tt;
        self.xx += s * o.xx;
        self.xy += s * o.xy;
        self.yy += s * o.yy;
        self.tx += s * o.tx;
        self.ty += s * o.ty;
    }
}

/// Row of the lattice stencil for `weights` at node `(it, ix, iy)`.
pub fn stencil_row(grid: &Grid, it: usize, ix: usize, iy: usize, w: &StencilWeights) -> Vec<(usize, f64)> {
    let (ht, hx, hy) = (grid.ht(), grid.hx(), grid.hy());
    let (ix, iy) = (ix as isize, iy as isize);
    let mut r = Vec::with_capacity(27);
    let mut push = |dt: isize, dx: isize, dy: isize, v: f64| {
        r.push((grid.index((it as isize + dt) as usize, ix + dx, iy + dy), v))
    };
    push(0, 0, 0, -2.0 * w.tt / (ht * ht) - 2.0 * w.xx / (hx * hx) - 2.0 * w.yy / (hy * hy));
    for s in [-1, 1] {
        push(s, 0, 0, w.tt / (ht * ht));
        push(0, s, 0, w.xx / (hx * hx));
        push(0, 0, s, w.yy / (hy * hy));
        for q in [-1, 1] {
            let sq = (s * q) as f64;
            push(0, s, q, w.xy * sq / (4.0 * hx * hy));
            push(s, q, 0, w.tx * sq / (4.0 * ht * hx));
            push(s, 0, q, w.ty * sq / (4.0 * ht * hy));
        }
    }
    r
}

/// Two-dimensional FFT on `nx x ny` planes stored `ix`-major.
struct Fft2 {
    nx: usize,
    ny: usize,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(nx: usize, ny: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            nx,
            ny,
            fx: p.plan_fft_forward(nx),
            fy: p.plan_fft_forward(ny),
            ix: p.plan_fft_inverse(nx),
            iy: p.plan_fft_inverse(ny),
        }
    }

    fn run(&self, data: &mut [Complex64], fx: &dyn Fft<f64>, fy: &dyn Fft<f64>) {
        fy.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); self.nx];
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                col[ix] = data[ix * self.ny + iy];
            }
            fx.process(&mut col);
            for ix in 0..self.nx {
                data[ix * self.ny + iy] = col[ix];
            }
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.run(data, self.fx.as_ref(), self.fy.as_ref());
    }

    fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, self.ix.as_ref(), self.iy.as_ref());
        let s = 1.0 / (self.nx * self.ny) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Frozen-coefficient preconditioner.
///
/// Coefficients are averaged over each interior `t`-plane. Each Fourier mode
/// in `(x, y)` then decouples into a tridiagonal system in `t`, with identity
/// rows on the two boundary planes.
pub struct FrozenPlanePreconditioner {
    grid: Grid,
    fft: Fft2,
    /// Per interior plane `it = 1..nt-1`, per mode: (lower, diag, upper).
    rows: Vec<Vec<(Complex64, Complex64, Complex64)>>,
}

impl FrozenPlanePreconditioner {
    /// `weights` holds one entry per grid node; boundary entries are ignored.
    pub fn new(grid: Grid, weights: &[StencilWeights]) -> Self {
        let (nt, nx, ny) = (grid.nt, grid.nx, grid.ny);
        let (ht, hx, hy) = (grid.ht(), grid.hx(), grid.hy());
        let p = grid.plane_len();
        let mut rows = Vec::with_capacity(nt - 2);
        for it in 1..nt - 1 {
            let mut w = StencilWeights::default();
            for s in &weights[it * p..(it + 1) * p] {
                w.add_scaled(s, 1.0 / p as f64);
            }
            let mut plane = Vec::with_capacity(p);
            for kx in 0..nx {
                let tx = 2.0 * PI * kx as f64 / nx as f64;
                for ky in 0..ny {
                    let ty = 2.0 * PI * ky as f64 / ny as f64;
                    let sxx = (2.0 * tx.cos() - 2.0) / (hx * hx);
                    let syy = (2.0 * ty.cos() - 2.0) / (hy * hy);
                    let (sx, sy) = (tx.sin() / hx, ty.sin() / hy);
                    let planar = w.xx * sxx + w.yy * syy - w.xy * sx * sy;
                    let mu = Complex64::new(0.0, (w.tx * sx + w.ty * sy) / (2.0 * ht));
                    let c = Complex64::new(w.tt / (ht * ht), 0.0);
                    let diag = Complex64::new(-2.0 * w.tt / (ht * ht) + planar, 0.0);
                    plane.push((c - mu, diag, c + mu));
                }
            }
            rows.push(plane);
        }
        Self { grid, fft: Fft2::new(nx, ny), rows }
    }
}

impl Preconditioner for FrozenPlanePreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let g = &self.grid;
        let (nt, p) = (g.nt, g.plane_len());
        let mut hat: Vec<Vec<Complex64>> = (0..nt)
            .map(|it| {
                let mut v: Vec<Complex64> =
                    r[it * p..(it + 1) * p].iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.fft.forward(&mut v);
                v
            })
            .collect();
        let m = nt - 2;
        let mut cp = vec![Complex64::new(0.0, 0.0); m];
        let mut dp = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..p {
            // Thomas elimination over interior planes; boundary values are known.
            let zero = Complex64::new(0.0, 0.0);
            for i in 0..m {
                let (lo, di, up) = self.rows[i][k];
                let mut rhs = hat[i + 1][k];
                if i == 0 {
                    rhs -= lo * hat[0][k];
                }
                if i + 1 == m {
                    rhs -= up * hat[nt - 1][k];
                }
                let (den, carry) = if i == 0 { (di, zero) } else { (di - lo * cp[i - 1], lo * dp[i - 1]) };
                cp[i] = up / den;
                dp[i] = (rhs - carry) / den;
            }
            let mut next = zero;
            for i in (0..m).rev() {
                next = dp[i] - cp[i] * next;
                hat[i + 1][k] = next;
            }
        }
        for it in 0..nt {
            if it == 0 || it == nt - 1 {
                z[it * p..(it + 1) * p].copy_from_slice(&r[it * p..(it + 1) * p]);
                continue;
            }
            self.fft.inverse(&mut hat[it]);
            for (zi, h) in z[it * p..(it + 1) * p].iter_mut().zip(&hat[it]) {
                *zi = h.re;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_merges_duplicates() {
        let a = CsrMatrix::from_rows(2, vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![(0, -1.0)]]);
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 3);
        let mut y = vec![0.0; 2];
        a.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, -1.0]);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 50;
        let rows = (0..n).map(|i| {
            let mut r = vec![(i, 4.0)];
            if i > 0 {
                r.push((i - 1, -1.5));
            }
            if i + 1 < n {
                r.push((i + 1, -0.5));
            }
            r
        });
        let a = CsrMatrix::from_rows(n, rows);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&xs, &mut b);
        let mut x = vec![0.0; n];
        let out = gmres(&a, &Identity, &b, &mut x, GmresOptions { restart: 7, ..Default::default() });
        assert!(out.converged, "{out:?}");
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    /// Assembles the constant-coefficient operator with the same stencils the
    /// preconditioner diagonalizes, then checks that the preconditioner is its
    /// exact inverse.
    #[test]
    fn preconditioner_inverts_constant_coefficient_operator() {
        let g = Grid::square(7, 8, 6).unwrap();
        let w = StencilWeights { tt: 1.3, xx: 0.2, xy: -0.05, yy: 0.25, tx: 0.04, ty: -0.03 };
        let weights = vec![w; g.len()];
        let rows = (0..g.len()).map(|idx| {
            let n = g.node(idx);
            if g.is_boundary_plane(n.it) {
                vec![(idx, 1.0)]
            } else {
                stencil_row(&g, n.it, n.ix, n.iy, &w)
            }
        });
        let a = CsrMatrix::from_rows(g.len(), rows);
        let pre = FrozenPlanePreconditioner::new(g, &weights);
        let xs: Vec<f64> = (0..g.len()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 7.0).collect();
        let mut b = vec![0.0; g.len()];
        a.matvec(&xs, &mut b);
        let mut x = vec![0.0; g.len()];
        pre.apply(&b, &mut x);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }
}
