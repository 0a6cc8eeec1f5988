//! Channel geometry and finite-difference operators.
//!
//! The domain is `[0, Lx) x [0, Ly]`, periodic in x. The walls `y = 0` and
//! `y = Ly` make up the boundary, each carrying a periodic 1D
//! Laplace-Beltrami operator. Boundary values share storage with the wall
//! rows of the bulk grid, so a nodal vector on the bulk grid *is* a
//! trace-compatible (bulk, boundary) pair.
//!
//! Bulk nodes are numbered row-major, x fastest: `idx = j * nx + i`.
//! Boundary nodes are numbered bottom wall first, then top wall.

use crate::error::{check_len, Error, Result};
use crate::linalg::TripletMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    Bottom,
    Top,
}

impl Wall {
    pub fn name(self) -> &'static str {
        match self {
            Wall::Bottom => "bottom",
            Wall::Top => "top",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    bulk_weights: Vec<f64>,
    bdry_weights: Vec<f64>,
    wall_ids: Vec<(Wall, usize)>,
    node_mass: Vec<f64>,
}

/// One edge of the discrete Dirichlet form `sum c * (f[a] - f[b])^2`.
#[derive(Debug, Clone, Copy)]
struct Edge {
    a: usize,
    b: usize,
    c: f64,
}

pub fn build_channel_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Grid> {
    if !(lx > 0.0 && lx.is_finite()) || !(ly > 0.0 && ly.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "lengths must be positive, got Lx = {lx}, Ly = {ly}"
        )));
    }
    if nx < 4 || ny < 3 {
        return Err(Error::InvalidGrid(format!(
            "need nx >= 4 and ny >= 3, got nx = {nx}, ny = {ny}"
        )));
    }
    let hx = lx / nx as f64;
    let hy = ly / (ny - 1) as f64;
    let mut bulk_weights = vec![hx * hy; nx * ny];
    for i in 0..nx {
        bulk_weights[i] *= 0.5;
        bulk_weights[(ny - 1) * nx + i] *= 0.5;
    }
    let bdry_weights = vec![hx; 2 * nx];
    let wall_ids = (0..nx)
        .map(|i| (Wall::Bottom, i))
        .chain((0..nx).map(|i| (Wall::Top, i)))
        .collect::<Vec<_>>();
    let mut node_mass = bulk_weights.clone();
    for (k, &(wall, i)) in wall_ids.iter().enumerate() {
        let row = if wall == Wall::Bottom { 0 } else { ny - 1 };
        node_mass[row * nx + i] += bdry_weights[k];
    }
    Ok(Grid {
        lx,
        ly,
        nx,
        ny,
        hx,
        hy,
        bulk_weights,
        bdry_weights,
        wall_ids,
        node_mass,
    })
}

impl Grid {
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn hy(&self) -> f64 {
        self.hy
    }
    pub fn bulk_weights(&self) -> &[f64] {
        &self.bulk_weights
    }
    pub fn bdry_weights(&self) -> &[f64] {
        &self.bdry_weights
    }
    pub fn wall_ids(&self) -> &[(Wall, usize)] {
        &self.wall_ids
    }
    /// Bulk plus boundary quadrature weight of each node (lumped mass).
    pub fn node_mass(&self) -> &[f64] {
        &self.node_mass
    }
    pub fn n_bulk(&self) -> usize {
        self.nx * self.ny
    }
    pub fn n_bdry(&self) -> usize {
        2 * self.nx
    }
    /// |Omega|
    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }
    /// |Gamma|
    pub fn area(&self) -> f64 {
        2.0 * self.lx
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy
    }

    /// Bulk node identified with boundary node `k`.
    #[inline]
    pub fn bdry_node(&self, k: usize) -> usize {
        let (wall, i) = self.wall_ids[k];
        match wall {
            Wall::Bottom => self.idx(i, 0),
            Wall::Top => self.idx(i, self.ny - 1),
        }
    }

    pub fn is_wall_row(&self, j: usize) -> bool {
        j == 0 || j + 1 == self.ny
    }

    /// Samples `f(x, y)` on every bulk node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_bulk());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(f(self.x(i), self.y(j)));
            }
        }
        out
    }

    pub fn trace(&self, bulk: &[f64]) -> Vec<f64> {
        (0..self.n_bdry()).map(|k| bulk[self.bdry_node(k)]).collect()
    }

    fn check_bulk(&self, what: &'static str, f: &[f64]) -> Result<()> {
        check_len(what, self.n_bulk(), f.len())
    }

    fn check_bdry(&self, what: &'static str, f: &[f64]) -> Result<()> {
        check_len(what, self.n_bdry(), f.len())
    }

    fn edges(&self) -> Vec<Edge> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            let mut c = self.hy / self.hx;
            if self.is_wall_row(j) {
                c = 0.5 * c + 1.0 / self.hx;
            }
            for i in 0..nx {
                out.push(Edge {
                    a: self.idx(i, j),
                    b: self.idx((i + 1) % nx, j),
                    c,
                });
            }
        }
        let c = self.hx / self.hy;
        for j in 0..ny - 1 {
            for i in 0..nx {
                out.push(Edge {
                    a: self.idx(i, j),
                    b: self.idx(i, j + 1),
                    c,
                });
            }
        }
        out
    }

    /// Stiffness matrix of the coupled form
    /// `int_Omega grad f . grad v + int_Gamma grad_G f . grad_G v`
    /// on trace-compatible nodal vectors.
    pub fn stiffness(&self) -> TripletMatrix {
        let n = self.n_bulk();
        let mut t = TripletMatrix::with_capacity(n, n, 5 * n);
        for i in 0..n {
            t.push(i, i, 0.0);
        }
        for e in self.edges() {
            t.push(e.a, e.a, e.c);
            t.push(e.b, e.b, e.c);
            t.push(e.a, e.b, -e.c);
            t.push(e.b, e.a, -e.c);
        }
        t
    }

    pub fn apply_stiffness(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for e in self.edges() {
            let d = e.c * (f[e.a] - f[e.b]);
            out[e.a] += d;
            out[e.b] -= d;
        }
        out
    }

    /// `f^T K f`: squared L2 norm of the bulk gradient plus that of the
    /// surface gradient.
    pub fn dirichlet_energy(&self, f: &[f64]) -> f64 {
        self.edges()
            .iter()
            .map(|e| e.c * (f[e.a] - f[e.b]).powi(2))
            .sum()
    }

    pub fn dirichlet_form(&self, f: &[f64], v: &[f64]) -> f64 {
        self.edges()
            .iter()
            .map(|e| e.c * (f[e.a] - f[e.b]) * (v[e.a] - v[e.b]))
            .sum()
    }

    /// Five-point Laplacian, periodic in x. On wall rows the missing outer
    /// neighbour is mirrored, which is the value the coupled assembly pairs
    /// with the boundary equation (`stiffness` row = -(w * this + w_G * LB)).
    pub fn laplacian_bulk(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_bulk("laplacian_bulk", f)?;
        let (nx, ny) = (self.nx, self.ny);
        let (ihx2, ihy2) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let mut out = vec![0.0; f.len()];
        for j in 0..ny {
            for i in 0..nx {
                let c = f[self.idx(i, j)];
                let e = f[self.idx((i + 1) % nx, j)];
                let w = f[self.idx((i + nx - 1) % nx, j)];
                let yy = if j == 0 {
                    2.0 * (f[self.idx(i, 1)] - c)
                } else if j == ny - 1 {
                    2.0 * (f[self.idx(i, ny - 2)] - c)
                } else {
                    f[self.idx(i, j + 1)] - 2.0 * c + f[self.idx(i, j - 1)]
                };
                out[self.idx(i, j)] = (e - 2.0 * c + w) * ihx2 + yy * ihy2;
            }
        }
        Ok(out)
    }

    pub fn laplace_beltrami(&self, fg: &[f64]) -> Result<Vec<f64>> {
        self.check_bdry("laplace_beltrami", fg)?;
        let nx = self.nx;
        let ihx2 = 1.0 / (self.hx * self.hx);
        let mut out = vec![0.0; fg.len()];
        for wall in 0..2 {
            let off = wall * nx;
            for i in 0..nx {
                let c = fg[off + i];
                let e = fg[off + (i + 1) % nx];
                let w = fg[off + (i + nx - 1) % nx];
                out[off + i] = (e - 2.0 * c + w) * ihx2;
            }
        }
        Ok(out)
    }

    /// Outward normal derivative on both walls from the one-sided
    /// three-point stencil (exact on quadratics).
    pub fn normal_derivative(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_bulk("normal_derivative", f)?;
        let (nx, ny) = (self.nx, self.ny);
        let s = 1.0 / (2.0 * self.hy);
        let mut out = Vec::with_capacity(2 * nx);
        for i in 0..nx {
            let (f0, f1, f2) = (f[self.idx(i, 0)], f[self.idx(i, 1)], f[self.idx(i, 2)]);
            out.push((3.0 * f0 - 4.0 * f1 + f2) * s);
        }
        for i in 0..nx {
            let (f0, f1, f2) = (
                f[self.idx(i, ny - 1)],
                f[self.idx(i, ny - 2)],
                f[self.idx(i, ny - 3)],
            );
            out.push((3.0 * f0 - 4.0 * f1 + f2) * s);
        }
        Ok(out)
    }

    /// Centered x-derivative, periodic.
    pub fn dx(&self, f: &[f64]) -> Vec<f64> {
        let nx = self.nx;
        let s = 1.0 / (2.0 * self.hx);
        let mut out = vec![0.0; f.len()];
        for j in 0..self.ny {
            for i in 0..nx {
                out[self.idx(i, j)] =
                    (f[self.idx((i + 1) % nx, j)] - f[self.idx((i + nx - 1) % nx, j)]) * s;
            }
        }
        out
    }

    /// Stencil `(row, coefficient)` of the y-derivative at row `j`:
    /// centered in the interior, one-sided second order on the walls.
    fn dy_stencil(&self, j: usize) -> [(usize, f64); 3] {
        let s = 1.0 / (2.0 * self.hy);
        let ny = self.ny;
        if j == 0 {
            [(0, -3.0 * s), (1, 4.0 * s), (2, -s)]
        } else if j == ny - 1 {
            [(ny - 1, 3.0 * s), (ny - 2, -4.0 * s), (ny - 3, s)]
        } else {
            [(j + 1, s), (j - 1, -s), (j, 0.0)]
        }
    }

    pub fn dy(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for j in 0..self.ny {
            let st = self.dy_stencil(j);
            for i in 0..self.nx {
                out[self.idx(i, j)] = st.iter().map(|&(jj, c)| c * f[self.idx(i, jj)]).sum();
            }
        }
        out
    }

    fn dy_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for j in 0..self.ny {
            let st = self.dy_stencil(j);
            for i in 0..self.nx {
                let vj = v[self.idx(i, j)];
                for &(jj, c) in &st {
                    out[self.idx(i, jj)] += c * vj;
                }
            }
        }
        out
    }

    pub fn gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.dx(f), self.dy(f))
    }

    /// Pointwise `u . grad(rho)` with centered differences.
    pub fn advect(&self, rho: &[f64], u: &Velocity) -> Result<Vec<f64>> {
        self.check_bulk("advect", rho)?;
        u.check(self)?;
        let (gx, gy) = self.gradient(rho);
        Ok((0..rho.len())
            .map(|k| u.ux[k] * gx[k] + u.uy[k] * gy[k])
            .collect())
    }

    /// Weak convection functional `v -> -int rho u . grad v` as a nodal
    /// vector. Its entries sum to zero for any `rho` and `u`, which makes
    /// mass conservation structural. Divided by `node_mass` it approximates
    /// `div(rho u)`.
    pub fn weak_convection(&self, rho: &[f64], u: &Velocity) -> Vec<f64> {
        let w = &self.bulk_weights;
        let fx: Vec<f64> = (0..rho.len()).map(|k| w[k] * rho[k] * u.ux[k]).collect();
        let fy: Vec<f64> = (0..rho.len()).map(|k| w[k] * rho[k] * u.uy[k]).collect();
        // -Dx^T = Dx under periodicity
        let ax = self.dx(&fx);
        let ay = self.dy_transpose(&fy);
        ax.iter().zip(&ay).map(|(a, b)| a - b).collect()
    }

    /// Transpose of `rho -> weak_convection(rho, u)` applied to `p`, i.e.
    /// `-w * (u . grad p)`.
    pub fn weak_convection_transpose(&self, p: &[f64], u: &Velocity) -> Vec<f64> {
        let (gx, gy) = self.gradient(p);
        (0..p.len())
            .map(|k| -self.bulk_weights[k] * (u.ux[k] * gx[k] + u.uy[k] * gy[k]))
            .collect()
    }

    /// Bulk quadrature `sum w a b`.
    pub fn bulk_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.bulk_weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Boundary quadrature `sum w_G a b` on boundary vectors.
    pub fn bdry_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.bdry_weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// H-inner product of two trace-compatible nodal vectors.
    pub fn pair_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.node_mass
            .iter()
            .zip(a.iter().zip(b))
            .map(|(m, (x, y))| m * x * y)
            .sum()
    }

    /// Functional `v -> int g v + int_G g_G v_G` of an H-class pair.
    pub fn functional(&self, bulk: &[f64], bdry: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .bulk_weights
            .iter()
            .zip(bulk)
            .map(|(w, g)| w * g)
            .collect();
        for (k, (w, g)) in self.bdry_weights.iter().zip(bdry).enumerate() {
            out[self.bdry_node(k)] += w * g;
        }
        out
    }

    /// Functional of a nodal (trace-compatible) vector: `node_mass * f`.
    pub fn lumped(&self, f: &[f64]) -> Vec<f64> {
        self.node_mass.iter().zip(f).map(|(m, v)| m * v).collect()
    }
}

/// A (bulk, boundary) pair of nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub bulk: Vec<f64>,
    pub bdry: Vec<f64>,
}

impl FieldPair {
    pub fn new(g: &Grid, bulk: Vec<f64>, bdry: Vec<f64>) -> Result<Self> {
        g.check_bulk("FieldPair bulk", &bulk)?;
        g.check_bdry("FieldPair boundary", &bdry)?;
        Ok(Self { bulk, bdry })
    }

    /// The V-class pair whose boundary part is the trace of `bulk`.
    pub fn from_nodal(g: &Grid, bulk: Vec<f64>) -> Self {
        let bdry = g.trace(&bulk);
        Self { bulk, bdry }
    }

    pub fn constant(g: &Grid, c: f64) -> Self {
        Self {
            bulk: vec![c; g.n_bulk()],
            bdry: vec![c; g.n_bdry()],
        }
    }

    pub fn zeros(g: &Grid) -> Self {
        Self::constant(g, 0.0)
    }

    pub fn trace_mismatch(&self, g: &Grid) -> f64 {
        (0..g.n_bdry())
            .map(|k| (self.bdry[k] - self.bulk[g.bdry_node(k)]).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_trace_compatible(&self, g: &Grid, tol: f64) -> bool {
        self.trace_mismatch(g) <= tol
    }

    pub fn functional(&self, g: &Grid) -> Vec<f64> {
        g.functional(&self.bulk, &self.bdry)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            bulk: self.bulk.iter().map(|v| a * v).collect(),
            bdry: self.bdry.iter().map(|v| a * v).collect(),
        }
    }
}

/// Nodal velocity field.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    /// Stream function the field was built from, if any.
    pub stream: Option<Vec<f64>>,
}

impl Velocity {
    pub fn zeros(g: &Grid) -> Self {
        Self {
            ux: vec![0.0; g.n_bulk()],
            uy: vec![0.0; g.n_bulk()],
            stream: Some(vec![0.0; g.n_bulk()]),
        }
    }

    pub fn new(g: &Grid, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        g.check_bulk("velocity x", &ux)?;
        g.check_bulk("velocity y", &uy)?;
        Ok(Self {
            ux,
            uy,
            stream: None,
        })
    }

    pub fn uniform(g: &Grid, ux: f64, uy: f64) -> Self {
        Self {
            ux: vec![ux; g.n_bulk()],
            uy: vec![uy; g.n_bulk()],
            stream: None,
        }
    }

    fn check(&self, g: &Grid) -> Result<()> {
        g.check_bulk("velocity x", &self.ux)?;
        g.check_bulk("velocity y", &self.uy)
    }

    pub fn len(&self) -> usize {
        self.ux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ux.is_empty()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Velocity, b: f64) -> Velocity {
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
        };
        Velocity {
            ux: mix(&self.ux, &other.ux),
            uy: mix(&self.uy, &other.uy),
            stream: match (&self.stream, &other.stream) {
                (Some(s), Some(t)) => Some(mix(s, t)),
                _ => None,
            },
        }
    }

    pub fn scaled(&self, a: f64) -> Velocity {
        Velocity {
            ux: self.ux.iter().map(|v| a * v).collect(),
            uy: self.uy.iter().map(|v| a * v).collect(),
            stream: self
                .stream
                .as_ref()
                .map(|s| s.iter().map(|v| a * v).collect()),
        }
    }

    /// `sum w (u . v)`.
    pub fn dot(&self, g: &Grid, other: &Velocity) -> f64 {
        g.bulk_dot(&self.ux, &other.ux) + g.bulk_dot(&self.uy, &other.uy)
    }

    pub fn norm(&self, g: &Grid) -> f64 {
        self.dot(g, self).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.ux
            .iter()
            .zip(&self.uy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Discrete divergence `Dx ux + Dy uy` at every node.
    pub fn divergence(&self, g: &Grid) -> Vec<f64> {
        let a = g.dx(&self.ux);
        let b = g.dy(&self.uy);
        a.iter().zip(&b).map(|(p, q)| p + q).collect()
    }

    /// Largest |div u| over interior (non-wall) nodes.
    pub fn max_interior_divergence(&self, g: &Grid) -> f64 {
        let div = self.divergence(g);
        (1..g.ny() - 1)
            .flat_map(|j| (0..g.nx()).map(move |i| (i, j)))
            .map(|(i, j)| div[g.idx(i, j)].abs())
            .fold(0.0, f64::max)
    }

    /// Largest |u . nu| on the walls.
    pub fn max_wall_normal(&self, g: &Grid) -> f64 {
        (0..g.n_bdry())
            .map(|k| self.uy[g.bdry_node(k)].abs())
            .fold(0.0, f64::max)
    }
}

/// Builds `u = (D_y psi, -D_x psi)`. `psi` must be constant along each wall
/// so that `u . nu = 0`.
pub fn velocity_from_stream(psi: &[f64], g: &Grid) -> Result<Velocity> {
    g.check_bulk("stream function", psi)?;
    let scale = psi.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for (wall, j) in [(Wall::Bottom, 0), (Wall::Top, g.ny() - 1)] {
        let row: Vec<f64> = (0..g.nx()).map(|i| psi[g.idx(i, j)]).collect();
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-12 * scale {
            return Err(Error::StreamNotWallConstant {
                wall: wall.name(),
                deviation: hi - lo,
            });
        }
    }
    let ux = g.dy(psi);
    let mut uy: Vec<f64> = g.dx(psi).into_iter().map(|v| -v).collect();
    // exact zero on the walls (rounding in dx of a constant row is already 0)
    for k in 0..g.n_bdry() {
        uy[g.bdry_node(k)] = 0.0;
    }
    Ok(Velocity {
        ux,
        uy,
        stream: Some(psi.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_are_normalized() {
        let g = build_channel_grid(2.0, 1.0, 4, 3).unwrap();
        let sb: f64 = g.bulk_weights().iter().sum();
        let sg: f64 = g.bdry_weights().iter().sum();
        assert!((sb - 2.0).abs() < 1e-15);
        assert!((sg - 4.0).abs() < 1e-15);
    }

    #[test]
    fn spacings() {
        let g = build_channel_grid(1.0, 1.0, 8, 9).unwrap();
        assert_eq!(g.hx(), 0.125);
        assert_eq!(g.hy(), 0.125);
    }

    #[test]
    fn rejects_small_or_degenerate_grids() {
        assert!(build_channel_grid(2.0, 1.0, 3, 2).is_err());
        assert!(build_channel_grid(2.0, 1.0, 4, 2).is_err());
        assert!(build_channel_grid(0.0, 1.0, 8, 8).is_err());
        assert!(build_channel_grid(1.0, -1.0, 8, 8).is_err());
    }

    #[test]
    fn every_boundary_node_maps_to_one_wall_node() {
        let g = build_channel_grid(1.0, 1.0, 6, 5).unwrap();
        let mut seen = std::collections::HashSet::new();
        for k in 0..g.n_bdry() {
            let b = g.bdry_node(k);
            let j = b / g.nx();
            assert!(g.is_wall_row(j));
            assert!(seen.insert(b));
        }
    }

    #[test]
    fn laplacian_of_constant_and_affine() {
        let g = build_channel_grid(2.0, 1.0, 8, 7).unwrap();
        let c = vec![3.5; g.n_bulk()];
        assert!(g.laplacian_bulk(&c).unwrap().iter().all(|v| v.abs() < 1e-12));
        let lin = g.sample(|_, y| 2.0 * y - 1.0);
        let l = g.laplacian_bulk(&lin).unwrap();
        for j in 1..g.ny() - 1 {
            for i in 0..g.nx() {
                assert!(l[g.idx(i, j)].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_fourier_eigenvalue() {
        let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
        let k = 2.0 * PI / g.lx();
        let f = g.sample(|x, _| (k * x).cos());
        let l = g.laplacian_bulk(&f).unwrap();
        let lam = -(2.0 / g.hx().powi(2)) * (1.0 - (k * g.hx()).cos());
        for j in 1..g.ny() - 1 {
            for i in 0..g.nx() {
                let n = g.idx(i, j);
                assert!((l[n] - lam * f[n]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn laplace_beltrami_modes() {
        let g = build_channel_grid(3.0, 1.0, 12, 5).unwrap();
        let k = 2.0 * PI / g.lx();
        let lam = -(2.0 / g.hx().powi(2)) * (1.0 - (k * g.hx()).cos());
        let lam3 = -(2.0 / g.hx().powi(2)) * (1.0 - (3.0 * k * g.hx()).cos());
        let mut fg = vec![0.0; g.n_bdry()];
        for i in 0..g.nx() {
            fg[i] = (k * g.x(i)).cos();
        }
        let out = g.laplace_beltrami(&fg).unwrap();
        for i in 0..g.nx() {
            assert!((out[i] - lam * fg[i]).abs() < 1e-11);
            assert_eq!(out[g.nx() + i], 0.0);
        }
        let mix: Vec<f64> = (0..g.n_bdry())
            .map(|k2| {
                let x = g.x(k2 % g.nx());
                (k * x).cos() + 0.5 * (3.0 * k * x).sin()
            })
            .collect();
        let out = g.laplace_beltrami(&mix).unwrap();
        for k2 in 0..g.n_bdry() {
            let x = g.x(k2 % g.nx());
            let want = lam * (k * x).cos() + 0.5 * lam3 * (3.0 * k * x).sin();
            assert!((out[k2] - want).abs() < 1e-10);
        }
        assert!(g
            .laplace_beltrami(&vec![1.0; g.n_bdry()])
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn normal_derivative_on_affine_and_quadratic() {
        let g = build_channel_grid(2.0, 1.0, 8, 9).unwrap();
        let nd = g.normal_derivative(&g.sample(|_, y| y)).unwrap();
        for i in 0..g.nx() {
            assert!((nd[i] + 1.0).abs() < 1e-12);
            assert!((nd[g.nx() + i] - 1.0).abs() < 1e-12);
        }
        let nd = g.normal_derivative(&g.sample(|_, y| y * y)).unwrap();
        for i in 0..g.nx() {
            assert!(nd[i].abs() < 1e-12);
            assert!((nd[g.nx() + i] - 2.0).abs() < 1e-12);
        }
        let nd = g.normal_derivative(&vec![4.0; g.n_bulk()]).unwrap();
        assert!(nd.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stiffness_rows_match_strong_operators() {
        let g = build_channel_grid(2.0, 1.3, 10, 7).unwrap();
        let f = g.sample(|x, y| (PI * x).sin() * (1.0 + y * y) + 0.3 * y);
        let kf = g.apply_stiffness(&f);
        let lap = g.laplacian_bulk(&f).unwrap();
        let lb = g.laplace_beltrami(&g.trace(&f)).unwrap();
        let mut want: Vec<f64> = lap
            .iter()
            .zip(g.bulk_weights())
            .map(|(l, w)| -w * l)
            .collect();
        for k in 0..g.n_bdry() {
            want[g.bdry_node(k)] -= g.bdry_weights()[k] * lb[k];
        }
        for (a, b) in kf.iter().zip(&want) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
        let dense = g.stiffness().build().unwrap().matvec(&f);
        for (a, b) in kf.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.dirichlet_energy(&f) - crate::linalg::dot(&f, &kf)).abs() < 1e-10);
    }

    #[test]
    fn stream_velocity_is_divergence_free_and_tangent() {
        let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
        let psi = g.sample(|x, y| (2.0 * PI * x / 2.0).sin() * y * (1.0 - y));
        let u = velocity_from_stream(&psi, &g).unwrap();
        assert_eq!(u.max_wall_normal(&g), 0.0);
        let umax = u.max_magnitude();
        assert!(u.max_interior_divergence(&g) <= 1e-13 * umax / g.hx());
        let z = velocity_from_stream(&vec![0.0; g.n_bulk()], &g).unwrap();
        assert_eq!(z.max_magnitude(), 0.0);
        let bad = g.sample(|x, _| x);
        assert!(velocity_from_stream(&bad, &g).is_err());
    }

    #[test]
    fn advect_trivial_and_single_mode() {
        let g = build_channel_grid(2.0, 1.0, 64, 5).unwrap();
        let u0 = Velocity::zeros(&g);
        let rho = g.sample(|x, y| x.sin() + y);
        assert!(g.advect(&rho, &u0).unwrap().iter().all(|v| *v == 0.0));
        let u = Velocity::uniform(&g, 1.0, 0.0);
        assert!(g
            .advect(&vec![2.0; g.n_bulk()], &u)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let k = 2.0 * PI / g.lx();
        let rho = g.sample(|x, _| (k * x).sin());
        let adv = g.advect(&rho, &u).unwrap();
        let err = (0..g.n_bulk())
            .map(|n| (adv[n] - k * (k * g.x(n % g.nx())).cos()).abs())
            .fold(0.0, f64::max);
        // centered-difference truncation k^3 h^2 / 6
        assert!(err <= k.powi(3) * g.hx().powi(2) / 6.0 * 1.01);
    }

    #[test]
    fn weak_convection_conserves_and_is_consistent() {
        let g = build_channel_grid(2.0, 1.0, 32, 17).unwrap();
        let psi = g.sample(|x, y| (PI * x).sin() * (PI * y).sin().powi(2));
        let u = velocity_from_stream(&psi, &g).unwrap();
        let rho = g.sample(|x, y| (PI * x).cos() * (1.0 + 0.5 * y));
        let c = g.weak_convection(&rho, &u);
        let total: f64 = c.iter().sum();
        assert!(total.abs() < 1e-14);
        // interior: conservative and advective forms agree to second order
        let gap = |n: usize| {
            let g = build_channel_grid(2.0, 1.0, 2 * n, n + 1).unwrap();
            let psi = g.sample(|x, y| (PI * x).sin() * (PI * y).sin().powi(2));
            let u = velocity_from_stream(&psi, &g).unwrap();
            let rho = g.sample(|x, y| (PI * x).cos() * (1.0 + 0.5 * y));
            let c = g.weak_convection(&rho, &u);
            let adv = g.advect(&rho, &u).unwrap();
            let mut worst: f64 = 0.0;
            for j in 0..=n {
                let y = g.y(j);
                if !(0.25..=0.75).contains(&y) {
                    continue;
                }
                for i in 0..g.nx() {
                    let k = g.idx(i, j);
                    worst = worst.max((c[k] / g.node_mass()[k] - adv[k]).abs());
                }
            }
            worst
        };
        let (e1, e2) = (gap(16), gap(32));
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
        // transpose identity
        let p = g.sample(|x, y| (x * y).sin());
        let lhs = crate::linalg::dot(&p, &c);
        let rhs = crate::linalg::dot(&rho, &g.weak_convection_transpose(&p, &u));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
