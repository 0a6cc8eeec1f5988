//! Tracking costs, the admissible control set, projected-gradient
//! optimization over the velocity and first-order certification.
//!
//! Controls are schedules `u[n]`, one divergence-free field per time step.
//! All inner products are the space-time quadrature
//! `<a, b> = sum_n dt sum_i w_i a_n(i) . b_n(i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{assemble_adjoint_data, solve_adjoint_with, AdjointScheme, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::grid::{velocity_from_stream, FieldPair, Grid, Velocity};
use crate::linalg::{LuFactor, SpdPattern, TripletMatrix};
use crate::potentials::PotentialSpec;
use crate::state::{simulate, Schedule, SolverParams, Trajectory};

/// Tracking targets. Series hold one field per stored time; a series of
/// length one is a static target.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub bulk: Vec<Vec<f64>>,
    pub bdry: Vec<Vec<f64>>,
    pub terminal_bulk: Vec<f64>,
    pub terminal_bdry: Vec<f64>,
}

impl Targets {
    pub fn constant(g: &Grid, c: f64) -> Self {
        Self {
            bulk: vec![vec![c; g.n_bulk()]],
            bdry: vec![vec![c; g.n_bdry()]],
            terminal_bulk: vec![c; g.n_bulk()],
            terminal_bdry: vec![c; g.n_bdry()],
        }
    }

    /// Targets reproducing a stored trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let last = traj.final_state();
        Self {
            bulk: traj.states.iter().map(|s| s.rho.bulk.clone()).collect(),
            bdry: traj.states.iter().map(|s| s.rho.bdry.clone()).collect(),
            terminal_bulk: last.rho.bulk.clone(),
            terminal_bdry: last.rho.bdry.clone(),
        }
    }

    pub fn bulk_at(&self, k: usize) -> &[f64] {
        &self.bulk[k.min(self.bulk.len() - 1)]
    }

    pub fn bdry_at(&self, k: usize) -> &[f64] {
        &self.bdry[k.min(self.bdry.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub beta7: f64,
    pub targets: Targets,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        let b = [self.beta3, self.beta4, self.beta5, self.beta6, self.beta7];
        if b.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param("betas", "must be nonnegative"));
        }
        if b.iter().all(|v| *v == 0.0) {
            return Err(Error::param("betas", "must not all vanish"));
        }
        Ok(())
    }

    /// Copy with every coefficient multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            beta3: c * self.beta3,
            beta4: c * self.beta4,
            beta5: c * self.beta5,
            beta6: c * self.beta6,
            beta7: c * self.beta7,
            targets: self.targets.clone(),
        }
    }
}

/// `sum_n dt <a_n, b_n>_W` over two schedules.
pub fn schedule_dot(g: &Grid, dt: f64, a: &[Velocity], b: &[Velocity]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dt * x.dot(g, y)).sum()
}

pub fn schedule_norm(g: &Grid, dt: f64, a: &[Velocity]) -> f64 {
    schedule_dot(g, dt, a, a).max(0.0).sqrt()
}

fn schedule_combine(a: &[Velocity], s: f64, b: &[Velocity], t: f64) -> Vec<Velocity> {
    a.iter().zip(b).map(|(x, y)| x.combine(s, y, t)).collect()
}

/// Tracking cost: right-endpoint time sums of the `beta3`/`beta4` terms over
/// `t_1..t_N`, terminal `beta5`/`beta6` terms, and `beta7/2 ||u||^2` with the
/// control piecewise constant on each step.
pub fn cost(traj: &Trajectory, u: &[Velocity], cs: &CostSpec, g: &Grid) -> f64 {
    let dt = traj.dt();
    let sq = |a: &[f64], b: &[f64], w: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(w)
            .map(|((x, y), wi)| wi * (x - y).powi(2))
            .sum()
    };
    let mut j = 0.0;
    for (k, s) in traj.states.iter().enumerate().skip(1) {
        if cs.beta3 != 0.0 {
            j += 0.5 * cs.beta3 * dt * sq(&s.rho.bulk, cs.targets.bulk_at(k), g.bulk_weights());
        }
        if cs.beta4 != 0.0 {
            j += 0.5 * cs.beta4 * dt * sq(&s.rho.bdry, cs.targets.bdry_at(k), g.bdry_weights());
        }
    }
    let last = traj.final_state();
    j += 0.5 * cs.beta5 * sq(&last.rho.bulk, &cs.targets.terminal_bulk, g.bulk_weights());
    j += 0.5 * cs.beta6 * sq(&last.rho.bdry, &cs.targets.terminal_bdry, g.bdry_weights());
    let n = traj.steps.min(u.len());
    j += 0.5 * cs.beta7 * schedule_dot(g, dt, &u[..n], &u[..n]);
    j
}

/// `J + 1/2 ||u - u_ref||^2`.
pub fn adapted_cost(
    traj: &Trajectory,
    u: &[Velocity],
    cs: &CostSpec,
    u_ref: &[Velocity],
    g: &Grid,
) -> f64 {
    let d = schedule_combine(u, 1.0, u_ref, -1.0);
    cost(traj, u, cs, g) + 0.5 * schedule_dot(g, traj.dt(), &d, &d)
}

/// Gradient density `rho^n grad p^n + beta7 u^n` (plus `u^n - u_ref^n` in
/// adapted mode) per control step.
pub fn gradient(
    traj: &Trajectory,
    adj: &AdjointTrajectory,
    u: &[Velocity],
    beta7: f64,
    u_ref: Option<&[Velocity]>,
    g: &Grid,
) -> Result<Vec<Velocity>> {
    if u.len() < traj.steps {
        return Err(Error::ShapeMismatch {
            what: "control schedule",
            expected: traj.steps,
            actual: u.len(),
        });
    }
    let mut out = Vec::with_capacity(traj.steps);
    for n in 0..traj.steps {
        let rho = &traj.states[n].rho.bulk;
        let (px, py) = g.gradient(&adj.p[n]);
        let mut ux: Vec<f64> = (0..rho.len()).map(|i| rho[i] * px[i] + beta7 * u[n].ux[i]).collect();
        let mut uy: Vec<f64> = (0..rho.len()).map(|i| rho[i] * py[i] + beta7 * u[n].uy[i]).collect();
        if let Some(r) = u_ref {
            for i in 0..rho.len() {
                ux[i] += u[n].ux[i] - r[n].ux[i];
                uy[i] += u[n].uy[i] - r[n].uy[i];
            }
        }
        out.push(Velocity {
            ux,
            uy,
            stream: None,
        });
    }
    Ok(out)
}

/// Weighted least-squares projection onto velocities `(D_y psi, -D_x psi)`
/// with `psi = 0` on the bottom wall and constant on the top wall.
pub struct LerayProjector {
    lu: LuFactor,
    normal: Vec<(usize, usize, f64)>,
    capped: std::sync::OnceLock<SpdPattern>,
    rows: Vec<Vec<(usize, f64)>>,
    weights: Vec<f64>,
    n_unknowns: usize,
    nx: usize,
    ny: usize,
}

impl LerayProjector {
    pub fn new(g: &Grid) -> Result<Self> {
        let (nx, ny) = (g.nx(), g.ny());
        let top = nx * (ny - 2);
        let n_unknowns = top + 1;
        let col = |i: usize, j: usize| -> Option<usize> {
            if j == 0 {
                None
            } else if j == ny - 1 {
                Some(top)
            } else {
                Some((j - 1) * nx + i)
            }
        };
        // probe the difference operators with unit vectors of the node grid
        // through their stencils: rows 0..n are ux, n..2n are uy
        let n = g.n_bulk();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); 2 * n];
        let sy = 1.0 / (2.0 * g.hy());
        let sx = 1.0 / (2.0 * g.hx());
        for j in 0..ny {
            let st: Vec<(usize, f64)> = if j == 0 {
                vec![(0, -3.0 * sy), (1, 4.0 * sy), (2, -sy)]
            } else if j == ny - 1 {
                vec![(ny - 1, 3.0 * sy), (ny - 2, -4.0 * sy), (ny - 3, sy)]
            } else {
                vec![(j + 1, sy), (j - 1, -sy)]
            };
            for i in 0..nx {
                let r = g.idx(i, j);
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for &(jj, c) in &st {
                    if let Some(cidx) = col(i, jj) {
                        acc.push((cidx, c));
                    }
                }
                rows[r] = merge(acc);
                if j != 0 && j != ny - 1 {
                    let e = col((i + 1) % nx, j).expect("interior row");
                    let w = col((i + nx - 1) % nx, j).expect("interior row");
                    rows[n + r] = merge(vec![(e, -sx), (w, sx)]);
                }
            }
        }
        let weights = g.bulk_weights().to_vec();
        let mut normal = Vec::with_capacity(20 * n);
        for (r, row) in rows.iter().enumerate() {
            let w = weights[r % n];
            for &(a, ca) in row {
                for &(b, cb) in row {
                    normal.push((a, b, w * ca * cb));
                }
            }
        }
        let mut t = TripletMatrix::with_capacity(n_unknowns, n_unknowns, normal.len());
        for &(a, b, v) in &normal {
            t.push(a, b, v);
        }
        let lu = t.build()?.lu()?;
        Ok(Self {
            lu,
            normal,
            capped: std::sync::OnceLock::new(),
            rows,
            weights,
            n_unknowns,
            nx,
            ny,
        })
    }

    /// `B^T W u` for the reduced unknowns.
    fn moment(&self, u: &Velocity) -> Vec<f64> {
        let n = self.weights.len();
        let mut rhs = vec![0.0; self.n_unknowns];
        for (r, row) in self.rows.iter().enumerate() {
            let val = if r < n { u.ux[r] } else { u.uy[r - n] };
            let w = self.weights[r % n];
            for &(a, ca) in row {
                rhs[a] += w * ca * val;
            }
        }
        rhs
    }

    /// Velocity components of reduced unknowns.
    fn velocity_of(&self, sol: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.weights.len();
        let v: Vec<f64> = self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(a, c)| c * sol[a]).sum())
            .collect();
        (v[..n].to_vec(), v[n..].to_vec())
    }

    fn expand(&self, sol: &[f64]) -> Vec<f64> {
        let n = self.weights.len();
        let (nx, ny) = (self.nx, self.ny);
        let mut psi = vec![0.0; n];
        for j in 1..ny - 1 {
            for i in 0..nx {
                psi[j * nx + i] = sol[(j - 1) * nx + i];
            }
        }
        let c = sol[self.n_unknowns - 1];
        for i in 0..nx {
            psi[(ny - 1) * nx + i] = c;
        }
        psi
    }

    /// W-orthogonal projection onto discrete stream-function velocities.
    pub fn project(&self, u: &Velocity, g: &Grid) -> Result<Velocity> {
        let sol = self.lu.solve(&self.moment(u))?;
        velocity_from_stream(&self.expand(&sol), g)
    }

    /// Visits the entries `B_x^T h B_x`, `B_x^T h B_y`, `B_y^T h B_x`,
    /// `B_y^T h B_y` of node `i` in a fixed order; `k` selects `h_xx`,
    /// `h_xy`, `h_yy`.
    fn node_block(&self, i: usize, mut f: impl FnMut(usize, usize, usize, f64)) {
        let n = self.weights.len();
        let rx = &self.rows[i];
        let ry = &self.rows[n + i];
        for &(p, cp) in rx {
            for &(q, cq) in rx {
                f(p, q, 0, cp * cq);
            }
            for &(q, cq) in ry {
                f(p, q, 1, cp * cq);
                f(q, p, 1, cp * cq);
            }
        }
        for &(p, cp) in ry {
            for &(q, cq) in ry {
                f(p, q, 2, cp * cq);
            }
        }
    }

    /// Projection onto stream velocities with `|u_i| <= ubar_i`, all
    /// `ubar_i > 0`, by a primal log-barrier Newton path on the stream
    /// function.
    fn project_capped(&self, a: &Velocity, ubar: &[f64], g: &Grid) -> Result<Velocity> {
        let n = self.weights.len();
        let sol0 = self.lu.solve(&self.moment(a))?;
        let (vx, vy) = self.velocity_of(&sol0);
        let mut theta: f64 = 1.0;
        for i in 0..n {
            let m = vx[i].hypot(vy[i]);
            if m > ubar[i] {
                theta = theta.min(ubar[i] / m);
            }
        }
        if theta >= 1.0 {
            return velocity_from_stream(&self.expand(&sol0), g);
        }
        let w = &self.weights;
        let wmin = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let cap = ubar.iter().cloned().fold(0.0, f64::max);
        let scale = cap * cap;
        let mut x: Vec<f64> = sol0.iter().map(|v| 0.9 * theta * v).collect();

        let value = |x: &[f64], mu: f64| -> f64 {
            let (vx, vy) = self.velocity_of(x);
            let mut f = 0.0;
            for i in 0..n {
                let sl = ubar[i] * ubar[i] - vx[i] * vx[i] - vy[i] * vy[i];
                if !(sl > 0.0) {
                    return f64::INFINITY;
                }
                f += 0.5 * w[i] * ((vx[i] - a.ux[i]).powi(2) + (vy[i] - a.uy[i]).powi(2))
                    - mu * w[i] * sl.ln();
            }
            f
        };

        let pattern = match self.capped.get() {
            Some(p) => p,
            None => {
                let mut pairs: Vec<(usize, usize)> = self.normal.iter().map(|e| (e.0, e.1)).collect();
                for i in 0..n {
                    self.node_block(i, |p, q, _, _| pairs.push((p, q)));
                }
                let p = SpdPattern::new(self.n_unknowns, &pairs)?;
                let _ = self.capped.set(p);
                self.capped.get().expect("just set")
            }
        };
        let mut mu = 1e-2 * scale;
        let mu_min = 1e-11 * scale;
        'path: loop {
            for _ in 0..60 {
                let (vx, vy) = self.velocity_of(&x);
                // gradient in velocity space, then pulled back through B^T
                let mut gv = vec![0.0; 2 * n];
                let mut vals: Vec<f64> = Vec::with_capacity(pattern.len());
                vals.extend(self.normal.iter().map(|e| e.2));
                for i in 0..n {
                    let sl = ubar[i] * ubar[i] - vx[i] * vx[i] - vy[i] * vy[i];
                    let c = mu * w[i];
                    gv[i] = w[i] * (vx[i] - a.ux[i]) + 2.0 * c * vx[i] / sl;
                    gv[n + i] = w[i] * (vy[i] - a.uy[i]) + 2.0 * c * vy[i] / sl;
                    let h = [
                        c * (2.0 / sl + 4.0 * vx[i] * vx[i] / (sl * sl)),
                        c * 4.0 * vx[i] * vy[i] / (sl * sl),
                        c * (2.0 / sl + 4.0 * vy[i] * vy[i] / (sl * sl)),
                    ];
                    self.node_block(i, |_, _, k, cpq| vals.push(h[k] * cpq));
                }
                let mut grad = vec![0.0; self.n_unknowns];
                for (r, row) in self.rows.iter().enumerate() {
                    for &(p, cp) in row {
                        grad[p] += cp * gv[r];
                    }
                }
                // an ill-conditioned factor near the boundary ends the path
                // at the current strictly feasible iterate
                let Ok(step) = pattern.factor(&vals).and_then(|lu| lu.solve(&grad)) else {
                    break 'path;
                };
                let dec: f64 = step.iter().zip(&grad).map(|(d, gr)| d * gr).sum();
                let last = mu <= mu_min;
                if dec <= if last { 1e-6 } else { 0.1 } * mu * wmin {
                    break;
                }
                let f0 = value(&x, mu);
                let mut s = 1.0;
                let mut moved = false;
                for _ in 0..60 {
                    let xt: Vec<f64> = x.iter().zip(&step).map(|(xi, di)| xi - s * di).collect();
                    if value(&xt, mu) <= f0 - 1e-4 * s * dec {
                        x = xt;
                        moved = true;
                        break;
                    }
                    s *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            if mu <= mu_min {
                break;
            }
            mu *= 0.1;
        }
        velocity_from_stream(&self.expand(&x), g)
    }

}

fn merge(mut v: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (c, x) in v {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += x,
            _ => out.push((c, x)),
        }
    }
    out
}

/// Pointwise cap `|u| <= ubar`, an optional global norm cap and the
/// settings of the alternating projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    pub ubar: Vec<f64>,
    /// Cap on the space-time norm of the control; infinite by default.
    pub r0: f64,
    /// Maximum rounds of the alternating projection.
    pub projection_iters: usize,
    /// Relative change below which the alternation stops.
    pub projection_tol: f64,
}

impl ControlBox {
    pub fn uniform(g: &Grid, ubar: f64) -> Self {
        Self {
            ubar: vec![ubar; g.n_bulk()],
            r0: f64::INFINITY,
            projection_iters: 2000,
            projection_tol: 1e-14,
        }
    }

    pub fn validate(&self, g: &Grid) -> Result<()> {
        if self.ubar.len() != g.n_bulk() {
            return Err(Error::ShapeMismatch {
                what: "Ubar",
                expected: g.n_bulk(),
                actual: self.ubar.len(),
            });
        }
        if self.ubar.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param("Ubar", "must be nonnegative"));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::param("R0", "must be positive"));
        }
        if self.projection_iters == 0 {
            return Err(Error::param("projection_iters", "must be at least 1"));
        }
        Ok(())
    }

    fn clamp(&self, u: &Velocity) -> Velocity {
        let mut out = u.clone();
        out.stream = None;
        for i in 0..u.ux.len() {
            let m = u.ux[i].hypot(u.uy[i]);
            if m > self.ubar[i] {
                let s = if m > 0.0 { self.ubar[i] / m } else { 0.0 };
                out.ux[i] *= s;
                out.uy[i] *= s;
            }
        }
        out
    }

    /// Largest violation `max(|u| - ubar, 0)`.
    pub fn violation(&self, u: &Velocity) -> f64 {
        (0..u.ux.len())
            .map(|i| (u.ux[i].hypot(u.uy[i]) - self.ubar[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Projection of one field onto `{stream velocities} ∩ {|u| <= ubar}`.
/// With a positive cap everywhere this is a barrier Newton solve; caps that
/// vanish somewhere fall back to Dykstra's alternation finished by a
/// uniform rescaling into the box.
pub fn project_field(
    u: &Velocity,
    cbox: &ControlBox,
    leray: &LerayProjector,
    g: &Grid,
) -> Result<Velocity> {
    if cbox.ubar.iter().all(|c| *c > 0.0) {
        return leray.project_capped(u, &cbox.ubar, g);
    }
    let mut x = u.clone();
    let zero = Velocity::uniform(g, 0.0, 0.0);
    let mut p = zero.clone();
    let mut q = zero;
    let mut last: Option<Velocity> = None;
    for _ in 0..cbox.projection_iters {
        let y = cbox.clamp(&x.combine(1.0, &p, 1.0));
        p = x.combine(1.0, &p, 1.0).combine(1.0, &y, -1.0);
        let xn = leray.project(&y.combine(1.0, &q, 1.0), g)?;
        q = y.combine(1.0, &q, 1.0).combine(1.0, &xn, -1.0);
        let scale = 1.0 + xn.norm(g);
        let change = last.as_ref().map_or(f64::INFINITY, |l| xn.combine(1.0, l, -1.0).norm(g));
        let gap = xn.combine(1.0, &y, -1.0).norm(g);
        x = xn;
        if change <= cbox.projection_tol * scale && gap <= 1e3 * cbox.projection_tol * scale {
            break;
        }
        if gap == 0.0 && change == 0.0 {
            break;
        }
        last = Some(x.clone());
    }
    let mut s: f64 = 1.0;
    for i in 0..x.ux.len() {
        let m = x.ux[i].hypot(x.uy[i]);
        if m > cbox.ubar[i] {
            s = s.min(cbox.ubar[i] / m);
        }
    }
    Ok(if s < 1.0 { x.scaled(s) } else { x })
}

/// Projection of a whole schedule; the optional norm cap is applied last by
/// radial scaling.
pub fn project_uad(u: &[Velocity], cbox: &ControlBox, g: &Grid) -> Result<Vec<Velocity>> {
    let leray = LerayProjector::new(g)?;
    project_with(u, cbox, &leray, g, None)
}

fn project_with(
    u: &[Velocity],
    cbox: &ControlBox,
    leray: &LerayProjector,
    g: &Grid,
    dt: Option<f64>,
) -> Result<Vec<Velocity>> {
    let mut out = u
        .iter()
        .map(|v| project_field(v, cbox, leray, g))
        .collect::<Result<Vec<_>>>()?;
    if cbox.r0.is_finite() {
        let nrm = schedule_norm(g, dt.unwrap_or(1.0), &out);
        if nrm > cbox.r0 {
            out = out.iter().map(|v| v.scaled(cbox.r0 / nrm)).collect();
        }
    }
    Ok(out)
}

/// A random smooth stream-function velocity of unit maximal speed.
pub fn random_divfree(g: &Grid, rng: &mut impl Rng) -> Velocity {
    let (lx, ly) = (g.lx(), g.ly());
    let tau = std::f64::consts::TAU;
    let a: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let c: f64 = rng.random_range(-1.0..1.0);
    let psi = g.sample(|x, y| {
        let bump = (std::f64::consts::PI * y / ly).sin().powi(2);
        let mut v = c * 0.3 * y / ly;
        for (m, k) in a.iter().enumerate() {
            let kx = tau * (m + 1) as f64 * x / lx;
            v += (k[0] * kx.cos() + k[1] * kx.sin()) * bump
                + (k[2] * kx.cos() + k[3] * kx.sin()) * bump * (tau * y / ly).sin() * 0.5;
        }
        v
    });
    // the y/ly term is exactly constant on both walls
    let u = velocity_from_stream(&psi, g).expect("wall-constant by construction");
    let m = u.max_magnitude();
    u.scaled(1.0 / m.max(1e-300))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViReport {
    /// Minimum of `<grad, v - u>` over candidate and probes.
    pub residual: f64,
    /// `||grad|| (1 + ||u||)`.
    pub scale: f64,
    /// Pairing at the projection-formula candidate, if one was used.
    pub candidate: Option<f64>,
    pub probes_min: f64,
    pub probes: usize,
}

/// Minimum of the VI pairing over random feasible probes and, when
/// `kappa > 0`, the candidate `P(u - grad / kappa)`.
pub fn vi_residual(
    u: &[Velocity],
    grad: &[Velocity],
    cbox: &ControlBox,
    g: &Grid,
    dt: f64,
    probes: usize,
    kappa: f64,
    seed: u64,
) -> Result<ViReport> {
    let leray = LerayProjector::new(g)?;
    let gnorm = schedule_norm(g, dt, grad);
    let unorm = schedule_norm(g, dt, u);
    let scale = gnorm * (1.0 + unorm);
    let pair = |v: &[Velocity]| schedule_dot(g, dt, grad, v) - schedule_dot(g, dt, grad, u);
    let candidate = if kappa > 0.0 {
        let target = schedule_combine(u, 1.0, grad, -1.0 / kappa);
        let v = project_with(&target, cbox, &leray, g, Some(dt))?;
        Some(pair(&v))
    } else {
        None
    };
    let probe_vals = (0..probes)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let amp: f64 = rng.random_range(0.0..1.0);
            let raw: Vec<Velocity> = u
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let r = random_divfree(g, &mut rng);
                    let cap = cbox.ubar[i % cbox.ubar.len()].max(0.0);
                    r.scaled(amp * 2.0 * cap.max(1e-300))
                })
                .collect();
            let v = project_with(&raw, cbox, &leray, g, Some(dt))?;
            Ok(pair(&v))
        })
        .collect::<Result<Vec<f64>>>()?;
    let probes_min = probe_vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let residual = candidate
        .into_iter()
        .chain(probe_vals.iter().cloned())
        .fold(f64::INFINITY, f64::min);
    Ok(ViReport {
        residual: if residual.is_finite() { residual } else { 0.0 },
        scale,
        candidate,
        probes_min: if probes_min.is_finite() { probes_min } else { 0.0 },
        probes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptSettings {
    pub max_iter: usize,
    pub armijo_c: f64,
    pub max_halvings: usize,
    /// Stop when `(J_k - J_{k+1}) / max(|J_k|, tiny)` falls below this.
    pub j_rel_tol: f64,
    pub vi_tol: f64,
    pub fp_tol: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for OptSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            armijo_c: 1e-4,
            max_halvings: 30,
            j_rel_tol: 1e-8,
            vi_tol: 1e-6,
            fp_tol: 1e-6,
            probes: 20,
            seed: 0,
        }
    }
}

/// The forward model and cost of one control problem.
pub struct ControlProblem<'a> {
    pub g: &'a Grid,
    pub spec: PotentialSpec,
    pub params: SolverParams,
    pub rho0: FieldPair,
    pub cost: CostSpec,
    pub cbox: ControlBox,
    pub t_end: f64,
    pub scheme: AdjointScheme,
}

/// Cost, trajectory and gradient at one control.
pub struct Evaluation {
    pub j: f64,
    pub traj: Trajectory,
    pub adjoint: AdjointTrajectory,
    pub grad: Vec<Velocity>,
}

impl<'a> ControlProblem<'a> {
    pub fn steps(&self) -> usize {
        self.params.steps_for(self.t_end)
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn forward(&self, u: &[Velocity]) -> Result<Trajectory> {
        simulate(
            &self.rho0,
            &Schedule::PerStep(u.to_vec()),
            &self.params,
            &self.spec,
            self.g,
            self.t_end,
        )
    }

    /// Cost (adapted when `u_ref` is given).
    pub fn objective(&self, u: &[Velocity], u_ref: Option<&[Velocity]>) -> Result<(f64, Trajectory)> {
        let traj = self.forward(u)?;
        let j = match u_ref {
            Some(r) => adapted_cost(&traj, u, &self.cost, r, self.g),
            None => cost(&traj, u, &self.cost, self.g),
        };
        Ok((j, traj))
    }

    pub fn evaluate(&self, u: &[Velocity], u_ref: Option<&[Velocity]>) -> Result<Evaluation> {
        let (j, traj) = self.objective(u, u_ref)?;
        self.differentiate(j, traj, u, u_ref)
    }

    fn differentiate(
        &self,
        j: f64,
        traj: Trajectory,
        u: &[Velocity],
        u_ref: Option<&[Velocity]>,
    ) -> Result<Evaluation> {
        let data = assemble_adjoint_data(&traj, &self.cost, &self.spec, self.g)?;
        let adjoint = solve_adjoint_with(&traj.controls, &data, &self.params, self.g, self.scheme)?;
        let grad = gradient(&traj, &adjoint, u, self.cost.beta7, u_ref, self.g)?;
        Ok(Evaluation {
            j,
            traj,
            adjoint,
            grad,
        })
    }

    /// Central difference `(J(u + h d) - J(u - h d)) / 2h`.
    pub fn fd_directional(&self, u: &[Velocity], d: &[Velocity], h: f64) -> Result<f64> {
        let up = schedule_combine(u, 1.0, d, h);
        let um = schedule_combine(u, 1.0, d, -h);
        let (a, b) = rayon::join(|| self.objective(&up, None), || self.objective(&um, None));
        Ok((a?.0 - b?.0) / (2.0 * h))
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub u_opt: Vec<Velocity>,
    pub j_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub vi_history: Vec<f64>,
    pub vi: ViReport,
    /// `||u - P(u - grad / kappa)|| / (1 + ||u||)`.
    pub fp_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pure,
    TauSweep,
}

/// Projected gradient with Armijo backtracking on `J` (or on the adapted
/// cost when `u_ref` is given), starting from `u0`.
pub fn projected_gradient(
    prob: &ControlProblem,
    u0: &[Velocity],
    u_ref: Option<&[Velocity]>,
    settings: &OptSettings,
) -> Result<OptResult> {
    prob.cost.validate()?;
    prob.cbox.validate(prob.g)?;
    let g = prob.g;
    let dt = prob.dt();
    let leray = LerayProjector::new(g)?;
    let kappa = prob.cost.beta7 + if u_ref.is_some() { 1.0 } else { 0.0 };
    let fp_step = if kappa > 0.0 { 1.0 / kappa } else { 1.0 };

    let mut u = project_with(u0, &prob.cbox, &leray, g, Some(dt))?;
    let mut ev = prob.evaluate(&u, u_ref)?;
    let mut j_history = vec![ev.j];
    let mut grad_norm_history = vec![schedule_norm(g, dt, &ev.grad)];
    let mut step_history = vec![0.0];
    let mut vi_history = Vec::new();
    let mut iterations = 0;

    let fixed_point = |u: &[Velocity], grad: &[Velocity]| -> Result<f64> {
        let target = schedule_combine(u, 1.0, grad, -fp_step);
        let pu = project_with(&target, &prob.cbox, &leray, g, Some(dt))?;
        let diff = schedule_combine(u, 1.0, &pu, -1.0);
        Ok(schedule_norm(g, dt, &diff) / (1.0 + schedule_norm(g, dt, u)))
    };
    // random probes are costly, so they only run once the fixed-point test
    // passes and at termination
    let certify = |u: &[Velocity], grad: &[Velocity], iter: usize, probes: usize| {
        vi_residual(
            u,
            grad,
            &prob.cbox,
            g,
            dt,
            probes,
            kappa,
            settings.seed.wrapping_add(1_000_003 * iter as u64),
        )
    };
    let ok = |vi: &ViReport, fp: f64| {
        vi.residual >= -settings.vi_tol * vi.scale.max(1e-300) && fp <= settings.fp_tol
    };

    let mut fp = fixed_point(&u, &ev.grad)?;
    let mut vi = certify(&u, &ev.grad, 0, 0)?;
    vi_history.push(vi.residual);
    let mut s_next: f64 = 1.0;
    loop {
        if ok(&vi, fp) {
            vi = certify(&u, &ev.grad, iterations, settings.probes)?;
            if ok(&vi, fp) || iterations >= settings.max_iter {
                break;
            }
        }
        if iterations >= settings.max_iter {
            vi = certify(&u, &ev.grad, iterations, settings.probes)?;
            break;
        }
        let mut s = s_next;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = schedule_combine(&u, 1.0, &ev.grad, -s);
            let un = project_with(&trial, &prob.cbox, &leray, g, Some(dt))?;
            let du = schedule_combine(&un, 1.0, &u, -1.0);
            let slope = schedule_dot(g, dt, &ev.grad, &du);
            let (jn, traj) = prob.objective(&un, u_ref)?;
            if jn <= ev.j + settings.armijo_c * slope {
                accepted = Some((un, jn, traj));
                break;
            }
            s *= 0.5;
        }
        let Some((un, jn, traj)) = accepted else {
            return Err(Error::LineSearch {
                halvings: settings.max_halvings,
                cost: ev.j,
                grad_norm: schedule_norm(g, dt, &ev.grad),
            });
        };
        iterations += 1;
        let rel = (ev.j - jn) / ev.j.abs().max(1e-300);
        let du = schedule_combine(&un, 1.0, &u, -1.0);
        let old_grad = std::mem::take(&mut ev.grad);
        u = un;
        ev = prob.differentiate(jn, traj, &u, u_ref)?;
        // Barzilai-Borwein trial step for the next iteration
        let dg = schedule_combine(&ev.grad, 1.0, &old_grad, -1.0);
        let curv = schedule_dot(g, dt, &du, &dg);
        s_next = if curv > 0.0 {
            (schedule_dot(g, dt, &du, &du) / curv).clamp(1e-6, 1e8)
        } else {
            (2.0 * s).min(1e8)
        };
        j_history.push(ev.j);
        grad_norm_history.push(schedule_norm(g, dt, &ev.grad));
        step_history.push(s);
        fp = fixed_point(&u, &ev.grad)?;
        vi = certify(&u, &ev.grad, iterations, 0)?;
        vi_history.push(vi.residual);
        if rel < settings.j_rel_tol && !ok(&vi, fp) {
            vi = certify(&u, &ev.grad, iterations, settings.probes)?;
            break;
        }
    }
    let converged = ok(&vi, fp);
    Ok(OptResult {
        u_opt: u,
        j_history,
        grad_norm_history,
        step_history,
        vi_history,
        vi,
        fp_residual: fp,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub taus: Vec<f64>,
    pub members: Vec<OptResult>,
    /// `||u^tau - u^0||` against the last (`tau = 0`) member.
    pub control_gaps: Vec<f64>,
    /// Adapted cost at each member's optimum.
    pub adapted_costs: Vec<f64>,
    /// Optimum of the pure problem used as the reference control.
    pub reference: OptResult,
}

impl SweepResult {
    /// `|J~(tau_n) - J~(0)|` for every member before the pure one.
    pub fn cost_gaps(&self) -> Vec<f64> {
        let last = *self.adapted_costs.last().expect("sweep has members");
        self.adapted_costs[..self.adapted_costs.len() - 1]
            .iter()
            .map(|j| (j - last).abs())
            .collect()
    }

    /// Last cost gap over the first one.
    pub fn cost_gap_ratio(&self) -> f64 {
        let gaps = self.cost_gaps();
        match (gaps.first(), gaps.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => b / a,
            _ => 0.0,
        }
    }

    pub fn control_gaps_nonincreasing(&self) -> bool {
        self.control_gaps.windows(2).all(|w| w[1] <= w[0])
    }
}

pub const TAU_SWEEP: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0];

/// Pure mode: one projected-gradient solve from `u0`. Sweep mode: solves
/// the pure problem for the reference control, then minimizes the adapted
/// cost at each `tau` of [`TAU_SWEEP`] (both viscosities equal to `tau`),
/// warm-starting from the previous optimum.
pub fn optimize(
    prob: &ControlProblem,
    u0: &[Velocity],
    settings: &OptSettings,
    mode: Mode,
) -> Result<(OptResult, Option<SweepResult>)> {
    let pure = projected_gradient(prob, u0, None, settings)?;
    if mode == Mode::Pure {
        return Ok((pure, None));
    }
    let reference = pure.u_opt.clone();
    let mut members = Vec::new();
    let mut adapted_costs = Vec::new();
    let mut start = reference.clone();
    for &tau in &TAU_SWEEP {
        let sub = ControlProblem {
            g: prob.g,
            spec: prob.spec.clone(),
            params: prob.params.with_tau(tau, tau),
            rho0: prob.rho0.clone(),
            cost: prob.cost.clone(),
            cbox: prob.cbox.clone(),
            t_end: prob.t_end,
            scheme: prob.scheme,
        };
        let res = projected_gradient(&sub, &start, Some(&reference), settings)?;
        adapted_costs.push(*res.j_history.last().expect("nonempty history"));
        start = res.u_opt.clone();
        members.push(res);
    }
    let last = members.last().expect("sweep has members").u_opt.clone();
    let control_gaps = members
        .iter()
        .map(|m| schedule_norm(prob.g, prob.dt(), &schedule_combine(&m.u_opt, 1.0, &last, -1.0)))
        .collect();
    let final_member = members[members.len() - 1].clone();
    Ok((
        final_member,
        Some(SweepResult {
            taus: TAU_SWEEP.to_vec(),
            members,
            control_gaps,
            adapted_costs,
            reference: pure,
        }),
    ))
}
