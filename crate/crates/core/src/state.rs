//! Backward-Euler time stepping of the convective Cahn-Hilliard system with
//! dynamic boundary conditions.
//!
//! With `M` the lumped mass, `K` the coupled stiffness, `C(u)` the weak
//! convection, `T = diag(tau_O w + tau_G w_G)` and `B`, `P` the weighted
//! nodal `beta` and `pi`, one step solves for `(x, mu) = (rho^{n+1}, mu^{n+1})`:
//!
//! ```text
//! M (x - rho)/dt + C(u^n) rho + K mu                = 0
//! T (x - rho)/dt + K x + B(x) + P(rho) - M mu       = 0
//! ```
//!
//! by Newton's method on the coupled block. Column sums of `K` and `C` vanish,
//! so the generalized mean of `rho` is conserved to rounding.

use serde::{Deserialize, Serialize};

use crate::analysis::{self, NOperator, StepDiagnostics};
use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid, Velocity};
use crate::linalg::{l1, CscMatrix, TripletMatrix};
use crate::potentials::{check_mean_admissible, PotentialSpec, Side};

/// Order parameter and chemical potential at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub rho: FieldPair,
    pub mu: FieldPair,
    pub t: f64,
}

impl State {
    pub fn from_nodal(g: &Grid, rho: Vec<f64>, mu: Vec<f64>, t: f64) -> Self {
        Self {
            rho: FieldPair::from_nodal(g, rho),
            mu: FieldPair::from_nodal(g, mu),
            t,
        }
    }

    /// Initial state for `rho0`, with the chemical potential consistent
    /// with the second equation at rest.
    pub fn initial(g: &Grid, rho0: &FieldPair, spec: &PotentialSpec) -> Result<Self> {
        let rho = rho0.bulk.clone();
        let mut rhs = g.apply_stiffness(&rho);
        let (b, _) = weighted_beta(spec, g, &rho, false)?;
        let p = weighted_pi(spec, g, &rho);
        for i in 0..rhs.len() {
            rhs[i] = (rhs[i] + b[i] + p[i]) / g.node_mass()[i];
        }
        Ok(Self::from_nodal(g, rho, rhs, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    #[serde(rename = "tauO")]
    pub tau_o: f64,
    #[serde(rename = "tauG")]
    pub tau_g: f64,
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub linear_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tau_o: 0.0,
            tau_g: 0.0,
            dt: 1e-2,
            newton_tol: 1e-11,
            newton_max: 50,
            linear_tol: 1e-10,
        }
    }
}

impl SolverParams {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn with_tau(&self, tau_o: f64, tau_g: f64) -> Self {
        Self {
            tau_o,
            tau_g,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_o >= 0.0) {
            return Err(Error::param("tauO", "must be nonnegative"));
        }
        if !(self.tau_g >= 0.0) {
            return Err(Error::param("tauG", "must be nonnegative"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::param("newton_tol", "must be positive"));
        }
        if self.newton_max == 0 {
            return Err(Error::param("newton_max", "must be at least 1"));
        }
        if !(self.linear_tol > 0.0) {
            return Err(Error::param("linear_tol", "must be positive"));
        }
        Ok(())
    }

    /// Number of steps covering `[0, t_end]` at fixed `dt`.
    pub fn steps_for(&self, t_end: f64) -> usize {
        if t_end <= 0.0 {
            0
        } else {
            (t_end / self.dt - 1e-9).ceil() as usize
        }
    }
}

/// Velocity as a function of the step index, piecewise constant in time.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Steady(Velocity),
    /// `u0 * exp(-lambda t)`.
    Decaying { u0: Velocity, lambda: f64 },
    /// One field per step; the last one is held beyond the end.
    PerStep(Vec<Velocity>),
}

impl Schedule {
    pub fn zero(g: &Grid) -> Self {
        Schedule::Steady(Velocity::zeros(g))
    }

    /// Velocity acting on the step from `t_n = n dt`.
    pub fn at(&self, n: usize, t: f64) -> Velocity {
        match self {
            Schedule::Steady(u) => u.clone(),
            Schedule::Decaying { u0, lambda } => u0.scaled((-lambda * t).exp()),
            Schedule::PerStep(us) => us[n.min(us.len() - 1)].clone(),
        }
    }

    /// Distinct fields making up the schedule (for validation).
    pub fn samples(&self) -> Vec<&Velocity> {
        match self {
            Schedule::Steady(u) => vec![u],
            Schedule::Decaying { u0, .. } => vec![u0],
            Schedule::PerStep(us) => us.iter().collect(),
        }
    }

    /// Materializes `steps` per-step fields.
    pub fn per_step(&self, steps: usize, dt: f64) -> Vec<Velocity> {
        (0..steps).map(|n| self.at(n, n as f64 * dt)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub params: SolverParams,
    /// `controls[n]` drove the step from `states[n]` to `states[n + 1]`.
    pub controls: Vec<Velocity>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub steps: usize,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory holds at least one state")
    }

    /// Whether every step's state is stored.
    pub fn is_complete(&self) -> bool {
        self.states.len() == self.steps + 1
    }
}

/// Nodal `B(x)` and `B'(x)` weighted by the bulk/boundary quadrature.
pub(crate) fn weighted_beta(
    spec: &PotentialSpec,
    g: &Grid,
    x: &[f64],
    with_prime: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = g.bulk_weights();
    let mut b = Vec::with_capacity(x.len());
    let mut bp = Vec::with_capacity(if with_prime { x.len() } else { 0 });
    for (i, &xi) in x.iter().enumerate() {
        b.push(w[i] * spec.beta(Side::Bulk, xi)?);
        if with_prime {
            bp.push(w[i] * spec.beta_prime(Side::Bulk, xi)?);
        }
    }
    for k in 0..g.n_bdry() {
        let i = g.bdry_node(k);
        let wg = g.bdry_weights()[k];
        b[i] += wg * spec.beta(Side::Surface, x[i])?;
        if with_prime {
            bp[i] += wg * spec.beta_prime(Side::Surface, x[i])?;
        }
    }
    Ok((b, bp))
}

pub(crate) fn weighted_pi(spec: &PotentialSpec, g: &Grid, x: &[f64]) -> Vec<f64> {
    let w = g.bulk_weights();
    let mut p: Vec<f64> = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| wi * spec.pi(Side::Bulk, *xi))
        .collect();
    for k in 0..g.n_bdry() {
        let i = g.bdry_node(k);
        p[i] += g.bdry_weights()[k] * spec.pi(Side::Surface, x[i]);
    }
    p
}

/// Diagonal of `T`.
pub(crate) fn viscosity_diag(g: &Grid, params: &SolverParams) -> Vec<f64> {
    let mut t: Vec<f64> = g.bulk_weights().iter().map(|w| params.tau_o * w).collect();
    for k in 0..g.n_bdry() {
        t[g.bdry_node(k)] += params.tau_g * g.bdry_weights()[k];
    }
    t
}

/// Reusable per-grid solver data: stiffness and the sparsity analysis of
/// the Newton matrix.
pub struct Stepper<'a> {
    g: &'a Grid,
    spec: PotentialSpec,
    params: SolverParams,
    k: TripletMatrix,
    kmat: CscMatrix,
    tdiag: Vec<f64>,
    symbolic: faer::sparse::linalg::solvers::SymbolicLu<usize>,
}

impl<'a> Stepper<'a> {
    pub fn new(g: &'a Grid, spec: &PotentialSpec, params: &SolverParams) -> Result<Self> {
        spec.validate()?;
        params.validate()?;
        let k = g.stiffness();
        let kmat = k.build()?;
        let tdiag = viscosity_diag(g, params);
        let n = g.n_bulk();
        let probe = Self::jacobian(g, &k, params.dt, &tdiag, &vec![0.0; n])?;
        let symbolic = probe.symbolic_lu()?;
        Ok(Self {
            g,
            spec: spec.clone(),
            params: params.clone(),
            k,
            kmat,
            tdiag,
            symbolic,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    fn jacobian(
        g: &Grid,
        k: &TripletMatrix,
        dt: f64,
        tdiag: &[f64],
        bprime: &[f64],
    ) -> Result<CscMatrix> {
        let n = g.n_bulk();
        let m = g.node_mass();
        let mut j = TripletMatrix::with_capacity(2 * n, 2 * n, 12 * n);
        for i in 0..n {
            j.push(i, i, m[i] / dt);
            j.push(n + i, i, tdiag[i] / dt + bprime[i]);
            j.push(n + i, n + i, -m[i]);
        }
        j.push_block(0, n, k, 1.0);
        j.push_block(n, 0, k, 1.0);
        j.build()
    }

    /// Residuals `(R1, R2)` of the step equations.
    fn residual(
        &self,
        rho: &[f64],
        conv: &[f64],
        pi_old: &[f64],
        x: &[f64],
        mu: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (g, dt) = (self.g, self.params.dt);
        let m = g.node_mass();
        let kmu = self.kmat.matvec(mu);
        let kx = self.kmat.matvec(x);
        let (b, _) = weighted_beta(&self.spec, g, x, false)?;
        let n = x.len();
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        for i in 0..n {
            let dx = (x[i] - rho[i]) / dt;
            r1[i] = m[i] * dx + conv[i] + kmu[i];
            r2[i] = self.tdiag[i] * dx + kx[i] + b[i] + pi_old[i] - m[i] * mu[i];
        }
        Ok((r1, r2))
    }

    /// One time step from `s` driven by `u`.
    pub fn step(&self, s: &State, u: &Velocity) -> Result<State> {
        let g = self.g;
        let n = g.n_bulk();
        let rho = &s.rho.bulk;
        let conv = g.weak_convection(rho, u);
        let pi_old = weighted_pi(&self.spec, g, rho);
        let mut x = rho.clone();
        let mut mu = s.mu.bulk.clone();
        let (mut r1, mut r2) = self.residual(rho, &conv, &pi_old, &x, &mu)?;
        let mut res = l1(&r1) + l1(&r2);
        let tol = self.params.newton_tol;
        for _ in 0..self.params.newton_max {
            if l1(&r2) <= tol && l1(&r1) <= tol {
                return Ok(State::from_nodal(g, x, mu, s.t + self.params.dt));
            }
            let (_, bp) = weighted_beta(&self.spec, g, &x, true)?;
            let jac = Self::jacobian(g, &self.k, self.params.dt, &self.tdiag, &bp)?;
            let lu = jac.lu_with(&self.symbolic)?;
            let rhs: Vec<f64> = r1.iter().chain(&r2).map(|v| -v).collect();
            let delta = lu.solve(&rhs)?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let xt: Vec<f64> = (0..n).map(|i| x[i] + lambda * delta[i]).collect();
                let mt: Vec<f64> = (0..n).map(|i| mu[i] + lambda * delta[n + i]).collect();
                if let Ok((a, b)) = self.residual(rho, &conv, &pi_old, &xt, &mt) {
                    let rt = l1(&a) + l1(&b);
                    if rt.is_finite() && rt <= res {
                        x = xt;
                        mu = mt;
                        r1 = a;
                        r2 = b;
                        res = rt;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            let step_size = delta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let scale = 1.0 + x.iter().chain(&mu).fold(0.0_f64, |m, v| m.max(v.abs()));
            if !accepted {
                break;
            }
            // increments at rounding level: nothing more to gain
            if step_size <= 1e-14 * scale && l1(&r2) <= 1e3 * tol {
                return Ok(State::from_nodal(g, x, mu, s.t + self.params.dt));
            }
        }
        if l1(&r2) <= tol && l1(&r1) <= tol {
            return Ok(State::from_nodal(g, x, mu, s.t + self.params.dt));
        }
        Err(Error::NewtonDiverged {
            iterations: self.params.newton_max,
            residual: l1(&r1) + l1(&r2),
        })
    }
}

/// One time step (convenience wrapper building a fresh [`Stepper`]).
pub fn step(
    s: &State,
    u: &Velocity,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
) -> Result<State> {
    Stepper::new(g, spec, params)?.step(s, u)
}

/// Which states [`simulate_with`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    All,
    /// Only the first and the last state.
    Ends,
}

/// Simulates on `[0, t_end]` storing every state.
pub fn simulate(
    rho0: &FieldPair,
    schedule: &Schedule,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
    t_end: f64,
) -> Result<Trajectory> {
    simulate_with(rho0, schedule, params, spec, g, t_end, Keep::All)
}

pub fn simulate_with(
    rho0: &FieldPair,
    schedule: &Schedule,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
    t_end: f64,
    keep: Keep,
) -> Result<Trajectory> {
    if rho0.bulk.len() != g.n_bulk() || rho0.bdry.len() != g.n_bdry() {
        return Err(Error::ShapeMismatch {
            what: "initial datum",
            expected: g.n_bulk(),
            actual: rho0.bulk.len(),
        });
    }
    let stepper = Stepper::new(g, spec, params)?;
    let nop = NOperator::new(g)?;
    let steps = params.steps_for(t_end);
    let s0 = State::initial(g, rho0, spec)?;
    let mut diagnostics = Vec::with_capacity(steps + 1);
    diagnostics.push(analysis::step_diagnostics(g, spec, &nop, None, &s0, params.dt)?);
    let mut controls = Vec::with_capacity(steps);
    let mut states = vec![s0.clone()];
    let mut cur = s0;
    for n in 0..steps {
        let u = schedule.at(n, cur.t);
        let next = stepper.step(&cur, &u).map_err(|e| Error::at_step(n + 1, e))?;
        diagnostics.push(
            analysis::step_diagnostics(g, spec, &nop, Some(&cur), &next, params.dt)
                .map_err(|e| Error::at_step(n + 1, e))?,
        );
        controls.push(u);
        if keep == Keep::All {
            states.push(next.clone());
        }
        cur = next;
    }
    if keep == Keep::Ends && steps > 0 {
        states.push(cur);
    }
    Ok(Trajectory {
        states,
        params: params.clone(),
        controls,
        diagnostics,
        steps,
    })
}

/// Discrete residuals `(r1, r2)` of the two weak equations between
/// consecutive states. `r1` is the dual norm of the mean-free part plus the
/// mass defect; `r2` is the l1 norm of the nodal residual functional.
pub fn weak_residual(
    s_prev: &State,
    s_next: &State,
    u: &Velocity,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
) -> Result<(f64, f64)> {
    let dt = params.dt;
    let rho = &s_prev.rho.bulk;
    let x = &s_next.rho.bulk;
    let mu = &s_next.mu.bulk;
    let m = g.node_mass();
    let tdiag = viscosity_diag(g, params);
    let conv = g.weak_convection(rho, u);
    let kmu = g.apply_stiffness(mu);
    let kx = g.apply_stiffness(x);
    let (b, _) = weighted_beta(spec, g, x, false)?;
    let p = weighted_pi(spec, g, rho);
    let n = x.len();
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for i in 0..n {
        let d = (x[i] - rho[i]) / dt;
        r1[i] = m[i] * d + conv[i] + kmu[i];
        r2[i] = tdiag[i] * d + kx[i] + b[i] + p[i] - m[i] * mu[i];
    }
    let defect: f64 = r1.iter().sum();
    let total: f64 = m.iter().sum();
    for i in 0..n {
        r1[i] -= defect * m[i] / total;
    }
    let nop = NOperator::new(g)?;
    let d1 = nop.dual_norm_functional(&r1)?;
    Ok((d1 + defect.abs(), l1(&r2)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataReport {
    pub trace_mismatch: f64,
    pub trace_ok: bool,
    pub mean: f64,
    pub mean_admissible: bool,
    pub eps_levels: Vec<f64>,
    pub pair_norms: Vec<f64>,
    pub pair_norm_bounded: bool,
    pub max_divergence: f64,
    pub max_wall_normal: f64,
    pub velocity_ok: bool,
    pub pass: bool,
}

/// Checks the assumptions on the initial datum and the velocity: trace
/// compatibility, admissible mean, boundedness of the chemical-potential
/// pair of the datum along a decreasing sequence of regularization levels,
/// and discrete incompressibility and wall tangency of every velocity.
pub fn validate_data(
    rho0: &FieldPair,
    velocities: &[&Velocity],
    spec: &PotentialSpec,
    g: &Grid,
) -> DataReport {
    let trace_mismatch = rho0.trace_mismatch(g);
    let trace_ok = trace_mismatch <= 1e-12 * (1.0 + crate::linalg::max_abs(&rho0.bulk));
    let mean = analysis::generalized_mean(rho0, g);
    let mean_admissible = check_mean_admissible(mean, spec);

    let eps_levels: Vec<f64> = (0..4).map(|k| spec.eps * 1e-2_f64.powi(k)).collect();
    let pair_norms: Vec<f64> = eps_levels
        .iter()
        .map(|&e| {
            let s = PotentialSpec {
                eps: e,
                regularize: true,
                ..spec.clone()
            };
            datum_pair_norm(rho0, &s, g).unwrap_or(f64::INFINITY)
        })
        .collect();
    let last = pair_norms[pair_norms.len() - 1];
    let prev = pair_norms[pair_norms.len() - 2];
    let pair_norm_bounded =
        pair_norms.iter().all(|v| v.is_finite()) && (last - prev).abs() <= 1e-3 * prev.abs().max(1e-300);

    let mut max_divergence: f64 = 0.0;
    let mut max_wall_normal: f64 = 0.0;
    let mut velocity_ok = true;
    for u in velocities {
        if u.ux.len() != g.n_bulk() || u.uy.len() != g.n_bulk() {
            velocity_ok = false;
            continue;
        }
        let d = u.max_interior_divergence(g);
        let w = u.max_wall_normal(g);
        max_divergence = max_divergence.max(d);
        max_wall_normal = max_wall_normal.max(w);
        let scale = u.max_magnitude().max(1e-300);
        if d > 1e-12 * scale / g.hx() || w > 1e-12 * scale {
            velocity_ok = false;
        }
    }
    let pass = trace_ok && mean_admissible && pair_norm_bounded && velocity_ok;
    DataReport {
        trace_mismatch,
        trace_ok,
        mean,
        mean_admissible,
        eps_levels,
        pair_norms,
        pair_norm_bounded,
        max_divergence,
        max_wall_normal,
        velocity_ok,
        pass,
    }
}

/// Discrete `V`-norm of `(-Lap rho + f'(rho), d_nu rho - Lap_G rho + f_G'(rho))`.
fn datum_pair_norm(rho0: &FieldPair, spec: &PotentialSpec, g: &Grid) -> Result<f64> {
    let lap = g.laplacian_bulk(&rho0.bulk)?;
    let nd = g.normal_derivative(&rho0.bulk)?;
    let lb = g.laplace_beltrami(&rho0.bdry)?;
    let mut a = Vec::with_capacity(lap.len());
    for (l, r) in lap.iter().zip(&rho0.bulk) {
        a.push(-l + spec.beta(Side::Bulk, *r)? + spec.pi(Side::Bulk, *r));
    }
    let mut b = Vec::with_capacity(lb.len());
    for k in 0..lb.len() {
        let r = rho0.bdry[k];
        b.push(nd[k] - lb[k] + spec.beta(Side::Surface, r)? + spec.pi(Side::Surface, r));
    }
    let (ax, ay) = g.gradient(&a);
    let bulk = g.bulk_dot(&a, &a) + g.bulk_dot(&ax, &ax) + g.bulk_dot(&ay, &ay);
    let nx = g.nx();
    let mut bx = vec![0.0; b.len()];
    for wall in 0..2 {
        for i in 0..nx {
            bx[wall * nx + i] =
                (b[wall * nx + (i + 1) % nx] - b[wall * nx + (i + nx - 1) % nx]) / (2.0 * g.hx());
        }
    }
    let surf = g.bdry_dot(&b, &b) + g.bdry_dot(&bx, &bx);
    Ok((bulk + surf).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_channel_grid, velocity_from_stream};
    use crate::potentials::Family;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        build_channel_grid(2.0, 1.0, 16, 9).unwrap()
    }

    fn smooth(g: &Grid) -> FieldPair {
        FieldPair::from_nodal(
            g,
            g.sample(|x, y| 0.1 + 0.4 * (PI * x).cos() * (1.0 + 0.3 * y) + 0.2 * (2.0 * PI * y).sin()),
        )
    }

    #[test]
    fn constant_state_is_stationary() {
        let g = grid();
        let spec = PotentialSpec::default();
        let m = 0.3;
        let s0 = State::initial(&g, &FieldPair::constant(&g, m), &spec).unwrap();
        let s1 = step(&s0, &Velocity::zeros(&g), &SolverParams::default(), &spec, &g).unwrap();
        let fp = m * m * m - m;
        for i in 0..g.n_bulk() {
            assert!((s1.rho.bulk[i] - m).abs() < 1e-13);
            assert!((s1.mu.bulk[i] - fp).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let g = grid();
        let spec = PotentialSpec::default();
        let rho0 = smooth(&g);
        let m0 = analysis::generalized_mean(&rho0, &g);
        let psi = g.sample(|x, y| 0.5 * (PI * x).sin() * (PI * y).sin().powi(2));
        let u = velocity_from_stream(&psi, &g).unwrap();
        let traj = simulate(&rho0, &Schedule::Steady(u), &SolverParams::default(), &spec, &g, 0.2).unwrap();
        for s in &traj.states {
            let m = analysis::generalized_mean(&s.rho, &g);
            assert!((m - m0).abs() <= 1e-12 * (1.0 + m0.abs()));
        }
    }

    #[test]
    fn step_residuals_are_small_and_mu_shift_is_exact() {
        let g = grid();
        let spec = PotentialSpec::default();
        let params = SolverParams::default().with_tau(0.1, 0.05);
        let s0 = State::initial(&g, &smooth(&g), &spec).unwrap();
        let u = Velocity::uniform(&g, 0.3, 0.0);
        let s1 = step(&s0, &u, &params, &spec, &g).unwrap();
        let (r1, r2) = weak_residual(&s0, &s1, &u, &params, &spec, &g).unwrap();
        assert!(r1 <= 10.0 * params.newton_tol && r2 <= 10.0 * params.newton_tol, "{r1} {r2}");

        let mut shifted = s1.clone();
        shifted.mu = FieldPair::from_nodal(&g, s1.mu.bulk.iter().map(|v| v + 1.0).collect());
        let (_, r2s) = weak_residual(&s0, &shifted, &u, &params, &spec, &g).unwrap();
        let jump = g.volume() + g.area();
        assert!((r2s - r2 - jump).abs() < 1e-9, "{}", r2s - r2);
    }

    #[test]
    fn zero_fields_have_zero_residual() {
        let g = grid();
        let spec = PotentialSpec::default();
        let s = State::from_nodal(&g, vec![0.0; g.n_bulk()], vec![0.0; g.n_bulk()], 0.0);
        let (r1, r2) =
            weak_residual(&s, &s, &Velocity::zeros(&g), &SolverParams::default(), &spec, &g).unwrap();
        assert_eq!((r1, r2), (0.0, 0.0));
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let g = grid();
        let spec = PotentialSpec::default();
        let rho0 = smooth(&g);
        let traj = simulate(&rho0, &Schedule::zero(&g), &SolverParams::default(), &spec, &g, 0.0).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.states[0].rho, rho0);
    }

    #[test]
    fn constant_datum_validates() {
        let g = grid();
        let spec = PotentialSpec::default();
        let rep = validate_data(&FieldPair::constant(&g, 0.2), &[&Velocity::zeros(&g)], &spec, &g);
        assert!(rep.pass, "{rep:?}");
        let first = rep.pair_norms[0];
        assert!(rep.pair_norms.iter().all(|v| (v - first).abs() < 1e-14));
    }

    #[test]
    fn stream_velocity_validates() {
        let g = grid();
        let psi = g.sample(|x, y| (PI * x).sin() * y * (1.0 - y));
        let u = velocity_from_stream(&psi, &g).unwrap();
        let rep = validate_data(&smooth(&g), &[&u], &PotentialSpec::default(), &g);
        assert!(rep.velocity_ok && rep.pass, "{rep:?}");
    }

    #[test]
    fn datum_touching_pure_phase_fails_for_log() {
        let g = grid();
        let spec = PotentialSpec::with_families(Family::Logarithmic, Family::Logarithmic);
        let rho0 = FieldPair::from_nodal(&g, g.sample(|x, _| 0.2 + 0.8 * (PI * x).cos()));
        let rep = validate_data(&rho0, &[], &spec, &g);
        assert!(rep.mean_admissible);
        assert!(!rep.pair_norm_bounded);
        assert!(!rep.pass);
    }
}
