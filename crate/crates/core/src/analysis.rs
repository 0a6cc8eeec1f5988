//! Generalized mean, the inverse coupled Laplacian `N` on mean-free pairs,
//! the dual norm it induces, free energies, stationarity metrics and the
//! long-time driver.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FieldPair, Grid, Velocity};
use crate::linalg::{dot, LuFactor};
use crate::potentials::{PotentialSpec, Side};
use crate::state::{simulate, simulate_with, Keep, Schedule, SolverParams, State, Trajectory};

/// `(sum w v + sum w_G v_G) / (|Omega| + |Gamma|)`.
pub fn generalized_mean(v: &FieldPair, g: &Grid) -> f64 {
    let s: f64 = g.bulk_weights().iter().zip(&v.bulk).map(|(w, x)| w * x).sum::<f64>()
        + g.bdry_weights().iter().zip(&v.bdry).map(|(w, x)| w * x).sum::<f64>();
    s / (g.volume() + g.area())
}

/// Factorized coupled stiffness, pinned at node 0, for repeated solves.
pub struct NOperator {
    lu: LuFactor,
    mass: Vec<f64>,
    total: f64,
    k: crate::linalg::CscMatrix,
}

impl NOperator {
    pub fn new(g: &Grid) -> Result<Self> {
        let k = g.stiffness();
        let mut t = k.filtered(|r, c| r != 0 && c != 0);
        t.push(0, 0, 1.0);
        let full = k.build()?;
        let lu = t.build()?.lu()?;
        Ok(Self {
            lu,
            mass: g.node_mass().to_vec(),
            total: g.volume() + g.area(),
            k: full,
        })
    }

    /// Solves `K xi = f` on mean-free functionals `f`, returning the nodal
    /// `xi` with zero generalized mean.
    pub fn solve_functional(&self, f: &[f64]) -> Result<Vec<f64>> {
        let s: f64 = f.iter().sum();
        let scale = f.iter().map(|v| v.abs()).sum::<f64>();
        let mean = s / self.total;
        if mean.abs() > 1e-10 * (1.0 + scale / self.total) {
            return Err(Error::NonzeroMean { mean });
        }
        let mut rhs = f.to_vec();
        rhs[0] = 0.0;
        let mut xi = self.lu.solve(&rhs)?;
        let shift = dot(&self.mass, &xi) / self.total;
        for v in &mut xi {
            *v -= shift;
        }
        Ok(xi)
    }

    /// `||f||_* = sqrt(<f, N f>)` for a mean-free functional.
    pub fn dual_norm_functional(&self, f: &[f64]) -> Result<f64> {
        let xi = self.solve_functional(f)?;
        let kxi = self.k.matvec(&xi);
        Ok(dot(&xi, &kxi).max(0.0).sqrt())
    }
}

/// `N g*`: the mean-free trace-compatible pair solving the coupled
/// Neumann problem with data `g*`.
pub fn solve_n(gstar: &FieldPair, g: &Grid) -> Result<FieldPair> {
    let xi = NOperator::new(g)?.solve_functional(&gstar.functional(g))?;
    Ok(FieldPair::from_nodal(g, xi))
}

/// `||g*||_*`, the norm of `N g*` in the gradient seminorm.
pub fn dual_norm(gstar: &FieldPair, g: &Grid) -> Result<f64> {
    NOperator::new(g)?.dual_norm_functional(&gstar.functional(g))
}

/// Lyapunov energy `int f(rho) + 1/2 |grad rho|^2` plus its surface analog;
/// with `include_mu_coupling` the terms `-int mu rho - int_G mu_G rho_G` are
/// added.
pub fn free_energy(
    s: &State,
    spec: &PotentialSpec,
    g: &Grid,
    include_mu_coupling: bool,
) -> Result<f64> {
    let mut e = 0.5 * g.dirichlet_energy(&s.rho.bulk);
    for (w, r) in g.bulk_weights().iter().zip(&s.rho.bulk) {
        e += w * (spec.beta_hat(Side::Bulk, *r)? + spec.pi_hat(Side::Bulk, *r));
    }
    for (w, r) in g.bdry_weights().iter().zip(&s.rho.bdry) {
        e += w * (spec.beta_hat(Side::Surface, *r)? + spec.pi_hat(Side::Surface, *r));
    }
    if include_mu_coupling {
        e -= g.bulk_dot(&s.mu.bulk, &s.rho.bulk) + g.bdry_dot(&s.mu.bdry, &s.rho.bdry);
    }
    Ok(e)
}

/// One row of the per-step diagnostics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mass: f64,
    #[serde(rename = "energy_noMu")]
    pub energy_no_mu: f64,
    pub energy_ftot: f64,
    pub grad_mu_norm: f64,
    pub dual_dt_norm: f64,
    pub mu_std: f64,
    #[serde(skip)]
    pub mu_mean: f64,
}

/// Quadrature-weighted standard deviation of `mu` over all nodes, and its
/// generalized mean.
fn mu_spread(g: &Grid, mu: &[f64]) -> (f64, f64) {
    let m = g.node_mass();
    let total: f64 = m.iter().sum();
    let mean = dot(m, mu) / total;
    let var = m
        .iter()
        .zip(mu)
        .map(|(w, v)| w * (v - mean).powi(2))
        .sum::<f64>()
        / total;
    (var.sqrt(), mean)
}

fn dual_dt(g: &Grid, nop: &NOperator, prev: &State, cur: &State, dt: f64) -> Result<f64> {
    let m = g.node_mass();
    let mut f: Vec<f64> = (0..m.len())
        .map(|i| m[i] * (cur.rho.bulk[i] - prev.rho.bulk[i]) / dt)
        .collect();
    let s: f64 = f.iter().sum();
    let total: f64 = m.iter().sum();
    for i in 0..f.len() {
        f[i] -= s * m[i] / total;
    }
    nop.dual_norm_functional(&f)
}

pub(crate) fn step_diagnostics(
    g: &Grid,
    spec: &PotentialSpec,
    nop: &NOperator,
    prev: Option<&State>,
    cur: &State,
    dt: f64,
) -> Result<StepDiagnostics> {
    let energy_no_mu = free_energy(cur, spec, g, false)?;
    let coupling = g.bulk_dot(&cur.mu.bulk, &cur.rho.bulk) + g.bdry_dot(&cur.mu.bdry, &cur.rho.bdry);
    let (mu_std, mu_mean) = mu_spread(g, &cur.mu.bulk);
    Ok(StepDiagnostics {
        t: cur.t,
        mass: generalized_mean(&cur.rho, g),
        energy_no_mu,
        energy_ftot: energy_no_mu - coupling,
        grad_mu_norm: g.dirichlet_energy(&cur.mu.bulk).max(0.0).sqrt(),
        dual_dt_norm: match prev {
            Some(p) => dual_dt(g, nop, p, cur, dt)?,
            None => 0.0,
        },
        mu_std,
        mu_mean,
    })
}

/// Strong-form stationary residuals with the constant chemical potential
/// taken as the generalized mean of `mu`: the max over interior nodes of
/// `|-Lap rho + f'(rho) - mu_s|` and over boundary nodes of
/// `|d_nu rho - Lap_G rho + f_G'(rho) - mu_s|`.
pub fn strong_residuals(s: &State, spec: &PotentialSpec, g: &Grid) -> Result<(f64, f64)> {
    let mu_s = generalized_mean(&s.mu, g);
    let rho = &s.rho.bulk;
    let lap = g.laplacian_bulk(rho)?;
    let mut rb: f64 = 0.0;
    for j in 1..g.ny() - 1 {
        for i in 0..g.nx() {
            let k = g.idx(i, j);
            let r = rho[k];
            let v = -lap[k] + spec.beta(Side::Bulk, r)? + spec.pi(Side::Bulk, r) - mu_s;
            rb = rb.max(v.abs());
        }
    }
    let nd = g.normal_derivative(rho)?;
    let lb = g.laplace_beltrami(&s.rho.bdry)?;
    let mut rs: f64 = 0.0;
    for k in 0..g.n_bdry() {
        let r = s.rho.bdry[k];
        let v = nd[k] - lb[k] + spec.beta(Side::Surface, r)? + spec.pi(Side::Surface, r) - mu_s;
        rs = rs.max(v.abs());
    }
    Ok((rb, rs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityMetrics {
    pub grad_mu_norm: f64,
    pub dual_dt_norm: f64,
    pub mu_std: f64,
    pub r_bulk: f64,
    pub r_surf: f64,
}

/// Metrics of the last step of a trajectory holding at least two states.
pub fn stationarity_metrics(
    states: &[State],
    dt: f64,
    g: &Grid,
    spec: &PotentialSpec,
) -> Result<StationarityMetrics> {
    if states.len() < 2 {
        return Err(Error::param("trajectory", "needs at least two states"));
    }
    let cur = &states[states.len() - 1];
    let prev = &states[states.len() - 2];
    let nop = NOperator::new(g)?;
    let (mu_std, _) = mu_spread(g, &cur.mu.bulk);
    let (r_bulk, r_surf) = strong_residuals(cur, spec, g)?;
    Ok(StationarityMetrics {
        grad_mu_norm: g.dirichlet_energy(&cur.mu.bulk).max(0.0).sqrt(),
        dual_dt_norm: dual_dt(g, &nop, prev, cur, dt)?,
        mu_std,
        r_bulk,
        r_surf,
    })
}

#[derive(Debug, Clone)]
pub struct OmegaReport {
    pub final_state: State,
    pub grad_mu_norm: f64,
    pub dual_dt_norm: f64,
    pub mu_std: f64,
    pub mu_mean: f64,
    pub mu_mean_history: Vec<f64>,
    pub stationary_residuals: (f64, f64),
    pub converged: bool,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Runs to `t_end` under `u(t) = u0 exp(-lambda t)` and tests the tail of
/// the run (last 5% of steps, averaged) for stationarity.
#[allow(clippy::too_many_arguments)]
pub fn run_longtime(
    rho0: &FieldPair,
    u0: &Velocity,
    lambda: f64,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
    t_end: f64,
    tol: f64,
) -> Result<OmegaReport> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "decay rate must be positive"));
    }
    let schedule = Schedule::Decaying {
        u0: u0.clone(),
        lambda,
    };
    let traj = simulate_with(rho0, &schedule, params, spec, g, t_end, Keep::Ends)?;
    let d = &traj.diagnostics;
    let tail = ((d.len() - 1) / 20).max(1).min(d.len());
    let window = &d[d.len() - tail..];
    let avg = |f: fn(&StepDiagnostics) -> f64| window.iter().map(f).sum::<f64>() / tail as f64;
    let grad_mu_norm = avg(|r| r.grad_mu_norm);
    let dual_dt_norm = avg(|r| r.dual_dt_norm);
    let mu_std = avg(|r| r.mu_std);
    let mu_mean = d[d.len() - 1].mu_mean;
    let final_state = traj.final_state().clone();
    let stationary_residuals = strong_residuals(&final_state, spec, g)?;
    let converged =
        grad_mu_norm <= tol && mu_std <= tol * (1.0 + mu_mean.abs()) && dual_dt_norm <= tol;
    Ok(OmegaReport {
        final_state,
        grad_mu_norm,
        dual_dt_norm,
        mu_std,
        mu_mean,
        mu_mean_history: d.iter().map(|r| r.mu_mean).collect(),
        stationary_residuals,
        converged,
        diagnostics: traj.diagnostics,
    })
}

/// `sqrt(|v|^2 + |v_G|^2 + |grad v|^2 + |grad_G v_G|^2)`.
pub fn pair_v_norm(v: &FieldPair, g: &Grid) -> f64 {
    (g.bulk_dot(&v.bulk, &v.bulk) + g.bdry_dot(&v.bdry, &v.bdry) + g.dirichlet_energy(&v.bulk)).sqrt()
}

/// Largest nodal difference between two runs over all stored times, bulk
/// and boundary.
pub fn c0_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .flat_map(|(x, y)| {
            x.rho
                .bulk
                .iter()
                .zip(&y.rho.bulk)
                .chain(x.rho.bdry.iter().zip(&y.rho.bdry))
                .map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViscosityRow {
    pub tau: f64,
    /// `max_t |rho^tau - rho^0|` over bulk and boundary nodes.
    pub c0_distance: f64,
    /// `max_t |(rho^tau, rho_G^tau)|_V`.
    pub max_v_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViscositySweep {
    pub rows: Vec<ViscosityRow>,
    /// `max_t |(rho^0, rho_G^0)|_V`.
    pub reference_v_norm: f64,
}

impl ViscositySweep {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].c0_distance < w[0].c0_distance)
    }

    /// Ratio of the largest to the smallest `max_v_norm`, the reference run
    /// included.
    pub fn v_norm_spread(&self) -> f64 {
        let all = self
            .rows
            .iter()
            .map(|r| r.max_v_norm)
            .chain([self.reference_v_norm]);
        let (lo, hi) = all.fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
        hi / lo
    }
}

/// Runs the same data with `tau_O = tau_G = tau` for each entry of `taus`
/// and with `tau = 0`, and compares each run with the pure one. Members run
/// in parallel.
pub fn viscosity_sweep(
    rho0: &FieldPair,
    schedule: &Schedule,
    params: &SolverParams,
    spec: &PotentialSpec,
    g: &Grid,
    t_end: f64,
    taus: &[f64],
) -> Result<ViscositySweep> {
    let max_v = |t: &Trajectory| {
        t.states
            .iter()
            .map(|s| pair_v_norm(&s.rho, g))
            .fold(0.0, f64::max)
    };
    let pure = simulate(rho0, schedule, &params.with_tau(0.0, 0.0), spec, g, t_end)?;
    let rows = taus
        .par_iter()
        .map(|&tau| {
            let run = simulate(rho0, schedule, &params.with_tau(tau, tau), spec, g, t_end)?;
            Ok(ViscosityRow {
                tau,
                c0_distance: c0_distance(&run, &pure),
                max_v_norm: max_v(&run),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViscositySweep {
        rows,
        reference_v_norm: max_v(&pure),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_channel_grid;

    #[test]
    fn mean_examples() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        assert!((generalized_mean(&FieldPair::constant(&g, 0.7), &g) - 0.7).abs() < 1e-15);
        let v = FieldPair::new(&g, vec![1.0; g.n_bulk()], vec![0.0; g.n_bdry()]).unwrap();
        assert!((generalized_mean(&v, &g) - 1.0 / 3.0).abs() < 1e-15);
        assert!((generalized_mean(&v.scaled(-4.0), &g) + 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_data_and_nonzero_mean() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let z = solve_n(&FieldPair::zeros(&g), &g).unwrap();
        assert!(z.bulk.iter().all(|v| *v == 0.0));
        assert_eq!(dual_norm(&FieldPair::zeros(&g), &g).unwrap(), 0.0);
        assert!(matches!(
            solve_n(&FieldPair::constant(&g, 1.0), &g),
            Err(Error::NonzeroMean { .. })
        ));
    }

    #[test]
    fn energy_examples() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let spec = PotentialSpec::default();
        for c in [1.0, -1.0] {
            let s = State::from_nodal(&g, vec![c; g.n_bulk()], vec![0.0; g.n_bulk()], 0.0);
            assert!(free_energy(&s, &spec, &g, false).unwrap().abs() < 1e-15);
        }
        let s = State::from_nodal(&g, vec![0.0; g.n_bulk()], vec![0.0; g.n_bulk()], 0.0);
        assert!((free_energy(&s, &spec, &g, false).unwrap() - 1.5).abs() < 1e-14);

        let rho = g.sample(|x, y| (x + y).sin());
        let mu = g.sample(|x, y| (x - y).cos());
        let s = State::from_nodal(&g, rho, mu, 0.0);
        let a = free_energy(&s, &spec, &g, false).unwrap();
        let b = free_energy(&s, &spec, &g, true).unwrap();
        let c = g.bulk_dot(&s.mu.bulk, &s.rho.bulk) + g.bdry_dot(&s.mu.bdry, &s.rho.bdry);
        assert!((b - a + c).abs() < 1e-14);
    }

    #[test]
    fn constant_state_metrics_vanish() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let spec = PotentialSpec::default();
        let m = 0.25;
        let s = State::initial(&g, &FieldPair::constant(&g, m), &spec).unwrap();
        let met = stationarity_metrics(&[s.clone(), s], 0.1, &g, &spec).unwrap();
        assert!(met.grad_mu_norm < 1e-14 && met.dual_dt_norm < 1e-14 && met.mu_std < 1e-14);
        assert!(met.r_bulk < 1e-14 && met.r_surf < 1e-14);
    }

    #[test]
    fn mu_shift_leaves_gradient_and_spread() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let spec = PotentialSpec::default();
        let rho = g.sample(|x, y| 0.3 * (x * y).cos());
        let mu = g.sample(|x, y| (3.0 * x).sin() + y);
        let a = State::from_nodal(&g, rho.clone(), mu.clone(), 0.0);
        let b = State::from_nodal(&g, rho, mu.iter().map(|v| v + 2.5).collect(), 0.0);
        let ma = stationarity_metrics(&[a.clone(), a], 0.1, &g, &spec).unwrap();
        let mb = stationarity_metrics(&[b.clone(), b], 0.1, &g, &spec).unwrap();
        assert!((ma.grad_mu_norm - mb.grad_mu_norm).abs() < 1e-12);
        assert!((ma.mu_std - mb.mu_std).abs() < 1e-12);
    }

    #[test]
    fn constant_datum_is_converged_immediately() {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let rep = run_longtime(
            &FieldPair::constant(&g, 0.1),
            &Velocity::zeros(&g),
            1.0,
            &SolverParams::default(),
            &PotentialSpec::default(),
            &g,
            0.0,
            1e-10,
        )
        .unwrap();
        assert!(rep.converged);
    }
}
