//! Backward-in-time adjoint system and its time-integrated form.
//!
//! With `F^k` the tracking functionals, `F5` the terminal one, `B'^k`, `P'`
//! the weighted derivatives of `beta` and `pi` at the forward state and
//! `T = diag(tau_O w + tau_G w_G)`, the march is
//!
//! ```text
//! M P^N + T Q^N = F5,                 K P^N = M Q^N
//! M P^{k-1} + (T + dt (K + B'^k)) Q^{k-1}
//!     = M P^k + T Q^k - dt P' Q^k + dt W (u^k . grad P^k) + dt F^k,
//!                                      K P^{k-1} = M Q^{k-1}
//! ```
//!
//! for `k = N, ..., 1`, with `u^N := u^{N-1}`. `P^n` pairs with the control
//! acting on `[t_n, t_{n+1}]`, and the cost gradient density there is
//! `rho^n grad P^n + beta7 u^n`.
//!
//! [`AdjointScheme::Exact`] drops the `P'` and convection terms from the
//! `k = N` step, which makes the march the transpose of the linearized
//! forward march and the gradient exact. [`AdjointScheme::Consistent`]
//! keeps them; the gradient then carries an `O(dt)` error whenever the
//! terminal data are nonzero.

use crate::control::CostSpec;
use crate::error::{check_len, Error, Result};
use crate::grid::{FieldPair, Grid, Velocity};
use crate::linalg::TripletMatrix;
use crate::potentials::{PotentialSpec, Side};
use crate::state::{viscosity_diag, SolverParams, Trajectory};

/// Pointwise data of the adjoint system along a forward trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointData {
    /// `f''(rho^k)` on bulk nodes, `k = 0..=N`.
    pub psi: Vec<Vec<f64>>,
    /// `f_G''(rho^k)` on boundary nodes.
    pub psi_g: Vec<Vec<f64>>,
    /// `pi'` in the bulk and on the surface (constant for every family).
    pub dpi: f64,
    pub dpi_g: f64,
    /// `beta3 (rho^k - target_Q^k)` on bulk nodes.
    pub phi3: Vec<Vec<f64>>,
    /// `beta4 (rho_G^k - target_S^k)` on boundary nodes.
    pub phi4: Vec<Vec<f64>>,
    /// `beta5 (rho^N - target_O)`.
    pub phi5: Vec<f64>,
    /// `beta6 (rho_G^N - target_G)`.
    pub phi6: Vec<f64>,
}

pub fn assemble_adjoint_data(
    traj: &Trajectory,
    cost: &CostSpec,
    spec: &PotentialSpec,
    g: &Grid,
) -> Result<AdjointData> {
    if !traj.is_complete() {
        return Err(Error::MissingCheckpoint(traj.states.len()));
    }
    let n = traj.steps;
    let tg = &cost.targets;
    let mut psi = Vec::with_capacity(n + 1);
    let mut psi_g = Vec::with_capacity(n + 1);
    let mut phi3 = Vec::with_capacity(n + 1);
    let mut phi4 = Vec::with_capacity(n + 1);
    for (k, s) in traj.states.iter().enumerate() {
        let bulk = &s.rho.bulk;
        let bdry = &s.rho.bdry;
        let tq = tg.bulk_at(k);
        let ts = tg.bdry_at(k);
        check_len("bulk tracking target", g.n_bulk(), tq.len())?;
        check_len("boundary tracking target", g.n_bdry(), ts.len())?;
        psi.push(
            bulk.iter()
                .map(|r| Ok(spec.beta_prime(Side::Bulk, *r)? + spec.pi_prime(Side::Bulk)))
                .collect::<Result<Vec<_>>>()?,
        );
        psi_g.push(
            bdry.iter()
                .map(|r| Ok(spec.beta_prime(Side::Surface, *r)? + spec.pi_prime(Side::Surface)))
                .collect::<Result<Vec<_>>>()?,
        );
        phi3.push(bulk.iter().zip(tq).map(|(r, t)| cost.beta3 * (r - t)).collect());
        phi4.push(bdry.iter().zip(ts).map(|(r, t)| cost.beta4 * (r - t)).collect());
    }
    let last = traj.final_state();
    check_len("terminal bulk target", g.n_bulk(), tg.terminal_bulk.len())?;
    check_len("terminal boundary target", g.n_bdry(), tg.terminal_bdry.len())?;
    let phi5 = last
        .rho
        .bulk
        .iter()
        .zip(&tg.terminal_bulk)
        .map(|(r, t)| cost.beta5 * (r - t))
        .collect();
    let phi6 = last
        .rho
        .bdry
        .iter()
        .zip(&tg.terminal_bdry)
        .map(|(r, t)| cost.beta6 * (r - t))
        .collect();
    Ok(AdjointData {
        psi,
        psi_g,
        dpi: spec.pi_prime(Side::Bulk),
        dpi_g: spec.pi_prime(Side::Surface),
        phi3,
        phi4,
        phi5,
        phi6,
    })
}

/// Adjoint variables at the stored times `t_0, ..., t_N` (nodal, so every
/// pair is trace compatible).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub tau_o: f64,
    pub tau_g: f64,
    pub dt: f64,
}

impl AdjointTrajectory {
    pub fn steps(&self) -> usize {
        self.p.len() - 1
    }

    pub fn p_pair(&self, g: &Grid, k: usize) -> FieldPair {
        FieldPair::from_nodal(g, self.p[k].clone())
    }

    pub fn q_pair(&self, g: &Grid, k: usize) -> FieldPair {
        FieldPair::from_nodal(g, self.q[k].clone())
    }

    /// `(p + tau_O q, p_G + tau_G q_G)` at step `k`.
    pub fn combo(&self, g: &Grid, k: usize) -> FieldPair {
        let p = &self.p[k];
        let q = &self.q[k];
        let bulk = p.iter().zip(q).map(|(a, b)| a + self.tau_o * b).collect();
        let bdry = (0..g.n_bdry())
            .map(|j| {
                let i = g.bdry_node(j);
                p[i] + self.tau_g * q[i]
            })
            .collect();
        FieldPair { bulk, bdry }
    }
}

/// Weighted nodal `B'` (from `psi - pi'`) and `P'` at step `k`.
fn weighted_derivs(g: &Grid, data: &AdjointData, k: usize) -> (Vec<f64>, Vec<f64>) {
    let w = g.bulk_weights();
    let mut bp: Vec<f64> = (0..g.n_bulk()).map(|i| w[i] * (data.psi[k][i] - data.dpi)).collect();
    let mut pp: Vec<f64> = w.iter().map(|wi| wi * data.dpi).collect();
    for j in 0..g.n_bdry() {
        let i = g.bdry_node(j);
        let wg = g.bdry_weights()[j];
        bp[i] += wg * (data.psi_g[k][j] - data.dpi_g);
        pp[i] += wg * data.dpi_g;
    }
    (bp, pp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointScheme {
    #[default]
    Exact,
    Consistent,
}

/// Marches the adjoint backward from `t_N` with [`AdjointScheme::Exact`].
/// Viscosities and `dt` come from `params`; `controls[n]` is the velocity
/// on `[t_n, t_{n+1}]`.
pub fn solve_adjoint(
    controls: &[Velocity],
    data: &AdjointData,
    params: &SolverParams,
    g: &Grid,
) -> Result<AdjointTrajectory> {
    solve_adjoint_with(controls, data, params, g, AdjointScheme::Exact)
}

pub fn solve_adjoint_with(
    controls: &[Velocity],
    data: &AdjointData,
    params: &SolverParams,
    g: &Grid,
    scheme: AdjointScheme,
) -> Result<AdjointTrajectory> {
    let n_steps = data.psi.len() - 1;
    if controls.len() < n_steps {
        return Err(Error::MissingCheckpoint(controls.len()));
    }
    let n = g.n_bulk();
    let dt = params.dt;
    let m = g.node_mass();
    let tdiag = viscosity_diag(g, params);
    let k_trip = g.stiffness();

    let block = |diag_q: &[f64], with_k: bool| -> Result<crate::linalg::CscMatrix> {
        let mut a = TripletMatrix::with_capacity(2 * n, 2 * n, 12 * n);
        for i in 0..n {
            a.push(i, i, m[i]);
            a.push(i, n + i, diag_q[i]);
            a.push(n + i, n + i, -m[i]);
        }
        if with_k {
            a.push_block(0, n, &k_trip, dt);
        }
        a.push_block(n, 0, &k_trip, 1.0);
        a.build()
    };

    let mut p = vec![Vec::new(); n_steps + 1];
    let mut q = vec![Vec::new(); n_steps + 1];

    let f5 = g.functional(&data.phi5, &data.phi6);
    let term = block(&tdiag, false)?;
    let mut rhs = f5;
    rhs.extend(std::iter::repeat_n(0.0, n));
    let sol = term.lu()?.solve(&rhs).map_err(|e| Error::at_step(n_steps, e))?;
    p[n_steps] = sol[..n].to_vec();
    q[n_steps] = sol[n..].to_vec();

    let mut symbolic = None;
    for k in (1..=n_steps).rev() {
        let (bp, pp) = weighted_derivs(g, data, k);
        let diag: Vec<f64> = (0..n).map(|i| tdiag[i] + dt * bp[i]).collect();
        let a = block(&diag, true)?;
        if symbolic.is_none() {
            symbolic = Some(a.symbolic_lu()?);
        }
        let lu = a
            .lu_with(symbolic.as_ref().expect("analysed above"))
            .map_err(|e| Error::at_step(k, e))?;
        let u = &controls[k.min(n_steps - 1)];
        let pk = &p[k];
        let qk = &q[k];
        // -dt C(u)^T p = dt W (u . grad p)
        let conv = g.weak_convection_transpose(pk, u);
        let fk = g.functional(&data.phi3[k], &data.phi4[k]);
        let mut rhs = vec![0.0; 2 * n];
        for i in 0..n {
            rhs[i] = m[i] * pk[i] + tdiag[i] * qk[i] + dt * fk[i];
            if k < n_steps || scheme == AdjointScheme::Consistent {
                rhs[i] -= dt * (pp[i] * qk[i] + conv[i]);
            }
        }
        let sol = lu.solve(&rhs).map_err(|e| Error::at_step(k, e))?;
        p[k - 1] = sol[..n].to_vec();
        q[k - 1] = sol[n..].to_vec();
    }
    Ok(AdjointTrajectory {
        p,
        q,
        tau_o: params.tau_o,
        tau_g: params.tau_g,
        dt,
    })
}

/// `(1 * v)(t_j) = dt * sum_{k > j} v_k`, the right-endpoint rule for
/// `int_{t_j}^T v`; vanishes at the final time.
pub fn backward_convolution(series: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; series.len()];
    let mut acc = 0.0;
    for j in (0..series.len()).rev() {
        out[j] = acc;
        acc += dt * series[j];
    }
    out
}

/// Field-valued [`backward_convolution`].
pub fn backward_convolution_fields(series: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let len = series.first().map_or(0, |v| v.len());
    let mut out = vec![vec![0.0; len]; series.len()];
    let mut acc = vec![0.0; len];
    for j in (0..series.len()).rev() {
        out[j].clone_from(&acc);
        for (a, v) in acc.iter_mut().zip(&series[j]) {
            *a += dt * v;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedResidual {
    /// Max over time and nodes of the mass-normalized residual of the
    /// time-integrated evolution equation.
    pub evolution: f64,
    /// Same for the elliptic relation `K p = M q`.
    pub elliptic: f64,
}

/// Residual of the pure (`tau = 0`) adjoint system written in integrated
/// form with backward convolutions:
///
/// ```text
/// M P^j - F5 + 1*(K Q + Psi Q - W u . grad P - F)(t_j) = 0,   K P^j = M Q^j
/// ```
pub fn check_time_integrated_form(
    adj: &AdjointTrajectory,
    data: &AdjointData,
    controls: &[Velocity],
    g: &Grid,
) -> Result<IntegratedResidual> {
    let n_steps = adj.steps();
    let n = g.n_bulk();
    let m = g.node_mass();
    let dt = adj.dt;
    let mut integrand = Vec::with_capacity(n_steps + 1);
    for k in 0..=n_steps {
        let (bp, pp) = weighted_derivs(g, data, k);
        let kq = g.apply_stiffness(&adj.q[k]);
        let u = &controls[k.min(controls.len().saturating_sub(1))];
        let conv = g.weak_convection_transpose(&adj.p[k], u);
        let fk = g.functional(&data.phi3[k], &data.phi4[k]);
        integrand.push(
            (0..n)
                .map(|i| kq[i] + (bp[i] + pp[i]) * adj.q[k][i] + conv[i] - fk[i])
                .collect::<Vec<f64>>(),
        );
    }
    let conv = backward_convolution_fields(&integrand, dt);
    let f5 = g.functional(&data.phi5, &data.phi6);
    let mut evolution: f64 = 0.0;
    let mut elliptic: f64 = 0.0;
    for j in 0..=n_steps {
        let kp = g.apply_stiffness(&adj.p[j]);
        for i in 0..n {
            let r = m[i] * adj.p[j][i] - f5[i] + conv[j][i];
            evolution = evolution.max((r / m[i]).abs());
            elliptic = elliptic.max(((kp[i] - m[i] * adj.q[j][i]) / m[i]).abs());
        }
    }
    Ok(IntegratedResidual {
        evolution,
        elliptic,
    })
}

/// Discrete norms of the basic adjoint estimate: `||grad p||_{L2(Q)}`,
/// `||q||_{L2(Q)}`, `max_t ||1*grad q||` and `max_t ||p + tau q||_H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointNorms {
    pub grad_p: f64,
    pub q: f64,
    pub conv_grad_q: f64,
    pub combo: f64,
}

pub fn adjoint_norms(adj: &AdjointTrajectory, g: &Grid) -> AdjointNorms {
    let dt = adj.dt;
    let mut grad_p = 0.0;
    let mut qn = 0.0;
    let mut combo: f64 = 0.0;
    for k in 1..adj.p.len() {
        grad_p += dt * g.dirichlet_energy(&adj.p[k]);
        qn += dt * g.pair_dot(&adj.q[k], &adj.q[k]);
    }
    for k in 0..adj.p.len() {
        let c = adj.combo(g, k);
        combo = combo.max((g.bulk_dot(&c.bulk, &c.bulk) + g.bdry_dot(&c.bdry, &c.bdry)).sqrt());
    }
    let cq = backward_convolution_fields(&adj.q, dt);
    let conv_grad_q = cq
        .iter()
        .map(|v| g.dirichlet_energy(v).max(0.0).sqrt())
        .fold(0.0, f64::max);
    AdjointNorms {
        grad_p: grad_p.sqrt(),
        q: qn.sqrt(),
        conv_grad_q,
        combo,
    }
}
