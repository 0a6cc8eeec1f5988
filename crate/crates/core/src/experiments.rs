//! Experiment orchestration behind the command line: runs the experiment
//! named in a [`RunConfig`], writes its artifacts into `output_dir` and
//! evaluates the configured checks.
//!
//! Every run writes `config.toml` (the effective configuration) and
//! `summary.json`. Per experiment:
//!
//! | experiment | artifacts |
//! |------------|-----------|
//! | simulate   | `diagnostics.csv`, `rho_final.bin`, `mu_final.bin`, optional `rho_NNNNNN.bin` |
//! | longtime   | `diagnostics.csv`, `rho_final.bin`, `mu_final.bin` |
//! | tausweep   | `tausweep.csv` |
//! | optimize   | `iterations.csv`, `rho_opt_final.bin`, `u_opt_x.bin`, `u_opt_y.bin`, sweep mode adds `sweep.csv` |
//! | gradcheck  | `gradcheck.csv` |

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{run_longtime, viscosity_sweep};
use crate::config::{Experiment, RunConfig, TargetSource};
use crate::control::{
    optimize, random_divfree, schedule_dot, ControlProblem, CostSpec, Mode, Targets,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, Velocity};
use crate::io;
use crate::state::{simulate_with, Keep, State};

/// One acceptance check: `value` compared against `limit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value <= limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            passed: value >= limit,
        }
    }

    fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: f64::from(u8::from(ok)),
            limit: 1.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Human-readable report lines.
    #[serde(skip)]
    pub report: Vec<String>,
    pub details: Value,
}

/// Loads, validates and runs a configuration file.
pub fn run_path(path: impl AsRef<Path>) -> Result<Outcome> {
    run(&RunConfig::load(path)?)
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let g = cfg.grid()?;
    let (checks, report, details) = match cfg.experiment {
        Experiment::Simulate => run_simulate(cfg, &g, &dir)?,
        Experiment::Longtime => run_longtime_experiment(cfg, &g, &dir)?,
        Experiment::Tausweep => run_tausweep(cfg, &g, &dir)?,
        Experiment::Optimize => run_optimize(cfg, &g, &dir)?,
        Experiment::Gradcheck => run_gradcheck(cfg, &g, &dir)?,
    };
    let outcome = Outcome {
        experiment: cfg.experiment,
        output_dir: dir.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        report,
        details,
    };
    io::write_json(&outcome, dir.join("summary.json"))?;
    Ok(outcome)
}

type Parts = (Vec<Check>, Vec<String>, Value);

fn dump_state(s: &State, g: &Grid, dir: &Path, tag: &str) -> Result<()> {
    io::dump_pair(g, &s.rho, s.t, dir.join(format!("rho_{tag}.bin")))?;
    io::dump_pair(g, &s.mu, s.t, dir.join(format!("mu_{tag}.bin")))
}

fn run_simulate(cfg: &RunConfig, g: &Grid, dir: &Path) -> Result<Parts> {
    let rho0 = cfg.initial_datum(g)?;
    let schedule = cfg.schedule(g)?;
    let every = cfg.run.dump_every;
    let keep = if every > 0 { Keep::All } else { Keep::Ends };
    let traj = simulate_with(
        &rho0,
        &schedule,
        &cfg.solver,
        &cfg.potential,
        g,
        cfg.run.t_end,
        keep,
    )?;
    io::write_diagnostics(&traj.diagnostics, dir.join("diagnostics.csv"))?;
    if every > 0 {
        for (n, s) in traj.states.iter().enumerate().step_by(every) {
            io::dump_pair(g, &s.rho, s.t, dir.join(format!("rho_{n:06}.bin")))?;
        }
    }
    dump_state(traj.final_state(), g, dir, "final")?;

    let d = &traj.diagnostics;
    let m0 = d[0].mass;
    let drift = d.iter().map(|r| (r.mass - m0).abs()).fold(0.0, f64::max);
    let mut checks = vec![Check::at_most(
        "mass_drift",
        drift,
        cfg.run.mass_tol * (1.0 + m0.abs()),
    )];
    let still = schedule.samples().iter().all(|u| u.max_magnitude() == 0.0);
    let mut rise = f64::NAN;
    if still {
        let e0 = d[0].energy_no_mu.abs();
        rise = d
            .windows(2)
            .map(|w| w[1].energy_no_mu - w[0].energy_no_mu)
            .fold(f64::NEG_INFINITY, f64::max);
        if d.len() > 1 {
            checks.push(Check::at_most("energy_increase", rise, cfg.run.energy_tol * e0));
        }
    }
    let report = vec![
        format!("steps: {}", traj.steps),
        format!("mass drift: {drift:.3e} (m0 = {m0:.6})"),
        format!(
            "energy: {:.6e} -> {:.6e}",
            d[0].energy_no_mu,
            d[d.len() - 1].energy_no_mu
        ),
    ];
    let details = json!({
        "steps": traj.steps,
        "initial_mass": m0,
        "mass_drift": drift,
        "max_energy_increase": if rise.is_finite() { json!(rise) } else { Value::Null },
        "final_energy": d[d.len() - 1].energy_no_mu,
    });
    Ok((checks, report, details))
}

fn run_longtime_experiment(cfg: &RunConfig, g: &Grid, dir: &Path) -> Result<Parts> {
    if !(cfg.velocity.lambda > 0.0) {
        return Err(Error::Config {
            key: "velocity.lambda".into(),
            reason: "longtime needs a positive decay rate".into(),
        });
    }
    let rho0 = cfg.initial_datum(g)?;
    let u0 = cfg.velocity_field(g)?;
    let tol = cfg.run.longtime_tol;
    let rep = run_longtime(
        &rho0,
        &u0,
        cfg.velocity.lambda,
        &cfg.solver,
        &cfg.potential,
        g,
        cfg.run.t_end,
        tol,
    )?;
    io::write_diagnostics(&rep.diagnostics, dir.join("diagnostics.csv"))?;
    dump_state(&rep.final_state, g, dir, "final")?;
    let (r_bulk, r_surf) = rep.stationary_residuals;
    let checks = vec![
        Check::at_most("grad_mu_norm", rep.grad_mu_norm, tol),
        Check::at_most("mu_std", rep.mu_std, tol * (1.0 + rep.mu_mean.abs())),
        Check::at_most("dual_dt_norm", rep.dual_dt_norm, tol),
        Check::at_most("r_bulk", r_bulk, cfg.run.residual_tol),
        Check::at_most("r_surf", r_surf, cfg.run.residual_tol),
    ];
    let report = vec![
        format!("grad_mu_norm {:.3e}", rep.grad_mu_norm),
        format!("mu_std {:.3e} (mean mu {:.6})", rep.mu_std, rep.mu_mean),
        format!("dual_dt_norm {:.3e}", rep.dual_dt_norm),
        format!("stationary residuals {r_bulk:.3e} {r_surf:.3e}"),
    ];
    let details = json!({
        "grad_mu_norm": rep.grad_mu_norm,
        "mu_std": rep.mu_std,
        "mu_mean": rep.mu_mean,
        "dual_dt_norm": rep.dual_dt_norm,
        "r_bulk": r_bulk,
        "r_surf": r_surf,
    });
    Ok((checks, report, details))
}

fn run_tausweep(cfg: &RunConfig, g: &Grid, dir: &Path) -> Result<Parts> {
    let rho0 = cfg.initial_datum(g)?;
    let schedule = cfg.schedule(g)?;
    let sweep = viscosity_sweep(
        &rho0,
        &schedule,
        &cfg.solver,
        &cfg.potential,
        g,
        cfg.run.t_end,
        &cfg.run.taus,
    )?;
    let mut w = csv::Writer::from_path(dir.join("tausweep.csv"))?;
    for r in &sweep.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut report = vec![format!("{:>8}  {:>12}  {:>12}", "tau", "C0 distance", "max V norm")];
    for r in &sweep.rows {
        report.push(format!(
            "{:>8}  {:>12.5e}  {:>12.5e}",
            r.tau, r.c0_distance, r.max_v_norm
        ));
    }
    report.push(format!("{:>8}  {:>12}  {:>12.5e}", 0.0, "-", sweep.reference_v_norm));
    let checks = vec![
        Check::holds("c0_distance_strictly_decreasing", sweep.strictly_decreasing()),
        Check::at_most("v_norm_spread", sweep.v_norm_spread(), 2.0),
    ];
    let details = serde_json::to_value(&sweep).map_err(std::io::Error::other)?;
    Ok((checks, report, details))
}

fn targets(cfg: &RunConfig, prob: &ControlProblem, g: &Grid) -> Result<Targets> {
    let c = &cfg.control;
    match c.targets {
        TargetSource::Constant => Ok(Targets::constant(g, c.target_value)),
        TargetSource::Reference => {
            let u = cfg.schedule(g)?.per_step(prob.steps(), prob.dt());
            Ok(Targets::from_trajectory(&prob.forward(&u)?))
        }
        TargetSource::Dump => {
            let d = io::read_dump(c.target_path.as_ref().expect("validated"))?;
            let pair = d.pair().filter(|_| d.matches(g)).ok_or_else(|| Error::Config {
                key: "control.target_path".into(),
                reason: "target must be a pair dump on the configured grid".into(),
            })?;
            Ok(Targets {
                bulk: vec![pair.bulk.clone()],
                bdry: vec![pair.bdry.clone()],
                terminal_bulk: pair.bulk,
                terminal_bdry: pair.bdry,
            })
        }
    }
}

fn problem<'a>(cfg: &RunConfig, g: &'a Grid) -> Result<ControlProblem<'a>> {
    let c = &cfg.control;
    let cbox = c.control_box(g);
    cbox.validate(g).map_err(|e| Error::Config {
        key: "control.Ubar".into(),
        reason: e.to_string(),
    })?;
    let mut prob = ControlProblem {
        g,
        spec: cfg.potential.clone(),
        params: cfg.solver.clone(),
        rho0: cfg.initial_datum(g)?,
        cost: CostSpec {
            beta3: c.beta3,
            beta4: c.beta4,
            beta5: c.beta5,
            beta6: c.beta6,
            beta7: c.beta7,
            targets: Targets::constant(g, 0.0),
        },
        cbox,
        t_end: cfg.run.t_end,
        scheme: c.scheme,
    };
    prob.cost.targets = targets(cfg, &prob, g)?;
    prob.cost.validate()?;
    Ok(prob)
}

fn run_optimize(cfg: &RunConfig, g: &Grid, dir: &Path) -> Result<Parts> {
    let c = &cfg.control;
    let prob = problem(cfg, g)?;
    let n = prob.steps();
    let u0 = vec![Velocity::zeros(g); n];
    let (res, sweep) = optimize(&prob, &u0, &c.settings(cfg.seed), c.mode)?;
    let pure = sweep.as_ref().map_or(&res, |s| &s.reference);
    io::write_iterations(pure, dir.join("iterations.csv"))?;
    let traj = prob.forward(&res.u_opt)?;
    io::dump_pair(g, &traj.final_state().rho, prob.t_end, dir.join("rho_opt_final.bin"))?;
    if let Some(u) = res.u_opt.first() {
        io::dump_bulk(g, &u.ux, 0.0, dir.join("u_opt_x.bin"))?;
        io::dump_bulk(g, &u.uy, 0.0, dir.join("u_opt_y.bin"))?;
    }

    let monotone = pure.j_history.windows(2).all(|w| w[1] <= w[0]);
    let mut checks = vec![
        Check::at_most("fixed_point_residual", pure.fp_residual, c.fp_tol),
        Check::at_least("vi_residual", pure.vi.residual, -c.vi_tol * pure.vi.scale),
        Check::holds("j_history_nonincreasing", monotone),
    ];
    let mut report = vec![
        format!(
            "iterations {} converged {} J {:.6e} -> {:.6e}",
            pure.iterations,
            pure.converged,
            pure.j_history[0],
            pure.j_history[pure.j_history.len() - 1]
        ),
        format!(
            "fixed-point residual {:.3e}, vi residual {:.3e} (scale {:.3e})",
            pure.fp_residual, pure.vi.residual, pure.vi.scale
        ),
    ];
    let mut details = json!({
        "iterations": pure.iterations,
        "converged": pure.converged,
        "J": pure.j_history.last(),
        "fp_residual": pure.fp_residual,
        "vi_residual": pure.vi.residual,
        "vi_scale": pure.vi.scale,
    });
    if let (Mode::TauSweep, Some(s)) = (c.mode, sweep.as_ref()) {
        #[derive(Serialize)]
        struct Row {
            tau: f64,
            iterations: usize,
            adapted_cost: f64,
            control_gap: f64,
        }
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        for k in 0..s.taus.len() {
            let row = Row {
                tau: s.taus[k],
                iterations: s.members[k].iterations,
                adapted_cost: s.adapted_costs[k],
                control_gap: s.control_gaps[k],
            };
            report.push(format!(
                "tau {:<6} J~ {:.6e} |u - u0| {:.4e}",
                row.tau, row.adapted_cost, row.control_gap
            ));
            w.serialize(row)?;
        }
        w.flush()?;
        checks.push(Check::holds(
            "control_gaps_nonincreasing",
            s.control_gaps_nonincreasing(),
        ));
        checks.push(Check::at_most("cost_gap_ratio", s.cost_gap_ratio(), c.gap_ratio));
        details["sweep"] = json!({
            "taus": s.taus,
            "adapted_costs": s.adapted_costs,
            "control_gaps": s.control_gaps,
            "cost_gap_ratio": s.cost_gap_ratio(),
        });
    }
    Ok((checks, report, details))
}

fn run_gradcheck(cfg: &RunConfig, g: &Grid, dir: &Path) -> Result<Parts> {
    let c = &cfg.control;
    let prob = problem(cfg, g)?;
    let n = prob.steps();
    let u = cfg.schedule(g)?.per_step(n, prob.dt());
    let ev = prob.evaluate(&u, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    #[derive(Serialize)]
    struct Row {
        direction: usize,
        adjoint: f64,
        finite_difference: f64,
        rel_error: f64,
    }
    let mut rows = Vec::new();
    for k in 0..c.directions {
        let d: Vec<Velocity> = (0..n).map(|_| random_divfree(g, &mut rng)).collect();
        let a = schedule_dot(g, prob.dt(), &ev.grad, &d);
        let f = prob.fd_directional(&u, &d, c.fd_step)?;
        rows.push(Row {
            direction: k,
            adjoint: a,
            finite_difference: f,
            rel_error: (a - f).abs() / f.abs().max(f64::MIN_POSITIVE),
        });
    }
    let mut w = csv::Writer::from_path(dir.join("gradcheck.csv"))?;
    let mut report = Vec::new();
    for r in &rows {
        report.push(format!(
            "direction {}: adjoint {:.8e} fd {:.8e} rel error {:.3e}",
            r.direction, r.adjoint, r.finite_difference, r.rel_error
        ));
        w.serialize(r)?;
    }
    w.flush()?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    report.push(format!("max relative error {worst:.3e}"));
    let checks = vec![Check::at_most("max_rel_error", worst, c.gradcheck_tol)];
    let details = json!({ "steps": n, "max_rel_error": worst, "J": ev.j });
    Ok((checks, report, details))
}
