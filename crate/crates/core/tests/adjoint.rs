use std::f64::consts::PI;

use convective_ch::adjoint::{
    adjoint_norms, assemble_adjoint_data, backward_convolution, backward_convolution_fields,
    check_time_integrated_form, solve_adjoint, AdjointScheme,
};
use convective_ch::control::{random_divfree, schedule_dot, ControlBox, ControlProblem, CostSpec, Targets};
use convective_ch::grid::{build_channel_grid, FieldPair, Grid, Velocity};
use convective_ch::potentials::PotentialSpec;
use convective_ch::state::{simulate, Schedule, SolverParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> Grid {
    build_channel_grid(2.0, 1.0, 16, 9).unwrap()
}

fn rho0(g: &Grid) -> FieldPair {
    FieldPair::from_nodal(g, g.sample(|x, y| 0.2 + 0.4 * (PI * x).cos() * (PI * y).cos()))
}

fn tracking(g: &Grid) -> CostSpec {
    CostSpec {
        beta3: 1.0,
        beta4: 0.5,
        beta5: 1.0,
        beta6: 0.5,
        beta7: 0.1,
        targets: Targets {
            terminal_bulk: g.sample(|x, y| 0.3 * (PI * x).sin() * (PI * y).cos()),
            ..Targets::constant(g, 0.0)
        },
    }
}

fn problem<'a>(g: &'a Grid, dt: f64, tau: f64, cost: CostSpec, scheme: AdjointScheme) -> ControlProblem<'a> {
    ControlProblem {
        g,
        spec: PotentialSpec::regular(),
        params: SolverParams::with_dt(dt).with_tau(tau, tau),
        rho0: rho0(g),
        cost,
        cbox: ControlBox::uniform(g, 10.0),
        t_end: 0.2,
        scheme,
    }
}

fn steady(g: &Grid, n: usize) -> Vec<Velocity> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    vec![random_divfree(g, &mut rng).scaled(0.5); n]
}

#[test]
fn data_at_the_zero_state() {
    let g = grid();
    let spec = PotentialSpec::regular();
    let traj = simulate(&FieldPair::zeros(&g), &Schedule::zero(&g), &SolverParams::with_dt(0.1), &spec, &g, 0.3).unwrap();
    let cost = CostSpec {
        beta3: 1.0,
        beta4: 1.0,
        beta5: 1.0,
        beta6: 1.0,
        beta7: 0.0,
        targets: Targets::constant(&g, 0.0),
    };
    let d = assemble_adjoint_data(&traj, &cost, &spec, &g).unwrap();
    assert_eq!(d.psi.len(), 4);
    for k in 0..4 {
        assert!(d.psi[k].iter().all(|v| (v + 1.0).abs() < 1e-15));
        assert!(d.psi_g[k].iter().all(|v| (v + 1.0).abs() < 1e-15));
        assert!(d.phi3[k].iter().all(|v| *v == 0.0));
        assert!(d.phi4[k].iter().all(|v| *v == 0.0));
    }
    assert!(d.phi5.iter().chain(&d.phi6).all(|v| *v == 0.0));

    let adj = solve_adjoint(&traj.controls, &d, &SolverParams::with_dt(0.1), &g).unwrap();
    assert!(adj.p.iter().chain(&adj.q).all(|v| v.iter().all(|x| *x == 0.0)));
}

#[test]
fn targets_equal_to_the_trajectory_give_a_zero_adjoint() {
    let g = grid();
    let prob = problem(&g, 0.02, 0.0, tracking(&g), AdjointScheme::Exact);
    let u = steady(&g, prob.steps());
    let traj = prob.forward(&u).unwrap();
    let cost = CostSpec {
        targets: Targets::from_trajectory(&traj),
        ..tracking(&g)
    };
    let d = assemble_adjoint_data(&traj, &cost, &prob.spec, &g).unwrap();
    let adj = solve_adjoint(&traj.controls, &d, &prob.params, &g).unwrap();
    let worst = adj.p.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-14, "{worst}");
}

#[test]
fn terminal_combination_vanishes_without_terminal_weights() {
    let g = grid();
    let cost = CostSpec {
        beta5: 0.0,
        beta6: 0.0,
        ..tracking(&g)
    };
    for tau in [0.2, 0.05] {
        let prob = problem(&g, 0.02, tau, cost.clone(), AdjointScheme::Exact);
        let u = steady(&g, prob.steps());
        let ev = prob.evaluate(&u, None).unwrap();
        let n = ev.adjoint.steps();
        let c = ev.adjoint.combo(&g, n);
        assert!(c.bulk.iter().chain(&c.bdry).all(|v| v.abs() < 1e-14));
        assert!(ev.adjoint.p[n - 1].iter().any(|v| v.abs() > 1e-8));
    }
}

#[test]
fn backward_convolution_examples() {
    assert_eq!(backward_convolution(&[1.0; 5], 0.25), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    assert_eq!(backward_convolution(&[0.0; 7], 0.1), vec![0.0; 7]);
    assert!(backward_convolution(&[], 0.1).is_empty());

    // v = t against the exact (1 - t^2) / 2: first-order rule
    let err = |n: usize| -> f64 {
        let dt = 1.0 / n as f64;
        let v: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let c = backward_convolution(&v, dt);
        v.iter().zip(&c).map(|(t, c)| (c - 0.5 * (1.0 - t * t)).abs()).fold(0.0, f64::max)
    };
    let (a, b, c) = (err(8), err(16), err(32));
    assert!(b < a && c < b);
    assert!((1.8..=2.2).contains(&(a / b)) && (1.8..=2.2).contains(&(b / c)));

    let fields = backward_convolution_fields(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]], 0.5);
    assert_eq!(fields, vec![vec![4.0, 5.0], vec![2.5, 3.0], vec![0.0, 0.0]]);
}

#[test]
fn integrated_form_residual_is_first_order() {
    let g = grid();
    let res = |dt: f64| {
        let prob = problem(&g, dt, 0.0, tracking(&g), AdjointScheme::Exact);
        let u = steady(&g, prob.steps());
        let ev = prob.evaluate(&u, None).unwrap();
        let d = assemble_adjoint_data(&ev.traj, &prob.cost, &prob.spec, &g).unwrap();
        check_time_integrated_form(&ev.adjoint, &d, &ev.traj.controls, &g).unwrap()
    };
    let (a, b) = (res(0.01), res(0.005));
    let ratio = a.evolution / b.evolution;
    assert!((1.7..=2.3).contains(&ratio), "{} / {}", a.evolution, b.evolution);
    assert!(a.elliptic <= 1e-10 && b.elliptic <= 1e-10);

    // zero data: the residual vanishes identically
    let g2 = grid();
    let spec = PotentialSpec::regular();
    let traj = simulate(&rho0(&g2), &Schedule::zero(&g2), &SolverParams::with_dt(0.02), &spec, &g2, 0.1).unwrap();
    let cost = CostSpec {
        targets: Targets::from_trajectory(&traj),
        ..tracking(&g2)
    };
    let d = assemble_adjoint_data(&traj, &cost, &spec, &g2).unwrap();
    let adj = solve_adjoint(&traj.controls, &d, &SolverParams::with_dt(0.02), &g2).unwrap();
    let r = check_time_integrated_form(&adj, &d, &traj.controls, &g2).unwrap();
    assert!(r.evolution < 1e-12 && r.elliptic < 1e-12);
}

#[test]
fn adjoint_is_linear_in_the_cost_data() {
    let g = grid();
    let prob = problem(&g, 0.02, 0.0, tracking(&g), AdjointScheme::Exact);
    let u = steady(&g, prob.steps());
    let traj = prob.forward(&u).unwrap();
    let d1 = assemble_adjoint_data(&traj, &prob.cost, &prob.spec, &g).unwrap();
    let d3 = assemble_adjoint_data(&traj, &prob.cost.scaled(-3.0), &prob.spec, &g).unwrap();
    let a1 = solve_adjoint(&traj.controls, &d1, &prob.params, &g).unwrap();
    let a3 = solve_adjoint(&traj.controls, &d3, &prob.params, &g).unwrap();
    let scale = a1.p.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for (x, y) in a1.p.iter().flatten().zip(a3.p.iter().flatten()) {
        assert!((y + 3.0 * x).abs() <= 1e-10 * scale);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let g = grid();
    let prob = problem(&g, 0.01, 0.0, tracking(&g), AdjointScheme::Exact);
    let n = prob.steps();
    let u = steady(&g, n);
    let ev = prob.evaluate(&u, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let d: Vec<Velocity> = (0..n).map(|_| random_divfree(&g, &mut rng)).collect();
        let a = schedule_dot(&g, prob.dt(), &ev.grad, &d);
        let f = prob.fd_directional(&u, &d, 1e-5).unwrap();
        assert!((a - f).abs() <= 1e-5 * f.abs(), "{a} vs {f}");
    }
}

#[test]
fn viscous_adjoints_are_uniformly_bounded_and_converge() {
    let g = grid();
    let taus = [0.2, 0.1, 0.05, 0.025];
    let eval = |tau: f64| {
        let prob = problem(&g, 0.01, tau, tracking(&g), AdjointScheme::Exact);
        let u = steady(&g, prob.steps());
        prob.evaluate(&u, None).unwrap().adjoint
    };
    let pure = eval(0.0);
    let mut gaps = Vec::new();
    let mut sizes = Vec::new();
    for &tau in &taus {
        let adj = eval(tau);
        let nrm = adjoint_norms(&adj, &g);
        sizes.push(nrm.grad_p.max(nrm.q).max(nrm.combo));
        let gap = (0..adj.p.len())
            .map(|k| {
                let d: Vec<f64> = adj.p[k].iter().zip(&pure.p[k]).map(|(a, b)| a - b).collect();
                g.pair_dot(&d, &d).sqrt()
            })
            .fold(0.0, f64::max);
        gaps.push(gap);
    }
    let hi = sizes.iter().cloned().fold(0.0, f64::max);
    let lo = sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 3.0, "{sizes:?}");
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}
