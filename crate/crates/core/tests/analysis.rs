use std::f64::consts::PI;

use convective_ch::analysis::{
    dual_norm, free_energy, generalized_mean, run_longtime, solve_n, stationarity_metrics,
};
use convective_ch::grid::{build_channel_grid, velocity_from_stream, FieldPair, Grid, Velocity};
use convective_ch::potentials::{Family, PotentialSpec};
use convective_ch::state::{simulate, Schedule, SolverParams, State};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense coupled stiffness assembled from the edge formulas: bulk x-edges
/// `hy/hx` (halved on the walls), y-edges `hx/hy`, surface edges `1/hx`.
fn dense_stiffness(g: &Grid) -> DMatrix<f64> {
    let (nx, ny) = (g.nx(), g.ny());
    let n = nx * ny;
    let mut k = DMatrix::zeros(n, n);
    let mut add = |a: usize, b: usize, c: f64| {
        k[(a, a)] += c;
        k[(b, b)] += c;
        k[(a, b)] -= c;
        k[(b, a)] -= c;
    };
    for j in 0..ny {
        let wall = j == 0 || j == ny - 1;
        let mut c = g.hy() / g.hx();
        if wall {
            c *= 0.5;
        }
        for i in 0..nx {
            add(j * nx + i, j * nx + (i + 1) % nx, c);
            if wall {
                add(j * nx + i, j * nx + (i + 1) % nx, 1.0 / g.hx());
            }
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            add(j * nx + i, (j + 1) * nx + i, g.hx() / g.hy());
        }
    }
    k
}

/// Node masses: `hx hy` (halved on the walls) plus `hx` on wall nodes.
fn dense_mass(g: &Grid) -> DVector<f64> {
    let (nx, ny) = (g.nx(), g.ny());
    DVector::from_fn(nx * ny, |i, _| {
        let j = i / nx;
        if j == 0 || j == ny - 1 {
            0.5 * g.hx() * g.hy() + g.hx()
        } else {
            g.hx() * g.hy()
        }
    })
}

/// Mean-free solution of `K xi = M f` through the bordered system.
fn dense_n(g: &Grid, f: &[f64]) -> DVector<f64> {
    let k = dense_stiffness(g);
    let m = dense_mass(g);
    let n = k.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&k);
    for i in 0..n {
        a[(i, n)] = m[i];
        a[(n, i)] = m[i];
    }
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = m[i] * f[i];
    }
    let sol = a.lu().solve(&rhs).expect("bordered system is regular");
    sol.rows(0, n).into_owned()
}

fn random_mean_free(g: &Grid, rng: &mut impl Rng) -> FieldPair {
    let raw: Vec<f64> = (0..g.n_bulk()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = FieldPair::from_nodal(g, raw);
    let m = generalized_mean(&p, g);
    FieldPair::from_nodal(g, p.bulk.iter().map(|v| v - m).collect())
}

fn pairing(g: &Grid, a: &FieldPair, b: &FieldPair) -> f64 {
    g.bulk_dot(&a.bulk, &b.bulk) + g.bdry_dot(&a.bdry, &b.bdry)
}

#[test]
fn mean_examples() {
    let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
    assert!((generalized_mean(&FieldPair::constant(&g, -2.5), &g) + 2.5).abs() < 1e-15);
    let v = FieldPair::new(&g, vec![1.0; g.n_bulk()], vec![0.0; g.n_bdry()]).unwrap();
    assert!((generalized_mean(&v, &g) - 1.0 / 3.0).abs() < 1e-15);
    let w = FieldPair::new(&g, g.sample(|x, y| x * y), vec![0.7; g.n_bdry()]).unwrap();
    assert!((generalized_mean(&w.scaled(3.0), &g) - 3.0 * generalized_mean(&w, &g)).abs() < 1e-14);
}

#[test]
fn n_matches_a_dense_bordered_solve() {
    let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let f = random_mean_free(&g, &mut rng);
        let ours = solve_n(&f, &g).unwrap();
        let want = dense_n(&g, &f.bulk);
        let scale = want.amax();
        for i in 0..g.n_bulk() {
            assert!((ours.bulk[i] - want[i]).abs() <= 1e-10 * scale);
        }
        assert!(generalized_mean(&ours, &g).abs() < 1e-13 * scale.max(1.0));
    }
    let z = solve_n(&FieldPair::zeros(&g), &g).unwrap();
    assert!(z.bulk.iter().all(|v| *v == 0.0));
    assert!(solve_n(&FieldPair::constant(&g, 0.5), &g).is_err());
}

#[test]
fn dual_norm_identity_on_random_pairs() {
    let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let f = random_mean_free(&g, &mut rng);
        let nf = solve_n(&f, &g).unwrap();
        let lhs = pairing(&g, &f, &nf);
        let d = dual_norm(&f, &g).unwrap();
        assert!((lhs - d * d).abs() <= 1e-8 * lhs.abs());
        let d3 = dual_norm(&f.scaled(-3.0), &g).unwrap();
        assert!((d3 - 3.0 * d).abs() <= 1e-12 * d);
    }
    assert_eq!(dual_norm(&FieldPair::zeros(&g), &g).unwrap(), 0.0);
}

#[test]
fn energy_of_constant_fields() {
    let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
    let spec = PotentialSpec::regular();
    let zero = State::from_nodal(&g, vec![0.0; g.n_bulk()], vec![0.0; g.n_bulk()], 0.0);
    assert!((free_energy(&zero, &spec, &g, false).unwrap() - 1.5).abs() < 1e-14);
    for c in [-1.0, 1.0] {
        let s = State::from_nodal(&g, vec![c; g.n_bulk()], vec![2.0; g.n_bulk()], 0.0);
        assert!(free_energy(&s, &spec, &g, false).unwrap().abs() < 1e-15);
        let coupled = free_energy(&s, &spec, &g, true).unwrap();
        assert!((coupled + 2.0 * c * 6.0).abs() < 1e-13);
    }
}

#[test]
fn relaxation_metrics_decay_after_the_transient() {
    let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
    let spec = PotentialSpec::regular();
    let rho0 = FieldPair::from_nodal(&g, g.sample(|x, y| 0.8 + 0.05 * (PI * x).cos() * (PI * y).cos()));
    let traj = simulate(&rho0, &Schedule::zero(&g), &SolverParams::with_dt(0.01), &spec, &g, 3.0).unwrap();
    let at = |k: usize| stationarity_metrics(&traj.states[k - 1..=k], 0.01, &g, &spec).unwrap();
    let (a, b, c) = (at(5), at(10), at(20));
    assert!(b.grad_mu_norm < a.grad_mu_norm && c.grad_mu_norm < b.grad_mu_norm);
    assert!(b.mu_std < a.mu_std && c.mu_std < b.mu_std);
    assert!(b.dual_dt_norm < a.dual_dt_norm && c.dual_dt_norm < b.dual_dt_norm);
}

#[test]
fn backward_difference_identity_has_the_expected_defect() {
    let g = build_channel_grid(2.0, 1.0, 16, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dt in [0.1, 0.01, 0.001] {
        let g0 = random_mean_free(&g, &mut rng);
        let g1 = random_mean_free(&g, &mut rng);
        let d = FieldPair::from_nodal(&g, g1.bulk.iter().zip(&g0.bulk).map(|(a, b)| (a - b) / dt).collect());
        let lhs = pairing(&g, &d, &solve_n(&g1, &g).unwrap());
        let n1 = dual_norm(&g1, &g).unwrap().powi(2);
        let n0 = dual_norm(&g0, &g).unwrap().powi(2);
        let defect = lhs - 0.5 * (n1 - n0) / dt;
        let want = 0.5 * dt * dual_norm(&d, &g).unwrap().powi(2);
        assert!((defect - want).abs() <= 1e-8 * (lhs.abs() + want), "dt = {dt}: {defect} vs {want}");
    }
}

#[test]
fn constant_datum_is_stationary_at_once() {
    let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
    let rep = run_longtime(
        &FieldPair::constant(&g, -0.2),
        &Velocity::zeros(&g),
        1.0,
        &SolverParams::default(),
        &PotentialSpec::regular(),
        &g,
        0.0,
        1e-10,
    )
    .unwrap();
    assert!(rep.converged);
    assert!(run_longtime(
        &FieldPair::constant(&g, 0.0),
        &Velocity::zeros(&g),
        0.0,
        &SolverParams::default(),
        &PotentialSpec::regular(),
        &g,
        1.0,
        1e-4
    )
    .is_err());
}

#[test]
fn obstacle_family_relaxes_with_bounded_overshoot() {
    let g = build_channel_grid(4.0, 1.0, 32, 9).unwrap();
    let spec = PotentialSpec::with_families(Family::Obstacle, Family::Obstacle);
    let rho0 = FieldPair::from_nodal(&g, g.sample(|x, y| 0.1 + 0.6 * (PI * x / 2.0).cos() * (1.0 + 0.3 * (PI * y).cos())));
    let ly = g.ly();
    let psi = g.sample(|x, y| 0.5 * (PI * x / 2.0).sin() * (PI * y / ly).sin().powi(2));
    let u0 = velocity_from_stream(&psi, &g).unwrap();
    let rep = run_longtime(&rho0, &u0, 1.0, &SolverParams::with_dt(0.01), &spec, &g, 20.0, 1e-4).unwrap();
    assert!(rep.converged, "{} {} {}", rep.grad_mu_norm, rep.mu_std, rep.dual_dt_norm);
    let peak = rep.final_state.rho.bulk.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    assert!(peak <= 1.0 + 10.0 * spec.eps, "{peak}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn n_is_symmetric(seed in any::<u64>()) {
        let g = build_channel_grid(2.0, 1.0, 12, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_mean_free(&g, &mut rng);
        let h = random_mean_free(&g, &mut rng);
        let a = pairing(&g, &f, &solve_n(&h, &g).unwrap());
        let b = pairing(&g, &h, &solve_n(&f, &g).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (a.abs() + b.abs()).max(1e-300));
    }

    #[test]
    fn metrics_ignore_a_constant_shift_of_mu(seed in any::<u64>(), c in -5.0f64..5.0) {
        let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
        let spec = PotentialSpec::regular();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho: Vec<f64> = (0..g.n_bulk()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mu: Vec<f64> = (0..g.n_bulk()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = State::from_nodal(&g, rho.clone(), mu.clone(), 0.0);
        let b = State::from_nodal(&g, rho, mu.iter().map(|v| v + c).collect(), 0.0);
        let ma = stationarity_metrics(&[a.clone(), a], 0.1, &g, &spec).unwrap();
        let mb = stationarity_metrics(&[b.clone(), b], 0.1, &g, &spec).unwrap();
        prop_assert!((ma.grad_mu_norm - mb.grad_mu_norm).abs() <= 1e-10 * (1.0 + ma.grad_mu_norm));
        prop_assert!((ma.mu_std - mb.mu_std).abs() <= 1e-10 * (1.0 + ma.mu_std));
    }
}
