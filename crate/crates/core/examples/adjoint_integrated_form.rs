//! The pure adjoint march checked against its time-integrated form, and
//! the adjoint gradient against finite differences, at two step sizes.

use convective_ch::adjoint::{assemble_adjoint_data, check_time_integrated_form, AdjointScheme};
use convective_ch::control::{random_divfree, schedule_dot, ControlBox, ControlProblem, CostSpec, Targets};
use convective_ch::grid::{build_channel_grid, FieldPair, Velocity};
use convective_ch::potentials::PotentialSpec;
use convective_ch::state::SolverParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> convective_ch::Result<()> {
    let g = build_channel_grid(2.0, 1.0, 16, 9)?;
    let pi = std::f64::consts::PI;
    let rho0 = FieldPair::from_nodal(&g, g.sample(|x, y| 0.2 + 0.4 * (pi * x).cos() * (pi * y).cos()));
    let targets = Targets {
        terminal_bulk: g.sample(|x, y| 0.3 * (pi * x).sin() * (pi * y).cos()),
        ..Targets::constant(&g, 0.0)
    };
    let t_end = 0.2;
    for scheme in [AdjointScheme::Exact, AdjointScheme::Consistent] {
        println!("{scheme:?} scheme");
        for dt in [0.01, 0.005, 0.0025] {
            let prob = ControlProblem {
                g: &g,
                spec: PotentialSpec::regular(),
                params: SolverParams::with_dt(dt),
                rho0: rho0.clone(),
                cost: CostSpec {
                    beta3: 1.0,
                    beta4: 0.0,
                    beta5: 1.0,
                    beta6: 0.0,
                    beta7: 0.1,
                    targets: targets.clone(),
                },
                cbox: ControlBox::uniform(&g, 10.0),
                t_end,
                scheme,
            };
            let n = prob.steps();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let field = random_divfree(&g, &mut rng).scaled(0.5);
            let u: Vec<Velocity> = vec![field; n];
            let ev = prob.evaluate(&u, None)?;
            let d: Vec<Velocity> = (0..n).map(|_| random_divfree(&g, &mut rng)).collect();
            let a = schedule_dot(&g, dt, &ev.grad, &d);
            let f = prob.fd_directional(&u, &d, 1e-5)?;
            let data = assemble_adjoint_data(&ev.traj, &prob.cost, &prob.spec, &g)?;
            let r = check_time_integrated_form(&ev.adjoint, &data, &ev.traj.controls, &g)?;
            println!(
                "  dt = {dt:<7} gradient rel. error {:.3e}   integrated residual {:.4e} (elliptic {:.1e})",
                (a - f).abs() / f.abs(),
                r.evolution,
                r.elliptic
            );
        }
    }
    Ok(())
}
