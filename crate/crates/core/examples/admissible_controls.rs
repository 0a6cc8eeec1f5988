//! Projection onto the admissible controls: divergence-free, tangent to the
//! walls and capped pointwise in speed.

use convective_ch::control::{project_uad, random_divfree, ControlBox, LerayProjector};
use convective_ch::grid::{build_channel_grid, Velocity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> convective_ch::Result<()> {
    let g = build_channel_grid(2.0, 1.0, 32, 17)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // divergence-free field plus a gradient
    let base = random_divfree(&g, &mut rng);
    let (gx, gy) = g.gradient(&g.sample(|x, y| (std::f64::consts::PI * x).sin() * y * y));
    let u = base.combine(1.0, &Velocity::new(&g, gx, gy)?, 0.5);
    println!("input: max speed {:.4}, interior divergence {:.3e}", u.max_magnitude(), u.max_interior_divergence(&g));

    let leray = LerayProjector::new(&g)?.project(&u, &g)?;
    println!(
        "Leray: max speed {:.4}, wall-normal {:.3e}",
        leray.max_magnitude(),
        leray.max_wall_normal(&g)
    );

    for ubar in [1.0, 0.5, 0.2] {
        let cbox = ControlBox::uniform(&g, ubar);
        let p = project_uad(std::slice::from_ref(&u), &cbox, &g)?.remove(0);
        println!(
            "Ubar = {ubar}: max speed {:.4}, box violation {:.1e}, |u - Pu| = {:.4}",
            p.max_magnitude(),
            cbox.violation(&p),
            u.combine(1.0, &p, -1.0).norm(&g)
        );
    }
    Ok(())
}
