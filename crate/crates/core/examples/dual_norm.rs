//! The inverse coupled Laplacian `N` and the dual norm it induces on
//! mean-free bulk/surface pairs.

use convective_ch::analysis::{dual_norm, generalized_mean, solve_n};
use convective_ch::grid::{build_channel_grid, FieldPair};

fn main() -> convective_ch::Result<()> {
    let g = build_channel_grid(2.0, 1.0, 32, 17)?;
    let pi = std::f64::consts::PI;

    // a pair with nonzero mean, then its mean-free part
    let raw = FieldPair::new(
        &g,
        g.sample(|x, y| (pi * x).cos() * (pi * y).sin() + 0.3),
        g.trace(&g.sample(|x, _| (2.0 * pi * x).sin() + 0.3)),
    )?;
    let m = generalized_mean(&raw, &g);
    let f = FieldPair::new(
        &g,
        raw.bulk.iter().map(|v| v - m).collect(),
        raw.bdry.iter().map(|v| v - m).collect(),
    )?;
    println!("generalized mean removed: {m:.6}");

    let n = solve_n(&f, &g)?;
    let pairing = g.bulk_dot(&f.bulk, &n.bulk) + g.bdry_dot(&f.bdry, &n.bdry);
    let norm = dual_norm(&f, &g)?;
    println!("<f, N f>   = {pairing:.12e}");
    println!("|f|_*^2    = {:.12e}", norm * norm);
    println!("mean of Nf = {:.3e}", generalized_mean(&n, &g));
    Ok(())
}
