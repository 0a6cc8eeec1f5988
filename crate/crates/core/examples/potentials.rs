//! Yosida regularization of the three double-well families.
//!
//! Prints `beta_eps` next to the unregularized graph, and for the
//! logarithmic family the error against `2 atanh(r)` as `eps` shrinks.

use convective_ch::potentials::{eval_potential, yosida, Family, PotentialSpec, Side};

fn main() -> convective_ch::Result<()> {
    let fams = [Family::Regular, Family::Logarithmic, Family::Obstacle];
    println!("{:>6} {:>12} {:>12} {:>12}", "r", "regular", "logarithmic", "obstacle");
    for r in [-1.2, -0.99, -0.5, 0.0, 0.5, 0.99, 1.2] {
        let vals: Vec<f64> = fams
            .iter()
            .map(|f| yosida(&PotentialSpec::with_families(*f, *f), Side::Bulk, 1e-2, r))
            .collect::<Result<_, _>>()?;
        println!("{r:>6} {:>12.5} {:>12.5} {:>12.5}", vals[0], vals[1], vals[2]);
    }

    let log = PotentialSpec::with_families(Family::Logarithmic, Family::Logarithmic);
    println!("\nlogarithmic: max |beta_eps - 2 atanh| on [-0.95, 0.95]");
    for eps in [1e-2, 1e-3, 1e-4] {
        let err = (0..20)
            .map(|k| -0.95 + 1.9 * k as f64 / 19.0)
            .map(|r| Ok((yosida(&log, Side::Bulk, eps, r)? - 2.0 * f64::atanh(r)).abs()))
            .collect::<convective_ch::Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        println!("  eps = {eps:.0e}: {err:.3e}");
    }

    let reg = PotentialSpec::regular();
    println!("\nregular double well f(r) = (r^2 - 1)^2 / 4");
    for r in [-1.0, 0.0, 0.5, 1.0] {
        println!(
            "  r = {r:>4}: f = {:.4}, f' = {:.4}, f'' = {:.4}",
            eval_potential(&reg, Side::Bulk, r, 0)?,
            eval_potential(&reg, Side::Bulk, r, 1)?,
            eval_potential(&reg, Side::Bulk, r, 2)?
        );
    }
    Ok(())
}
