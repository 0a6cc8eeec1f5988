//! Relaxation after a decaying stirring: the chemical potential becomes
//! constant and the state solves the stationary problem.
//!
//! Takes about a minute in release mode.

use convective_ch::experiments;

fn main() -> convective_ch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/longtime.toml").into());
    let out = experiments::run_path(&path)?;
    out.report.iter().for_each(|l| println!("{l}"));
    println!("limiting chemical potential: {}", out.details["mu_mean"]);
    for c in &out.checks {
        println!("{:<14} {:>10.3e} <= {:.1e}  {}", c.name, c.value, c.limit, c.passed);
    }
    Ok(())
}
