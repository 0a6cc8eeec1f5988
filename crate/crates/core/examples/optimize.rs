//! Optimal velocity control by projected gradients with a first-order
//! certificate. Pass `examples/configs/optimize_sweep.toml` for the
//! adapted-cost viscosity sweep.

use convective_ch::experiments;

fn main() -> convective_ch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/optimize.toml").into());
    let out = experiments::run_path(&path)?;
    for line in &out.report {
        println!("{line}");
    }
    for c in &out.checks {
        println!("[{}] {}", if c.passed { "ok" } else { "FAIL" }, c.name);
    }
    println!("iteration log: {}", out.output_dir.join("iterations.csv").display());
    Ok(())
}
