//! Adjoint gradient against central finite differences along random
//! divergence-free directions.

use convective_ch::experiments;

fn main() -> convective_ch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/gradcheck.toml").into());
    let out = experiments::run_path(&path)?;
    for line in &out.report {
        println!("{line}");
    }
    std::process::exit(if out.passed { 0 } else { 1 });
}
