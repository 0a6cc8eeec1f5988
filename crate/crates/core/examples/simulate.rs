//! Forward simulation driven by a TOML config, then a look at the artifacts.
//!
//! ```bash
//! cargo run --release --example simulate [path/to/config.toml]
//! ```

use convective_ch::{experiments, io};

fn main() -> convective_ch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/simulate.toml").into());
    let out = experiments::run_path(&path)?;
    for line in &out.report {
        println!("{line}");
    }

    let dump = io::read_dump(out.output_dir.join("rho_final.bin"))?;
    let h = dump.header;
    let (lo, hi) = dump
        .bulk
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), v| (l.min(*v), u.max(*v)));
    println!("final rho at t = {}: {}x{} nodes, range [{lo:.4}, {hi:.4}]", h.t, h.nx, h.ny);

    let mut rdr = csv::Reader::from_path(out.output_dir.join("diagnostics.csv")).map_err(std::io::Error::other)?;
    let rows = rdr.records().count();
    println!("diagnostics.csv: {rows} rows");
    println!("checks passed: {}", out.passed);
    Ok(())
}
