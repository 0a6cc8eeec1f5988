//! Viscous runs at decreasing `tau` approach the pure run in the sup norm.

use convective_ch::experiments;

fn main() -> convective_ch::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/tausweep.toml").into());
    let out = experiments::run_path(&path)?;
    for line in &out.report {
        println!("{line}");
    }
    let rows = out.details["rows"].as_array().cloned().unwrap_or_default();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let rate = (a["c0_distance"].as_f64().unwrap() / b["c0_distance"].as_f64().unwrap()).log2()
            / (a["tau"].as_f64().unwrap() / b["tau"].as_f64().unwrap()).log2();
        println!("observed order between tau = {} and {}: {rate:.2}", a["tau"], b["tau"]);
    }
    Ok(())
}
