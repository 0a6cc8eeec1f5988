use std::process::ExitCode;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let path = match (args.next(), args.next()) {
        (Some(p), None) if p != "-h" && p != "--help" => p,
        _ => {
            eprintln!("usage: convective-ch <config.toml>");
            return ExitCode::from(2);
        }
    };
    match convective_ch::experiments::run_path(&path) {
        Ok(out) => {
            for line in &out.report {
                println!("{line}");
            }
            for c in &out.checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                println!("{mark} {}: {:.6e} (limit {:.6e})", c.name, c.value, c.limit);
            }
            println!("artifacts in {}", out.output_dir.display());
            if out.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
