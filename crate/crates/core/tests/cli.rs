use std::path::Path;
use std::process::Command;

use convective_ch::config::RunConfig;
use convective_ch::experiments;
use convective_ch::grid::{build_channel_grid, FieldPair};
use convective_ch::io::{decode, dump_bulk, dump_pair, read_dump, DumpKind, MAGIC};
use convective_ch::Error;
use proptest::prelude::*;

fn config_text(dir: &Path, extra: &str) -> String {
    format!(
        r#"
experiment = "simulate"
seed = 3
output_dir = "{}"

[grid]
Lx = 2.0
Ly = 1.0
nx = 12
ny = 7

[solver]
dt = 0.02

[initial]
kind = "random"
mean = 0.1
amplitude = 0.4

[velocity]
kind = "cells"
amplitude = 0.5

[run]
t_end = 0.2
dump_every = 5
{extra}
"#,
        dir.display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convective-ch"))
}

#[test]
fn dump_header_of_a_small_grid() {
    let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.bin");
    let field: Vec<f64> = (0..40).map(|k| k as f64 * 0.5 - 3.0).collect();
    dump_bulk(&g, &field, 1.25, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], &MAGIC);
    assert_eq!(bytes.len(), 52 + 8 * 40);
    let d = read_dump(&path).unwrap();
    assert_eq!(d.header.kind, DumpKind::Bulk);
    assert_eq!((d.header.nx, d.header.ny), (8, 5));
    assert_eq!((d.header.lx, d.header.ly, d.header.t), (2.0, 1.0, 1.25));
    assert_eq!(d.bulk, field);
    assert!(d.bdry.is_empty() && d.matches(&g) && d.pair().is_none());
}

#[test]
fn truncated_and_corrupted_dumps_are_rejected() {
    let g = build_channel_grid(2.0, 1.0, 8, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    dump_pair(&g, &FieldPair::constant(&g, 0.3), 0.0, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 10, 51, 52, bytes.len() - 1] {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    let mut longer = bytes;
    longer.push(0);
    assert!(matches!(decode(&longer), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_dumps_round_trip_bitwise(
        nx in 4usize..10,
        ny in 3usize..7,
        t in -1e3f64..1e3,
        seed in any::<u64>(),
    ) {
        let g = build_channel_grid(1.5, 0.75, nx, ny).unwrap();
        let mut s = seed | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            f64::from_bits(s >> 2)
        };
        let bulk: Vec<f64> = (0..g.n_bulk()).map(|_| next()).collect();
        let bdry: Vec<f64> = (0..g.n_bdry()).map(|_| next()).collect();
        let field = FieldPair { bulk, bdry };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        dump_pair(&g, &field, t, &path).unwrap();
        let d = read_dump(&path).unwrap();
        let back = d.pair().unwrap();
        prop_assert!(back.bulk.iter().zip(&field.bulk).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(back.bdry.iter().zip(&field.bdry).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(d.header.t.to_bits(), t.to_bits());
    }
}

#[test]
fn unknown_and_invalid_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = config_text(dir.path(), "bogus_key = 1.0");
    match RunConfig::from_toml(&unknown) {
        Err(Error::Config { key, reason }) => {
            assert!(key.contains("bogus_key") || reason.contains("bogus_key"), "{key}: {reason}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
    let negative = config_text(dir.path(), "").replace("t_end = 0.2", "t_end = -1.0");
    match RunConfig::from_toml(&negative) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "run.t_end"),
        other => panic!("expected a config error, got {other:?}"),
    }
    let bad_dt = config_text(dir.path(), "").replace("dt = 0.02", "dt = 0.0");
    let err = RunConfig::from_toml(&bad_dt).unwrap_err().to_string();
    assert!(err.contains("dt"), "{err}");
}

#[test]
fn constant_datum_run_keeps_mass_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    let text = config_text(dir.path(), "")
        .replace("kind = \"random\"", "kind = \"constant\"")
        .replace("kind = \"cells\"", "kind = \"zero\"");
    let cfg = RunConfig::from_toml(&text).unwrap();
    let out = experiments::run(&cfg).unwrap();
    assert!(out.passed);
    let mut rdr = csv::Reader::from_path(dir.path().join("diagnostics.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (im, ie) = (col("mass"), col("energy_noMu"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 11);
    let m0: f64 = rows[0][im].parse().unwrap();
    let e0: f64 = rows[0][ie].parse().unwrap();
    for r in &rows {
        assert!((r[im].parse::<f64>().unwrap() - m0).abs() < 1e-14);
        assert!((r[ie].parse::<f64>().unwrap() - e0).abs() < 1e-13);
    }
    let last = read_dump(dir.path().join("rho_final.bin")).unwrap();
    assert!(last.bulk.iter().all(|v| (v - 0.1).abs() < 1e-13));
    assert!(dir.path().join("rho_000005.bin").exists());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn echoed_config_reloads_to_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(&config_text(dir.path(), "")).unwrap();
    experiments::run(&cfg).unwrap();
    let echoed = RunConfig::load(dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let p = write_config(d.path(), "run.toml", &config_text(d.path(), ""));
        assert!(binary().arg(&p).output().unwrap().status.success());
    }
    for f in ["diagnostics.csv", "rho_final.bin", "mu_final.bin", "rho_000010.bin"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.toml", &config_text(&dir.path().join("ok"), ""));
    let out = binary().arg(&ok).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let strict = config_text(&dir.path().join("strict"), "mass_tol = 1e-300");
    let strict = write_config(dir.path(), "strict.toml", &strict);
    let out = binary().arg(&strict).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let bad = write_config(dir.path(), "bad.toml", "experiment = \"nope\"\n");
    assert_eq!(binary().arg(&bad).output().unwrap().status.code(), Some(2));
    assert_eq!(binary().arg(dir.path().join("missing.toml")).output().unwrap().status.code(), Some(2));
    assert_eq!(binary().output().unwrap().status.code(), Some(2));
}
