//! Drives the `lod` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use lod_core::experiments::report::{meta_path, read_csv, COLUMNS};

fn lod(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lod")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "seed = 5\nh_exponent = 4\ncoarse_exponents = [2, 3]\nm_values = [1, 2]\n";

#[test]
fn run_writes_csv_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), SMALL).unwrap();
    let out = lod(&["run", "--config", "exp.toml", "--output", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    let rows = read_csv(&text).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.is_ok() && r.wall_times == "-"));
    let meta = std::fs::read_to_string(meta_path(&dir.path().join("r.csv"))).unwrap();
    assert!(meta.contains("seed = 5") && meta.contains("version"));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), SMALL).unwrap();
    let out = lod(
        &["run", "--config", "exp.toml", "--m", "2", "--coarse-exponents", "2", "--method", "petrov_galerkin", "--strategy", "cascade", "--seed", "9"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = read_csv(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].m, rows[0].coarse_h), (2, 0.25));
    assert_eq!((rows[0].method.as_str(), rows[0].strategy.as_str()), ("petrov_galerkin", "cascade:2"));
}

#[test]
fn row_errors_give_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), format!("{SMALL}problem = \"random\"\nmodel = \"kacanov\"\n")).unwrap();
    let out = lod(&["run", "--config", "exp.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rows = read_csv(&stdout(&out)).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.status.starts_with("error:")));
}

#[test]
fn invalid_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "h_exponent = 4\n").unwrap();
    assert_eq!(lod(&["run", "--config", "bad.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(lod(&["probe"], dir.path()).status.code(), Some(1));
    assert_eq!(lod(&["mesh", "--divisions", "3"], dir.path()).status.code(), Some(1));
}

#[test]
fn mesh_dump_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = lod(&["mesh", "--divisions", "4"], dir.path());
    let b = lod(&["mesh", "--divisions", "4"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "divisions 4");
    assert_eq!(lines[1], "nodes 25");
    assert_eq!(lines[27], "elements 32");
    assert_eq!(lines.len(), 2 + 25 + 1 + 32);
}

#[test]
fn probe_decay_and_indicator_tables() {
    let dir = tempfile::tempdir().unwrap();
    let probe = stdout(&lod(&["probe", "--seed", "1", "--samples", "500"], dir.path()));
    let lines: Vec<&str> = probe.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("periodic_f1,500,10,") && lines[1].ends_with(",true"));

    let decay = stdout(&lod(
        &["decay", "--seed", "1", "--h-exponent", "4", "--coarse-exponent", "2", "--max-layers", "3", "--samples", "2"],
        dir.path(),
    ));
    assert_eq!(decay.lines().next(), Some("sample,m,gap"));
    assert_eq!(decay.lines().count(), 1 + 2 * 2);

    let args = ["indicator", "--seed", "1", "--h-exponent", "4", "--coarse-exponent", "2", "--m", "1", "--corrector-cache", "c.bin"];
    let first = lod(&args, dir.path());
    assert_eq!(first.status.code(), Some(0));
    assert!(dir.path().join("c.bin").exists());
    let second = lod(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);
    let table = stdout(&first);
    assert_eq!(table.lines().next(), Some("element,x,y,indicator"));
    assert_eq!(table.lines().count(), 1 + 32);
}
