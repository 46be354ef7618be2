use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MODEL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/bering.json");

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsem-sheaf"))
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, noise: &str) -> String {
    let data = dir.join(format!("sim{noise}.csv"));
    let out = run(&[
        "simulate",
        "--model",
        MODEL,
        "--steps",
        "12",
        "--noise",
        noise,
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    data.to_str().unwrap().to_string()
}

#[test]
fn noiseless_simulation_checks_as_a_section() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "0");
    let report = dir.path().join("check.json");
    let out = run(&[
        "check",
        "--model",
        MODEL,
        "--data",
        &data,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = json(&report);
    assert_eq!(r["ok"], Value::Bool(true));
    assert!(r["radius"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn fitted_assignment_reproduces_its_radius() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "0.1");
    let report = dir.path().join("fit.json");
    let assignment = dir.path().join("assignment.json");
    let out = run(&[
        "fit",
        "--model",
        MODEL,
        "--data",
        &data,
        "--free-paths",
        "--out",
        report.to_str().unwrap(),
        "--assignment-out",
        assignment.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fit = json(&report);
    assert_eq!(fit["coefficients"].as_array().unwrap().len(), 8);
    let radius = fit["radius"].as_f64().unwrap();
    assert!(radius > 0.0);
    let check = dir.path().join("check.json");
    let out = run(&[
        "check",
        "--model",
        MODEL,
        "--data",
        &data,
        "--free-paths",
        "--assignment",
        assignment.to_str().unwrap(),
        "--out",
        check.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "radius above the default tolerance is not a section"
    );
    let again = json(&check)["radius"].as_f64().unwrap();
    assert!((again - radius).abs() <= 1e-9, "{again} vs {radius}");
}

#[test]
fn subsystem_lattice_lists_sources_and_whole_model() {
    let out = run(&["subsystems", "--model", MODEL]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sets: Vec<Vec<String>> = serde_json::from_value(r["sets"].clone()).unwrap();
    assert!(sets.contains(&vec!["SeaIce".to_string()]));
    assert!(sets.contains(&vec!["Spawners".to_string()]));
    assert!(sets.iter().any(|s| s.len() == 8));
    assert!(!sets.contains(&vec!["Krill".to_string()]));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["fit", "--model", MODEL]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_model_file_fails() {
    let out = run(&["subsystems", "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn seeded_runs_are_deterministic() {
    let a = run(&[
        "simulate", "--model", MODEL, "--steps", "8", "--noise", "0.5", "--seed", "42",
    ]);
    let b = run(&[
        "simulate", "--model", MODEL, "--steps", "8", "--noise", "0.5", "--seed", "42",
    ]);
    let c = run(&[
        "simulate", "--model", MODEL, "--steps", "8", "--noise", "0.5", "--seed", "43",
    ]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn prediction_extends_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "0");
    let out = run(&[
        "predict",
        "--model",
        MODEL,
        "--data",
        &data,
        "--horizon",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .collect();
    assert_eq!(rows.len(), 14);
    let longer = run(&[
        "simulate", "--model", MODEL, "--steps", "14", "--noise", "0", "--seed", "3",
    ]);
    let want: Vec<String> = String::from_utf8(longer.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    for (got, want) in rows.iter().zip(&want).skip(12) {
        for (g, w) in got.split(',').zip(want.split(',')) {
            let (g, w): (f64, f64) = (g.parse().unwrap(), w.parse().unwrap());
            assert!((g - w).abs() <= 1e-6 * (1.0 + w.abs()), "{got} vs {want}");
        }
    }
}

fn punch_holes(csv: &str, holes: &[(usize, usize)]) -> String {
    csv.lines()
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line
                .split(',')
                .enumerate()
                .map(|(c, x)| if holes.contains(&(i, c)) { "" } else { x })
                .collect();
            cells.join(",") + "\n"
        })
        .collect()
}

fn rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn imputation_restores_noiseless_entries() {
    let dir = tempfile::tempdir().unwrap();
    let full = std::fs::read_to_string(simulate(dir.path(), "0")).unwrap();
    // (csv line, column): line 0 is the header, column 0 is time.
    let holes = [(4, 3), (7, 5), (9, 2), (6, 7)];
    let gappy = dir.path().join("gappy.csv");
    std::fs::write(&gappy, punch_holes(&full, &holes)).unwrap();
    let out = run(&[
        "impute",
        "--model",
        MODEL,
        "--data",
        gappy.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (got, want) = (rows(&String::from_utf8(out.stdout).unwrap()), rows(&full));
    for &(line, col) in &holes {
        let (g, w) = (got[line - 1][col], want[line - 1][col]);
        assert!(
            (g - w).abs() <= 1e-6 * (1.0 + w.abs()),
            "line {line} column {col}: {g} vs {w}"
        );
    }
}

#[test]
fn imputation_uses_fitted_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "0.05");
    let report = dir.path().join("fit.json");
    let out = run(&[
        "fit",
        "--model",
        MODEL,
        "--data",
        &data,
        "--free-paths",
        "--ar",
        "1",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        json(&report)["ar_coefficients"].as_array().unwrap().len(),
        8
    );
    let full = std::fs::read_to_string(&data).unwrap();
    let gappy = dir.path().join("gappy.csv");
    std::fs::write(&gappy, punch_holes(&full, &[(5, 4)])).unwrap();
    let args = [
        "impute",
        "--model",
        MODEL,
        "--data",
        gappy.to_str().unwrap(),
        "--coefficients",
        report.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let got = rows(&String::from_utf8(first.stdout.clone()).unwrap());
    assert!(got.iter().flatten().all(|x| x.is_finite()));
    let want = rows(&full)[4][4];
    assert!(
        (got[4][4] - want).abs() <= 0.5 * (1.0 + want.abs()),
        "{} vs {want}",
        got[4][4]
    );
    assert_eq!(run(&args).stdout, first.stdout);
}
