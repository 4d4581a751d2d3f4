use std::fs;
use std::process::Command;

use levelset::cli::{parse_config, run, RunManifest, EXIT_ERROR, EXIT_FLAGGED, EXIT_OK};

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const HARMONIC_DERIVS: &str = r#"
experiment = "entropy-derivs"
seed = 5

[model]
kind = "harmonic"
n = 4

[sampler]
n_steps = 10000
burn_in = 1000

[entropy]
vbar = [0.5]
max_order = 2
"#;

#[test]
fn entropy_derivs_on_harmonic_quartet() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(HARMONIC_DERIVS).unwrap(), dir.path(), 2).unwrap();
    assert_eq!(out.exit_code, EXIT_OK, "{:?}", out.manifest.warnings);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("entropy.csv")).unwrap());
    assert_eq!(rows[0][..4], ["vbar", "S", "dS1", "dS2"]);
    let ds1: f64 = rows[1][2].parse().unwrap();
    let ds2: f64 = rows[1][3].parse().unwrap();
    assert!((ds1 - 0.5).abs() < 1e-4 && (ds2 + 1.0).abs() < 1e-4);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash.len(), 64);
    assert!(manifest.tolerances.contains_key("epsilon"));
    assert!(manifest.files.iter().any(|f| f.name == "entropy.csv"));
}

#[test]
fn critical_scan_on_harmonic_finds_one_point() {
    let text = "experiment = \"critical-scan\"\nseed = 2\n[model]\nkind = \"harmonic\"\nn = 3\n[critical]\nrandom_seeds = 300\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 2).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("critical_points.json")).unwrap()).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 1);
    assert_eq!(json["points"][0]["morse_index"], 0);
}

#[test]
fn degenerate_levels_flag_the_run() {
    let text = "experiment = \"critical-scan\"\nseed = 2\n[model]\nkind = \"coupled-rotators\"\nn = 3\n[critical]\nrandom_seeds = 500\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 2).unwrap();
    assert_eq!(out.exit_code, EXIT_FLAGGED);
    assert!(out.manifest.warnings.iter().any(|w| w.contains("degenerate")));
}

#[test]
fn khinchin_uniform_reports_one_twelfth() {
    let text = "experiment = \"khinchin\"\nseed = 4\n[khinchin]\nladder = [16, 64]\ntrials = 50000\n\
                [khinchin.base]\nkind = \"uniform\"\nlo = -0.5\nhi = 0.5\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 3).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("moments.csv")).unwrap());
    assert_eq!(rows[0], ["N", "B", "C", "D", "K", "NB", "N2C", "N3K"]);
    for r in &rows[1..] {
        let nb: f64 = r[5].parse().unwrap();
        assert!((nb - 1.0 / 12.0).abs() < 0.03 / 12.0);
    }
    assert!(dir.path().join("moments.json").exists());
}

#[test]
fn legendre_of_harmonic_limit() {
    let text = "experiment = \"legendre\"\nseed = 1\n[model]\nkind = \"harmonic\"\nn = 4\n\
                [legendre]\nsource = \"harmonic-limit\"\nvbar_min = 0.2\nvbar_max = 2.0\npoints = 2000\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 1).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("legendre.csv")).unwrap());
    assert_eq!(rows[0], ["beta", "f", "F"]);
    for r in &rows[1..] {
        let beta: f64 = r[0].parse().unwrap();
        let f: f64 = r[1].parse().unwrap();
        if (0.5..=2.0).contains(&beta) {
            assert!((f - 0.5 * (2.0 * std::f64::consts::PI / beta).ln()).abs() < 1e-3);
        }
    }
    assert!(out.manifest.tolerances["double_conjugation_max_error"] < 1e-6);
}

#[test]
fn oracle_compare_on_rotator_pair() {
    let text = "experiment = \"oracle-compare\"\nseed = 8\n[model]\nkind = \"coupled-rotators\"\nn = 2\n\
                [sampler]\nn_steps = 40000\nburn_in = 4000\nn_chains = 4\n\
                [entropy]\nvbar = [0.5]\nmax_order = 2\n\
                [grid]\npoints_per_axis = 2000\nbins = 6000\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 4).unwrap();
    assert_eq!(out.exit_code, EXIT_OK, "{:?} {:?}", out.manifest.warnings, out.manifest.error);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("oracle_compare.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let z: f64 = r[6].parse().unwrap();
        assert!(z.abs() < 3.0);
    }
}

#[test]
fn module_errors_exit_one_with_manifest() {
    // v̄ beyond the rotator energy range: no shell to sample
    let text = "experiment = \"entropy-derivs\"\nseed = 1\n[model]\nkind = \"coupled-rotators\"\nn = 2\n\
                [entropy]\nvbar = [5.0]\n";
    let dir = tempfile::tempdir().unwrap();
    let out = run(&parse_config(text).unwrap(), dir.path(), 1).unwrap();
    assert_eq!(out.exit_code, EXIT_ERROR);
    assert!(out.manifest.error.is_some());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let cfg = parse_config(HARMONIC_DERIVS).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&cfg, a.path(), 1).unwrap();
    let rb = run(&cfg, b.path(), 8).unwrap();
    assert_eq!(ra.manifest.files, rb.manifest.files);
    for f in &ra.manifest.files {
        assert_eq!(fs::read(a.path().join(&f.name)).unwrap(), fs::read(b.path().join(&f.name)).unwrap());
    }
}

#[test]
fn binary_honours_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, HARMONIC_DERIVS).unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_levelset"))
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--seed", "99", "--threads", "2"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 99);
    assert_eq!(manifest.threads, 2);

    fs::write(&cfg_path, "experiment = \"entropy-derivs\"\nseed = 1\n[nonsense]\n").unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_levelset"))
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 3"));
}
