use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use biflow::experiment::config::ConfigMap;
use biflow::experiment::list_experiments;
use biflow::experiment::report::compare_golden;
use biflow::experiment::{load_config, run_experiment};

const REGISTRY: [&str; 14] = [
    "mode_e_invariant",
    "mode_l_reconstruction",
    "identity_3_7",
    "gauge_invariance",
    "superposition_4_3",
    "one_phase",
    "product_state_gap",
    "dbb_hybrid",
    "linear_combo",
    "spin_augmented_2d",
    "eisenhart_v0_reduction",
    "eisenhart_constant_v",
    "eisenhart_harmonic",
    "convergence_sweep",
];

fn biflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biflow")).args(args).output().expect("biflow runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_into(dir: &Path, experiment: &str, extra: &[&str]) -> Output {
    let mut args = vec!["--experiment", experiment, "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    biflow(&args)
}

#[test]
fn list_is_the_registry_in_stable_order() {
    let names: Vec<_> = list_experiments().iter().map(|e| e.name).collect();
    assert_eq!(names, REGISTRY);
    let (a, b) = (biflow(&["--list"]), biflow(&["--list"]));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let listed: Vec<String> = stdout(&a).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert_eq!(listed, REGISTRY);
    assert!(stdout(&a).lines().all(|l| l.split_whitespace().count() > 1), "every entry has a description");
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let o = biflow(&["--experiment", "no_such_thing"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown experiment"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "experiment = no_such_thing\n").unwrap();
    assert_eq!(biflow(&["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn malformed_configuration_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        "experiment = one_phase\ngrid.n = many\n",
        "experiment = one_phase\ngrid.nn = 10\n",
        "experiment = one_phase\nthis line has no equals sign\n",
        "experiment = one_phase\nstate.kind = plane_wave\nstate.kind = gaussian\n",
        "experiment = one_phase\nformat = xml\n",
    ]
    .iter()
    .enumerate()
    {
        let cfg = dir.path().join(format!("c{i}.cfg"));
        fs::write(&cfg, text).unwrap();
        let o = biflow(&["--config", cfg.to_str().unwrap(), "--out-dir", dir.path().join("out").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
    assert_eq!(biflow(&[]).status.code(), Some(2));
    assert_eq!(biflow(&["--experiment", "one_phase", "--set", "grid.n"]).status.code(), Some(2));
}

#[test]
fn io_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cfg");
    assert_eq!(biflow(&["--config", missing.to_str().unwrap()]).status.code(), Some(3));
    // an output directory below a regular file cannot be created
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let o = run_into(&file.join("sub"), "one_phase", &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn identity_run_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "identity_3_7", &["--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("identity_3_7 PASS"));
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let find = |section: &str, name: &str| rows.iter().find(|r| &r[0] == section && &r[1] == name).cloned();
    assert_eq!(&find("status", "pass").expect("status row")[0], "status");
    let wave = find("check", "residual_plane_wave").expect("plane wave check");
    assert!(wave[2].parse::<f64>().unwrap() < 1e-10);
    assert_eq!(&wave[4], "true");
    assert!(dir.path().join("manifest.txt").is_file());
    assert!(dir.path().join("timing.json").is_file());
}

#[test]
fn json_report_echoes_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "one_phase", &["--set", "state.k=2"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["experiment"], "one_phase");
    assert_eq!(doc["status"]["status"], "pass");
    assert_eq!(doc["config"]["state.k"], "2");
    assert!(doc["config"].get("out_dir").is_none());
    assert!(doc["checks"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn failing_checks_still_exit_zero() {
    // a nonlinear-phase state violates the one-phase criterion: an informative FAIL
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), "one_phase", &[
            "--set",
            "state.kind=gaussian_tanh_phase",
            "--set",
            "state.width=2",
            "--set",
            "state.a=0.7",
            "--set",
            "state.b=0.45",
            "--set",
            "state.sigma_s=1",
        ],);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("one_phase FAIL"), "{}", stdout(&o));
}

#[test]
fn golden_comparison_cases() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert_eq!(run_into(&a, "superposition_4_3", &["--format", "csv"]).status.code(), Some(0));
    assert!(compare_golden(&a, &a).unwrap().pass);

    // regenerated outputs match, through the CLI as well
    let o = run_into(&b, "superposition_4_3", &["--format", "csv", "--golden", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("golden: match"));

    // one perturbed cell
    let data = b.join("velocities.csv");
    let text = fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    let v: f64 = cells[1].parse().unwrap();
    cells[1] = format!("{:.11e}", v * (1.0 + 1e-9));
    lines[5] = cells.join(",");
    fs::write(&data, lines.join("\n") + "\n").unwrap();
    let out = compare_golden(&b, &a).unwrap();
    assert!(!out.pass);
    let msg = out.first_diff.unwrap();
    assert!(msg.contains("velocities.csv") && msg.contains("row 6") && msg.contains("column 2 (v1)"), "{msg}");

    // through the CLI, a mismatch exits with 1
    let c = root.path().join("c");
    fs::create_dir_all(&c).unwrap();
    fs::write(c.join("manifest.txt"), fs::read(a.join("manifest.txt")).unwrap()).unwrap();
    for name in fs::read_to_string(a.join("manifest.txt")).unwrap().lines() {
        fs::copy(b.join(name), c.join(name)).unwrap();
    }
    let o = run_into(&root.path().join("d"), "superposition_4_3", &["--format", "csv", "--golden", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("MISMATCH"));

    // a missing file names its path
    fs::remove_file(c.join("velocities.csv")).unwrap();
    let msg = compare_golden(&a, &c).unwrap().first_diff.unwrap();
    assert!(msg.contains("missing file") && msg.contains("velocities.csv"), "{msg}");
}

#[test]
fn library_runs_are_bitwise_repeatable() {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let mut set = ConfigMap::new();
        set.insert("out_dir".into(), root.path().join(k.to_string()).display().to_string());
        let cfg = load_config(Some("gauge_invariance"), "", &set).unwrap();
        run_experiment(&cfg).unwrap();
        outputs.push(cfg.out_dir);
    }
    for name in fs::read_to_string(outputs[0].join("manifest.txt")).unwrap().lines() {
        assert_eq!(fs::read(outputs[0].join(name)).unwrap(), fs::read(outputs[1].join(name)).unwrap(), "{name}");
    }
}
