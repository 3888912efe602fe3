use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nmon_cli::config::{CircuitInput, Format, Task};
use nmon_cli::parse_config;

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn nmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmon")).args(args).output().expect("binary runs")
}

fn nmon_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmon"))
        .args(args)
        .env("NMON_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, text).unwrap();
    path
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GRID_2X2: &str = r#"
task = "phase-diagram"
[circuit]
n = 2
m = 3
beta = 75
eta = 15
[phase_diagram]
beta = [60.0, 75.0]
eta = [10.0, 15.0]
"#;

#[test]
fn every_preset_parses() {
    let mut names: Vec<PathBuf> = fs::read_dir(presets()).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for path in names {
        let text = fs::read_to_string(&path).unwrap();
        let c = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c, "{}", path.display());
    }
}

#[test]
fn spectrum_preset_parameters() {
    let c = parse_config(&fs::read_to_string(presets().join("fig2.conf")).unwrap()).unwrap();
    assert_eq!(c.task, Task::Spectrum);
    assert_eq!(c.circuit.input, CircuitInput::NMon { n: 2, m: 3, ej_n: 75.0, ej_m: 15.0, ec: 1.0 });
    assert_eq!(c.analysis.rescale_omega01, Some(6.08));
    assert_eq!((c.circuit.kappa, c.circuit.ng, c.circuit.phi_ext), (0.5, 0.0, 0.0));
}

#[test]
fn kappa_out_of_range_names_key() {
    let err = parse_config(&GRID_2X2.replace("eta = 15\n", "eta = 15\nkappa = 1.5\n")).unwrap_err();
    assert_eq!(err.path, "circuit.kappa");
    assert!(err.to_string().contains("kappa"));
}

#[test]
fn spectrum_preset_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig2");
    ok(&nmon(&["spectrum", "--config", s(&presets().join("fig2.conf")), "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "level,energy_ghz,parity");
    assert_eq!(lines.len(), 9);
    let m = manifest(&out);
    assert_eq!(m["task"], "spectrum");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["cutoffs"].as_array().is_some_and(|c| !c.is_empty()));
    let code = &m["results"]["code_space"];
    assert_eq!((code["i1"].as_u64(), code["i2"].as_u64()), (Some(3), Some(6)));
    assert!((code["omega01_ghz"].as_f64().unwrap() - 6.08).abs() < 1e-9);
    for (key, want) in [("ej_n", 4.5), ("ej_m", 0.9), ("ec", 0.06)] {
        let got = m["circuit"][key].as_f64().unwrap();
        assert!((got / want - 1.0).abs() < 0.02, "{key} = {got}");
    }
}

#[test]
fn two_by_two_phase_diagram() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GRID_2X2);
    let out = tmp.path().join("pd");
    ok(&nmon(&["phase-diagram", "--config", s(&cfg), "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("phase_diagram.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,eta,alpha_r,me_charge_01,me_flux_01,omega01_over_ec,i1,i2,converged");
    assert_eq!(lines.len(), 5);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn rabi_preset_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig8");
    ok(&nmon(&["rabi", "--config", s(&presets().join("fig8.conf")), "--out", s(&out), "--set", "drive.duration_periods=2"]));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t_ns,pop_0,pop_1,pop_2,pop_3,pop_4,pop_5,pop_6,pop_7,norm");
    let m = manifest(&out);
    assert!(m["results"]["max_norm_drift"].as_f64().unwrap() < 1e-6);
    assert_eq!(m["results"]["target_level"], 3);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GRID_2X2);
    let out = tmp.path().join("pd");
    ok(&nmon_env(&["phase-diagram", "--config", s(&cfg), "--out", s(&out)], "1"));
    let first = read_dir(&out);
    ok(&nmon_env(&["phase-diagram", "--config", s(&cfg), "--out", s(&out)], "3"));
    assert_eq!(first, read_dir(&out));
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("me");
    let cfg = write_config(tmp.path(), &GRID_2X2.replace("phase-diagram", "matrix-elements"));
    ok(&nmon(&["matrix-elements", "--config", s(&cfg), "--out", s(&out), "--set", "circuit.kappa=0.3"]));
    let first = read_dir(&out);
    fs::remove_file(&cfg).unwrap();
    let saved = tmp.path().join("manifest.json");
    fs::copy(out.join("manifest.json"), &saved).unwrap();
    ok(&nmon(&["run", "--manifest", s(&saved)]));
    assert_eq!(first, read_dir(&out));
    assert_eq!(manifest(&out)["resolved"]["circuit"]["kappa"], 0.3);
}

#[test]
fn matrix_element_table_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &GRID_2X2.replace("phase-diagram", "matrix-elements"));
    let out = tmp.path().join("me");
    ok(&nmon(&["run", "--config", s(&cfg), "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("me_table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "channel,i,j,abs_value,normalized");
    assert_eq!(lines.len(), 1 + 2 * 64);
    assert!(lines[1].starts_with("charge,0,0,"));
    assert!(lines[65].starts_with("flux,0,0,"));
}

#[test]
fn flags_override_file() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{GRID_2X2}[output]\nformat = \"csv\"\ndir = \"{}\"\n", s(&tmp.path().join("ignored")));
    let cfg = write_config(tmp.path(), &text.replace("phase-diagram", "spectrum"));
    let out = tmp.path().join("json");
    ok(&nmon(&["spectrum", "--config", s(&cfg), "--out", s(&out), "--format", "json", "--set", "analysis.levels=10"]));
    assert!(!tmp.path().join("ignored").exists());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(v["columns"], serde_json::json!(["level", "energy_ghz", "parity"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 10);
    let resolved = parse_config(manifest(&out)["config"].as_str().unwrap()).unwrap();
    assert_eq!(resolved.output.format, Format::Json);
}

#[test]
fn input_errors_exit_one_with_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &GRID_2X2.replace("eta = 15\n", "eta = 15\nkapa = 0.2\n"));
    let out = nmon(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "config");
    assert_eq!(rec["error"]["path"], "circuit.kapa");
    assert_eq!(rec["error"]["exit_code"], 1);

    let missing = nmon(&["spectrum", "--config", s(&tmp.path().join("absent.conf"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    // Without a junction coupling the sectors, no low level couples to the ground state.
    let tmp = tempfile::tempdir().unwrap();
    let text = "task = \"spectrum\"\n[circuit]\nn = 2\nm = 3\nbeta = 75\neta = 0\n[analysis]\nlevels = 3\nl_max = 3\n";
    let cfg = write_config(tmp.path(), text);
    let dir = tmp.path().join("fail");
    let out = nmon(&["spectrum", "--config", s(&cfg), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let rec: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["error"]["kind"], "numerical");
}

#[test]
fn bad_thread_count_rejected() {
    let out = nmon_env(&["check", "--config", s(&presets().join("fig2.conf"))], "zero");
    assert_eq!(out.status.code(), Some(1));
}
