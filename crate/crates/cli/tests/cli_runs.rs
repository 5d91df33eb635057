use std::path::{Path, PathBuf};
use std::process::Command;

use calmort_core::dataset::write_csv;
use calmort_core::synth::{generate, SynthConfig};
use calmort_core::BasinId;
use sha2::{Digest, Sha256};

fn write_panel(dir: &Path, basins: &[BasinId], years: i32) -> PathBuf {
    let series: Vec<_> = basins
        .iter()
        .enumerate()
        .map(|(i, &b)| generate(&SynthConfig::realistic(40 + i as u64, years).with_basin(b).with_missing(0.01)).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_csv(&series, &mut buf).unwrap();
    let p = dir.join("panel.csv");
    std::fs::write(&p, buf).unwrap();
    p
}

fn calmort(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_calmort"))
        .args(args)
        .env_remove("CALMORT_DATA")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn validate_writes_report_and_hashed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast, BasinId::SanDiego], 2);
    let out = dir.path().join("out");
    let r = calmort(&["validate", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let m = manifest(&out);
    let outputs = m["outputs"].as_object().unwrap();
    assert_eq!(outputs.keys().collect::<Vec<_>>(), vec!["missingness.csv", "validation.json"]);
    for (name, e) in outputs {
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(e["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    assert!(m["inputs"]["panel.csv"]["sha256"].is_string());
    let missing = std::fs::read_to_string(out.join("missingness.csv")).unwrap();
    assert_eq!(missing.lines().count(), 1 + 2 * 10);
}

#[test]
fn bad_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast], 1);
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("SC,2000-13-45,1,2,3,4,,,,,,\n");
    std::fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    let r = calmort(&["validate", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["ok"], false);
    let r = calmort(&["movmed", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    let r = calmort(&["validate", "--data", s(&dir.path().join("absent.csv"))]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_with_usage_code() {
    assert_eq!(calmort(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(calmort(&["validate"]).status.code(), Some(2));
    assert_eq!(calmort(&["tsreg", "--table", "8", "--dry-run"]).status.code(), Some(2));
    assert_eq!(calmort(&["--jobs", "0", "predict-grid", "--dry-run"]).status.code(), Some(2));
    assert_eq!(calmort(&["--help"]).status.code(), Some(0));
}

#[test]
fn dry_run_prints_grid_identities() {
    let r = calmort(&["predict-grid", "--dry-run"]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("models per cell: 189"), "{text}");
    assert!(text.contains("13 years: 9828"), "{text}");
    assert!(text.contains("8 basins: 78624"), "{text}");
    let r = calmort(&["predict-grid", "--dry-run", "--basin", "SC", "--outcome", "hl75p"]);
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains(&format!("{} per basin", 189 * 12)), "{text}");
}

#[test]
fn env_var_supplies_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast], 1);
    let out = dir.path().join("out");
    let r = Command::new(env!("CARGO_BIN_EXE_calmort"))
        .args(["validate", "--out", s(&out)])
        .env("CALMORT_DATA", &data)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn config_file_wins_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast], 1);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "out = \"from_file\"\n[movmed]\nwindow = \"11-3\"\n").unwrap();
    let flag_out = dir.path().join("from_flag");
    let r = calmort(&["movmed", "--config", s(&cfg), "--data", s(&data), "--out", s(&flag_out), "--window", "21-5"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let err = String::from_utf8(r.stderr).unwrap();
    assert_eq!(err.matches("warning:").count(), 2, "{err}");
    assert!(!flag_out.exists());
    let m = manifest(&dir.path().join("from_file"));
    assert_eq!(m["config"]["options"]["window"]["width"], 11);
}

#[test]
fn movmed_outputs_are_deterministic_across_dirs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast, BasinId::SacramentoValley], 2);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(calmort(&["movmed", "--data", s(&data), "--out", s(&a), "--jobs", "1"]).status.code(), Some(0));
    assert_eq!(calmort(&["movmed", "--data", s(&data), "--out", s(&b), "--jobs", "3"]).status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    let pc = std::fs::read_to_string(a.join("partial_corr_SC.csv")).unwrap();
    assert_eq!(pc.lines().count(), 1 + 6);
    let dev = std::fs::read_to_string(a.join("movmed_SV.csv")).unwrap();
    assert!(dev.lines().next().unwrap().ends_with("dev_rhmax,tmax_spike"));
    assert_eq!(dev.lines().count(), 1 + 731);
}

#[test]
fn tsreg_table_two_has_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast], 3);
    let out = dir.path().join("out");
    let r = calmort(&[
        "tsreg", "--table", "2", "--data", s(&data), "--out", s(&out), "--dump-basis", "ozone",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("table2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[1].starts_with("0,yes,"));
    assert!(lines[10].starts_with("\"0,1,2,3,4,5,6\",yes,"));
    let basis = std::fs::read_to_string(out.join("basis_ozone.csv")).unwrap();
    assert_eq!(basis.lines().next().unwrap().split(',').count(), 2);
    let m = manifest(&out);
    assert_eq!(m["outputs"].as_object().unwrap().len(), 4);
}

#[test]
fn predict_grid_resumes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast], 7);
    let out = dir.path().join("out");
    let common = ["predict-grid", "--data", s(&data), "--out", s(&out), "--aq", "null,o3_0", "--met", "null", "--outcome", "ac75p", "--quiet"];
    let mut first = common.to_vec();
    first.extend(["--hold-out", "2001,2002"]);
    assert_eq!(calmort(&first).status.code(), Some(0));
    let r = calmort(&common);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("8 new results (4 resumed)"), "{text}");
    let rows = std::fs::read_to_string(out.join("grid_results.csv")).unwrap();
    // header plus 2 models x 6 hold-out years, 2000 skipped
    assert_eq!(rows.lines().count(), 1 + 12);
    assert!(!rows.lines().any(|l| l.contains(",2000,")));
    let rep_out = dir.path().join("rep");
    let results = out.join("grid_results.csv");
    let r = calmort(&["report", "--results", s(&results), "--out", s(&rep_out)]);
    assert_eq!(r.status.code(), Some(0));
    let best = std::fs::read_to_string(rep_out.join("report_best.csv")).unwrap();
    // the null level belongs to both pollutant groups
    assert_eq!(best.lines().count(), 1 + 2 * 6);
}

#[test]
fn meta_pools_estimates_file() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.csv");
    std::fs::write(&est, "label,theta,variance\na,0,1\nb,2,1\n").unwrap();
    let out = dir.path().join("out");
    let r = calmort(&["meta", "--estimates", s(&est), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0));
    let j: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("meta.json")).unwrap()).unwrap();
    assert!((j["theta_hat"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((j["sigma2"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    let r = calmort(&["meta", "--estimates", s(&est), "--out", s(&out), "--sigma2", "0"]);
    assert_eq!(r.status.code(), Some(0));
    std::fs::write(&est, "label,theta,variance\na,0,1\n").unwrap();
    assert_eq!(calmort(&["meta", "--estimates", s(&est), "--out", s(&out)]).status.code(), Some(3));
}

#[test]
fn dlnm_curves_pool_two_basins() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[BasinId::SouthCoast, BasinId::SanDiego], 7);
    let out = dir.path().join("out");
    let r = calmort(&["dlnm-curves", "--data", s(&data), "--out", s(&out), "--pollutant", "ozone", "--points", "11"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("dlnm_ac65p_ozone.csv")).unwrap();
    let pooled: Vec<&str> = csv.lines().filter(|l| l.starts_with("pooled,")).collect();
    assert!(pooled.len() >= 11);
    assert!(pooled.iter().any(|l| l.starts_with("pooled,50,0,0,1,1,1")), "{csv}");
    let j: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("dlnm_ac65p_ozone.json")).unwrap()).unwrap();
    assert_eq!(j["basins"].as_array().unwrap().len(), 2);
}
