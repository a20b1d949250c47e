use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vqi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

const FOUR_HOURS: &str = r#"{
  "seed": 7,
  "scan": {
    "fringe_period_s": 900,
    "runs": [{ "start": "2008-06-01T00:00:00Z", "duration_s": 14400 }]
  }
}"#;

/// Rates ten times higher than the default source, so that short windows
/// resolve the visibility well above threshold.
const BRIGHT_DAY: &str = r#"{
  "source": { "true_coincidence_rate": 305, "accidental_rate": 25 }
}"#;

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqi(&["simulate", "--config", "/nonexistent/c.json", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config not found"), "{}", stderr(&o));
}

#[test]
fn config_schema_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for bad in [
        r#"{ "sead": 1 }"#,
        r#"{ "source": { "visibility": 0.9 } }"#,
        r#"{ "metrology": { "r_ab_m": 1000, "sites": { "a": { "latitude_deg": 46, "longitude_deg": 6 }, "b": { "latitude_deg": 46, "longitude_deg": 6.2 } } } }"#,
        r#"{ "source": { "source_visibility": 1.5 } }"#,
        r#"{ "sweep": { "chi": { "points": 1 } } }"#,
        "not json",
    ] {
        let c = write_config(dir.path(), bad);
        let o = vqi(&["simulate", "--config", path(&c), "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", stderr(&o));
        assert!(stderr(&o).contains("invalid config"));
    }
}

#[test]
fn four_hour_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), FOUR_HOURS);
    let (a, b, other) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert!(vqi(&["simulate", "--config", path(&c), "--out", path(out)]).status.success());
    }
    assert!(vqi(&["simulate", "--config", path(&c), "--out", path(&other), "--seed", "8"]).status.success());
    let csv = fs::read_to_string(a.join("run_000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 241);
    assert!(csv.starts_with("start_s,wall_clock_iso8601,singles_a,singles_b,coincidences,scan_active\n"));
    assert_eq!(fs::read(a.join("run_000.csv")).unwrap(), fs::read(b.join("run_000.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_ne!(fs::read(a.join("run_000.csv")).unwrap(), fs::read(other.join("run_000.csv")).unwrap());

    let manifest = json(a.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["sidereal_epoch"], "2000-01-01T12:00:00Z");
    assert_eq!(json(other.join("manifest.json"))["seed"], 8);
}

#[test]
fn full_span_fit_recovers_the_raw_visibility() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), FOUR_HOURS);
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    assert!(vqi(&["simulate", "--config", path(&c), "--out", path(&sim)]).status.success());
    let run = sim.join("run_000.csv");
    let o = vqi(&["fit", "--config", path(&c), "--out", path(&fit), path(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fits = json(fit.join("fits.json"));
    let full = &fits["series"][0]["full_span"];
    let v = full["visibility"].as_f64().unwrap();
    let sigma = full["visibility_sigma"].as_f64().unwrap();
    assert!((v - 0.876).abs() < 3.0 * sigma, "{v} +- {sigma}");
    assert!((0.005..0.03).contains(&sigma));
    let net = fits["series"][0]["net_visibility"].as_f64().unwrap();
    assert!(net > v);
    let trace = fs::read_to_string(fit.join("run_000.trace.csv")).unwrap();
    assert!(trace.starts_with(
        "window_center_s,sidereal_phase_rad,visibility,visibility_sigma,mean,amplitude,phase_rad,above_threshold\n"
    ));
    // 1.5 fringes of 900 s stepped by one minute across four hours
    assert_eq!(trace.lines().count() - 1, 218);
    // one run covers a sixth of the day
    assert_eq!(json(fit.join("coverage.json"))["verdict"], false);
}

#[test]
fn fit_rejects_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "{}");
    let out = dir.path().join("out");
    let o = vqi(&["fit", "--config", path(&c), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("broken.csv");
    fs::write(
        &bad,
        "start_s,wall_clock_iso8601,singles_a,singles_b,coincidences,scan_active\n\
         0,2008-06-01T00:00:00.000Z,100,100,30,1\n\
         60,2008-06-01T00:01:00.000Z,100,100,lots,1\n",
    )
    .unwrap();
    let o = vqi(&["fit", "--config", path(&c), "--out", path(&out), path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("broken.csv") && err.contains("line 3"), "{err}");
}

#[test]
fn bounds_require_evidence_of_violation() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "{}");
    let out = dir.path().join("out");
    let o = vqi(&["scan", "--config", path(&c), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let coverage = dir.path().join("coverage.json");
    fs::write(
        &coverage,
        r#"{"resolution_s":300.0,"required_multiplicity":2,"min_multiplicity":1,"cells":[],
            "under_covered_cells":[5],"below_threshold":[],"verdict":false}"#,
    )
    .unwrap();
    for cmd in ["scan", "bound"] {
        let o = vqi(&[cmd, "--config", path(&c), "--out", path(&out), "--coverage", path(&coverage)]);
        assert_eq!(o.status.code(), Some(3));
        assert!(stderr(&o).contains("under-covered"));
    }
    let rejection = json(out.join("rejection.json"));
    assert_eq!(rejection["coverage"]["under_covered_cells"][0], 5);
    assert!(!out.join("chi_scan.csv").exists());
}

#[test]
fn waived_scan_reproduces_both_curves() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "{}");
    let out = dir.path().join("out");
    let o = vqi(&["scan", "--config", path(&c), "--out", path(&out), "--assume-violation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let chi = fs::read_to_string(out.join("chi_scan.csv")).unwrap();
    let mut lines = chi.lines();
    assert_eq!(lines.next(), Some("sweep_value,case_tag,beta_parallel_bound,vqi_over_c"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != 1)
                .map(|(_, x)| x.parse().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(rows.len(), 1801);
    let at90 = rows.iter().find(|r| r[0] == 90.0).unwrap();
    assert!((at90[2] / 54_000.0 - 1.0).abs() < 0.03);

    let summary = json(out.join("scan_summary.json"));
    assert_eq!(summary["evidence"]["kind"], "waived");
    assert_eq!(summary["geometry"]["alpha_deg"], 5.8);
    let first = summary["beta_scan"]["first"]["vqi_over_c"].as_f64().unwrap();
    assert!((first * 5.4e-6 - 1.0).abs() < 0.01);
    assert!(summary["beta_scan"]["last"]["vqi_over_c"].as_f64().unwrap() < 2.0);
}

#[test]
fn double_coverage_day_licenses_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), BRIGHT_DAY);
    let (sim, fit, out) = (dir.path().join("sim"), dir.path().join("fit"), dir.path().join("out"));
    assert!(vqi(&["simulate", "--config", path(&c), "--out", path(&sim)]).status.success());
    let mut runs: Vec<String> = fs::read_dir(&sim)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| p.to_str().unwrap().to_owned())
        .collect();
    runs.sort();
    assert_eq!(runs.len(), 4);
    let mut args = vec!["fit", "--config", path(&c), "--out", path(&fit)];
    args.extend(runs.iter().map(String::as_str));
    assert!(vqi(&args).status.success());
    let coverage = json(fit.join("coverage.json"));
    assert_eq!(coverage["verdict"], true, "{}", coverage["below_threshold"]);
    assert!(coverage["min_multiplicity"].as_u64().unwrap() >= 2);

    let cov = fit.join("coverage.json");
    let o = vqi(&["bound", "--config", path(&c), "--out", path(&out), "--coverage", path(&cov)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bound = json(out.join("bound.json"));
    assert_eq!(bound["evidence"]["verdict"], true);
    let worst = bound["report"]["worst"]["vqi_over_c"].as_f64().unwrap();
    assert!((worst / 9393.5 - 1.0).abs() < 0.01);

    // the last three runs alone leave part of the day seen only once
    let mut args = vec!["fit", "--config", path(&c), "--out", path(&out)];
    args.extend(runs[1..].iter().map(String::as_str));
    assert!(vqi(&args).status.success());
    let partial = json(out.join("coverage.json"));
    assert_eq!(partial["verdict"], false);
    assert!(!partial["under_covered_cells"].as_array().unwrap().is_empty());
}
