use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfrdd::io::{read_panel_csv, write_sim_csv};
use cfrdd::simulation::{simulate, DgpConfig};
use serde_json::Value;
use tempfile::TempDir;

fn cfrdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfrdd")).args(args).output().expect("run cfrdd")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Simulated panel written through the CLI.
fn simulated(dir: &TempDir, n: usize, seed: u64) -> PathBuf {
    let path = dir.path().join(format!("sim_{n}_{seed}.csv"));
    let out = cfrdd(&["simulate", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

fn estimate_json(input: &Path, extra: &[&str]) -> (Output, Option<Value>) {
    let mut args = vec!["estimate", "--input", input.to_str().unwrap(), "--cutoff", "60"];
    args.extend_from_slice(extra);
    let out = cfrdd(&args);
    let json = out.status.success().then(|| serde_json::from_str(&stdout(&out)).expect("json report"));
    (out, json)
}

#[test]
fn estimate_reports_one_record_per_cutoff() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 1000, 1);
    let (out, json) = estimate_json(&input, &["--cf-cutoff", "63,65,70"]);
    let json = json.unwrap_or_else(|| panic!("{}", stderr(&out)));
    let results = json["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for (rec, want) in results.iter().zip([63.0, 65.0, 70.0]) {
        assert_eq!(rec["cf_cutoff"].as_f64(), Some(want));
        assert!(rec["att"].as_f64().unwrap().is_finite());
        assert!(rec["att_bias_reduced"].as_f64().unwrap().is_finite());
        let mass = rec["mass_above"].as_f64().unwrap();
        assert!(mass > 0.0 && mass <= 1.0);
        assert!(rec.get("ci").is_none());
        assert!(rec.get("extrapolated_below_cutoff").is_none());
        assert!(!rec["t_curve"].as_array().unwrap().is_empty());
        assert!(!rec["f_cf"].as_array().unwrap().is_empty());
    }
    // mass above a higher cutoff never grows
    let masses: Vec<f64> = results.iter().map(|r| r["mass_above"].as_f64().unwrap()).collect();
    assert!(masses.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(json["config"]["bandwidth"]["source"], "rule");
    assert!(json["config"]["bandwidth"]["h"].as_f64().unwrap() > 0.0);
}

#[test]
fn explicit_bandwidths_override_rule() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 800, 2);
    let (out, json) = estimate_json(&input, &["--cf-cutoff", "63", "--h", "4", "--b", "3", "--bias-reduce", "false"]);
    let json = json.unwrap_or_else(|| panic!("{}", stderr(&out)));
    assert!(json["results"][0].get("att_bias_reduced").is_none());
    assert_eq!(json["config"]["bandwidth"]["h"].as_f64(), Some(4.0));
    assert_eq!(json["config"]["bandwidth"]["b"].as_f64(), Some(3.0));

    let clash = cfrdd(&[
        "estimate", "--input", input.to_str().unwrap(), "--cutoff", "60", "--cf-cutoff", "63", "--h", "4", "--b", "3",
        "--bw-constant", "1",
    ]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn csv_report_is_long_format_with_config_comments() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 600, 3);
    let out = cfrdd(&[
        "estimate", "--input", input.to_str().unwrap(), "--cutoff", "60", "--cf-cutoff", "63,66", "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next(), Some("cf_cutoff,series,r,value"));
    assert!(text.lines().any(|l| l.starts_with("# cutoff=")));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|l| l.starts_with("63,att,")));
    assert!(rows.iter().any(|l| l.starts_with("66,f_cf,")));
}

#[test]
fn extrapolation_below_cutoff_needs_the_flag() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 1000, 4);
    let (refused, _) = estimate_json(&input, &["--cf-cutoff", "59.5"]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("error-class=config"));

    // m̂₁ below the cutoff only reaches one bandwidth down
    let (out, json) = estimate_json(&input, &["--cf-cutoff", "59.5", "--allow-extrapolation-below"]);
    let json = json.unwrap_or_else(|| panic!("{}", stderr(&out)));
    assert_eq!(json["results"][0]["extrapolated_below_cutoff"], Value::Bool(true));
    assert!(!json["warnings"].as_array().unwrap().is_empty());

    let (far, _) = estimate_json(&input, &["--cf-cutoff", "50", "--allow-extrapolation-below"]);
    assert_eq!(far.status.code(), Some(4));
}

#[test]
fn bootstrap_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 500, 5);
    let run = |seed: &str| {
        cfrdd(&[
            "bootstrap", "--input", input.to_str().unwrap(), "--cutoff", "60", "--cf-cutoff", "63", "--B", "60",
            "--seed", seed, "--grid-points", "150",
        ])
    };
    let (a, b, c) = (run("11"), run("11"), run("12"));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let json: Value = serde_json::from_slice(&a.stdout).unwrap();
    let ci = &json["results"][0]["ci"];
    assert!(ci["lo"].as_f64().unwrap() <= ci["hi"].as_f64().unwrap());
    assert_eq!(ci["method"], "basic");
    assert_eq!(ci["B"], 60);

    let too_few = run_with(&input, &["--B", "10"]);
    assert_eq!(too_few.status.code(), Some(2));
}

fn run_with(input: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["bootstrap", "--input", input.to_str().unwrap(), "--cutoff", "60", "--cf-cutoff", "63"];
    args.extend_from_slice(extra);
    cfrdd(&args)
}

#[test]
fn mc_table_is_byte_identical_across_runs() {
    let args = [
        "mc-table", "--table", "bias", "--n", "400", "--reps", "4", "--seed", "7", "--oracle-draws", "1000000",
        "--grid-points", "120", "--format", "csv",
    ];
    let (a, b) = (cfrdd(&args), cfrdd(&args));
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    // 3 constants × 3 exponents × 2 variants
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 1 + 18, "{text}");
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();

    let missing = dir.path().join("missing.csv");
    let (out, _) = estimate_json(&missing, &["--cf-cutoff", "63"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("error-class=data"));

    let malformed = dir.path().join("bad.csv");
    std::fs::write(&malformed, "unit_id,z,r0,r1,y0,y1\na,1,50,52,1,2\nb,0,40,x,1,2\n").unwrap();
    let (out, _) = estimate_json(&malformed, &["--cf-cutoff", "63"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("row 2"), "{}", stderr(&out));

    let input = simulated(&dir, 600, 6);
    let (out, _) = estimate_json(&input, &["--cf-cutoff", "200"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("error-class=estimation"));

    let out = cfrdd(&["estimate", "--cutoff", "60", "--cf-cutoff", "63", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let input = simulated(&dir, 800, 8);
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, format!("# estimate settings\ninput={}\ncutoff=60\ncf-cutoff=63\ngrid-points=150\n", input.display()))
        .unwrap();
    let from_file = cfrdd(&["--config", conf.to_str().unwrap(), "estimate"]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    let overridden = cfrdd(&["--config", conf.to_str().unwrap(), "estimate", "--cf-cutoff", "65"]);
    assert!(overridden.status.success(), "{}", stderr(&overridden));
    let a: Value = serde_json::from_slice(&from_file.stdout).unwrap();
    let b: Value = serde_json::from_slice(&overridden.stdout).unwrap();
    assert_eq!(a["results"][0]["cf_cutoff"].as_f64(), Some(63.0));
    assert_eq!(b["results"][0]["cf_cutoff"].as_f64(), Some(65.0));
}

#[test]
fn simulated_csv_round_trips_at_scale() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(&DgpConfig { n: 10_000, seed: 9, ..Default::default() }).unwrap();
    let path = dir.path().join("big.csv");
    write_sim_csv(&sim, &path).unwrap();
    let back = read_panel_csv(&path).unwrap();
    let orig = sim.observable();
    assert_eq!(back.len(), 10_000);
    for (x, y) in back.units().iter().zip(orig.units()) {
        assert_eq!(back.id(x), orig.id(y));
        assert_eq!((x.z, x.r0, x.r1, x.y0, x.y1), (y.z, y.r0, y.r1, y.y0, y.y1));
    }
}

#[test]
fn negative_running_values_translate_the_estimate() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(&DgpConfig { n: 800, seed: 10, ..Default::default() }).unwrap();
    let base = sim.observable();
    let moved = base.map_units(|u| cfrdd::Unit { r0: u.r0 - 100.0, r1: u.r1 - 100.0, ..*u }).unwrap();
    let (a_path, b_path) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    cfrdd::io::write_panel_csv(base, &a_path).unwrap();
    cfrdd::io::write_panel_csv(&moved, &b_path).unwrap();

    let (out, a) = estimate_json(&a_path, &["--cf-cutoff", "63"]);
    let a = a.unwrap_or_else(|| panic!("{}", stderr(&out)));
    let out = cfrdd(&["estimate", "--input", b_path.to_str().unwrap(), "--cutoff", "-40", "--cf-cutoff", "-37"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (x, y) = (a["results"][0]["att"].as_f64().unwrap(), b["results"][0]["att"].as_f64().unwrap());
    assert!((x - y).abs() < 1e-6, "{x} vs {y}");
}
