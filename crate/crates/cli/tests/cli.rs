use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const THREE_GROUPS: &str = r#"[
  {"label": "static", "n": 60000, "bulk_mean": 0, "bulk_sd": 2, "tail_u": -6,
   "tail_params": {"scale": 0.63, "shape": 0.1}, "tail_prob": 0.05, "ar_coeff": 0.5},
  {"label": "ramp", "n": 60000, "bulk_mean": -20, "bulk_sd": 6, "tail_u": -32,
   "tail_params": {"scale": 8.08, "shape": -0.3}, "tail_prob": 0.05, "ar_coeff": 0.5},
  {"label": "smooth", "n": 60000, "bulk_mean": -12, "bulk_sd": 5, "tail_u": -24,
   "tail_params": {"scale": 9.21, "shape": -0.45}, "tail_prob": 0.05, "ar_coeff": 0.5}
]"#;

const ONE_GROUP: &str = r#"[
  {"label": "ramp", "n": 2000, "bulk_mean": -20, "bulk_sd": 6, "tail_u": -32,
   "tail_params": {"scale": 8.08, "shape": -0.284}, "tail_prob": 0.3}
]"#;

fn nsevt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsevt"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, spec: &str, seed: u64) -> PathBuf {
    let spec_path = dir.join(format!("spec_{seed}.json"));
    fs::write(&spec_path, spec).unwrap();
    let out = dir.join(format!("trace_{seed}.csv"));
    let o = nsevt(&["simulate", p(&spec_path), "--seed", &seed.to_string(), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn simulate_writes_three_label_runs() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(dir.path(), THREE_GROUPS, 4);
    let text = fs::read_to_string(&trace).unwrap();
    let mut runs: Vec<String> = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let label = line.rsplit(',').next().unwrap().to_string();
        if runs.last() != Some(&label) {
            runs.push(label);
        }
    }
    assert_eq!(runs, ["static", "ramp", "smooth"]);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, ONE_GROUP).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (out, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        assert_eq!(nsevt(&["simulate", p(&spec), "--seed", seed, "--out", p(out)]).status.code(), Some(0));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn simulate_rejects_bad_specs() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    let out = dir.path().join("t.csv");
    fs::write(&spec, ONE_GROUP.replace("0.3}", "0.6}")).unwrap();
    let o = nsevt(&["simulate", p(&spec), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tail_prob"), "{}", stderr(&o));

    fs::write(&spec, "{not json").unwrap();
    assert_eq!(nsevt(&["simulate", p(&spec), "--out", p(&out)]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn analyze_three_segments_selects_change_point() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(dir.path(), THREE_GROUPS, 11);
    let out = dir.path().join("out");
    let o = nsevt(&["analyze", p(&trace), "--out-dir", p(&out), "--force-nonstationary"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("selected: change-point"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["selected_model"], "change-point");
    assert_eq!(report["deviance"]["reject_stationary"], true);
    assert_eq!(report["groups"].as_array().unwrap().len(), 3);

    let mrl = fs::read_to_string(out.join("mrl.csv")).unwrap();
    assert!(mrl.starts_with("group,u_dbm,r,mean_excess,n_exceed\n"));
    let stab = fs::read_to_string(out.join("stability_r8.csv")).unwrap();
    assert!(stab.starts_with("group,u_dbm,xi,sigma,sigma_star,n_exceed\n"));
    for g in ["static", "ramp", "smooth"] {
        for kind in ["pp", "qq"] {
            let text = fs::read_to_string(out.join(format!("{kind}_{g}.csv"))).unwrap();
            assert!(text.starts_with("empirical,model\n"));
            assert!(text.lines().count() > 10);
        }
    }
}

#[test]
fn analyze_rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(dir.path(), THREE_GROUPS, 12);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = nsevt(&["analyze", p(&trace), "--out-dir", p(out), "--force-nonstationary"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let report = fs::read_to_string(a.join("report.json")).unwrap();
    assert!(report.contains("\"generated_at\": \"2023-11-14T22:13:20Z\""));
}

#[test]
fn analyze_exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t_ms,power_dbm,group\n0,-50,a\n0,-51,a\n").unwrap();
    let o = nsevt(&["analyze", p(&bad), "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    assert_eq!(nsevt(&["analyze", p(&missing)]).status.code(), Some(2));

    let trace = simulate(dir.path(), THREE_GROUPS, 13);
    let o = nsevt(&[
        "analyze",
        p(&trace),
        "--out-dir",
        p(&dir.path().join("y")),
        "--force-nonstationary",
        "--u-grid",
        "-400:-300:10",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("static"), "{}", stderr(&o));

    let o = nsevt(&["analyze", p(&trace), "--alpha", "0.7", "--out-dir", p(&dir.path().join("z"))]);
    assert_eq!(o.status.code(), Some(2));
}

/// u* per run length recomputed from the emitted CSV: the first (largest)
/// threshold whose lower suffix of populated rows has at least five points
/// and R² >= r2_min for all three curves.
fn oracle_u_star(csv: &str, r2_min: f64) -> Vec<(usize, Option<String>)> {
    type Column = (usize, Vec<(String, [f64; 4])>);
    let mut columns: Vec<Column> = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let r: usize = f[1].parse().unwrap();
        if columns.last().map(|c| c.0) != Some(r) {
            columns.push((r, Vec::new()));
        }
        if f[2].is_empty() {
            continue;
        }
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        columns.last_mut().unwrap().1.push((f[0].to_string(), [num(0), num(2), num(3), num(5)]));
    }
    let r2 = |pts: &[[f64; 4]], j: usize| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[j]).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p[0] - mx) * (p[j] - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p[0] - mx).powi(2)).sum();
        let syy: f64 = pts.iter().map(|p| (p[j] - my).powi(2)).sum();
        if syy == 0.0 {
            1.0
        } else {
            sxy * sxy / (sxx * syy)
        }
    };
    columns
        .into_iter()
        .map(|(r, rows)| {
            let pts: Vec<[f64; 4]> = rows.iter().map(|x| x.1).collect();
            let u = (0..pts.len())
                .take_while(|&s| pts.len() - s >= 5)
                .find(|&s| (1..4).all(|j| r2(&pts[s..], j) >= r2_min))
                .map(|s| rows[s].0.clone());
            (r, u)
        })
        .collect()
}

#[test]
fn scan_matches_suffix_r2_oracle() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(dir.path(), THREE_GROUPS, 21);
    let out = dir.path().join("scan.csv");
    let o = nsevt(&[
        "scan",
        p(&trace),
        "--group",
        "ramp",
        "--u-grid",
        "-44:-26:25",
        "--r-list",
        "1,4,16",
        "--r2-min",
        "0.6",
        "--strict-r2",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "u_dbm,r,mean_excess,xi,sigma,sigma_star,n_exceed");
    assert_eq!(csv.lines().count(), 1 + 25 * 3);

    let printed = stdout(&o);
    let expected = oracle_u_star(&csv, 0.6);
    assert_eq!(expected.len(), 3);
    assert!(expected.iter().any(|(_, u)| u.is_some()), "fixture should have a linear region");
    for (r, u) in expected {
        let want = format!("r={r:<3} u_star={}", u.unwrap_or_else(|| "none".into()));
        assert!(printed.contains(&want), "missing `{want}` in\n{printed}");
    }
}

#[test]
fn scan_with_empty_tail_exits_3() {
    let dir = TempDir::new().unwrap();
    let trace = simulate(dir.path(), ONE_GROUP, 3);
    let o = nsevt(&["scan", p(&trace), "--u-grid", "-900:-800:10", "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("all"));
    let o = nsevt(&["scan", p(&trace), "--group", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diagnose_verdicts_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let spec = ONE_GROUP.replace("\"n\": 2000", "\"n\": 20000").replace("0.3}", "0.1}");
    let trace = simulate(dir.path(), &spec, 5);
    let out = dir.path().join("diag");
    let good = nsevt(&[
        "diagnose", p(&trace), "--u", "-32", "--scale", "8.08", "--shape", "-0.284", "--out-dir", p(&out),
    ]);
    assert_eq!(good.status.code(), Some(0), "{}", stderr(&good));
    assert!(stdout(&good).lines().any(|l| l == "validated"), "{}", stdout(&good));
    assert!(fs::read_to_string(out.join("pp_all.csv")).unwrap().starts_with("empirical,model\n"));
    assert!(out.join("qq_all.csv").exists());

    let bad = nsevt(&["diagnose", p(&trace), "--u", "-32", "--scale", "8.08", "--shape", "0.4", "--out-dir", p(&out)]);
    assert_eq!(bad.status.code(), Some(0));
    assert!(stdout(&bad).lines().any(|l| l == "not validated"));

    let missing = nsevt(&["diagnose", p(&trace), "--u", "-32", "--scale", "8.08"]);
    assert_eq!(missing.status.code(), Some(2));

    let empty = nsevt(&["diagnose", p(&trace), "--u", "-500", "--scale", "8.08", "--shape", "0.1", "--out-dir", p(&out)]);
    assert_eq!(empty.status.code(), Some(3));
}
