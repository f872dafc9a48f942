use nsevt_core::gpd::GpdParams;
use nsevt_core::pipeline::{
    analyze, analyze_csv, assemble_deviance, AnalysisReport, AnalyzeOptions, Competitor, Regime,
    sha256_digest, SelectedModel, GLOBAL_LABEL,
};
use nsevt_core::synth::{generate, SegmentSpec};
use serde_json::Value;

fn spec(label: &str, n: usize, mean: f64, sd: f64, tail_u: f64, scale: f64, shape: f64) -> SegmentSpec {
    SegmentSpec {
        label: label.into(),
        n,
        bulk_mean: mean,
        bulk_sd: sd,
        tail_u,
        tail_params: GpdParams::new(scale, shape).unwrap(),
        tail_prob: 0.05,
        ar_coeff: 0.5,
    }
}

fn three_regimes(n: usize) -> Vec<SegmentSpec> {
    vec![
        spec("static", n, 0.0, 2.0, -6.0, 0.63, 0.1),
        spec("ramp", n, -20.0, 6.0, -32.0, 8.08, -0.3),
        spec("smooth", n, -12.0, 5.0, -24.0, 9.21, -0.45),
    ]
}

fn forced(regime: Regime) -> AnalyzeOptions {
    AnalyzeOptions {
        force: Some(regime),
        ..AnalyzeOptions::default()
    }
}

fn digest() -> String {
    sha256_digest(b"fixture")
}

fn schema_validator() -> jsonschema::Validator {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

fn assert_schema_valid(report: &AnalysisReport) {
    let instance: Value = serde_json::from_str(&report.to_json()).unwrap();
    let validator = schema_validator();
    let errors: Vec<String> = validator
        .iter_errors(&instance)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

#[test]
fn report_arithmetic_matches_table() {
    let (total, dev) = assemble_deviance(&[-27.55, -55.25, -53.30], -1343.0, 0.01).unwrap();
    assert!((total - (-136.10)).abs() < 1e-9);
    assert!((dev.d - 2413.8).abs() < 1e-9);
    assert_eq!(dev.k, 4);
    assert!((dev.c_alpha - 13.2767).abs() < 1e-4);
    assert!(dev.reject_stationary);
    assert!(assemble_deviance(&[-1.0], -2.0, 0.01).is_err());
}

#[test]
fn three_regimes_select_change_point() {
    let trace = generate(&three_regimes(60_000), 31).unwrap();
    let analysis = analyze(&trace, &digest(), &forced(Regime::NonStationary)).unwrap();
    let r = &analysis.report;
    assert_eq!(r.regime, Regime::NonStationary);
    assert_eq!(r.selected_model, SelectedModel::ChangePoint);
    let dev = r.deviance.unwrap();
    assert!(dev.reject_stationary && dev.d > dev.c_alpha);
    assert_eq!(dev.k, 4);
    assert_eq!(r.complexity, Some(6));
    assert_eq!(r.likelihoods_nested, Some(true));
    let labels: Vec<&str> = r.groups.iter().map(|g| g.label.as_str()).collect();
    assert_eq!(labels, ["static", "ramp", "smooth"]);

    // shared run length across groups
    assert!(r.groups.iter().all(|g| g.gpd_fit.r == r.groups[0].gpd_fit.r));
    let total: f64 = r.groups.iter().map(|g| g.gpd_fit.loglik).sum();
    assert!((r.total_loglik.unwrap() - total).abs() < 1e-9);
    let comp = r.stationary_competitor.as_ref().unwrap();
    assert_eq!(comp.kind, Competitor::Pooled);
    assert!((dev.d - 2.0 * (total - comp.loglik)).abs() < 1e-6 * dev.d.abs().max(1.0));
    assert!(r.warnings.iter().any(|w| w.contains("forced")));
    assert_schema_valid(r);

    let names: Vec<&str> = analysis.files.iter().map(|f| f.0.as_str()).collect();
    for want in ["mrl.csv", "stability_r8.csv", "pp_ramp.csv", "qq_smooth.csv"] {
        assert!(names.contains(&want), "missing {want}");
    }
}

#[test]
fn global_competitor_is_flagged_not_nested() {
    let trace = generate(&three_regimes(40_000), 32).unwrap();
    let opts = AnalyzeOptions {
        competitor: Competitor::Global,
        ..forced(Regime::NonStationary)
    };
    let r = analyze(&trace, &digest(), &opts).unwrap().report;
    assert_eq!(r.likelihoods_nested, Some(false));
    let comp = r.stationary_competitor.as_ref().unwrap();
    assert_eq!(comp.kind, Competitor::Global);
    assert!(comp.r.is_some());
    assert_eq!(r.selected_model == SelectedModel::ChangePoint, r.deviance.unwrap().reject_stationary);
    assert_schema_valid(&r);
}

#[test]
fn stationary_branch_runs_one_global_pipeline() {
    // one regime, weakly correlated; ADF rejects the unit root
    let specs = vec![spec("a", 30_000, -20.0, 6.0, -32.0, 8.08, -0.284), spec("b", 30_000, -20.0, 6.0, -32.0, 8.08, -0.284)];
    let trace = generate(&specs, 33).unwrap();
    let r = analyze(&trace, &digest(), &AnalyzeOptions::default()).unwrap().report;
    let adf = r.adf.expect("ADF ran");
    assert!(adf.reject_unit_root);
    assert_eq!(r.regime, Regime::Stationary);
    assert_eq!(r.selected_model, SelectedModel::Stationary);
    assert!(r.deviance.is_none() && r.stationary_competitor.is_none());
    assert_eq!(r.groups.len(), 1);
    assert_eq!(r.groups[0].label, GLOBAL_LABEL);
    assert_eq!(r.segmentation.len(), 2);
    assert_schema_valid(&r);
}

#[test]
fn forced_stationary_skips_adf() {
    let trace = generate(&three_regimes(20_000), 34).unwrap();
    let r = analyze(&trace, &digest(), &forced(Regime::Stationary)).unwrap().report;
    assert!(r.adf.is_none());
    assert_eq!(r.selected_model, SelectedModel::Stationary);
    assert_schema_valid(&r);
}

#[test]
fn analysis_is_deterministic() {
    let csv = generate(&three_regimes(60_000), 35).unwrap().to_csv();
    let opts = forced(Regime::NonStationary);
    let a = analyze_csv(&csv, &opts).unwrap();
    let b = analyze_csv(&csv, &opts).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.files, b.files);
    assert!(a.report.input_digest.starts_with("sha256:"));
    assert_eq!(a.report.input_digest.len(), 7 + 64);
}

#[test]
fn report_floats_have_six_significant_digits() {
    let csv = generate(&three_regimes(20_000), 36).unwrap().to_csv();
    let mut report = analyze_csv(&csv, &forced(Regime::NonStationary)).unwrap().report;
    report.generated_at = Some("2024-01-01T00:00:00Z".into());
    assert_schema_valid(&report);
    let value: Value = serde_json::from_str(&report.to_json()).unwrap();
    fn walk(v: &Value) {
        match v {
            Value::Number(n) if n.is_f64() => {
                let x = n.as_f64().unwrap();
                let digits = format!("{:e}", x).split('e').next().unwrap().replace(['-', '.'], "").len();
                assert!(digits <= 6, "{x}");
            }
            Value::Array(a) => a.iter().for_each(walk),
            Value::Object(m) => m.values().for_each(walk),
            _ => {}
        }
    }
    walk(&value);
}

#[test]
fn schema_rejects_inconsistent_reports() {
    let csv = generate(&three_regimes(20_000), 37).unwrap().to_csv();
    let report = analyze_csv(&csv, &forced(Regime::NonStationary)).unwrap().report;
    let validator = schema_validator();
    let good: Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(validator.is_valid(&good));

    let mut flipped = good.clone();
    flipped["selected_model"] = Value::from("stationary");
    assert!(!validator.is_valid(&flipped));

    let mut extra = good.clone();
    extra["unexpected"] = Value::from(1);
    assert!(!validator.is_valid(&extra));

    let mut missing = good;
    missing.as_object_mut().unwrap().remove("warnings");
    assert!(!validator.is_valid(&missing));
}

#[test]
fn infeasible_grid_names_the_group() {
    let trace = generate(&three_regimes(10_000), 38).unwrap();
    let opts = AnalyzeOptions {
        grid: nsevt_core::pipeline::GridChoice::Linear { lo: -400.0, hi: -300.0, n: 10 },
        ..forced(Regime::NonStationary)
    };
    let err = analyze(&trace, &digest(), &opts).unwrap_err();
    assert!(err.is_infeasible());
    assert!(err.to_string().contains("static"), "{err}");
}
