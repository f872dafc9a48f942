//! End-to-end analysis: stationarity check, per-group tail modeling,
//! stationary competitor and deviance-based model choice, assembled into a
//! JSON report plus plot-data CSV files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::changepoint::{
    deviance_test, fit_nested_stationary, segment_from_fit, ChangePointModel, DevianceResult,
    SegmentModel, DEFAULT_ALPHA,
};
use crate::decluster::{decluster_pieces, DeclusterConfig};
use crate::diagnostics::{diagnose, FitDiagnostics, ProbabilityPlot};
use crate::error::{Error, Result};
use crate::gpd::{gpd_fit_mle, GpdFit, SHAPE_MAX, SHAPE_MIN};
use crate::stationarity::{adf_test, AdfResult, DEFAULT_SIGNIFICANCE};
use crate::threshold::{
    scan_pieces, select_threshold_with, ScanGrid, SelectionConfig, ThresholdChoice, ThresholdScan,
    DEFAULT_R_VALUES,
};
use crate::trace::{fmt_sig, parse_trace, round_sig, segment_by_group, PowerTrace};

pub const TOOL_NAME: &str = "nsevt";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Label of the single pooled series in the stationary branch.
pub const GLOBAL_LABEL: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Stationary,
    NonStationary,
}

/// What the change-point model is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Competitor {
    /// One GPD shared by all groups, fitted on the change-point model's own
    /// exceedances with the scales tied across the group thresholds. The
    /// models are nested.
    Pooled,
    /// The per-group models at their own thresholds against one GPD fitted
    /// to the whole trace at its own `(u, r)`. The likelihoods cover
    /// different exceedance sets.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridChoice {
    /// Per series: 40 thresholds between its 40th and 0.1th percentiles.
    Auto,
    Linear { lo: f64, hi: f64, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    pub selection: SelectionConfig,
    pub significance: f64,
    pub max_lag: Option<usize>,
    pub force: Option<Regime>,
    pub grid: GridChoice,
    pub r_values: Vec<usize>,
    pub competitor: Competitor,
    /// Decluster every group with the same run length.
    pub shared_run_length: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            selection: SelectionConfig::default(),
            significance: DEFAULT_SIGNIFICANCE,
            max_lag: None,
            force: None,
            grid: GridChoice::Auto,
            r_values: DEFAULT_R_VALUES.to_vec(),
            competitor: Competitor::Pooled,
            shared_run_length: true,
        }
    }
}

impl AnalyzeOptions {
    pub fn grid_for(&self, samples: &[f64]) -> Result<ScanGrid> {
        match self.grid {
            GridChoice::Auto => {
                let auto = ScanGrid::default_for(samples)?;
                ScanGrid::new(auto.u_values, self.r_values.clone())
            }
            GridChoice::Linear { lo, hi, n } => ScanGrid::linear(lo, hi, n, self.r_values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub alpha: f64,
    pub r2_min: f64,
    pub min_points: usize,
    pub noise_tolerant: bool,
    pub significance: f64,
    pub max_lag: Option<usize>,
    pub forced_regime: Option<Regime>,
    pub u_grid: Option<(f64, f64, usize)>,
    pub r_values: Vec<usize>,
    pub competitor: Competitor,
    pub shared_run_length: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummaryEntry {
    pub label: String,
    pub n_samples: usize,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceSummary {
    pub u_opt: f64,
    pub r_opt: usize,
    pub r2_mrl: f64,
    pub r2_shape: f64,
    pub r2_modscale: f64,
    pub feasible: bool,
}

impl From<&ThresholdChoice> for ChoiceSummary {
    fn from(c: &ThresholdChoice) -> Self {
        Self {
            u_opt: c.u_opt,
            r_opt: c.r_opt,
            r2_mrl: c.r2_mrl,
            r2_shape: c.r2_shape,
            r2_modscale: c.r2_modscale,
            feasible: c.feasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub u: f64,
    pub r: usize,
    pub scale: f64,
    pub shape: f64,
    pub loglik: f64,
    pub n_exceed: usize,
    pub converged: bool,
}

impl FitSummary {
    fn new(fit: &GpdFit, r: usize) -> Self {
        Self {
            u: fit.u,
            r,
            scale: fit.params.scale,
            shape: fit.params.shape,
            loglik: fit.loglik,
            n_exceed: fit.n_exceedances,
            converged: fit.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub pp_max_abs_dev: f64,
    pub pp_r2: f64,
    pub qq_max_abs_dev: f64,
    pub qq_r2: f64,
    pub validated: bool,
}

impl From<&FitDiagnostics> for DiagnosticsSummary {
    fn from(d: &FitDiagnostics) -> Self {
        Self {
            pp_max_abs_dev: d.pp_max_abs_dev,
            pp_r2: d.pp_r2,
            qq_max_abs_dev: d.qq_max_abs_dev,
            qq_r2: d.qq_r2,
            validated: d.validated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub threshold_choice: ChoiceSummary,
    pub gpd_fit: FitSummary,
    pub diagnostics: DiagnosticsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitorReport {
    pub kind: Competitor,
    /// Reference threshold of the tied scales, or the competitor's own
    /// threshold.
    pub u: f64,
    pub r: Option<usize>,
    pub scale: f64,
    pub shape: f64,
    pub loglik: f64,
    pub n_exceed: usize,
    pub converged: bool,
    /// Non-stationary log-likelihood entering the deviance.
    pub alternative_loglik: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectedModel {
    Stationary,
    ChangePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub tool_version: String,
    /// `sha256:<hex>` of the input bytes.
    pub input_digest: String,
    pub generated_at: Option<String>,
    pub n_samples: usize,
    pub settings: Settings,
    pub adf: Option<AdfResult>,
    pub regime: Regime,
    pub segmentation: Vec<GroupSummaryEntry>,
    pub groups: Vec<GroupReport>,
    pub stationary_competitor: Option<CompetitorReport>,
    pub total_loglik: Option<f64>,
    pub complexity: Option<usize>,
    pub deviance: Option<DevianceResult>,
    /// False when the two likelihoods are computed over different
    /// exceedance sets, so the chi-squared reference is only approximate.
    pub likelihoods_nested: Option<bool>,
    pub selected_model: SelectedModel,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    /// Pretty JSON with every float rounded to 6 significant digits.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report is serializable");
        round_floats(&mut value);
        let mut text = serde_json::to_string_pretty(&value).expect("value is serializable");
        text.push('\n');
        text
    }
}

fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(f64::NAN), 6);
            *value = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Report plus the plot-data files, as `(file name, contents)`.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub files: Vec<(String, String)>,
}

pub fn sha256_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut hex = String::with_capacity(7 + 64);
    hex.push_str("sha256:");
    for b in hash {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Parses and analyzes a CSV trace.
pub fn analyze_csv(csv_text: &str, options: &AnalyzeOptions) -> Result<Analysis> {
    let trace = parse_trace(csv_text)?;
    analyze(&trace, &sha256_digest(csv_text.as_bytes()), options)
}

struct SeriesOutcome {
    scan: ThresholdScan,
    choice: ThresholdChoice,
    fit: GpdFit,
    pp: ProbabilityPlot,
    qq: ProbabilityPlot,
    diagnostics: FitDiagnostics,
}

fn scan_series(pieces: &[&[f64]], options: &AnalyzeOptions) -> Result<(ThresholdScan, ThresholdChoice)> {
    let all: Vec<f64> = pieces.iter().flat_map(|p| p.iter().copied()).collect();
    let grid = options.grid_for(&all)?;
    let scan = scan_pieces(pieces, &grid);
    let choice = select_threshold_with(&scan, &options.selection);
    Ok((scan, choice))
}

/// Fit and diagnose at the chosen `(u, r)`.
fn fit_series(pieces: &[&[f64]], scan: ThresholdScan, choice: ThresholdChoice, label: &str) -> Result<SeriesOutcome> {
    if !choice.feasible {
        return Err(Error::InfeasibleThreshold { group: label.to_string() });
    }
    let minima = decluster_pieces(pieces, &DeclusterConfig::new(choice.u_opt, choice.r_opt)?)?;
    let fit = gpd_fit_mle(&minima.exceedances(choice.u_opt))?.at_threshold(choice.u_opt);
    let (pp, qq, diagnostics) = diagnose(&minima.minima, choice.u_opt, &fit.params)?;
    Ok(SeriesOutcome {
        scan,
        choice,
        fit,
        pp,
        qq,
        diagnostics,
    })
}

/// Scan, select, fit and diagnose one series made of contiguous pieces.
fn model_series(pieces: &[&[f64]], label: &str, options: &AnalyzeOptions) -> Result<SeriesOutcome> {
    let (scan, choice) = scan_series(pieces, options)?;
    fit_series(pieces, scan, choice, label)
}

fn fit_warnings(label: &str, out: &SeriesOutcome, warnings: &mut Vec<String>) {
    if !out.fit.converged {
        warnings.push(format!("group {label}: likelihood maximization did not converge"));
    }
    let shape = out.fit.params.shape;
    if shape <= SHAPE_MIN + 1e-6 || shape >= SHAPE_MAX - 1e-6 {
        warnings.push(format!("group {label}: shape estimate {} sits on its bound", fmt_sig(shape, 6)));
    }
    if !out.diagnostics.validated {
        warnings.push(format!(
            "group {label}: probability plot does not validate the fit (max deviation {}, R² {})",
            fmt_sig(out.diagnostics.pp_max_abs_dev, 6),
            fmt_sig(out.diagnostics.pp_r2, 6)
        ));
    }
}

fn group_report(label: &str, out: &SeriesOutcome) -> GroupReport {
    GroupReport {
        label: label.to_string(),
        threshold_choice: ChoiceSummary::from(&out.choice),
        gpd_fit: FitSummary::new(&out.fit, out.choice.r_opt),
        diagnostics: DiagnosticsSummary::from(&out.diagnostics),
    }
}

pub const MRL_CSV_HEADER: &str = "group,u_dbm,r,mean_excess,n_exceed";
pub const STABILITY_CSV_HEADER: &str = "group,u_dbm,xi,sigma,sigma_star,n_exceed";

fn plot_files(outcomes: &[(String, SeriesOutcome)]) -> Vec<(String, String)> {
    let mut mrl = format!("{MRL_CSV_HEADER}\n");
    let mut stability: BTreeMap<usize, String> = BTreeMap::new();
    for (label, out) in outcomes {
        let grid = &out.scan.grid;
        for (ri, &r) in grid.r_values.iter().enumerate() {
            let stab = stability
                .entry(r)
                .or_insert_with(|| format!("{STABILITY_CSV_HEADER}\n"));
            for cell in out.scan.column(ri) {
                let u = fmt_sig(cell.u, 6);
                mrl.push_str(&format!(
                    "{label},{u},{r},{},{}\n",
                    fmt_sig(cell.mean_excess, 6),
                    cell.n_exceed
                ));
                stab.push_str(&format!(
                    "{label},{u},{},{},{},{}\n",
                    fmt_sig(cell.xi, 6),
                    fmt_sig(cell.sigma, 6),
                    fmt_sig(cell.sigma_star, 6),
                    cell.n_exceed
                ));
            }
        }
    }
    let mut files = vec![("mrl.csv".to_string(), mrl)];
    files.extend(stability.into_iter().map(|(r, text)| (format!("stability_r{r}.csv"), text)));
    for (label, out) in outcomes {
        files.push((format!("pp_{label}.csv"), plot_csv(&out.pp)));
        files.push((format!("qq_{label}.csv"), plot_csv(&out.qq)));
    }
    files
}

fn plot_csv(plot: &ProbabilityPlot) -> String {
    let mut out = String::from("empirical,model\n");
    for &(e, m) in &plot.points {
        out.push_str(&format!("{},{}\n", fmt_sig(e, 6), fmt_sig(m, 6)));
    }
    out
}

fn settings(options: &AnalyzeOptions) -> Settings {
    Settings {
        alpha: options.alpha,
        r2_min: options.selection.r2_min,
        min_points: options.selection.min_points,
        noise_tolerant: options.selection.noise_tolerant,
        significance: options.significance,
        max_lag: options.max_lag,
        forced_regime: options.force,
        u_grid: match options.grid {
            GridChoice::Auto => None,
            GridChoice::Linear { lo, hi, n } => Some((lo, hi, n)),
        },
        r_values: options.r_values.clone(),
        competitor: options.competitor,
        shared_run_length: options.shared_run_length,
    }
}

/// Runs the whole analysis on a parsed trace. `input_digest` is copied into
/// the report; `generated_at` is left empty for the caller to stamp.
pub fn analyze(trace: &PowerTrace, input_digest: &str, options: &AnalyzeOptions) -> Result<Analysis> {
    if !(options.alpha > 0.0 && options.alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5), got {}", options.alpha)));
    }
    let segmentation = segment_by_group(trace)?;
    let powers = trace.powers();
    let mut warnings = Vec::new();

    let adf = match options.force {
        Some(_) => None,
        None => Some(adf_test(&powers, options.max_lag, options.significance)?),
    };
    let regime = match (options.force, adf) {
        (Some(forced), _) => {
            warnings.push(format!(
                "stationarity verdict forced to {} (ADF not run)",
                if forced == Regime::Stationary { "stationary" } else { "non-stationary" }
            ));
            forced
        }
        (None, Some(a)) if a.reject_unit_root => Regime::Stationary,
        _ => Regime::NonStationary,
    };

    let summary = segmentation
        .groups
        .iter()
        .map(|g| GroupSummaryEntry {
            label: g.label.clone(),
            n_samples: g.n_samples(),
            n_runs: g.ranges.len(),
        })
        .collect();

    let mut report = AnalysisReport {
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        input_digest: input_digest.to_string(),
        generated_at: None,
        n_samples: trace.len(),
        settings: settings(options),
        adf,
        regime,
        segmentation: summary,
        groups: Vec::new(),
        stationary_competitor: None,
        total_loglik: None,
        complexity: None,
        deviance: None,
        likelihoods_nested: None,
        selected_model: SelectedModel::Stationary,
        warnings: Vec::new(),
    };

    if regime == Regime::Stationary {
        let out = model_series(&[&powers], GLOBAL_LABEL, options)?;
        fit_warnings(GLOBAL_LABEL, &out, &mut warnings);
        report.groups.push(group_report(GLOBAL_LABEL, &out));
        report.total_loglik = Some(out.fit.loglik);
        report.complexity = Some(2);
        report.warnings = warnings;
        let files = plot_files(&[(GLOBAL_LABEL.to_string(), out)]);
        return Ok(Analysis { report, files });
    }

    let group_pieces: Vec<Vec<&[f64]>> = segmentation.groups.iter().map(|g| g.slices(&powers)).collect();
    let mut scans = Vec::with_capacity(group_pieces.len());
    for (g, pieces) in segmentation.groups.iter().zip(&group_pieces) {
        scans.push(scan_series(pieces, options).map_err(|e| e.in_group(&g.label))?);
    }
    if options.shared_run_length {
        // smallest run length at which every group has a feasible threshold
        let shared = options.r_values.iter().copied().find(|&r| {
            scans.iter().all(|(_, choice)| choice.at_run_length(r).is_some())
        });
        match shared {
            Some(r) => {
                for (_, choice) in scans.iter_mut() {
                    *choice = choice.at_run_length(r).expect("checked above");
                }
            }
            None => {
                let label = segmentation
                    .groups
                    .iter()
                    .zip(&scans)
                    .find(|(_, (_, c))| !c.feasible)
                    .map_or(segmentation.groups[0].label.clone(), |(g, _)| g.label.clone());
                return Err(Error::InfeasibleThreshold { group: label });
            }
        }
    }
    let mut outcomes: Vec<(String, SeriesOutcome)> = Vec::with_capacity(scans.len());
    for ((g, pieces), (scan, choice)) in segmentation.groups.iter().zip(&group_pieces).zip(scans) {
        let out = fit_series(pieces, scan, choice, &g.label).map_err(|e| match e {
            Error::InfeasibleThreshold { .. } => e,
            other => other.in_group(&g.label),
        })?;
        outcomes.push((g.label.clone(), out));
    }

    let segments: Vec<SegmentModel> = outcomes
        .iter()
        .map(|(label, out)| segment_from_fit(label, out.choice.u_opt, out.choice.r_opt, &out.fit))
        .collect();
    for (label, out) in &outcomes {
        fit_warnings(label, out, &mut warnings);
        report.groups.push(group_report(label, out));
    }
    let model = ChangePointModel::new(segments)?;
    report.total_loglik = Some(model.total_loglik);
    report.complexity = Some(model.complexity);

    let (competitor, nested) = match options.competitor {
        Competitor::Pooled => {
            let pooled = fit_nested_stationary(trace, &segmentation, &model)?;
            let rep = CompetitorReport {
                kind: Competitor::Pooled,
                u: pooled.u_ref,
                r: None,
                scale: pooled.params.scale,
                shape: pooled.params.shape,
                loglik: pooled.loglik,
                n_exceed: pooled.n_exceed,
                converged: pooled.converged,
                alternative_loglik: model.total_loglik,
            };
            (rep, true)
        }
        Competitor::Global => {
            let out = model_series(&[&powers], GLOBAL_LABEL, options)?;
            let rep = CompetitorReport {
                kind: Competitor::Global,
                u: out.fit.u,
                r: Some(out.choice.r_opt),
                scale: out.fit.params.scale,
                shape: out.fit.params.shape,
                loglik: out.fit.loglik,
                n_exceed: out.fit.n_exceedances,
                converged: out.fit.converged,
                alternative_loglik: model.total_loglik,
            };
            warnings.push(
                "stationary competitor uses its own threshold: the two likelihoods cover different \
                 exceedance sets and the chi-squared reference is approximate"
                    .to_string(),
            );
            (rep, false)
        }
    };
    if !competitor.converged {
        warnings.push("stationary competitor fit did not converge".to_string());
    }

    if model.segments.len() < 2 {
        warnings.push("only one group: no change-point alternative to test".to_string());
    } else {
        let k = (model.complexity - 2) as u32;
        let dev = deviance_test(competitor.alternative_loglik, competitor.loglik, k, options.alpha)?;
        if dev.reject_stationary {
            report.selected_model = SelectedModel::ChangePoint;
        }
        report.deviance = Some(dev);
    }
    report.stationary_competitor = Some(competitor);
    report.likelihoods_nested = Some(nested);
    report.warnings = warnings;
    let files = plot_files(&outcomes);
    Ok(Analysis { report, files })
}

/// Deviance test from externally supplied per-segment log-likelihoods and
/// a stationary log-likelihood, e.g. to check published figures. Returns the
/// summed change-point log-likelihood with the test.
pub fn assemble_deviance(segment_logliks: &[f64], stationary_loglik: f64, alpha: f64) -> Result<(f64, DevianceResult)> {
    if segment_logliks.len() < 2 {
        return Err(Error::InvalidArgument("need at least two segments".into()));
    }
    let total: f64 = segment_logliks.iter().sum();
    let k = 2 * (segment_logliks.len() - 1);
    Ok((total, deviance_test(total, stationary_loglik, k as u32, alpha)?))
}
