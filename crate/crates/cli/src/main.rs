//! `nsevt`: lower-tail extreme value analysis of received-power traces.
//!
//! Exit codes: 0 success, 2 bad input or usage, 3 the data cannot support
//! the requested analysis.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nsevt_core::decluster::{decluster_pieces, DeclusterConfig};
use nsevt_core::diagnostics::{self, ProbabilityPlot};
use nsevt_core::gpd::GpdParams;
use nsevt_core::pipeline::{self, AnalyzeOptions, Competitor, GridChoice, Regime};
use nsevt_core::synth::{self, SegmentSpec};
use nsevt_core::threshold::{
    scan_pieces, select_threshold_with, ScanGrid, SelectionConfig, DEFAULT_MIN_POINTS,
    DEFAULT_R2_MIN, DEFAULT_R_VALUES,
};
use nsevt_core::trace::{fmt_sig, parse_trace, segment_by_group, PowerTrace};
use nsevt_core::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "nsevt", version, about = "Tail models for non-stationary received-power traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: ADF, thresholds, GPD fits, diagnostics, deviance test.
    Analyze(AnalyzeArgs),
    /// Threshold scan grid for one series.
    Scan(ScanArgs),
    /// Generate a synthetic trace from a JSON list of segment specs.
    Simulate(SimulateArgs),
    /// PP/QQ diagnostics of user-supplied GPD parameters.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Threshold grid as `lo:hi:n` in dBm (default: per-series percentiles).
    #[arg(long, value_parser = parse_u_grid, allow_hyphen_values = true)]
    u_grid: Option<(f64, f64, usize)>,
    /// Run lengths for declustering, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_R_VALUES.to_vec())]
    r_list: Vec<usize>,
    /// R² a curve must reach below a threshold to count as linear.
    #[arg(long, default_value_t = DEFAULT_R2_MIN)]
    r2_min: f64,
    /// Use the plain R² rule without the noise allowance.
    #[arg(long)]
    strict_r2: bool,
}

impl GridArgs {
    fn selection(&self) -> SelectionConfig {
        SelectionConfig {
            r2_min: self.r2_min,
            min_points: DEFAULT_MIN_POINTS,
            noise_tolerant: !self.strict_r2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CompetitorArg {
    Pooled,
    Global,
}

#[derive(Args)]
struct AnalyzeArgs {
    input: PathBuf,
    #[arg(long, default_value = "nsevt-out")]
    out_dir: PathBuf,
    /// Level of the deviance test.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Level of the ADF test.
    #[arg(long, default_value_t = 0.05)]
    significance: f64,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long, conflicts_with = "force_nonstationary")]
    force_stationary: bool,
    #[arg(long)]
    force_nonstationary: bool,
    #[arg(long, value_enum, default_value = "pooled")]
    competitor: CompetitorArg,
    /// Let every group choose its own run length.
    #[arg(long)]
    per_group_r: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct ScanArgs {
    input: PathBuf,
    /// Restrict to one group label (default: the whole trace).
    #[arg(long)]
    group: Option<String>,
    #[arg(long, default_value = "scan.csv")]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct SimulateArgs {
    spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    u: f64,
    #[arg(long)]
    scale: f64,
    #[arg(long, allow_hyphen_values = true)]
    shape: f64,
    /// Decluster with this run length first (default: every sample below u).
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    group: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_INPUT };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn parse_u_grid(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected lo:hi:n".into());
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| format!("lo: {e}"))?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| format!("hi: {e}"))?;
    let n = parts[2].trim().parse::<usize>().map_err(|e| format!("n: {e}"))?;
    Ok((lo, hi, n))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// Samples of the whole trace, or of one group as separate contiguous pieces.
fn series<'a>(trace: &PowerTrace, powers: &'a [f64], group: Option<&str>) -> Result<Vec<&'a [f64]>, Failure> {
    match group {
        None => Ok(vec![powers]),
        Some(label) => {
            let segm = segment_by_group(trace)?;
            let ranges = segm
                .get(label)
                .ok_or_else(|| input_error(format!("no group `{label}` in the trace")))?;
            Ok(ranges.slices(powers))
        }
    }
}

fn generated_at() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let text = read_text(&args.input)?;
    let options = AnalyzeOptions {
        alpha: args.alpha,
        selection: args.grid.selection(),
        significance: args.significance,
        max_lag: args.max_lag,
        force: if args.force_stationary {
            Some(Regime::Stationary)
        } else if args.force_nonstationary {
            Some(Regime::NonStationary)
        } else {
            None
        },
        grid: match args.grid.u_grid {
            Some((lo, hi, n)) => GridChoice::Linear { lo, hi, n },
            None => GridChoice::Auto,
        },
        r_values: args.grid.r_list.clone(),
        competitor: match args.competitor {
            CompetitorArg::Pooled => Competitor::Pooled,
            CompetitorArg::Global => Competitor::Global,
        },
        shared_run_length: !args.per_group_r,
    };
    let mut analysis = pipeline::analyze_csv(&text, &options)?;
    analysis.report.generated_at = Some(generated_at());

    write_text(&args.out_dir.join("report.json"), &analysis.report.to_json())?;
    for (name, contents) in &analysis.files {
        write_text(&args.out_dir.join(name), contents)?;
    }

    let report = &analysis.report;
    println!("regime: {}", serde_json::to_string(&report.regime).unwrap_or_default().trim_matches('"'));
    for g in &report.groups {
        println!(
            "  {}: u={} r={} scale={} shape={} k={} {}",
            g.label,
            fmt_sig(g.gpd_fit.u, 6),
            g.gpd_fit.r,
            fmt_sig(g.gpd_fit.scale, 6),
            fmt_sig(g.gpd_fit.shape, 6),
            g.gpd_fit.n_exceed,
            if g.diagnostics.validated { "validated" } else { "not validated" }
        );
    }
    if let Some(d) = &report.deviance {
        println!(
            "deviance: D={} c={} k={}",
            fmt_sig(d.d, 6),
            fmt_sig(d.c_alpha, 6),
            d.k
        );
    }
    println!(
        "selected: {}",
        serde_json::to_string(&report.selected_model).unwrap_or_default().trim_matches('"')
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", args.out_dir.join("report.json").display());
    Ok(())
}

fn cmd_scan(args: &ScanArgs) -> Result<(), Failure> {
    let trace = parse_trace(&read_text(&args.input)?)?;
    let powers = trace.powers();
    let pieces = series(&trace, &powers, args.group.as_deref())?;
    let label = args.group.as_deref().unwrap_or(pipeline::GLOBAL_LABEL);
    let grid = match args.grid.u_grid {
        Some((lo, hi, n)) => ScanGrid::linear(lo, hi, n, args.grid.r_list.clone())?,
        None => {
            let joined: Vec<f64> = pieces.concat();
            let auto = ScanGrid::default_for(&joined)?;
            ScanGrid::new(auto.u_values, args.grid.r_list.clone())?
        }
    };
    let scan = scan_pieces(&pieces, &grid);
    if scan.populated() == 0 {
        return Err(Error::InfeasibleThreshold { group: label.to_string() }.into());
    }
    write_text(&args.out, &scan.to_csv())?;

    let choice = select_threshold_with(&scan, &args.grid.selection());
    for rec in &choice.per_r {
        let u = rec.u_star.map_or("none".to_string(), |u| fmt_sig(u, 6));
        println!("r={:<3} u_star={u}", rec.r);
    }
    if choice.feasible {
        println!("u_opt={} r_opt={}", fmt_sig(choice.u_opt, 6), choice.r_opt);
    } else {
        println!("u_opt=none");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let text = read_text(&args.spec)?;
    let specs: Vec<SegmentSpec> = serde_json::from_str(&text)
        .map_err(|e| input_error(format!("{}: {e}", args.spec.display())))?;
    let trace = synth::generate(&specs, args.seed).map_err(|e| input_error(e.to_string()))?;
    write_text(&args.out, &trace.to_csv())?;
    for g in synth::summarize(&specs, &trace) {
        println!(
            "{}: n={} tail_u={} tail_fraction={}",
            g.label,
            g.n,
            fmt_sig(g.tail_u, 6),
            fmt_sig(g.tail_fraction, 4)
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn plot_csv(plot: &ProbabilityPlot) -> String {
    let mut out = String::from("empirical,model\n");
    for &(e, m) in &plot.points {
        out.push_str(&format!("{},{}\n", fmt_sig(e, 6), fmt_sig(m, 6)));
    }
    out
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let params = GpdParams::new(args.scale, args.shape).map_err(|e| input_error(e.to_string()))?;
    let trace = parse_trace(&read_text(&args.input)?)?;
    let powers = trace.powers();
    let pieces = series(&trace, &powers, args.group.as_deref())?;
    let values: Vec<f64> = match args.r {
        Some(r) => decluster_pieces(&pieces, &DeclusterConfig::new(args.u, r)?)?.minima,
        None => pieces.iter().flat_map(|p| p.iter().copied()).filter(|&x| x < args.u).collect(),
    };
    let (pp, qq, summary) = diagnostics::diagnose(&values, args.u, &params)?;

    let label = args.group.as_deref().unwrap_or(pipeline::GLOBAL_LABEL);
    write_text(&args.out_dir.join(format!("pp_{label}.csv")), &plot_csv(&pp))?;
    write_text(&args.out_dir.join(format!("qq_{label}.csv")), &plot_csv(&qq))?;
    println!(
        "k={} pp_max_abs_dev={} pp_r2={} qq_r2={}",
        values.len(),
        fmt_sig(summary.pp_max_abs_dev, 4),
        fmt_sig(summary.pp_r2, 4),
        fmt_sig(summary.qq_r2, 4)
    );
    println!("{}", if summary.validated { "validated" } else { "not validated" });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nsevt: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_u_grid;

    #[test]
    fn u_grid_parsing() {
        assert_eq!(parse_u_grid("-50:-10:41"), Ok((-50.0, -10.0, 41)));
        assert_eq!(parse_u_grid(" -50 : -10 : 8"), Ok((-50.0, -10.0, 8)));
        assert!(parse_u_grid("-50:-10").is_err());
        assert!(parse_u_grid("a:-10:8").is_err());
        assert!(parse_u_grid("-50:-10:-8").is_err());
    }
}
