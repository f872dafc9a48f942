//! Browser bindings: three operations for the static demo page in `www/`.
//! Every call takes plain numbers and returns a JSON string; the same
//! functions are usable natively through the `*_json` variants.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nsevt_core::diagnostics::{pp_points, qq_points, summarize, FitDiagnostics};
use nsevt_core::gpd::{gpd_fit_mle, gpd_quantile, GpdParams};
use nsevt_core::pipeline::assemble_deviance;
use nsevt_core::synth::{generate, PortableRng, SegmentSpec};
use nsevt_core::threshold::{scan, select_threshold_with, ScanGrid, SelectionConfig, DEFAULT_R_VALUES};

/// Plot series are thinned to at most this many points.
const MAX_PLOT_POINTS: usize = 400;

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_PLOT_POINTS {
        return points.to_vec();
    }
    let step = (points.len() - 1) as f64 / (MAX_PLOT_POINTS - 1) as f64;
    (0..MAX_PLOT_POINTS)
        .map(|i| points[((i as f64 * step).round() as usize).min(points.len() - 1)])
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FitDemo {
    truth: GpdParams,
    fitted: GpdParams,
    loglik: f64,
    converged: bool,
    n: usize,
    pp: Vec<(f64, f64)>,
    qq: Vec<(f64, f64)>,
    diagnostics: FitDiagnostics,
}

/// Draws `n` exceedances from GPD(`scale`, `shape`) below a threshold at
/// `u`, refits them and returns the fit with PP and QQ plot data.
pub fn fit_demo_json(u: f64, scale: f64, shape: f64, n: usize, seed: u64) -> Result<String, String> {
    let truth = GpdParams::new(scale, shape).map_err(|e| e.to_string())?;
    if !(10..=1_000_000).contains(&n) {
        return Err("n must lie between 10 and 1000000".into());
    }
    let mut rng = PortableRng::new(seed);
    let ys = (0..n)
        .map(|_| gpd_quantile(rng.uniform(), &truth))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    let fit = gpd_fit_mle(&ys).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = ys.iter().map(|y| u - y).filter(|x| *x < u).collect();
    let pp = pp_points(&ys, &fit.params).map_err(|e| e.to_string())?;
    let qq = qq_points(&xs, u, &fit.params).map_err(|e| e.to_string())?;
    to_json(&FitDemo {
        truth,
        fitted: fit.params,
        loglik: fit.loglik,
        converged: fit.converged,
        n,
        diagnostics: summarize(&pp, &qq),
        pp: thin(&pp.points),
        qq: thin(&qq.points),
    })
}

#[derive(Serialize)]
struct CurvePoint {
    u: f64,
    mean_excess: f64,
    xi: f64,
    sigma_star: f64,
    n_exceed: usize,
}

#[derive(Serialize)]
struct RunLengthCurves {
    r: usize,
    u_star: Option<f64>,
    points: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct ScanDemo {
    splice_u: f64,
    grid_step: f64,
    feasible: bool,
    u_opt: Option<f64>,
    r_opt: Option<usize>,
    curves: Vec<RunLengthCurves>,
}

/// Simulates a spliced trace (Gaussian bulk, GPD lower tail below
/// `tail_u`), scans the default threshold grid and selects `(u, r)`.
#[allow(clippy::too_many_arguments)]
pub fn scan_demo_json(
    n: usize,
    bulk_mean: f64,
    bulk_sd: f64,
    tail_u: f64,
    scale: f64,
    shape: f64,
    tail_prob: f64,
    ar_coeff: f64,
    seed: u64,
) -> Result<String, String> {
    if n > 500_000 {
        return Err("n is capped at 500000 in the browser".into());
    }
    let spec = SegmentSpec {
        label: "demo".into(),
        n,
        bulk_mean,
        bulk_sd,
        tail_u,
        tail_params: GpdParams { scale, shape },
        tail_prob,
        ar_coeff,
    };
    let x = generate(std::slice::from_ref(&spec), seed)
        .map_err(|e| e.to_string())?
        .powers();
    let auto = ScanGrid::default_for(&x).map_err(|e| e.to_string())?;
    let grid = ScanGrid::new(auto.u_values, DEFAULT_R_VALUES.to_vec()).map_err(|e| e.to_string())?;
    let result = scan(&x, &grid);
    let choice = select_threshold_with(&result, &SelectionConfig::default());
    let curves = grid
        .r_values
        .iter()
        .enumerate()
        .map(|(ri, &r)| RunLengthCurves {
            r,
            u_star: choice.per_r[ri].u_star,
            points: result
                .column(ri)
                .map(|c| CurvePoint {
                    u: c.u,
                    mean_excess: c.mean_excess,
                    xi: c.xi,
                    sigma_star: c.sigma_star,
                    n_exceed: c.n_exceed,
                })
                .collect(),
        })
        .collect();
    to_json(&ScanDemo {
        splice_u: tail_u,
        grid_step: grid.step(),
        feasible: choice.feasible,
        u_opt: choice.feasible.then_some(choice.u_opt),
        r_opt: choice.feasible.then_some(choice.r_opt),
        curves,
    })
}

#[derive(Serialize)]
struct DevianceDemo {
    total_loglik: f64,
    #[serde(rename = "D")]
    d: f64,
    k: u32,
    c_alpha: f64,
    alpha: f64,
    reject_stationary: bool,
    selected_model: &'static str,
}

/// Deviance test of per-segment log-likelihoods against a stationary one.
pub fn deviance_json(segment_logliks: &[f64], stationary_loglik: f64, alpha: f64) -> Result<String, String> {
    let (total, dev) = assemble_deviance(segment_logliks, stationary_loglik, alpha).map_err(|e| e.to_string())?;
    to_json(&DevianceDemo {
        total_loglik: total,
        d: dev.d,
        k: dev.k,
        c_alpha: dev.c_alpha,
        alpha: dev.alpha,
        reject_stationary: dev.reject_stationary,
        selected_model: if dev.reject_stationary { "change-point" } else { "stationary" },
    })
}

#[wasm_bindgen(js_name = fitDemo)]
pub fn fit_demo(u: f64, scale: f64, shape: f64, n: usize, seed: u32) -> Result<String, JsError> {
    fit_demo_json(u, scale, shape, n, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = scanDemo)]
#[allow(clippy::too_many_arguments)]
pub fn scan_demo(
    n: usize,
    bulk_mean: f64,
    bulk_sd: f64,
    tail_u: f64,
    scale: f64,
    shape: f64,
    tail_prob: f64,
    ar_coeff: f64,
    seed: u32,
) -> Result<String, JsError> {
    scan_demo_json(n, bulk_mean, bulk_sd, tail_u, scale, shape, tail_prob, ar_coeff, seed as u64)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = devianceTest)]
pub fn deviance_test(segment_logliks: Vec<f64>, stationary_loglik: f64, alpha: f64) -> Result<String, JsError> {
    deviance_json(&segment_logliks, stationary_loglik, alpha).map_err(|e| JsError::new(&e))
}
