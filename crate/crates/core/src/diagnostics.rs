//! Probability-probability and quantile-quantile plot data for a fitted
//! tail model, with scalar goodness-of-fit summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpd::{cdf_unchecked, quantile_unchecked, GpdParams};

pub const VALIDATE_R2_MIN: f64 = 0.98;
pub const VALIDATE_MAX_DEV: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityPlot {
    /// `(empirical, model)` pairs, ascending in the empirical coordinate.
    pub points: Vec<(f64, f64)>,
    pub max_abs_dev: f64,
    /// Coefficient of determination of the identity line `model = empirical`.
    pub r2_diag: f64,
}

impl ProbabilityPlot {
    fn from_points(points: Vec<(f64, f64)>) -> Self {
        let n = points.len() as f64;
        let mean = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mut sse = 0.0;
        let mut sst = 0.0;
        let mut max_abs_dev: f64 = 0.0;
        for &(e, m) in &points {
            let d = m - e;
            sse += d * d;
            sst += (e - mean) * (e - mean);
            max_abs_dev = max_abs_dev.max(d.abs());
        }
        let r2_diag = if sst > 0.0 {
            1.0 - sse / sst
        } else if sse == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
        Self {
            points,
            max_abs_dev,
            r2_diag,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("empirical,model\n");
        for (e, m) in &self.points {
            out.push_str(&format!("{e},{m}\n"));
        }
        out
    }
}

fn plotting_position(i: usize, k: usize) -> f64 {
    i as f64 / (k as f64 + 1.0)
}

/// PP plot: `(i/(k+1), H(y_(i)))` over ascending exceedances.
pub fn pp_points(exceedances: &[f64], params: &GpdParams) -> Result<ProbabilityPlot> {
    let k = exceedances.len();
    if k < 2 {
        return Err(Error::TooFewExceedances { needed: 2, got: k });
    }
    if exceedances.iter().any(|y| !(*y >= 0.0)) {
        return Err(Error::InvalidArgument("exceedances must be non-negative".into()));
    }
    let mut ys = exceedances.to_vec();
    ys.sort_by(f64::total_cmp);
    let points = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| (plotting_position(i + 1, k), cdf_unchecked(y, params)))
        .collect();
    Ok(ProbabilityPlot::from_points(points))
}

/// QQ plot on the dBm scale: the `i`-th shallowest sample below `u` against
/// `u - Q(i/(k+1))`.
pub fn qq_points(values: &[f64], u: f64, params: &GpdParams) -> Result<ProbabilityPlot> {
    let k = values.len();
    if k < 2 {
        return Err(Error::TooFewExceedances { needed: 2, got: k });
    }
    if values.iter().any(|x| !(*x < u)) {
        return Err(Error::InvalidArgument(format!(
            "QQ values must lie below the threshold {u}"
        )));
    }
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| b.total_cmp(a));
    let mut points: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, u - quantile_unchecked(plotting_position(i + 1, k), params)))
        .collect();
    points.reverse();
    Ok(ProbabilityPlot::from_points(points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub pp_max_abs_dev: f64,
    pub pp_r2: f64,
    pub qq_max_abs_dev: f64,
    pub qq_r2: f64,
    pub validated: bool,
}

pub fn summarize(pp: &ProbabilityPlot, qq: &ProbabilityPlot) -> FitDiagnostics {
    FitDiagnostics {
        pp_max_abs_dev: pp.max_abs_dev,
        pp_r2: pp.r2_diag,
        qq_max_abs_dev: qq.max_abs_dev,
        qq_r2: qq.r2_diag,
        validated: is_validated(pp),
    }
}

pub fn is_validated(pp: &ProbabilityPlot) -> bool {
    pp.r2_diag >= VALIDATE_R2_MIN && pp.max_abs_dev <= VALIDATE_MAX_DEV
}

/// Both plots for the samples `values` below `u`.
pub fn diagnose(values: &[f64], u: f64, params: &GpdParams) -> Result<(ProbabilityPlot, ProbabilityPlot, FitDiagnostics)> {
    let ys: Vec<f64> = values.iter().map(|x| u - x).collect();
    let pp = pp_points(&ys, params)?;
    let qq = qq_points(values, u, params)?;
    let summary = summarize(&pp, &qq);
    Ok((pp, qq, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PortableRng;

    fn params(scale: f64, shape: f64) -> GpdParams {
        GpdParams::new(scale, shape).unwrap()
    }

    fn model_quantiles(k: usize, p: &GpdParams) -> Vec<f64> {
        (1..=k).map(|i| quantile_unchecked(plotting_position(i, k), p)).collect()
    }

    #[test]
    fn pp_plug_in_identity() {
        let p = params(8.08, -0.284);
        let pp = pp_points(&model_quantiles(50, &p), &p).unwrap();
        assert!(pp.max_abs_dev < 1e-12);
        assert!((pp.r2_diag - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qq_plug_in_identity() {
        let p = params(3.0, 0.2);
        let u = -30.0;
        let xs: Vec<f64> = model_quantiles(40, &p).iter().map(|y| u - y).collect();
        let qq = qq_points(&xs, u, &p).unwrap();
        assert!(qq.max_abs_dev < 1e-12);
        assert!(qq.points.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn qq_two_point_exponential() {
        let qq = qq_points(&[-30.2, -31.5], -30.0, &params(1.0, 0.0)).unwrap();
        // ascending: deepest sample first
        assert_eq!(qq.points[0].0, -31.5);
        assert!((qq.points[0].1 + 31.098_612_288_668_11).abs() < 1e-9);
        assert_eq!(qq.points[1].0, -30.2);
        assert!((qq.points[1].1 + 30.405_465_108_108_16).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        assert!(pp_points(&[1.0], &params(1.0, 0.0)).is_err());
        assert!(qq_points(&[-31.0], -30.0, &params(1.0, 0.0)).is_err());
        assert!(qq_points(&[-31.0, -29.0], -30.0, &params(1.0, 0.0)).is_err());
    }

    #[test]
    fn pp_model_coordinates_are_monotone_probabilities() {
        let p = params(2.0, 0.3);
        let mut rng = PortableRng::new(5);
        let ys: Vec<f64> = (0..500).map(|_| quantile_unchecked(rng.uniform(), &p)).collect();
        let pp = pp_points(&ys, &p).unwrap();
        assert!(pp.points.iter().all(|&(_, m)| (0.0..=1.0).contains(&m)));
        assert!(pp.points.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn qq_maps_back_to_plotting_positions() {
        let p = params(5.0, -0.2);
        let u = -25.0;
        let mut rng = PortableRng::new(8);
        let xs: Vec<f64> = (0..300).map(|_| u - quantile_unchecked(rng.uniform(), &p)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| u - x).collect();
        let pp = pp_points(&ys, &p).unwrap();
        let qq = qq_points(&xs, u, &p).unwrap();
        // qq is ascending in x, i.e. descending in exceedance
        for (j, &(_, model_dbm)) in qq.points.iter().rev().enumerate() {
            let back = cdf_unchecked(u - model_dbm, &p);
            assert!((back - pp.points[j].0).abs() < 1e-10);
        }
    }

    #[test]
    fn misspecified_shape_is_not_validated() {
        let truth = params(4.0, 0.4);
        let wrong = params(4.0, -0.4);
        let mut rng = PortableRng::new(1);
        let ys: Vec<f64> = (0..2000).map(|_| quantile_unchecked(rng.uniform(), &truth)).collect();
        let xs: Vec<f64> = ys.iter().map(|y| -30.0 - y).collect();
        let (_, _, bad) = diagnose(&xs, -30.0, &wrong).unwrap();
        assert!(!bad.validated);
        let (_, _, good) = diagnose(&xs, -30.0, &truth).unwrap();
        assert!(good.validated, "{good:?}");
    }
}
