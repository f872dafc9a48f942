//! Threshold and run-length selection.
//!
//! For every `(u, r)` on a grid the series is declustered, the cluster
//! minima are turned into exceedances and three curves are tracked against
//! `u`: the mean excess (mean residual life), the fitted shape `ξ` and the
//! modified scale `σ* = σ̃ - ξ u`. A threshold is acceptable when all three
//! curves are linear (R² at least `r2_min`) over every grid point at or below
//! it.

use serde::Serialize;

use crate::decluster::BelowThreshold;
use crate::error::{Error, Result};
use crate::gpd::{gpd_covariance, gpd_fit_mle, MIN_EXCEEDANCES};

pub const DEFAULT_R_VALUES: [usize; 8] = [1, 2, 4, 8, 12, 16, 24, 32];
pub const DEFAULT_GRID_POINTS: usize = 40;
pub const DEFAULT_R2_MIN: f64 = 0.95;
pub const DEFAULT_MIN_POINTS: usize = 5;
pub const MIN_GRID_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanGrid {
    /// Strictly descending thresholds in dBm.
    pub u_values: Vec<f64>,
    /// Strictly ascending run lengths.
    pub r_values: Vec<usize>,
}

impl ScanGrid {
    pub fn new(u_values: Vec<f64>, r_values: Vec<usize>) -> Result<Self> {
        if u_values.len() < MIN_GRID_POINTS {
            return Err(Error::InvalidArgument(format!(
                "threshold grid needs at least {MIN_GRID_POINTS} values, got {}",
                u_values.len()
            )));
        }
        if u_values.iter().any(|u| !u.is_finite()) || u_values.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument(
                "thresholds must be finite and strictly descending".into(),
            ));
        }
        if r_values.is_empty() || r_values[0] == 0 || r_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "run lengths must be positive and strictly ascending".into(),
            ));
        }
        Ok(Self { u_values, r_values })
    }

    /// `n` equally spaced thresholds from `hi` down to `lo`.
    pub fn linear(lo: f64, hi: f64, n: usize, r_values: Vec<usize>) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::InvalidArgument(format!(
                "threshold range needs lo < hi and n >= 2, got {lo}:{hi}:{n}"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let u_values = (0..n).map(|i| hi - step * i as f64).collect();
        Self::new(u_values, r_values)
    }

    /// Data-driven default: 40 thresholds from the 40th down to the 0.1th
    /// percentile, default run lengths.
    pub fn default_for(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let hi = percentile(&sorted, 0.40);
        let lo = percentile(&sorted, 0.001);
        Self::linear(lo, hi, DEFAULT_GRID_POINTS, DEFAULT_R_VALUES.to_vec())
    }

    /// Spacing between adjacent thresholds (for evenly spaced grids).
    pub fn step(&self) -> f64 {
        (self.u_values[0] - self.u_values[self.u_values.len() - 1]) / (self.u_values.len() - 1) as f64
    }
}

/// Percentile of sorted data, linear between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean of `u - x` over samples `x < u`.
pub fn mean_excess(samples: &[f64], u: f64) -> Result<f64> {
    let (sum, count) = samples
        .iter()
        .filter(|&&x| x < u)
        .fold((0.0, 0usize), |(s, c), &x| (s + (u - x), c + 1));
    if count == 0 {
        return Err(Error::EmptyTail { u });
    }
    Ok(sum / count as f64)
}

/// Coefficient of determination of the least-squares line through
/// `points`. A curve with zero variance counts as perfectly linear.
pub fn rsquared(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "R² needs at least 3 points, got {}",
            points.len()
        )));
    }
    Ok(rsquared_iter(points.iter().copied()))
}

fn rsquared_iter(points: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if syy <= n * (4.0 * f64::EPSILON * my.abs().max(1.0)).powi(2) {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanCell {
    pub u: f64,
    pub r: usize,
    pub mean_excess: f64,
    pub xi: f64,
    pub sigma: f64,
    /// Modified scale `σ̃ - ξ u`.
    pub sigma_star: f64,
    /// Number of cluster minima (the exceedances that were fitted).
    pub n_exceed: usize,
    pub loglik: f64,
    /// Standard errors of the three curves at this cell (mean excess from
    /// the sample spread, the others from the observed information); zero
    /// when unavailable.
    pub se: [f64; 3],
}

/// Which tracked curve of a scan column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    MeanExcess,
    Shape,
    ModifiedScale,
}

impl Curve {
    pub const ALL: [Curve; 3] = [Curve::MeanExcess, Curve::Shape, Curve::ModifiedScale];

    fn value(self, cell: &ScanCell) -> f64 {
        match self {
            Curve::MeanExcess => cell.mean_excess,
            Curve::Shape => cell.xi,
            Curve::ModifiedScale => cell.sigma_star,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdScan {
    pub grid: ScanGrid,
    /// `cells[ri][ui]` for `r_values[ri]`, `u_values[ui]`; `None` when fewer
    /// than 10 exceedances remain or the fit failed.
    pub cells: Vec<Vec<Option<ScanCell>>>,
    /// Raw number of samples below each threshold.
    pub n_below: Vec<usize>,
}

impl ThresholdScan {
    pub fn cell(&self, u_index: usize, r_index: usize) -> Option<&ScanCell> {
        self.cells[r_index][u_index].as_ref()
    }

    /// Populated cells of one run length, in grid order (descending `u`).
    pub fn column(&self, r_index: usize) -> impl Iterator<Item = &ScanCell> + Clone {
        self.cells[r_index].iter().flatten()
    }

    pub fn populated(&self) -> usize {
        self.cells.iter().flatten().flatten().count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCAN_CSV_HEADER);
        out.push('\n');
        for (ri, row) in self.cells.iter().enumerate() {
            for (ui, cell) in row.iter().enumerate() {
                let u = self.grid.u_values[ui];
                let r = self.grid.r_values[ri];
                match cell {
                    Some(c) => out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        fmt6(u),
                        r,
                        fmt6(c.mean_excess),
                        fmt6(c.xi),
                        fmt6(c.sigma),
                        fmt6(c.sigma_star),
                        c.n_exceed
                    )),
                    None => out.push_str(&format!("{},{},,,,,0\n", fmt6(u), r)),
                }
            }
        }
        out
    }
}

pub const SCAN_CSV_HEADER: &str = "u_dbm,r,mean_excess,xi,sigma,sigma_star,n_exceed";

fn fmt6(x: f64) -> String {
    crate::trace::fmt_sig(x, 6)
}

fn scan_threshold(pieces: &[&[f64]], u: f64, r_values: &[usize]) -> (usize, Vec<Option<ScanCell>>) {
    let below = BelowThreshold::collect(pieces, u);
    let cells = r_values
        .iter()
        .map(|&r| {
            let ys: Vec<f64> = below.minima(r).into_iter().map(|m| u - m).collect();
            if ys.len() < MIN_EXCEEDANCES {
                return None;
            }
            let fit = gpd_fit_mle(&ys).ok()?;
            let k = ys.len() as f64;
            let mean_excess = ys.iter().sum::<f64>() / k;
            let var_y = ys.iter().map(|y| (y - mean_excess).powi(2)).sum::<f64>() / (k - 1.0);
            let se = match gpd_covariance(&fit.params, &ys) {
                Some(v) => {
                    let var_star = v[0][0] + u * u * v[1][1] - 2.0 * u * v[0][1];
                    [(var_y / k).sqrt(), v[1][1].sqrt(), var_star.max(0.0).sqrt()]
                }
                None => [(var_y / k).sqrt(), 0.0, 0.0],
            };
            Some(ScanCell {
                u,
                r,
                mean_excess,
                xi: fit.params.shape,
                sigma: fit.params.scale,
                sigma_star: fit.params.scale - fit.params.shape * u,
                n_exceed: ys.len(),
                loglik: fit.loglik,
                se,
            })
        })
        .collect();
    (below.positions.len(), cells)
}

/// Evaluates every grid cell over the contiguous `pieces` of one group.
/// Cells are independent; with the `parallel` feature they run on the rayon
/// pool and the result is identical to sequential evaluation.
pub fn scan_pieces(pieces: &[&[f64]], grid: &ScanGrid) -> ThresholdScan {
    #[cfg(feature = "parallel")]
    let per_u: Vec<(usize, Vec<Option<ScanCell>>)> = {
        use rayon::prelude::*;
        grid.u_values
            .par_iter()
            .map(|&u| scan_threshold(pieces, u, &grid.r_values))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_u: Vec<(usize, Vec<Option<ScanCell>>)> = grid
        .u_values
        .iter()
        .map(|&u| scan_threshold(pieces, u, &grid.r_values))
        .collect();

    let mut cells = vec![Vec::with_capacity(grid.u_values.len()); grid.r_values.len()];
    let mut n_below = Vec::with_capacity(grid.u_values.len());
    for (count, column) in per_u {
        n_below.push(count);
        for (ri, cell) in column.into_iter().enumerate() {
            cells[ri].push(cell);
        }
    }
    ThresholdScan {
        grid: grid.clone(),
        cells,
        n_below,
    }
}

pub fn scan(samples: &[f64], grid: &ScanGrid) -> ThresholdScan {
    scan_pieces(&[samples], grid)
}

/// Linearity of the three curves for one run length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityRecord {
    pub r: usize,
    /// Largest threshold whose lower suffix is linear in the mean excess.
    pub u_star_mrl: Option<f64>,
    /// Same for both stability curves (shape and modified scale) jointly.
    pub u_star_stab: Option<f64>,
    /// Largest threshold where all three curves qualify together.
    pub u_star: Option<f64>,
    /// `(u*, R² mean excess, R² shape, R² modified scale)` for every
    /// candidate with enough points below it.
    pub r2_curves: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdChoice {
    pub u_opt: f64,
    pub r_opt: usize,
    pub r2_mrl: f64,
    pub r2_shape: f64,
    pub r2_modscale: f64,
    pub feasible: bool,
    pub per_r: Vec<LinearityRecord>,
}

impl ThresholdChoice {
    /// The choice this scan yields when the run length is fixed to `r`.
    pub fn at_run_length(&self, r: usize) -> Option<ThresholdChoice> {
        let record = self.per_r.iter().find(|rec| rec.r == r)?;
        let u = record.u_star?;
        let &(_, r2_mrl, r2_shape, r2_modscale) = record.r2_curves.iter().find(|t| t.0 == u)?;
        Some(ThresholdChoice {
            u_opt: u,
            r_opt: r,
            r2_mrl,
            r2_shape,
            r2_modscale,
            feasible: true,
            per_r: self.per_r.clone(),
        })
    }
}

/// Least-squares line through the suffix: R² and the root mean square of
/// the residuals, each in units of its point's standard error.
fn suffix_fit(column: &[&ScanCell], curve: Curve) -> (f64, f64) {
    let i = curve.index();
    let pts = column.iter().map(|c| (c.u, curve.value(c)));
    let r2 = rsquared_iter(pts.clone());
    let n = column.len() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let mut z2 = 0.0;
    for c in column {
        let e = curve.value(c) - my - slope * (c.u - mx);
        let se = c.se[i];
        z2 += if se > 0.0 && se.is_finite() { (e / se).powi(2) } else { f64::INFINITY };
    }
    (r2, (z2 / (n - 2.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionConfig {
    pub r2_min: f64,
    pub min_points: usize,
    /// Also accept a curve whose scatter about its least-squares line is no
    /// larger than the standard errors of its points. Without this an exact
    /// GPD tail, whose shape curve is flat up to estimation noise, almost
    /// never reaches the R² bar.
    pub noise_tolerant: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            r2_min: DEFAULT_R2_MIN,
            min_points: DEFAULT_MIN_POINTS,
            noise_tolerant: true,
        }
    }
}

/// Picks `(u, r)`: per run length, the largest threshold at which the mean
/// excess, shape and modified scale are all linear (R² ≥ `r2_min` over at
/// least `min_points` populated thresholds at or below it); then the largest
/// such threshold over run lengths, ties going to the smallest `r`. This is
/// the plain R² rule; see [`select_threshold_with`].
pub fn select_threshold(scan: &ThresholdScan, r2_min: f64, min_points: usize) -> ThresholdChoice {
    select_threshold_with(
        scan,
        &SelectionConfig {
            r2_min,
            min_points,
            noise_tolerant: false,
        },
    )
}

pub fn select_threshold_with(scan: &ThresholdScan, config: &SelectionConfig) -> ThresholdChoice {
    let min_points = config.min_points.max(3);
    let mut per_r = Vec::with_capacity(scan.grid.r_values.len());
    let mut best: Option<(f64, usize, [f64; 3])> = None;

    for (ri, &r) in scan.grid.r_values.iter().enumerate() {
        let column: Vec<&ScanCell> = scan.column(ri).collect();
        let mut record = LinearityRecord {
            r,
            u_star_mrl: None,
            u_star_stab: None,
            u_star: None,
            r2_curves: Vec::new(),
        };
        let mut joint_r2 = None;
        for start in 0..column.len() {
            let suffix = &column[start..];
            if suffix.len() < min_points {
                break;
            }
            let u = column[start].u;
            let fits = Curve::ALL.map(|c| suffix_fit(suffix, c));
            let r2 = fits.map(|f| f.0);
            record.r2_curves.push((u, r2[0], r2[1], r2[2]));
            let mut ok = [false; 3];
            for c in Curve::ALL {
                let (r2, z_rms) = fits[c.index()];
                ok[c.index()] = r2 >= config.r2_min
                    || (config.noise_tolerant && z_rms <= 1.0);
            }
            if ok[0] && record.u_star_mrl.is_none() {
                record.u_star_mrl = Some(u);
            }
            if ok[1] && ok[2] && record.u_star_stab.is_none() {
                record.u_star_stab = Some(u);
            }
            if ok.iter().all(|&b| b) && record.u_star.is_none() {
                record.u_star = Some(u);
                joint_r2 = Some(r2);
            }
        }
        if let (Some(u), Some(r2)) = (record.u_star, joint_r2) {
            if best.is_none_or(|(bu, _, _)| u > bu) {
                best = Some((u, r, r2));
            }
        }
        per_r.push(record);
    }

    match best {
        Some((u_opt, r_opt, r2)) => ThresholdChoice {
            u_opt,
            r_opt,
            r2_mrl: r2[0],
            r2_shape: r2[1],
            r2_modscale: r2[2],
            feasible: true,
            per_r,
        },
        None => ThresholdChoice {
            u_opt: f64::NAN,
            r_opt: 0,
            r2_mrl: f64::NAN,
            r2_shape: f64::NAN,
            r2_modscale: f64::NAN,
            feasible: false,
            per_r,
        },
    }
}
