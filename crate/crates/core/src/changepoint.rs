//! Piecewise-constant (change-point) tail model over groups and the
//! deviance test against a stationary competitor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decluster::{decluster_pieces, DeclusterConfig};
use crate::error::{Error, Result};
use crate::gpd::{gpd_fit_mle, gpd_loglik, GpdFit, GpdParams, SHAPE_MAX, SHAPE_MIN};
use crate::optim::{nelder_mead, NelderMeadConfig};
use crate::trace::{GroupSegmentation, PowerTrace};

pub use crate::special::chi2_quantile;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentModel {
    pub label: String,
    pub u: f64,
    pub r: usize,
    pub params: GpdParams,
    pub loglik: f64,
    pub n_exceed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointModel {
    pub segments: Vec<SegmentModel>,
    pub total_loglik: f64,
    /// Free parameters: scale and shape per segment.
    pub complexity: usize,
}

impl ChangePointModel {
    pub fn new(segments: Vec<SegmentModel>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("change-point model needs a segment".into()));
        }
        let total_loglik = segments.iter().map(|s| s.loglik).sum();
        let complexity = 2 * segments.len();
        Ok(Self {
            segments,
            total_loglik,
            complexity,
        })
    }

    pub fn segment(&self, label: &str) -> Option<&SegmentModel> {
        self.segments.iter().find(|s| s.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevianceResult {
    #[serde(rename = "D")]
    pub d: f64,
    pub c_alpha: f64,
    pub alpha: f64,
    pub k: u32,
    pub reject_stationary: bool,
}

/// `D = 2 (ℓ_ns - ℓ_s)` against the `1 - α` quantile of `χ²_k`.
pub fn deviance_test(loglik_ns: f64, loglik_s: f64, k: u32, alpha: f64) -> Result<DevianceResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("degrees of freedom must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if !loglik_ns.is_finite() || !loglik_s.is_finite() {
        return Err(Error::InvalidArgument("log-likelihoods must be finite".into()));
    }
    let d = 2.0 * (loglik_ns - loglik_s);
    let c_alpha = chi2_quantile(1.0 - alpha, k)?;
    Ok(DevianceResult {
        d,
        c_alpha,
        alpha,
        k,
        reject_stationary: d > c_alpha,
    })
}

/// `(u, σ̃, ξ)` in force at time `t`: the segment of the latest sample at or
/// before `t`.
pub fn theta_at(
    model: &ChangePointModel,
    trace: &PowerTrace,
    segmentation: &GroupSegmentation,
    t: u64,
) -> Result<(f64, f64, f64)> {
    let samples = trace.samples();
    let last = samples.last().ok_or(Error::EmptyTrace)?;
    if t < samples[0].t || t > last.t {
        return Err(Error::OutsideSegments { t });
    }
    let index = samples.partition_point(|s| s.t <= t) - 1;
    let (_, group) = segmentation.owner_of(index).ok_or(Error::OutsideSegments { t })?;
    let seg = model.segment(&group.label).ok_or(Error::OutsideSegments { t })?;
    Ok((seg.u, seg.params.scale, seg.params.shape))
}

/// Exceedances of one group's cluster minima at `(u, r)`.
pub fn group_exceedances(
    powers: &[f64],
    segmentation: &GroupSegmentation,
    label: &str,
    u: f64,
    r: usize,
) -> Result<Vec<f64>> {
    let group = segmentation
        .get(label)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown group `{label}`")))?;
    let config = DeclusterConfig::new(u, r)?;
    let minima = decluster_pieces(&group.slices(powers), &config)?;
    Ok(minima.exceedances(u))
}

/// Per group: decluster at its `(u, r)`, fit, and collect the segments in
/// segmentation order.
pub fn fit_changepoint(
    trace: &PowerTrace,
    segmentation: &GroupSegmentation,
    choices: &BTreeMap<String, (f64, usize)>,
) -> Result<ChangePointModel> {
    let powers = trace.powers();
    let segments = segmentation
        .groups
        .iter()
        .map(|g| {
            let &(u, r) = choices
                .get(&g.label)
                .ok_or_else(|| Error::InfeasibleThreshold { group: g.label.clone() })?;
            let fit_one = || -> Result<SegmentModel> {
                let ys = group_exceedances(&powers, segmentation, &g.label, u, r)?;
                let fit = gpd_fit_mle(&ys)?;
                Ok(segment_from_fit(&g.label, u, r, &fit))
            };
            fit_one().map_err(|e| e.in_group(&g.label))
        })
        .collect::<Result<Vec<_>>>()?;
    ChangePointModel::new(segments)
}

pub(crate) fn segment_from_fit(label: &str, u: f64, r: usize, fit: &GpdFit) -> SegmentModel {
    SegmentModel {
        label: label.to_string(),
        u,
        r,
        params: fit.params,
        loglik: fit.loglik,
        n_exceed: fit.n_exceedances,
    }
}

/// A stationary tail seen through several thresholds: one shape `ξ`, and
/// scales tied by `σ̃(u) = σ̃(u_ref) + ξ (u_ref - u)`, which is how a GPD
/// tail rescales when the threshold moves deeper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStationaryFit {
    /// Shallowest of the thresholds.
    pub u_ref: f64,
    pub params: GpdParams,
    pub loglik: f64,
    pub n_exceed: usize,
    pub converged: bool,
}

impl PooledStationaryFit {
    pub fn scale_at(&self, u: f64) -> f64 {
        self.params.scale + self.params.shape * (self.u_ref - u)
    }
}

fn pooled_loglik(scale_ref: f64, shape: f64, u_ref: f64, sets: &[(f64, &[f64])]) -> f64 {
    let mut total = 0.0;
    for &(u, ys) in sets {
        let scale = scale_ref + shape * (u_ref - u);
        if !(scale > 0.0) {
            return f64::NEG_INFINITY;
        }
        total += gpd_loglik(&GpdParams { scale, shape }, ys);
    }
    total
}

/// Maximum-likelihood fit of the tied-scale stationary model to exceedance
/// sets `(u, exceedances)`.
pub fn fit_pooled_stationary(sets: &[(f64, &[f64])]) -> Result<PooledStationaryFit> {
    if sets.is_empty() {
        return Err(Error::InvalidArgument("no exceedance sets to pool".into()));
    }
    let u_ref = sets.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let pooled: Vec<f64> = sets.iter().flat_map(|s| s.1.iter().copied()).collect();
    // start from one GPD for everything, moved to the reference threshold
    let first = gpd_fit_mle(&pooled)?;
    let n = pooled.len() as f64;
    let u_mean = sets.iter().map(|s| s.0 * s.1.len() as f64).sum::<f64>() / n;
    let shape0 = first.params.shape;
    let scale0 = (first.params.scale - shape0 * (u_ref - u_mean)).max(1e-3 * first.params.scale);
    let objective = |theta: &[f64; 2]| {
        if !(SHAPE_MIN..=SHAPE_MAX).contains(&theta[1]) {
            return f64::INFINITY;
        }
        -pooled_loglik(theta[0].exp(), theta[1], u_ref, sets)
    };
    let mut start = [scale0.ln(), shape0];
    if !objective(&start).is_finite() {
        start = [first.params.scale.ln(), 0.0];
    }
    let cfg = NelderMeadConfig::default();
    let mut best = nelder_mead(objective, start, &cfg);
    // a restart from the optimum guards against a collapsed simplex
    let again = nelder_mead(objective, best.x, &cfg);
    if again.value <= best.value {
        best = again;
    }
    Ok(PooledStationaryFit {
        u_ref,
        params: GpdParams {
            scale: best.x[0].exp(),
            shape: best.x[1],
        },
        loglik: -best.value,
        n_exceed: pooled.len(),
        converged: best.converged && best.value.is_finite(),
    })
}

/// Stationary competitor fitted on exactly the change-point model's
/// exceedances, so the two models are nested.
pub fn fit_nested_stationary(
    trace: &PowerTrace,
    segmentation: &GroupSegmentation,
    model: &ChangePointModel,
) -> Result<PooledStationaryFit> {
    let powers = trace.powers();
    let owned: Vec<(f64, Vec<f64>)> = model
        .segments
        .iter()
        .map(|s| {
            group_exceedances(&powers, segmentation, &s.label, s.u, s.r)
                .map(|e| (s.u, e))
                .map_err(|e| e.in_group(&s.label))
        })
        .collect::<Result<_>>()?;
    let sets: Vec<(f64, &[f64])> = owned.iter().map(|(u, e)| (*u, e.as_slice())).collect();
    fit_pooled_stationary(&sets)
}
