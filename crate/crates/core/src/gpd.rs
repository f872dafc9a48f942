//! Generalized Pareto distribution for lower-tail exceedances `y = u - x`.
//!
//! Standard parameterization throughout:
//!
//! ```text
//! H(y) = 1 - (1 + ξ y / σ)^(-1/ξ)     ξ ≠ 0
//! H(y) = 1 - exp(-y / σ)              ξ = 0
//! ```
//!
//! with support `y ≥ 0`, bounded above by `-σ/ξ` when `ξ < 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadConfig};

/// Shapes with smaller magnitude use the exponential limit.
pub const SHAPE_EPS: f64 = 1e-6;
pub const SHAPE_MIN: f64 = -0.99;
pub const SHAPE_MAX: f64 = 2.0;
pub const MIN_EXCEEDANCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    /// Scale σ̃ in dB.
    pub scale: f64,
    /// Shape ξ.
    pub shape: f64,
}

impl GpdParams {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "GPD scale must be positive and finite, got {scale}"
            )));
        }
        if !shape.is_finite() {
            return Err(Error::InvalidArgument("GPD shape must be finite".into()));
        }
        Ok(Self { scale, shape })
    }

    fn is_exponential(&self) -> bool {
        self.shape.abs() < SHAPE_EPS
    }

    /// Upper end of the support; infinite unless `ξ < 0`.
    pub fn upper_bound(&self) -> f64 {
        if self.shape < 0.0 && !self.is_exponential() {
            -self.scale / self.shape
        } else {
            f64::INFINITY
        }
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        gpd_cdf(y, self)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        gpd_quantile(p, self)
    }

    /// Mean of the distribution, finite for `ξ < 1`.
    pub fn mean(&self) -> f64 {
        if self.shape < 1.0 {
            self.scale / (1.0 - self.shape)
        } else {
            f64::INFINITY
        }
    }
}

pub fn gpd_cdf(y: f64, params: &GpdParams) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "exceedance must be non-negative, got {y}"
        )));
    }
    Ok(cdf_unchecked(y, params))
}

pub(crate) fn cdf_unchecked(y: f64, params: &GpdParams) -> f64 {
    let GpdParams { scale, shape } = *params;
    if params.is_exponential() {
        return -(-y / scale).exp_m1();
    }
    if y >= params.upper_bound() {
        return 1.0;
    }
    let z = shape * y / scale;
    (-(-z.ln_1p() / shape).exp_m1()).clamp(0.0, 1.0)
}

pub fn gpd_quantile(p: f64, params: &GpdParams) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(quantile_unchecked(p, params))
}

pub(crate) fn quantile_unchecked(p: f64, params: &GpdParams) -> f64 {
    quantile_from_log_survival((-p).ln_1p(), params)
}

/// Quantile at survival probability `s = 1 - p`, accurate for tiny `s`.
pub(crate) fn quantile_from_survival(s: f64, params: &GpdParams) -> f64 {
    quantile_from_log_survival(s.ln(), params)
}

fn quantile_from_log_survival(log_surv: f64, params: &GpdParams) -> f64 {
    let GpdParams { scale, shape } = *params;
    if params.is_exponential() {
        -scale * log_surv
    } else {
        scale / shape * (-shape * log_surv).exp_m1()
    }
}

/// Log-likelihood of lower-tail exceedances; `-inf` when any value lies
/// outside the support.
pub fn gpd_loglik(params: &GpdParams, exceedances: &[f64]) -> f64 {
    loglik_raw(params.scale, params.shape, exceedances)
}

fn loglik_raw(scale: f64, shape: f64, ys: &[f64]) -> f64 {
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = ys.len() as f64;
    let inv_scale = 1.0 / scale;
    if shape.abs() < SHAPE_EPS {
        let mut sum = 0.0;
        for &y in ys {
            if !(y >= 0.0) {
                return f64::NEG_INFINITY;
            }
            sum += y;
        }
        return -n * scale.ln() - sum * inv_scale;
    }
    let ratio = shape * inv_scale;
    let mut sum_log = 0.0;
    for &y in ys {
        let z = ratio * y;
        if !(y >= 0.0) || z <= -1.0 {
            return f64::NEG_INFINITY;
        }
        sum_log += z.ln_1p();
    }
    -n * scale.ln() - (1.0 + 1.0 / shape) * sum_log
}

/// Gradient of [`gpd_loglik`] with respect to `(scale, shape)`.
pub fn gpd_loglik_gradient(params: &GpdParams, exceedances: &[f64]) -> [f64; 2] {
    let GpdParams { scale, shape } = *params;
    let mut d_scale = 0.0;
    let mut d_shape = 0.0;
    if params.is_exponential() {
        for &y in exceedances {
            let w = y / scale;
            d_scale += -1.0 / scale + w / scale;
            d_shape += 0.5 * w * w - w;
        }
    } else {
        for &y in exceedances {
            let w = y / scale;
            let z = 1.0 + shape * w;
            d_scale += -1.0 / scale + (1.0 + shape) * w / (scale * z);
            d_shape += (shape * w).ln_1p() / (shape * shape) - (1.0 + 1.0 / shape) * w / z;
        }
    }
    [d_scale, d_shape]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpdFit {
    pub params: GpdParams,
    /// Threshold in dBm the exceedances were measured from.
    pub u: f64,
    pub loglik: f64,
    pub n_exceedances: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl GpdFit {
    pub fn at_threshold(mut self, u: f64) -> Self {
        self.u = u;
        self
    }
}

/// Method-of-moments starting point, shape clamped to [-0.45, 0.45].
pub fn moment_initializer(exceedances: &[f64]) -> GpdParams {
    let n = exceedances.len() as f64;
    let mean = exceedances.iter().sum::<f64>() / n;
    let var = exceedances.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ratio = mean * mean / var;
    let shape = (0.5 * (1.0 - ratio)).clamp(-0.45, 0.45);
    let mut scale = 0.5 * mean * (ratio + 1.0);
    if shape < 0.0 {
        // keep the start inside the bounded support
        let ymax = exceedances.iter().cloned().fold(0.0, f64::max);
        scale = scale.max(-shape * ymax * 1.05);
    }
    GpdParams { scale, shape }
}

fn validate_exceedances(exceedances: &[f64]) -> Result<()> {
    if exceedances.len() < MIN_EXCEEDANCES {
        return Err(Error::TooFewExceedances {
            needed: MIN_EXCEEDANCES,
            got: exceedances.len(),
        });
    }
    if let Some(bad) = exceedances.iter().find(|y| !(**y > 0.0 && y.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "exceedances must be positive and finite, got {bad}"
        )));
    }
    let first = exceedances[0];
    if exceedances.iter().all(|&y| y == first) {
        return Err(Error::DegenerateTail);
    }
    Ok(())
}

fn negloglik_theta(theta: &[f64; 2], exceedances: &[f64]) -> f64 {
    let shape = theta[1];
    if !(SHAPE_MIN..=SHAPE_MAX).contains(&shape) {
        return f64::INFINITY;
    }
    -loglik_raw(theta[0].exp(), shape, exceedances)
}

fn finish(theta: [f64; 2], exceedances: &[f64], converged: bool, iterations: usize) -> GpdFit {
    let params = GpdParams {
        scale: theta[0].exp(),
        shape: theta[1],
    };
    let loglik = gpd_loglik(&params, exceedances);
    GpdFit {
        params,
        u: 0.0,
        loglik,
        n_exceedances: exceedances.len(),
        converged: converged && loglik.is_finite(),
        iterations,
    }
}

/// Maximum-likelihood fit by derivative-free Nelder-Mead on `(ln σ, ξ)`
/// from the moment estimator, stopping when the simplex diameter falls
/// below 1e-8 or after 2000 iterations. `ξ` is confined to
/// `[SHAPE_MIN, SHAPE_MAX]`.
pub fn gpd_fit_mle_simplex(exceedances: &[f64]) -> Result<GpdFit> {
    validate_exceedances(exceedances)?;
    let init = moment_initializer(exceedances);
    Ok(simplex_from(
        [init.scale.ln(), init.shape],
        exceedances,
        0,
    ))
}

fn simplex_from(start: [f64; 2], exceedances: &[f64], spent: usize) -> GpdFit {
    let min = nelder_mead(
        |theta| negloglik_theta(theta, exceedances),
        start,
        &NelderMeadConfig::default(),
    );
    finish(min.x, exceedances, min.converged, spent + min.iterations)
}

/// Log-likelihood with its gradient and Hessian in `(ln σ, ξ)`.
fn loglik_derivatives(theta: &[f64; 2], ys: &[f64]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let scale = theta[0].exp();
    let xi = theta[1];
    let n = ys.len() as f64;
    let mut sum_log = 0.0;
    let (mut g_a, mut g_x) = (-n, 0.0);
    let (mut h_aa, mut h_ax, mut h_xx) = (0.0, 0.0, 0.0);
    let exponential = xi.abs() < SHAPE_EPS;
    for &y in ys {
        let w = y / scale;
        let xw = xi * w;
        if xw <= -1.0 {
            return (f64::NEG_INFINITY, [0.0; 2], [[0.0; 2]; 2]);
        }
        let z = 1.0 + xw;
        let lz = xw.ln_1p();
        sum_log += if exponential { w } else { lz };
        let zz = z * z;
        g_a += (1.0 + xi) * w / z;
        h_aa -= (1.0 + xi) * w / zz;
        h_ax += w * (1.0 - w) / zz;
        if xw.abs() < 1e-3 {
            // series in ξ; the closed forms cancel catastrophically here
            let (w2, w3, w4, w5) = (w * w, w * w * w, w * w * w * w, w * w * w * w * w);
            g_x += 0.5 * w2 - w
                + xi * (w2 - 2.0 / 3.0 * w3)
                + xi * xi * (0.75 * w4 - w3)
                + xi * xi * xi * (w4 - 0.8 * w5);
            h_xx += w2 - 2.0 / 3.0 * w3 + xi * (1.5 * w4 - 2.0 * w3) + xi * xi * (3.0 * w4 - 2.4 * w5);
        } else {
            let inv = 1.0 / xi;
            g_x += lz * inv * inv - (1.0 + inv) * w / z;
            h_xx += 2.0 * w * inv * inv / z - 2.0 * lz * inv * inv * inv + (1.0 + inv) * w * w / zz;
        }
    }
    let ll = if exponential {
        -n * theta[0] - sum_log
    } else {
        -n * theta[0] - (1.0 + 1.0 / xi) * sum_log
    };
    (ll, [g_a, g_x], [[h_aa, h_ax], [h_ax, h_xx]])
}

/// Asymptotic covariance of `(σ̃, ξ)` from the observed information at
/// `params`; `None` when the information matrix is not positive definite.
pub fn gpd_covariance(params: &GpdParams, exceedances: &[f64]) -> Option<[[f64; 2]; 2]> {
    let theta = [params.scale.ln(), params.shape];
    let (ll, _, h) = loglik_derivatives(&theta, exceedances);
    let (a, b, c) = (-h[0][0], -h[0][1], -h[1][1]);
    let det = a * c - b * b;
    if !ll.is_finite() || !(a > 0.0 && det > 0.0) {
        return None;
    }
    // invert in (ln σ, ξ), then map ln σ to σ
    let (v_aa, v_ax, v_xx) = (c / det, -b / det, a / det);
    let s = params.scale;
    Some([[s * s * v_aa, s * v_ax], [s * v_ax, v_xx]])
}

/// Maximum-likelihood GPD fit on `(ln σ, ξ)` from the moment estimator.
///
/// Damped Newton steps with analytic derivatives and step halving do the
/// work; if they stall (non-concave region, boundary optimum) the search is
/// finished by Nelder-Mead from the best point found. `ξ` is confined to
/// `[SHAPE_MIN, SHAPE_MAX]`.
pub fn gpd_fit_mle(exceedances: &[f64]) -> Result<GpdFit> {
    validate_exceedances(exceedances)?;
    let init = moment_initializer(exceedances);
    let mut theta = [init.scale.ln(), init.shape];
    let (mut ll, mut grad, mut hess) = loglik_derivatives(&theta, exceedances);
    if !ll.is_finite() {
        return Ok(simplex_from(theta, exceedances, 0));
    }
    const MAX_NEWTON: usize = 100;
    for iter in 1..=MAX_NEWTON {
        // Newton direction on the negated Hessian, Levenberg-damped until
        // positive definite
        let (a, b, c) = (-hess[0][0], -hess[0][1], -hess[1][1]);
        let mut lambda = 0.0;
        let step = loop {
            let (a, c) = (a + lambda, c + lambda);
            let det = a * c - b * b;
            if a > 0.0 && det > 0.0 {
                break [(c * grad[0] - b * grad[1]) / det, (a * grad[1] - b * grad[0]) / det];
            }
            lambda = if lambda == 0.0 { 1e-6 * (a.abs() + c.abs()).max(1.0) } else { lambda * 10.0 };
            if !lambda.is_finite() {
                break [0.0, 0.0];
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = [theta[0] + t * step[0], theta[1] + t * step[1]];
            if (SHAPE_MIN..=SHAPE_MAX).contains(&cand[1]) {
                let (cll, cg, ch) = loglik_derivatives(&cand, exceedances);
                if cll.is_finite() && cll >= ll {
                    accepted = Some((cand, cll, cg, ch));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, cll, cg, ch)) = accepted else {
            return Ok(simplex_from(theta, exceedances, iter));
        };
        let moved = (cand[0] - theta[0]).abs().max((cand[1] - theta[1]).abs());
        let gained = cll - ll;
        theta = cand;
        ll = cll;
        grad = cg;
        hess = ch;
        if moved < 1e-10 || (gained <= 1e-12 * ll.abs() && moved < 1e-7) {
            return Ok(finish(theta, exceedances, true, iter));
        }
    }
    Ok(simplex_from(theta, exceedances, MAX_NEWTON))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PortableRng;

    fn p(scale: f64, shape: f64) -> GpdParams {
        GpdParams::new(scale, shape).unwrap()
    }

    fn draw(params: &GpdParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = PortableRng::new(seed);
        (0..n).map(|_| quantile_unchecked(rng.uniform(), params)).collect()
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(gpd_cdf(0.0, &p(3.0, -0.2)).unwrap(), 0.0);
        assert!((gpd_cdf(1.0, &p(1.0, 0.0)).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-12);
        assert!((gpd_cdf(1.0, &p(1.0, 0.5)).unwrap() - 5.0 / 9.0).abs() < 1e-12);
        assert_eq!(gpd_cdf(2.0, &p(1.0, -0.5)).unwrap(), 1.0);
        assert_eq!(gpd_cdf(7.0, &p(1.0, -0.5)).unwrap(), 1.0);
        assert!(gpd_cdf(-0.1, &p(1.0, 0.1)).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(gpd_quantile(0.0, &p(2.0, 0.3)).unwrap(), 0.0);
        let q = gpd_quantile(1.0 - (-1f64).exp(), &p(2.0, 0.0)).unwrap();
        assert!((q - 2.0).abs() < 1e-12);
        assert!(gpd_quantile(1.0, &p(1.0, 0.0)).is_err());
        assert!(gpd_quantile(-0.01, &p(1.0, 0.0)).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for shape in [-0.7, -0.284, 0.0, 1e-7, 0.2, 0.9] {
            let params = p(8.08, shape);
            let top = params.upper_bound().min(200.0);
            for i in 0..50 {
                let y = top * i as f64 / 50.0;
                let f = gpd_cdf(y, &params).unwrap();
                let back = gpd_quantile(f, &params).unwrap();
                // conditioning of the inverse grows like 1/(1 - F)
                let tol = 1e-13 * y.max(1.0) / (1.0 - f);
                assert!((back - y).abs() < tol, "shape={shape} y={y} back={back}");
            }
        }
    }

    #[test]
    fn loglik_examples() {
        assert!((gpd_loglik(&p(1.0, 0.0), &[1.0]) + 1.0).abs() < 1e-15);
        assert!((gpd_loglik(&p(1.0, 0.5), &[1.0]) + 3.0 * 1.5f64.ln()).abs() < 1e-12);
        assert!((gpd_loglik(&p(1.0, 0.5), &[1.0]) + 1.216_395).abs() < 1e-6);
        assert_eq!(gpd_loglik(&p(1.0, -0.5), &[3.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_matches_log_density_sum() {
        // log density from the derivative of the CDF by finite differences
        let params = p(2.5, -0.3);
        let ys = [0.3, 1.1, 4.0, 7.9];
        let h = 1e-6;
        let numeric: f64 = ys
            .iter()
            .map(|&y| ((cdf_unchecked(y + h, &params) - cdf_unchecked(y - h, &params)) / (2.0 * h)).ln())
            .sum();
        assert!((numeric - gpd_loglik(&params, &ys)).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_bad_samples() {
        assert!(matches!(gpd_fit_mle(&[1.0; 5]), Err(Error::TooFewExceedances { .. })));
        assert_eq!(gpd_fit_mle(&[2.0; 20]).unwrap_err(), Error::DegenerateTail);
        let mut ys = vec![1.0; 12];
        ys[3] = -1.0;
        ys[4] = 2.0;
        assert!(matches!(gpd_fit_mle(&ys), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fit_recovers_ramp_parameters() {
        let truth = p(8.08, -0.284);
        let ys = draw(&truth, 10_000, 7);
        let fit = gpd_fit_mle(&ys).unwrap();
        assert!(fit.converged);
        assert!((fit.params.shape - truth.shape).abs() < 0.05, "{:?}", fit.params);
        assert!((fit.params.scale / truth.scale - 1.0).abs() < 0.05, "{:?}", fit.params);
        assert!(fit.loglik >= gpd_loglik(&moment_initializer(&ys), &ys));
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let ys = draw(&p(3.0, 0.15), 2_000, 11);
        let base = gpd_fit_mle(&ys).unwrap();
        for c in [0.5, 4.0] {
            let scaled: Vec<f64> = ys.iter().map(|y| c * y).collect();
            let fit = gpd_fit_mle(&scaled).unwrap();
            assert!((fit.params.shape - base.params.shape).abs() < 1e-6);
            assert!((fit.params.scale / (c * base.params.scale) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cdf_and_quantile_monotone() {
        let params = p(4.0, -0.3);
        let mut prev = -1.0;
        for i in 0..200 {
            let c = gpd_cdf(i as f64 * 0.07, &params).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        let mut prev = -1.0;
        for i in 0..200 {
            let q = gpd_quantile(i as f64 / 200.0, &params).unwrap();
            assert!(q >= prev);
            prev = q;
        }
    }
}
