//! Synthetic non-stationary traces with known tails.
//!
//! Each segment has a spliced marginal: below `tail_u` the exceedance
//! `tail_u - X` is exactly GPD(`tail_params`) and carries probability
//! `tail_prob`; above it the law is a Gaussian truncated to `[tail_u, ∞)`.
//! Temporal dependence comes from a Gaussian copula driven by a latent
//! AR(1) process with coefficient `ar_coeff`, so marginals stay exact while
//! extremes cluster.
//!
//! Random numbers come from [`PortableRng`]: ChaCha20 keyed by
//! `rand_core::SeedableRng::seed_from_u64(seed)`, one stream per segment
//! (stream id = segment index). Uniforms are `((w >> 11) + 0.5) * 2^-53` of
//! each 64-bit word `w`; normals use the Box-Muller transform with both
//! outputs consumed in order (cos first).

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpd::{quantile_from_survival, GpdParams};
use crate::special::{normal_cdf, normal_quantile};
use crate::trace::{PowerSample, PowerTrace};

/// Sample spacing, matching a 2 ms acquisition grid.
pub const STEP_MS: u64 = 2;

pub struct PortableRng {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            inner,
            spare_normal: None,
        }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub label: String,
    pub n: usize,
    pub bulk_mean: f64,
    pub bulk_sd: f64,
    pub tail_u: f64,
    pub tail_params: GpdParams,
    pub tail_prob: f64,
    #[serde(default)]
    pub ar_coeff: f64,
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::InvalidSpec {
                label: self.label.clone(),
                message: message.to_string(),
            })
        };
        if self.label.is_empty()
            || !self
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return bad("label must be non-empty and use only letters, digits, `_`, `-`");
        }
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !(self.tail_prob > 0.0 && self.tail_prob < 0.5) {
            return bad("tail_prob must lie in (0, 0.5)");
        }
        if !(self.bulk_sd > 0.0 && self.bulk_sd.is_finite()) {
            return bad("bulk_sd must be positive");
        }
        if !self.bulk_mean.is_finite() || !self.tail_u.is_finite() {
            return bad("bulk_mean and tail_u must be finite");
        }
        if self.tail_u >= self.bulk_mean {
            return bad("tail_u must lie below the bulk median (bulk_mean)");
        }
        if !(0.0..1.0).contains(&self.ar_coeff) {
            return bad("ar_coeff must lie in [0, 1)");
        }
        GpdParams::new(self.tail_params.scale, self.tail_params.shape).map_err(|e| {
            Error::InvalidSpec {
                label: self.label.clone(),
                message: e.to_string(),
            }
        })?;
        Ok(())
    }

    /// Inverse of the spliced marginal CDF.
    fn marginal_quantile(&self, u: f64, bulk_floor: f64) -> f64 {
        if u < self.tail_prob {
            // survival level u / tail_prob: the smallest uniforms map to the
            // deepest fades
            self.tail_u - quantile_from_survival(u / self.tail_prob, &self.tail_params)
        } else {
            let v = (u - self.tail_prob) / (1.0 - self.tail_prob);
            let level = bulk_floor + (1.0 - bulk_floor) * v;
            (self.bulk_mean + self.bulk_sd * normal_quantile(level)).max(self.tail_u)
        }
    }

    fn powers(&self, rng: &mut PortableRng) -> Vec<f64> {
        let bulk_floor = normal_cdf((self.tail_u - self.bulk_mean) / self.bulk_sd);
        let innovation_sd = (1.0 - self.ar_coeff * self.ar_coeff).sqrt();
        let mut latent = rng.normal();
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            if i > 0 {
                latent = self.ar_coeff * latent + innovation_sd * rng.normal();
            }
            out.push(self.marginal_quantile(normal_cdf(latent), bulk_floor));
        }
        out
    }
}

/// Generates a labeled trace, segments in the given order.
pub fn generate(specs: &[SegmentSpec], seed: u64) -> Result<PowerTrace> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no segment specs".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    let total: usize = specs.iter().map(|s| s.n).sum();
    let mut samples = Vec::with_capacity(total);
    let mut t = 0u64;
    for (idx, spec) in specs.iter().enumerate() {
        let mut rng = PortableRng::with_stream(seed, idx as u64);
        for power in spec.powers(&mut rng) {
            samples.push(PowerSample {
                t,
                power,
                group: spec.label.clone(),
            });
            t += STEP_MS;
        }
    }
    let mut trace = PowerTrace::new(samples)?;
    trace.meta.insert("source".into(), format!("synthetic seed={seed}"));
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub tail_u: f64,
    pub tail_fraction: f64,
}

/// Per-spec sample counts and the empirical fraction of samples below the
/// splice threshold.
pub fn summarize(specs: &[SegmentSpec], trace: &PowerTrace) -> Vec<GroupSummary> {
    let mut offset = 0;
    specs
        .iter()
        .map(|spec| {
            let part = &trace.samples()[offset..offset + spec.n];
            offset += spec.n;
            let below = part.iter().filter(|s| s.power < spec.tail_u).count();
            GroupSummary {
                label: spec.label.clone(),
                n: spec.n,
                tail_u: spec.tail_u,
                tail_fraction: below as f64 / spec.n as f64,
            }
        })
        .collect()
}
