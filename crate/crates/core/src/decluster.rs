//! Runs declustering of below-threshold samples.
//!
//! A cluster opens at the first sample `< u` and stays open until `r`
//! consecutive samples `>= u` have been seen; its representative is the
//! minimum of its below-threshold members. The end of a contiguous piece of
//! data closes any open cluster.

use std::num::NonZeroUsize;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeclusterConfig {
    /// Threshold in dBm.
    pub u: f64,
    /// Number of consecutive samples at or above `u` that ends a cluster.
    pub r: NonZeroUsize,
}

impl DeclusterConfig {
    pub fn new(u: f64, r: usize) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        let r = NonZeroUsize::new(r)
            .ok_or_else(|| Error::InvalidArgument("run length r must be at least 1".into()))?;
        Ok(Self { u, r })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMinima {
    pub minima: Vec<f64>,
    /// Inclusive (first, last) below-threshold indices of each cluster.
    pub cluster_spans: Vec<(usize, usize)>,
    pub source_count: usize,
}

impl ClusterMinima {
    pub fn len(&self) -> usize {
        self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minima.is_empty()
    }

    /// Exceedances `u - min` of the cluster minima.
    pub fn exceedances(&self, u: f64) -> Vec<f64> {
        self.minima.iter().map(|m| u - m).collect()
    }
}

/// Position (in the concatenated source) and value of every sample below `u`,
/// plus the indices where a new contiguous piece begins.
#[derive(Debug, Clone)]
pub(crate) struct BelowThreshold {
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
    /// `breaks[j]` is true when `positions[j]` starts a new piece.
    pub breaks: Vec<bool>,
    pub source_count: usize,
}

impl BelowThreshold {
    pub fn collect(pieces: &[&[f64]], u: f64) -> Self {
        let mut positions = Vec::new();
        let mut values = Vec::new();
        let mut breaks = Vec::new();
        let mut offset = 0;
        for piece in pieces {
            let mut first_in_piece = true;
            for (i, &x) in piece.iter().enumerate() {
                if x < u {
                    positions.push(offset + i);
                    values.push(x);
                    breaks.push(first_in_piece);
                    first_in_piece = false;
                }
            }
            offset += piece.len();
        }
        Self {
            positions,
            values,
            breaks,
            source_count: offset,
        }
    }

    /// Walks the clusters for run length `r`, calling `emit(first, last, min)`
    /// with indices into `positions`.
    pub fn for_each_cluster(&self, r: usize, mut emit: impl FnMut(usize, usize, f64)) {
        if self.positions.is_empty() {
            return;
        }
        let mut start = 0;
        let mut min = self.values[0];
        for j in 1..self.positions.len() {
            // samples strictly between two below-threshold samples are >= u
            let gap = self.positions[j] - self.positions[j - 1] - 1;
            if self.breaks[j] || gap >= r {
                emit(start, j - 1, min);
                start = j;
                min = self.values[j];
            } else if self.values[j] < min {
                min = self.values[j];
            }
        }
        emit(start, self.positions.len() - 1, min);
    }

    pub fn minima(&self, r: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_cluster(r, |_, _, m| out.push(m));
        out
    }
}

pub fn decluster(samples: &[f64], config: &DeclusterConfig) -> Result<ClusterMinima> {
    decluster_pieces(&[samples], config)
}

/// Declusters several contiguous pieces of one group; spans index the
/// concatenation of the pieces and clusters never cross a piece boundary.
pub fn decluster_pieces(pieces: &[&[f64]], config: &DeclusterConfig) -> Result<ClusterMinima> {
    if pieces.iter().all(|p| p.is_empty()) {
        return Err(Error::InvalidArgument("no samples to decluster".into()));
    }
    let below = BelowThreshold::collect(pieces, config.u);
    if below.positions.is_empty() {
        return Err(Error::EmptyTail { u: config.u });
    }
    let mut minima = Vec::new();
    let mut cluster_spans = Vec::new();
    below.for_each_cluster(config.r.get(), |first, last, m| {
        minima.push(m);
        cluster_spans.push((below.positions[first], below.positions[last]));
    });
    Ok(ClusterMinima {
        minima,
        cluster_spans,
        source_count: below.source_count,
    })
}
