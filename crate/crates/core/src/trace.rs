//! Timestamped received-power traces and their grouping by external factor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t_ms,power_dbm,group";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Milliseconds since the start of the capture.
    pub t: u64,
    /// Received power in dBm.
    pub power: f64,
    pub group: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerTrace {
    samples: Vec<PowerSample>,
    pub meta: BTreeMap<String, String>,
}

impl PowerTrace {
    /// Builds a trace, checking finiteness, label charset and strictly
    /// increasing timestamps.
    pub fn new(samples: Vec<PowerSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.power.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: power must be finite"
                )));
            }
            if !valid_label(&s.group) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i}: invalid group label `{}`",
                    s.group
                )));
            }
            if i > 0 {
                let prev = samples[i - 1].t;
                if s.t == prev {
                    return Err(Error::DuplicateTimestamp { line: i + 2 });
                }
                if s.t < prev {
                    return Err(Error::NonMonotoneTimestamp { line: i + 2 });
                }
            }
        }
        Ok(Self {
            samples,
            meta: BTreeMap::new(),
        })
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn powers(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.power).collect()
    }

    /// Writes the trace in the same CSV dialect `parse_trace` reads. Powers
    /// carry 6 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 24 + 32);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.t, fmt_sig(s.power, 6), s.group);
        }
        out
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Rounds `x` to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

/// Shortest decimal text of `x` rounded to `digits` significant digits.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    let r = round_sig(x, digits);
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}

/// Parses the `t_ms,power_dbm,group` CSV format. LF and CRLF line endings
/// are accepted; blank lines are skipped.
pub fn parse_trace(csv_text: &str) -> Result<PowerTrace> {
    let mut lines = csv_text.lines().enumerate();
    let header = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .map(|(_, l)| l.trim().trim_start_matches('\u{feff}'));
    match header {
        None => return Err(Error::EmptyTrace),
        Some(h) if h != CSV_HEADER => return Err(Error::BadHeader),
        Some(_) => {}
    }

    let mut samples: Vec<PowerSample> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(t), Some(p), Some(g), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::MalformedRow {
                line: line_no,
                message: "expected 3 comma-separated fields".into(),
            });
        };
        let t: u64 = t.trim().parse().map_err(|_| Error::MalformedRow {
            line: line_no,
            message: format!("invalid timestamp `{t}`"),
        })?;
        let power: f64 = p.trim().parse().map_err(|_| Error::MalformedRow {
            line: line_no,
            message: format!("invalid power `{p}`"),
        })?;
        if !power.is_finite() {
            return Err(Error::MalformedRow {
                line: line_no,
                message: "power must be finite".into(),
            });
        }
        let group = g.trim();
        if !valid_label(group) {
            return Err(Error::MalformedRow {
                line: line_no,
                message: format!("invalid group label `{group}`"),
            });
        }
        if let Some(prev) = samples.last() {
            if t == prev.t {
                return Err(Error::DuplicateTimestamp { line: line_no });
            }
            if t < prev.t {
                return Err(Error::NonMonotoneTimestamp { line: line_no });
            }
        }
        samples.push(PowerSample {
            t,
            power,
            group: group.to_string(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(PowerTrace {
        samples,
        meta: BTreeMap::new(),
    })
}

/// Index ranges (half-open) owned by one group label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupRanges {
    pub label: String,
    pub ranges: Vec<Range<usize>>,
}

impl GroupRanges {
    pub fn n_samples(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    /// Contiguous power slices of this group, in time order.
    pub fn slices<'a>(&self, powers: &'a [f64]) -> Vec<&'a [f64]> {
        self.ranges.iter().map(|r| &powers[r.clone()]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupSegmentation {
    /// Ordered by first appearance in the trace.
    pub groups: Vec<GroupRanges>,
}

impl GroupSegmentation {
    pub fn count(&self) -> usize {
        self.groups.len()
    }

    pub fn get(&self, label: &str) -> Option<&GroupRanges> {
        self.groups.iter().find(|g| g.label == label)
    }

    /// Group owning sample `index`.
    pub fn owner_of(&self, index: usize) -> Option<(usize, &GroupRanges)> {
        self.groups
            .iter()
            .enumerate()
            .find(|(_, g)| g.ranges.iter().any(|r| r.contains(&index)))
    }
}

/// Splits the trace into maximal runs of equal label and pools the runs
/// per label.
pub fn segment_by_group(trace: &PowerTrace) -> Result<GroupSegmentation> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut groups: Vec<GroupRanges> = Vec::new();
    let samples = trace.samples();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].group != samples[start].group {
            let label = &samples[start].group;
            match groups.iter_mut().find(|g| &g.label == label) {
                Some(g) => g.ranges.push(start..i),
                None => groups.push(GroupRanges {
                    label: label.clone(),
                    ranges: std::iter::once(start..i).collect(),
                }),
            }
            start = i;
        }
    }
    Ok(GroupSegmentation { groups })
}
