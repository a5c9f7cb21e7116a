//! Equal-frequency (tercile) discretization of the RUL target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-level RUL label: 0 = low, 1 = mid, 2 = high remaining life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum RulClass {
    Low = 0,
    Mid = 1,
    High = 2,
}

impl RulClass {
    pub const ALL: [RulClass; 3] = [RulClass::Low, RulClass::Mid, RulClass::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<RulClass> {
        match index {
            0 => Ok(RulClass::Low),
            1 => Ok(RulClass::Mid),
            2 => Ok(RulClass::High),
            other => Err(Error::Label(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RulClass::Low => "low",
            RulClass::Mid => "mid",
            RulClass::High => "high",
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    /// Inverse of [`RulClass::one_hot`]: index of the largest entry, lowest index on ties.
    pub fn from_one_hot(v: &[f64; 3]) -> RulClass {
        RulClass::ALL[argmax(v)]
    }
}

impl From<RulClass> for u8 {
    fn from(c: RulClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for RulClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        RulClass::from_index(v as usize)
    }
}

impl std::fmt::Display for RulClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TercileThresholds {
    pub t1: f64,
    pub t2: f64,
}

impl TercileThresholds {
    /// Value-based classification of a single RUL. Matches the rank-based
    /// labels of [`bin_rul_terciles`] except inside runs of tied values that
    /// straddle a boundary.
    pub fn classify(&self, rul: f64) -> RulClass {
        if rul <= self.t1 {
            RulClass::Low
        } else if rul <= self.t2 {
            RulClass::Mid
        } else {
            RulClass::High
        }
    }
}

/// Splits rows into three equal-frequency classes by RUL rank.
///
/// Rows are ordered by (rul, row index); the first `n/3` ranks are class 0,
/// ranks up to `2n/3` class 1, the rest class 2 (integer division). Ties in
/// RUL are broken by row order, so class counts always differ by at most one.
/// The thresholds are the RUL values at the last rank of classes 0 and 1.
pub fn bin_rul_terciles(rul: &[f64]) -> Result<(Vec<RulClass>, TercileThresholds)> {
    let n = rul.len();
    if n < 3 {
        return Err(Error::TooFewRows(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rul[a].total_cmp(&rul[b]).then(a.cmp(&b)));

    let distinct = 1 + order
        .windows(2)
        .filter(|w| rul[w[0]] != rul[w[1]])
        .count();
    if distinct < 3 {
        return Err(Error::DegenerateTarget(distinct));
    }

    let c1 = n / 3;
    let c2 = 2 * n / 3;
    let mut labels = vec![RulClass::Low; n];
    for (rank, &row) in order.iter().enumerate() {
        labels[row] = if rank < c1 {
            RulClass::Low
        } else if rank < c2 {
            RulClass::Mid
        } else {
            RulClass::High
        };
    }
    let thresholds = TercileThresholds {
        t1: rul[order[c1 - 1]],
        t2: rul[order[c2 - 1]],
    };
    Ok((labels, thresholds))
}

pub fn class_counts(labels: &[RulClass]) -> [usize; 3] {
    let mut counts = [0; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}
