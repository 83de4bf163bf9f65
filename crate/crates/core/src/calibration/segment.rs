use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    /// De-peg starts at the first bar with `m < -depeg_threshold`.
    pub depeg_threshold: f64,
    /// Band around par that counts as stable.
    pub stable_band: f64,
    /// Consecutive in-band bars needed to call the peg restored.
    pub stable_run: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            depeg_threshold: 0.005,
            stable_band: 0.001,
            stable_run: 60,
        }
    }
}

/// Inclusive index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub first: usize,
    pub last: usize,
}

impl IndexRange {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// De-peg `[start, trough]`, recovery `(trough, repeg]`, stable `(repeg, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegmentation {
    pub start: usize,
    pub trough: usize,
    pub repeg: usize,
    pub end: usize,
    /// False when no stable run was found; then `repeg == end`.
    pub restored: bool,
    pub options: SegmentOptions,
}

impl RegimeSegmentation {
    pub fn depeg(&self) -> IndexRange {
        IndexRange {
            first: self.start,
            last: self.trough,
        }
    }

    pub fn recovery(&self) -> Option<IndexRange> {
        (self.repeg > self.trough).then(|| IndexRange {
            first: self.trough + 1,
            last: self.repeg,
        })
    }

    pub fn stable(&self) -> Option<IndexRange> {
        (self.end > self.repeg).then(|| IndexRange {
            first: self.repeg + 1,
            last: self.end,
        })
    }

    /// Named non-empty phases in time order.
    pub fn phases(&self) -> Vec<(&'static str, IndexRange)> {
        let mut out = vec![("depeg", self.depeg())];
        if let Some(r) = self.recovery() {
            out.push(("recovery", r));
        }
        if let Some(r) = self.stable() {
            out.push(("stable", r));
        }
        out
    }
}

pub fn segment_regimes(m: &[f64], opts: &SegmentOptions) -> Result<RegimeSegmentation> {
    let start = m
        .iter()
        .position(|&x| x < -opts.depeg_threshold)
        .ok_or(Error::NoEvent {
            threshold: opts.depeg_threshold,
        })?;
    let end = m.len() - 1;
    let trough = (start..=end).fold(start, |best, i| if m[i] < m[best] { i } else { best });

    let run = opts.stable_run.max(1);
    let mut streak = 0;
    let mut repeg = None;
    for (i, x) in m.iter().enumerate().skip(trough + 1) {
        if x.abs() <= opts.stable_band {
            streak += 1;
            if streak == run {
                repeg = Some(i + 1 - run);
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(RegimeSegmentation {
        start,
        trough,
        repeg: repeg.unwrap_or(end),
        end,
        restored: repeg.is_some(),
        options: *opts,
    })
}
