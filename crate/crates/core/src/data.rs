//! Candlestick CSV ingestion and mispricing series.
//!
//! Default column order, zero-based: `open_time, open, high, low, close,
//! volume, close_time, ...`; trailing columns are ignored. `open_time` is in
//! epoch milliseconds. Other layouts are read through [`ColumnMap`].

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlineRecord {
    pub open_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl KlineRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err("prices must be positive and finite".into());
        }
        if !self.volume.is_finite() {
            return Err("volume is not finite".into());
        }
        let (lo, hi) = (self.open.min(self.close), self.open.max(self.close));
        if !(self.low <= lo && hi <= self.high) {
            return Err(format!(
                "OHLC violation: need low <= min(open, close) <= max(open, close) <= high, got o={} h={} l={} c={}",
                self.open, self.high, self.low, self.close
            ));
        }
        Ok(())
    }

    /// One CSV row in the default column order; numbers print in shortest
    /// round-trip form.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.open_time, self.open, self.high, self.low, self.close, self.volume
        )
    }
}

/// Zero-based column positions of the fields we read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub open_time: usize,
    pub open: usize,
    pub high: usize,
    pub low: usize,
    pub close: usize,
    pub volume: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            open_time: 0,
            open: 1,
            high: 2,
            low: 3,
            close: 4,
            volume: 5,
        }
    }
}

impl ColumnMap {
    /// Parses `open_time=0,open=1,...`; unspecified fields keep defaults.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut map = ColumnMap::default();
        for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (key, idx) = part
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("column map entry `{part}` lacks `=`")))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("column index `{idx}` is not an integer")))?;
            let slot = match key.trim() {
                "open_time" => &mut map.open_time,
                "open" => &mut map.open,
                "high" => &mut map.high,
                "low" => &mut map.low,
                "close" => &mut map.close,
                "volume" => &mut map.volume,
                other => return Err(Error::Invalid(format!("unknown kline column `{other}`"))),
            };
            *slot = idx;
        }
        Ok(map)
    }

    fn width(&self) -> usize {
        [self.open_time, self.open, self.high, self.low, self.close, self.volume]
            .into_iter()
            .max()
            .unwrap_or(0)
            + 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub has_header: bool,
    pub columns: ColumnMap,
    /// Fail on the first bad row instead of recording it.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// One-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlineParse {
    pub records: Vec<KlineRecord>,
    pub rejected: Vec<RejectedRow>,
    /// Non-blank data rows seen, header excluded.
    pub rows_read: usize,
}

fn parse_row(line: &str, cols: &ColumnMap) -> std::result::Result<KlineRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < cols.width() {
        return Err(format!("expected at least {} columns, found {}", cols.width(), fields.len()));
    }
    let num = |i: usize, what: &str| {
        fields[i]
            .parse::<f64>()
            .map_err(|_| format!("{what} `{}` is not a number", fields[i]))
    };
    let open_time = fields[cols.open_time]
        .parse::<i64>()
        .map_err(|_| format!("open_time `{}` is not an integer", fields[cols.open_time]))?;
    let rec = KlineRecord {
        open_time,
        open: num(cols.open, "open")?,
        high: num(cols.high, "high")?,
        low: num(cols.low, "low")?,
        close: num(cols.close, "close")?,
        volume: num(cols.volume, "volume")?,
    };
    rec.check()?;
    Ok(rec)
}

/// Reads kline rows. Bad rows are collected in `rejected` with their line
/// numbers unless `opts.strict`; out-of-order timestamps are always an error.
pub fn parse_klines<R: BufRead>(input: R, opts: &ParseOptions) -> Result<KlineParse> {
    let mut out = KlineParse {
        records: Vec::new(),
        rejected: Vec::new(),
        rows_read: 0,
    };
    let mut header_pending = opts.has_header;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        out.rows_read += 1;
        match parse_row(&line, &opts.columns) {
            Ok(rec) => {
                if let Some(prev) = out.records.last() {
                    if rec.open_time <= prev.open_time {
                        return Err(Error::Parse {
                            line: lineno,
                            reason: format!(
                                "timestamps not strictly increasing ({} after {})",
                                rec.open_time, prev.open_time
                            ),
                        });
                    }
                }
                out.records.push(rec);
            }
            Err(reason) if opts.strict => return Err(Error::Parse { line: lineno, reason }),
            Err(reason) => out.rejected.push(RejectedRow { line: lineno, reason }),
        }
    }
    if out.rows_read == 0 {
        return Err(Error::Data("empty kline input".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    /// Open time of the last bar before the gap.
    pub after: i64,
    pub missing_bars: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub bar_ms: i64,
    pub gaps: Vec<Gap>,
    /// Output buckets that held no bar and were forward-filled.
    pub filled_buckets: Vec<usize>,
}

impl GapReport {
    pub fn missing_bars(&self) -> i64 {
        self.gaps.iter().map(|g| g.missing_bars).sum()
    }
}

/// Mispricing `close - 1` sampled on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    /// Bucket start times, epoch milliseconds.
    pub timestamps: Vec<i64>,
    pub mispricing: Vec<f64>,
    pub resolution_ms: i64,
    #[serde(default)]
    pub gaps: GapReport,
}

impl ObservedSeries {
    /// A gap-free series on a synthetic clock starting at zero.
    pub fn from_values(mispricing: Vec<f64>, resolution_ms: i64) -> Self {
        let timestamps = (0..mispricing.len() as i64).map(|i| i * resolution_ms).collect();
        ObservedSeries {
            timestamps,
            mispricing,
            resolution_ms,
            gaps: GapReport {
                bar_ms: resolution_ms,
                ..GapReport::default()
            },
        }
    }

    pub fn len(&self) -> usize {
        self.mispricing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mispricing.is_empty()
    }

    pub fn resolution_hours(&self) -> f64 {
        self.resolution_ms as f64 / 3_600_000.0
    }

    /// Bars `lo..=hi`.
    pub fn window(&self, lo: usize, hi: usize) -> ObservedSeries {
        ObservedSeries {
            timestamps: self.timestamps[lo..=hi].to_vec(),
            mispricing: self.mispricing[lo..=hi].to_vec(),
            resolution_ms: self.resolution_ms,
            gaps: GapReport {
                bar_ms: self.gaps.bar_ms,
                ..GapReport::default()
            },
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.resolution_ms <= 0 {
            return Err(Error::Data("series resolution must be positive".into()));
        }
        if self.timestamps.len() != self.mispricing.len() {
            return Err(Error::LengthMismatch {
                what: "series timestamps",
                expected: self.mispricing.len(),
                got: self.timestamps.len(),
            });
        }
        if let Some(t) = self.mispricing.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "mispricing", t });
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("series timestamps not strictly increasing".into()));
        }
        Ok(())
    }
}

/// Bar length: the smallest spacing between consecutive bars.
pub fn bar_length(records: &[KlineRecord]) -> Option<i64> {
    records.windows(2).map(|w| w[1].open_time - w[0].open_time).min()
}

/// Buckets of `resample_ms` anchored at the first bar; each takes the last
/// close inside it, empty buckets repeat the previous value.
pub fn to_mispricing(records: &[KlineRecord], resample_ms: i64) -> Result<ObservedSeries> {
    let first = records
        .first()
        .ok_or_else(|| Error::Data("no kline records".into()))?
        .open_time;
    let bar = bar_length(records).unwrap_or(resample_ms);
    if resample_ms < bar || resample_ms <= 0 {
        return Err(Error::Invalid(format!(
            "resample step {resample_ms} ms is shorter than the bar length {bar} ms"
        )));
    }
    if resample_ms % bar != 0 {
        return Err(Error::Invalid(format!(
            "resample step {resample_ms} ms is not a multiple of the bar length {bar} ms"
        )));
    }
    let mut report = GapReport {
        bar_ms: bar,
        ..GapReport::default()
    };
    for w in records.windows(2) {
        let step = w[1].open_time - w[0].open_time;
        if step > bar {
            report.gaps.push(Gap {
                after: w[0].open_time,
                missing_bars: step / bar - 1,
            });
        }
    }
    let last = records[records.len() - 1].open_time;
    let n = ((last - first) / resample_ms) as usize + 1;
    let mut values: Vec<Option<f64>> = vec![None; n];
    for r in records {
        values[((r.open_time - first) / resample_ms) as usize] = Some(r.close - 1.0);
    }
    let mut mispricing = Vec::with_capacity(n);
    let mut prev = 0.0;
    for (k, v) in values.into_iter().enumerate() {
        let x = match v {
            Some(x) => x,
            None => {
                report.filled_buckets.push(k);
                prev
            }
        };
        mispricing.push(x);
        prev = x;
    }
    Ok(ObservedSeries {
        timestamps: (0..n as i64).map(|k| first + k * resample_ms).collect(),
        mispricing,
        resolution_ms: resample_ms,
        gaps: report,
    })
}
