//! Feature engineering: technical indicators over raw OHLC(+volume) bars,
//! macro columns, clip-and-rescale normalization and windowing into
//! `[features x days]` samples.
//!
//! Indicator conventions (all on daily bars):
//!
//! | column | definition |
//! |--------|------------|
//! | `macd` | EMA12(close) - EMA26(close) |
//! | `wvad` | 24-day sum of `(close - open) / (high - low) * volume` |
//! | `atr` | 14-day Wilder average of true range |
//! | `ema20` | 20-day EMA of close |
//! | `boll` | 20-day SMA of close (Bollinger middle band) |
//! | `ma5`, `ma10` | 5/10-day SMA of close |
//! | `mtm6`, `mtm12` | `close[t] - close[t - 21k]` for k = 6, 12 months |
//! | `smi` | stochastic momentum index, 14-day range, 3/3 EMA smoothing |
//! | `roc` | 12-day rate of change in percent |
//! | `cci` | 20-day commodity channel index, constant 0.015 |
//!
//! EMAs start at the first observation. The first [`WARMUP_DAYS`] rows are
//! dropped so that every kept row has every indicator defined.

mod frame;
pub mod indicators;
mod normalize;
mod window;

pub use frame::{Bar, SeriesFrame};
pub use normalize::{fit_normalizer, ColumnScale, Normalizer};
pub use window::{prediction_windows, window_samples, Sample, Window};

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Trading days per month used to turn monthly momentum into a lag.
pub const TRADING_DAYS_PER_MONTH: usize = 21;
/// Rows dropped from the front: the 12-month momentum lookback.
pub const WARMUP_DAYS: usize = 12 * TRADING_DAYS_PER_MONTH;
/// Shortest frame accepted by [`compute_indicators`].
pub const MIN_ROWS: usize = 260;

pub const PRICE_COLUMNS: [&str; 4] = ["open", "high", "low", "close"];
pub const INDICATOR_COLUMNS: [&str; 12] = [
    "macd", "wvad", "atr", "ema20", "boll", "ma5", "ma10", "mtm6", "mtm12", "smi", "roc", "cci",
];

/// Per-day feature vectors with aligned closes and next-day change rates.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub index_name: String,
    pub columns: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `rows[t][c]`
    pub rows: Vec<Vec<f64>>,
    pub close: Vec<f64>,
    /// `(close[t + 1] - close[t]) / close[t]`; `None` on the last row.
    pub target_rate: Vec<Option<f64>>,
}

fn change_rates(close: &[f64]) -> Vec<Option<f64>> {
    (0..close.len())
        .map(|t| close.get(t + 1).map(|next| (next - close[t]) / close[t]))
        .collect()
}

impl FeatureMatrix {
    pub fn new(
        index_name: impl Into<String>,
        columns: Vec<String>,
        dates: Vec<NaiveDate>,
        rows: Vec<Vec<f64>>,
        close: Vec<f64>,
    ) -> Result<Self> {
        let n = dates.len();
        if rows.len() != n || close.len() != n {
            return Err(Error::Shape(format!(
                "feature matrix: {n} dates, {} rows, {} closes",
                rows.len(),
                close.len()
            )));
        }
        if let Some(t) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Shape(format!(
                "feature row {t} has {} values, expected {}",
                rows[t].len(),
                columns.len()
            )));
        }
        let target_rate = change_rates(&close);
        Ok(FeatureMatrix {
            index_name: index_name.into(),
            columns,
            dates,
            rows,
            close,
            target_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Rows `range`, with targets recomputed so the last kept row has none:
    /// nothing outside the slice leaks in through the next-day close.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        let close = self.close[range.clone()].to_vec();
        FeatureMatrix {
            index_name: self.index_name.clone(),
            columns: self.columns.clone(),
            dates: self.dates[range.clone()].to_vec(),
            rows: self.rows[range].to_vec(),
            target_rate: change_rates(&close),
            close,
        }
    }

    /// Same dates and prices, different feature columns.
    pub fn with_rows(&self, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<FeatureMatrix> {
        if rows.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} rows, got {}",
                self.len(),
                rows.len()
            )));
        }
        if let Some(t) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::Shape(format!(
                "row {t} has {} values, expected {}",
                rows[t].len(),
                columns.len()
            )));
        }
        Ok(FeatureMatrix {
            columns,
            rows,
            ..self.clone()
        })
    }
}

/// Raw OHLC, the indicator table and macro columns for every day past the
/// warm-up period.
pub fn compute_indicators(frame: &SeriesFrame) -> Result<FeatureMatrix> {
    if frame.len() < MIN_ROWS {
        return Err(Error::Data(format!(
            "{}: {} rows is too short; indicators need at least {MIN_ROWS}",
            frame.index_name(),
            frame.len()
        )));
    }
    let open = frame.column(|b| b.open);
    let high = frame.column(|b| b.high);
    let low = frame.column(|b| b.low);
    let close = frame.column(|b| b.close);
    let volume = frame.column(|b| b.volume);

    let series: Vec<Vec<f64>> = vec![
        indicators::macd(&close),
        indicators::wvad(&open, &high, &low, &close, &volume, 24),
        indicators::atr(&high, &low, &close, 14),
        indicators::ema(&close, 20),
        indicators::sma(&close, 20),
        indicators::sma(&close, 5),
        indicators::sma(&close, 10),
        indicators::momentum(&close, 6 * TRADING_DAYS_PER_MONTH),
        indicators::momentum(&close, 12 * TRADING_DAYS_PER_MONTH),
        indicators::smi(&high, &low, &close, 14, 3, 3),
        indicators::roc(&close, 12),
        indicators::cci(&high, &low, &close, 20, 0.015),
    ];

    let mut columns: Vec<String> = PRICE_COLUMNS
        .iter()
        .chain(INDICATOR_COLUMNS.iter())
        .map(|s| s.to_string())
        .collect();
    columns.extend(frame.macro_names().iter().cloned());

    let mut rows = Vec::with_capacity(frame.len() - WARMUP_DAYS);
    for t in WARMUP_DAYS..frame.len() {
        let bar = &frame.rows()[t];
        let mut row = vec![bar.open, bar.high, bar.low, bar.close];
        row.extend(series.iter().map(|s| s[t]));
        row.extend(bar.macros.iter().copied());
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{}: undefined feature on {}",
                frame.index_name(),
                bar.date
            )));
        }
        rows.push(row);
    }
    let dates = frame.rows()[WARMUP_DAYS..].iter().map(|b| b.date).collect();
    FeatureMatrix::new(
        frame.index_name(),
        columns,
        dates,
        rows,
        close[WARMUP_DAYS..].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from_close(close: &[f64]) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let rows = close
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar {
                date: start + chrono::Days::new(i as u64),
                open: c,
                high: c,
                low: c,
                close: c,
                volume: 1000.0,
                macros: vec![1.5],
            })
            .collect();
        SeriesFrame::new("test", vec!["rate".into()], rows).unwrap()
    }

    fn col(fm: &FeatureMatrix, name: &str) -> Vec<f64> {
        let c = fm.columns.iter().position(|n| n == name).unwrap();
        fm.rows.iter().map(|r| r[c]).collect()
    }

    #[test]
    fn too_short_names_minimum() {
        let err = compute_indicators(&frame_from_close(&[10.0; 100])).unwrap_err();
        assert!(err.to_string().contains("260"), "{err}");
    }

    #[test]
    fn flat_series_identities() {
        let c = 42.5;
        let fm = compute_indicators(&frame_from_close(&[c; 300])).unwrap();
        assert_eq!(fm.len(), 300 - WARMUP_DAYS);
        assert_eq!(fm.width(), 4 + 12 + 1);
        for name in ["ma5", "ma10", "ema20", "boll"] {
            assert!(
                col(&fm, name).iter().all(|&v| (v - c).abs() < 1e-12),
                "{name}"
            );
        }
        for name in ["mtm6", "mtm12", "roc", "macd"] {
            assert!(col(&fm, name).iter().all(|&v| v == 0.0), "{name}");
        }
        assert!(col(&fm, "rate").iter().all(|&v| v == 1.5));
    }

    #[test]
    fn ramp_ma5() {
        let close: Vec<f64> = (1..=300).map(|t| t as f64).collect();
        let fm = compute_indicators(&frame_from_close(&close)).unwrap();
        let ma5 = col(&fm, "ma5");
        let cl = col(&fm, "close");
        for (m, c) in ma5.iter().zip(&cl) {
            assert!((m - (c - 2.0)).abs() < 1e-9);
        }
        let mtm6 = col(&fm, "mtm6");
        assert!(mtm6.iter().all(|&v| (v - 126.0).abs() < 1e-9));
    }

    #[test]
    fn targets_are_next_day_change() {
        let close: Vec<f64> = (0..270).map(|t| 100.0 + (t as f64 * 0.3).sin()).collect();
        let fm = compute_indicators(&frame_from_close(&close)).unwrap();
        for t in 0..fm.len() - 1 {
            let r = fm.target_rate[t].unwrap();
            assert_eq!(r, (fm.close[t + 1] - fm.close[t]) / fm.close[t]);
        }
        assert_eq!(fm.target_rate.last().unwrap(), &None);
        let s = fm.slice(2..6);
        assert_eq!(s.len(), 4);
        assert_eq!(s.target_rate[3], None);
        assert_eq!(s.target_rate[2], fm.target_rate[4]);
    }

    #[test]
    fn indicators_are_causal() {
        let close: Vec<f64> = (0..300)
            .map(|t| 100.0 + 5.0 * (t as f64 * 0.11).sin() + 0.01 * t as f64)
            .collect();
        let base = compute_indicators(&frame_from_close(&close)).unwrap();
        let cut = 280;
        let mut bumped = close.clone();
        for v in &mut bumped[cut..] {
            *v *= 1.3;
        }
        let other = compute_indicators(&frame_from_close(&bumped)).unwrap();
        let k = cut - WARMUP_DAYS;
        assert_eq!(base.rows[..k], other.rows[..k]);
        assert_ne!(base.rows[k], other.rows[k]);
    }
}
