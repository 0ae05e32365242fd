use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rolling-window geometry in trading days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitGeometry {
    pub train_days: usize,
    pub validate_days: usize,
    pub test_days: usize,
    pub stride: usize,
    /// Consecutive test windows grouped into one reporting year.
    pub windows_per_year: usize,
}

impl Default for SplitGeometry {
    /// Two years of training (504 days), then three months (63 days) each of
    /// validation and test, advancing three months at a time; four test
    /// windows make a year.
    fn default() -> Self {
        SplitGeometry {
            train_days: 504,
            validate_days: 63,
            test_days: 63,
            stride: 63,
            windows_per_year: 4,
        }
    }
}

impl SplitGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.train_days < 2
            || self.test_days == 0
            || self.stride == 0
            || self.windows_per_year == 0
        {
            return Err(Error::Config(
                "split train_days >= 2 and test_days, stride, windows_per_year > 0 required".into(),
            ));
        }
        if self.stride < self.test_days {
            return Err(Error::Config(
                "split stride shorter than test window would overlap test sets".into(),
            ));
        }
        Ok(())
    }

    pub fn span(&self) -> usize {
        self.train_days + self.validate_days + self.test_days
    }
}

/// Row ranges of one walk-forward step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitWindow {
    pub train: Range<usize>,
    pub validate: Range<usize>,
    pub test: Range<usize>,
    pub train_start: NaiveDate,
    pub validate_start: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitWindow {
    /// Rows the final model is fitted on: train followed by validate.
    pub fn fit_rows(&self) -> Range<usize> {
        self.train.start..self.validate.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub windows: Vec<SplitWindow>,
}

/// The maximal sequence of windows starting at row 0 and advancing by
/// `stride` while the whole window fits in `dates`.
pub fn build_split_plan(dates: &[NaiveDate], geom: &SplitGeometry) -> Result<SplitPlan> {
    geom.validate()?;
    let span = geom.span();
    if dates.len() < span {
        return Err(Error::Data(format!(
            "{} rows cannot hold one split window; need at least {span} ({} train + {} validate + {} test)",
            dates.len(),
            geom.train_days,
            geom.validate_days,
            geom.test_days
        )));
    }
    let count = (dates.len() - span) / geom.stride + 1;
    let windows = (0..count)
        .map(|k| {
            let s = k * geom.stride;
            let v = s + geom.train_days;
            let t = v + geom.validate_days;
            let e = t + geom.test_days;
            SplitWindow {
                train: s..v,
                validate: v..t,
                test: t..e,
                train_start: dates[s],
                validate_start: dates[v.min(t)],
                test_start: dates[t],
                test_end: dates[e - 1],
            }
        })
        .collect();
    Ok(SplitPlan { windows })
}
