use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Clip bounds and affine map for one column: `(clip(x) - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub clip_low: f64,
    pub clip_high: f64,
    pub shift: f64,
    pub scale: f64,
}

/// Per-column clipping at empirical quantiles followed by min-max scaling of
/// the clipped training data onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Normalizer {
    pub columns: Vec<ColumnScale>,
    pub fitted: bool,
    /// Degenerate columns found while fitting.
    pub warnings: Vec<String>,
    /// First and last date of the rows the normalizer was fitted on.
    pub fitted_range: Option<(NaiveDate, NaiveDate)>,
}

/// Linear-interpolation quantile of sorted data at position `(n - 1) * q`.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_normalizer(train: &FeatureMatrix, clip_quantiles: (f64, f64)) -> Result<Normalizer> {
    let (q_low, q_high) = clip_quantiles;
    if !(0.0 <= q_low && q_low < q_high && q_high <= 1.0) {
        return Err(Error::Config(format!(
            "clip quantiles must satisfy 0 <= low < high <= 1, got ({q_low}, {q_high})"
        )));
    }
    if train.len() < 2 {
        return Err(Error::Data(format!(
            "normalizer needs at least 2 rows, got {}",
            train.len()
        )));
    }
    let mut columns = Vec::with_capacity(train.width());
    let mut warnings = Vec::new();
    for (c, name) in train.columns.iter().enumerate() {
        let mut values: Vec<f64> = train.rows.iter().map(|r| r[c]).collect();
        values.sort_by(f64::total_cmp);
        let clip_low = quantile_sorted(&values, q_low);
        let clip_high = quantile_sorted(&values, q_high);
        let span = clip_high - clip_low;
        let (shift, scale) = if span > 0.0 {
            (clip_low, span)
        } else {
            warnings.push(format!(
                "column `{name}` is constant after clipping; mapped to 0"
            ));
            (clip_low, 1.0)
        };
        columns.push(ColumnScale {
            clip_low,
            clip_high,
            shift,
            scale,
        });
    }
    for w in &warnings {
        log::warn!("{}: {w}", train.index_name);
    }
    let fitted_range = Some((train.dates[0], *train.dates.last().unwrap()));
    Ok(Normalizer {
        columns,
        fitted: true,
        warnings,
        fitted_range,
    })
}

impl Normalizer {
    fn check(&self, width: usize) -> Result<()> {
        if !self.fitted {
            return Err(Error::Config("normalizer used before fitting".into()));
        }
        if width != self.columns.len() {
            return Err(Error::Shape(format!(
                "normalizer has {} columns, data has {width}",
                self.columns.len()
            )));
        }
        Ok(())
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row.len())?;
        Ok(row
            .iter()
            .zip(&self.columns)
            .map(|(&x, s)| (x.clamp(s.clip_low, s.clip_high) - s.shift) / s.scale)
            .collect())
    }

    /// Undoes the affine part (clipping is not invertible).
    pub fn inverse_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row.len())?;
        Ok(row
            .iter()
            .zip(&self.columns)
            .map(|(&y, s)| y * s.scale + s.shift)
            .collect())
    }

    /// Clips and rescales every row; never refits.
    pub fn apply(&self, rows: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check(rows.width())?;
        let out = rows
            .rows
            .iter()
            .map(|r| self.transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        rows.with_rows(rows.columns.clone(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(cols: &[&[f64]]) -> FeatureMatrix {
        let n = cols[0].len();
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        FeatureMatrix::new(
            "t",
            (0..cols.len()).map(|i| format!("c{i}")).collect(),
            (0..n)
                .map(|i| start + chrono::Days::new(i as u64))
                .collect(),
            (0..n)
                .map(|t| cols.iter().map(|c| c[t]).collect())
                .collect(),
            vec![1.0; n],
        )
        .unwrap()
    }

    #[test]
    fn unit_column_is_identity() {
        let data = fm(&[&[0.0, 0.25, 1.0, 0.5]]);
        let n = fit_normalizer(&data, (0.0, 1.0)).unwrap();
        assert_eq!(n.apply(&data).unwrap().rows, data.rows);
    }

    #[test]
    fn clips_at_interpolated_quantile() {
        let data = fm(&[&[0.0, 5.0, 10.0, 1000.0]]);
        let n = fit_normalizer(&data, (0.0, 0.75)).unwrap();
        // position (4 - 1) * 0.75 = 2.25 between 10 and 1000
        assert!((n.columns[0].clip_high - 257.5).abs() < 1e-12);
        let out = n.apply(&data).unwrap();
        let max = out.rows.iter().map(|r| r[0]).fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        assert_eq!(out.rows[0][0], 0.0);
    }

    #[test]
    fn constant_column_warns_and_maps_to_zero() {
        let data = fm(&[&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]]);
        let n = fit_normalizer(&data, (0.0, 1.0)).unwrap();
        assert_eq!(n.warnings.len(), 1);
        assert!(n.apply(&data).unwrap().rows.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn out_of_range_maps_to_bounds() {
        let data = fm(&[&[1.0, 2.0, 3.0]]);
        let n = fit_normalizer(&data, (0.0, 1.0)).unwrap();
        assert_eq!(n.transform_row(&[10.0]).unwrap(), vec![1.0]);
        assert_eq!(n.transform_row(&[-10.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let data = fm(&[&[-3.7, 2.2, 9.1, 0.4]]);
        let n = fit_normalizer(&data, (0.0, 1.0)).unwrap();
        for &x in &[-3.7, -1.0, 0.123456789, 9.1] {
            let y = n.transform_row(&[x]).unwrap();
            assert!((n.inverse_row(&y).unwrap()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn usage_errors() {
        let data = fm(&[&[1.0, 2.0]]);
        assert!(Normalizer::default().apply(&data).is_err());
        assert!(fit_normalizer(&data, (0.5, 0.5)).is_err());
        assert!(fit_normalizer(&fm(&[&[1.0]]), (0.0, 1.0)).is_err());
        let n = fit_normalizer(&data, (0.0, 1.0)).unwrap();
        assert!(n.apply(&fm(&[&[1.0, 2.0], &[1.0, 2.0]])).is_err());
    }
}
