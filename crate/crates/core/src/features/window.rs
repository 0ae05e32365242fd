use chrono::NaiveDate;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One model input: the `L` days ending at `row`, as `[features, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub x: Tensor,
    pub target: Option<f64>,
    pub close_today: f64,
    pub date: NaiveDate,
    /// Index of the window's last row in the source matrix.
    pub row: usize,
}

/// A training window; its next-day change rate is known.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub y_rate: f64,
    pub close_today: f64,
    pub date: NaiveDate,
    pub row: usize,
}

fn window_at(fm: &FeatureMatrix, t: usize, len: usize) -> Tensor {
    let d = fm.width();
    let mut data = vec![0.0; d * len];
    for (j, row) in fm.rows[t + 1 - len..=t].iter().enumerate() {
        for c in 0..d {
            data[c * len + j] = row[c];
        }
    }
    Tensor::new(vec![d, len], data).expect("window shape")
}

/// Every full window, including the last row whose target is unknown.
pub fn prediction_windows(fm: &FeatureMatrix, window_len: usize) -> Result<Vec<Window>> {
    if window_len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if window_len > fm.len() {
        return Err(Error::Data(format!(
            "window length {window_len} exceeds the {} available rows",
            fm.len()
        )));
    }
    Ok((window_len - 1..fm.len())
        .map(|t| Window {
            x: window_at(fm, t, window_len),
            target: fm.target_rate[t],
            close_today: fm.close[t],
            date: fm.dates[t],
            row: t,
        })
        .collect())
}

/// Windows whose next-day change rate is known.
pub fn window_samples(fm: &FeatureMatrix, window_len: usize) -> Result<Vec<Sample>> {
    Ok(prediction_windows(fm, window_len)?
        .into_iter()
        .filter_map(|w| {
            w.target.map(|y_rate| Sample {
                x: w.x,
                y_rate,
                close_today: w.close_today,
                date: w.date,
                row: w.row,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(n: usize, d: usize) -> FeatureMatrix {
        let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        FeatureMatrix::new(
            "t",
            (0..d).map(|c| format!("c{c}")).collect(),
            (0..n)
                .map(|i| start + chrono::Days::new(i as u64))
                .collect(),
            (0..n)
                .map(|t| (0..d).map(|c| (t * 10 + c) as f64).collect())
                .collect(),
            (0..n).map(|t| 100.0 + t as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn window_len_one() {
        let s = window_samples(&fm(5, 3), 1).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[2].x.shape(), &[3, 1]);
        assert_eq!(s[2].x.data(), &[20.0, 21.0, 22.0]);
    }

    #[test]
    fn counting() {
        let m = fm(10, 2);
        assert_eq!(window_samples(&m, 4).unwrap().len(), 6);
        assert_eq!(prediction_windows(&m, 4).unwrap().len(), 7);
        assert!(window_samples(&m, 4).unwrap().iter().all(|s| s.row != 9));
    }

    #[test]
    fn channels_by_time_layout() {
        let s = window_samples(&fm(10, 2), 3).unwrap();
        let first = &s[0];
        assert_eq!(first.row, 2);
        // channel 0 over days 0..3, then channel 1
        assert_eq!(first.x.data(), &[0.0, 10.0, 20.0, 1.0, 11.0, 21.0]);
        assert_eq!(first.y_rate, 1.0 / 102.0);
        assert_eq!(first.close_today, 102.0);
    }

    #[test]
    fn too_long_window() {
        assert!(window_samples(&fm(3, 1), 4).is_err());
        assert!(window_samples(&fm(3, 1), 0).is_err());
    }
}
