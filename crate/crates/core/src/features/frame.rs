use chrono::NaiveDate;

use crate::error::{Error, Result};

/// One trading day of raw market data.
#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    /// Values for the frame's macro columns, in the same order.
    pub macros: Vec<f64>,
}

/// Date-ordered raw columns for one index.
///
/// Construction enforces strictly increasing dates and consistent OHLC bars.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    index_name: String,
    macro_names: Vec<String>,
    rows: Vec<Bar>,
}

impl Bar {
    fn validate(&self, n_macros: usize) -> Result<()> {
        let d = self.date;
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Data(format!(
                "{d}: prices must be positive and finite"
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::Data(format!(
                "{d}: high {} below max(open, close)",
                self.high
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::Data(format!(
                "{d}: low {} above min(open, close)",
                self.low
            )));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(Error::Data(format!(
                "{d}: volume must be finite and non-negative"
            )));
        }
        if self.macros.len() != n_macros {
            return Err(Error::Data(format!(
                "{d}: expected {n_macros} macro values, got {}",
                self.macros.len()
            )));
        }
        if self.macros.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{d}: macro values must be finite")));
        }
        Ok(())
    }
}

impl SeriesFrame {
    pub fn new(
        index_name: impl Into<String>,
        macro_names: Vec<String>,
        rows: Vec<Bar>,
    ) -> Result<Self> {
        for r in &rows {
            r.validate(macro_names.len())?;
        }
        for w in rows.windows(2) {
            if w[1].date <= w[0].date {
                return Err(Error::Data(format!(
                    "dates must be strictly increasing: {} follows {}",
                    w[1].date, w[0].date
                )));
            }
        }
        Ok(SeriesFrame {
            index_name: index_name.into(),
            macro_names,
            rows,
        })
    }

    pub fn index_name(&self) -> &str {
        &self.index_name
    }

    pub fn macro_names(&self) -> &[String] {
        &self.macro_names
    }

    pub fn rows(&self) -> &[Bar] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, f: impl Fn(&Bar) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(day: u32, o: f64, h: f64, l: f64, c: f64) -> Bar {
        Bar {
            date: NaiveDate::from_ymd_opt(2020, 1, day).unwrap(),
            open: o,
            high: h,
            low: l,
            close: c,
            volume: 10.0,
            macros: vec![],
        }
    }

    #[test]
    fn validates_bars() {
        assert!(SeriesFrame::new("x", vec![], vec![bar(1, 10.0, 11.0, 9.0, 10.5)]).is_ok());
        let err = SeriesFrame::new("x", vec![], vec![bar(2, 10.0, 9.0, 9.5, 10.0)]).unwrap_err();
        assert!(err.to_string().contains("2020-01-02"), "{err}");
        assert!(SeriesFrame::new("x", vec![], vec![bar(1, 10.0, 11.0, 10.5, 10.2)]).is_err());
        assert!(SeriesFrame::new("x", vec![], vec![bar(1, -1.0, 11.0, 9.0, 10.0)]).is_err());
    }

    #[test]
    fn rejects_duplicate_and_unsorted_dates() {
        let b = bar(3, 10.0, 11.0, 9.0, 10.0);
        assert!(SeriesFrame::new("x", vec![], vec![b.clone(), b.clone()]).is_err());
        assert!(SeriesFrame::new("x", vec![], vec![b, bar(2, 10.0, 11.0, 9.0, 10.0)]).is_err());
    }

    #[test]
    fn macro_count_must_match() {
        let mut b = bar(1, 10.0, 11.0, 9.0, 10.0);
        b.macros = vec![1.0];
        assert!(SeriesFrame::new("x", vec![], vec![b.clone()]).is_err());
        assert!(SeriesFrame::new("x", vec!["rate".into()], vec![b]).is_ok());
    }
}
