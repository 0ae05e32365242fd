//! Forecast accuracy metrics over an actual series `y` and a forecast `y*`.
//!
//! ```text
//! MAPE    = (1/N) sum |(y_t - y*_t) / y_t|
//! R       = sum (y - mean y)(y* - mean y*) / sqrt(sum (y - mean y)^2 * sum (y* - mean y*)^2)
//! Theil U = sqrt(mean (y - y*)^2) / (sqrt(mean y^2) + sqrt(mean y*^2))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(actual: &[f64], pred: &[f64]) -> Result<()> {
    if actual.len() != pred.len() {
        return Err(Error::Shape(format!(
            "actual has {} values, forecast {}",
            actual.len(),
            pred.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Domain("metric over an empty series".into()));
    }
    Ok(())
}

pub fn mape(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    let mut acc = 0.0;
    for (i, (&y, &p)) in actual.iter().zip(pred).enumerate() {
        if y == 0.0 {
            return Err(Error::Domain(format!(
                "MAPE undefined: actual value {i} is zero"
            )));
        }
        acc += ((y - p) / y).abs();
    }
    Ok(acc / actual.len() as f64)
}

/// Pearson correlation. Fails when either series is constant.
pub fn correlation(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    if actual.len() < 2 {
        return Err(Error::Domain(
            "R undefined for fewer than two points".into(),
        ));
    }
    let n = actual.len() as f64;
    let ma = actual.iter().sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &p) in actual.iter().zip(pred) {
        let (da, dp) = (a - ma, p - mp);
        sxy += da * dp;
        sxx += da * da;
        syy += dp * dp;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain(
            "R undefined: a series has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn theil_u(actual: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(actual, pred)?;
    let n = actual.len() as f64;
    let rms = |it: &mut dyn Iterator<Item = f64>| (it.map(|v| v * v).sum::<f64>() / n).sqrt();
    let num = rms(&mut actual.iter().zip(pred).map(|(a, p)| a - p));
    let den = rms(&mut actual.iter().copied()) + rms(&mut pred.iter().copied());
    if den == 0.0 {
        return Err(Error::Domain(
            "Theil U undefined: both series are all zero".into(),
        ));
    }
    Ok(num / den)
}

/// MAPE, R and Theil U for one series pair. `r` is `None` when undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: f64,
    pub r: Option<f64>,
    pub theil_u: f64,
}

impl Metrics {
    pub fn compute(actual: &[f64], pred: &[f64]) -> Result<Metrics> {
        let r = match correlation(actual, pred) {
            Ok(r) => Some(r),
            Err(Error::Domain(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Metrics {
            mape: mape(actual, pred)?,
            r,
            theil_u: theil_u(actual, pred)?,
        })
    }
}
