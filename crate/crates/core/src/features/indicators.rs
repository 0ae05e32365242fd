//! Daily technical indicators. Every function returns a vector as long as its
//! input, with `NaN` where the lookback window is not yet full. All of them
//! are causal: output `t` reads inputs `0..=t` only.

pub fn sma(values: &[f64], period: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; values.len()];
    if period == 0 {
        return out;
    }
    for t in period.saturating_sub(1)..values.len() {
        out[t] = values[t + 1 - period..=t].iter().sum::<f64>() / period as f64;
    }
    out
}

/// EMA with `alpha = 2 / (period + 1)`, seeded with the first finite value.
pub fn ema(values: &[f64], period: usize) -> Vec<f64> {
    let alpha = 2.0 / (period as f64 + 1.0);
    let mut out = vec![f64::NAN; values.len()];
    let mut prev: Option<f64> = None;
    for (t, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let cur = match prev {
            None => v,
            Some(p) => p + alpha * (v - p),
        };
        out[t] = cur;
        prev = Some(cur);
    }
    out
}

/// EMA(12) - EMA(26) of close.
pub fn macd(close: &[f64]) -> Vec<f64> {
    let fast = ema(close, 12);
    let slow = ema(close, 26);
    fast.iter().zip(&slow).map(|(f, s)| f - s).collect()
}

/// Williams' variable accumulation/distribution: rolling sum over `period`
/// days of `(close - open) / (high - low) * volume`. Days with `high == low`
/// contribute zero.
pub fn wvad(
    open: &[f64],
    high: &[f64],
    low: &[f64],
    close: &[f64],
    volume: &[f64],
    period: usize,
) -> Vec<f64> {
    let daily: Vec<f64> = (0..close.len())
        .map(|i| {
            let range = high[i] - low[i];
            if range > 0.0 {
                (close[i] - open[i]) / range * volume[i]
            } else {
                0.0
            }
        })
        .collect();
    let mut out = sma(&daily, period);
    out.iter_mut().for_each(|v| *v *= period as f64);
    out
}

/// True range; the first day uses `high - low`.
pub fn true_range(high: &[f64], low: &[f64], close: &[f64]) -> Vec<f64> {
    (0..close.len())
        .map(|i| {
            let hl = high[i] - low[i];
            if i == 0 {
                hl
            } else {
                hl.max((high[i] - close[i - 1]).abs())
                    .max((low[i] - close[i - 1]).abs())
            }
        })
        .collect()
}

/// Wilder-smoothed average true range, seeded by the simple mean of the first
/// `period` true ranges.
pub fn atr(high: &[f64], low: &[f64], close: &[f64], period: usize) -> Vec<f64> {
    let tr = true_range(high, low, close);
    let n = tr.len();
    let mut out = vec![f64::NAN; n];
    if period == 0 || n < period {
        return out;
    }
    let p = period as f64;
    let mut cur = tr[..period].iter().sum::<f64>() / p;
    out[period - 1] = cur;
    for i in period..n {
        cur = (cur * (p - 1.0) + tr[i]) / p;
        out[i] = cur;
    }
    out
}

/// `close[t] - close[t - lag]`.
pub fn momentum(close: &[f64], lag: usize) -> Vec<f64> {
    (0..close.len())
        .map(|t| {
            if t >= lag {
                close[t] - close[t - lag]
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// `100 * (close[t] - close[t - lag]) / close[t - lag]`.
pub fn roc(close: &[f64], lag: usize) -> Vec<f64> {
    (0..close.len())
        .map(|t| {
            if t >= lag {
                100.0 * (close[t] - close[t - lag]) / close[t - lag]
            } else {
                f64::NAN
            }
        })
        .collect()
}

fn rolling(values: &[f64], period: usize, pick: fn(f64, f64) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|t| {
            if t + 1 < period {
                f64::NAN
            } else {
                values[t + 1 - period..=t]
                    .iter()
                    .copied()
                    .reduce(pick)
                    .unwrap()
            }
        })
        .collect()
}

/// Stochastic momentum index with a `period`-day high/low range and two
/// successive EMA smoothings (`smooth1`, `smooth2`) of both the distance from
/// the range midpoint and the range itself. A zero smoothed range yields 0.
pub fn smi(
    high: &[f64],
    low: &[f64],
    close: &[f64],
    period: usize,
    smooth1: usize,
    smooth2: usize,
) -> Vec<f64> {
    let hh = rolling(high, period, f64::max);
    let ll = rolling(low, period, f64::min);
    let dist: Vec<f64> = (0..close.len())
        .map(|t| close[t] - 0.5 * (hh[t] + ll[t]))
        .collect();
    let range: Vec<f64> = hh.iter().zip(&ll).map(|(h, l)| h - l).collect();
    let d = ema(&ema(&dist, smooth1), smooth2);
    let r = ema(&ema(&range, smooth1), smooth2);
    d.iter()
        .zip(&r)
        .map(|(&d, &r)| {
            if d.is_nan() || r.is_nan() {
                f64::NAN
            } else if r == 0.0 {
                0.0
            } else {
                100.0 * d / (0.5 * r)
            }
        })
        .collect()
}

/// Commodity channel index on the typical price `(high + low + close) / 3`,
/// scaled by `constant` times the mean absolute deviation. A zero deviation
/// yields 0.
pub fn cci(high: &[f64], low: &[f64], close: &[f64], period: usize, constant: f64) -> Vec<f64> {
    let tp: Vec<f64> = (0..close.len())
        .map(|i| (high[i] + low[i] + close[i]) / 3.0)
        .collect();
    let mean = sma(&tp, period);
    (0..tp.len())
        .map(|t| {
            if mean[t].is_nan() {
                return f64::NAN;
            }
            let md = tp[t + 1 - period..=t]
                .iter()
                .map(|v| (v - mean[t]).abs())
                .sum::<f64>()
                / period as f64;
            if md == 0.0 {
                0.0
            } else {
                (tp[t] - mean[t]) / (constant * md)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sma_of_ramp() {
        let ramp: Vec<f64> = (1..=30).map(|t| t as f64).collect();
        let ma5 = sma(&ramp, 5);
        assert!(ma5[..4].iter().all(|v| v.is_nan()));
        for t in 4..30 {
            assert_eq!(ma5[t], ramp[t] - 2.0);
        }
    }

    #[test]
    fn ema_of_constant() {
        assert!(ema(&[3.0; 50], 12).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn ema_skips_leading_nan() {
        let e = ema(&[f64::NAN, 2.0, 4.0], 3);
        assert!(e[0].is_nan());
        assert_eq!(e[1], 2.0);
        assert_eq!(e[2], 3.0);
    }

    #[test]
    fn atr_constant_range() {
        let h = [11.0; 20];
        let l = [9.0; 20];
        let c = [10.0; 20];
        let a = atr(&h, &l, &c, 14);
        assert!(a[12].is_nan());
        assert!(a[13..].iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn wvad_hand_example() {
        // (c - o)/(h - l) * v = (1/2)*10 on every day
        let n = 5;
        let w = wvad(
            &[10.0; 5], &[12.0; 5], &[10.0; 5], &[11.0; 5], &[10.0; 5], 3,
        );
        assert!(w[1].is_nan());
        assert!(w[2..n].iter().all(|&v| (v - 15.0).abs() < 1e-12));
    }

    #[test]
    fn cci_flat_is_zero() {
        let x = [5.0; 30];
        assert!(cci(&x, &x, &x, 20, 0.015)[19..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smi_at_top_of_range() {
        // strictly rising close at the high of its range: SMI positive
        let c: Vec<f64> = (0..40).map(|t| 100.0 + t as f64).collect();
        let h: Vec<f64> = c.iter().map(|v| v + 0.5).collect();
        let l: Vec<f64> = c.iter().map(|v| v - 0.5).collect();
        let s = smi(&h, &l, &c, 14, 3, 3);
        assert!(s[12].is_nan());
        assert!(s[39] > 0.0 && s[39] <= 100.0);
    }
}
