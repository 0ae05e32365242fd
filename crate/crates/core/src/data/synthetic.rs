use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Bar, SeriesFrame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Slow sinusoidal cycle with multiplicative day-to-day noise.
    Sinusoid,
    /// Geometric random walk with a small drift.
    GeometricRandomWalk,
    /// Linear trend with multiplicative noise.
    TrendNoise,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(Regime::Sinusoid),
            "geometric-random-walk" | "gbm" => Ok(Regime::GeometricRandomWalk),
            "trend+noise" | "trend-noise" => Ok(Regime::TrendNoise),
            _ => Err(Error::Config(format!("unknown regime `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub index_name: String,
    pub days: usize,
    pub regime: Regime,
    pub seed: u64,
    pub start: NaiveDate,
    /// Cycle length in trading days (sinusoid regime).
    pub period: f64,
    /// Relative cycle amplitude (sinusoid regime).
    pub amplitude: f64,
    /// Standard deviation of the daily log-noise.
    pub noise: f64,
}

impl SyntheticSpec {
    pub fn new(index_name: impl Into<String>, days: usize, regime: Regime, seed: u64) -> Self {
        SyntheticSpec {
            index_name: index_name.into(),
            days,
            regime,
            seed,
            start: NaiveDate::from_ymd_opt(2008, 7, 1).unwrap(),
            period: 120.0,
            amplitude: 0.15,
            noise: 0.01,
        }
    }
}

pub const MACRO_NAMES: [&str; 2] = ["interbank_rate", "dollar_index"];

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Smooth random walk: an EMA of a Gaussian random walk.
fn smooth_walk(rng: &mut ChaCha8Rng, n: usize, start: f64, step: f64, floor: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, step).unwrap();
    let mut level = start;
    let mut smooth = start;
    (0..n)
        .map(|_| {
            level = (level + normal.sample(rng)).max(floor);
            smooth += 0.1 * (level - smooth);
            smooth
        })
        .collect()
}

/// Deterministic synthetic OHLCV series with two macro columns.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    if spec.days == 0 {
        return Err(Error::Config(
            "synthetic series needs at least one day".into(),
        ));
    }
    if !(spec.noise >= 0.0)
        || !(spec.amplitude >= 0.0 && spec.amplitude < 0.9)
        || !(spec.period > 0.0)
    {
        return Err(Error::Config(
            "synthetic noise, amplitude or period out of range".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let n = spec.days;
    let base = 100.0;
    let phase = rand::Rng::gen_range(&mut rng, 0.0..std::f64::consts::TAU);

    let mut close = Vec::with_capacity(n);
    let mut level = base;
    for t in 0..n {
        let eps = std.sample(&mut rng);
        let c = match spec.regime {
            Regime::Sinusoid => {
                let cycle = 1.0
                    + spec.amplitude
                        * (std::f64::consts::TAU * t as f64 / spec.period + phase).sin();
                base * cycle * (spec.noise * eps).exp()
            }
            Regime::GeometricRandomWalk => {
                level *= (0.0002 + spec.noise * eps).exp();
                level
            }
            Regime::TrendNoise => base * (1.0 + 0.0005 * t as f64) * (spec.noise * eps).exp(),
        };
        close.push(c);
    }

    let rates = smooth_walk(&mut rng, n, 3.0, 0.02, 0.1);
    let dollar = smooth_walk(&mut rng, n, 90.0, 0.2, 10.0);
    let dates = business_days(spec.start, n);
    let rows = (0..n)
        .map(|t| {
            let open = if t == 0 {
                close[0]
            } else {
                close[t - 1] * (0.3 * spec.noise * std.sample(&mut rng)).exp()
            };
            let c = close[t];
            let wick_hi = (0.4 * spec.noise * std.sample(&mut rng)).abs();
            let wick_lo = (0.4 * spec.noise * std.sample(&mut rng)).abs();
            Bar {
                date: dates[t],
                open,
                high: open.max(c) * (1.0 + wick_hi),
                low: open.min(c) * (1.0 - wick_lo).max(0.5),
                close: c,
                volume: (1.0e6 * (0.25 * std.sample(&mut rng)).exp()).round(),
                macros: vec![rates[t], dollar[t]],
            }
        })
        .collect();
    SeriesFrame::new(
        spec.index_name.clone(),
        MACRO_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
    )
}
