use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{assemble_report, EvalReport};
use super::split::{build_split_plan, SplitPlan};
use crate::boost::price_from_rate;
use crate::config::{derive_seed, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::features::{compute_indicators, FeatureMatrix, SeriesFrame};
use crate::pipeline::{fit_pipeline, FitStamp, FittedPipeline};

/// Something that can be fitted on a training period and then forecast
/// next-day closes. The backtest driver is generic over it so the plumbing
/// can be checked with trivial forecasters.
pub trait Forecaster: Sync {
    type Model: Send;

    /// Fits on one matrix per index. Returned stamps record the data range
    /// every fitted statistic saw.
    fn fit(
        &self,
        train: &[FeatureMatrix],
        cfg: &RunConfig,
        seed: u64,
    ) -> Result<(Self::Model, Vec<FitStamp>)>;

    /// Forecast of `close[t + 1]` for every `t` in `rows`, using `fm` (the
    /// full matrix of one index).
    fn forecast(
        &self,
        model: &Self::Model,
        fm: &FeatureMatrix,
        rows: Range<usize>,
    ) -> Result<Vec<f64>>;
}

/// The sparse-autoencoder + boosted residual CNN pipeline.
pub struct CgBoostForecaster;

impl Forecaster for CgBoostForecaster {
    type Model = FittedPipeline;

    fn fit(
        &self,
        train: &[FeatureMatrix],
        cfg: &RunConfig,
        seed: u64,
    ) -> Result<(FittedPipeline, Vec<FitStamp>)> {
        let out = fit_pipeline(train, cfg, seed)?;
        let stamps = out.pipeline.stamps.clone();
        Ok((out.pipeline, stamps))
    }

    fn forecast(
        &self,
        model: &FittedPipeline,
        fm: &FeatureMatrix,
        rows: Range<usize>,
    ) -> Result<Vec<f64>> {
        let windows = model.windows(fm)?;
        // windows[i] ends at row i + window_len - 1
        let offset = model.window_len - 1;
        rows.map(|t| {
            let w = t
                .checked_sub(offset)
                .and_then(|i| windows.get(i))
                .ok_or_else(|| Error::Data(format!("row {t} has no full input window")))?;
            debug_assert_eq!(w.row, t);
            price_from_rate(w.close_today, model.predict_rate(w)?)
        })
        .collect()
    }
}

/// One forecast point of a test window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// The day being forecast.
    pub date: NaiveDate,
    pub close_today: f64,
    pub actual: f64,
    pub predicted: f64,
    /// Last-value baseline: tomorrow's close equals today's.
    pub naive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: String,
    pub window: usize,
    /// Zero-based test year this window belongs to.
    pub year: usize,
    pub fit_start: NaiveDate,
    pub fit_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub stamps: Vec<FitStamp>,
    pub points: Vec<CurvePoint>,
}

struct Prepared {
    fm: FeatureMatrix,
    plan: SplitPlan,
}

fn prepare(frames: &[SeriesFrame], cfg: &RunConfig) -> Result<Vec<Prepared>> {
    frames
        .iter()
        .map(|f| {
            let fm = compute_indicators(f)?;
            // the last row has no next-day close to score against
            let plan = build_split_plan(&fm.dates[..fm.len() - 1], &cfg.split)?;
            Ok(Prepared { fm, plan })
        })
        .collect::<Result<Vec<_>>>()
}

fn window_seed(cfg: &RunConfig, k: usize) -> u64 {
    derive_seed(cfg.seed, 1000 + k as u64)
}

/// Fits on window `k` of every index in `group` and scores each index's test
/// rows.
fn run_window<F: Forecaster>(
    forecaster: &F,
    group: &[&Prepared],
    k: usize,
    cfg: &RunConfig,
) -> Result<Vec<WindowRecord>> {
    let train: Vec<FeatureMatrix> = group
        .iter()
        .map(|p| p.fm.slice(p.plan.windows[k].fit_rows()))
        .collect();
    let (model, stamps) = forecaster.fit(&train, cfg, window_seed(cfg, k))?;
    group
        .iter()
        .map(|p| {
            let w = &p.plan.windows[k];
            let fm = &p.fm;
            let preds = forecaster.forecast(&model, fm, w.test.clone())?;
            let points = w
                .test
                .clone()
                .zip(preds)
                .map(|(t, predicted)| CurvePoint {
                    date: fm.dates[t + 1],
                    close_today: fm.close[t],
                    actual: fm.close[t + 1],
                    predicted,
                    naive: fm.close[t],
                })
                .collect();
            Ok(WindowRecord {
                index: fm.index_name.clone(),
                window: k,
                year: k / cfg.split.windows_per_year,
                fit_start: fm.dates[w.train.start],
                fit_end: fm.dates[w.validate.end - 1],
                test_start: w.test_start,
                test_end: w.test_end,
                stamps: stamps.clone(),
                points,
            })
        })
        .collect()
}

pub fn run_backtest(frames: &[SeriesFrame], cfg: &RunConfig) -> Result<EvalReport> {
    run_backtest_with(&CgBoostForecaster, frames, cfg)
}

/// Walk-forward evaluation of `forecaster` over every split window.
///
/// Per-index mode fits one model per (index, window); pooled mode fits one
/// model per window on all indexes' training rows and scores every index.
pub fn run_backtest_with<F: Forecaster>(
    forecaster: &F,
    frames: &[SeriesFrame],
    cfg: &RunConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::Data("backtest needs at least one series".into()));
    }
    let mut names: Vec<&str> = frames.iter().map(|f| f.index_name()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("index names must be unique".into()));
    }
    let prepared = prepare(frames, cfg)?;

    let groups: Vec<(Vec<&Prepared>, usize)> = match cfg.mode {
        Mode::PerIndex => prepared
            .iter()
            .flat_map(|p| (0..p.plan.windows.len()).map(move |k| (vec![p], k)))
            .collect(),
        Mode::Pooled => {
            let count = prepared
                .iter()
                .map(|p| p.plan.windows.len())
                .min()
                .unwrap_or(0);
            (0..count).map(|k| (prepared.iter().collect(), k)).collect()
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Vec<WindowRecord>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(group, k)| {
                let label = group
                    .iter()
                    .map(|p| p.fm.index_name.as_str())
                    .collect::<Vec<_>>()
                    .join("+");
                log::info!("window {k} [{label}]: fitting");
                run_window(forecaster, group, *k, cfg)
                    .map_err(|e| e.context(format!("window {k} [{label}]")))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut records: Vec<WindowRecord> = results.into_iter().flatten().collect();
    let order: Vec<&str> = frames.iter().map(|f| f.index_name()).collect();
    records.sort_by_key(|r| (order.iter().position(|n| *n == r.index).unwrap(), r.window));
    assemble_report(cfg, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Regime, SyntheticSpec};
    use crate::eval::SplitGeometry;

    struct PerfectForesight;

    impl Forecaster for PerfectForesight {
        type Model = ();

        fn fit(
            &self,
            train: &[FeatureMatrix],
            _: &RunConfig,
            _: u64,
        ) -> Result<((), Vec<FitStamp>)> {
            let stamps = train
                .iter()
                .map(|fm| FitStamp {
                    component: "oracle".into(),
                    index: Some(fm.index_name.clone()),
                    first: fm.dates[0],
                    last: *fm.dates.last().unwrap(),
                })
                .collect();
            Ok(((), stamps))
        }

        fn forecast(&self, _: &(), fm: &FeatureMatrix, rows: Range<usize>) -> Result<Vec<f64>> {
            Ok(rows.map(|t| fm.close[t + 1]).collect())
        }
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            split: SplitGeometry {
                train_days: 100,
                validate_days: 20,
                test_days: 20,
                stride: 20,
                windows_per_year: 2,
            },
            ..RunConfig::default()
        }
    }

    fn frame(name: &str, seed: u64) -> SeriesFrame {
        generate_synthetic(&SyntheticSpec::new(name, 252 + 260, Regime::Sinusoid, seed)).unwrap()
    }

    #[test]
    fn perfect_forecaster_scores_perfectly() {
        let report = run_backtest_with(&PerfectForesight, &[frame("a", 1)], &small_cfg()).unwrap();
        assert_eq!(report.windows.len(), 6);
        for idx in &report.indexes {
            for y in &idx.years {
                assert_eq!(y.model.mape, 0.0);
                assert_eq!(y.model.theil_u, 0.0);
                assert!((y.model.r.unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(report.audit.violations.is_empty());
        assert!(report.audit.checked > 0);
    }

    #[test]
    fn leaky_forecaster_is_flagged() {
        struct Leaky;
        impl Forecaster for Leaky {
            type Model = ();
            fn fit(
                &self,
                train: &[FeatureMatrix],
                _: &RunConfig,
                _: u64,
            ) -> Result<((), Vec<FitStamp>)> {
                let fm = &train[0];
                let last = *fm.dates.last().unwrap() + chrono::Days::new(30);
                Ok((
                    (),
                    vec![FitStamp {
                        component: "peek".into(),
                        index: None,
                        first: fm.dates[0],
                        last,
                    }],
                ))
            }
            fn forecast(&self, _: &(), fm: &FeatureMatrix, rows: Range<usize>) -> Result<Vec<f64>> {
                Ok(rows.map(|t| fm.close[t]).collect())
            }
        }
        let report = run_backtest_with(&Leaky, &[frame("a", 1)], &small_cfg()).unwrap();
        assert_eq!(report.audit.violations.len(), report.windows.len());
    }

    #[test]
    fn pooled_single_index_equals_per_index() {
        let mut cfg = small_cfg();
        cfg.split.windows_per_year = 1;
        cfg.split.test_days = 20;
        cfg.features.window_len = 5;
        cfg.sae.arch = crate::sae::SaeArch::Dense { hidden: 3 };
        cfg.sae.sgd.epochs = 2;
        cfg.boost.stages = 2;
        cfg.boost.channels = 2;
        cfg.boost.blocks = 1;
        cfg.boost.sgd.epochs = 2;
        let frames = [
            generate_synthetic(&SyntheticSpec::new("a", 252 + 141, Regime::Sinusoid, 4)).unwrap(),
        ];
        let per = run_backtest(&frames, &cfg).unwrap();
        let threaded = run_backtest(
            &frames,
            &RunConfig {
                threads: 3,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(per.to_json(), threaded.to_json());
        cfg.mode = Mode::Pooled;
        let pooled = run_backtest(&frames, &cfg).unwrap();
        assert_eq!(per.indexes, pooled.indexes);
        assert_eq!(per.windows, pooled.windows);
    }

    #[test]
    fn rejects_duplicate_names_and_short_data() {
        assert!(run_backtest_with(
            &PerfectForesight,
            &[frame("a", 1), frame("a", 2)],
            &small_cfg()
        )
        .is_err());
        let short = generate_synthetic(&SyntheticSpec::new("s", 300, Regime::Sinusoid, 1)).unwrap();
        let err = run_backtest_with(&PerfectForesight, &[short], &small_cfg()).unwrap_err();
        assert!(err.to_string().contains("140"), "{err}");
    }
}
