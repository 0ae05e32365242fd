//! Walk-forward evaluation: split plans, accuracy metrics, the backtest
//! driver and report assembly.

mod backtest;
mod metrics;
mod report;
mod split;

pub use backtest::{
    run_backtest, run_backtest_with, CgBoostForecaster, CurvePoint, Forecaster, WindowRecord,
};
pub use metrics::{correlation, mape, theil_u, Metrics};
pub use report::{to_canonical_json, Averages, EvalReport, IndexReport, LeakageAudit, YearRow};
pub use split::{build_split_plan, SplitGeometry, SplitPlan, SplitWindow};
