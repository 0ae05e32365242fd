//! Next-day price forecasting with a sparse autoencoder feeding a boosted
//! ensemble of 1-D residual convolutional networks.
//!
//! The pipeline normalizes per-day technical and macro features, encodes each
//! day with a sparse autoencoder, and predicts the next-day change rate from
//! windows of encoded days with a second-order gradient-boosted ensemble.
//! [`eval::run_backtest`] runs the walk-forward protocol and
//! [`model::PipelineModel`] persists a trained pipeline.
//!
//! ```
//! use cgboost::config::RunConfig;
//! use cgboost::data::{generate_synthetic, Regime, SyntheticSpec};
//! use cgboost::model::train_model;
//!
//! let mut cfg = RunConfig::default();
//! cfg.sae.sgd.epochs = 3;
//! cfg.boost.stages = 2;
//! cfg.boost.sgd.epochs = 2;
//! let frame = generate_synthetic(&SyntheticSpec::new("demo", 320, Regime::Sinusoid, 1))?;
//! let trained = train_model(&[frame.clone()], &cfg)?;
//! assert!(!trained.model.predict_frame(&frame)?.is_empty());
//! # Ok::<(), cgboost::Error>(())
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boost;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod resnet;
pub mod sae;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

// Book chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/autoencoder.md")]
    mod autoencoder {}
    #[doc = include_str!("../../../book/src/residual.md")]
    mod residual {}
    #[doc = include_str!("../../../book/src/boosting.md")]
    mod boosting {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
