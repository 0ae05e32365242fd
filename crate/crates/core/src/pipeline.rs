//! The three-stage forecasting pipeline: per-index clip-and-rescale
//! normalization, sparse-autoencoder encoding of each day's feature vector,
//! and a boosted residual-CNN ensemble over windows of encoded days that
//! predicts the next-day change rate.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::boost::{train_ensemble_tracked, BoostEnsemble};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{
    fit_normalizer, prediction_windows, window_samples, FeatureMatrix, Normalizer, Window,
};
use crate::sae::{train_sae, SaeModel};
use crate::tensor::Tensor;

/// Date range of the data a fitted component has seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStamp {
    pub component: String,
    pub index: Option<String>,
    pub first: NaiveDate,
    pub last: NaiveDate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedPipeline {
    pub window_len: usize,
    pub normalizers: BTreeMap<String, Normalizer>,
    pub sae: SaeModel,
    pub ensemble: BoostEnsemble,
    pub stamps: Vec<FitStamp>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Full-data sparse loss at init and after every epoch.
    pub sae_loss: Vec<f64>,
    /// Training MSE of the change-rate fit before stage 1 and after each stage.
    pub boost_stage_mse: Vec<f64>,
    pub sample_counts: BTreeMap<String, usize>,
    pub normalizer_warnings: Vec<String>,
}

/// A training sample's in-sample fitted change rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedValue {
    pub index: String,
    pub date: NaiveDate,
    pub rate: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub pipeline: FittedPipeline,
    pub log: TrainingLog,
    pub fitted: Vec<FittedValue>,
}

pub fn encoded_columns(hidden: usize) -> Vec<String> {
    (0..hidden).map(|j| format!("sae_{j}")).collect()
}

fn encode_matrix(sae: &SaeModel, normed: &FeatureMatrix) -> Result<FeatureMatrix> {
    let rows = normed
        .rows
        .iter()
        .map(|r| Ok(sae.encode(&Tensor::vector(r))?.into_data()))
        .collect::<Result<Vec<_>>>()?;
    normed.with_rows(encoded_columns(sae.hidden()), rows)
}

/// Fits normalizers, the autoencoder and the ensemble on `train`, one matrix
/// per index (a single matrix for per-index runs). Every row of every matrix
/// is used; callers slice out the training period beforehand.
pub fn fit_pipeline(train: &[FeatureMatrix], cfg: &RunConfig, run_seed: u64) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training data".into()));
    }
    let mut log = TrainingLog::default();
    let mut stamps = Vec::new();
    let mut normalizers = BTreeMap::new();
    let mut normed = Vec::with_capacity(train.len());
    let width = train[0].width();
    for fm in train {
        if fm.width() != width || fm.columns != train[0].columns {
            return Err(Error::Data(format!(
                "{}: feature columns differ from {}",
                fm.index_name, train[0].index_name
            )));
        }
        if normalizers.contains_key(&fm.index_name) {
            return Err(Error::Data(format!(
                "index `{}` supplied twice",
                fm.index_name
            )));
        }
        if fm.is_empty() {
            return Err(Error::Data(format!(
                "{}: empty training slice",
                fm.index_name
            )));
        }
        let n = fit_normalizer(fm, (cfg.features.clip_low, cfg.features.clip_high))
            .map_err(|e| e.context(format!("normalizer for {}", fm.index_name)))?;
        log.normalizer_warnings
            .extend(n.warnings.iter().map(|w| format!("{}: {w}", fm.index_name)));
        stamps.push(stamp("normalizer", Some(&fm.index_name), fm));
        normed.push(n.apply(fm)?);
        normalizers.insert(fm.index_name.clone(), n);
    }

    let sae_data: Vec<Tensor> = normed
        .iter()
        .flat_map(|fm| fm.rows.iter().map(|r| Tensor::vector(r)))
        .collect();
    let (sae, sae_log) =
        train_sae(&sae_data, &cfg.sae_config(run_seed)).map_err(|e| e.context("sae"))?;
    log.sae_loss = sae_log.loss;
    for fm in train {
        stamps.push(stamp("sae", Some(&fm.index_name), fm));
    }

    let mut samples = Vec::new();
    let mut keys = Vec::new();
    for fm in &normed {
        let encoded = encode_matrix(&sae, fm)?;
        let s = window_samples(&encoded, cfg.features.window_len)
            .map_err(|e| e.context(&fm.index_name))?;
        log.sample_counts.insert(fm.index_name.clone(), s.len());
        for sample in s {
            keys.push((fm.index_name.clone(), sample.date));
            samples.push((sample.x, sample.y_rate));
        }
    }
    if samples.is_empty() {
        return Err(Error::Data("training period yields no windows".into()));
    }
    let (ensemble, fitted) = train_ensemble_tracked(&samples, &cfg.boost_config(run_seed))
        .map_err(|e| e.context("boosting"))?;
    log.boost_stage_mse = ensemble.stage_mse.clone();
    for fm in train {
        stamps.push(stamp("ensemble", Some(&fm.index_name), fm));
    }
    let fitted = keys
        .into_iter()
        .zip(fitted)
        .map(|((index, date), rate)| FittedValue { index, date, rate })
        .collect();
    Ok(FitOutcome {
        pipeline: FittedPipeline {
            window_len: cfg.features.window_len,
            normalizers,
            sae,
            ensemble,
            stamps,
        },
        log,
        fitted,
    })
}

fn stamp(component: &str, index: Option<&str>, fm: &FeatureMatrix) -> FitStamp {
    FitStamp {
        component: component.to_string(),
        index: index.map(str::to_string),
        first: fm.dates[0],
        last: *fm.dates.last().unwrap(),
    }
}

impl FittedPipeline {
    pub fn normalizer(&self, index: &str) -> Result<&Normalizer> {
        self.normalizers
            .get(index)
            .ok_or_else(|| Error::Data(format!("model has no normalizer for index `{index}`")))
    }

    /// Encoded model inputs for every full window of `fm`.
    pub fn windows(&self, fm: &FeatureMatrix) -> Result<Vec<Window>> {
        let normed = self.normalizer(&fm.index_name)?.apply(fm)?;
        let encoded = encode_matrix(&self.sae, &normed)?;
        prediction_windows(&encoded, self.window_len)
    }

    pub fn predict_rate(&self, w: &Window) -> Result<f64> {
        self.ensemble.predict(&w.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Regime, SyntheticSpec};
    use crate::features::compute_indicators;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.features.window_len = 5;
        cfg.sae.arch = crate::sae::SaeArch::Dense { hidden: 4 };
        cfg.sae.sgd.epochs = 3;
        cfg.boost.stages = 2;
        cfg.boost.channels = 3;
        cfg.boost.blocks = 1;
        cfg.boost.sgd.epochs = 2;
        cfg
    }

    fn fm(name: &str, seed: u64) -> FeatureMatrix {
        let frame =
            generate_synthetic(&SyntheticSpec::new(name, 330, Regime::Sinusoid, seed)).unwrap();
        compute_indicators(&frame).unwrap()
    }

    #[test]
    fn fitted_values_match_predictions() {
        let data = fm("a", 1);
        let out = fit_pipeline(std::slice::from_ref(&data), &tiny_cfg(), 3).unwrap();
        let windows: Vec<_> = out
            .pipeline
            .windows(&data)
            .unwrap()
            .into_iter()
            .filter(|w| w.target.is_some())
            .collect();
        assert_eq!(windows.len(), out.fitted.len());
        for (w, f) in windows.iter().zip(&out.fitted) {
            assert_eq!(w.date, f.date);
            assert_eq!(out.pipeline.predict_rate(w).unwrap(), f.rate);
        }
        assert_eq!(out.log.sample_counts["a"], data.len() - 5);
    }

    #[test]
    fn stamps_cover_training_range() {
        let data = fm("a", 1);
        let out = fit_pipeline(std::slice::from_ref(&data), &tiny_cfg(), 3).unwrap();
        assert_eq!(out.pipeline.stamps.len(), 3);
        assert!(out
            .pipeline
            .stamps
            .iter()
            .all(|s| s.last == *data.dates.last().unwrap()));
    }

    #[test]
    fn pooled_needs_distinct_indexes() {
        let a = fm("a", 1);
        assert!(fit_pipeline(&[a.clone(), a.clone()], &tiny_cfg(), 0).is_err());
        let out = fit_pipeline(&[a, fm("b", 2)], &tiny_cfg(), 0).unwrap();
        assert_eq!(out.log.sample_counts.len(), 2);
        assert!(out.pipeline.normalizer("b").is_ok());
        assert!(out.pipeline.normalizer("c").is_err());
    }
}
