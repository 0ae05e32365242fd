//! Gradient boosting with residual-CNN base learners.
//!
//! Each stage `t` sees the second-order surrogate
//!
//! ```text
//! Obj_t = sum_i [g_i f_t(x_i) + h_i f_t(x_i)^2 / 2] + lambda * sum_l ||W_l||^2
//! ```
//!
//! For square loss `g_i = 2 (yhat_i - y_i)` and `h_i = 2`, so completing the
//! square gives `Obj_t = sum_i (f_t(x_i) - r_i)^2 - sum_i r_i^2 + Omega` with
//! `r_i = -g_i / h_i = y_i - yhat_i`. Every stage is therefore fitted as a
//! least-squares regression on the current residuals, with `lambda` as
//! weight decay. The ensemble predicts `base_score + eta * sum_t f_t(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, SgdConfig};
use crate::resnet::{build_resnet, fit_regressor, predict_scalar, ResNetConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    /// Number of base learners `T`.
    pub stages: usize,
    /// Per-stage multiplier `eta`; `1.0` gives the plain additive sum.
    pub shrinkage: f64,
    pub base: ResNetConfig,
    /// Optimizer for every stage. `sgd.l2_lambda` is the `Omega` coefficient.
    pub sgd: SgdConfig,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            stages: 10,
            shrinkage: 0.5,
            base: ResNetConfig::default(),
            sgd: SgdConfig {
                learning_rate: 0.03,
                l2_lambda: 1e-5,
                batch_size: 32,
                epochs: 20,
                seed: 0,
            },
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("boost stages must be at least 1".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!(
                "shrinkage must lie in (0, 1], got {}",
                self.shrinkage
            )));
        }
        self.base.validate()?;
        self.sgd.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoostEnsemble {
    pub base_models: Vec<Network>,
    pub shrinkage: f64,
    pub base_score: f64,
    /// Full-training-set MSE before stage 1 (entry 0) and after each stage.
    pub stage_mse: Vec<f64>,
}

/// First and second derivative of `(yhat - y)^2` with respect to `yhat`.
pub fn grad_hess_square_loss(y: f64, y_pred_prev: f64) -> (f64, f64) {
    (2.0 * (y_pred_prev - y), 2.0)
}

/// `sum_i [g_i f_i + h_i f_i^2 / 2] + l2 * weights_norm_sq`.
pub fn stage_objective(
    f: &[f64],
    g: &[f64],
    h: &[f64],
    l2: f64,
    weights_norm_sq: f64,
) -> Result<f64> {
    if f.len() != g.len() || f.len() != h.len() {
        return Err(Error::Shape(format!(
            "stage objective lengths differ: f {}, g {}, h {}",
            f.len(),
            g.len(),
            h.len()
        )));
    }
    let quad: f64 = f
        .iter()
        .zip(g)
        .zip(h)
        .map(|((f, g), h)| g * f + 0.5 * h * f * f)
        .sum();
    Ok(quad + l2 * weights_norm_sq)
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stage as u64 + 1)
}

fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64
}

/// Trains the ensemble and also returns the fitted values on the training
/// samples, computed with the same summation order `predict` uses.
pub fn train_ensemble_tracked(
    samples: &[(Tensor, f64)],
    cfg: &BoostConfig,
) -> Result<(BoostEnsemble, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("boosting needs at least one sample".into()));
    }
    let expected = [cfg.base.input_channels, cfg.base.window_len];
    if let Some(i) = samples.iter().position(|(x, _)| x.shape() != expected) {
        return Err(Error::Shape(format!(
            "sample {i} has shape {:?}, base learner expects {expected:?}",
            samples[i].0.shape()
        )));
    }
    let base_score = 0.0;
    let eta = cfg.shrinkage;
    let targets: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let mut sums = vec![0.0; samples.len()];
    let mut fitted = vec![base_score; samples.len()];
    let mut ens = BoostEnsemble {
        base_models: Vec::with_capacity(cfg.stages),
        shrinkage: eta,
        base_score,
        stage_mse: vec![mse(&targets, &fitted)],
    };
    for t in 0..cfg.stages {
        let stage_samples: Vec<(Tensor, f64)> = samples
            .iter()
            .zip(&fitted)
            .map(|((x, y), yhat)| {
                let (g, h) = grad_hess_square_loss(*y, *yhat);
                (x.clone(), -g / h)
            })
            .collect();
        let seed = stage_seed(cfg.sgd.seed, t);
        let mut net = build_resnet(&cfg.base, seed)?;
        let sgd = SgdConfig {
            seed,
            ..cfg.sgd.clone()
        };
        fit_regressor(&mut net, &stage_samples, &sgd)
            .map_err(|e| e.context(format!("boost stage {}", t + 1)))?;
        for (i, (x, _)) in samples.iter().enumerate() {
            sums[i] += predict_scalar(&net, x)?;
            fitted[i] = base_score + eta * sums[i];
        }
        let stage_mse = mse(&targets, &fitted);
        if !stage_mse.is_finite() {
            return Err(Error::Training(format!(
                "boost stage {} produced non-finite predictions",
                t + 1
            )));
        }
        log::debug!(
            "boost stage {}/{}: train mse {stage_mse:.6e}",
            t + 1,
            cfg.stages
        );
        ens.stage_mse.push(stage_mse);
        ens.base_models.push(net);
    }
    Ok((ens, fitted))
}

pub fn train_ensemble(samples: &[(Tensor, f64)], cfg: &BoostConfig) -> Result<BoostEnsemble> {
    Ok(train_ensemble_tracked(samples, cfg)?.0)
}

impl BoostEnsemble {
    pub fn stages(&self) -> usize {
        self.base_models.len()
    }

    /// `base_score + eta * sum_t f_t(x)`, summed in stage order.
    pub fn predict(&self, x: &Tensor) -> Result<f64> {
        let mut sum = 0.0;
        for net in &self.base_models {
            sum += predict_scalar(net, x)?;
        }
        Ok(self.base_score + self.shrinkage * sum)
    }

    /// The ensemble as it stood after its first `stages` base learners.
    pub fn truncated(&self, stages: usize) -> BoostEnsemble {
        let k = stages.min(self.base_models.len());
        BoostEnsemble {
            base_models: self.base_models[..k].to_vec(),
            shrinkage: self.shrinkage,
            base_score: self.base_score,
            stage_mse: self.stage_mse[..=k].to_vec(),
        }
    }

    /// Next-day price implied by the predicted change rate.
    pub fn predict_price(&self, window_x: &Tensor, close_today: f64) -> Result<f64> {
        let rate = self.predict(window_x)?;
        price_from_rate(close_today, rate)
    }
}

/// `close_today * (1 + rate)`.
pub fn price_from_rate(close_today: f64, rate: f64) -> Result<f64> {
    if !(close_today > 0.0) {
        return Err(Error::Domain(format!(
            "close price must be positive, got {close_today}"
        )));
    }
    Ok(close_today * (1.0 + rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    #[test]
    fn grad_hess_values() {
        assert_eq!(grad_hess_square_loss(0.7, 0.7), (0.0, 2.0));
        assert_eq!(grad_hess_square_loss(1.0, 3.0), (4.0, 2.0));
    }

    #[test]
    fn grad_matches_finite_difference() {
        let loss = |y: f64, p: f64| (p - y) * (p - y);
        for &(y, p) in &[(1.0, 3.0), (-0.2, 0.5), (0.013, -0.004)] {
            let h = 1e-6;
            let fd = (loss(y, p + h) - loss(y, p - h)) / (2.0 * h);
            let (g, _) = grad_hess_square_loss(y, p);
            assert!((g - fd).abs() < 1e-8, "{g} vs {fd}");
        }
    }

    #[test]
    fn stage_objective_values() {
        assert_eq!(
            stage_objective(&[0.0, 0.0], &[1.0, -3.0], &[2.0, 2.0], 0.5, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            stage_objective(&[-2.0], &[4.0], &[2.0], 0.0, 0.0).unwrap(),
            -4.0
        );
        assert!(stage_objective(&[1.0], &[1.0, 2.0], &[2.0], 0.0, 0.0).is_err());
    }

    fn const_net(value: f64) -> Network {
        let mut net = Network::new(
            vec![1, 2],
            vec![Layer::Flatten, Layer::dense(2, 1).unwrap()],
        )
        .unwrap();
        let mut i = 0;
        net.visit_params_mut(&mut |_, t| {
            t.fill(if i == 1 { value } else { 0.0 });
            i += 1;
        });
        net
    }

    #[test]
    fn predict_is_additive() {
        let ens = BoostEnsemble {
            base_models: vec![const_net(0.1), const_net(-0.04)],
            shrinkage: 1.0,
            base_score: 0.0,
            stage_mse: vec![0.0; 3],
        };
        let x = Tensor::zeros(&[1, 2]);
        assert!((ens.predict(&x).unwrap() - 0.06).abs() < 1e-15);
        let zero = BoostEnsemble {
            base_models: vec![const_net(0.0)],
            base_score: 0.25,
            ..ens.clone()
        };
        assert_eq!(zero.predict(&x).unwrap(), 0.25);
    }

    #[test]
    fn price_conversion() {
        let ens = BoostEnsemble {
            base_models: vec![const_net(0.02)],
            shrinkage: 1.0,
            base_score: 0.0,
            stage_mse: vec![0.0; 2],
        };
        let x = Tensor::zeros(&[1, 2]);
        assert!((ens.predict_price(&x, 100.0).unwrap() - 102.0).abs() < 1e-12);
        assert_eq!(price_from_rate(55.5, 0.0).unwrap(), 55.5);
        assert!(price_from_rate(0.0, 0.1).is_err());
        let p = ens.predict_price(&x, 37.0).unwrap();
        assert!(((p - 37.0) / 37.0 - ens.predict(&x).unwrap()).abs() < 1e-12);
    }

    fn small_cfg(stages: usize, eta: f64) -> BoostConfig {
        BoostConfig {
            stages,
            shrinkage: eta,
            base: ResNetConfig {
                input_channels: 2,
                window_len: 5,
                blocks: 1,
                channels: 3,
                kernel: 3,
            },
            sgd: SgdConfig {
                learning_rate: 0.05,
                l2_lambda: 0.0,
                batch_size: 8,
                epochs: 10,
                seed: 3,
            },
        }
    }

    fn toy_samples(n: usize) -> Vec<(Tensor, f64)> {
        (0..n)
            .map(|i| {
                let data: Vec<f64> = (0..10).map(|j| ((i + j) as f64 * 0.37).sin()).collect();
                let y = 0.5 * data[4] - 0.3 * data[9];
                (Tensor::new(vec![2, 5], data).unwrap(), y)
            })
            .collect()
    }

    #[test]
    fn single_stage_is_plain_regressor() {
        let samples = toy_samples(24);
        let cfg = small_cfg(1, 1.0);
        let ens = train_ensemble(&samples, &cfg).unwrap();
        let seed = stage_seed(cfg.sgd.seed, 0);
        let mut net = build_resnet(&cfg.base, seed).unwrap();
        fit_regressor(
            &mut net,
            &samples,
            &SgdConfig {
                seed,
                ..cfg.sgd.clone()
            },
        )
        .unwrap();
        assert_eq!(ens.base_models[0], net);
        for (x, _) in &samples {
            assert_eq!(ens.predict(x).unwrap(), predict_scalar(&net, x).unwrap());
        }
    }

    #[test]
    fn tracked_values_match_predict() {
        let samples = toy_samples(20);
        let (ens, fitted) = train_ensemble_tracked(&samples, &small_cfg(3, 0.5)).unwrap();
        for ((x, _), f) in samples.iter().zip(&fitted) {
            assert_eq!(ens.predict(x).unwrap(), *f);
        }
        assert_eq!(ens.stage_mse.len(), 4);
    }

    #[test]
    fn truncation_matches_earlier_state() {
        let samples = toy_samples(20);
        let full = train_ensemble(&samples, &small_cfg(3, 0.5)).unwrap();
        let two = train_ensemble(&samples, &small_cfg(2, 0.5)).unwrap();
        assert_eq!(full.truncated(2), two);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(train_ensemble(&[], &small_cfg(1, 1.0)).is_err());
        let bad = vec![(Tensor::zeros(&[3, 5]), 0.0)];
        assert!(train_ensemble(&bad, &small_cfg(1, 1.0)).is_err());
        assert!(small_cfg(0, 1.0).validate().is_err());
        assert!(small_cfg(1, 0.0).validate().is_err());
    }
}
