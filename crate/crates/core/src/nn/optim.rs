use serde::{Deserialize, Serialize};

use super::layer::ParamKind;
use super::network::{Gradients, Network};
use crate::error::{Error, Result};

/// Mini-batch SGD settings.
///
/// `l2_lambda` is the coefficient of the penalty `sum_l ||W_l||^2` on weight
/// tensors; biases are never decayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            l2_lambda: 0.0,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // lr == 0 is allowed so a run can be frozen; negative or NaN is not.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(Error::Config(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// `p <- p - lr * (grad + 2 * lambda * p)` for weights, `p <- p - lr * grad`
/// for biases.
pub fn sgd_step(net: &mut Network, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
    if grads.0.len() != net.param_count() {
        return Err(Error::Shape(
            "gradient count does not match network parameters".into(),
        ));
    }
    let mut i = 0;
    let mut mismatch = false;
    let lr = cfg.learning_rate;
    let decay = 2.0 * cfg.l2_lambda;
    net.visit_params_mut(&mut |kind, p| {
        let g = &grads.0[i];
        i += 1;
        if g.shape() != p.shape() {
            mismatch = true;
            return;
        }
        let wd = if kind == ParamKind::Weight {
            decay
        } else {
            0.0
        };
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + wd * *pv);
        }
    });
    if mismatch {
        return Err(Error::Shape(
            "gradient tensor shape does not match parameter".into(),
        ));
    }
    Ok(())
}
