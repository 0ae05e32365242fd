//! Sparse autoencoder.
//!
//! The encoder ends in a sigmoid layer of `hidden` units whose batch-mean
//! activations `rho_hat` are pulled toward a small target `rho` by a
//! Bernoulli KL penalty:
//!
//! ```text
//! J_sparse = mean((decode(encode(x)) - x)^2) + beta * sum_j KL(rho || rho_hat_j)
//! KL(rho || q) = rho ln(rho / q) + (1 - rho) ln((1 - rho) / (1 - q))
//! ```
//!
//! The reconstruction term averages over samples and input dimensions. The
//! mean activation is taken over whatever batch is passed in, so during SGD it
//! is a per-mini-batch estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, Gradients, Layer, Network, SgdConfig, Trace};
use crate::resnet::{init_identity_block, residual_conv_block, shuffled};
use crate::tensor::Tensor;

/// Lower/upper clamp applied to `rho_hat` before taking logarithms.
pub const RHO_HAT_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SaeArch {
    /// `dense(d -> hidden) -> sigmoid`.
    Dense { hidden: usize },
    /// Treats the feature vector as a one-channel sequence:
    /// `conv(1 -> channels) -> blocks x residual -> flatten -> dense(-> hidden) -> sigmoid`.
    ResidualConv {
        hidden: usize,
        channels: usize,
        blocks: usize,
        kernel: usize,
    },
}

impl SaeArch {
    pub fn hidden(&self) -> usize {
        match self {
            SaeArch::Dense { hidden } | SaeArch::ResidualConv { hidden, .. } => *hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    pub arch: SaeArch,
    pub rho: f64,
    pub beta: f64,
    pub sgd: SgdConfig,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            arch: SaeArch::Dense { hidden: 10 },
            rho: 0.05,
            beta: 0.1,
            sgd: SgdConfig {
                learning_rate: 1.0,
                l2_lambda: 0.0,
                batch_size: 32,
                epochs: 100,
                seed: 0,
            },
        }
    }
}

impl SaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.arch.hidden() == 0 {
            return Err(Error::Config("sae hidden size must be positive".into()));
        }
        if let SaeArch::ResidualConv {
            channels, kernel, ..
        } = self.arch
        {
            if channels == 0 || kernel % 2 == 0 {
                return Err(Error::Config(
                    "sae conv channels must be positive and kernel odd".into(),
                ));
            }
        }
        self.sgd.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    pub encoder: Network,
    /// Dropped once the model is embedded in a pipeline.
    pub decoder: Option<Network>,
    pub rho: f64,
    pub beta: f64,
    pub input_dim: usize,
}

/// Per-epoch full-data `J_sparse`; entry 0 is the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainLog {
    pub loss: Vec<f64>,
}

impl SaeModel {
    /// Freshly initialized (untrained) model for `input_dim`-wide inputs.
    pub fn init(input_dim: usize, cfg: &SaeConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Shape("sae input dimension must be positive".into()));
        }
        let hidden = cfg.arch.hidden();
        let seed = cfg.sgd.seed;
        let encoder = match cfg.arch {
            SaeArch::Dense { hidden } => {
                let mut net = Network::new(
                    vec![input_dim],
                    vec![Layer::dense(input_dim, hidden)?, Layer::Sigmoid],
                )?;
                net.seeded_init(seed);
                net
            }
            SaeArch::ResidualConv {
                hidden,
                channels,
                blocks,
                kernel,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut entry = Layer::conv1d(1, channels, kernel)?;
                entry.init(&mut rng);
                let mut layers = vec![entry];
                for _ in 0..blocks {
                    let mut b = residual_conv_block(channels, input_dim, kernel)?;
                    init_identity_block(&mut b, &mut rng);
                    layers.push(b);
                }
                let mut head = Layer::dense(channels * input_dim, hidden)?;
                head.init(&mut rng);
                layers.extend([Layer::Flatten, head, Layer::Sigmoid]);
                Network::new(vec![1, input_dim], layers)?
            }
        };
        let mut decoder = Network::new(
            vec![hidden],
            vec![Layer::dense(hidden, input_dim)?, Layer::Sigmoid],
        )?;
        decoder.seeded_init(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        Ok(SaeModel {
            encoder,
            decoder: Some(decoder),
            rho: cfg.rho,
            beta: cfg.beta,
            input_dim,
        })
    }

    pub fn hidden(&self) -> usize {
        self.encoder.output_shape()[0]
    }

    fn encoder_input(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "sae expects {} input values, got shape {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        x.clone().reshape(self.encoder.input_shape())
    }

    /// Hidden activations for one feature vector; each lies in `(0, 1)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(&self.encoder_input(x)?)
    }

    fn decoder(&self) -> Result<&Network> {
        self.decoder.as_ref().ok_or_else(|| {
            Error::Config("sae decoder was discarded; reconstruction unavailable".into())
        })
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decoder()?.forward(&self.encode(x)?)
    }

    /// Encoder-only copy, as stored in a pipeline.
    pub fn without_decoder(&self) -> SaeModel {
        SaeModel {
            decoder: None,
            ..self.clone()
        }
    }
}

/// `rho_hat_j = (1/m) sum_i a_j(x_i)` over the batch.
pub fn mean_activation(model: &SaeModel, batch: &[Tensor]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::Data("mean activation of an empty batch".into()));
    }
    let mut acc = Tensor::zeros(&[model.hidden()]);
    for x in batch {
        acc.axpy(1.0, &model.encode(x)?);
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(acc)
}

fn clamp_rho_hat(q: f64) -> f64 {
    q.clamp(RHO_HAT_EPS, 1.0 - RHO_HAT_EPS)
}

fn check_kl_domain(rho: f64, rho_hat: &Tensor) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!(
            "sparsity target must lie in (0, 1), got {rho}"
        )));
    }
    if let Some(q) = rho_hat.data().iter().find(|q| !(**q >= 0.0 && **q <= 1.0)) {
        return Err(Error::Domain(format!("mean activation {q} outside [0, 1]")));
    }
    Ok(())
}

/// `sum_j KL(rho || rho_hat_j)` for Bernoulli distributions, with `rho_hat`
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn kl_penalty(rho: f64, rho_hat: &Tensor) -> Result<f64> {
    check_kl_domain(rho, rho_hat)?;
    Ok(rho_hat
        .data()
        .iter()
        .map(|&q| {
            let q = clamp_rho_hat(q);
            rho * (rho / q).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - q)).ln()
        })
        .sum())
}

/// Derivative of the penalty w.r.t. each `rho_hat_j` (zero where clamped).
fn kl_gradient(rho: f64, rho_hat: &Tensor) -> Tensor {
    rho_hat.map(|q| {
        if !(RHO_HAT_EPS..=1.0 - RHO_HAT_EPS).contains(&q) {
            0.0
        } else {
            -rho / q + (1.0 - rho) / (1.0 - q)
        }
    })
}

/// Reconstruction MSE plus `beta` times the KL penalty of the batch mean
/// activation.
pub fn sparse_loss(model: &SaeModel, batch: &[Tensor]) -> Result<f64> {
    Ok(sparse_loss_parts(model, batch)?.0)
}

/// `(J_sparse, reconstruction MSE, KL penalty)`.
pub fn sparse_loss_parts(model: &SaeModel, batch: &[Tensor]) -> Result<(f64, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Data("sparse loss of an empty batch".into()));
    }
    let dec = model.decoder()?;
    let mut acts = Vec::with_capacity(batch.len());
    let mut sse = 0.0;
    for x in batch {
        let a = model.encode(x)?;
        let r = dec.forward(&a)?;
        sse += r
            .data()
            .iter()
            .zip(x.data())
            .map(|(r, x)| (r - x) * (r - x))
            .sum::<f64>();
        acts.push(a);
    }
    let mse = sse / (batch.len() * model.input_dim) as f64;
    let mut rho_hat = Tensor::zeros(&[model.hidden()]);
    acts.iter().for_each(|a| rho_hat.axpy(1.0, a));
    rho_hat.scale(1.0 / batch.len() as f64);
    let kl = kl_penalty(model.rho, &rho_hat)?;
    Ok((mse + model.beta * kl, mse, kl))
}

/// Loss and exact gradients for encoder and decoder parameters, including the
/// KL term's path through `rho_hat`.
pub fn sparse_loss_gradients(
    model: &SaeModel,
    batch: &[Tensor],
) -> Result<(f64, Gradients, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Data("sparse loss of an empty batch".into()));
    }
    let dec = model.decoder()?;
    let m = batch.len() as f64;
    let norm = m * model.input_dim as f64;
    let inputs: Vec<Tensor> = batch
        .iter()
        .map(|x| model.encoder_input(x))
        .collect::<Result<_>>()?;
    let traces: Vec<Trace> = inputs
        .iter()
        .map(|x| model.encoder.forward_trace(x))
        .collect::<Result<_>>()?;

    let mut rho_hat = Tensor::zeros(&[model.hidden()]);
    traces.iter().for_each(|t| rho_hat.axpy(1.0, t.output()));
    rho_hat.scale(1.0 / m);
    let kl = kl_penalty(model.rho, &rho_hat)?;
    let mut kl_up = kl_gradient(model.rho, &rho_hat);
    kl_up.scale(model.beta / m);

    let mut g_enc = Gradients::zeros_like(&model.encoder);
    let mut g_dec = Gradients::zeros_like(dec);
    let mut sse = 0.0;
    for (x, tr) in batch.iter().zip(&traces) {
        let dtr = dec.forward_trace(tr.output())?;
        let diff: Vec<f64> = dtr
            .output()
            .data()
            .iter()
            .zip(x.data())
            .map(|(r, x)| r - x)
            .collect();
        sse += diff.iter().map(|d| d * d).sum::<f64>();
        let up = Tensor::new(
            vec![model.input_dim],
            diff.iter().map(|d| 2.0 * d / norm).collect(),
        )?;
        let mut da = dec.backward_accumulate(&dtr, &up, &mut g_dec)?;
        da.axpy(1.0, &kl_up);
        model.encoder.backward_accumulate(tr, &da, &mut g_enc)?;
    }
    Ok((sse / norm + model.beta * kl, g_enc, g_dec))
}

/// Trains a sparse autoencoder on `data` (all samples the same length).
///
/// The returned model is the lowest full-data `J_sparse` snapshot among the
/// initial model and every epoch end.
pub fn train_sae(data: &[Tensor], cfg: &SaeConfig) -> Result<(SaeModel, SaeTrainLog)> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::Data("sae training data is empty".into()))?;
    let dim = first.len();
    if let Some(i) = data.iter().position(|x| x.len() != dim) {
        return Err(Error::Shape(format!(
            "sae sample {i} has {} values, expected {dim}",
            data[i].len()
        )));
    }
    let mut model = SaeModel::init(dim, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sgd.seed);
    let initial = sparse_loss(&model, data)?;
    let mut log = SaeTrainLog {
        loss: vec![initial],
    };
    let mut best = (initial, model.clone());
    for epoch in 0..cfg.sgd.epochs {
        let order = shuffled(data.len(), &mut rng);
        for chunk in order.chunks(cfg.sgd.batch_size) {
            let batch: Vec<Tensor> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, g_enc, g_dec) = sparse_loss_gradients(&model, &batch)?;
            if !g_enc.is_finite() || !g_dec.is_finite() {
                return Err(Error::Training(format!(
                    "sae gradient not finite in epoch {epoch}"
                )));
            }
            sgd_step(&mut model.encoder, &g_enc, &cfg.sgd)?;
            sgd_step(
                model
                    .decoder
                    .as_mut()
                    .expect("decoder present while training"),
                &g_dec,
                &cfg.sgd,
            )?;
        }
        let loss = sparse_loss(&model, data)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "sae loss became {loss} in epoch {epoch}"
            )));
        }
        log.loss.push(loss);
        if loss < best.0 {
            best = (loss, model.clone());
        }
    }
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn zero_weights(net: &mut Network) {
        net.visit_params_mut(&mut |_, t| t.fill(0.0));
    }

    fn cfg(hidden: usize) -> SaeConfig {
        SaeConfig {
            arch: SaeArch::Dense { hidden },
            ..SaeConfig::default()
        }
    }

    #[test]
    fn mean_activation_of_one_sample() {
        let model = SaeModel::init(4, &cfg(3)).unwrap();
        let x = Tensor::vector(&[0.1, 0.9, 0.3, 0.4]);
        assert_eq!(
            mean_activation(&model, std::slice::from_ref(&x)).unwrap(),
            model.encode(&x).unwrap()
        );
    }

    #[test]
    fn zero_encoder_activates_half() {
        let mut model = SaeModel::init(4, &cfg(3)).unwrap();
        zero_weights(&mut model.encoder);
        let batch = vec![
            Tensor::vector(&[0.1, 0.9, 0.3, 0.4]),
            Tensor::vector(&[1.0, 0.0, 0.5, 0.2]),
        ];
        assert_eq!(mean_activation(&model, &batch).unwrap().data(), &[0.5; 3]);
        assert_eq!(model.encode(&batch[0]).unwrap().data(), &[0.5; 3]);
    }

    #[test]
    fn mean_of_two_activations() {
        // single hidden unit driven by one input: pick inputs giving 0.2 and 0.4
        let mut model = SaeModel::init(1, &cfg(1)).unwrap();
        model
            .encoder
            .visit_params_mut(&mut |k, t| t.fill(if k == ParamKind::Weight { 1.0 } else { 0.0 }));
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let batch = vec![Tensor::vector(&[logit(0.2)]), Tensor::vector(&[logit(0.4)])];
        let r = mean_activation(&model, &batch).unwrap();
        assert!((r.data()[0] - 0.3).abs() < 1e-15);
        assert!(mean_activation(&model, &[]).is_err());
    }

    #[test]
    fn kl_values() {
        assert_eq!(
            kl_penalty(0.05, &Tensor::vector(&[0.05, 0.05])).unwrap(),
            0.0
        );
        let v = kl_penalty(0.05, &Tensor::vector(&[0.2])).unwrap();
        let expected = 0.05 * 0.25f64.ln() + 0.95 * (0.95f64 / 0.8).ln();
        assert!((v - expected).abs() < 1e-15);
        // value computed separately with mpmath
        assert!((v - 0.093_943_026_024_331_54).abs() < 1e-12);
    }

    #[test]
    fn kl_shrinks_toward_target() {
        let mut prev = f64::INFINITY;
        for step in (1..=20).rev() {
            let q = 0.05 + 0.01 * step as f64;
            let v = kl_penalty(0.05, &Tensor::vector(&[q])).unwrap();
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn kl_domain_errors() {
        assert!(kl_penalty(0.05, &Tensor::vector(&[f64::NAN])).is_err());
        assert!(kl_penalty(0.05, &Tensor::vector(&[1.5])).is_err());
        assert!(kl_penalty(0.0, &Tensor::vector(&[0.5])).is_err());
        // saturated units are clamped, not rejected
        assert!(kl_penalty(0.05, &Tensor::vector(&[0.0, 1.0]))
            .unwrap()
            .is_finite());
    }

    #[test]
    fn beta_zero_is_pure_reconstruction() {
        let model = SaeModel {
            beta: 0.0,
            ..SaeModel::init(3, &cfg(2)).unwrap()
        };
        let batch = vec![Tensor::vector(&[0.2, 0.5, 0.7])];
        let r = model.reconstruct(&batch[0]).unwrap();
        let mse = r
            .data()
            .iter()
            .zip(batch[0].data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 3.0;
        assert!((sparse_loss(&model, &batch).unwrap() - mse).abs() < 1e-15);
    }

    #[test]
    fn untrained_loss_positive_finite() {
        let model = SaeModel::init(5, &cfg(2)).unwrap();
        let batch: Vec<_> = (0..5)
            .map(|i| Tensor::vector(&[i as f64 / 5.0; 5]))
            .collect();
        let l = sparse_loss(&model, &batch).unwrap();
        assert!(l > 0.0 && l.is_finite());
    }

    #[test]
    fn discarded_decoder_still_encodes() {
        let model = SaeModel::init(3, &cfg(2)).unwrap().without_decoder();
        let x = Tensor::vector(&[0.1, 0.2, 0.3]);
        assert_eq!(model.encode(&x).unwrap(), model.encode(&x).unwrap());
        assert!(sparse_loss(&model, &[x]).is_err());
    }

    #[test]
    fn residual_conv_arch_encodes_into_unit_interval() {
        let c = SaeConfig {
            arch: SaeArch::ResidualConv {
                hidden: 3,
                channels: 2,
                blocks: 1,
                kernel: 3,
            },
            ..SaeConfig::default()
        };
        let model = SaeModel::init(6, &c).unwrap();
        let a = model
            .encode(&Tensor::vector(&[0.1, 0.5, 0.9, 0.3, 0.2, 0.8]))
            .unwrap();
        assert_eq!(a.shape(), &[3]);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_learning_rate_keeps_model() {
        let c = SaeConfig {
            sgd: SgdConfig {
                learning_rate: 0.0,
                epochs: 3,
                ..SaeConfig::default().sgd
            },
            ..cfg(2)
        };
        let data: Vec<_> = (0..10)
            .map(|i| Tensor::vector(&[i as f64 / 10.0, 0.5, 1.0 - i as f64 / 10.0]))
            .collect();
        let (model, log) = train_sae(&data, &c).unwrap();
        assert_eq!(model, SaeModel::init(3, &c).unwrap());
        assert!(log.loss.iter().all(|&l| l == log.loss[0]));
    }

    #[test]
    fn rejects_ragged_data() {
        let data = vec![Tensor::vector(&[0.1, 0.2]), Tensor::vector(&[0.3])];
        assert!(train_sae(&data, &cfg(1)).is_err());
        assert!(train_sae(&[], &cfg(1)).is_err());
    }
}
