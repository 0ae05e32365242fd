//! 1-D residual convolutional regressor used as the boosting base learner.
//!
//! Layout: entry conv -> `blocks` x residual(conv, relu, conv) -> flatten ->
//! dense(1). The second conv of every block starts at zero so each block is
//! the identity map until training moves it. The head also starts at zero, so
//! an untrained learner predicts 0 and a boosting stage begins from "no
//! correction".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, Gradients, Layer, Network, ParamKind, SgdConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetConfig {
    pub input_channels: usize,
    pub window_len: usize,
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            input_channels: 1,
            window_len: 20,
            blocks: 2,
            channels: 8,
            kernel: 3,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.window_len == 0 || self.channels == 0 {
            return Err(Error::Config(
                "resnet input_channels, window_len and channels must be positive".into(),
            ));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "resnet kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

// Separate ChaCha streams per component keep the entry conv and the head
// identical no matter how many blocks sit between them.
const ENTRY_STREAM: u64 = 0;
const BLOCK_STREAM_BASE: u64 = 16;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shape-preserving `conv -> relu -> conv` block over `[channels, len]`.
pub fn residual_conv_block(channels: usize, len: usize, kernel: usize) -> Result<Layer> {
    let inner = Network::new(
        vec![channels, len],
        vec![
            Layer::conv1d(channels, channels, kernel)?,
            Layer::Relu,
            Layer::conv1d(channels, channels, kernel)?,
        ],
    )?;
    Layer::residual(inner)
}

/// Initializes a residual block from its own stream, then zeroes the second
/// conv so the block starts as the identity.
pub(crate) fn init_identity_block(layer: &mut Layer, rng: &mut ChaCha8Rng) {
    if let Layer::Residual(inner) = layer {
        inner.init_with(rng);
        let mut idx = 0;
        // parameters are [conv1.w, conv1.b, conv2.w, conv2.b]
        inner.visit_params_mut(&mut |_, t| {
            if idx >= 2 {
                t.fill(0.0);
            }
            idx += 1;
        });
    }
}

pub fn build_resnet(cfg: &ResNetConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let (ch, len, k) = (cfg.channels, cfg.window_len, cfg.kernel);
    let mut entry = Layer::conv1d(cfg.input_channels, ch, k)?;
    entry.init(&mut stream_rng(seed, ENTRY_STREAM));
    let mut layers = vec![entry];
    for b in 0..cfg.blocks {
        let mut block = residual_conv_block(ch, len, k)?;
        init_identity_block(
            &mut block,
            &mut stream_rng(seed, BLOCK_STREAM_BASE + b as u64),
        );
        layers.push(block);
    }
    layers.push(Layer::Flatten);
    let head = Layer::dense(ch * len, 1)?;
    layers.push(head);
    Network::new(vec![cfg.input_channels, len], layers)
}

/// Scalar output of a single-output network.
pub fn predict_scalar(net: &Network, x: &Tensor) -> Result<f64> {
    let out = net.forward(x)?;
    if out.len() != 1 {
        return Err(Error::Shape(format!(
            "expected scalar output, got {:?}",
            out.shape()
        )));
    }
    Ok(out.data()[0])
}

/// `mean_i (net(x_i) - t_i)^2 + l2 * sum ||W||^2` over all samples.
pub fn regression_objective(
    net: &Network,
    samples: &[(Tensor, f64)],
    l2_lambda: f64,
) -> Result<f64> {
    Ok(regression_mse(net, samples)? + l2_lambda * net.weight_norm_sq())
}

pub fn regression_mse(net: &Network, samples: &[(Tensor, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    let mut acc = 0.0;
    for (x, t) in samples {
        let e = predict_scalar(net, x)? - t;
        acc += e * e;
    }
    Ok(acc / samples.len() as f64)
}

/// Mean gradient of the squared error over `batch` (no decay term; the
/// optimizer adds that).
fn batch_gradients(net: &Network, batch: &[&(Tensor, f64)]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(net);
    let m = batch.len() as f64;
    for (x, t) in batch {
        let trace = net.forward_trace(x)?;
        let f = trace.output().data()[0];
        let up = Tensor::scalar(2.0 * (f - t) / m);
        net.backward_accumulate(&trace, &up, &mut grads)?;
    }
    Ok(grads)
}

/// Gradient of [`regression_objective`] with respect to every parameter.
pub fn regression_objective_gradients(
    net: &Network,
    samples: &[(Tensor, f64)],
    l2_lambda: f64,
) -> Result<Gradients> {
    if samples.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    let batch: Vec<&(Tensor, f64)> = samples.iter().collect();
    let mut grads = batch_gradients(net, &batch)?;
    for ((kind, p), g) in net.params().into_iter().zip(grads.0.iter_mut()) {
        if kind == ParamKind::Weight {
            g.axpy(2.0 * l2_lambda, p);
        }
    }
    Ok(grads)
}

pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Fits `net` to `(x, target)` pairs by mini-batch SGD on the squared error
/// plus L2 weight decay.
///
/// Returns the full-data objective before training and after every epoch.
/// The network left in `net` is the lowest-objective snapshot seen, so the
/// final objective never exceeds the initial one.
pub fn fit_regressor(
    net: &mut Network,
    samples: &[(Tensor, f64)],
    sgd: &SgdConfig,
) -> Result<Vec<f64>> {
    sgd.validate()?;
    if samples.is_empty() {
        return Err(Error::Data(
            "fit_regressor needs at least one sample".into(),
        ));
    }
    if net.output_shape() != [1] {
        return Err(Error::Shape(format!(
            "regressor must have scalar output, got {:?}",
            net.output_shape()
        )));
    }
    let shape = samples[0].0.shape();
    if let Some((i, _)) = samples
        .iter()
        .enumerate()
        .find(|(_, (x, _))| x.shape() != shape)
    {
        return Err(Error::Shape(format!(
            "sample {i} shape differs from sample 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let initial = regression_objective(net, samples, sgd.l2_lambda)?;
    let mut trajectory = vec![initial];
    let mut best = (initial, net.clone());
    for epoch in 0..sgd.epochs {
        let order = shuffled(samples.len(), &mut rng);
        for chunk in order.chunks(sgd.batch_size) {
            let batch: Vec<&(Tensor, f64)> = chunk.iter().map(|&i| &samples[i]).collect();
            let grads = batch_gradients(net, &batch)?;
            if !grads.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient in epoch {epoch}"
                )));
            }
            sgd_step(net, &grads, sgd)?;
        }
        let obj = regression_objective(net, samples, sgd.l2_lambda)?;
        if !obj.is_finite() {
            return Err(Error::Training(format!(
                "objective became {obj} in epoch {epoch}"
            )));
        }
        trajectory.push(obj);
        if obj < best.0 {
            best = (obj, net.clone());
        }
    }
    *net = best.1;
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;

    fn cfg(blocks: usize) -> ResNetConfig {
        ResNetConfig {
            input_channels: 3,
            window_len: 6,
            blocks,
            channels: 4,
            kernel: 3,
        }
    }

    fn probe(i: u64) -> Tensor {
        let data = (0..18)
            .map(|j| ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.4)
            .collect();
        Tensor::new(vec![3, 6], data).unwrap()
    }

    #[test]
    fn zero_blocks_is_entry_plus_head() {
        let net = build_resnet(&cfg(0), 1).unwrap();
        let kinds: Vec<_> = net.layers().iter().map(Layer::kind_name).collect();
        assert_eq!(kinds, ["conv1d", "flatten", "dense"]);
    }

    #[test]
    fn deeper_network_starts_as_shallower() {
        let shallow = build_resnet(&cfg(0), 9).unwrap();
        let deep = build_resnet(&cfg(3), 9).unwrap();
        for i in 0..20 {
            let x = probe(i);
            assert_eq!(shallow.forward(&x).unwrap(), deep.forward(&x).unwrap());
        }
    }

    #[test]
    fn output_is_scalar() {
        for blocks in 0..3 {
            let net = build_resnet(&cfg(blocks), 2).unwrap();
            assert_eq!(net.output_shape(), &[1]);
            assert_eq!(net.forward(&probe(0)).unwrap().shape(), &[1]);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let bad = ResNetConfig {
            kernel: 4,
            ..cfg(1)
        };
        assert!(build_resnet(&bad, 0).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_network() {
        let mut net = build_resnet(&cfg(1), 4).unwrap();
        let before = net.clone();
        let samples: Vec<_> = (0..5).map(|i| (probe(i), 0.1 * i as f64)).collect();
        let sgd = SgdConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..SgdConfig::default()
        };
        let traj = fit_regressor(&mut net, &samples, &sgd).unwrap();
        assert_eq!(net, before);
        assert!(traj.iter().all(|&v| v == traj[0]));
    }

    #[test]
    fn memorizes_single_sample() {
        let mut net = build_resnet(&cfg(1), 4).unwrap();
        let samples = vec![(probe(3), 0.37)];
        let sgd = SgdConfig {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 1,
            ..SgdConfig::default()
        };
        fit_regressor(&mut net, &samples, &sgd).unwrap();
        let mse = regression_mse(&net, &samples).unwrap();
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn ridge_limit_shrinks_weights() {
        let mut net = build_resnet(&cfg(1), 5).unwrap();
        let samples: Vec<_> = (0..16).map(|i| (probe(i), 0.0)).collect();
        let before = net.weight_norm_sq();
        let sgd = SgdConfig {
            learning_rate: 0.01,
            l2_lambda: 1.0,
            epochs: 30,
            batch_size: 4,
            seed: 1,
        };
        let traj = fit_regressor(&mut net, &samples, &sgd).unwrap();
        assert!(
            net.weight_norm_sq() <= 0.5 * before,
            "{} vs {before}",
            net.weight_norm_sq()
        );
        assert!(traj.last().unwrap() <= &traj[0]);
        let max_out = samples
            .iter()
            .map(|(x, _)| predict_scalar(&net, x).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(max_out < 0.05, "{max_out}");
    }

    #[test]
    fn endpoint_objective_not_worse() {
        let mut net = build_resnet(&cfg(2), 6).unwrap();
        let samples: Vec<_> = (0..20)
            .map(|i| (probe(i), (i as f64 * 0.3).sin()))
            .collect();
        let sgd = SgdConfig {
            learning_rate: 0.02,
            epochs: 10,
            batch_size: 5,
            ..SgdConfig::default()
        };
        let traj = fit_regressor(&mut net, &samples, &sgd).unwrap();
        let fin = regression_objective(&net, &samples, 0.0).unwrap();
        assert!(fin <= traj[0]);
        assert_eq!(fin, traj.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn block_inner_second_conv_is_zero() {
        let net = build_resnet(&cfg(2), 3).unwrap();
        for l in net.layers() {
            if let Layer::Residual(inner) = l {
                let p = inner.params();
                assert!(p[2].1.data().iter().all(|&v| v == 0.0));
                assert_eq!(p[2].0, ParamKind::Weight);
                assert!(p[0].1.data().iter().any(|&v| v != 0.0));
            }
        }
    }
}
