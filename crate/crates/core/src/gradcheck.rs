//! Finite-difference verification of every analytic gradient.
//!
//! Each coordinate is compared against the central difference
//! `(f(p + h) - f(p - h)) / 2h` with `h = 1e-5`, and passes when either the
//! relative error is below `1e-4` or the absolute error is below `1e-7`.
//! Coordinates sitting on a ReLU kink (where the one-sided slopes disagree)
//! are counted separately rather than failed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::derive_seed;
use crate::error::Result;
use crate::nn::{Layer, Network};
use crate::resnet::{
    build_resnet, regression_objective, regression_objective_gradients, residual_conv_block,
    ResNetConfig,
};
use crate::sae::{sparse_loss, sparse_loss_gradients, SaeArch, SaeConfig, SaeModel};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

pub const SUITES: [&str; 8] = [
    "dense", "conv1d", "relu", "sigmoid", "flatten", "residual", "sae_loss", "resnet",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub cases: usize,
    pub coordinates: usize,
    pub kinks: usize,
    pub failures: usize,
    /// Largest absolute error over all coordinates.
    pub max_abs_error: f64,
    /// Largest relative error over coordinates whose absolute error exceeds
    /// the absolute tolerance.
    pub max_rel_error: f64,
    pub first_failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub suites: Vec<SuiteResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.failures == 0)
    }
}

impl SuiteResult {
    /// Checks one coordinate. `f(delta)` is the loss with the coordinate
    /// shifted by `delta`.
    fn check(
        &mut self,
        what: impl FnOnce() -> String,
        analytic: f64,
        mut f: impl FnMut(f64) -> f64,
    ) {
        self.coordinates += 1;
        let (fp, fm) = (f(STEP), f(-STEP));
        let numeric = (fp - fm) / (2.0 * STEP);
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs());
        self.max_abs_error = self.max_abs_error.max(abs);
        if abs < ABS_TOL {
            return;
        }
        self.max_rel_error = self.max_rel_error.max(rel);
        if rel < REL_TOL {
            return;
        }
        let f0 = f(0.0);
        let (right, left) = ((fp - f0) / STEP, (f0 - fm) / STEP);
        if (right - left).abs() > 1e-3 {
            self.kinks += 1;
            return;
        }
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(format!(
                "{}: analytic {analytic:e}, numeric {numeric:e}",
                what()
            ));
        }
    }
}

fn perturbed(net: &Network, tensor: usize, entry: usize, delta: f64) -> Network {
    let mut n = net.clone();
    let mut k = 0;
    n.visit_params_mut(&mut |_, t| {
        if k == tensor {
            t.data_mut()[entry] += delta;
        }
        k += 1;
    });
    n
}

fn randomize(net: &mut Network, rng: &mut ChaCha8Rng, scale: f64) {
    net.visit_params_mut(&mut |_, t| {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    });
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// `u . net(x)`, checked against all parameters and the input.
fn check_network(
    res: &mut SuiteResult,
    net: &Network,
    x: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let u = random_tensor(net.output_shape(), rng, -1.0, 1.0);
    let loss = |n: &Network, x: &Tensor| n.forward(x).map(|y| y.dot(&u)).expect("forward");
    let (grads, dx) = net.backward(x, &u)?;
    let case = res.cases;
    for (ti, g) in grads.tensors().iter().enumerate() {
        for (j, &a) in g.data().iter().enumerate() {
            res.check(
                || format!("case {case} param {ti}[{j}]"),
                a,
                |d| loss(&perturbed(net, ti, j, d), x),
            );
        }
    }
    for (j, &a) in dx.data().iter().enumerate() {
        res.check(
            || format!("case {case} input[{j}]"),
            a,
            |d| {
                let mut xp = x.clone();
                xp.data_mut()[j] += d;
                loss(net, &xp)
            },
        );
    }
    Ok(())
}

fn layer_case(suite: &str, rng: &mut ChaCha8Rng) -> Result<(Network, Tensor)> {
    let mut net = match suite {
        "dense" => {
            let (i, o) = (rng.gen_range(1..7), rng.gen_range(1..7));
            Network::new(vec![i], vec![Layer::dense(i, o)?])?
        }
        "conv1d" => {
            let (ci, co, k, len) = (
                rng.gen_range(1..4),
                rng.gen_range(1..4),
                2 * rng.gen_range(0..3) + 1,
                rng.gen_range(1..9),
            );
            Network::new(vec![ci, len], vec![Layer::conv1d(ci, co, k)?])?
        }
        "relu" => Network::new(vec![rng.gen_range(1..9)], vec![Layer::Relu])?,
        "sigmoid" => Network::new(vec![rng.gen_range(1..9)], vec![Layer::Sigmoid])?,
        "flatten" => Network::new(
            vec![rng.gen_range(1..4), rng.gen_range(1..5)],
            vec![Layer::Flatten],
        )?,
        "residual" => {
            let (c, k, len) = (
                rng.gen_range(1..4),
                2 * rng.gen_range(0..3) + 1,
                rng.gen_range(1..9),
            );
            Network::new(vec![c, len], vec![residual_conv_block(c, len, k)?])?
        }
        other => unreachable!("unknown layer suite {other}"),
    };
    randomize(&mut net, rng, 1.0);
    let mut x = random_tensor(net.input_shape(), rng, -2.0, 2.0);
    if suite == "relu" {
        // keep clear of the kink so every coordinate is differentiable
        for v in x.data_mut() {
            if v.abs() < 1e-2 {
                *v = 0.5;
            }
        }
    }
    Ok((net, x))
}

fn sae_case(res: &mut SuiteResult, rng: &mut ChaCha8Rng) -> Result<()> {
    let d = rng.gen_range(2..7);
    let hidden = rng.gen_range(1..6);
    let arch = if rng.gen_bool(0.5) {
        SaeArch::Dense { hidden }
    } else {
        SaeArch::ResidualConv {
            hidden,
            channels: rng.gen_range(1..3),
            blocks: rng.gen_range(0..3),
            kernel: 3,
        }
    };
    let cfg = SaeConfig {
        arch,
        rho: rng.gen_range(0.02..0.5),
        beta: rng.gen_range(0.1..3.0),
        ..SaeConfig::default()
    };
    let mut model = SaeModel::init(d, &cfg)?;
    randomize(&mut model.encoder, rng, 0.8);
    randomize(
        model.decoder.as_mut().expect("fresh model has a decoder"),
        rng,
        0.8,
    );
    let batch: Vec<Tensor> = (0..rng.gen_range(1..6))
        .map(|_| random_tensor(&[d], rng, 0.0, 1.0))
        .collect();
    let (_, genc, gdec) = sparse_loss_gradients(&model, &batch)?;
    let case = res.cases;
    for (ti, g) in genc.tensors().iter().enumerate() {
        for (j, &a) in g.data().iter().enumerate() {
            res.check(
                || format!("case {case} encoder param {ti}[{j}]"),
                a,
                |dl| {
                    let m = SaeModel {
                        encoder: perturbed(&model.encoder, ti, j, dl),
                        ..model.clone()
                    };
                    sparse_loss(&m, &batch).expect("loss")
                },
            );
        }
    }
    let dec = model.decoder.as_ref().expect("decoder");
    for (ti, g) in gdec.tensors().iter().enumerate() {
        for (j, &a) in g.data().iter().enumerate() {
            res.check(
                || format!("case {case} decoder param {ti}[{j}]"),
                a,
                |dl| {
                    let m = SaeModel {
                        decoder: Some(perturbed(dec, ti, j, dl)),
                        ..model.clone()
                    };
                    sparse_loss(&m, &batch).expect("loss")
                },
            );
        }
    }
    Ok(())
}

fn resnet_case(res: &mut SuiteResult, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = ResNetConfig {
        input_channels: rng.gen_range(1..4),
        window_len: rng.gen_range(1..7),
        blocks: rng.gen_range(0..3),
        channels: rng.gen_range(1..4),
        kernel: 2 * rng.gen_range(0..2) + 1,
    };
    let mut net = build_resnet(&cfg, rng.gen())?;
    randomize(&mut net, rng, 0.6);
    let samples: Vec<(Tensor, f64)> = (0..rng.gen_range(1..5))
        .map(|_| {
            (
                random_tensor(&[cfg.input_channels, cfg.window_len], rng, -1.0, 1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let l2 = rng.gen_range(0.0..0.1);
    let grads = regression_objective_gradients(&net, &samples, l2)?;
    let case = res.cases;
    for (ti, g) in grads.tensors().iter().enumerate() {
        for (j, &a) in g.data().iter().enumerate() {
            res.check(
                || format!("case {case} param {ti}[{j}]"),
                a,
                |d| {
                    regression_objective(&perturbed(&net, ti, j, d), &samples, l2)
                        .expect("objective")
                },
            );
        }
    }
    Ok(())
}

pub fn run_suite(suite: &str, seed: u64, cases: usize) -> Result<SuiteResult> {
    let tag = SUITES.iter().position(|s| *s == suite).ok_or_else(|| {
        crate::Error::Config(format!(
            "unknown gradient suite `{suite}` (known: {})",
            SUITES.join(", ")
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + tag as u64));
    let mut res = SuiteResult {
        suite: suite.to_string(),
        ..SuiteResult::default()
    };
    for _ in 0..cases {
        match suite {
            "sae_loss" => sae_case(&mut res, &mut rng)?,
            "resnet" => resnet_case(&mut res, &mut rng)?,
            _ => {
                let (net, x) = layer_case(suite, &mut rng)?;
                check_network(&mut res, &net, &x, &mut rng)?;
            }
        }
        res.cases += 1;
    }
    Ok(res)
}

/// Runs every suite with `cases` random instances each.
pub fn run_gradcheck(seed: u64, cases: usize) -> Result<GradCheckReport> {
    let suites = SUITES
        .iter()
        .map(|s| run_suite(s, seed, cases))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport {
        step: STEP,
        rel_tol: REL_TOL,
        abs_tol: ABS_TOL,
        suites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let r = run_gradcheck(3, 5).unwrap();
        for s in &r.suites {
            assert_eq!(s.failures, 0, "{s:?}");
            assert!(s.coordinates > 0, "{s:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut res = SuiteResult::default();
        res.check(|| "x".into(), 1.0, |d| 3.0 * d);
        assert_eq!(res.failures, 1);
        res.check(|| "x".into(), 3.0, |d| 3.0 * d);
        assert_eq!(res.failures, 1);
    }

    #[test]
    fn kinks_are_not_failures() {
        let mut res = SuiteResult::default();
        res.check(|| "x".into(), 1.0, |d: f64| (d + 1e-6).max(0.0));
        assert_eq!((res.failures, res.kinks), (0, 1));
    }
}
