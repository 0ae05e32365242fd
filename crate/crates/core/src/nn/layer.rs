use rand::Rng;

use super::network::{Network, Trace};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether a parameter tensor is a weight (decayed) or a bias (not decayed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Fully connected layer `y = W x + b` on a 1-D input.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    /// `[out_dim]`
    pub bias: Tensor,
}

/// Same-padded, stride-1 1-D convolution over a `[channels, length]` input.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out_channels, in_channels, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Relu,
    Sigmoid,
    Flatten,
    /// Shortcut block computing `inner(x) + x`.
    Residual(Network),
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Same-padded stride-1 convolution.
///
/// `input` is `[c_in, len]`, `kernels` is `[c_out, c_in, k]` with `k` odd and
/// `bias` is `[c_out]`. Each output is
/// `out[o][t] = bias[o] + sum_{c,j} kernels[o][c][j] * padded[c][t + j]`
/// where `padded` has `(k - 1) / 2` zeros on both ends.
pub fn conv1d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, len) = match input.shape() {
        [c, l] => (*c, *l),
        s => {
            return Err(Error::Shape(format!(
                "conv1d input must be [channels, length], got {s:?}"
            )))
        }
    };
    let (c_out, kc_in, k) = match kernels.shape() {
        [o, c, k] => (*o, *c, *k),
        s => {
            return Err(Error::Shape(format!(
                "conv1d kernels must be [out, in, k], got {s:?}"
            )))
        }
    };
    if kc_in != c_in {
        return Err(Error::Shape(format!(
            "conv1d input channels: input has {c_in}, kernels expect {kc_in}"
        )));
    }
    if k % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv1d kernel width must be odd, got {k}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv1d bias: expected [{c_out}], got {:?}",
            bias.shape()
        )));
    }
    Ok(conv_forward_raw(
        input.data(),
        kernels.data(),
        bias.data(),
        c_in,
        c_out,
        k,
        len,
    ))
}

fn conv_forward_raw(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    len: usize,
) -> Tensor {
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; c_out * len];
    for o in 0..c_out {
        let row = &mut out[o * len..(o + 1) * len];
        row.fill(b[o]);
        for c in 0..c_in {
            let xc = &x[c * len..(c + 1) * len];
            let wk = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (j, &wj) in wk.iter().enumerate() {
                // output t reads input s = t + j - pad
                let t_lo = pad.saturating_sub(j);
                let t_hi = (len + pad).saturating_sub(j).min(len);
                for t in t_lo..t_hi {
                    row[t] += wj * xc[t + j - pad];
                }
            }
        }
    }
    Tensor::new(vec![c_out, len], out).expect("conv output shape")
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape(
                "dense layer dimensions must be positive".into(),
            ));
        }
        Ok(Dense {
            in_dim,
            out_dim,
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        })
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let xs = x.data();
        let w = self.weight.data();
        let out: Vec<f64> = (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias.data()[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Tensor::new(vec![self.out_dim], out).expect("dense output shape")
    }

    fn backward(&self, x: &Tensor, g: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Tensor {
        let xs = x.data();
        let gs = g.data();
        let w = self.weight.data();
        let mut dx = vec![0.0; self.in_dim];
        let dwd = dw.data_mut();
        for o in 0..self.out_dim {
            let go = gs[o];
            if go == 0.0 {
                continue;
            }
            let base = o * self.in_dim;
            for i in 0..self.in_dim {
                dwd[base + i] += go * xs[i];
                dx[i] += w[base + i] * go;
            }
        }
        for (d, go) in db.data_mut().iter_mut().zip(gs) {
            *d += go;
        }
        Tensor::new(vec![self.in_dim], dx).expect("dense input grad shape")
    }
}

impl Conv1d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Shape("conv1d sizes must be positive".into()));
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "conv1d kernel width must be odd, got {kernel}"
            )));
        }
        Ok(Conv1d {
            in_channels,
            out_channels,
            kernel,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let len = x.shape()[1];
        conv_forward_raw(
            x.data(),
            self.weight.data(),
            self.bias.data(),
            self.in_channels,
            self.out_channels,
            self.kernel,
            len,
        )
    }

    fn backward(&self, x: &Tensor, g: &Tensor, dw: &mut Tensor, db: &mut Tensor) -> Tensor {
        let (c_in, c_out, k) = (self.in_channels, self.out_channels, self.kernel);
        let len = x.shape()[1];
        let pad = (k - 1) / 2;
        let xs = x.data();
        let gs = g.data();
        let w = self.weight.data();
        let mut dx = vec![0.0; c_in * len];
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for o in 0..c_out {
            let go = &gs[o * len..(o + 1) * len];
            dbd[o] += go.iter().sum::<f64>();
            for c in 0..c_in {
                let xc = &xs[c * len..(c + 1) * len];
                let dxc = &mut dx[c * len..(c + 1) * len];
                let widx = (o * c_in + c) * k;
                for j in 0..k {
                    let wj = w[widx + j];
                    let t_lo = pad.saturating_sub(j);
                    let t_hi = (len + pad).saturating_sub(j).min(len);
                    let mut acc = 0.0;
                    for t in t_lo..t_hi {
                        let s = t + j - pad;
                        acc += go[t] * xc[s];
                        dxc[s] += wj * go[t];
                    }
                    dwd[widx + j] += acc;
                }
            }
        }
        Tensor::new(vec![c_in, len], dx).expect("conv input grad shape")
    }
}

impl Layer {
    pub fn dense(in_dim: usize, out_dim: usize) -> Result<Layer> {
        Ok(Layer::Dense(Dense::new(in_dim, out_dim)?))
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Layer> {
        Ok(Layer::Conv1d(Conv1d::new(
            in_channels,
            out_channels,
            kernel,
        )?))
    }

    /// Wraps `inner` in a shortcut connection. `inner` must map its input
    /// shape to itself.
    pub fn residual(inner: Network) -> Result<Layer> {
        if inner.input_shape() != inner.output_shape() {
            return Err(Error::Shape(format!(
                "residual inner network changes shape {:?} -> {:?}",
                inner.input_shape(),
                inner.output_shape()
            )));
        }
        Ok(Layer::Residual(inner))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
            Layer::Residual(_) => "residual",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.in_dim] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{}], got {input:?}",
                        d.in_dim
                    )));
                }
                Ok(vec![d.out_dim])
            }
            Layer::Conv1d(c) => match input {
                [ch, len] if *ch == c.in_channels => Ok(vec![c.out_channels, *len]),
                [ch, _] => Err(Error::Shape(format!(
                    "conv1d expects {} input channels, got {ch}",
                    c.in_channels
                ))),
                _ => Err(Error::Shape(format!(
                    "conv1d expects [channels, length], got {input:?}"
                ))),
            },
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Residual(inner) => {
                if inner.input_shape() != input {
                    return Err(Error::Shape(format!(
                        "residual block expects {:?}, got {input:?}",
                        inner.input_shape()
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Number of parameter tensors, counting nested residual blocks.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(_) | Layer::Conv1d(_) => 2,
            Layer::Residual(inner) => inner.param_count(),
            _ => 0,
        }
    }

    pub(crate) fn visit_params<'a>(&'a self, f: &mut dyn FnMut(ParamKind, &'a Tensor)) {
        match self {
            Layer::Dense(Dense { weight, bias, .. })
            | Layer::Conv1d(Conv1d { weight, bias, .. }) => {
                f(ParamKind::Weight, weight);
                f(ParamKind::Bias, bias);
            }
            Layer::Residual(inner) => inner.visit_params(f),
            _ => {}
        }
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor)) {
        match self {
            Layer::Dense(Dense { weight, bias, .. })
            | Layer::Conv1d(Conv1d { weight, bias, .. }) => {
                f(ParamKind::Weight, weight);
                f(ParamKind::Bias, bias);
            }
            Layer::Residual(inner) => inner.visit_params_mut(f),
            _ => {}
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub(crate) fn init<R: Rng>(&mut self, rng: &mut R) {
        match self {
            Layer::Dense(d) => {
                glorot_fill(&mut d.weight, d.in_dim, d.out_dim, rng);
                d.bias.fill(0.0);
            }
            Layer::Conv1d(c) => {
                glorot_fill(
                    &mut c.weight,
                    c.in_channels * c.kernel,
                    c.out_channels * c.kernel,
                    rng,
                );
                c.bias.fill(0.0);
            }
            Layer::Residual(inner) => inner.init_with(rng),
            _ => {}
        }
    }

    pub(crate) fn forward_traced(&self, x: &Tensor) -> (Tensor, Option<Trace>) {
        match self {
            Layer::Dense(d) => (d.forward(x), None),
            Layer::Conv1d(c) => (c.forward(x), None),
            Layer::Relu => (x.map(|v| v.max(0.0)), None),
            Layer::Sigmoid => (x.map(sigmoid), None),
            Layer::Flatten => {
                let n = x.len();
                (x.clone().reshape(&[n]).expect("flatten"), None)
            }
            Layer::Residual(inner) => {
                let trace = inner.trace(x);
                let mut out = trace.output().clone();
                out.axpy(1.0, x);
                (out, Some(trace))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` (this layer's slice) and
    /// returns the gradient with respect to the layer input.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        inner_trace: Option<&Trace>,
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Tensor {
        match self {
            Layer::Dense(d) => {
                let (dw, db) = split_pair(grads);
                d.backward(input, upstream, dw, db)
            }
            Layer::Conv1d(c) => {
                let (dw, db) = split_pair(grads);
                c.backward(input, upstream, dw, db)
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(input.shape().to_vec(), data).expect("relu grad")
            }
            Layer::Sigmoid => {
                let data = output
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                Tensor::new(input.shape().to_vec(), data).expect("sigmoid grad")
            }
            Layer::Flatten => upstream
                .clone()
                .reshape(input.shape())
                .expect("flatten grad"),
            Layer::Residual(inner) => {
                let trace = inner_trace.expect("residual layer traced");
                let mut dx = inner.backward_trace(trace, upstream, grads);
                dx.axpy(1.0, upstream);
                dx
            }
        }
    }
}

fn split_pair(grads: &mut [Tensor]) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = grads.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn glorot_fill<R: Rng>(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut R) {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.gen_range(-s..s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let k = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let out = conv1d_forward(&t1(&[1.0, 2.0, 3.0]), &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_box_kernel_zero_padded() {
        let k = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let out = conv1d_forward(&t1(&[1.0, 2.0, 3.0]), &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let k = Tensor::new(vec![2, 1, 3], vec![0.3, -1.0, 2.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::vector(&[1.5, -0.25]);
        let out = conv1d_forward(&Tensor::zeros(&[1, 4]), &k, &b).unwrap();
        assert_eq!(
            out.data(),
            &[1.5, 1.5, 1.5, 1.5, -0.25, -0.25, -0.25, -0.25]
        );
    }

    #[test]
    fn conv_shape_errors_name_dimension() {
        let k = Tensor::zeros(&[1, 2, 3]);
        let err = conv1d_forward(&t1(&[1.0]), &k, &Tensor::zeros(&[1])).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
        let k = Tensor::zeros(&[1, 1, 2]);
        let err = conv1d_forward(&t1(&[1.0]), &k, &Tensor::zeros(&[1])).unwrap_err();
        assert!(err.to_string().contains("odd"), "{err}");
        let k = Tensor::zeros(&[1, 1, 3]);
        let err = conv1d_forward(&t1(&[1.0]), &k, &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
