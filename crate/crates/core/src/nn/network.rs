use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered stack of layers with a declared input shape.
///
/// Shapes are propagated through every layer when the network is built, so a
/// constructed `Network` is always shape-consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Activations recorded by a forward pass, consumed by [`Network::backward_trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the network output.
    acts: Vec<Tensor>,
    inner: Vec<Option<Trace>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace holds at least the input")
    }
}

/// Parameter gradients, one tensor per parameter in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let mut out = Vec::with_capacity(net.param_count());
        net.visit_params(&mut |_, t| out.push(Tensor::zeros(t.shape())));
        Gradients(out)
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.axpy(1.0, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "invalid network input shape {input_shape:?}"
            )));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| e.context(format!("layer {i} ({})", layer.kind_name())))?;
        }
        Ok(Network {
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(ParamKind, &'a Tensor)) {
        for l in &self.layers {
            l.visit_params(f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut Tensor)) {
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
    }

    pub fn params(&self) -> Vec<(ParamKind, &Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |k, t| out.push((k, t)));
        out
    }

    /// `sum ||W||^2` over weight tensors (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        self.visit_params(&mut |k, t| {
            if k == ParamKind::Weight {
                acc += t.sum_sq();
            }
        });
        acc
    }

    /// Re-draws every weight from `U(-s, s)`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// and zeroes every bias. Deterministic for a given seed.
    pub fn seeded_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init_with(&mut rng);
    }

    pub(crate) fn init_with<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            l.init(rng);
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward_traced(&cur).0;
        }
        Ok(cur)
    }

    /// Forward pass that keeps every intermediate activation.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        Ok(self.trace(x))
    }

    pub(crate) fn trace(&self, x: &Tensor) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut inner = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for l in &self.layers {
            let (out, tr) = l.forward_traced(acts.last().unwrap());
            acts.push(out);
            inner.push(tr);
        }
        Trace { acts, inner }
    }

    /// Reverse-mode gradients of `<forward(x), upstream>` with respect to every
    /// parameter and to `x`.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<(Gradients, Tensor)> {
        let trace = self.forward_trace(x)?;
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward_accumulate(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Like [`Network::backward`] but reuses a trace and adds into `grads`.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        upstream: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        if upstream.shape() != self.output_shape.as_slice() {
            return Err(Error::Shape(format!(
                "upstream gradient must be {:?}, got {:?}",
                self.output_shape,
                upstream.shape()
            )));
        }
        if grads.0.len() != self.param_count() {
            return Err(Error::Shape(
                "gradient buffer does not match network".into(),
            ));
        }
        Ok(self.backward_trace(trace, upstream, &mut grads.0))
    }

    pub(crate) fn backward_trace(
        &self,
        trace: &Trace,
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut g = upstream.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let n = l.param_count();
            let slice = &mut grads[offsets[i]..offsets[i] + n];
            g = l.backward(
                &trace.acts[i],
                &trace.acts[i + 1],
                trace.inner[i].as_ref(),
                &g,
                slice,
            );
        }
        g
    }
}
