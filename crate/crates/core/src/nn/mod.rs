//! Minimal differentiable core: dense and same-padded 1-D convolution layers,
//! ReLU and sigmoid activations, flatten, residual shortcut blocks, exact
//! reverse-mode gradients and plain SGD with L2 weight decay.

mod layer;
mod network;
mod optim;

pub use layer::{conv1d_forward, sigmoid, Conv1d, Dense, Layer, ParamKind};
pub use network::{Gradients, Network, Trace};
pub use optim::{sgd_step, SgdConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Applies a residual block `H(x) = F(x) + x` for an inner network `F` that
/// preserves shape.
pub fn residual_block_forward(x: &Tensor, inner: &Network) -> Result<Tensor> {
    if inner.input_shape() != inner.output_shape() {
        return Err(Error::Shape(format!(
            "residual inner network changes shape {:?} -> {:?}",
            inner.input_shape(),
            inner.output_shape()
        )));
    }
    let mut out = inner.forward(x)?;
    out.axpy(1.0, x);
    Ok(out)
}
