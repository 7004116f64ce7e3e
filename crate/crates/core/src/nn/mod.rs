//! Minimal neural-network kernel: the five layer types of a dyad network,
//! binary cross-entropy and Adam, with hand-written backward passes.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use adam::AdamState;
pub use batchnorm::{BatchNorm3d, Mode};
pub use conv::Conv3d;
pub use dense::Dense;
pub use loss::{bce_with_logits, sigmoid};
pub use pool::MaxPool3d;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv3d(Conv3d),
    BatchNorm3d(BatchNorm3d),
    Relu,
    MaxPool3d(MaxPool3d),
    Dense(Dense),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv3d(_) => "conv3d",
            Layer::BatchNorm3d(_) => "batchnorm3d",
            Layer::Relu => "relu",
            Layer::MaxPool3d(_) => "maxpool3d",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv3d(c) => c.param_count(),
            Layer::BatchNorm3d(b) => b.param_count(),
            Layer::Dense(d) => d.param_count(),
            Layer::Relu | Layer::MaxPool3d(_) => 0,
        }
    }

    /// Learnable parameter slices in gradient order.
    pub fn params(&self) -> Vec<&[f32]> {
        match self {
            Layer::Conv3d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm3d(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Relu | Layer::MaxPool3d(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            Layer::Conv3d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm3d(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Relu | Layer::MaxPool3d(_) => vec![],
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv3d(c) => c.output_shape(input),
            Layer::BatchNorm3d(b) => match input {
                [_, c, _, _, _] if *c == b.channels => Ok(input.to_vec()),
                [_, c, _, _, _] => Err(Error::shape("batchnorm channels (axis 1)", b.channels, c)),
                _ => Err(Error::shape("batchnorm input rank", 5, input.len())),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool3d(p) => p.output_shape(input),
            Layer::Dense(d) => d.output_shape(input),
        }
    }

    /// Forward pass honoring the batch-norm mode (train mode updates the
    /// running statistics).
    pub fn forward_into(&mut self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        match self {
            Layer::BatchNorm3d(b) => b.forward_into(x, out),
            other => other.infer_into(x, out),
        }
    }

    /// Forward pass through a shared reference; batch norm uses its
    /// running statistics.
    pub fn infer_into(&self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        match self {
            Layer::Conv3d(c) => c.forward_into(x, out),
            Layer::BatchNorm3d(b) => b.infer_into(x, out),
            Layer::Relu => {
                out.resize_to(x.shape());
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = v.max(0.0);
                }
                Ok(())
            }
            Layer::MaxPool3d(p) => p.forward_into(x, out),
            Layer::Dense(d) => d.forward_into(x, out),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut out = Tensor::zeros(&[1]);
        self.forward_into(x, &mut out)?;
        Ok(out)
    }

    /// Analytic gradients given the cached forward input `x`. When
    /// `grad_in` is `None` the input gradient is not computed.
    pub fn backward_into(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_in: Option<&mut Tensor>,
        grad_params: &mut Vec<f32>,
    ) -> Result<()> {
        match self {
            Layer::Conv3d(c) => c.backward_into(x, grad_out, grad_in, grad_params),
            Layer::BatchNorm3d(b) => b.backward_into(x, grad_out, grad_in, grad_params),
            Layer::Dense(d) => d.backward_into(x, grad_out, grad_in, grad_params),
            Layer::Relu => {
                grad_params.clear();
                if grad_out.shape() != x.shape() {
                    return Err(Error::shape(
                        "relu grad_out",
                        format!("{:?}", x.shape()),
                        format!("{:?}", grad_out.shape()),
                    ));
                }
                if let Some(gi) = grad_in {
                    gi.resize_to(x.shape());
                    for ((o, &g), &v) in gi.data_mut().iter_mut().zip(grad_out.data()).zip(x.data())
                    {
                        *o = if v > 0.0 { g } else { 0.0 };
                    }
                }
                Ok(())
            }
            Layer::MaxPool3d(p) => {
                grad_params.clear();
                match grad_in {
                    Some(gi) => p.backward_into(x, grad_out, gi),
                    None => Ok(()),
                }
            }
        }
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<f32>)> {
        let mut gi = Tensor::zeros(&[1]);
        let mut gp = Vec::new();
        self.backward_into(x, grad_out, Some(&mut gi), &mut gp)?;
        Ok((gi, gp))
    }
}
