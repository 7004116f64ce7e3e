//! The dyadic 3D-CNN family: depth `D` in 1..=4 dyads of
//! conv -> batch norm -> ReLU -> max pool, then flatten and a single-logit
//! dense head.

mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, BatchNorm3d, Conv3d, Dense, Layer, MaxPool3d, Mode};
use crate::tensor::Tensor;

pub use weights::{load_weights, load_weights_for, save_weights};

/// Spatial input extent of every family member.
pub const INPUT_SIDE: usize = 224;
/// Clip duration in seconds.
pub const CLIP_SECONDS: usize = 3;
pub const MAX_DEPTH: u8 = 4;
pub const FRAME_RATES: [u32; 3] = [10, 20, 30];

/// A point `(D, fr)` in the architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: u8,
    pub frame_rate: u32,
}

impl ModelConfig {
    pub fn new(depth: u8, frame_rate: u32) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::Config(format!(
                "depth {depth} outside 1..={MAX_DEPTH}"
            )));
        }
        d_fr(frame_rate)?;
        Ok(Self { depth, frame_rate })
    }

    /// All twelve family members, frame rate major.
    pub fn grid() -> Vec<ModelConfig> {
        FRAME_RATES
            .iter()
            .flat_map(|&fr| {
                (1..=MAX_DEPTH).map(move |d| ModelConfig {
                    depth: d,
                    frame_rate: fr,
                })
            })
            .collect()
    }

    /// Frames per clip: three seconds at the configured rate.
    pub fn clip_frames(&self) -> usize {
        CLIP_SECONDS * self.frame_rate as usize
    }
}

impl std::fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "A(D={}, fr={})", self.depth, self.frame_rate)
    }
}

/// Temporal extent of the first dyad's pooling kernel, `3*fr/30`.
pub fn d_fr(frame_rate: u32) -> Result<usize> {
    if !FRAME_RATES.contains(&frame_rate) {
        return Err(Error::Config(format!(
            "unsupported frame rate {frame_rate}; expected one of {FRAME_RATES:?}"
        )));
    }
    Ok((3 * frame_rate as usize) / 30)
}

/// Output channels of dyad `d` (1-based): `2^(d+1)`.
pub fn dyad_channels(d: u8) -> usize {
    1 << (d + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    side: usize,
    layers: Vec<Layer>,
}

/// Activation and gradient buffers reused across training steps.
#[derive(Debug, Default)]
pub struct TrainWorkspace {
    acts: Vec<Tensor>,
    grad_a: Option<Tensor>,
    grad_b: Option<Tensor>,
    layer_grads: Vec<Vec<f32>>,
}

/// Buffers reused across clips and batches by [`Model::logits_with`].
#[derive(Debug)]
pub struct EvalWorkspace {
    a: Tensor,
    b: Tensor,
}

impl EvalWorkspace {
    pub fn new() -> Self {
        Self {
            a: Tensor::zeros(&[1]),
            b: Tensor::zeros(&[1]),
        }
    }
}

impl Default for EvalWorkspace {
    fn default() -> Self {
        Self::new()
    }
}

impl Model {
    /// Builds the family member for `config` at the standard 224 x 224 input.
    pub fn build(config: ModelConfig, seed: u64) -> Self {
        Self::build_with_side(config, INPUT_SIDE, seed).expect("224 supports every depth")
    }

    /// Builds with a custom square input side (small-scale experiments).
    pub fn build_with_side(config: ModelConfig, side: usize, seed: u64) -> Result<Self> {
        let layers = Self::layer_stack(config, side)?;
        let mut model = Self {
            config,
            side,
            layers,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers.iter_mut() {
            match layer {
                Layer::Conv3d(c) => c.init_uniform(&mut rng),
                Layer::Dense(d) => d.init_uniform(&mut rng),
                _ => {}
            }
        }
        Ok(model)
    }

    fn layer_stack(config: ModelConfig, side: usize) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        let mut shape = vec![1, 3, config.clip_frames(), side, side];
        let mut in_ch = 3;
        for d in 1..=config.depth {
            let out_ch = dyad_channels(d);
            let kt = if d == 1 { d_fr(config.frame_rate)? } else { 3 };
            let dyad = [
                Layer::Conv3d(Conv3d::new(in_ch, out_ch)),
                Layer::BatchNorm3d(BatchNorm3d::new(out_ch)),
                Layer::Relu,
                Layer::MaxPool3d(MaxPool3d::new(kt, 3, 3)),
            ];
            for layer in dyad {
                shape = layer.output_shape(&shape).map_err(|e| {
                    Error::Config(format!("{config} at side {side}: dyad {d}: {e}"))
                })?;
                layers.push(layer);
            }
            in_ch = out_ch;
        }
        let flat: usize = shape[1..].iter().product();
        layers.push(Layer::Dense(Dense::new(flat, 1)));
        Ok(layers)
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Sum of all learnable scalars.
    pub fn count_params(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Shape of the flattened features entering the head.
    pub fn flatten_len(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d.in_features,
            _ => unreachable!("model always ends in a dense head"),
        }
    }

    /// `[n, 3, 3*fr, side, side]`.
    pub fn input_shape(&self, n: usize) -> [usize; 5] {
        [n, 3, self.config.clip_frames(), self.side, self.side]
    }

    /// Shapes after every layer for a batch of `n`.
    pub fn layer_shapes(&self, n: usize) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape(n).to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape).expect("stack validated at build");
            out.push(shape.clone());
        }
        out
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for l in self.layers.iter_mut() {
            if let Layer::BatchNorm3d(b) = l {
                b.mode = mode;
            }
        }
    }

    pub fn mode(&self) -> Mode {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::BatchNorm3d(b) => Some(b.mode),
                _ => None,
            })
            .unwrap_or_default()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let d = batch.dims5()?;
        let expected = self.input_shape(d[0]);
        for (axis, (&e, &a)) in ["N", "C", "T", "H", "W"]
            .iter()
            .zip(expected.iter().zip(&d))
        {
            if e != a {
                return Err(Error::shape(format!("batch axis {axis}"), e, a));
            }
        }
        Ok(d[0])
    }

    /// Head logits in eval semantics (batch norm uses running statistics).
    pub fn logits(&self, batch: &Tensor) -> Result<Vec<f32>> {
        self.logits_with(batch, &mut EvalWorkspace::new())
    }

    /// Eval layers act on each clip alone, so clips run one at a time
    /// through the whole network. The working set stays at one clip's
    /// activations whatever the batch size.
    pub fn logits_with(&self, batch: &Tensor, ws: &mut EvalWorkspace) -> Result<Vec<f32>> {
        let n = self.check_batch(batch)?;
        let [_, _, t, h, w] = self.input_shape(1);
        let Layer::Conv3d(first) = &self.layers[0] else {
            unreachable!("every model starts with a convolution")
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            first.forward_items_into(batch.item(i), 1, [t, h, w], &mut ws.a);
            for layer in &self.layers[1..] {
                layer.infer_into(&ws.a, &mut ws.b)?;
                std::mem::swap(&mut ws.a, &mut ws.b);
            }
            out.extend_from_slice(ws.a.data());
        }
        Ok(out)
    }

    /// Per-clip probabilities for an `N x 3 x 3fr x side x side` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f32>> {
        self.predict_with(batch, &mut EvalWorkspace::new())
    }

    pub fn predict_with(&self, batch: &Tensor, ws: &mut EvalWorkspace) -> Result<Vec<f32>> {
        if self.mode() != Mode::Eval {
            return Err(Error::Contract(
                "predict requires batch norm in eval mode".into(),
            ));
        }
        Ok(self
            .logits_with(batch, ws)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// Flat copy of all learnable parameters in layer order.
    pub fn params_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.count_params());
        for l in &self.layers {
            for p in l.params() {
                out.extend_from_slice(p);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.count_params() {
            return Err(Error::shape(
                "flat parameter vector",
                self.count_params(),
                flat.len(),
            ));
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            for p in l.params_mut() {
                p.copy_from_slice(&flat[off..off + p.len()]);
                off += p.len();
            }
        }
        Ok(())
    }

    /// Mean binary cross-entropy loss over the batch and the flat gradient
    /// of that mean with respect to every parameter. Runs the forward pass
    /// in the current mode, so train mode also updates running statistics.
    pub fn loss_and_grad(
        &mut self,
        batch: &Tensor,
        labels: &[u8],
        ws: &mut TrainWorkspace,
        grads: &mut Vec<f32>,
    ) -> Result<f64> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(Error::shape("labels", n, labels.len()));
        }
        let depth = self.layers.len();
        if ws.acts.len() != depth {
            ws.acts = (0..depth).map(|_| Tensor::zeros(&[1])).collect();
            ws.layer_grads = vec![Vec::new(); depth];
        }
        for i in 0..depth {
            let (before, after) = ws.acts.split_at_mut(i);
            let input = if i == 0 { batch } else { &before[i - 1] };
            self.layers[i].forward_into(input, &mut after[0])?;
        }
        let logits = ws.acts[depth - 1].data();
        let mut loss = 0.0f64;
        let mut g = ws.grad_a.take().unwrap_or_else(|| Tensor::zeros(&[1]));
        g.resize_to(&[n, 1]);
        for (i, (&z, &y)) in logits.iter().zip(labels).enumerate() {
            let (l, dz) = crate::nn::bce_with_logits(z, y);
            loss += l;
            g.data_mut()[i] = dz / n as f32;
        }
        let mut next = ws.grad_b.take().unwrap_or_else(|| Tensor::zeros(&[1]));
        for i in (0..depth).rev() {
            let input = if i == 0 { batch } else { &ws.acts[i - 1] };
            let gi = if i == 0 { None } else { Some(&mut next) };
            self.layers[i].backward_into(input, &g, gi, &mut ws.layer_grads[i])?;
            std::mem::swap(&mut g, &mut next);
        }
        ws.grad_a = Some(g);
        ws.grad_b = Some(next);
        grads.clear();
        for lg in &ws.layer_grads {
            grads.extend_from_slice(lg);
        }
        Ok(loss / n as f64)
    }
}
