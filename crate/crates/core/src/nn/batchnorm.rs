//! Per-channel batch normalization over batch and all spatiotemporal axes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm3d {
    pub channels: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
    pub mode: Mode,
}

/// Per-channel mean and inverse standard deviation.
struct Stats {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Train,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn check_input(&self, x: &Tensor) -> Result<[usize; 5]> {
        let d = x.dims5()?;
        if d[1] != self.channels {
            return Err(Error::shape(
                "batchnorm channels (axis 1)",
                self.channels,
                d[1],
            ));
        }
        Ok(d)
    }

    fn batch_stats(&self, x: &Tensor, [n, c, t, h, w]: [usize; 5]) -> Stats {
        let vol = t * h * w;
        let count = (n * vol) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let plane = |i: usize| &x.data()[(i * c + ch) * vol..(i * c + ch + 1) * vol];
            let sum: f64 = (0..n).map(|i| block_sum(plane(i), |v| v)).sum();
            let m = sum / count;
            let mf = m as f32;
            let sq: f64 = (0..n)
                .map(|i| block_sum(plane(i), |v| (v - mf) * (v - mf)))
                .sum();
            // Correct for rounding `m` to f32 before centering.
            let shift = mf as f64 - m;
            mean[ch] = m;
            var[ch] = (sq / count - shift * shift).max(0.0);
        }
        let inv_std = var
            .iter()
            .map(|&v| 1.0 / (v + self.epsilon as f64).sqrt())
            .collect();
        Stats { mean, inv_std, var }
    }

    fn running_stats(&self) -> Stats {
        Stats {
            mean: self.running_mean.iter().map(|&v| v as f64).collect(),
            inv_std: self
                .running_var
                .iter()
                .map(|&v| 1.0 / (v as f64 + self.epsilon as f64).sqrt())
                .collect(),
            var: self.running_var.iter().map(|&v| v as f64).collect(),
        }
    }

    fn normalize(&self, x: &Tensor, stats: &Stats, d: [usize; 5], out: &mut Tensor) {
        let [n, c, t, h, w] = d;
        let vol = t * h * w;
        out.resize_to(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let scale = (self.gamma[ch] as f64 * stats.inv_std[ch]) as f32;
                let shift = (self.beta[ch] as f64
                    - stats.mean[ch] * self.gamma[ch] as f64 * stats.inv_std[ch])
                    as f32;
                let r = (i * c + ch) * vol..(i * c + ch + 1) * vol;
                for (o, &v) in out.data_mut()[r.clone()].iter_mut().zip(&x.data()[r]) {
                    *o = v * scale + shift;
                }
            }
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// averages; eval mode uses the running statistics.
    pub fn forward_into(&mut self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        let d = self.check_input(x)?;
        match self.mode {
            Mode::Eval => {
                let stats = self.running_stats();
                self.normalize(x, &stats, d, out);
            }
            Mode::Train => {
                let stats = self.batch_stats(x, d);
                self.normalize(x, &stats, d, out);
                let count = (d[0] * d[2] * d[3] * d[4]) as f64;
                let unbias = if count > 1.0 {
                    count / (count - 1.0)
                } else {
                    1.0
                };
                let m = self.momentum as f64;
                for ch in 0..self.channels {
                    self.running_mean[ch] =
                        ((1.0 - m) * self.running_mean[ch] as f64 + m * stats.mean[ch]) as f32;
                    self.running_var[ch] = ((1.0 - m) * self.running_var[ch] as f64
                        + m * stats.var[ch] * unbias)
                        as f32;
                }
            }
        }
        Ok(())
    }

    /// Eval-mode forward through a shared reference.
    pub fn infer_into(&self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        let d = self.check_input(x)?;
        let stats = self.running_stats();
        self.normalize(x, &stats, d, out);
        Ok(())
    }

    /// Gradients of the forward map in the current mode. Batch statistics
    /// are recomputed from `x`.
    pub fn backward_into(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_in: Option<&mut Tensor>,
        grad_params: &mut Vec<f32>,
    ) -> Result<()> {
        let d = self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::shape(
                "batchnorm grad_out",
                format!("{:?}", x.shape()),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let [n, c, t, h, w] = d;
        let vol = t * h * w;
        let count = (n * vol) as f64;
        let stats = match self.mode {
            Mode::Train => self.batch_stats(x, d),
            Mode::Eval => self.running_stats(),
        };
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for ch in 0..c {
            let (m, s) = (stats.mean[ch] as f32, stats.inv_std[ch]);
            for i in 0..n {
                let r = (i * c + ch) * vol..(i * c + ch + 1) * vol;
                let g = &grad_out.data()[r.clone()];
                sum_g[ch] += block_sum(g, |v| v);
                sum_gx[ch] += block_dot(g, &x.data()[r], |v| v - m) * s;
            }
        }
        if let Some(gi) = grad_in {
            gi.resize_to(x.shape());
            for ch in 0..c {
                let (m, s) = (stats.mean[ch] as f32, stats.inv_std[ch]);
                let gs = self.gamma[ch] as f64 * s;
                // train: dx = gamma*s/M * (M g - sum g - xhat * sum g*xhat)
                let (a, b, k) = match self.mode {
                    Mode::Train => (gs, gs * sum_g[ch] / count, gs * sum_gx[ch] / count * s),
                    Mode::Eval => (gs, 0.0, 0.0),
                };
                let (a, b, k) = (a as f32, b as f32, k as f32);
                for i in 0..n {
                    let r = (i * c + ch) * vol..(i * c + ch + 1) * vol;
                    let xs = &x.data()[r.clone()];
                    let gs_out = &grad_out.data()[r.clone()];
                    for ((o, &g), &v) in gi.data_mut()[r].iter_mut().zip(gs_out).zip(xs) {
                        *o = a * g - b - k * (v - m);
                    }
                }
            }
        }
        grad_params.clear();
        grad_params.extend(sum_gx.iter().map(|&v| v as f32));
        grad_params.extend(sum_g.iter().map(|&v| v as f32));
        Ok(())
    }
}

const LANES: usize = 16;
const BLOCK: usize = 4096;

/// Sum of `f(v)` with f32 lane accumulators per block and an f64 total.
fn block_sum(s: &[f32], f: impl Fn(f32) -> f32) -> f64 {
    let mut total = 0.0f64;
    for block in s.chunks(BLOCK) {
        let mut acc = [0.0f32; LANES];
        let mut lanes = block.chunks_exact(LANES);
        for chunk in &mut lanes {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += f(v);
            }
        }
        let tail: f32 = lanes.remainder().iter().map(|&v| f(v)).sum();
        total += acc.iter().map(|&a| a as f64).sum::<f64>() + tail as f64;
    }
    total
}

/// Sum of `g * f(x)` blocked like `block_sum`.
fn block_dot(g: &[f32], x: &[f32], f: impl Fn(f32) -> f32) -> f64 {
    let mut total = 0.0f64;
    for (gb, xb) in g.chunks(BLOCK).zip(x.chunks(BLOCK)) {
        let mut acc = [0.0f32; LANES];
        let mut gl = gb.chunks_exact(LANES);
        let mut xl = xb.chunks_exact(LANES);
        for (gc, xc) in (&mut gl).zip(&mut xl) {
            for ((a, &gv), &xv) in acc.iter_mut().zip(gc).zip(xc) {
                *a += gv * f(xv);
            }
        }
        let tail: f32 = gl
            .remainder()
            .iter()
            .zip(xl.remainder())
            .map(|(&gv, &xv)| gv * f(xv))
            .sum();
        total += acc.iter().map(|&a| a as f64).sum::<f64>() + tail as f64;
    }
    total
}
