use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected layer over the flattened trailing axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// `out x in`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    pub fn identity(features: usize) -> Self {
        let mut d = Self::new(features, features);
        for i in 0..features {
            d.weight[i * features + i] = 1.0;
        }
        d
    }

    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let bound = 1.0 / (self.in_features as f32).sqrt();
        for w in self.weight.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        for b in self.bias.iter_mut() {
            *b = rng.gen_range(-bound..bound);
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn batch(&self, x: &Tensor) -> Result<usize> {
        let n = x.shape()[0];
        let f = x.len() / n;
        if f != self.in_features {
            return Err(Error::shape(
                "dense input features (flattened axes 1..)",
                self.in_features,
                f,
            ));
        }
        Ok(n)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let f: usize = input[1..].iter().product();
        if f != self.in_features {
            return Err(Error::shape(
                "dense input features (flattened axes 1..)",
                self.in_features,
                f,
            ));
        }
        Ok(vec![input[0], self.out_features])
    }

    pub fn forward_into(&self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        let n = self.batch(x)?;
        out.resize_to(&[n, self.out_features]);
        for i in 0..n {
            let xi = x.item(i);
            for o in 0..self.out_features {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let dot = row
                    .iter()
                    .zip(xi)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>();
                out.data_mut()[i * self.out_features + o] = (dot + self.bias[o] as f64) as f32;
            }
        }
        Ok(())
    }

    pub fn backward_into(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_in: Option<&mut Tensor>,
        grad_params: &mut Vec<f32>,
    ) -> Result<()> {
        let n = self.batch(x)?;
        if grad_out.shape() != [n, self.out_features] {
            return Err(Error::shape(
                "dense grad_out",
                format!("[{n}, {}]", self.out_features),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let g = grad_out.data();
        let mut gw = vec![0.0f64; self.weight.len()];
        let mut gb = vec![0.0f64; self.out_features];
        for i in 0..n {
            let xi = x.item(i);
            for o in 0..self.out_features {
                let go = g[i * self.out_features + o] as f64;
                gb[o] += go;
                for (acc, &v) in gw[o * self.in_features..(o + 1) * self.in_features]
                    .iter_mut()
                    .zip(xi)
                {
                    *acc += go * v as f64;
                }
            }
        }
        if let Some(gi) = grad_in {
            gi.resize_to(x.shape());
            let gid = gi.data_mut();
            for i in 0..n {
                let dst = &mut gid[i * self.in_features..(i + 1) * self.in_features];
                dst.fill(0.0);
                for o in 0..self.out_features {
                    let go = g[i * self.out_features + o];
                    for (d, &wv) in dst
                        .iter_mut()
                        .zip(&self.weight[o * self.in_features..(o + 1) * self.in_features])
                    {
                        *d += go * wv;
                    }
                }
            }
        }
        grad_params.clear();
        grad_params.extend(gw.into_iter().map(|v| v as f32));
        grad_params.extend(gb.into_iter().map(|v| v as f32));
        Ok(())
    }
}
