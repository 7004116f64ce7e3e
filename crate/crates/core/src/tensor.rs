//! Dense row-major `f32` tensors.
//!
//! Clips and feature maps use the `N x C x T x H x W` layout.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.iter().all(|&d| d >= 1),
            "tensor extents must be >= 1: {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("extents", "all >= 1", format!("{shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("length", len, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a 5-D tensor, or a shape error naming the rank.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        match self.shape[..] {
            [n, c, t, h, w] => Ok([n, c, t, h, w]),
            _ => Err(Error::shape("rank", 5, self.shape.len())),
        }
    }

    /// Reshape in place to `shape`, keeping the allocation when it is large
    /// enough. Contents are unspecified afterwards.
    pub fn resize_to(&mut self, shape: &[usize]) {
        assert!(
            shape.iter().all(|&d| d >= 1),
            "tensor extents must be >= 1: {shape:?}"
        );
        let len = shape.iter().product();
        self.data.resize(len, 0.0);
        self.shape.clear();
        self.shape.extend_from_slice(shape);
    }

    /// Reinterpret with a new shape of equal volume.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?}", self.shape),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Batch item `i` (leading axis) as a slice.
    pub fn item(&self, i: usize) -> &[f32] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Stack equally shaped items along a new leading axis.
    pub fn stack(items: &[&[f32]], item_shape: &[usize]) -> Result<Self> {
        let stride: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(stride * items.len());
        for (i, item) in items.iter().enumerate() {
            if item.len() != stride {
                return Err(Error::shape(format!("item {i}"), stride, item.len()));
            }
            data.extend_from_slice(item);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        Self::from_vec(&shape, data)
    }
}
