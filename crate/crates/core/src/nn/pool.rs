//! Non-overlapping 3-D max pooling (stride equals kernel).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool3d {
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
}

impl MaxPool3d {
    pub fn new(kt: usize, kh: usize, kw: usize) -> Self {
        assert!(
            kt >= 1 && kh >= 1 && kw >= 1,
            "pool kernel extents must be >= 1"
        );
        Self { kt, kh, kw }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let &[n, c, t, h, w] = input else {
            return Err(Error::shape("pool input rank", 5, input.len()));
        };
        let (ot, oh, ow) = (t / self.kt, h / self.kh, w / self.kw);
        for (axis, o, i) in [
            ("T (axis 2)", ot, t),
            ("H (axis 3)", oh, h),
            ("W (axis 4)", ow, w),
        ] {
            if o == 0 {
                return Err(Error::shape(format!("pool {axis}"), ">= kernel extent", i));
            }
        }
        Ok(vec![n, c, ot, oh, ow])
    }

    /// Elementwise maximum over the `kt * kh` input rows of output row
    /// `(to, ho)`, truncated to the covered width.
    fn row_max(
        &self,
        xd: &[f32],
        xb: usize,
        h: usize,
        w: usize,
        to: usize,
        ho: usize,
        buf: &mut [f32],
    ) {
        let mut first = true;
        for dt in 0..self.kt {
            for dh in 0..self.kh {
                let base = xb + ((to * self.kt + dt) * h + ho * self.kh + dh) * w;
                let xrow = &xd[base..][..buf.len()];
                if first {
                    buf.copy_from_slice(xrow);
                    first = false;
                } else {
                    for (b, &v) in buf.iter_mut().zip(xrow) {
                        *b = b.max(v);
                    }
                }
            }
        }
    }

    fn window_max(&self, buf: &[f32], out: &mut [f32]) {
        if self.kw == 1 {
            out.copy_from_slice(buf);
            return;
        }
        for (o, win) in out.iter_mut().zip(buf.chunks_exact(self.kw)) {
            *o = win.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v));
        }
    }

    pub fn forward_into(&self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        let os = self.output_shape(x.shape())?;
        let [n, c, t, h, w] = x.dims5()?;
        let (ot, oh, ow) = (os[2], os[3], os[4]);
        out.resize_to(&os);
        let xd = x.data();
        let od = out.data_mut();
        let mut buf = vec![0.0f32; ow * self.kw];
        for plane in 0..n * c {
            let xb = plane * t * h * w;
            let ob = plane * ot * oh * ow;
            for to in 0..ot {
                for ho in 0..oh {
                    self.row_max(xd, xb, h, w, to, ho, &mut buf);
                    self.window_max(&buf, &mut od[ob + (to * oh + ho) * ow..][..ow]);
                }
            }
        }
        Ok(())
    }

    /// Routes each output gradient to the first maximal input of its window
    /// (scan order t, h, w). Inputs outside every window get zero.
    pub fn backward_into(&self, x: &Tensor, grad_out: &Tensor, grad_in: &mut Tensor) -> Result<()> {
        let os = self.output_shape(x.shape())?;
        if grad_out.shape() != os.as_slice() {
            return Err(Error::shape(
                "pool grad_out",
                format!("{os:?}"),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let [n, c, t, h, w] = x.dims5()?;
        let (ot, oh, ow) = (os[2], os[3], os[4]);
        grad_in.resize_to(x.shape());
        grad_in.data_mut().fill(0.0);
        let xd = x.data();
        let gd = grad_out.data();
        let gi = grad_in.data_mut();
        let mut best = vec![0.0f32; ow];
        let mut arg = vec![0usize; ow];
        for plane in 0..n * c {
            let xb = plane * t * h * w;
            let ob = plane * ot * oh * ow;
            for to in 0..ot {
                for ho in 0..oh {
                    best.fill(f32::NEG_INFINITY);
                    let mut first = true;
                    for dt in 0..self.kt {
                        for dh in 0..self.kh {
                            let base = xb + ((to * self.kt + dt) * h + ho * self.kh + dh) * w;
                            let xrow = &xd[base..][..ow * self.kw];
                            for (wo, win) in xrow.chunks_exact(self.kw).enumerate() {
                                // Strict comparisons keep the earliest maximum
                                // and skip NaN, matching the forward max.
                                let (mut b, mut a) = (best[wo], arg[wo]);
                                if first {
                                    a = base + wo * self.kw;
                                }
                                for (dw, &v) in win.iter().enumerate() {
                                    let better = v > b;
                                    b = if better { v } else { b };
                                    a = if better { base + wo * self.kw + dw } else { a };
                                }
                                best[wo] = b;
                                arg[wo] = a;
                            }
                            first = false;
                        }
                    }
                    let grow = &gd[ob + (to * oh + ho) * ow..][..ow];
                    for (&a, &g) in arg.iter().zip(grow) {
                        gi[a] += g;
                    }
                }
            }
        }
        Ok(())
    }
}
