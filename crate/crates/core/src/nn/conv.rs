//! 3x3x3 same-padded 3-D convolution (cross-correlation) with bias.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Taps per kernel (3 x 3 x 3).
pub const TAPS: usize = 27;

/// Output-row width handled per register block.
const WB: usize = 16;
/// Output channels handled per register block.
const OCB: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3 x 3`, taps ordered (t, h, w).
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3d {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform fan-in initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`;
    /// biases start at zero.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let bound = 1.0 / ((self.in_channels * TAPS) as f32).sqrt();
        for w in self.weight.iter_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        self.bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<[usize; 5]> {
        let d = x.dims5()?;
        if d[1] != self.in_channels {
            return Err(Error::shape(
                "conv input channels (axis 1)",
                self.in_channels,
                d[1],
            ));
        }
        Ok(d)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Tensor::zeros(&[1]);
        self.forward_into(x, &mut out)?;
        Ok(out)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [n, c, t, h, w] if *c == self.in_channels => {
                Ok(vec![*n, self.out_channels, *t, *h, *w])
            }
            [_, c, ..] if input.len() == 5 => Err(Error::shape(
                "conv input channels (axis 1)",
                self.in_channels,
                c,
            )),
            _ => Err(Error::shape("conv input rank", 5, input.len())),
        }
    }

    pub fn forward_into(&self, x: &Tensor, out: &mut Tensor) -> Result<()> {
        let [n, _, t, h, w] = self.check_input(x)?;
        self.forward_items_into(x.data(), n, [t, h, w], out);
        Ok(())
    }

    /// `n` packed `in_channels x t x h x w` items read straight from `x`.
    pub fn forward_items_into(&self, x: &[f32], n: usize, [t, h, w]: [usize; 3], out: &mut Tensor) {
        out.resize_to(&[n, self.out_channels, t, h, w]);
        let geom = Geometry::new(t, h, w);
        let mut padded = vec![0.0; self.in_channels * geom.padded_plane_len()];
        let pack = pack_weights(&self.weight, self.in_channels, self.out_channels, false);
        let in_stride = self.in_channels * geom.volume();
        let out_stride = self.out_channels * geom.volume();
        assert_eq!(x.len(), n * in_stride, "conv input length");
        for i in 0..n {
            geom.pad_into(
                &x[i * in_stride..(i + 1) * in_stride],
                self.in_channels,
                &mut padded,
            );
            correlate(
                &padded,
                &pack,
                &self.bias,
                self.in_channels,
                self.out_channels,
                &geom,
                &mut out.data_mut()[i * out_stride..(i + 1) * out_stride],
            );
        }
    }

    /// Returns `(grad_in, grad_weight ++ grad_bias)`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Vec<f32>)> {
        let mut gi = Tensor::zeros(&[1]);
        let mut gp = Vec::new();
        self.backward_into(x, grad_out, Some(&mut gi), &mut gp)?;
        Ok((gi, gp))
    }

    /// Writes parameter gradients (`weight ++ bias`) into `grad_params` and,
    /// when requested, the input gradient into `grad_in`.
    pub fn backward_into(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grad_in: Option<&mut Tensor>,
        grad_params: &mut Vec<f32>,
    ) -> Result<()> {
        let [n, _, t, h, w] = self.check_input(x)?;
        let expected = [n, self.out_channels, t, h, w];
        if grad_out.shape() != expected {
            return Err(Error::shape(
                "conv grad_out",
                format!("{expected:?}"),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let geom = Geometry::new(t, h, w);
        let vol = geom.volume();
        let in_stride = self.in_channels * vol;
        let out_stride = self.out_channels * vol;

        let mut grad_w = vec![0.0f64; self.weight.len()];
        let mut grad_b = vec![0.0f64; self.out_channels];
        let mut padded = vec![0.0; self.in_channels * geom.padded_plane_len()];
        let mut gout_rows = vec![0.0; self.out_channels * geom.row_padded_len()];
        for i in 0..n {
            geom.pad_into(
                &x.data()[i * in_stride..(i + 1) * in_stride],
                self.in_channels,
                &mut padded,
            );
            let g = &grad_out.data()[i * out_stride..(i + 1) * out_stride];
            geom.widen_rows(g, self.out_channels, &mut gout_rows);
            weight_grad(
                &padded,
                &gout_rows,
                self.in_channels,
                self.out_channels,
                &geom,
                &mut grad_w,
            );
            for (o, gb) in grad_b.iter_mut().enumerate() {
                *gb += g[o * vol..(o + 1) * vol]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        drop(padded);

        if let Some(gi) = grad_in {
            // Input gradient is the correlation of the padded output gradient
            // with the spatially flipped, channel-transposed kernel.
            gi.resize_to(x.shape());
            let pack = pack_weights(&self.weight, self.in_channels, self.out_channels, true);
            let zero_bias = vec![0.0; self.in_channels];
            let mut gpad = vec![0.0; self.out_channels * geom.padded_plane_len()];
            for i in 0..n {
                geom.pad_into(
                    &grad_out.data()[i * out_stride..(i + 1) * out_stride],
                    self.out_channels,
                    &mut gpad,
                );
                correlate(
                    &gpad,
                    &pack,
                    &zero_bias,
                    self.out_channels,
                    self.in_channels,
                    &geom,
                    &mut gi.data_mut()[i * in_stride..(i + 1) * in_stride],
                );
            }
        }

        grad_params.clear();
        grad_params.extend(grad_w.into_iter().map(|v| v as f32));
        grad_params.extend(grad_b.into_iter().map(|v| v as f32));
        Ok(())
    }
}

/// Padded buffer geometry: one zero voxel on each side of T and H, and W
/// rounded up to a whole number of register blocks plus the halo.
struct Geometry {
    t: usize,
    h: usize,
    w: usize,
    wp: usize,
}

impl Geometry {
    fn new(t: usize, h: usize, w: usize) -> Self {
        Self {
            t,
            h,
            w,
            wp: w.div_ceil(WB) * WB,
        }
    }

    fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    fn row_len(&self) -> usize {
        self.wp + 2
    }

    fn padded_plane_len(&self) -> usize {
        (self.t + 2) * (self.h + 2) * self.row_len()
    }

    fn row_padded_len(&self) -> usize {
        self.t * self.h * self.wp
    }

    fn pad_into(&self, src: &[f32], channels: usize, dst: &mut [f32]) {
        dst.fill(0.0);
        let (t, h, w) = (self.t, self.h, self.w);
        let rl = self.row_len();
        for c in 0..channels {
            for ti in 0..t {
                for hi in 0..h {
                    let s = ((c * t + ti) * h + hi) * w;
                    let d = ((c * (t + 2) + ti + 1) * (h + 2) + hi + 1) * rl + 1;
                    dst[d..d + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
    }

    /// Copies rows into `wp`-wide rows, zero-filling the tail.
    fn widen_rows(&self, src: &[f32], channels: usize, dst: &mut [f32]) {
        dst.fill(0.0);
        let rows = channels * self.t * self.h;
        for r in 0..rows {
            dst[r * self.wp..r * self.wp + self.w]
                .copy_from_slice(&src[r * self.w..(r + 1) * self.w]);
        }
    }
}

/// Packs weights per output-channel block as `[block][ic][tap][OCB]`.
/// With `transpose_flip`, packs the kernel that maps output gradients back
/// onto the input: channels swapped and taps reversed.
fn pack_weights(weight: &[f32], ic: usize, oc: usize, transpose_flip: bool) -> Vec<f32> {
    let (src_in, dst_out) = if transpose_flip { (oc, ic) } else { (ic, oc) };
    let blocks = dst_out.div_ceil(OCB);
    let mut pack = vec![0.0; blocks * src_in * TAPS * OCB];
    for b in 0..blocks {
        for c in 0..src_in {
            for k in 0..TAPS {
                for lane in 0..OCB {
                    let o = b * OCB + lane;
                    if o >= dst_out {
                        continue;
                    }
                    let v = if transpose_flip {
                        // dst channel o is an input channel, c an output channel.
                        weight[(c * ic + o) * TAPS + (TAPS - 1 - k)]
                    } else {
                        weight[(o * ic + c) * TAPS + k]
                    };
                    pack[((b * src_in + c) * TAPS + k) * OCB + lane] = v;
                }
            }
        }
    }
    pack
}

fn correlate_portable(
    padded: &[f32],
    pack: &[f32],
    bias: &[f32],
    ic: usize,
    oc: usize,
    g: &Geometry,
    out: &mut [f32],
) {
    let (t, h, w) = (g.t, g.h, g.w);
    let rl = g.row_len();
    let plane = (h + 2) * rl;
    let chan = (t + 2) * plane;
    let blocks = oc.div_ceil(OCB);
    for blk in 0..blocks {
        let wpack = &pack[blk * ic * TAPS * OCB..(blk + 1) * ic * TAPS * OCB];
        let mut b0 = [0.0f32; OCB];
        for (lane, b) in b0.iter_mut().enumerate() {
            if let Some(&v) = bias.get(blk * OCB + lane) {
                *b = v;
            }
        }
        for ti in 0..t {
            for hi in 0..h {
                for wb in 0..g.wp / WB {
                    let mut acc = [[0.0f32; WB]; OCB];
                    for (lane, a) in acc.iter_mut().enumerate() {
                        *a = [b0[lane]; WB];
                    }
                    for c in 0..ic {
                        for kt in 0..3 {
                            for kh in 0..3 {
                                let base = c * chan + (ti + kt) * plane + (hi + kh) * rl + wb * WB;
                                let row: &[f32; WB + 2] =
                                    padded[base..base + WB + 2].try_into().unwrap();
                                let wk: &[f32; 3 * OCB] = wpack
                                    [((c * 3 + kt) * 3 + kh) * 3 * OCB..][..3 * OCB]
                                    .try_into()
                                    .unwrap();
                                for kw in 0..3 {
                                    for lane in 0..OCB {
                                        let wv = wk[kw * OCB + lane];
                                        for j in 0..WB {
                                            acc[lane][j] += wv * row[kw + j];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let w0 = wb * WB;
                    let valid = WB.min(w - w0.min(w));
                    for (lane, a) in acc.iter().enumerate() {
                        let o = blk * OCB + lane;
                        if o >= oc {
                            break;
                        }
                        let d = ((o * t + ti) * h + hi) * w + w0;
                        out[d..d + valid].copy_from_slice(&a[..valid]);
                    }
                }
            }
        }
    }
}

/// Accumulates `dL/dW` for one sample into `grad_w` (`oc x ic x 27`).
fn weight_grad_portable(
    padded: &[f32],
    gout: &[f32],
    ic: usize,
    oc: usize,
    g: &Geometry,
    grad_w: &mut [f64],
) {
    let (t, h) = (g.t, g.h);
    let rl = g.row_len();
    let plane = (h + 2) * rl;
    let chan = (t + 2) * plane;
    let blocks = oc.div_ceil(OCB);
    let nwb = g.wp / WB;
    // Per-plane lane accumulators, flushed to f64 after each time slice.
    let mut lanes = vec![[0.0f32; WB]; ic * TAPS * OCB];
    let zero_row = vec![0.0f32; g.wp];
    for blk in 0..blocks {
        for ti in 0..t {
            for l in lanes.iter_mut() {
                *l = [0.0; WB];
            }
            for hi in 0..h {
                let mut grow: [&[f32]; OCB] = [&zero_row[..]; OCB];
                for (lane, gr) in grow.iter_mut().enumerate() {
                    let o = blk * OCB + lane;
                    if o < oc {
                        let s = (o * t + ti) * h * g.wp + hi * g.wp;
                        *gr = &gout[s..s + g.wp];
                    }
                }
                for c in 0..ic {
                    for kt in 0..3 {
                        for kh in 0..3 {
                            let base = c * chan + (ti + kt) * plane + (hi + kh) * rl;
                            let mut acc = [[[0.0f32; WB]; 3]; OCB];
                            for wb in 0..nwb {
                                let row: &[f32; WB + 2] = padded
                                    [base + wb * WB..base + wb * WB + WB + 2]
                                    .try_into()
                                    .unwrap();
                                for (lane, gr) in grow.iter().enumerate() {
                                    let gv: &[f32; WB] =
                                        gr[wb * WB..wb * WB + WB].try_into().unwrap();
                                    for kw in 0..3 {
                                        for j in 0..WB {
                                            acc[lane][kw][j] += gv[j] * row[kw + j];
                                        }
                                    }
                                }
                            }
                            let k0 = (kt * 3 + kh) * 3;
                            for (lane, a) in acc.iter().enumerate() {
                                for (kw, ak) in a.iter().enumerate() {
                                    let dst = &mut lanes[(c * TAPS + k0 + kw) * OCB + lane];
                                    for j in 0..WB {
                                        dst[j] += ak[j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for c in 0..ic {
                for k in 0..TAPS {
                    for lane in 0..OCB {
                        let o = blk * OCB + lane;
                        if o < oc {
                            let s: f32 = lanes[(c * TAPS + k) * OCB + lane].iter().sum();
                            grad_w[(o * ic + c) * TAPS + k] += s as f64;
                        }
                    }
                }
            }
        }
    }
}

fn correlate(
    padded: &[f32],
    pack: &[f32],
    bias: &[f32],
    ic: usize,
    oc: usize,
    g: &Geometry,
    out: &mut [f32],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above; all slice bounds are asserted inside.
            unsafe { simd512::correlate(padded, pack, bias, ic, oc, g, out) };
            return;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: features checked above; all slice bounds are asserted inside.
            unsafe { simd::correlate(padded, pack, bias, ic, oc, g, out) };
            return;
        }
    }
    correlate_portable(padded, pack, bias, ic, oc, g, out)
}

fn weight_grad(
    padded: &[f32],
    gout: &[f32],
    ic: usize,
    oc: usize,
    g: &Geometry,
    grad_w: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above; all slice bounds are asserted inside.
            unsafe { simd512::weight_grad(padded, gout, ic, oc, g, grad_w) };
            return;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: features checked above; all slice bounds are asserted inside.
            unsafe { simd::weight_grad(padded, gout, ic, oc, g, grad_w) };
            return;
        }
    }
    weight_grad_portable(padded, gout, ic, oc, g, grad_w)
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::{Geometry, OCB, TAPS, WB};

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn correlate(
        padded: &[f32],
        pack: &[f32],
        bias: &[f32],
        ic: usize,
        oc: usize,
        g: &Geometry,
        out: &mut [f32],
    ) {
        let (t, h, w) = (g.t, g.h, g.w);
        let rl = g.row_len();
        let plane = (h + 2) * rl;
        let chan = (t + 2) * plane;
        let blocks = oc.div_ceil(OCB);
        assert!(padded.len() >= ic * chan);
        assert!(pack.len() >= blocks * ic * TAPS * OCB);
        assert!(out.len() >= oc * t * h * w);
        let pp = padded.as_ptr();
        let mut tmp = [[0.0f32; WB]; OCB];
        for blk in 0..blocks {
            let wp = pack.as_ptr().add(blk * ic * TAPS * OCB);
            let mut b0 = [0.0f32; OCB];
            for (lane, b) in b0.iter_mut().enumerate() {
                if let Some(&v) = bias.get(blk * OCB + lane) {
                    *b = v;
                }
            }
            for ti in 0..t {
                for hi in 0..h {
                    for wb in 0..g.wp / WB {
                        let mut a00 = _mm256_set1_ps(b0[0]);
                        let mut a01 = a00;
                        let mut a10 = _mm256_set1_ps(b0[1]);
                        let mut a11 = a10;
                        let mut a20 = _mm256_set1_ps(b0[2]);
                        let mut a21 = a20;
                        let mut a30 = _mm256_set1_ps(b0[3]);
                        let mut a31 = a30;
                        for c in 0..ic {
                            for kt in 0..3 {
                                for kh in 0..3 {
                                    let row = pp.add(
                                        c * chan + (ti + kt) * plane + (hi + kh) * rl + wb * WB,
                                    );
                                    let wk = wp.add(((c * 3 + kt) * 3 + kh) * 3 * OCB);
                                    for kw in 0..3 {
                                        let x0 = _mm256_loadu_ps(row.add(kw));
                                        let x1 = _mm256_loadu_ps(row.add(kw + 8));
                                        let w0 = _mm256_broadcast_ss(&*wk.add(kw * OCB));
                                        let w1 = _mm256_broadcast_ss(&*wk.add(kw * OCB + 1));
                                        let w2 = _mm256_broadcast_ss(&*wk.add(kw * OCB + 2));
                                        let w3 = _mm256_broadcast_ss(&*wk.add(kw * OCB + 3));
                                        a00 = _mm256_fmadd_ps(w0, x0, a00);
                                        a01 = _mm256_fmadd_ps(w0, x1, a01);
                                        a10 = _mm256_fmadd_ps(w1, x0, a10);
                                        a11 = _mm256_fmadd_ps(w1, x1, a11);
                                        a20 = _mm256_fmadd_ps(w2, x0, a20);
                                        a21 = _mm256_fmadd_ps(w2, x1, a21);
                                        a30 = _mm256_fmadd_ps(w3, x0, a30);
                                        a31 = _mm256_fmadd_ps(w3, x1, a31);
                                    }
                                }
                            }
                        }
                        _mm256_storeu_ps(tmp[0].as_mut_ptr(), a00);
                        _mm256_storeu_ps(tmp[0].as_mut_ptr().add(8), a01);
                        _mm256_storeu_ps(tmp[1].as_mut_ptr(), a10);
                        _mm256_storeu_ps(tmp[1].as_mut_ptr().add(8), a11);
                        _mm256_storeu_ps(tmp[2].as_mut_ptr(), a20);
                        _mm256_storeu_ps(tmp[2].as_mut_ptr().add(8), a21);
                        _mm256_storeu_ps(tmp[3].as_mut_ptr(), a30);
                        _mm256_storeu_ps(tmp[3].as_mut_ptr().add(8), a31);
                        let w0 = wb * WB;
                        let valid = WB.min(w - w0.min(w));
                        for (lane, a) in tmp.iter().enumerate() {
                            let o = blk * OCB + lane;
                            if o >= oc {
                                break;
                            }
                            let d = ((o * t + ti) * h + hi) * w + w0;
                            out[d..d + valid].copy_from_slice(&a[..valid]);
                        }
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weight_grad(
        padded: &[f32],
        gout: &[f32],
        ic: usize,
        oc: usize,
        g: &Geometry,
        grad_w: &mut [f64],
    ) {
        let (t, h) = (g.t, g.h);
        let rl = g.row_len();
        let plane = (h + 2) * rl;
        let chan = (t + 2) * plane;
        let blocks = oc.div_ceil(OCB);
        let nv = g.wp / 8;
        assert!(padded.len() >= ic * chan);
        assert!(gout.len() >= oc * t * h * g.wp);
        assert!(grad_w.len() >= oc * ic * TAPS);
        let zero_row = vec![0.0f32; g.wp];
        let pp = padded.as_ptr();
        // Lane accumulators per (ic, tap, lane), flushed to f64 per time slice.
        let mut lanes = vec![_mm256_setzero_ps(); ic * TAPS * OCB];
        for blk in 0..blocks {
            for ti in 0..t {
                for l in lanes.iter_mut() {
                    *l = _mm256_setzero_ps();
                }
                for hi in 0..h {
                    let mut grow = [zero_row.as_ptr(); OCB];
                    for (lane, gr) in grow.iter_mut().enumerate() {
                        let o = blk * OCB + lane;
                        if o < oc {
                            *gr = gout.as_ptr().add((o * t + ti) * h * g.wp + hi * g.wp);
                        }
                    }
                    for c in 0..ic {
                        for kt in 0..3 {
                            for kh in 0..3 {
                                let row = pp.add(c * chan + (ti + kt) * plane + (hi + kh) * rl);
                                let mut acc = [_mm256_setzero_ps(); 12];
                                for v in 0..nv {
                                    let x0 = _mm256_loadu_ps(row.add(v * 8));
                                    let x1 = _mm256_loadu_ps(row.add(v * 8 + 1));
                                    let x2 = _mm256_loadu_ps(row.add(v * 8 + 2));
                                    for lane in 0..OCB {
                                        let gv = _mm256_loadu_ps(grow[lane].add(v * 8));
                                        acc[lane * 3] = _mm256_fmadd_ps(gv, x0, acc[lane * 3]);
                                        acc[lane * 3 + 1] =
                                            _mm256_fmadd_ps(gv, x1, acc[lane * 3 + 1]);
                                        acc[lane * 3 + 2] =
                                            _mm256_fmadd_ps(gv, x2, acc[lane * 3 + 2]);
                                    }
                                }
                                let k0 = (kt * 3 + kh) * 3;
                                for lane in 0..OCB {
                                    for kw in 0..3 {
                                        let dst = &mut lanes[(c * TAPS + k0 + kw) * OCB + lane];
                                        *dst = _mm256_add_ps(*dst, acc[lane * 3 + kw]);
                                    }
                                }
                            }
                        }
                    }
                }
                let mut buf = [0.0f32; 8];
                for c in 0..ic {
                    for k in 0..TAPS {
                        for lane in 0..OCB {
                            let o = blk * OCB + lane;
                            if o < oc {
                                _mm256_storeu_ps(
                                    buf.as_mut_ptr(),
                                    lanes[(c * TAPS + k) * OCB + lane],
                                );
                                let s: f32 = buf.iter().sum();
                                grad_w[(o * ic + c) * TAPS + k] += s as f64;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod simd512 {
    use std::arch::x86_64::*;

    use super::{Geometry, OCB, TAPS, WB};

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn correlate(
        padded: &[f32],
        pack: &[f32],
        bias: &[f32],
        ic: usize,
        oc: usize,
        g: &Geometry,
        out: &mut [f32],
    ) {
        let (t, h, w) = (g.t, g.h, g.w);
        let rl = g.row_len();
        let plane = (h + 2) * rl;
        let chan = (t + 2) * plane;
        let blocks = oc.div_ceil(OCB);
        assert!(padded.len() >= ic * chan);
        assert!(pack.len() >= blocks * ic * TAPS * OCB);
        assert!(out.len() >= oc * t * h * w);
        let pp = padded.as_ptr();
        let nb = g.wp / WB;
        let mut tmp = [[0.0f32; 2 * WB]; OCB];
        for blk in 0..blocks {
            let wp = pack.as_ptr().add(blk * ic * TAPS * OCB);
            let mut b0 = [0.0f32; OCB];
            for (lane, b) in b0.iter_mut().enumerate() {
                if let Some(&v) = bias.get(blk * OCB + lane) {
                    *b = v;
                }
            }
            for ti in 0..t {
                for hi in 0..h {
                    let mut wb = 0;
                    while wb < nb {
                        // Two 16-wide blocks per pass keep eight FMA chains in flight.
                        let pair = wb + 1 < nb;
                        let mut a0 = _mm512_set1_ps(b0[0]);
                        let mut a1 = _mm512_set1_ps(b0[1]);
                        let mut a2 = _mm512_set1_ps(b0[2]);
                        let mut a3 = _mm512_set1_ps(b0[3]);
                        let (mut c0, mut c1, mut c2, mut c3) = (a0, a1, a2, a3);
                        for c in 0..ic {
                            for kt in 0..3 {
                                for kh in 0..3 {
                                    let row = pp.add(
                                        c * chan + (ti + kt) * plane + (hi + kh) * rl + wb * WB,
                                    );
                                    let wk = wp.add(((c * 3 + kt) * 3 + kh) * 3 * OCB);
                                    for kw in 0..3 {
                                        let w0 = _mm512_set1_ps(*wk.add(kw * OCB));
                                        let w1 = _mm512_set1_ps(*wk.add(kw * OCB + 1));
                                        let w2 = _mm512_set1_ps(*wk.add(kw * OCB + 2));
                                        let w3 = _mm512_set1_ps(*wk.add(kw * OCB + 3));
                                        let x = _mm512_loadu_ps(row.add(kw));
                                        a0 = _mm512_fmadd_ps(w0, x, a0);
                                        a1 = _mm512_fmadd_ps(w1, x, a1);
                                        a2 = _mm512_fmadd_ps(w2, x, a2);
                                        a3 = _mm512_fmadd_ps(w3, x, a3);
                                        if pair {
                                            let y = _mm512_loadu_ps(row.add(kw + WB));
                                            c0 = _mm512_fmadd_ps(w0, y, c0);
                                            c1 = _mm512_fmadd_ps(w1, y, c1);
                                            c2 = _mm512_fmadd_ps(w2, y, c2);
                                            c3 = _mm512_fmadd_ps(w3, y, c3);
                                        }
                                    }
                                }
                            }
                        }
                        _mm512_storeu_ps(tmp[0].as_mut_ptr(), a0);
                        _mm512_storeu_ps(tmp[1].as_mut_ptr(), a1);
                        _mm512_storeu_ps(tmp[2].as_mut_ptr(), a2);
                        _mm512_storeu_ps(tmp[3].as_mut_ptr(), a3);
                        _mm512_storeu_ps(tmp[0].as_mut_ptr().add(WB), c0);
                        _mm512_storeu_ps(tmp[1].as_mut_ptr().add(WB), c1);
                        _mm512_storeu_ps(tmp[2].as_mut_ptr().add(WB), c2);
                        _mm512_storeu_ps(tmp[3].as_mut_ptr().add(WB), c3);
                        let span = if pair { 2 * WB } else { WB };
                        let w0 = wb * WB;
                        let valid = span.min(w - w0.min(w));
                        for (lane, a) in tmp.iter().enumerate() {
                            let o = blk * OCB + lane;
                            if o >= oc {
                                break;
                            }
                            let d = ((o * t + ti) * h + hi) * w + w0;
                            out[d..d + valid].copy_from_slice(&a[..valid]);
                        }
                        wb += if pair { 2 } else { 1 };
                    }
                }
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn weight_grad(
        padded: &[f32],
        gout: &[f32],
        ic: usize,
        oc: usize,
        g: &Geometry,
        grad_w: &mut [f64],
    ) {
        let (t, h) = (g.t, g.h);
        let rl = g.row_len();
        let plane = (h + 2) * rl;
        let chan = (t + 2) * plane;
        let blocks = oc.div_ceil(OCB);
        let nv = g.wp / 16;
        assert!(padded.len() >= ic * chan);
        assert!(gout.len() >= oc * t * h * g.wp);
        assert!(grad_w.len() >= oc * ic * TAPS);
        let zero_row = vec![0.0f32; g.wp];
        let pp = padded.as_ptr();
        let mut lanes = vec![_mm512_setzero_ps(); ic * TAPS * OCB];
        for blk in 0..blocks {
            for ti in 0..t {
                for l in lanes.iter_mut() {
                    *l = _mm512_setzero_ps();
                }
                for hi in 0..h {
                    let mut grow = [zero_row.as_ptr(); OCB];
                    for (lane, gr) in grow.iter_mut().enumerate() {
                        let o = blk * OCB + lane;
                        if o < oc {
                            *gr = gout.as_ptr().add((o * t + ti) * h * g.wp + hi * g.wp);
                        }
                    }
                    for c in 0..ic {
                        for kt in 0..3 {
                            for kh in 0..3 {
                                let row = pp.add(c * chan + (ti + kt) * plane + (hi + kh) * rl);
                                let mut acc = [_mm512_setzero_ps(); 12];
                                for v in 0..nv {
                                    let x0 = _mm512_loadu_ps(row.add(v * 16));
                                    let x1 = _mm512_loadu_ps(row.add(v * 16 + 1));
                                    let x2 = _mm512_loadu_ps(row.add(v * 16 + 2));
                                    for lane in 0..OCB {
                                        let gv = _mm512_loadu_ps(grow[lane].add(v * 16));
                                        acc[lane * 3] = _mm512_fmadd_ps(gv, x0, acc[lane * 3]);
                                        acc[lane * 3 + 1] =
                                            _mm512_fmadd_ps(gv, x1, acc[lane * 3 + 1]);
                                        acc[lane * 3 + 2] =
                                            _mm512_fmadd_ps(gv, x2, acc[lane * 3 + 2]);
                                    }
                                }
                                let k0 = (kt * 3 + kh) * 3;
                                for lane in 0..OCB {
                                    for kw in 0..3 {
                                        let dst = &mut lanes[(c * TAPS + k0 + kw) * OCB + lane];
                                        *dst = _mm512_add_ps(*dst, acc[lane * 3 + kw]);
                                    }
                                }
                            }
                        }
                    }
                }
                for c in 0..ic {
                    for k in 0..TAPS {
                        for lane in 0..OCB {
                            let o = blk * OCB + lane;
                            if o < oc {
                                let s = _mm512_reduce_add_ps(lanes[(c * TAPS + k) * OCB + lane]);
                                grad_w[(o * ic + c) * TAPS + k] += s as f64;
                            }
                        }
                    }
                }
            }
        }
    }
}
