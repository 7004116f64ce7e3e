//! Kernelized correlation filter on raw grayscale pixels, translation
//! only.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::geometry::BoundingBox;

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct KcfParams {
    /// Search window extent as a multiple of the target extent.
    pub padding: f64,
    pub kernel_sigma: f64,
    /// Target response sigma per unit of `sqrt(w * h)`.
    pub output_sigma_factor: f64,
    pub lambda: f64,
    /// Model interpolation rate per update.
    pub interp: f64,
    /// Windows larger than this (in pixels, per axis) are averaged in
    /// square cells to bound the transform size.
    pub max_patch: usize,
}

impl Default for KcfParams {
    fn default() -> Self {
        Self {
            padding: 2.5,
            kernel_sigma: 0.5,
            output_sigma_factor: 0.1,
            lambda: 1e-4,
            interp: 0.075,
            max_patch: 128,
        }
    }
}

/// Single-channel image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    /// Rec. 601 luma of frame `k` of a stack.
    pub fn from_rgb(stack: &FrameStack, k: usize) -> Self {
        let f = stack.frame(k);
        let data = f
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect();
        Self::new(stack.width, stack.height, data)
    }

    /// Replicate-clamped read.
    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }
}

/// 2-D transform over a row-major `h x w` grid.
#[derive(Clone)]
struct Fft2 {
    w: usize,
    h: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.w, self.h)
    }
}

impl Fft2 {
    fn new(w: usize, h: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            w,
            h,
            row_fwd: p.plan_fft_forward(w),
            row_inv: p.plan_fft_inverse(w),
            col_fwd: p.plan_fft_forward(h),
            col_inv: p.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [C64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut t = vec![C64::default(); buf.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                t[x * self.h + y] = buf[y * self.w + x];
            }
        }
        col.process(&mut t);
        for y in 0..self.h {
            for x in 0..self.w {
                buf[y * self.w + x] = t[x * self.h + y];
            }
        }
        if inverse {
            let s = 1.0 / buf.len() as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn forward(&self, real: &[f64]) -> Vec<C64> {
        let mut buf: Vec<C64> = real.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }

    fn inverse_real(&self, spec: &[C64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.run(&mut buf, true);
        buf.into_iter().map(|v| v.re).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KcfTracker {
    params: KcfParams,
    fft: Fft2,
    /// Feature grid extents.
    fw: usize,
    fh: usize,
    /// Pixels per feature cell.
    cell: usize,
    cos_window: Vec<f64>,
    yf: Vec<C64>,
    model_alphaf: Vec<C64>,
    model_xf: Vec<C64>,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    frame_w: usize,
    frame_h: usize,
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

impl KcfTracker {
    /// Trains the filter on the window around `bbox`.
    pub fn init(frame: &GrayImage, bbox: BoundingBox, params: KcfParams) -> Result<Self> {
        if !bbox.is_valid() || bbox.w < 1.0 || bbox.h < 1.0 {
            return Err(Error::Data(format!("degenerate tracker box {bbox:?}")));
        }
        if bbox.clamp_to(frame.width, frame.height).is_none() {
            return Err(Error::Data(format!(
                "tracker box {bbox:?} outside {}x{} frame",
                frame.width, frame.height
            )));
        }
        let pw = ((bbox.w * params.padding).floor() as usize).max(1);
        let ph = ((bbox.h * params.padding).floor() as usize).max(1);
        let cell = pw.max(ph).div_ceil(params.max_patch).max(1);
        let (fw, fh) = ((pw / cell).max(1), (ph / cell).max(1));
        let fft = Fft2::new(fw, fh);

        let (hx, hy) = (hann(fw), hann(fh));
        let cos_window = hy
            .iter()
            .flat_map(|&wy| hx.iter().map(move |&wx| wx * wy))
            .collect();

        // Gaussian target, peak shifted to the origin so a response maximum
        // at index 0 means zero displacement.
        let sigma = (bbox.w * bbox.h).sqrt() * params.output_sigma_factor / cell as f64;
        let mut y = vec![0.0; fw * fh];
        for r in 0..fh {
            let dy = wrap(r, fh) as f64;
            for c in 0..fw {
                let dx = wrap(c, fw) as f64;
                y[r * fw + c] = (-0.5 * (dx * dx + dy * dy) / (sigma * sigma)).exp();
            }
        }
        let yf = fft.forward(&y);

        let (cx, cy) = bbox.center();
        let mut t = Self {
            params,
            fft,
            fw,
            fh,
            cell,
            cos_window,
            yf,
            model_alphaf: Vec::new(),
            model_xf: Vec::new(),
            cx,
            cy,
            w: bbox.w,
            h: bbox.h,
            frame_w: frame.width,
            frame_h: frame.height,
        };
        let (xf, alphaf) = t.train(frame);
        t.model_xf = xf;
        t.model_alphaf = alphaf;
        Ok(t)
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.w,
            self.h,
        )
    }

    /// Cell-averaged, mean-free, windowed patch around the current center.
    fn features(&self, frame: &GrayImage) -> Vec<f64> {
        let k = self.cell as isize;
        let x0 = (self.cx - (self.fw * self.cell) as f64 / 2.0).round() as isize;
        let y0 = (self.cy - (self.fh * self.cell) as f64 / 2.0).round() as isize;
        let mut out = Vec::with_capacity(self.fw * self.fh);
        for r in 0..self.fh as isize {
            for c in 0..self.fw as isize {
                let mut s = 0.0f64;
                for dy in 0..k {
                    for dx in 0..k {
                        s += frame.at(x0 + c * k + dx, y0 + r * k + dy) as f64;
                    }
                }
                out.push(s / (k * k) as f64);
            }
        }
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        for (v, &w) in out.iter_mut().zip(&self.cos_window) {
            *v = (*v - mean) * w;
        }
        out
    }

    /// Spectrum of the Gaussian kernel correlation of `x` with `z`, both
    /// given as spectra.
    fn kernel_correlation(&self, xf: &[C64], zf: &[C64]) -> Vec<C64> {
        let n = xf.len() as f64;
        let xx: f64 = xf.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let zz: f64 = zf.iter().map(|v| v.norm_sqr()).sum::<f64>() / n;
        let cross: Vec<C64> = xf.iter().zip(zf).map(|(a, b)| a * b.conj()).collect();
        let xz = self.fft.inverse_real(&cross);
        let s2 = self.params.kernel_sigma * self.params.kernel_sigma;
        let k: Vec<f64> = xz
            .iter()
            .map(|&v| (-((xx + zz - 2.0 * v).max(0.0) / n) / s2).exp())
            .collect();
        self.fft.forward(&k)
    }

    fn train(&self, frame: &GrayImage) -> (Vec<C64>, Vec<C64>) {
        let xf = self.fft.forward(&self.features(frame));
        let kf = self.kernel_correlation(&xf, &xf);
        let lambda = self.params.lambda;
        let alphaf = self
            .yf
            .iter()
            .zip(&kf)
            .map(|(y, k)| y / (k + lambda))
            .collect();
        (xf, alphaf)
    }

    /// Correlation response over cyclic shifts of the current window.
    pub fn response(&self, frame: &GrayImage) -> Vec<f64> {
        let zf = self.fft.forward(&self.features(frame));
        let kzf = self.kernel_correlation(&zf, &self.model_xf);
        let prod: Vec<C64> = self
            .model_alphaf
            .iter()
            .zip(&kzf)
            .map(|(a, k)| a * k)
            .collect();
        self.fft.inverse_real(&prod)
    }

    /// Feature-grid extents `(w, h)` of the response map.
    pub fn response_dims(&self) -> (usize, usize) {
        (self.fw, self.fh)
    }

    /// Moves to the response peak in `frame`, then blends the model with
    /// the patch there. Returns the new box.
    pub fn update(&mut self, frame: &GrayImage) -> BoundingBox {
        let resp = self.response(frame);
        let (dx, dy) = peak_shift(&resp, self.fw, self.fh);
        let k = self.cell as f64;
        self.cx = (self.cx + dx * k).clamp(0.0, self.frame_w as f64);
        self.cy = (self.cy + dy * k).clamp(0.0, self.frame_h as f64);
        let (xf, alphaf) = self.train(frame);
        let r = self.params.interp;
        for (m, v) in self.model_alphaf.iter_mut().zip(&alphaf) {
            *m = *m * (1.0 - r) + v * r;
        }
        for (m, v) in self.model_xf.iter_mut().zip(&xf) {
            *m = *m * (1.0 - r) + v * r;
        }
        self.bbox()
    }
}

/// Signed cyclic offset of index `i` on a ring of `n`.
fn wrap(i: usize, n: usize) -> isize {
    if i > n / 2 {
        i as isize - n as isize
    } else {
        i as isize
    }
}

/// Displacement of the response maximum in feature cells, with parabolic
/// sub-cell refinement. Values within a relative 1e-9 of the zero-shift
/// response count as ties and resolve to zero shift.
pub fn peak_shift(resp: &[f64], w: usize, h: usize) -> (f64, f64) {
    let (mut best, mut arg) = (resp[0], 0);
    for (i, &v) in resp.iter().enumerate() {
        if v > best {
            best = v;
            arg = i;
        }
    }
    let scale = resp
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if (best - resp[0]) <= 1e-9 * scale {
        return (0.0, 0.0);
    }
    let (r, c) = (arg / w, arg % w);
    let at = |rr: usize, cc: usize| resp[rr * w + cc];
    let refine = |l: f64, m: f64, rt: f64| {
        let d = l - 2.0 * m + rt;
        if d.abs() > 1e-12 {
            (0.5 * (l - rt) / d).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let sx = if w >= 3 {
        refine(at(r, (c + w - 1) % w), best, at(r, (c + 1) % w))
    } else {
        0.0
    };
    let sy = if h >= 3 {
        refine(at((r + h - 1) % h, c), best, at((r + 1) % h, c))
    } else {
        0.0
    };
    (wrap(c, w) as f64 + sx, wrap(r, h) as f64 + sy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_frame(w: usize, h: usize, b: &BoundingBox) -> GrayImage {
        let mut data = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                if b.contains_point(x as f64 + 0.5, y as f64 + 0.5) {
                    data[y * w + x] = 1.0;
                }
            }
        }
        GrayImage::new(w, h, data)
    }

    #[test]
    fn fft_round_trip() {
        let f = Fft2::new(5, 3);
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = f.inverse_real(&f.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn peak_at_origin_after_init() {
        let b = BoundingBox::new(40.0, 30.0, 20.0, 20.0);
        let frame = square_frame(120, 100, &b);
        let t = KcfTracker::init(&frame, b, KcfParams::default()).unwrap();
        let resp = t.response(&frame);
        let arg = resp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, 0);
    }

    #[test]
    fn constant_frame_keeps_box() {
        let b = BoundingBox::new(40.0, 30.0, 20.0, 20.0);
        let mut t = KcfTracker::init(&square_frame(120, 100, &b), b, KcfParams::default()).unwrap();
        let flat = GrayImage::new(120, 100, vec![0.4; 12000]);
        assert_eq!(t.update(&flat), b);
    }

    #[test]
    fn border_box_is_clamped() {
        let b = BoundingBox::new(0.0, 0.0, 12.0, 10.0);
        let frame = square_frame(40, 30, &b);
        let mut t = KcfTracker::init(&frame, b, KcfParams::default()).unwrap();
        let out = t.update(&frame);
        assert!((out.x - b.x).abs() <= 1.0 && (out.y - b.y).abs() <= 1.0);
        assert!(KcfTracker::init(
            &frame,
            BoundingBox::new(1.0, 1.0, 0.0, 4.0),
            KcfParams::default()
        )
        .is_err());
    }
}
