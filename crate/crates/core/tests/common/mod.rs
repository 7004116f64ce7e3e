//! Independent oracles shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use dyadic_activity::nn::{BatchNorm3d, Conv3d, Dense, Layer, MaxPool3d, Mode};
use dyadic_activity::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use dyadic_activity::activity_map::{ActivityInstance, Cluster};
use dyadic_activity::dataset::ActivityKind;
use dyadic_activity::geometry::BoundingBox;
use dyadic_activity::projection::ProjectionParams;
use dyadic_activity::tracking::{Detection, GrayImage, ObjectClass};

pub const PEOPLE: [&str; 3] = ["A", "B", "C"];

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Same-padded 3x3x3 cross-correlation in f64, one output element at a
/// time.
pub fn conv_reference_f64(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    oc: usize,
) -> (Vec<usize>, Vec<f64>) {
    let [n, ic, t, h, w] = x.dims5().unwrap();
    let mut out = vec![0.0f64; n * oc * t * h * w];
    let at = |i: usize, c: usize, a: isize, b: isize, d: isize| -> f64 {
        if a < 0 || b < 0 || d < 0 || a >= t as isize || b >= h as isize || d >= w as isize {
            return 0.0;
        }
        x.data()[(((i * ic + c) * t + a as usize) * h + b as usize) * w + d as usize] as f64
    };
    for i in 0..n {
        for o in 0..oc {
            for ti in 0..t {
                for hi in 0..h {
                    for wi in 0..w {
                        let mut acc = bias[o] as f64;
                        for c in 0..ic {
                            for kt in 0..3 {
                                for kh in 0..3 {
                                    for kw in 0..3 {
                                        let wv = weight[(o * ic + c) * 27 + (kt * 3 + kh) * 3 + kw]
                                            as f64;
                                        acc += wv
                                            * at(
                                                i,
                                                c,
                                                ti as isize + kt as isize - 1,
                                                hi as isize + kh as isize - 1,
                                                wi as isize + kw as isize - 1,
                                            );
                                    }
                                }
                            }
                        }
                        out[(((i * oc + o) * t + ti) * h + hi) * w + wi] = acc;
                    }
                }
            }
        }
    }
    (vec![n, oc, t, h, w], out)
}

const H: f32 = 1e-3;
const PROBES: usize = 6;

/// Relative error with a small floor so near-zero gradients compare on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Scalar objective: fixed random projection of the layer output.
/// Convolution and batch norm are evaluated by f64 references so the
/// difference quotient is not dominated by f32 rounding.
fn objective(layer: &Layer, x: &Tensor, proj: &[f32]) -> f64 {
    if let Layer::Conv3d(c) = layer {
        let (_, y) = conv_reference_f64(x, &c.weight, &c.bias, c.out_channels);
        return y.iter().zip(proj).map(|(&a, &b)| a * b as f64).sum();
    }
    if let Layer::BatchNorm3d(b) = layer {
        return batchnorm_reference_f64(b, x)
            .iter()
            .zip(proj)
            .map(|(&a, &b)| a * b as f64)
            .sum();
    }
    if let Layer::Dense(d) = layer {
        return dense_reference_f64(d, x)
            .iter()
            .zip(proj)
            .map(|(&a, &b)| a * b as f64)
            .sum();
    }
    let mut l = layer.clone();
    let y = l.forward(x).unwrap();
    y.data()
        .iter()
        .zip(proj)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// `W x + b` per sample in f64.
pub fn dense_reference_f64(d: &Dense, x: &Tensor) -> Vec<f64> {
    let n = x.shape()[0];
    let f = d.in_features;
    let mut out = Vec::with_capacity(n * d.out_features);
    for s in 0..n {
        let xs = &x.data()[s * f..(s + 1) * f];
        for o in 0..d.out_features {
            let w = &d.weight[o * f..(o + 1) * f];
            let dot: f64 = w.iter().zip(xs).map(|(&a, &b)| a as f64 * b as f64).sum();
            out.push(dot + d.bias[o] as f64);
        }
    }
    out
}

/// Direct per-channel normalization in f64.
pub fn batchnorm_reference_f64(bn: &BatchNorm3d, x: &Tensor) -> Vec<f64> {
    let [n, c, t, h, w] = x.dims5().unwrap();
    let vol = t * h * w;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| (0..vol).map(move |k| (i * c + ch) * vol + k))
            .collect();
        let (mean, var) = match bn.mode {
            Mode::Train => {
                let m = idx.iter().map(|&k| x.data()[k] as f64).sum::<f64>() / idx.len() as f64;
                let v = idx
                    .iter()
                    .map(|&k| (x.data()[k] as f64 - m).powi(2))
                    .sum::<f64>()
                    / idx.len() as f64;
                (m, v)
            }
            Mode::Eval => (bn.running_mean[ch] as f64, bn.running_var[ch] as f64),
        };
        for &k in &idx {
            let xhat = (x.data()[k] as f64 - mean) / (var + bn.epsilon as f64).sqrt();
            out[k] = bn.gamma[ch] as f64 * xhat + bn.beta[ch] as f64;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradStats {
    pub probes: usize,
    pub worst: f64,
}

/// Central differences against the analytic input and parameter
/// gradients at random probes. Fails on the first probe at or above
/// 1e-3.
pub fn check_layer(layer: &Layer, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<GradStats, String> {
    let mut probe = layer.clone();
    let y = probe.forward(x).map_err(|e| e.to_string())?;
    let proj: Vec<f32> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
    let (gi, gp) = layer.backward(x, &g).map_err(|e| e.to_string())?;
    let mut stats = GradStats::default();
    let mut record = |what: String, ana: f64, num: f64| {
        let e = rel_err(ana, num);
        stats.probes += 1;
        stats.worst = stats.worst.max(e);
        if e < 1e-3 {
            Ok(())
        } else {
            Err(format!(
                "{} {what} analytic {ana} numeric {num} shape {:?}",
                layer.name(),
                x.shape()
            ))
        }
    };

    for _ in 0..PROBES {
        let k = rng.gen_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[k] += H;
        let mut xm = x.clone();
        xm.data_mut()[k] -= H;
        let num = (objective(layer, &xp, &proj) - objective(layer, &xm, &proj)) / (2.0 * H as f64);
        record(format!("input[{k}]"), gi.data()[k] as f64, num)?;
    }

    let n_params = layer.param_count();
    if n_params == 0 {
        return Ok(stats);
    }
    if gp.len() != n_params {
        return Err(format!(
            "{}: {} parameter gradients for {n_params} parameters",
            layer.name(),
            gp.len()
        ));
    }
    for _ in 0..PROBES {
        let k = rng.gen_range(0..n_params);
        let perturbed = |delta: f32| {
            let mut l = layer.clone();
            let mut off = 0;
            for p in l.params_mut() {
                if k < off + p.len() {
                    p[k - off] += delta;
                    break;
                }
                off += p.len();
            }
            objective(&l, x, &proj)
        };
        let num = (perturbed(H) - perturbed(-H)) / (2.0 * H as f64);
        record(format!("param[{k}]"), gp[k] as f64, num)?;
    }
    Ok(stats)
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 5] {
    [
        rng.gen_range(1..=2),
        rng.gen_range(1..=4),
        rng.gen_range(1..=8),
        rng.gen_range(1..=8),
        rng.gen_range(1..=8),
    ]
}

/// Values well separated from each other and from zero, so pooling
/// windows and ReLU kinks stay stable under +-H.
pub fn separated_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| 0.05 + 0.01 * i as f32).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    for v in vals.iter_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    Tensor::from_vec(shape, vals).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    MaxPool,
    Dense,
}

pub const LAYER_KINDS: [LayerKind; 5] = [
    LayerKind::Conv,
    LayerKind::BatchNorm,
    LayerKind::Relu,
    LayerKind::MaxPool,
    LayerKind::Dense,
];

/// Three random shapes of one layer type. Batch norm runs twice in train
/// mode and once in eval mode.
pub fn gradient_suite(kind: LayerKind, seed: u64) -> Result<GradStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradStats::default();
    for round in 0..3 {
        let mut s = random_shape(&mut rng);
        let (layer, x) = match kind {
            LayerKind::Conv => {
                let oc = rng.gen_range(1..=4);
                let mut c = Conv3d::new(s[1], oc);
                c.init_uniform(&mut rng);
                for b in c.bias.iter_mut() {
                    *b = rng.gen_range(-0.5..0.5);
                }
                (Layer::Conv3d(c), random_tensor(&mut rng, &s))
            }
            LayerKind::BatchNorm => {
                // At least two values per channel so the batch variance is non-trivial.
                s[4] = s[4].max(2);
                let mut bn = BatchNorm3d::new(s[1]);
                for (g, b) in bn.gamma.iter_mut().zip(bn.beta.iter_mut()) {
                    *g = rng.gen_range(0.5..1.5);
                    *b = rng.gen_range(-0.5..0.5);
                }
                for (m, v) in bn.running_mean.iter_mut().zip(bn.running_var.iter_mut()) {
                    *m = rng.gen_range(-0.5..0.5);
                    *v = rng.gen_range(0.5..2.0);
                }
                if round == 2 {
                    bn.mode = Mode::Eval;
                }
                (Layer::BatchNorm3d(bn), random_tensor(&mut rng, &s))
            }
            LayerKind::Relu => (Layer::Relu, separated_tensor(&mut rng, &s)),
            LayerKind::MaxPool => {
                let k = [
                    rng.gen_range(1..=3),
                    rng.gen_range(1..=3),
                    rng.gen_range(1..=3),
                ];
                s[2] = s[2].max(k[0]);
                s[3] = s[3].max(k[1]);
                s[4] = s[4].max(k[2]);
                (
                    Layer::MaxPool3d(MaxPool3d::new(k[0], k[1], k[2])),
                    separated_tensor(&mut rng, &s),
                )
            }
            LayerKind::Dense => {
                let f: usize = s[1..].iter().product();
                let mut d = Dense::new(f, rng.gen_range(1..=4));
                d.init_uniform(&mut rng);
                (Layer::Dense(d), random_tensor(&mut rng, &s))
            }
        };
        let st = check_layer(&layer, &x, &mut rng)?;
        total.probes += st.probes;
        total.worst = total.worst.max(st.worst);
    }
    Ok(total)
}

pub fn hand(frame: usize, x: f64, y: f64, w: f64, h: f64) -> Detection {
    Detection {
        frame,
        class: ObjectClass::Hand,
        x,
        y,
        w,
        h,
        score: 0.9,
    }
}

pub fn random_dets(rng: &mut ChaCha8Rng, fw: usize, fh: usize, frames: usize) -> Vec<Detection> {
    let mut out = Vec::new();
    for f in 0..frames {
        for _ in 0..rng.gen_range(0..6) {
            let w = rng.gen_range(1.0..80.0);
            let h = rng.gen_range(1.0..80.0);
            let x = rng.gen_range(-30.0..fw as f64);
            let y = rng.gen_range(-30.0..fh as f64);
            out.push(hand(f, x, y, w, h));
        }
        if rng.gen_bool(0.3) {
            out.push(Detection {
                class: ObjectClass::Keyboard,
                ..hand(f, 0.0, 0.0, fw as f64, fh as f64)
            });
        }
    }
    out
}

/// Per-pixel rasterization: a cell votes once per sampled frame when any
/// of its pixels overlaps a hand box.
pub fn raster_oracle(
    dets: &[Detection],
    start: usize,
    fps: usize,
    fw: usize,
    fh: usize,
    p: &ProjectionParams,
) -> Vec<u8> {
    let (gw, gh) = (fw.div_ceil(p.cell), fh.div_ceil(p.cell));
    let mut counts = vec![0u8; gw * gh];
    for k in 0..p.window_seconds {
        let f = start + k * fps;
        let mut hit = vec![false; gw * gh];
        for d in dets
            .iter()
            .filter(|d| d.frame == f && d.class == ObjectClass::Hand)
        {
            for py in 0..fh {
                for px in 0..fw {
                    let (x, y) = (px as f64, py as f64);
                    if x < d.x + d.w && x + 1.0 > d.x && y < d.y + d.h && y + 1.0 > d.y {
                        hit[(py / p.cell) * gw + px / p.cell] = true;
                    }
                }
            }
        }
        for (c, h) in counts.iter_mut().zip(hit) {
            *c += h as u8;
        }
    }
    counts
}

pub fn random_instances(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<ActivityInstance> {
    (0..n)
        .map(|_| {
            // Half-second grid times make exact gap ties common.
            let t = if grid {
                rng.gen_range(0..400) as f64 * 0.5
            } else {
                rng.gen_range(0.0..200.0)
            };
            ActivityInstance {
                kind: if rng.gen_bool(0.5) {
                    ActivityKind::Typing
                } else {
                    ActivityKind::Writing
                },
                person: PEOPLE[rng.gen_range(0..3)].into(),
                t_start: t,
                t_end: t + if grid { 3.0 } else { rng.gen_range(0.5..6.0) },
                probability: rng.gen_range(0.5..1.0),
            }
        })
        .collect()
}

/// Clusters as connected components of "gap below threshold" between
/// pairs of same-person, same-kind instances.
pub fn merge_oracle(
    xs: &[ActivityInstance],
    gap: f64,
) -> Vec<(ActivityKind, String, f64, f64, usize, f64)> {
    let n = xs.len();
    let mut comp: Vec<usize> = (0..n).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&xs[i], &xs[j]);
                let near = a.person == b.person
                    && a.kind == b.kind
                    && b.t_start - a.t_end < gap
                    && a.t_start - b.t_end < gap;
                if near && comp[i] != comp[j] {
                    let m = comp[i].min(comp[j]);
                    comp[i] = m;
                    comp[j] = m;
                    changed = true;
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<&ActivityInstance>> = BTreeMap::new();
    for (i, x) in xs.iter().enumerate() {
        groups.entry(comp[i]).or_default().push(x);
    }
    let mut out: Vec<_> = groups
        .values()
        .map(|g| {
            let s = g.iter().map(|x| x.t_start).fold(f64::INFINITY, f64::min);
            let e = g.iter().map(|x| x.t_end).fold(f64::NEG_INFINITY, f64::max);
            let p = g.iter().map(|x| x.probability).sum::<f64>() / g.len() as f64;
            (g[0].kind, g[0].person.clone(), s, e, g.len(), p)
        })
        .collect();
    out.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
    out
}

pub fn typists_at(cs: &[Cluster], t: f64) -> Vec<&str> {
    let mut v: Vec<&str> = cs
        .iter()
        .filter(|c| c.kind == ActivityKind::Typing && c.t_start <= t && t < c.t_end)
        .map(|c| c.person.as_str())
        .collect();
    v.sort();
    v.dedup();
    v
}

/// ROC by sweeping every distinct score as a threshold (predict positive
/// when score >= threshold), area by trapezoids.
pub fn trapezoid_auc(scores: &[f32], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut th: Vec<f32> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in th {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l == 1)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| **s >= t && **l == 0)
            .count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Parameter count derived by hand: conv `ic*oc*27 + oc`, batch norm
/// `2*oc`, dense over the floor-divided trajectory.
pub fn symbolic_count(depth: u8, fr: u32) -> usize {
    let mut total = 0;
    let (mut c, mut t, mut s) = (3usize, 3 * fr as usize, 224usize);
    for d in 1..=depth {
        let oc = 1usize << (d + 1);
        total += c * oc * 27 + oc + 2 * oc;
        t /= if d == 1 { (3 * fr / 30) as usize } else { 3 };
        s /= 3;
        c = oc;
    }
    total + c * t * s * s + 1
}

pub fn square(w: usize, h: usize, b: &BoundingBox, level: f32) -> GrayImage {
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            if b.contains_point(x as f64 + 0.5, y as f64 + 0.5) {
                data[y * w + x] = level;
            }
        }
    }
    GrayImage::new(w, h, data)
}
