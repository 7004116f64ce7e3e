//! Binary weight file.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DYADNET\0"
//! 8       2     format version (1)
//! 10      2     reserved (0)
//! 12      4     depth D
//! 16      4     frame rate fr
//! 20      4     input side
//! 24      4     layer count L
//! 28      8     total f32 count in the payload
//! 36      ...   layer table, L entries:
//!                 u8 kind (1 conv, 2 batchnorm, 3 relu, 4 maxpool, 5 dense)
//!                 u8 tensor count K
//!                 maxpool only: 3 x u32 kernel (t, h, w)
//!                 K x (u8 rank, rank x u32 extents)
//! ...     ...   payload: every tensor's f32 values in table order
//! ```
//!
//! Batch-norm entries carry four tensors (gamma, beta, running mean,
//! running variance) so eval-mode predictions round-trip bit-exactly.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Layer, MaxPool3d, Mode};

const MAGIC: &[u8; 8] = b"DYADNET\0";
const VERSION: u16 = 1;

fn kind(layer: &Layer) -> u8 {
    match layer {
        Layer::Conv3d(_) => 1,
        Layer::BatchNorm3d(_) => 2,
        Layer::Relu => 3,
        Layer::MaxPool3d(_) => 4,
        Layer::Dense(_) => 5,
    }
}

fn tensors(layer: &Layer) -> Vec<(Vec<u32>, &[f32])> {
    match layer {
        Layer::Conv3d(c) => vec![
            (
                vec![c.out_channels as u32, c.in_channels as u32, 3, 3, 3],
                &c.weight[..],
            ),
            (vec![c.out_channels as u32], &c.bias[..]),
        ],
        Layer::BatchNorm3d(b) => {
            let s = vec![b.channels as u32];
            vec![
                (s.clone(), &b.gamma[..]),
                (s.clone(), &b.beta[..]),
                (s.clone(), &b.running_mean[..]),
                (s, &b.running_var[..]),
            ]
        }
        Layer::Dense(d) => vec![
            (
                vec![d.out_features as u32, d.in_features as u32],
                &d.weight[..],
            ),
            (vec![d.out_features as u32], &d.bias[..]),
        ],
        Layer::Relu | Layer::MaxPool3d(_) => vec![],
    }
}

fn tensors_mut(layer: &mut Layer) -> Vec<&mut Vec<f32>> {
    match layer {
        Layer::Conv3d(c) => vec![&mut c.weight, &mut c.bias],
        Layer::BatchNorm3d(b) => vec![
            &mut b.gamma,
            &mut b.beta,
            &mut b.running_mean,
            &mut b.running_var,
        ],
        Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
        Layer::Relu | Layer::MaxPool3d(_) => vec![],
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(model.config.depth as u32).to_le_bytes());
    out.extend_from_slice(&model.config.frame_rate.to_le_bytes());
    out.extend_from_slice(&(model.side as u32).to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    let total: u64 = model
        .layers
        .iter()
        .flat_map(tensors)
        .map(|(_, d)| d.len() as u64)
        .sum();
    out.extend_from_slice(&total.to_le_bytes());
    for layer in &model.layers {
        let ts = tensors(layer);
        out.push(kind(layer));
        out.push(ts.len() as u8);
        if let Layer::MaxPool3d(p) = layer {
            for k in [p.kt, p.kh, p.kw] {
                out.extend_from_slice(&(k as u32).to_le_bytes());
            }
        }
        for (shape, _) in &ts {
            out.push(shape.len() as u8);
            for d in shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    for layer in &model.layers {
        for (_, data) in tensors(layer) {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad(
                field,
                format!(
                    "truncated at byte {} (file has {})",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }
    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }
    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::WeightFile {
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub fn decode(buf: &[u8], expected: Option<&ModelConfig>) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(bad("magic", "not a dyadic weight file"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(bad("version", format!("unsupported version {version}")));
    }
    r.u16("reserved")?;
    let depth = r.u32("depth")?;
    let frame_rate = r.u32("frame_rate")?;
    let side = r.u32("side")? as usize;
    let config = ModelConfig::new(
        u8::try_from(depth).map_err(|_| bad("depth", format!("{depth}")))?,
        frame_rate,
    )
    .map_err(|e| bad("config", e.to_string()))?;
    if let Some(want) = expected {
        if *want != config {
            return Err(bad(
                "config",
                format!("file holds {config}, expected {want}"),
            ));
        }
    }
    let mut model =
        Model::build_with_side(config, side, 0).map_err(|e| bad("side", e.to_string()))?;
    let n_layers = r.u32("layer_count")? as usize;
    if n_layers != model.layers.len() {
        return Err(bad(
            "layer_count",
            format!("{n_layers}, architecture has {}", model.layers.len()),
        ));
    }
    let total = r.u64("payload_len")?;
    for (i, layer) in model.layers.iter().enumerate() {
        let field = format!("layer[{i}]");
        let k = r.u8(&field)?;
        if k != kind(layer) {
            return Err(bad(
                &field,
                format!("kind {k}, expected {} ({})", kind(layer), layer.name()),
            ));
        }
        let count = r.u8(&field)? as usize;
        if let Layer::MaxPool3d(p) = layer {
            let got = MaxPool3d::new(
                r.u32(&field)? as usize,
                r.u32(&field)? as usize,
                r.u32(&field)? as usize,
            );
            if got != *p {
                return Err(bad(&field, format!("pool kernel {got:?}, expected {p:?}")));
            }
        }
        let want = tensors(layer);
        if count != want.len() {
            return Err(bad(
                &field,
                format!("{count} tensors, expected {}", want.len()),
            ));
        }
        for (j, (shape, _)) in want.iter().enumerate() {
            let rank = r.u8(&field)? as usize;
            let dims: Vec<u32> = (0..rank).map(|_| r.u32(&field)).collect::<Result<_>>()?;
            if &dims != shape {
                return Err(bad(
                    &format!("{field}.tensor[{j}]"),
                    format!("shape {dims:?}, expected {shape:?}"),
                ));
            }
        }
    }
    let payload = buf.len() - r.pos;
    if payload as u64 != total * 4 {
        return Err(bad(
            "payload",
            format!("{payload} bytes, header declares {}", total * 4),
        ));
    }
    for layer in model.layers.iter_mut() {
        for t in tensors_mut(layer) {
            for v in t.iter_mut() {
                *v = f32::from_le_bytes(r.take(4, "payload")?.try_into().unwrap());
            }
        }
    }
    model.set_mode(Mode::Eval);
    Ok(model)
}

/// Loads a model in eval mode.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, None)
}

/// Loads a model, rejecting files built for a different configuration.
pub fn load_weights_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, Some(config))
}
