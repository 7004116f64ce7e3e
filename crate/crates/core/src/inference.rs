//! Batched classification with a bounded loading queue, batch-size
//! sweeps and a memory estimate.

use std::path::Path;
use std::sync::mpsc::{channel, sync_channel};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{resample_indices, ClipSet};
use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::model::{EvalWorkspace, Model, CLIP_SECONDS};
use crate::nn::Mode;
use crate::proposals::{crop_clip_into, Proposal};
use crate::tensor::Tensor;

/// Batches in flight between the loader and the classifier.
pub const QUEUE_DEPTH: usize = 2;

pub const SWEEP_SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];

fn check_model(model: &Model, batch_size: usize) -> Result<()> {
    if model.mode() != Mode::Eval {
        return Err(Error::Contract(
            "inference requires batch norm in eval mode".into(),
        ));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    Ok(())
}

/// Runs `load` on a loader thread for consecutive batches of `n` items and
/// classifies them in order. `load(first, count, buf)` fills `count`
/// clips starting at item `first`.
pub fn infer_stream<F>(model: &Model, n: usize, batch_size: usize, mut load: F) -> Result<Vec<f32>>
where
    F: FnMut(usize, usize, &mut [f32]) -> Result<()> + Send,
{
    check_model(model, batch_size)?;
    let item = model.input_shape(1);
    let (tx, rx) = sync_channel::<Result<Tensor>>(QUEUE_DEPTH);
    // Consumed batches go back to the loader for refilling.
    let (back_tx, back_rx) = channel::<Tensor>();
    std::thread::scope(|s| {
        s.spawn(move || {
            for first in (0..n).step_by(batch_size) {
                let count = batch_size.min(n - first);
                let mut shape = item;
                shape[0] = count;
                let mut t = back_rx.try_recv().unwrap_or_else(|_| Tensor::zeros(&shape));
                t.resize_to(&shape);
                let r = load(first, count, t.data_mut()).map(|_| t);
                let failed = r.is_err();
                if tx.send(r).is_err() || failed {
                    return;
                }
            }
        });
        let mut ws = EvalWorkspace::new();
        let mut probs = Vec::with_capacity(n);
        for batch in rx {
            let batch = batch?;
            probs.extend(model.predict_with(&batch, &mut ws)?);
            // The loader may already be done; a dropped receiver is fine.
            let _ = back_tx.send(batch);
        }
        Ok(probs)
    })
}

/// Clip shape must match the model input exactly; a temporal mismatch
/// means the clips were sampled at another frame rate.
fn check_clips(model: &Model, shape: [usize; 4]) -> Result<()> {
    let want = model.input_shape(1);
    if shape[1] != want[2] {
        return Err(Error::shape(
            format!(
                "clip frames (model frame rate {})",
                model.config().frame_rate
            ),
            want[2],
            shape[1],
        ));
    }
    if [shape[0], shape[2], shape[3]] != [want[1], want[3], want[4]] {
        return Err(Error::shape(
            "clip shape",
            format!("{:?}", &want[1..]),
            format!("{shape:?}"),
        ));
    }
    Ok(())
}

/// Probabilities for every clip of `set`, in order.
pub fn infer_batched(model: &Model, set: &dyn ClipSet, batch_size: usize) -> Result<Vec<f32>> {
    if set.is_empty() {
        check_model(model, batch_size)?;
        return Ok(Vec::new());
    }
    check_clips(model, set.clip_shape())?;
    let len: usize = set.clip_shape().iter().product();
    infer_stream(model, set.len(), batch_size, |first, count, buf| {
        for (k, chunk) in buf.chunks_exact_mut(len).enumerate().take(count) {
            set.write_clip(first + k, chunk);
        }
        Ok(())
    })
}

/// Crops and classifies proposals straight from the frame source.
pub fn classify_proposals(
    model: &Model,
    frames: &mut (dyn FrameSource + Send),
    proposals: &[Proposal],
    batch_size: usize,
) -> Result<Vec<f32>> {
    let idx = resample_indices(model.config().frame_rate)?;
    let side = model.side();
    let len = 3 * idx.len() * side * side;
    infer_stream(model, proposals.len(), batch_size, |first, count, buf| {
        for (k, chunk) in buf.chunks_exact_mut(len).enumerate().take(count) {
            crop_clip_into(frames, &proposals[first + k], &idx, side, chunk)?;
        }
        Ok(())
    })
}

/// Bytes for the parameters, the first convolution's padded input (about
/// one clip), the two largest layer outputs, and the input batches in
/// flight: one loading, `QUEUE_DEPTH` queued, one classifying.
pub fn memory_estimate(model: &Model, batch_size: usize) -> u64 {
    let shapes = model.layer_shapes(1);
    let clip: usize = model.input_shape(1).iter().product();
    let mut sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let act: usize = sizes.iter().take(2).sum();
    let fixed = model.count_params() + clip + act;
    4 * (fixed as u64 + ((QUEUE_DEPTH + 2) * clip * batch_size) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub batch_size: usize,
    pub clips: usize,
    pub clips_per_second: f64,
    /// Source seconds classified per wall second.
    pub speed_multiple: f64,
    pub peak_model_memory_bytes: u64,
    pub wall_seconds: f64,
}

impl ThroughputReport {
    pub fn new(
        batch_size: usize,
        clips: usize,
        wall_seconds: f64,
        peak_model_memory_bytes: u64,
    ) -> Self {
        let clips_per_second = if wall_seconds > 0.0 {
            clips as f64 / wall_seconds
        } else {
            0.0
        };
        Self {
            batch_size,
            clips,
            clips_per_second,
            speed_multiple: clips_per_second * CLIP_SECONDS as f64,
            peak_model_memory_bytes,
            wall_seconds,
        }
    }
}

/// Batch size with the highest speed; ties go to the smaller size.
pub fn choose_batch_size(curve: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(b, s) in curve {
        best = match best {
            Some((bb, bs)) if s < bs || (s == bs && b >= bb) => Some((bb, bs)),
            _ => Some((b, s)),
        };
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<ThroughputReport>,
    pub chosen: usize,
}

impl SweepResult {
    pub fn from_reports(reports: Vec<ThroughputReport>) -> Result<Self> {
        let curve: Vec<_> = reports
            .iter()
            .map(|r| (r.batch_size, r.speed_multiple))
            .collect();
        let chosen = choose_batch_size(&curve).ok_or_else(|| Error::Data("empty sweep".into()))?;
        Ok(Self { reports, chosen })
    }

    /// Text table of the sweep; the chosen size is starred.
    pub fn render(&self) -> String {
        let mut s = String::from("batch  clips/s  speed   memory\n");
        for r in &self.reports {
            let mark = if r.batch_size == self.chosen {
                "*"
            } else {
                " "
            };
            s.push_str(&format!(
                "{mark}{:>4}  {:>7.2}  {:>5.1}x  {:.2} MB\n",
                r.batch_size,
                r.clips_per_second,
                r.speed_multiple,
                r.peak_model_memory_bytes as f64 / 1e6
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("sweep serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Median wall time over `reps` passes of the whole set at each size.
pub fn sweep_batch_sizes(
    model: &Model,
    set: &dyn ClipSet,
    sizes: &[usize],
    reps: usize,
) -> Result<SweepResult> {
    let need = sizes.iter().copied().max().unwrap_or(0);
    if set.len() < need {
        return Err(Error::Data(format!(
            "batch sweep needs at least {need} clips, got {}",
            set.len()
        )));
    }
    let reps = reps.max(3);
    let mut reports = Vec::with_capacity(sizes.len());
    for &b in sizes {
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            infer_batched(model, set, b)?;
            times.push(t0.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        reports.push(ThroughputReport::new(
            b,
            set.len(),
            times[reps / 2],
            memory_estimate(model, b),
        ));
    }
    SweepResult::from_reports(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub id: usize,
    pub probability: f64,
    pub label: u8,
}

pub fn classifications(probs: &[f32]) -> Vec<Classification> {
    probs
        .iter()
        .enumerate()
        .map(|(id, &p)| Classification {
            id,
            probability: p as f64,
            label: (p >= 0.5) as u8,
        })
        .collect()
}

pub fn write_classifications(path: impl AsRef<Path>, c: &[Classification]) -> Result<()> {
    crate::jsonl::write(path, c)
}

pub fn read_classifications(path: impl AsRef<Path>) -> Result<Vec<Classification>> {
    crate::jsonl::read(path)
}
