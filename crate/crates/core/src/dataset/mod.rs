//! Ground-truth activity labels, representative-sample extraction and
//! session-level splits.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{FrameSource, FrameStack};
use crate::geometry::BoundingBox;
use crate::model::CLIP_SECONDS;
use crate::tensor::Tensor;

/// Source video rate every frame index refers to.
pub const SOURCE_FPS: usize = 30;
/// Frames in one 3-second window at the source rate.
pub const WINDOW: usize = CLIP_SECONDS * SOURCE_FPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityKind {
    Typing,
    Writing,
}

impl std::fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActivityKind::Typing => "typing",
            ActivityKind::Writing => "writing",
        })
    }
}

impl std::str::FromStr for ActivityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "typing" => Ok(ActivityKind::Typing),
            "writing" => Ok(ActivityKind::Writing),
            other => Err(Error::Config(format!("unknown activity kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    #[serde(rename = "typing")]
    Typing,
    #[serde(rename = "no-typing")]
    NoTyping,
    #[serde(rename = "writing")]
    Writing,
    #[serde(rename = "no-writing")]
    NoWriting,
}

impl Activity {
    pub fn kind(self) -> ActivityKind {
        match self {
            Activity::Typing | Activity::NoTyping => ActivityKind::Typing,
            Activity::Writing | Activity::NoWriting => ActivityKind::Writing,
        }
    }

    pub fn label(self) -> u8 {
        matches!(self, Activity::Typing | Activity::Writing) as u8
    }
}

/// One labeled activity interval. Frame indices are at 30 fps; `f1` is
/// exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityLabelRecord {
    pub session_id: String,
    pub activity: Activity,
    pub person: String,
    pub f0: usize,
    pub f1: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
}

impl ActivityLabelRecord {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f1 < self.f0 + WINDOW {
            return Err(Error::Record(format!(
                "{} {} frames {}..{} are shorter than {WINDOW} frames",
                self.session_id, self.person, self.f0, self.f1
            )));
        }
        if !self.bbox().is_valid() {
            return Err(Error::Record(format!(
                "{} {}: degenerate box",
                self.session_id, self.person
            )));
        }
        Ok(())
    }
}

/// Centered 3-second window `[start, start + 90)` of a record.
pub fn representative_window(record: &ActivityLabelRecord) -> Result<(usize, usize)> {
    record.validate()?;
    let start = (record.f0 + record.f1) / 2 - WINDOW / 2;
    Ok((start, start + WINDOW))
}

/// Source frame indices kept when resampling a 90-frame window to `fr`.
pub fn resample_indices(fr: u32) -> Result<Vec<usize>> {
    crate::model::d_fr(fr)?;
    let n = CLIP_SECONDS * fr as usize;
    Ok((0..n)
        .map(|i| ((i * SOURCE_FPS) as f64 / fr as f64).round() as usize)
        .collect())
}

/// Temporal resampling of a `C x 90 x H x W` clip to `C x 3fr x H x W`.
pub fn temporal_resample(clip: &Tensor, fr: u32) -> Result<Tensor> {
    let s = clip.shape();
    if s.len() != 4 {
        return Err(Error::shape("clip rank", 4, s.len()));
    }
    if s[1] != WINDOW {
        return Err(Error::shape("clip axis T", WINDOW, s[1]));
    }
    let idx = resample_indices(fr)?;
    let plane = s[2] * s[3];
    let mut out = Vec::with_capacity(s[0] * idx.len() * plane);
    for c in 0..s[0] {
        for &t in &idx {
            let off = (c * s[1] + t) * plane;
            out.extend_from_slice(&clip.data()[off..off + plane]);
        }
    }
    Tensor::from_vec(&[s[0], idx.len(), s[2], s[3]], out)
}

/// Placement of a letterboxed image inside a `target x target` canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub content_h: usize,
    pub content_w: usize,
    pub top: usize,
    pub left: usize,
}

pub fn letterbox_geometry(h: usize, w: usize, target: usize) -> Result<Letterbox> {
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("zero-area crop {w}x{h}")));
    }
    let scale = target as f64 / h.max(w) as f64;
    let fit = |n: usize| ((n as f64 * scale).round() as usize).clamp(1, target);
    let (content_h, content_w) = (fit(h), fit(w));
    Ok(Letterbox {
        content_h,
        content_w,
        top: (target - content_h) / 2,
        left: (target - content_w) / 2,
    })
}

/// Bilinear taps for one axis: source index pair and blend weight per
/// output position (half-pixel centers, edge-clamped).
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|d| {
            let p = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, p - i0 as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Shared resampling core: fills a zeroed `target x target` plane from a
/// `h x w` source read through `at(y, x)`.
fn letterbox_plane(
    at: impl Fn(usize, usize) -> f32,
    h: usize,
    w: usize,
    lb: &Letterbox,
    ty: &[(usize, usize, f32)],
    tx: &[(usize, usize, f32)],
    target: usize,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), target * target);
    debug_assert!(ty.iter().all(|t| t.1 < h) && tx.iter().all(|t| t.1 < w));
    for (dy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let row = &mut out[(lb.top + dy) * target + lb.left..][..lb.content_w];
        for (v, &(x0, x1, fx)) in row.iter_mut().zip(tx) {
            let a = lerp(at(y0, x0), at(y0, x1), fx);
            let b = lerp(at(y1, x0), at(y1, x1), fx);
            *v = lerp(a, b, fy);
        }
    }
}

/// Scales a `C x T x H x W` stack so its longer edge is `target`, then
/// zero-pads symmetrically to `C x T x target x target`.
pub fn resize_letterbox(clip: &Tensor, target: usize) -> Result<Tensor> {
    let s = clip.shape();
    if s.len() != 4 {
        return Err(Error::shape("clip rank", 4, s.len()));
    }
    let (h, w) = (s[2], s[3]);
    let lb = letterbox_geometry(h, w, target)?;
    let ty = taps(h, lb.content_h);
    let tx = taps(w, lb.content_w);
    let mut out = Tensor::zeros(&[s[0], s[1], target, target]);
    let planes = s[0] * s[1];
    for p in 0..planes {
        let src = &clip.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * target * target..(p + 1) * target * target];
        letterbox_plane(|y, x| src[y * w + x], h, w, &lb, &ty, &tx, target, dst);
    }
    Ok(out)
}

/// Crops `span = [x0, y0, x1, y1]` from selected frames of `stack`,
/// letterboxes to `target`, and writes the `3 x frames.len() x target x
/// target` result into `out` (values in [0, 1]). Arithmetic matches
/// `resize_letterbox` on the equivalent float crop exactly.
pub fn crop_letterbox_into(
    stack: &FrameStack,
    frames: &[usize],
    span: [usize; 4],
    target: usize,
    out: &mut [f32],
) -> Result<()> {
    let [x0, y0, x1, y1] = span;
    if x1 > stack.width || y1 > stack.height {
        return Err(Error::Data(format!(
            "crop {span:?} outside {}x{} frame",
            stack.width, stack.height
        )));
    }
    let (h, w) = (y1.saturating_sub(y0), x1.saturating_sub(x0));
    let lb = letterbox_geometry(h, w, target)?;
    let t = frames.len();
    if out.len() != 3 * t * target * target {
        return Err(Error::shape(
            "clip buffer",
            3 * t * target * target,
            out.len(),
        ));
    }
    out.fill(0.0);
    let ty = taps(h, lb.content_h);
    let tx = taps(w, lb.content_w);
    let plane = target * target;
    for (ti, &k) in frames.iter().enumerate() {
        if k >= stack.frames {
            return Err(Error::Data(format!(
                "frame {k} outside stack of {}",
                stack.frames
            )));
        }
        let f = stack.frame(k);
        for c in 0..3 {
            let at =
                |y: usize, x: usize| f[((y0 + y) * stack.width + x0 + x) * 3 + c] as f32 / 255.0;
            let dst = &mut out[(c * t + ti) * plane..][..plane];
            letterbox_plane(at, h, w, &lb, &ty, &tx, target, dst);
        }
    }
    Ok(())
}

/// A model-ready clip with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleClip {
    /// `3 x 3fr x side x side`.
    pub pixels: Tensor,
    pub label: u8,
}

/// Centered 3-second sample of `record`, cropped to its box, letterboxed
/// to `side` and resampled to `fr`.
pub fn extract_representative_sample(
    record: &ActivityLabelRecord,
    frames: &mut dyn FrameSource,
    fr: u32,
    side: usize,
) -> Result<SampleClip> {
    let (start, _) = representative_window(record)?;
    let b = record.bbox();
    if b.x < 0.0
        || b.y < 0.0
        || b.right() > frames.width() as f64
        || b.bottom() > frames.height() as f64
    {
        return Err(Error::Record(format!(
            "{} {}: box {b:?} outside {}x{} frame",
            record.session_id,
            record.person,
            frames.width(),
            frames.height()
        )));
    }
    let span = b
        .pixel_span(frames.width(), frames.height())
        .expect("box checked inside frame");
    let stack = frames.read_frames(start, WINDOW)?;
    let idx = resample_indices(fr)?;
    let mut pixels = Tensor::zeros(&[3, idx.len(), side, side]);
    crop_letterbox_into(&stack, &idx, span, side, pixels.data_mut())?;
    Ok(SampleClip {
        pixels,
        label: record.activity.label(),
    })
}

/// Reads line-delimited JSON label records. Blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ActivityLabelRecord>> {
    crate::jsonl::read(path)
}

pub fn write_records(path: impl AsRef<Path>, records: &[ActivityLabelRecord]) -> Result<()> {
    crate::jsonl::write(path, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSet::Train),
            "val" => Ok(SplitSet::Val),
            "test" => Ok(SplitSet::Test),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitSet::Train => "train",
            SplitSet::Val => "val",
            SplitSet::Test => "test",
        })
    }
}

/// Manifest: one `session_id split` pair per line, `#` starts a comment.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, SplitSet>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(session), Some(set), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Manifest(format!(
                "line {}: expected `session_id split`",
                i + 1
            )));
        };
        let set: SplitSet = set.parse()?;
        if let Some(prev) = out.insert(session.to_string(), set) {
            return Err(Error::Manifest(format!(
                "line {}: session `{session}` listed twice ({prev} and {set})",
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &BTreeMap<String, SplitSet>) -> Result<()> {
    let path = path.as_ref();
    let text: String = manifest
        .iter()
        .map(|(s, set)| format!("{s} {set}\n"))
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<ActivityLabelRecord>,
    pub val: Vec<ActivityLabelRecord>,
    pub test: Vec<ActivityLabelRecord>,
    /// Sessions in the labels but not the manifest; routed to train.
    pub unknown_sessions: BTreeSet<String>,
    pub excluded: usize,
}

impl DatasetSplit {
    pub fn set(&self, s: SplitSet) -> &[ActivityLabelRecord] {
        match s {
            SplitSet::Train => &self.train,
            SplitSet::Val => &self.val,
            SplitSet::Test => &self.test,
        }
    }

    /// `(positives, negatives)` for one activity kind in one set.
    pub fn counts(&self, s: SplitSet, kind: ActivityKind) -> (usize, usize) {
        let rs = self.set(s).iter().filter(|r| r.activity.kind() == kind);
        rs.fold((0, 0), |(p, n), r| {
            if r.activity.label() == 1 {
                (p + 1, n)
            } else {
                (p, n + 1)
            }
        })
    }

    pub fn sessions(&self, s: SplitSet) -> BTreeSet<&str> {
        self.set(s).iter().map(|r| r.session_id.as_str()).collect()
    }
}

/// Partitions records by manifest membership, skipping excluded records.
pub fn split_records(
    records: Vec<ActivityLabelRecord>,
    manifest: &BTreeMap<String, SplitSet>,
) -> DatasetSplit {
    let mut out = DatasetSplit::default();
    for r in records {
        if r.excluded {
            out.excluded += 1;
            continue;
        }
        let set = match manifest.get(&r.session_id) {
            Some(&s) => s,
            None => {
                out.unknown_sessions.insert(r.session_id.clone());
                SplitSet::Train
            }
        };
        match set {
            SplitSet::Train => out.train.push(r),
            SplitSet::Val => out.val.push(r),
            SplitSet::Test => out.test.push(r),
        }
    }
    out
}

pub fn load_split(labels: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<DatasetSplit> {
    let manifest = manifest.as_ref();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m = parse_manifest(&text)?;
    Ok(split_records(read_records(labels)?, &m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(f0: usize, f1: usize) -> ActivityLabelRecord {
        ActivityLabelRecord {
            session_id: "s".into(),
            activity: Activity::Typing,
            person: "Kid1".into(),
            f0,
            f1,
            x: 0.0,
            y: 0.0,
            w: 4.0,
            h: 4.0,
            excluded: false,
        }
    }

    #[test]
    fn centered_windows() {
        assert_eq!(representative_window(&record(0, 300)).unwrap(), (105, 195));
        assert_eq!(representative_window(&record(0, 90)).unwrap(), (0, 90));
        assert!(representative_window(&record(0, 89)).is_err());
    }

    #[test]
    fn resample_index_sets() {
        assert_eq!(resample_indices(30).unwrap(), (0..90).collect::<Vec<_>>());
        assert_eq!(
            resample_indices(10).unwrap(),
            (0..30).map(|i| 3 * i).collect::<Vec<_>>()
        );
        let twenty = resample_indices(20).unwrap();
        assert_eq!(twenty.len(), 60);
        assert!(twenty.windows(2).all(|p| p[1] >= p[0] && p[1] - p[0] <= 2));
        assert!(*twenty.last().unwrap() < 90);
        assert!(resample_indices(25).is_err());
    }

    #[test]
    fn letterbox_two_to_one() {
        let lb = letterbox_geometry(224, 448, 224).unwrap();
        assert_eq!(
            lb,
            Letterbox {
                content_h: 112,
                content_w: 224,
                top: 56,
                left: 0
            }
        );
        assert!(letterbox_geometry(0, 5, 224).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates() {
        assert!(parse_manifest("a train\nb val\na test\n").is_err());
        assert!(parse_manifest("a holdout\n").is_err());
        let m = parse_manifest("# c\na train  \n\nb val # x\n").unwrap();
        assert_eq!(m.len(), 2);
    }
}

/// Indexed collection of equally shaped labeled clips.
pub trait ClipSet: Sync {
    fn len(&self) -> usize;
    /// `[C, T, H, W]` of every clip.
    fn clip_shape(&self) -> [usize; 4];
    fn label(&self, i: usize) -> u8;
    /// Writes clip `i` into `out` (length = product of `clip_shape`).
    fn write_clip(&self, i: usize, out: &mut [f32]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Clips held in memory, e.g. extracted representative samples.
#[derive(Debug, Clone)]
pub struct InMemoryClips {
    shape: [usize; 4],
    clips: Vec<SampleClip>,
}

impl InMemoryClips {
    pub fn new(clips: Vec<SampleClip>) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::Data("empty clip set".into()))?;
        let s = first.pixels.shape();
        if s.len() != 4 {
            return Err(Error::shape("clip rank", 4, s.len()));
        }
        let shape = [s[0], s[1], s[2], s[3]];
        for (i, c) in clips.iter().enumerate() {
            if c.pixels.shape() != shape {
                return Err(Error::shape(
                    format!("clip {i}"),
                    format!("{shape:?}"),
                    format!("{:?}", c.pixels.shape()),
                ));
            }
        }
        Ok(Self { shape, clips })
    }

    pub fn clips(&self) -> &[SampleClip] {
        &self.clips
    }
}

impl ClipSet for InMemoryClips {
    fn len(&self) -> usize {
        self.clips.len()
    }
    fn clip_shape(&self) -> [usize; 4] {
        self.shape
    }
    fn label(&self, i: usize) -> u8 {
        self.clips[i].label
    }
    fn write_clip(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(self.clips[i].pixels.data());
    }
}

/// Representative samples read from raw session videos on demand. Session
/// `s` is looked up as `<frames_dir>/<s>.toml`.
#[derive(Debug, Clone)]
pub struct RecordClips {
    records: Vec<ActivityLabelRecord>,
    descriptors: BTreeMap<String, crate::frames::FrameDescriptor>,
    fr: u32,
    side: usize,
}

impl RecordClips {
    /// Checks every record's window and box against its session up front,
    /// so later reads cannot fail on contract grounds.
    pub fn new(
        records: Vec<ActivityLabelRecord>,
        frames_dir: impl AsRef<Path>,
        fr: u32,
        side: usize,
    ) -> Result<Self> {
        crate::model::d_fr(fr)?;
        let mut descriptors = BTreeMap::new();
        for r in &records {
            if !descriptors.contains_key(&r.session_id) {
                let p = frames_dir.as_ref().join(format!("{}.toml", r.session_id));
                descriptors.insert(
                    r.session_id.clone(),
                    crate::frames::FrameDescriptor::load(&p)?,
                );
            }
            let d = &descriptors[&r.session_id];
            let (_, end) = representative_window(r)?;
            let b = r.bbox();
            if end > d.frame_count
                || b.x < 0.0
                || b.y < 0.0
                || b.right() > d.width as f64
                || b.bottom() > d.height as f64
            {
                return Err(Error::Record(format!(
                    "{} {} frames {}..{}: window or box outside the {}x{} video of {} frames",
                    r.session_id, r.person, r.f0, r.f1, d.width, d.height, d.frame_count
                )));
            }
        }
        Ok(Self {
            records,
            descriptors,
            fr,
            side,
        })
    }
}

impl ClipSet for RecordClips {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn clip_shape(&self) -> [usize; 4] {
        [3, CLIP_SECONDS * self.fr as usize, self.side, self.side]
    }

    fn label(&self, i: usize) -> u8 {
        self.records[i].activity.label()
    }

    fn write_clip(&self, i: usize, out: &mut [f32]) {
        let r = &self.records[i];
        let mut src = crate::frames::RawVideo::open(&self.descriptors[&r.session_id])
            .unwrap_or_else(|e| panic!("session {} became unreadable: {e}", r.session_id));
        let clip = extract_representative_sample(r, &mut src, self.fr, self.side)
            .unwrap_or_else(|e| panic!("record {} {}: {e}", r.session_id, r.person));
        out.copy_from_slice(clip.pixels.data());
    }
}
