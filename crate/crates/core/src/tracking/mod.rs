//! Keyboard tracking: trust a detection at every scheduled frame, follow
//! it with a correlation filter in between.

pub mod kcf;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{FrameSource, FrameStack};
use crate::geometry::BoundingBox;

pub use kcf::{GrayImage, KcfParams, KcfTracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Keyboard,
    Hand,
}

/// One object-detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub class: ObjectClass,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl Detection {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Record(format!(
                "detection score {} outside [0,1]",
                self.score
            )));
        }
        if !self.bbox().is_valid() {
            return Err(Error::Record(format!(
                "degenerate detection box at frame {}",
                self.frame
            )));
        }
        Ok(())
    }
}

/// Reads and validates a detections file; the stream must be sorted by
/// frame.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let dets: Vec<Detection> = crate::jsonl::read(path)?;
    for (i, d) in dets.iter().enumerate() {
        d.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
    }
    check_sorted(&dets)?;
    Ok(dets)
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    crate::jsonl::write(path, dets)
}

pub(crate) fn check_sorted(dets: &[Detection]) -> Result<()> {
    match dets.windows(2).position(|p| p[1].frame < p[0].frame) {
        Some(i) => Err(Error::Contract(format!(
            "detections not sorted by frame: {} follows {}",
            dets[i + 1].frame,
            dets[i].frame
        ))),
        None => Ok(()),
    }
}

/// Keyboard box per frame; `None` before the first adopted detection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyboardTrack {
    pub boxes: Vec<Option<BoundingBox>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl KeyboardTrack {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.iter().all(Option::is_none)
    }

    pub fn get(&self, frame: usize) -> Option<BoundingBox> {
        self.boxes.get(frame).copied().flatten()
    }

    pub fn points(&self) -> Vec<TrackPoint> {
        self.boxes
            .iter()
            .enumerate()
            .filter_map(|(frame, b)| {
                b.map(|b| TrackPoint {
                    frame,
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                })
            })
            .collect()
    }

    /// Rebuilds a track of `frame_count` frames from stored points.
    pub fn from_points(points: &[TrackPoint], frame_count: usize) -> Result<Self> {
        let mut boxes = vec![None; frame_count];
        for p in points {
            let slot = boxes.get_mut(p.frame).ok_or_else(|| {
                Error::Record(format!(
                    "track frame {} beyond {frame_count} frames",
                    p.frame
                ))
            })?;
            *slot = Some(BoundingBox::new(p.x, p.y, p.w, p.h));
        }
        Ok(Self { boxes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write(path, &self.points())
    }

    pub fn load(path: impl AsRef<Path>, frame_count: usize) -> Result<Self> {
        Self::from_points(&crate::jsonl::read::<TrackPoint>(path)?, frame_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSchedule {
    /// Seconds between trusted detections.
    pub period_seconds: u32,
    pub kcf: KcfParams,
    /// Frames decoded per read.
    pub chunk: usize,
}

impl Default for TrackSchedule {
    fn default() -> Self {
        Self {
            period_seconds: 5,
            kcf: KcfParams::default(),
            chunk: 30,
        }
    }
}

/// Winner among keyboard detections: highest score, then larger area,
/// then earlier in the stream.
pub fn pick_keyboard<'a>(cands: impl IntoIterator<Item = &'a Detection>) -> Option<&'a Detection> {
    let mut best: Option<&Detection> = None;
    for d in cands {
        if d.class != ObjectClass::Keyboard {
            continue;
        }
        best = match best {
            None => Some(d),
            Some(b)
                if d.score > b.score
                    || (d.score == b.score && d.bbox().area() > b.bbox().area()) =>
            {
                Some(d)
            }
            keep => keep,
        };
    }
    best
}

/// Per-frame keyboard box over the whole source.
pub fn track_keyboard(
    detections: &[Detection],
    frames: &mut dyn FrameSource,
    schedule: &TrackSchedule,
) -> Result<KeyboardTrack> {
    check_sorted(detections)?;
    let n = frames.frame_count();
    let (width, height) = (frames.width(), frames.height());
    let period = (schedule.period_seconds as usize * frames.fps() as usize).max(1);
    let mut boxes = vec![None; n];

    // Adopted box per scheduled frame, clamped into the frame.
    let mut adopt = vec![None; n.div_ceil(period)];
    let mut i = 0;
    for (slot, t) in adopt.iter_mut().zip((0..n).step_by(period)) {
        while i < detections.len() && detections[i].frame < t {
            i += 1;
        }
        let start = i;
        while i < detections.len() && detections[i].frame == t {
            i += 1;
        }
        *slot = pick_keyboard(&detections[start..i]).and_then(|d| d.bbox().clamp_to(width, height));
    }
    let Some(first) = adopt.iter().position(Option::is_some) else {
        return Ok(KeyboardTrack { boxes });
    };

    let chunk = schedule.chunk.max(1);
    let mut stack = FrameStack::new(width, height, chunk);
    let mut tracker: Option<KcfTracker> = None;
    let mut t = first * period;
    while t < n {
        let count = chunk.min(n - t);
        if stack.frames != count {
            stack = FrameStack::new(width, height, count);
        }
        frames.read_into(t, count, &mut stack)?;
        for k in 0..count {
            let f = t + k;
            let gray = GrayImage::from_rgb(&stack, k);
            if f.is_multiple_of(period) {
                if let Some(b) = adopt[f / period] {
                    tracker = Some(KcfTracker::init(&gray, b, schedule.kcf.clone())?);
                    boxes[f] = Some(b);
                    continue;
                }
            }
            if let Some(tr) = tracker.as_mut() {
                boxes[f] = tr.update(&gray).clamp_to(width, height);
            }
        }
        t += count;
    }
    Ok(KeyboardTrack { boxes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, w: f64, score: f64) -> Detection {
        Detection {
            frame,
            class: ObjectClass::Keyboard,
            x: 0.0,
            y: 0.0,
            w,
            h: 10.0,
            score,
        }
    }

    #[test]
    fn tie_rule() {
        let d = [
            det(0, 10.0, 0.9),
            det(0, 20.0, 0.8),
            det(0, 12.0, 0.9),
            det(0, 12.0, 0.9),
        ];
        assert!(std::ptr::eq(pick_keyboard(&d).unwrap(), &d[2]));
        let d = [det(0, 10.0, 0.5), det(0, 10.0, 0.9)];
        assert!(std::ptr::eq(pick_keyboard(&d).unwrap(), &d[1]));
    }

    #[test]
    fn unsorted_rejected() {
        assert!(check_sorted(&[det(3, 1.0, 1.0), det(2, 1.0, 1.0)]).is_err());
    }
}
