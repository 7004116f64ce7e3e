//! Person-attributed 3-second proposals from keyboard tracks and stable
//! hand regions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{crop_letterbox_into, resample_indices, ActivityKind, WINDOW};
use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::geometry::{iou, BoundingBox};
use crate::projection::WindowRegions;
use crate::tensor::Tensor;
use crate::tracking::KeyboardTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Keyframe {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Keyframed table region of one student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInit {
    pub person: String,
    pub keyframes: Vec<Keyframe>,
}

impl RegionInit {
    pub fn validate(&self) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(Error::Record(format!(
                "region init `{}` has no keyframes",
                self.person
            )));
        }
        if let Some(p) = self.keyframes.windows(2).find(|p| p[1].frame <= p[0].frame) {
            return Err(Error::Record(format!(
                "region init `{}`: keyframe {} does not follow {}",
                self.person, p[1].frame, p[0].frame
            )));
        }
        if let Some(k) = self.keyframes.iter().find(|k| !k.bbox().is_valid()) {
            return Err(Error::Record(format!(
                "region init `{}`: degenerate box at frame {}",
                self.person, k.frame
            )));
        }
        Ok(())
    }
}

/// Componentwise linear interpolation between the surrounding keyframes,
/// clamped to the first and last keyframe outside their range.
pub fn interpolate_region(init: &RegionInit, frame: usize) -> Result<BoundingBox> {
    let kf = &init.keyframes;
    let (first, last) = match (kf.first(), kf.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Record(format!(
                "region init `{}` has no keyframes",
                init.person
            )))
        }
    };
    if frame <= first.frame {
        return Ok(first.bbox());
    }
    if frame >= last.frame {
        return Ok(last.bbox());
    }
    let i = kf.partition_point(|k| k.frame <= frame);
    let (a, b) = (&kf[i - 1], &kf[i]);
    if a.frame == frame {
        return Ok(a.bbox());
    }
    let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
    let l = |p: f64, q: f64| p + (q - p) * t;
    Ok(BoundingBox::new(
        l(a.x, b.x),
        l(a.y, b.y),
        l(a.w, b.w),
        l(a.h, b.h),
    ))
}

/// Student whose region at `frame` has the largest IoU with `evidence`;
/// ties go to the larger intersection, then the smaller pseudonym.
pub fn assign_person<'a>(
    evidence: &BoundingBox,
    inits: &'a [RegionInit],
    frame: usize,
) -> Result<Option<&'a str>> {
    let mut best: Option<(f64, f64, &str)> = None;
    for init in inits {
        let r = interpolate_region(init, frame)?;
        let score = iou(evidence, &r);
        if score <= 0.0 {
            continue;
        }
        let inter = evidence.intersection_area(&r);
        let better = match best {
            None => true,
            Some((s, a, p)) => {
                score > s || (score == s && (inter > a || (inter == a && init.person.as_str() < p)))
            }
        };
        if better {
            best = Some((score, inter, &init.person));
        }
    }
    Ok(best.map(|b| b.2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub kind: ActivityKind,
    pub person: String,
    /// First frame of the 90-frame window.
    pub frame_start: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Proposal {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    pub fn frame_end(&self) -> usize {
        self.frame_start + WINDOW
    }

    fn new(kind: ActivityKind, person: &str, frame_start: usize, b: BoundingBox) -> Self {
        Self {
            kind,
            person: person.to_string(),
            frame_start,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalParams {
    /// Fraction of a window's frames that must carry a keyboard box.
    pub min_presence: f64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self { min_presence: 0.8 }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Componentwise median box; `None` for an empty slice.
pub fn median_box(boxes: &[BoundingBox]) -> Option<BoundingBox> {
    if boxes.is_empty() {
        return None;
    }
    let col = |f: fn(&BoundingBox) -> f64| median(&mut boxes.iter().map(f).collect::<Vec<_>>());
    Some(BoundingBox::new(
        col(|b| b.x),
        col(|b| b.y),
        col(|b| b.w),
        col(|b| b.h),
    ))
}

/// One proposal per complete 90-frame window with enough keyboard
/// presence, attributed at the window midpoint.
pub fn generate_typing_proposals(
    track: &KeyboardTrack,
    inits: &[RegionInit],
    params: &ProposalParams,
) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for start in (0..track.len()).step_by(WINDOW) {
        if start + WINDOW > track.len() {
            break;
        }
        let present: Vec<BoundingBox> = track.boxes[start..start + WINDOW]
            .iter()
            .flatten()
            .copied()
            .collect();
        if (present.len() as f64) < params.min_presence * WINDOW as f64 {
            continue;
        }
        let b = median_box(&present).expect("non-empty window");
        if let Some(p) = assign_person(&b, inits, start + WINDOW / 2)? {
            out.push(Proposal::new(ActivityKind::Typing, p, start, b));
        }
    }
    Ok(out)
}

/// Four consecutive proposals per attributed stable region, covering its
/// 12-second window. Windows running past `frame_count` are cut to their
/// complete 3-second pieces.
pub fn generate_writing_proposals(
    windows: &[WindowRegions],
    inits: &[RegionInit],
    window_frames: usize,
    frame_count: usize,
) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for w in windows {
        for r in &w.regions {
            let b = r.bbox();
            let Some(p) = assign_person(&b, inits, w.window_start + window_frames / 2)? else {
                continue;
            };
            for k in 0..window_frames / WINDOW {
                let start = w.window_start + k * WINDOW;
                if start + WINDOW <= frame_count {
                    out.push(Proposal::new(ActivityKind::Writing, p, start, b));
                }
            }
        }
    }
    Ok(out)
}

/// Reads the proposal's window, crops its box (clamped to the frame),
/// letterboxes to `side` and keeps the `fr` resampled frames.
pub fn crop_clip(
    frames: &mut dyn FrameSource,
    proposal: &Proposal,
    fr: u32,
    side: usize,
) -> Result<Tensor> {
    let idx = resample_indices(fr)?;
    let mut out = Tensor::zeros(&[3, idx.len(), side, side]);
    crop_clip_into(frames, proposal, &idx, side, out.data_mut())?;
    Ok(out)
}

pub(crate) fn crop_clip_into(
    frames: &mut dyn FrameSource,
    proposal: &Proposal,
    idx: &[usize],
    side: usize,
    out: &mut [f32],
) -> Result<()> {
    let n = frames.frame_count();
    if proposal.frame_end() > n {
        return Err(Error::Data(format!(
            "proposal {} {} frames {}..{} beyond frame count {n}",
            proposal.kind,
            proposal.person,
            proposal.frame_start,
            proposal.frame_end()
        )));
    }
    let span = proposal
        .bbox()
        .pixel_span(frames.width(), frames.height())
        .filter(|s| s[2] > s[0] && s[3] > s[1])
        .ok_or_else(|| {
            Error::Data(format!(
                "proposal box {:?} outside the frame",
                proposal.bbox()
            ))
        })?;
    // Only the resampled frames are decoded.
    let mut stack = crate::frames::FrameStack::new(frames.width(), frames.height(), 1);
    let mut sel = crate::frames::FrameStack::new(frames.width(), frames.height(), idx.len());
    for (i, &k) in idx.iter().enumerate() {
        frames.read_into(proposal.frame_start + k, 1, &mut stack)?;
        sel.frame_mut(i).copy_from_slice(stack.frame(0));
    }
    let all: Vec<usize> = (0..idx.len()).collect();
    crop_letterbox_into(&sel, &all, span, side, out)
}

pub fn read_inits(path: impl AsRef<Path>) -> Result<Vec<RegionInit>> {
    let path = path.as_ref();
    let inits: Vec<RegionInit> = crate::jsonl::read(path)?;
    for (i, r) in inits.iter().enumerate() {
        r.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
    }
    Ok(inits)
}

pub fn write_inits(path: impl AsRef<Path>, inits: &[RegionInit]) -> Result<()> {
    crate::jsonl::write(path, inits)
}

pub fn read_proposals(path: impl AsRef<Path>) -> Result<Vec<Proposal>> {
    crate::jsonl::read(path)
}

pub fn write_proposals(path: impl AsRef<Path>, proposals: &[Proposal]) -> Result<()> {
    crate::jsonl::write(path, proposals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init(person: &str, kf: &[(usize, [f64; 4])]) -> RegionInit {
        RegionInit {
            person: person.into(),
            keyframes: kf
                .iter()
                .map(|&(frame, [x, y, w, h])| Keyframe { frame, x, y, w, h })
                .collect(),
        }
    }

    #[test]
    fn interpolation_midpoint_and_clamp() {
        let r = init(
            "a",
            &[(0, [0.0, 0.0, 10.0, 10.0]), (100, [10.0, 10.0, 10.0, 10.0])],
        );
        assert_eq!(
            interpolate_region(&r, 50).unwrap(),
            BoundingBox::new(5.0, 5.0, 10.0, 10.0)
        );
        assert_eq!(
            interpolate_region(&r, 100).unwrap(),
            BoundingBox::new(10.0, 10.0, 10.0, 10.0)
        );
        assert_eq!(
            interpolate_region(&r, 500).unwrap(),
            BoundingBox::new(10.0, 10.0, 10.0, 10.0)
        );
        assert!(interpolate_region(&init("b", &[]), 0).is_err());
        assert!(
            init("c", &[(5, [0.0, 0.0, 1.0, 1.0]), (5, [0.0, 0.0, 1.0, 1.0])])
                .validate()
                .is_err()
        );
    }

    #[test]
    fn assignment_ties() {
        let a = init("bo", &[(0, [0.0, 0.0, 10.0, 10.0])]);
        let b = init("al", &[(0, [10.0, 0.0, 10.0, 10.0])]);
        let inits = [a, b];
        // Straddles both regions equally.
        let e = BoundingBox::new(5.0, 0.0, 10.0, 10.0);
        assert_eq!(assign_person(&e, &inits, 0).unwrap(), Some("al"));
        let e = BoundingBox::new(1.0, 1.0, 2.0, 2.0);
        assert_eq!(assign_person(&e, &inits, 0).unwrap(), Some("bo"));
        let e = BoundingBox::new(50.0, 50.0, 2.0, 2.0);
        assert_eq!(assign_person(&e, &inits, 0).unwrap(), None);
    }

    #[test]
    fn typing_windows() {
        let inits = [init("p", &[(0, [0.0, 0.0, 100.0, 100.0])])];
        let b = Some(BoundingBox::new(10.0, 10.0, 30.0, 20.0));
        let mut boxes = vec![b; 270];
        boxes.extend(vec![None; 90]);
        boxes.extend(vec![b; 71]);
        boxes.extend(vec![None; 19]);
        let track = KeyboardTrack { boxes };
        let p = generate_typing_proposals(&track, &inits, &ProposalParams::default()).unwrap();
        assert_eq!(
            p.iter().map(|p| p.frame_start).collect::<Vec<_>>(),
            [0, 90, 180]
        );
        assert!(p.iter().all(|p| p.person == "p" && p.bbox() == b.unwrap()));
    }

    #[test]
    fn median_is_componentwise() {
        let m = median_box(&[
            BoundingBox::new(0.0, 5.0, 10.0, 1.0),
            BoundingBox::new(100.0, 6.0, 11.0, 2.0),
            BoundingBox::new(2.0, 7.0, 12.0, 3.0),
        ])
        .unwrap();
        assert_eq!(m, BoundingBox::new(2.0, 6.0, 11.0, 2.0));
    }
}
