//! Temporal voting over hand detections: sample one frame per second over
//! a window, count per-cell coverage, keep the consistently occupied
//! regions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::tracking::{check_sorted, Detection, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionParams {
    /// Sampled frames per window, one per second.
    pub window_seconds: usize,
    pub vote_threshold: u8,
    /// Pixels per occupancy cell side.
    pub cell: usize,
    /// Components below this fraction of the frame area are dropped.
    pub min_area_fraction: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            window_seconds: 12,
            vote_threshold: 6,
            cell: 8,
            min_area_fraction: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    pub frame_width: usize,
    pub frame_height: usize,
    pub cell: usize,
    /// Grid extents in cells.
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u8>,
}

impl OccupancyMap {
    pub fn new(frame_width: usize, frame_height: usize, cell: usize) -> Self {
        let cell = cell.max(1);
        let (width, height) = (frame_width.div_ceil(cell), frame_height.div_ceil(cell));
        Self {
            frame_width,
            frame_height,
            cell,
            width,
            height,
            counts: vec![0; width * height],
        }
    }

    pub fn count(&self, cx: usize, cy: usize) -> u8 {
        self.counts[cy * self.width + cx]
    }

    /// Pixel rectangle of cell `(cx, cy)`, cut at the frame edge.
    pub fn cell_box(&self, cx: usize, cy: usize) -> BoundingBox {
        let x0 = cx * self.cell;
        let y0 = cy * self.cell;
        let x1 = (x0 + self.cell).min(self.frame_width);
        let y1 = (y0 + self.cell).min(self.frame_height);
        BoundingBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
    }

    /// Inclusive cell range covered by a box, if it touches the frame.
    fn cell_range(&self, b: &BoundingBox) -> Option<[usize; 4]> {
        let [x0, y0, x1, y1] = b.pixel_span(self.frame_width, self.frame_height)?;
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some([
            x0 / self.cell,
            y0 / self.cell,
            (x1 - 1) / self.cell,
            (y1 - 1) / self.cell,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableRegion {
    pub window_start: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// Minimum count over the component's cells.
    pub support: u8,
}

impl StableRegion {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Frames sampled by the window starting at `window_start`.
pub fn sample_frames(
    window_start: usize,
    fps: u32,
    params: &ProjectionParams,
) -> impl Iterator<Item = usize> {
    (0..params.window_seconds).map(move |k| window_start + k * fps as usize)
}

/// Votes of the hand boxes on the sampled frames of one window. Each
/// sampled frame adds at most one per cell.
pub fn accumulate_window(
    detections: &[Detection],
    window_start: usize,
    fps: u32,
    frame_width: usize,
    frame_height: usize,
    params: &ProjectionParams,
) -> OccupancyMap {
    let mut map = OccupancyMap::new(frame_width, frame_height, params.cell);
    let mut mark = vec![false; map.counts.len()];
    for f in sample_frames(window_start, fps, params) {
        let lo = detections.partition_point(|d| d.frame < f);
        let hi = detections.partition_point(|d| d.frame <= f);
        mark.fill(false);
        for d in detections[lo..hi]
            .iter()
            .filter(|d| d.class == ObjectClass::Hand)
        {
            if let Some([cx0, cy0, cx1, cy1]) = map.cell_range(&d.bbox()) {
                for cy in cy0..=cy1 {
                    mark[cy * map.width + cx0..=cy * map.width + cx1].fill(true);
                }
            }
        }
        for (c, &m) in map.counts.iter_mut().zip(&mark) {
            *c += m as u8;
        }
    }
    map
}

/// 4-connected components of cells at or above the threshold, in scan
/// order of their first cell.
pub fn extract_stable_regions(
    map: &OccupancyMap,
    window_start: usize,
    params: &ProjectionParams,
) -> Vec<StableRegion> {
    let (w, h) = (map.width, map.height);
    let on = |i: usize| map.counts[i] >= params.vote_threshold;
    let min_area = params.min_area_fraction * (map.frame_width * map.frame_height) as f64;
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !on(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut support = u8::MAX;
        let mut area = 0.0;
        while let Some(i) = stack.pop() {
            let (cx, cy) = (i % w, i / w);
            x0 = x0.min(cx);
            y0 = y0.min(cy);
            x1 = x1.max(cx);
            y1 = y1.max(cy);
            support = support.min(map.counts[i]);
            area += map.cell_box(cx, cy).area();
            let mut visit = |j: usize| {
                if !seen[j] && on(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if cx > 0 {
                visit(i - 1);
            }
            if cx + 1 < w {
                visit(i + 1);
            }
            if cy > 0 {
                visit(i - w);
            }
            if cy + 1 < h {
                visit(i + w);
            }
        }
        if area < min_area {
            continue;
        }
        let a = map.cell_box(x0, y0);
        let b = map.cell_box(x1, y1);
        out.push(StableRegion {
            window_start,
            x: a.x,
            y: a.y,
            w: b.right() - a.x,
            h: b.bottom() - a.y,
            support,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRegions {
    pub window_start: usize,
    pub regions: Vec<StableRegion>,
}

/// Non-overlapping windows tiling `frame_count` frames, processed across
/// the available cores and returned in window order.
pub fn project_session(
    detections: &[Detection],
    frame_count: usize,
    fps: u32,
    frame_width: usize,
    frame_height: usize,
    params: &ProjectionParams,
) -> Result<Vec<WindowRegions>> {
    check_sorted(detections)?;
    let span = (params.window_seconds * fps as usize).max(1);
    let starts: Vec<usize> = (0..frame_count).step_by(span).collect();
    let one = |s: usize| WindowRegions {
        window_start: s,
        regions: extract_stable_regions(
            &accumulate_window(detections, s, fps, frame_width, frame_height, params),
            s,
            params,
        ),
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(starts.len().max(1));
    if workers <= 1 {
        return Ok(starts.into_iter().map(one).collect());
    }
    let per = starts.len().div_ceil(workers);
    let out = std::thread::scope(|s| {
        let handles: Vec<_> = starts
            .chunks(per)
            .map(|c| s.spawn(move || c.iter().map(|&st| one(st)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("projection worker"))
            .collect()
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionStats {
    pub raw: usize,
    pub retained: usize,
    pub reduction_percent: f64,
}

pub fn reduction_percent(raw: usize, retained: usize) -> f64 {
    if raw == 0 {
        return 0.0;
    }
    100.0 * (1.0 - retained as f64 / raw as f64)
}

/// Hand boxes whose center lies in a stable region of their own window.
pub fn reduction_stats(
    detections: &[Detection],
    windows: &[WindowRegions],
    fps: u32,
    params: &ProjectionParams,
) -> ReductionStats {
    let span = (params.window_seconds * fps as usize).max(1);
    let hands = detections.iter().filter(|d| d.class == ObjectClass::Hand);
    let (mut raw, mut retained) = (0, 0);
    for d in hands {
        raw += 1;
        let start = d.frame / span * span;
        let Ok(k) = windows.binary_search_by_key(&start, |w| w.window_start) else {
            continue;
        };
        let (cx, cy) = d.bbox().center();
        if windows[k]
            .regions
            .iter()
            .any(|r| r.bbox().contains_point(cx, cy))
        {
            retained += 1;
        }
    }
    ReductionStats {
        raw,
        retained,
        reduction_percent: reduction_percent(raw, retained),
    }
}

/// Hand detections that survive the filter.
pub fn filter_detections(
    detections: &[Detection],
    windows: &[WindowRegions],
    fps: u32,
    params: &ProjectionParams,
) -> Vec<Detection> {
    let span = (params.window_seconds * fps as usize).max(1);
    detections
        .iter()
        .filter(|d| d.class == ObjectClass::Hand)
        .filter(|d| {
            let start = d.frame / span * span;
            let (cx, cy) = d.bbox().center();
            windows
                .binary_search_by_key(&start, |w| w.window_start)
                .is_ok_and(|k| {
                    windows[k]
                        .regions
                        .iter()
                        .any(|r| r.bbox().contains_point(cx, cy))
                })
        })
        .cloned()
        .collect()
}

pub fn write_regions(path: impl AsRef<Path>, windows: &[WindowRegions]) -> Result<()> {
    let flat: Vec<StableRegion> = windows
        .iter()
        .flat_map(|w| w.regions.iter().copied())
        .collect();
    crate::jsonl::write(path, &flat)
}

/// Regroups a regions file by window. Windows without regions are absent.
pub fn read_regions(path: impl AsRef<Path>) -> Result<Vec<WindowRegions>> {
    let mut flat: Vec<StableRegion> = crate::jsonl::read(path)?;
    flat.sort_by_key(|r| r.window_start);
    let mut out: Vec<WindowRegions> = Vec::new();
    for r in flat {
        match out.last_mut() {
            Some(w) if w.window_start == r.window_start => w.regions.push(r),
            _ => out.push(WindowRegions {
                window_start: r.window_start,
                regions: vec![r],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand(frame: usize, x: f64, y: f64, w: f64, h: f64) -> Detection {
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

    #[test]
    fn full_and_single_presence() {
        let p = ProjectionParams::default();
        let mut d: Vec<_> = (0..12)
            .map(|k| hand(k * 30, 16.0, 16.0, 16.0, 16.0))
            .collect();
        d.push(hand(60, 64.0, 0.0, 8.0, 8.0));
        d.sort_by_key(|d| d.frame);
        let m = accumulate_window(&d, 0, 30, 96, 48, &p);
        assert_eq!(m.count(2, 2), 12);
        assert_eq!(m.count(3, 3), 12);
        assert_eq!(m.count(8, 0), 1);
        assert_eq!(m.count(0, 0), 0);
        let r = extract_stable_regions(&m, 0, &p);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].bbox(), BoundingBox::new(16.0, 16.0, 16.0, 16.0));
        assert_eq!(r[0].support, 12);
    }

    #[test]
    fn empty_map_has_no_regions() {
        let m = OccupancyMap::new(64, 64, 8);
        assert!(extract_stable_regions(&m, 0, &ProjectionParams::default()).is_empty());
    }

    #[test]
    fn published_reduction_fixture() {
        let r = reduction_percent(55_914, 9_804);
        assert_eq!(format!("{r:.1}"), "82.5");
    }
}
