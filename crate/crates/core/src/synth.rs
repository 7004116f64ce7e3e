//! Synthetic sessions with known ground truth: a tabletop with a keyboard
//! whose surface drifts while someone types, and noisy hand-detection
//! streams.

use std::path::{Path, PathBuf};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Activity, ActivityLabelRecord};
use crate::error::Result;
use crate::frames::{FrameDescriptor, RawVideoWriter};
use crate::geometry::BoundingBox;
use crate::proposals::{Keyframe, RegionInit};
use crate::tracking::{Detection, ObjectClass};

/// Periodic bilinear texture over a random grid, one grid per channel.
#[derive(Debug, Clone)]
pub struct Texture {
    grid: usize,
    cell: f32,
    base: f32,
    contrast: f32,
    values: Vec<f32>,
}

impl Texture {
    pub fn random(rng: &mut impl Rng, grid: usize, cell: f32, base: f32, contrast: f32) -> Self {
        let values = (0..3 * grid * grid)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        Self {
            grid,
            cell,
            base,
            contrast,
            values,
        }
    }

    pub fn sample(&self, c: usize, x: f32, y: f32) -> f32 {
        let g = self.grid;
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
        let x0 = (gx.floor() as i64).rem_euclid(g as i64) as usize;
        let y0 = (gy.floor() as i64).rem_euclid(g as i64) as usize;
        let (x1, y1) = ((x0 + 1) % g, (y0 + 1) % g);
        let v = &self.values[c * g * g..];
        let a = v[y0 * g + x0] * (1.0 - fx) + v[y0 * g + x1] * fx;
        let b = v[y1 * g + x0] * (1.0 - fx) + v[y1 * g + x1] * fx;
        self.base + self.contrast * (a * (1.0 - fy) + b * fy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypingEpisode {
    pub person: String,
    /// Seconds, half-open.
    pub t0: f64,
    pub t1: f64,
}

/// Two students side by side; the keyboard sits with `A` for the first
/// half of the session and with `B` for the second.
#[derive(Debug, Clone)]
pub struct TypingSessionSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub seconds: usize,
    pub fps: u32,
    pub keyboard_side: f64,
    /// Surface drift while typing, pixels per source frame.
    pub drift: f32,
    pub noise: f32,
    pub episodes: Vec<TypingEpisode>,
    pub base_url: String,
}

impl TypingSessionSpec {
    /// Two-minute session with three typing episodes.
    pub fn two_minutes(seed: u64) -> Self {
        let ep = |p: &str, t0: f64, t1: f64| TypingEpisode {
            person: p.into(),
            t0,
            t1,
        };
        Self {
            seed,
            width: 192,
            height: 112,
            seconds: 120,
            fps: 30,
            keyboard_side: 64.0,
            drift: 0.29,
            noise: 0.03,
            episodes: vec![ep("A", 6.0, 24.0), ep("A", 36.0, 51.0), ep("B", 69.0, 99.0)],
            base_url: "https://video.example.org/synthetic".into(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.seconds * self.fps as usize
    }

    pub fn regions(&self) -> Vec<(String, BoundingBox)> {
        let half = self.width as f64 / 2.0;
        let h = self.height as f64;
        vec![
            ("A".into(), BoundingBox::new(0.0, 0.0, half, h)),
            ("B".into(), BoundingBox::new(half, 0.0, half, h)),
        ]
    }

    pub fn keyboard_at(&self, frame: usize) -> BoundingBox {
        let s = self.keyboard_side;
        let quarter = self.width as f64 / 4.0;
        let cx = if frame < self.frame_count() / 2 {
            quarter
        } else {
            3.0 * quarter
        };
        BoundingBox::new(
            (cx - s / 2.0).round(),
            ((self.height as f64 - s) / 2.0).round(),
            s,
            s,
        )
    }

    pub fn typing_at(&self, frame: usize) -> Option<&TypingEpisode> {
        let t = frame as f64 / self.fps as f64;
        self.episodes.iter().find(|e| e.t0 <= t && t < e.t1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub dir: PathBuf,
    pub sidecar: PathBuf,
    pub descriptor: FrameDescriptor,
    pub detections: PathBuf,
    pub regions: PathBuf,
    pub labels: PathBuf,
    pub spec: TypingSessionSpec,
}

/// Writes frames, sidecar, detections, region inits and labels into `dir`.
pub fn write_typing_session(
    dir: impl AsRef<Path>,
    spec: &TypingSessionSpec,
) -> Result<SyntheticSession> {
    let dir = dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(&dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let table = Texture::random(&mut rng, 16, 12.0, 0.35, 0.3);
    // Cell size chosen so the surface matches the training textures once
    // a keyboard crop is letterboxed to the model input.
    let keys = Texture::random(&mut rng, 32, 2.0, 0.5, 0.8);
    let dirs = [
        (0.0, 1.0),
        (1.0, 1.0),
        (1.0, 0.0),
        (1.0, -1.0),
        (0.0, -1.0),
        (-1.0, -1.0),
        (-1.0, 0.0),
        (-1.0, 1.0),
    ];
    let heading: Vec<(f32, f32)> = spec
        .episodes
        .iter()
        .map(|_| {
            let (dy, dx): (f32, f32) = dirs[rng.gen_range(0..dirs.len())];
            let n = (dx * dx + dy * dy).sqrt();
            (dy / n, dx / n)
        })
        .collect();

    let mut background = vec![0.0f32; 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                background[(c * h + y) * w + x] = table.sample(c, x as f32, y as f32);
            }
        }
    }

    let sidecar = dir.join("frames.toml");
    let mut writer = RawVideoWriter::create(dir.join("frames.rgb"), w, h, spec.fps)?;
    let mut frame = vec![0u8; w * h * 3];
    let mut noise = SmallRng::from_rng(&mut rng).expect("seeding from an infallible rng");
    for t in 0..spec.frame_count() {
        let kb = spec.keyboard_at(t);
        let ep = spec
            .typing_at(t)
            .map(|e| spec.episodes.iter().position(|x| x == e).unwrap());
        let (oy, ox) = match ep {
            Some(i) => (
                heading[i].0 * spec.drift * t as f32,
                heading[i].1 * spec.drift * t as f32,
            ),
            None => (0.0, 0.0),
        };
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                for c in 0..3 {
                    let v = if kb.contains_point(px, py) {
                        keys.sample(
                            c,
                            (x as f64 - kb.x) as f32 + ox,
                            (y as f64 - kb.y) as f32 + oy,
                        )
                    } else {
                        background[(c * h + y) * w + x]
                    };
                    let v = v + noise.gen_range(-spec.noise..=spec.noise);
                    frame[(y * w + x) * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        writer.push(&frame)?;
    }
    let descriptor = writer.finish(&sidecar)?;

    // Keyboard detector output every five seconds, plus a weaker
    // distractor; hand detections once per second while typing.
    let mut dets = Vec::new();
    let period = 5 * spec.fps as usize;
    let fps = spec.fps as usize;
    for t in (0..spec.frame_count()).step_by(fps) {
        if t % period == 0 {
            let kb = spec.keyboard_at(t);
            let j = |r: &mut ChaCha8Rng| r.gen_range(-1.0..=1.0f64).round();
            dets.push(det(
                t,
                ObjectClass::Keyboard,
                BoundingBox::new(kb.x + j(&mut rng), kb.y + j(&mut rng), kb.w, kb.h),
                0.9,
            ));
            if t % (2 * period) == 0 {
                dets.push(det(
                    t,
                    ObjectClass::Keyboard,
                    BoundingBox::new(4.0, 4.0, 20.0, 12.0),
                    0.3,
                ));
            }
        }
        if spec.typing_at(t).is_some() {
            let kb = spec.keyboard_at(t);
            for side in [0.0, 1.0] {
                let b = BoundingBox::new(
                    kb.x + 4.0 + side * (kb.w - 28.0),
                    kb.bottom() - 20.0,
                    20.0,
                    16.0,
                );
                dets.push(det(t, ObjectClass::Hand, b, 0.8));
            }
        }
    }
    let detections = dir.join("detections.jsonl");
    crate::tracking::write_detections(&detections, &dets)?;

    let last = spec.frame_count().saturating_sub(1);
    let inits: Vec<RegionInit> = spec
        .regions()
        .into_iter()
        .map(|(person, b)| RegionInit {
            person,
            keyframes: [0, last]
                .iter()
                .map(|&frame| Keyframe {
                    frame,
                    x: b.x,
                    y: b.y,
                    w: b.w,
                    h: b.h,
                })
                .collect(),
        })
        .collect();
    let regions = dir.join("regions.jsonl");
    crate::proposals::write_inits(&regions, &inits)?;

    let records: Vec<ActivityLabelRecord> = spec
        .episodes
        .iter()
        .map(|e| {
            let f0 = (e.t0 * spec.fps as f64) as usize;
            let kb = spec.keyboard_at(f0);
            ActivityLabelRecord {
                session_id: "synthetic".into(),
                activity: Activity::Typing,
                person: e.person.clone(),
                f0,
                f1: (e.t1 * spec.fps as f64) as usize,
                x: kb.x,
                y: kb.y,
                w: kb.w,
                h: kb.h,
                excluded: false,
            }
        })
        .collect();
    let labels = dir.join("labels.jsonl");
    crate::dataset::write_records(&labels, &records)?;

    Ok(SyntheticSession {
        dir,
        sidecar,
        descriptor,
        detections,
        regions,
        labels,
        spec: spec.clone(),
    })
}

fn det(frame: usize, class: ObjectClass, b: BoundingBox, score: f64) -> Detection {
    Detection {
        frame,
        class,
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
        score,
    }
}

#[derive(Debug, Clone)]
pub struct HandSession {
    pub detections: Vec<Detection>,
    /// The resting hands, one box each.
    pub stationary: Vec<BoundingBox>,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub fps: u32,
}

/// Hand detections sampled once per second: two resting hands with one
/// pixel of jitter plus `spurious` uniformly placed boxes per sample.
pub fn hand_session(
    seed: u64,
    seconds: usize,
    width: usize,
    height: usize,
    spurious: usize,
) -> HandSession {
    let fps = 30u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stationary = vec![
        BoundingBox::new(width as f64 * 0.2, height as f64 * 0.6, 48.0, 40.0),
        BoundingBox::new(width as f64 * 0.65, height as f64 * 0.55, 44.0, 44.0),
    ];
    let mut detections = Vec::new();
    for s in 0..seconds {
        let frame = s * fps as usize;
        for b in &stationary {
            let jx = rng.gen_range(-1.0..=1.0);
            let jy = rng.gen_range(-1.0..=1.0);
            detections.push(det(
                frame,
                ObjectClass::Hand,
                BoundingBox::new(b.x + jx, b.y + jy, b.w, b.h),
                rng.gen_range(0.6..1.0),
            ));
        }
        for _ in 0..spurious {
            let bw = rng.gen_range(16.0..48.0);
            let bh = rng.gen_range(16.0..48.0);
            let x = rng.gen_range(0.0..width as f64 - bw);
            let y = rng.gen_range(0.0..height as f64 - bh);
            detections.push(det(
                frame,
                ObjectClass::Hand,
                BoundingBox::new(x, y, bw, bh),
                rng.gen_range(0.3..1.0),
            ));
        }
    }
    HandSession {
        detections,
        stationary,
        frame_count: seconds * fps as usize,
        width,
        height,
        fps,
    }
}
