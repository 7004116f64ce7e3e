//! Procedural moving-texture clips: positives drift across the frame at a
//! constant integer velocity, negatives hold still. Both classes share the
//! texture statistics and per-frame noise, so only motion separates them.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClipSet;

#[derive(Debug, Clone)]
pub struct MovingTexture {
    pub seed: u64,
    pub count: usize,
    pub frames: usize,
    pub side: usize,
    /// Peak amplitude of the per-pixel uniform noise.
    pub noise: f32,
}

impl MovingTexture {
    pub fn new(seed: u64, count: usize, frames: usize, side: usize) -> Self {
        Self {
            seed,
            count,
            frames,
            side,
            noise: 0.03,
        }
    }

    fn rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng
    }

    /// Velocity in pixels per frame; zero for negatives.
    pub fn velocity(&self, i: usize) -> (isize, isize) {
        if self.label(i) == 0 {
            return (0, 0);
        }
        let mut rng = self.rng(i);
        let dirs = [
            (0, 1),
            (1, 1),
            (1, 0),
            (1, -1),
            (0, -1),
            (-1, -1),
            (-1, 0),
            (-1, 1),
        ];
        let (dy, dx) = dirs[rng.gen_range(0..dirs.len())];
        let speed = rng.gen_range(2..=4);
        (dy * speed, dx * speed)
    }
}

/// Periodic smooth texture: a coarse random grid bilinearly upsampled with
/// wraparound, per channel.
fn texture(rng: &mut ChaCha8Rng, side: usize) -> Vec<f32> {
    let grid = rng.gen_range(28..=56usize);
    let contrast: f32 = rng.gen_range(0.5..1.0);
    let base: f32 = rng.gen_range(0.2..0.8);
    let mut out = vec![0.0f32; 3 * side * side];
    for c in 0..3 {
        let g: Vec<f32> = (0..grid * grid).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cell = side as f32 / grid as f32;
        for y in 0..side {
            let gy = y as f32 / cell;
            let (y0, fy) = (gy.floor() as usize % grid, gy.fract());
            let y1 = (y0 + 1) % grid;
            for x in 0..side {
                let gx = x as f32 / cell;
                let (x0, fx) = (gx.floor() as usize % grid, gx.fract());
                let x1 = (x0 + 1) % grid;
                let a = g[y0 * grid + x0] * (1.0 - fx) + g[y0 * grid + x1] * fx;
                let b = g[y1 * grid + x0] * (1.0 - fx) + g[y1 * grid + x1] * fx;
                out[(c * side + y) * side + x] = base + contrast * (a * (1.0 - fy) + b * fy);
            }
        }
    }
    out
}

impl ClipSet for MovingTexture {
    fn len(&self) -> usize {
        self.count
    }

    fn clip_shape(&self) -> [usize; 4] {
        [3, self.frames, self.side, self.side]
    }

    fn label(&self, i: usize) -> u8 {
        (i % 2) as u8
    }

    fn write_clip(&self, i: usize, out: &mut [f32]) {
        let (dy, dx) = self.velocity(i);
        let mut rng = self.rng(i);
        // Skip the draws `velocity` consumed so texture and noise streams
        // stay independent of the label.
        rng.set_word_pos(1 << 20);
        let s = self.side;
        let tex = texture(&mut rng, s);
        let n = s as isize;
        // Noise needs volume, not cryptographic quality: a fast generator
        // seeded from the clip stream, four 16-bit draws per word.
        let mut noise_rng = SmallRng::from_rng(&mut rng).expect("seeding from an infallible rng");
        let mut words = vec![0u64; s.div_ceil(4)];
        let padded = 4 * words.len();
        let scale = 2.0 * self.noise / 65536.0;
        let mut noise = vec![0.0f32; padded];
        for c in 0..3 {
            for t in 0..self.frames {
                let oy = (dy * t as isize).rem_euclid(n) as usize;
                let ox = (dx * t as isize).rem_euclid(n) as usize;
                let dst = &mut out[(c * self.frames + t) * s * s..][..s * s];
                for y in 0..s {
                    let src = &tex[(c * s + (y + oy) % s) * s..][..s];
                    noise_rng.fill(&mut words[..]);
                    for (ns, &wd) in noise.chunks_exact_mut(4).zip(&words) {
                        ns[0] = (wd as u16) as f32 * scale - self.noise;
                        ns[1] = ((wd >> 16) as u16) as f32 * scale - self.noise;
                        ns[2] = ((wd >> 32) as u16) as f32 * scale - self.noise;
                        ns[3] = ((wd >> 48) as u16) as f32 * scale - self.noise;
                    }
                    // The shifted row is `src` rotated left by `ox`.
                    let row = &mut dst[y * s..(y + 1) * s];
                    let (head, tail) = row.split_at_mut(s - ox);
                    let (nh, nt) = noise.split_at(s - ox);
                    for ((v, &p), &e) in head.iter_mut().zip(&src[ox..]).zip(nh) {
                        *v = (p + e).clamp(0.0, 1.0);
                    }
                    for ((v, &p), &e) in tail.iter_mut().zip(&src[..ox]).zip(nt) {
                        *v = (p + e).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
}
