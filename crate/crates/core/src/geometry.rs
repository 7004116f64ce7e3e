use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixels: top-left corner plus extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width) x [0, height)`; `None` if nothing remains.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width as f64);
        let y1 = self.bottom().min(height as f64);
        (x1 > x0 && y1 > y0).then(|| BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Integer pixel span `[x0, x1) x [y0, y1)` covered by the box after
    /// clamping to the frame, rounding outward.
    pub fn pixel_span(&self, width: usize, height: usize) -> Option<[usize; 4]> {
        let c = self.clamp_to(width, height)?;
        let x0 = c.x.floor() as usize;
        let y0 = c.y.floor() as usize;
        let x1 = (c.right().ceil() as usize).min(width);
        let y1 = (c.bottom().ceil() as usize).min(height);
        Some([x0, y0, x1, y1])
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BoundingBox::new(1.0, 1.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
        assert_eq!(iou(&a, &BoundingBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        // Touching edges share no area.
        assert_eq!(iou(&a, &BoundingBox::new(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn clamp_and_span() {
        let b = BoundingBox::new(-3.0, 5.5, 10.0, 100.0);
        assert_eq!(
            b.clamp_to(8, 20),
            Some(BoundingBox::new(0.0, 5.5, 7.0, 14.5))
        );
        assert_eq!(b.pixel_span(8, 20), Some([0, 5, 7, 20]));
        assert_eq!(BoundingBox::new(30.0, 0.0, 2.0, 2.0).clamp_to(8, 8), None);
    }
}
