/// Binary cross-entropy on a raw logit. Returns `(loss, dloss/dlogit)`.
///
/// Uses `max(z, 0) - z*y + ln(1 + exp(-|z|))`, which never overflows.
pub fn bce_with_logits(logit: f32, label: u8) -> (f64, f32) {
    debug_assert!(label <= 1, "label must be 0 or 1");
    let z = logit as f64;
    let y = label as f64;
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    let grad = sigmoid(logit) - label as f32;
    (loss, grad)
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_point() {
        let (l, g) = bce_with_logits(0.0, 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, -0.5);
    }

    #[test]
    fn large_logits_stay_finite() {
        let (l, g) = bce_with_logits(50.0, 1);
        assert!(l >= 0.0 && l < 1e-20);
        assert_eq!(g, 0.0);
        let (l, g) = bce_with_logits(-80.0, 1);
        assert!((l - 80.0).abs() < 1e-9);
        assert_eq!(g, -1.0);
        let (l, _) = bce_with_logits(1e30, 0);
        assert!(l.is_finite());
    }
}
