//! Projects noisy hand detections onto occupancy maps and keeps only the
//! boxes that fall inside stable regions.
//!
//!     cargo run --release --example projection_filter -- [spurious per second]

use dyadic_activity::geometry::iou;
use dyadic_activity::projection::{project_session, reduction_stats, ProjectionParams};
use dyadic_activity::synth::hand_session;

fn main() -> dyadic_activity::error::Result<()> {
    let spurious = std::env::args()
        .nth(1)
        .map_or(4, |s| s.parse().expect("integer"));
    let s = hand_session(11, 120, 858, 480, spurious);
    let params = ProjectionParams::default();
    let windows = project_session(
        &s.detections,
        s.frame_count,
        s.fps,
        s.width,
        s.height,
        &params,
    )?;

    for w in &windows {
        let desc: Vec<String> = w
            .regions
            .iter()
            .map(|r| {
                let best = s
                    .stationary
                    .iter()
                    .map(|h| iou(h, &r.bbox()))
                    .fold(0.0, f64::max);
                format!("{}x{}@({},{}) iou {best:.2}", r.w, r.h, r.x, r.y)
            })
            .collect();
        println!("window {:5}: {}", w.window_start, desc.join("; "));
    }
    let stats = reduction_stats(&s.detections, &windows, s.fps, &params);
    println!(
        "hand detections {} -> {} ({:.1}% reduction)",
        stats.raw, stats.retained, stats.reduction_percent
    );
    Ok(())
}
