//! Tracks the keyboard through a synthetic two-minute session from
//! detections every five seconds and reports IoU against the known box.
//!
//!     cargo run --release --example kcf_track -- [seed]

use std::time::Instant;

use dyadic_activity::frames::{FrameDescriptor, RawVideo};
use dyadic_activity::geometry::iou;
use dyadic_activity::synth::{write_typing_session, TypingSessionSpec};
use dyadic_activity::tracking::{read_detections, track_keyboard, TrackSchedule};

fn main() -> dyadic_activity::error::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map_or(3, |s| s.parse().expect("integer seed"));
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = TypingSessionSpec::two_minutes(seed);
    let session = write_typing_session(dir.path(), &spec)?;
    let mut video = RawVideo::open(&FrameDescriptor::load(&session.sidecar)?)?;

    let t0 = Instant::now();
    let track = track_keyboard(
        &read_detections(&session.detections)?,
        &mut video,
        &TrackSchedule::default(),
    )?;
    let secs = t0.elapsed().as_secs_f64();

    let ious: Vec<f64> = (0..track.len())
        .filter_map(|f| track.get(f).map(|b| iou(&b, &spec.keyboard_at(f))))
        .collect();
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let worst = ious.iter().cloned().fold(1.0, f64::min);
    println!("{} frames tracked in {secs:.2}s", ious.len());
    println!("mean IoU {mean:.3}, worst {worst:.3}");
    for s in (0..spec.frame_count()).step_by(450) {
        let b = track.get(s).expect("tracked");
        println!(
            "  t={:5.1}s  box ({:.1}, {:.1}) {}x{}",
            s as f64 / 30.0,
            b.x,
            b.y,
            b.w,
            b.h
        );
    }
    Ok(())
}
