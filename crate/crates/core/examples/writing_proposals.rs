//! Turns stable hand regions into person-attributed writing proposals.
//! Two seated persons own the left and right halves of the table.
//!
//!     cargo run --release --example writing_proposals

use dyadic_activity::projection::{project_session, ProjectionParams};
use dyadic_activity::proposals::{generate_writing_proposals, Keyframe, RegionInit};
use dyadic_activity::synth::hand_session;

fn main() -> dyadic_activity::error::Result<()> {
    let s = hand_session(5, 60, 858, 480, 3);
    let params = ProjectionParams::default();
    let windows = project_session(
        &s.detections,
        s.frame_count,
        s.fps,
        s.width,
        s.height,
        &params,
    )?;

    let half = s.width as f64 / 2.0;
    let init = |person: &str, x: f64| RegionInit {
        person: person.into(),
        keyframes: vec![Keyframe {
            frame: 0,
            x,
            y: 0.0,
            w: half,
            h: s.height as f64,
        }],
    };
    let inits = vec![init("Ana", 0.0), init("Ben", half)];
    let window_frames = params.window_seconds * s.fps as usize;
    let props = generate_writing_proposals(&windows, &inits, window_frames, s.frame_count)?;
    for p in &props {
        println!(
            "{:4}  frames {:4}..{:4}  ({:.0}, {:.0}) {:.0}x{:.0}",
            p.person,
            p.frame_start,
            p.frame_end(),
            p.x,
            p.y,
            p.w,
            p.h
        );
    }
    println!("{} proposals from {} windows", props.len(), windows.len());
    Ok(())
}
