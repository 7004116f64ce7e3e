//! Builds an activity map from hand-written instances: clustering with a
//! 3 s gap, simultaneous typing resolved in favor of the stronger typist.
//!
//!     cargo run --example activity_map -- [out.json]

use dyadic_activity::activity_map::{
    cluster_instances, filter_min_duration, resolve_simultaneous_typing, ActivityInstance,
    ActivityMapDoc, MapParameters, SessionInfo,
};
use dyadic_activity::dataset::ActivityKind;

fn inst(kind: ActivityKind, person: &str, t: f64, p: f64) -> ActivityInstance {
    ActivityInstance {
        kind,
        person: person.into(),
        t_start: t,
        t_end: t + 3.0,
        probability: p,
    }
}

fn main() -> dyadic_activity::error::Result<()> {
    let mut instances = Vec::new();
    for t in [0.0, 3.0, 6.0, 12.0] {
        instances.push(inst(ActivityKind::Typing, "Kid1", 30.0 + t, 0.9));
    }
    for t in [0.0, 3.0, 6.0, 9.0] {
        instances.push(inst(ActivityKind::Typing, "Kid2", 36.0 + t, 0.6));
    }
    for t in [0.0, 3.0, 9.0] {
        instances.push(inst(ActivityKind::Writing, "Kid3", 100.0 + t, 0.7));
    }

    let params = MapParameters::default();
    let clusters = cluster_instances(&instances, params.gap_seconds);
    let clusters = filter_min_duration(clusters, params.min_duration_seconds);
    let clusters = resolve_simultaneous_typing(clusters);
    let session = SessionInfo {
        id: "demo".into(),
        duration: 600.0,
        base_url: "https://video.example.org/demo".into(),
    };
    let doc = ActivityMapDoc::new(session, params, clusters);
    doc.validate()?;
    match std::env::args().nth(1) {
        Some(path) => doc.emit(&path)?,
        None => print!("{}", doc.to_canonical()),
    }
    Ok(())
}
