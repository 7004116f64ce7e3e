//! Writes the two-minute synthetic typing session, runs the typing
//! pipeline on it and prints the timing report and clusters. Trains a
//! D=4/fr=10 model on moving textures first unless the weight file exists.
//!
//!     cargo run --release --example synthetic_session -- [weights] [dir]

use std::path::PathBuf;

use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::dataset::ActivityKind;
use dyadic_activity::model::{save_weights, ModelConfig, INPUT_SIDE};
use dyadic_activity::pipeline::{run_pipeline, FramesRef, SessionConfig};
use dyadic_activity::synth::{write_typing_session, TypingSessionSpec};
use dyadic_activity::train::{train_model_with, Control, TrainConfig};

fn main() -> dyadic_activity::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let weights = PathBuf::from(
        args.next()
            .unwrap_or_else(|| "synthetic-d4-fr10.dyad".into()),
    );
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-session".into()));

    if !weights.exists() {
        let config = ModelConfig::new(4, 10)?;
        let train = MovingTexture::new(1, 200, config.clip_frames(), INPUT_SIDE);
        let val = MovingTexture::new(2, 50, config.clip_frames(), INPUT_SIDE);
        let tc = TrainConfig {
            min_epochs: 50,
            max_epochs: 50,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train_model_with(config, &train, &val, &tc, |s| {
            println!(
                "epoch {}  val auc {:.3}  acc {:.1}%",
                s.epoch, s.val_auc, s.val_accuracy
            );
            // Ranking alone is not enough: the pipeline thresholds at 0.5.
            if s.val_auc >= 0.95 && s.val_accuracy >= 95.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        })?;
        save_weights(&out.model, &weights)?;
    }

    let session = write_typing_session(&dir, &TypingSessionSpec::two_minutes(11))?;
    let mut config = SessionConfig::new(
        "synthetic",
        FramesRef::Sidecar(session.sidecar.clone()),
        session.detections.clone(),
        session.regions.clone(),
        weights,
    );
    config.output_dir = Some(dir.join("out"));
    config.labels = Some(session.labels.clone());
    config.base_url = Some(session.spec.base_url.clone());
    let run = run_pipeline(&config, ActivityKind::Typing)?;
    print!("{}", run.timing.render());
    println!(
        "{} proposals -> {} clusters",
        run.proposals,
        run.doc.clusters.len()
    );
    for c in &run.doc.clusters {
        println!(
            "  {} {:>6.1}-{:>6.1}s  n={} p={:.3}  {}",
            c.person, c.t_start, c.t_end, c.n, c.p_mean, c.link
        );
    }
    if let Some(e) = &run.doc.evaluation {
        println!("tp {}  fp {}  fn {}", e.tp, e.fp, e.fn_);
    }
    println!("map: {}", run.map_path.display());
    Ok(())
}
