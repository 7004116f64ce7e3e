//! Trains A(D=4, fr=10) on the moving-texture set and prints each epoch.
//!
//!     cargo run --release --example train_synthetic -- [epochs] [train] [val]

use std::time::Instant;

use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::model::{ModelConfig, INPUT_SIDE};
use dyadic_activity::train::{train_model_with, Control, TrainConfig};

fn main() -> dyadic_activity::error::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer"))
        .collect();
    let epochs = args.first().copied().unwrap_or(50);
    let n_train = args.get(1).copied().unwrap_or(200);
    let n_val = args.get(2).copied().unwrap_or(50);

    let config = ModelConfig::new(4, 10)?;
    let train = MovingTexture::new(1, n_train, config.clip_frames(), INPUT_SIDE);
    let val = MovingTexture::new(2, n_val, config.clip_frames(), INPUT_SIDE);
    let tc = TrainConfig {
        min_epochs: epochs.min(50),
        max_epochs: epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = train_model_with(config, &train, &val, &tc, |s| {
        println!(
            "epoch {:3}  train {:.4}  val {:.4}  auc {:.3}  {:6.1}s",
            s.epoch,
            s.train_loss,
            s.val_loss,
            s.val_auc,
            t0.elapsed().as_secs_f64()
        );
        Control::Continue
    })?;
    println!("best epoch {} of {}", out.best_epoch, out.history.len());
    Ok(())
}
