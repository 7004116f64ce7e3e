//! Selects the architecture from a recorded typing grid, or from a grid
//! trained here on small moving-texture clips.
//!
//!     cargo run --release --example select_grid -- [--train]

use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::model::ModelConfig;
use dyadic_activity::select::{select_optimal, train_grid, GridEntry, GridSets};
use dyadic_activity::train::TrainConfig;

const TYPING: [(u8, u32, usize, f64, f64); 12] = [
    (1, 10, 657_457, 0.5, 53.33),
    (2, 10, 47_305, 0.74, 61.25),
    (3, 10, 7_801, 0.89, 61.25),
    (4, 10, 18_777, 0.95, 69.59),
    (1, 20, 657_457, 0.5, 53.33),
    (2, 20, 47_305, 0.5, 53.33),
    (3, 20, 7_801, 0.89, 62.08),
    (4, 20, 18_777, 0.93, 65.83),
    (1, 30, 657_457, 0.5, 53.33),
    (2, 30, 47_305, 0.5, 53.33),
    (3, 30, 7_801, 0.83, 62.91),
    (4, 30, 18_777, 0.95, 67.91),
];

fn main() -> dyadic_activity::error::Result<()> {
    let entries = if std::env::args().any(|a| a == "--train") {
        let tc = TrainConfig {
            min_epochs: 3,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let sets = |fr| {
            let n = ModelConfig::new(1, fr)?.clip_frames();
            Ok(GridSets {
                train: Box::new(MovingTexture::new(1, 32, n, 112)),
                val: Box::new(MovingTexture::new(2, 16, n, 112)),
                test: Some(Box::new(MovingTexture::new(3, 16, n, 112))),
            })
        };
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        train_grid(&ModelConfig::grid(), sets, &tc, None, threads)?
    } else {
        TYPING
            .iter()
            .map(
                |&(depth, frame_rate, param_count, val_auc, acc)| GridEntry {
                    depth,
                    frame_rate,
                    param_count,
                    val_auc,
                    test_accuracy: Some(acc),
                    weights: None,
                },
            )
            .collect()
    };
    let report = select_optimal(&entries)?;
    print!("{}", report.render());
    println!(
        "chosen {} (val AUC {:.2})",
        report.chosen, report.chosen_val_auc
    );
    Ok(())
}
