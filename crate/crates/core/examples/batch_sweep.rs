//! Measures inference throughput of A(D=4, fr=10) over batch sizes.
//!
//!     cargo run --release --example batch_sweep -- [clips] [reps]

use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::inference::{memory_estimate, sweep_batch_sizes, SWEEP_SIZES};
use dyadic_activity::model::{Model, ModelConfig};
use dyadic_activity::nn::Mode;

fn main() -> dyadic_activity::error::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer"))
        .collect();
    let clips = args.first().copied().unwrap_or(33);
    let reps = args.get(1).copied().unwrap_or(3);

    let config = ModelConfig::new(4, 10)?;
    let mut model = Model::build(config, 0);
    model.set_mode(Mode::Eval);
    let set = MovingTexture::new(5, clips, config.clip_frames(), model.side());
    let result = sweep_batch_sizes(&model, &set, &SWEEP_SIZES, reps)?;
    print!("{}", result.render());
    println!("chosen batch size {}", result.chosen);
    for b in SWEEP_SIZES {
        println!(
            "  estimate at {b:2}: {:.1} MB",
            memory_estimate(&model, b) as f64 / 1e6
        );
    }
    Ok(())
}
