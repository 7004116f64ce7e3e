mod common;

use common::trapezoid_auc;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dyadic_activity::metrics::{accuracy_at_threshold, evaluate_auc};
use dyadic_activity::model::ModelConfig;
use dyadic_activity::select::{select_optimal, GridEntry, SelectionReport};

#[test]
fn auc_equals_trapezoid_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for trial in 0..100 {
        let n = rng.gen_range(2..300);
        let levels = [4, 20, 1 << 20][trial % 3];
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f32> = labels
            .iter()
            .map(|&l| {
                ((rng.gen_range(0..levels) as f32 + l as f32 * levels as f32 * 0.3) / levels as f32)
                    .min(1.0)
            })
            .collect();
        let got = evaluate_auc(&scores, &labels).unwrap();
        let want = trapezoid_auc(&scores, &labels);
        assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn auc_ignores_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labels: Vec<u8> = (0..200).map(|i| (i % 3 == 0) as u8).collect();
    let scores: Vec<f32> = labels
        .iter()
        .map(|&l| rng.gen::<f32>() * 0.7 + l as f32 * 0.3)
        .collect();
    let squashed: Vec<f32> = scores.iter().map(|s| s * s * 0.5 + 0.1).collect();
    assert_eq!(
        evaluate_auc(&scores, &labels).unwrap(),
        evaluate_auc(&squashed, &labels).unwrap()
    );
}

#[test]
fn accuracy_is_a_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..100 {
        let n = rng.gen_range(1..100);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let scores: Vec<f32> = (0..n)
            .map(|_| [0.5, rng.gen()][rng.gen_range(0..2)])
            .collect();
        let right = scores
            .iter()
            .zip(&labels)
            .filter(|(s, l)| (**s >= 0.5) == (**l == 1))
            .count();
        assert_eq!(
            accuracy_at_threshold(&scores, &labels, 0.5).unwrap(),
            100.0 * right as f64 / n as f64
        );
    }
}

fn entry(c: ModelConfig, auc: f64) -> GridEntry {
    GridEntry {
        depth: c.depth,
        frame_rate: c.frame_rate,
        param_count: 0,
        val_auc: auc,
        test_accuracy: None,
        weights: None,
    }
}

#[test]
fn selection_equals_argmax_with_tie_break() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..1000 {
        let mut grid: Vec<GridEntry> = ModelConfig::grid()
            .into_iter()
            .map(|c| entry(c, rng.gen_range(0..6) as f64 / 5.0))
            .collect();
        let best = grid.iter().map(|e| e.val_auc).fold(f64::MIN, f64::max);
        let want = grid
            .iter()
            .filter(|e| e.val_auc == best)
            .map(|e| (e.frame_rate, e.depth))
            .min()
            .unwrap();
        grid.shuffle(&mut rng);
        let r: SelectionReport = select_optimal(&grid).unwrap();
        assert_eq!((r.chosen.frame_rate, r.chosen.depth), want);
        assert_eq!(r.chosen_val_auc, best);
        grid.shuffle(&mut rng);
        assert_eq!(select_optimal(&grid).unwrap(), r);
    }
}

#[test]
fn recorded_typing_grid_picks_four_dyads_at_ten_fps() {
    let auc = [
        [0.5, 0.74, 0.89, 0.95],
        [0.5, 0.5, 0.89, 0.93],
        [0.5, 0.5, 0.83, 0.95],
    ];
    let grid: Vec<GridEntry> = ModelConfig::grid()
        .into_iter()
        .map(|c| entry(c, auc[c.frame_rate as usize / 10 - 1][c.depth as usize - 1]))
        .collect();
    let r = select_optimal(&grid).unwrap();
    assert_eq!(r.chosen, ModelConfig::new(4, 10).unwrap());
    assert_eq!(r.chosen_val_auc, 0.95);
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path().join("sel.json")).unwrap();
    assert_eq!(
        SelectionReport::load(dir.path().join("sel.json")).unwrap(),
        r
    );
}

#[test]
fn out_of_range_auc_rejected() {
    let mut grid: Vec<GridEntry> = ModelConfig::grid()
        .into_iter()
        .map(|c| entry(c, 0.5))
        .collect();
    grid[3].val_auc = 1.2;
    assert!(select_optimal(&grid).is_err());
}
