mod common;

use common::symbolic_count;
use dyadic_activity::model::{
    d_fr, load_weights, load_weights_for, save_weights, Model, ModelConfig, TrainWorkspace,
};
use dyadic_activity::nn::{sigmoid, Layer, Mode};
use dyadic_activity::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn parameter_count_table() {
    let expected = [657_457, 47_305, 7_801, 18_777];
    for fr in [10, 20, 30] {
        for d in 1..=4u8 {
            let m = Model::build(ModelConfig::new(d, fr).unwrap(), 0);
            assert_eq!(m.count_params(), expected[d as usize - 1], "D={d} fr={fr}");
            assert_eq!(m.count_params(), symbolic_count(d, fr));
        }
    }
}

#[test]
fn flatten_lengths() {
    let expected = [657_120, 46_080, 3_072, 128];
    for fr in [10, 20, 30] {
        for d in 1..=4u8 {
            let m = Model::build(ModelConfig::new(d, fr).unwrap(), 0);
            assert_eq!(m.flatten_len(), expected[d as usize - 1]);
        }
    }
    let m = Model::build(ModelConfig::new(1, 30).unwrap(), 0);
    assert_eq!(m.flatten_len(), 4 * 74 * 74 * 30);
}

#[test]
fn shape_trajectory_depth4() {
    for fr in [10, 20, 30] {
        let m = Model::build(ModelConfig::new(4, fr).unwrap(), 0);
        let pooled: Vec<Vec<usize>> = m
            .layers()
            .iter()
            .zip(m.layer_shapes(1))
            .filter(|(l, _)| matches!(l, Layer::MaxPool3d(_)))
            .map(|(_, s)| s)
            .collect();
        let spatial: Vec<usize> = pooled.iter().map(|s| s[3]).collect();
        let temporal: Vec<usize> = pooled.iter().map(|s| s[2]).collect();
        assert_eq!(spatial, [74, 24, 8, 2]);
        assert_eq!(temporal, [30, 10, 3, 1]);
        assert_eq!(3 * fr as usize / d_fr(fr).unwrap(), 30);
    }
}

#[test]
fn zero_input_gives_sigmoid_of_bias() {
    let mut m = Model::build(ModelConfig::new(4, 10).unwrap(), 9);
    m.set_mode(Mode::Eval);
    let bias = match m.layers().last().unwrap() {
        Layer::Dense(d) => d.bias[0],
        _ => unreachable!(),
    };
    let p = m.predict(&Tensor::zeros(&m.input_shape(2))).unwrap();
    assert_eq!(p, vec![sigmoid(bias); 2]);
}

#[test]
fn predict_requires_eval_mode() {
    let m = Model::build(ModelConfig::new(4, 10).unwrap(), 0);
    assert!(m.predict(&Tensor::zeros(&m.input_shape(1))).is_err());
}

#[test]
fn predict_rejects_wrong_temporal_length() {
    let mut m = Model::build(ModelConfig::new(4, 10).unwrap(), 0);
    m.set_mode(Mode::Eval);
    let err = m
        .predict(&Tensor::zeros(&[1, 3, 60, 224, 224]))
        .unwrap_err();
    assert!(err.to_string().contains("axis T"), "{err}");
}

fn random_batch(rng: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(&shape, (0..n).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

#[test]
fn batch_matches_single_and_identical_clips_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = Model::build(ModelConfig::new(4, 10).unwrap(), 7);
    m.set_mode(Mode::Eval);
    let batch = random_batch(&mut rng, m.input_shape(3));
    let together = m.predict(&batch).unwrap();
    let per = batch.len() / 3;
    for i in 0..3 {
        let one = Tensor::from_vec(
            &m.input_shape(1),
            batch.data()[i * per..(i + 1) * per].to_vec(),
        )
        .unwrap();
        let p = m.predict(&one).unwrap()[0];
        assert!((p - together[i]).abs() < 1e-5);
    }
    let item = batch.item(0).to_vec();
    let same = Tensor::stack(&[&item, &item], &m.input_shape(1)[1..]).unwrap();
    let ps = m.predict(&same).unwrap();
    assert_eq!(ps[0], ps[1]);
}

#[test]
fn weights_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dyad");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = Model::build(ModelConfig::new(4, 10).unwrap(), 11);
    // Touch running statistics so they are part of what must survive.
    m.set_mode(Mode::Train);
    let mut ws = TrainWorkspace::default();
    let mut g = Vec::new();
    m.loss_and_grad(
        &random_batch(&mut rng, m.input_shape(2)),
        &[0, 1],
        &mut ws,
        &mut g,
    )
    .unwrap();
    m.set_mode(Mode::Eval);
    save_weights(&m, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, m);
    let batch = random_batch(&mut rng, m.input_shape(2));
    assert_eq!(back.predict(&batch).unwrap(), m.predict(&batch).unwrap());
}

#[test]
fn truncated_and_mismatched_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dyad");
    let m = Model::build(ModelConfig::new(4, 10).unwrap(), 1);
    save_weights(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let err = load_weights_for(&path, &ModelConfig::new(3, 10).unwrap()).unwrap_err();
    assert!(err.to_string().contains("config"), "{err}");

    let short = dir.path().join("short.dyad");
    std::fs::write(&short, &bytes[..bytes.len() - 7]).unwrap();
    assert!(load_weights(&short).is_err());
    std::fs::write(&short, &bytes[..20]).unwrap();
    let err = load_weights(&short).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&short, &bad).unwrap();
    assert!(load_weights(&short)
        .unwrap_err()
        .to_string()
        .contains("magic"));
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = Model::build_with_side(ModelConfig::new(2, 10).unwrap(), 27, 2).unwrap();
    m.set_mode(Mode::Eval);
    let batch = random_batch(&mut rng, m.input_shape(2));
    let labels = [1u8, 0];
    let mut ws = TrainWorkspace::default();
    let mut grads = Vec::new();
    m.loss_and_grad(&batch, &labels, &mut ws, &mut grads)
        .unwrap();
    let base = m.params_flat();
    let loss_at = |p: &[f32]| {
        let mut c = m.clone();
        c.set_params_flat(p).unwrap();
        let mut ws = TrainWorkspace::default();
        c.loss_and_grad(&batch, &labels, &mut ws, &mut Vec::new())
            .unwrap()
    };
    // Composition has many ReLU and pool kinks, so a small step is needed
    // for the difference quotient to converge.
    let h = 1e-4f32;
    let mut checked = 0;
    for _ in 0..40 {
        let k = rng.gen_range(0..base.len());
        let mut p = base.clone();
        p[k] += h;
        let up = loss_at(&p);
        p[k] -= 2.0 * h;
        let down = loss_at(&p);
        let num = (up - down) / (2.0 * h as f64);
        let ana = grads[k] as f64;
        if num.abs() < 1e-4 && ana.abs() < 1e-4 {
            continue;
        }
        checked += 1;
        // f32 forward passes put the quotient's noise floor near 5e-4.
        let tol = 1e-2 * ana.abs().max(num.abs()) + 1e-3;
        assert!(
            (ana - num).abs() < tol,
            "param {k}: analytic {ana} numeric {num}"
        );
    }
    assert!(checked >= 5);
}
