use std::sync::atomic::{AtomicUsize, Ordering};

use dyadic_activity::dataset::synthetic::MovingTexture;
use dyadic_activity::dataset::ClipSet;
use dyadic_activity::error::Error;
use dyadic_activity::inference::{
    choose_batch_size, classifications, infer_batched, infer_stream, memory_estimate,
    read_classifications, write_classifications, ThroughputReport, SWEEP_SIZES,
};
use dyadic_activity::model::{Model, ModelConfig};
use dyadic_activity::nn::Mode;
use dyadic_activity::tensor::Tensor;

fn eval_model(depth: u8, fr: u32, side: usize) -> Model {
    let mut m = Model::build_with_side(ModelConfig::new(depth, fr).unwrap(), side, 9).unwrap();
    m.set_mode(Mode::Eval);
    m
}

fn single(model: &Model, set: &dyn ClipSet, i: usize) -> f32 {
    let s = set.clip_shape();
    let mut t = Tensor::zeros(&[1, s[0], s[1], s[2], s[3]]);
    set.write_clip(i, t.data_mut());
    model.predict(&t).unwrap()[0]
}

#[test]
fn every_batch_size_matches_single_clips() {
    let m = eval_model(4, 10, 112);
    let set = MovingTexture::new(3, 33, 30, 112);
    let want: Vec<f32> = (0..33).map(|i| single(&m, &set, i)).collect();
    for b in [1, 2, 3, 4, 5, 8, 16, 31, 32, 33] {
        let got = infer_batched(&m, &set, b).unwrap();
        assert_eq!(got.len(), 33, "batch {b}");
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() <= 1e-5, "batch {b} clip {i}: {g} vs {w}");
        }
    }
}

#[test]
fn frame_rate_mismatch_names_the_model_rate() {
    let m = eval_model(2, 10, 64);
    let set = MovingTexture::new(1, 4, 60, 64);
    let err = infer_batched(&m, &set, 2).unwrap_err().to_string();
    assert!(err.contains("model frame rate 10"), "{err}");
    assert!(err.contains("expected 30, got 60"), "{err}");
}

#[test]
fn train_mode_and_zero_batch_rejected() {
    let mut m = eval_model(1, 10, 32);
    let set = MovingTexture::new(1, 2, 30, 32);
    assert!(matches!(infer_batched(&m, &set, 0), Err(Error::Config(_))));
    m.set_mode(Mode::Train);
    assert!(matches!(
        infer_batched(&m, &set, 1),
        Err(Error::Contract(_))
    ));
}

#[test]
fn loader_failure_stops_the_stream() {
    let m = eval_model(1, 10, 32);
    let calls = AtomicUsize::new(0);
    let r = infer_stream(&m, 100, 4, |first, _, _| {
        calls.fetch_add(1, Ordering::SeqCst);
        if first == 8 {
            return Err(Error::Data("broken clip".into()));
        }
        Ok(())
    });
    assert!(r.unwrap_err().to_string().contains("broken clip"));
    assert_eq!(calls.load(Ordering::SeqCst), 3);
}

#[test]
fn memory_estimate_is_affine_in_batch() {
    let m = eval_model(4, 10, 224);
    assert_eq!(m.count_params(), 18_777);
    let e: Vec<u64> = SWEEP_SIZES
        .iter()
        .map(|&b| memory_estimate(&m, b))
        .collect();
    let slope = e[1] - e[0];
    for (&b, &v) in SWEEP_SIZES.iter().zip(&e) {
        assert_eq!(v, e[0] + slope * (b as u64 - 1));
    }
    // One clip is 3 x 30 x 224 x 224; the widest layers are the three
    // 4 x 30 x 224 x 224 outputs of the first dyad.
    let clip = 3 * 30 * 224 * 224;
    assert_eq!(slope, 4 * 4 * clip);
    assert_eq!(e[0] - slope, 4 * (18_777 + clip + 2 * 4 * 30 * 224 * 224));
}

#[test]
fn batch_choice_and_speed_multiple() {
    assert_eq!(choose_batch_size(&[(1, 5.0), (2, 9.0), (4, 9.0)]), Some(2));
    assert_eq!(choose_batch_size(&[]), None);
    let r = ThroughputReport::new(16, 90, 2.0, 0);
    assert_eq!(r.clips_per_second, 45.0);
    assert_eq!(r.speed_multiple, 135.0);
}

#[test]
fn classification_file_round_trip() {
    let c = classifications(&[0.1, 0.5, 0.49999, 0.93]);
    assert_eq!(
        c.iter().map(|c| c.label).collect::<Vec<_>>(),
        vec![0, 1, 0, 1]
    );
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    write_classifications(&p, &c).unwrap();
    assert_eq!(read_classifications(&p).unwrap(), c);
}
