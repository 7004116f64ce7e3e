mod common;

use common::{merge_oracle, random_instances, typists_at};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dyadic_activity::activity_map::{
    cluster_instances, evaluate, filter_min_duration, make_link, merge_clusters, parse_link,
    resolve_simultaneous_typing, ActivityMapDoc, Cluster, Interval, MapParameters, SessionInfo,
};
use dyadic_activity::dataset::ActivityKind;

const GOLDEN: &str = include_str!("fixtures/actmap_golden.json");

#[test]
fn clustering_equals_brute_force_merge() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..1000 {
        let n = rng.gen_range(0..40);
        let xs = random_instances(&mut rng, n, trial % 2 == 0);
        let gap = [0.5, 3.0, 5.0][trial % 3];
        let got = cluster_instances(&xs, gap);
        let want = merge_oracle(&xs, gap);
        assert_eq!(got.len(), want.len(), "trial {trial}");
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(
                (g.kind, &g.person, g.t_start, g.t_end, g.n),
                (w.0, &w.1, w.2, w.3, w.4),
                "trial {trial}"
            );
            assert!((g.p_mean - w.5).abs() < 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn merging_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..300 {
        let once = cluster_instances(&random_instances(&mut rng, 30, trial % 2 == 0), 3.0);
        assert_eq!(merge_clusters(once.clone(), 3.0), once, "trial {trial}");
    }
}

#[test]
fn one_typist_at_a_time_after_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..200 {
        let before = cluster_instances(&random_instances(&mut rng, 40, trial % 2 == 0), 3.0);
        let after = resolve_simultaneous_typing(before.clone());
        for k in 0..=2100 {
            let t = k as f64 * 0.1;
            let was = typists_at(&before, t);
            let now = typists_at(&after, t);
            assert!(now.len() <= 1, "trial {trial} t {t}: {now:?}");
            assert_eq!(was.is_empty(), now.is_empty(), "trial {trial} t {t}");
            if let Some(p) = now.first() {
                // The survivor is the strongest typist covering t.
                let best = before
                    .iter()
                    .filter(|c| c.kind == ActivityKind::Typing && c.t_start <= t && t < c.t_end)
                    .max_by(|a, b| a.p_mean.total_cmp(&b.p_mean).then(b.person.cmp(&a.person)))
                    .unwrap();
                assert_eq!(*p, best.person, "trial {trial} t {t}");
            }
        }
        let writing = |cs: &[Cluster]| {
            cs.iter()
                .filter(|c| c.kind == ActivityKind::Writing)
                .cloned()
                .collect::<Vec<_>>()
        };
        assert_eq!(writing(&after), writing(&before));
    }
}

#[test]
fn duration_filter_keeps_exactly_the_long_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let cs = cluster_instances(&random_instances(&mut rng, 30, false), 3.0);
        let min = rng.gen_range(0.0..15.0);
        let kept = filter_min_duration(cs.clone(), min);
        let want: Vec<Cluster> = cs
            .into_iter()
            .filter(|c| c.t_end - c.t_start >= min)
            .collect();
        assert_eq!(kept, want);
    }
}

#[test]
fn links_round_trip_to_whole_seconds() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..1000 {
        let t: f64 = rng.gen_range(0.0..20000.0);
        let l = make_link("https://v.example/s?x=1", t);
        assert_eq!(parse_link(&l), Some(t.floor() as u64));
    }
    assert_eq!(make_link("u", 59.999), "u?t=59");
}

fn golden_doc() -> ActivityMapDoc {
    let c = |kind, person: &str, t0, t1, n, p| Cluster {
        kind,
        person: person.into(),
        t_start: t0,
        t_end: t1,
        n,
        p_mean: p,
        link: String::new(),
    };
    let clusters = vec![
        c(ActivityKind::Typing, "Ben", 69.5, 99.0, 10, 0.7712),
        c(ActivityKind::Writing, "Ana", 30.0, 42.0, 4, 0.7),
        c(ActivityKind::Typing, "Ana", 6.0, 24.0, 6, 0.8119),
    ];
    let session = SessionInfo {
        id: "golden".into(),
        duration: 120.0,
        base_url: "https://video.example.org/golden".into(),
    };
    let mut doc = ActivityMapDoc::new(session, MapParameters::default(), clusters);
    let iv = |kind, person: &str, t0, t1| Interval {
        kind,
        person: person.into(),
        t_start: t0,
        t_end: t1,
    };
    let truth = vec![
        iv(ActivityKind::Typing, "Ana", 5.0, 20.0),
        iv(ActivityKind::Typing, "Ben", 70.0, 98.0),
        iv(ActivityKind::Writing, "Ben", 100.0, 110.0),
    ];
    doc.evaluation = Some(evaluate(&doc.clusters, &truth));
    doc
}

#[test]
fn golden_document() {
    let doc = golden_doc();
    doc.validate().unwrap();
    assert_eq!(doc.to_canonical(), GOLDEN);
    let back = ActivityMapDoc::parse(GOLDEN).unwrap();
    assert_eq!(back.to_canonical(), GOLDEN);
    assert_eq!(
        back.lanes().into_iter().collect::<Vec<_>>(),
        vec![("Ana", 2), ("Ben", 1)]
    );
}

#[test]
fn invalid_documents_rejected() {
    let bad_schema = GOLDEN.replace("actmap/1", "actmap/0");
    assert!(ActivityMapDoc::parse(&bad_schema)
        .unwrap_err()
        .to_string()
        .contains("schema"));
    let mut doc = golden_doc();
    doc.clusters.swap(0, 2);
    assert!(doc
        .validate()
        .unwrap_err()
        .to_string()
        .contains("out of order"));
    let mut doc = golden_doc();
    doc.clusters[2].t_end = 130.0;
    assert!(doc.validate().is_err());
    let mut doc = golden_doc();
    doc.evaluation.as_mut().unwrap().marks.pop();
    assert!(doc.validate().is_err());
}
