use metatrip_core::embed::Modality;
use metatrip_core::evalx::{
    build_prompt, classification_metrics, precision_at_r, rank_auc, retrieve, zero_shot_classify, Consistency,
    EntityKind, Gallery, GalleryEntry,
};
use metatrip_core::ober::{DiseaseEntry, MetaEntities};
use metatrip_core::ontology::Ontology;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diseases(names: &[&str]) -> MetaEntities {
    MetaEntities::from(names.iter().map(|d| DiseaseEntry::new::<&str>(d, &[], &[])).collect::<Vec<_>>())
}

fn gallery(vectors: Vec<Vec<f64>>) -> Gallery {
    let entries = vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| GalleryEntry {
            id: format!("g{i:03}"),
            vector: v,
            entities: diseases(&["edema"]),
        })
        .collect();
    Gallery::new(Modality::Image, entries).unwrap()
}

#[test]
fn retrieval_examples() {
    let g = gallery(vec![vec![0.1, 1.0], vec![0.9, 0.1]]);
    let top = retrieve(&[1.0, 0.0], &g, 1, None).unwrap();
    assert_eq!(top.ranked[0].0, 1);
    let g = gallery(vec![vec![0.0, 1.0]; 4]);
    let ranked: Vec<usize> = retrieve(&[1.0, 0.0], &g, 4, None).unwrap().ranked.iter().map(|x| x.0).collect();
    assert_eq!(ranked, [0, 1, 2, 3]);
}

#[test]
fn precision_examples() {
    let q = diseases(&["edema"]);
    let same = diseases(&["edema"]);
    let other = diseases(&["fracture"]);
    let p = |items: &[&MetaEntities], q: &MetaEntities| precision_at_r(q, items, EntityKind::Disease, Consistency::Jaccard).unwrap();
    assert_eq!(p(&[&same, &same], &q), 100.0);
    assert_eq!(p(&[&same, &other, &same, &other], &q), 50.0);
    assert_eq!(p(&[&diseases(&["edema"])], &diseases(&["edema", "fracture"])), 50.0);
}

#[test]
fn prompt_and_zero_shot_examples() {
    let ont = Ontology::default_ontology();
    assert_eq!(build_prompt("pneumonia", &ont).unwrap(), "This is an X-Ray image of pneumonia.");
    assert_eq!(build_prompt("pleural effusion", &ont).unwrap(), "This is an X-Ray image of pleural effusion.");
    assert!(build_prompt("", &ont).is_err());
    let prompts = vec![
        ("a".to_string(), vec![1.0, 0.0]),
        ("b".to_string(), vec![0.0, 1.0]),
    ];
    assert_eq!(zero_shot_classify(&[0.0, 2.0], &prompts).unwrap().predicted, 1);
    assert_eq!(zero_shot_classify(&[1.0, 1.0], &prompts).unwrap().predicted, 0);
}

#[test]
fn metric_examples() {
    let truths = [0, 0, 1, 1];
    let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]];
    let m = classification_metrics(&[0, 0, 1, 1], &truths, &scores, 2).unwrap();
    assert_eq!((m.accuracy, m.macro_f1, m.macro_auc), (100.0, 100.0, 1.0));
    let m = classification_metrics(&[0, 0, 0, 0], &truths, &scores, 2).unwrap();
    assert_eq!(m.accuracy, 50.0);

    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let s: Vec<f64> = (0..1000).map(|_| r.random()).collect();
        let pos: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        assert!((rank_auc(&s, &pos).unwrap() - 0.5).abs() <= 0.05);
    }
}

proptest! {
    #[test]
    fn retrieval_ignores_positive_rescaling(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3..12),
        q in prop::collection::vec(-1.0f64..1.0, 4),
        k in prop::collection::vec(0.01f64..100.0, 12),
    ) {
        prop_assume!(vs.iter().chain([&q]).all(|v| v.iter().any(|x| x.abs() > 1e-3)));
        let base = retrieve(&q, &gallery(vs.clone()), vs.len(), None).unwrap();
        let scaled: Vec<Vec<f64>> = vs.iter().zip(&k).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        let other = retrieve(&q, &gallery(scaled), vs.len(), None).unwrap();
        let ids = |r: &metatrip_core::evalx::Retrieval| r.ranked.iter().map(|x| x.0).collect::<Vec<_>>();
        // rescaling can reorder entries whose cosines differ only by rounding
        let close = base.ranked.iter().zip(&other.ranked).all(|(a, b)| a.0 == b.0 || (a.1 - b.1).abs() < 1e-12);
        prop_assert!(close, "{:?} vs {:?}", ids(&base), ids(&other));
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms(
        s in prop::collection::vec(-5.0f64..5.0, 2..60),
        labels in prop::collection::vec(any::<bool>(), 60),
    ) {
        let pos = &labels[..s.len()];
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let a = rank_auc(&s, pos).unwrap();
        let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        let b = rank_auc(&t, pos).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn precision_in_range(
        q in prop::collection::btree_set(prop::sample::select(vec!["edema", "fracture", "pneumonia"]), 1..3),
        items in prop::collection::vec(prop::collection::btree_set(prop::sample::select(vec!["edema", "fracture", "pneumonia"]), 0..3), 1..8),
    ) {
        let qe = diseases(&q.iter().copied().collect::<Vec<_>>());
        let es: Vec<MetaEntities> = items.iter().map(|s| diseases(&s.iter().copied().collect::<Vec<_>>())).collect();
        let refs: Vec<&MetaEntities> = es.iter().collect();
        for mode in [Consistency::Jaccard, Consistency::Exact] {
            let p = precision_at_r(&qe, &refs, EntityKind::Disease, mode).unwrap();
            prop_assert!((0.0..=100.0).contains(&p));
            prop_assert_eq!(p == 100.0, es.iter().all(|e| e.diseases() == qe.diseases()));
        }
    }
}
