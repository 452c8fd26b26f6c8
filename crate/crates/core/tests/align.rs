use metatrip_core::align::{
    alignment_loss, check_gradients, f_tri, hinge, LossConfig, LossTerms, SignMode, TripletEmbeddings, TripletFeatures,
};
use metatrip_core::embed::Heads;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, c).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn embeddings(c: usize) -> impl Strategy<Value = TripletEmbeddings> {
    (vector(c), vector(c), vector(c), vector(c), vector(c), vector(c)).prop_map(|(a, b, d, e, f, g)| TripletEmbeddings {
        ei_a: a,
        ei_p: b,
        ei_n: d,
        et_a: e,
        et_p: f,
        et_n: g,
    })
}

fn mode() -> impl Strategy<Value = SignMode> {
    prop_oneof![Just(SignMode::Corrected), Just(SignMode::AsPrinted)]
}

proptest! {
    #[test]
    fn terms_recombine(t in embeddings(5), alpha in 0.0f64..1.0, eta in 0.0f64..=1.0, m in mode()) {
        let cfg = LossConfig { alpha, eta, sign_mode: m };
        let l = alignment_loss(&t, &cfg).unwrap();
        let want = eta * (l.i2t + l.t2i) + (1.0 - eta) * (l.i2i + l.t2t);
        prop_assert!((l.total - want).abs() <= 1e-12);
        prop_assert!(l.total >= 0.0 && l.i2t >= 0.0 && l.t2i >= 0.0 && l.i2i >= 0.0 && l.t2t >= 0.0);
    }

    #[test]
    fn eta_extremes_are_exact(t in embeddings(4), alpha in 0.0f64..1.0) {
        let one = alignment_loss(&t, &LossConfig { alpha, eta: 1.0, sign_mode: SignMode::Corrected }).unwrap();
        prop_assert_eq!(one.total, one.i2t + one.t2i);
        let zero = alignment_loss(&t, &LossConfig { alpha, eta: 0.0, sign_mode: SignMode::Corrected }).unwrap();
        prop_assert_eq!(zero.total, zero.i2i + zero.t2t);
    }

    #[test]
    fn mode_contract(a in vector(6), p in vector(6), n in vector(6), alpha in 0.0f64..1.0) {
        let c = f_tri(&a, &p, &n, alpha, SignMode::Corrected).unwrap();
        let printed = f_tri(&a, &n, &p, alpha, SignMode::AsPrinted).unwrap();
        prop_assert_eq!(c, printed);
    }

    #[test]
    fn positive_rescaling_leaves_loss_unchanged(t in embeddings(4), k in 0.01f64..100.0) {
        let cfg = LossConfig::default();
        let base = alignment_loss(&t, &cfg).unwrap();
        let mut s = t.clone();
        s.ei_n.iter_mut().for_each(|x| *x *= k);
        s.et_a.iter_mut().for_each(|x| *x *= k);
        let scaled = alignment_loss(&s, &cfg).unwrap();
        prop_assert!((base.total - scaled.total).abs() < 1e-12);
    }
}

#[test]
fn hinge_examples() {
    assert_eq!(hinge(1.0, 0.0, 0.3, SignMode::Corrected), 0.0);
    assert_eq!(hinge(0.5, 0.5, 0.7, SignMode::Corrected), 0.7);
    assert!((hinge(0.2, 0.6, 0.3, SignMode::Corrected) - 0.7).abs() < 1e-15);
    assert_eq!(LossTerms::combine(0.1, 0.2, 0.3, 0.4, 0.5).total, 0.5);
}

fn draw(c: usize, r: &mut ChaCha8Rng) -> (Vec<TripletFeatures>, Heads, LossConfig) {
    let mut v = || Array1::from_shape_fn(c, |_| r.random_range(-1.0..1.0));
    let batch = (0..4)
        .map(|_| TripletFeatures {
            image: [v(), v(), v()],
            text: [v(), v(), v()],
        })
        .collect();
    let mut heads = Heads::identity(c);
    heads.image.w += &Array2::from_shape_fn((c, c), |_| r.random_range(-0.5..0.5));
    heads.text.w += &Array2::from_shape_fn((c, c), |_| r.random_range(-0.5..0.5));
    let cfg = LossConfig {
        alpha: r.random_range(0.0..1.0),
        eta: r.random_range(0.0..=1.0),
        sign_mode: if r.random_bool(0.5) { SignMode::Corrected } else { SignMode::AsPrinted },
    };
    (batch, heads, cfg)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let (batch, heads, cfg) = draw(8, &mut r);
        let report = check_gradients(&batch, &heads, &cfg, 1e-4).unwrap();
        if report.kink_distance < 1e-3 {
            continue;
        }
        worst = worst.max(report.max_rel_error);
        checked += 1;
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}
