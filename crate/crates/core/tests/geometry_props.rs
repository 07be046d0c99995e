mod common;

use proptest::prelude::*;
use skge::geometry::{chord_distance, finite_diff_check, project_to_sphere, spherize_forward};
use skge::{KgModel, ModelKind, Sphere64, Triple};

fn latent(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, dim)
}

proptest! {
    #[test]
    fn spherized_points_have_radius(dim in 1usize..24, seed in any::<u64>(), radius in 0.1f64..10.0) {
        let v: Vec<f64> = {
            use rand::Rng;
            let mut r = common::rng(seed);
            (0..dim).map(|_| r.random_range(-50.0..50.0)).collect()
        };
        let sphere = Sphere64::new(dim).with_radius(radius);
        let (p, _) = spherize_forward(&v, &sphere).unwrap();
        prop_assert_eq!(p.dim(), dim + 1);
        prop_assert!((p.norm() - radius).abs() <= 1e-9 * radius.max(1.0));
    }

    #[test]
    fn chord_is_a_bounded_metric(a in latent(6), b in latent(6), c in latent(6)) {
        let s = Sphere64::new(6);
        let [pa, pb, pc] = [&a, &b, &c].map(|v| spherize_forward(v, &s).unwrap().0);
        let ab = chord_distance(&pa, &pb).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ab, chord_distance(&pb, &pa).unwrap());
        prop_assert_eq!(chord_distance(&pa, &pa).unwrap(), 0.0);
        let via = ab + chord_distance(&pb, &pc).unwrap();
        prop_assert!(chord_distance(&pa, &pc).unwrap() <= via + 1e-12);
    }

    #[test]
    fn projection_is_idempotent(p in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        prop_assume!(p.iter().any(|x| x.abs() > 1e-3));
        let once = project_to_sphere(&p, 2.0, 1e-9);
        let twice = project_to_sphere(&once, 2.0, 1e-9);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn score_gradients_match_finite_differences(seed in any::<u64>(), kind_idx in 0usize..4, dim in 1usize..10) {
        let kind = ModelKind::ALL[kind_idx];
        let model = KgModel::<f64>::init(kind, 3, 2, Sphere64::new(dim), seed).unwrap();
        let t = Triple::new(0, 1, 2);
        let g = model.triple_backward(t, 1.0).unwrap();
        let ew = model.entity_width();
        let f = |x: &[f64]| {
            let mut m = model.clone();
            m.entity_table_mut()[..ew].copy_from_slice(x);
            m.score_triples(&[t]).unwrap()[0]
        };
        prop_assert!(finite_diff_check(f, &g.head, model.entity_row(0), 1e-6) < 1e-5);
    }
}

#[test]
fn transe_is_translation_invariant() {
    let mut model = KgModel::<f64>::init(ModelKind::TransE, 6, 2, Sphere64::new(5), 3).unwrap();
    let triples: Vec<Triple> = (0..6).map(|h| Triple::new(h, h % 2, (h + 1) % 6)).collect();
    let before = model.score_triples(&triples).unwrap();
    let shift = [0.3, -1.0, 2.5, 0.0, 7.0];
    for e in 0..6 {
        let row = &mut model.entity_table_mut()[e * 5..(e + 1) * 5];
        row.iter_mut().zip(shift).for_each(|(x, s)| *x += s);
    }
    let after = model.score_triples(&triples).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn spherical_scores_ignore_entity_row_scale_only_for_fixed_norm() {
    let mut model = KgModel::<f64>::init(ModelKind::SkgeFixedNorm, 4, 1, Sphere64::new(3), 5).unwrap();
    let t = [Triple::new(0, 0, 1)];
    let before = model.score_triples(&t).unwrap()[0];
    model.entity_table_mut().iter_mut().for_each(|x| *x *= 3.0);
    let after = model.score_triples(&t).unwrap()[0];
    assert!((before - after).abs() < 1e-9);
}
