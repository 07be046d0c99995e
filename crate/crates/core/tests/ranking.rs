mod common;

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use skge::data::categorize_relations;
use skge::eval::{
    evaluate, evaluate_by_category, evaluate_model, paired_ttest, paired_ttest_ranks, read_ranks_csv, write_ranks_csv,
    Metrics,
};
use skge::{Dataset, EncodedSplit, FilterIndex, KgModel, ModelKind, RelationCategory, Sphere, Triple, TripleScorer};

use common::{encoded, random_triples, rng};

fn toy_model(kind: ModelKind, ne: usize, nr: usize, seed: u64) -> skge::Model {
    KgModel::init(kind, ne, nr, Sphere::new(6), seed).unwrap()
}

#[test]
fn metrics_recomputed_from_rank_list() {
    let mut r = rng(11);
    let all = random_triples(&mut r, 15, 3, 50);
    let test = encoded(all[40..].to_vec());
    let filter = FilterIndex::build(&[&encoded(all[..40].to_vec()), &test]);
    let model = toy_model(ModelKind::Skge, 15, 3, 1);
    let eval = evaluate_model(&model, &test, &filter).unwrap();
    assert_eq!(eval.ranks.len(), 2 * test.len());
    let n = eval.ranks.len() as f64;
    let mrr = eval.ranks.iter().map(|r| 1.0 / r.rank).sum::<f64>() / n;
    let hits = |k: f64| eval.ranks.iter().filter(|r| r.rank <= k).count() as f64 / n;
    assert!((eval.metrics.mrr - mrr).abs() < 1e-12);
    assert_eq!(eval.metrics.hits1, hits(1.0));
    assert_eq!(eval.metrics.hits3, hits(3.0));
    assert_eq!(eval.metrics.hits10, hits(10.0));
    let m = eval.metrics;
    assert!(0.0 < m.mrr && m.mrr <= 1.0);
    assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10 && m.mrr >= m.hits1);
}

#[test]
fn category_buckets_match_subset_reruns() {
    // relation 0 is 1-to-1, relation 1 is N-to-N
    let mut train = vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3), Triple::new(4, 0, 5)];
    for h in 6..9 {
        for t in 9..12 {
            train.push(Triple::new(h, 1, t));
        }
    }
    let train = encoded(train);
    let cats = categorize_relations(&train, 2);
    assert_eq!(cats, vec![RelationCategory::OneToOne, RelationCategory::NToN]);
    let filter = FilterIndex::build(&[&train]);
    let model = toy_model(ModelKind::TransE, 12, 2, 4);
    let scorer = model.scorer();
    let buckets = evaluate_by_category(&scorer, &train, &filter, &cats).unwrap();
    assert_eq!(buckets.len(), 4);
    for (cat, rel) in [(RelationCategory::OneToOne, 0), (RelationCategory::NToN, 1)] {
        let subset = encoded(train.iter().copied().filter(|t| t.relation == rel).collect());
        let direct = evaluate(&scorer, &subset, &filter).unwrap().metrics;
        assert_eq!(buckets[&cat].metrics, Some(direct));
    }
    assert_eq!(buckets[&RelationCategory::OneToN].n_queries, 0);
    assert_eq!(buckets[&RelationCategory::OneToN].metrics, None);
}

#[test]
fn worse_candidates_never_change_the_rank() {
    struct Fixed(Vec<f32>);
    impl TripleScorer<f32> for Fixed {
        fn num_entities(&self) -> usize {
            self.0.len()
        }
        fn num_relations(&self) -> usize {
            1
        }
        fn score(&self, t: Triple) -> f32 {
            self.0[t.tail]
        }
        fn all_tails(&self, _: usize, _: usize) -> Vec<f32> {
            self.0.clone()
        }
        fn all_heads(&self, _: usize, _: usize) -> Vec<f32> {
            self.0.clone()
        }
    }
    let t = Triple::new(0, 0, 1);
    let filter = FilterIndex::build(&[&encoded(vec![t])]);
    let rank = |scores: Vec<f32>| {
        skge::eval::rank_query(&Fixed(scores), 0, t, skge::Direction::Tail, &filter)
            .unwrap()
            .rank
    };
    let base = rank(vec![0.5, 1.0, 1.0, 0.2]);
    assert_eq!(base, 3.5);
    assert_eq!(rank(vec![0.5, 1.0, 1.0, 0.2, 9.0, 1.5]), base);
}

#[test]
fn ttest_is_antisymmetric() {
    let mut r = rng(3);
    let a: Vec<f64> = (0..30).map(|_| r.random()).collect();
    let b: Vec<f64> = (0..30).map(|_| r.random()).collect();
    let ab = paired_ttest(&a, &b).unwrap();
    let ba = paired_ttest(&b, &a).unwrap();
    assert_eq!(ab.t, -ba.t);
    assert_eq!(ab.p, ba.p);
}

#[test]
fn ranks_csv_round_trip_feeds_the_ttest() {
    let mut r = rng(5);
    let all = random_triples(&mut r, 12, 2, 30);
    let test = encoded(all.clone());
    let filter = FilterIndex::build(&[&test]);
    let a = evaluate_model(&toy_model(ModelKind::Skge, 12, 2, 1), &test, &filter).unwrap();
    let b = evaluate_model(&toy_model(ModelKind::TransE, 12, 2, 2), &test, &filter).unwrap();
    let back = read_ranks_csv(&write_ranks_csv(&a.ranks)).unwrap();
    assert_eq!(back, a.ranks);
    let same = paired_ttest_ranks(&a.ranks, &back).unwrap();
    assert!(same.degenerate);
    assert_eq!(same.p, 1.0);
    let diff = paired_ttest_ranks(&a.ranks, &b.ranks).unwrap();
    assert!((0.0..=1.0).contains(&diff.p));
    let shorter = &b.ranks[..b.ranks.len() - 2];
    assert!(paired_ttest_ranks(&a.ranks, shorter).is_err());
}

#[test]
fn filter_never_removes_the_ground_truth() {
    let mut r = rng(9);
    for _ in 0..20 {
        let all = random_triples(&mut r, 8, 2, 40);
        let s: EncodedSplit = encoded(all.clone());
        let filter = FilterIndex::build(&[&s]);
        let model = toy_model(ModelKind::SkgeLearnableScale, 8, 2, r.random());
        let eval = evaluate_model(&model, &s, &filter).unwrap();
        let known: HashSet<Triple> = all.iter().copied().collect();
        for rr in &eval.ranks {
            let t = all[rr.triple_index];
            // upper bound: every unfiltered candidate beats the truth
            let unfiltered = (0..8)
                .filter(|&c| match rr.direction {
                    skge::Direction::Tail => !known.contains(&Triple::new(t.head, t.relation, c)),
                    skge::Direction::Head => !known.contains(&Triple::new(c, t.relation, t.tail)),
                })
                .count();
            assert!(rr.rank >= 1.0 && rr.rank <= 1.0 + unfiltered as f64);
        }
    }
}

#[test]
fn perfect_ranks_give_unit_metrics() {
    let ds = Dataset::from_raw(
        &[skge::RawTriple::new("a", "r", "b")],
        &[skge::RawTriple::new("a", "r", "b")],
        &[skge::RawTriple::new("a", "r", "b")],
    )
    .unwrap();
    // b sits exactly at a + r
    let model = KgModel::from_parts(ModelKind::TransE, 2, 1, Sphere::new(1), vec![0.0, 1.0], vec![1.0]).unwrap();
    let m: Metrics = evaluate_model(&model, &ds.test, &ds.filter_index()).unwrap().metrics;
    assert_eq!((m.mrr, m.hits1, m.hits10, m.n_queries), (1.0, 1.0, 1.0, 2));
    let by: BTreeMap<_, _> = evaluate_by_category(
        &model.scorer(),
        &ds.test,
        &ds.filter_index(),
        &[RelationCategory::OneToOne],
    )
    .unwrap()
    .into_iter()
    .filter(|(_, b)| b.n_queries > 0)
    .collect();
    assert_eq!(by.len(), 1);
}
