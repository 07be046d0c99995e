//! Filtered link-prediction evaluation and embedding-space analyses.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::data::{EncodedSplit, FilterIndex, RelationCategory, Triple, Vocab};
use crate::model::{KgModel, ModelError, ModelKind, TripleScorer};
use crate::scalar::{euclidean, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error("relation {relation} has no category")]
    MissingCategory { relation: usize },
    #[error("paired samples differ in length ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("paired t-test needs at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("rank lists disagree on the query at position {index}")]
    QueryMismatch { index: usize },
    #[error("unknown entity label {0:?}")]
    UnknownLabel(String),
    #[error("k = {k} but only {available} other entities exist")]
    KTooLarge { k: usize, available: usize },
    #[error("ranks CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(?, r, t)`: candidates replace the head.
    Head,
    /// `(h, r, ?)`: candidates replace the tail.
    Tail,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Head => "head",
            Direction::Tail => "tail",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(Self::Head),
            "tail" => Ok(Self::Tail),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub triple_index: usize,
    pub direction: Direction,
    /// Filtered rank, fractional when ties are split.
    pub rank: f64,
    pub reciprocal_rank: f64,
}

/// `1 + #{better} + #{tied}/2` over candidates that are neither the ground
/// truth nor listed in `known`.
pub fn filtered_rank<T: Scalar>(scores: &[T], truth: usize, known: Option<&HashSet<usize>>) -> f64 {
    let target = scores[truth];
    let mut better = 0usize;
    let mut tied = 0usize;
    for (c, &s) in scores.iter().enumerate() {
        if c == truth || known.is_some_and(|k| k.contains(&c)) {
            continue;
        }
        if s < target {
            better += 1;
        } else if s == target {
            tied += 1;
        }
    }
    1.0 + better as f64 + tied as f64 / 2.0
}

/// Filtered rank of the ground truth of `triple` in the given direction.
pub fn rank_query<T: Scalar, S: TripleScorer<T> + ?Sized>(
    scorer: &S,
    triple_index: usize,
    triple: Triple,
    direction: Direction,
    filter: &FilterIndex,
) -> Result<RankResult, EvalError> {
    let ne = scorer.num_entities();
    for id in [triple.head, triple.tail] {
        if id >= ne {
            return Err(ModelError::EntityOutOfRange { id, count: ne }.into());
        }
    }
    if triple.relation >= scorer.num_relations() {
        return Err(ModelError::RelationOutOfRange {
            id: triple.relation,
            count: scorer.num_relations(),
        }
        .into());
    }
    let rank = match direction {
        Direction::Tail => filtered_rank(
            &scorer.all_tails(triple.head, triple.relation),
            triple.tail,
            filter.known_tails(triple.head, triple.relation),
        ),
        Direction::Head => filtered_rank(
            &scorer.all_heads(triple.relation, triple.tail),
            triple.head,
            filter.known_heads(triple.relation, triple.tail),
        ),
    };
    Ok(RankResult {
        triple_index,
        direction,
        rank,
        reciprocal_rank: 1.0 / rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl Metrics {
    /// `None` for an empty rank list.
    pub fn from_ranks<'a>(ranks: impl IntoIterator<Item = &'a RankResult>) -> Option<Self> {
        let (mut n, mut rr, mut h1, mut h3, mut h10) = (0usize, 0.0, 0usize, 0usize, 0usize);
        for r in ranks {
            n += 1;
            rr += r.reciprocal_rank;
            h1 += usize::from(r.rank <= 1.0);
            h3 += usize::from(r.rank <= 3.0);
            h10 += usize::from(r.rank <= 10.0);
        }
        (n > 0).then(|| {
            let n_f = n as f64;
            Self {
                mrr: rr / n_f,
                hits1: h1 as f64 / n_f,
                hits3: h3 as f64 / n_f,
                hits10: h10 as f64 / n_f,
                n_queries: n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Both directions pooled.
    pub metrics: Metrics,
    pub head: Metrics,
    pub tail: Metrics,
    /// Ordered by triple, tail query before head query.
    #[serde(skip)]
    pub ranks: Vec<RankResult>,
}

/// Ranks every triple of `split` in both directions.
pub fn evaluate<T: Scalar, S: TripleScorer<T> + ?Sized>(
    scorer: &S,
    split: &EncodedSplit,
    filter: &FilterIndex,
) -> Result<Evaluation, EvalError> {
    if split.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let ranks = (0..2 * split.len())
        .into_par_iter()
        .map(|q| {
            let i = q / 2;
            let direction = if q % 2 == 0 { Direction::Tail } else { Direction::Head };
            rank_query(scorer, i, split.triples[i], direction, filter)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let by_dir = |d| Metrics::from_ranks(ranks.iter().filter(|r| r.direction == d)).expect("non-empty split");
    Ok(Evaluation {
        metrics: Metrics::from_ranks(&ranks).expect("non-empty split"),
        head: by_dir(Direction::Head),
        tail: by_dir(Direction::Tail),
        ranks,
    })
}

pub fn evaluate_model<T: Scalar>(
    model: &KgModel<T>,
    split: &EncodedSplit,
    filter: &FilterIndex,
) -> Result<Evaluation, EvalError> {
    evaluate(&model.scorer(), split, filter)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub n_queries: usize,
    /// `None` for an empty bucket.
    pub metrics: Option<Metrics>,
    pub head: Option<Metrics>,
    pub tail: Option<Metrics>,
}

/// Splits already-computed ranks by the category of each query's relation.
/// All four categories are always present.
pub fn metrics_by_category(
    split: &EncodedSplit,
    ranks: &[RankResult],
    categories: &[RelationCategory],
) -> Result<BTreeMap<RelationCategory, CategoryMetrics>, EvalError> {
    let mut buckets: BTreeMap<RelationCategory, Vec<RankResult>> =
        RelationCategory::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for r in ranks {
        let relation = split.triples[r.triple_index].relation;
        let cat = *categories
            .get(relation)
            .ok_or(EvalError::MissingCategory { relation })?;
        buckets.get_mut(&cat).expect("all categories present").push(*r);
    }
    Ok(buckets
        .into_iter()
        .map(|(cat, rs)| {
            let dir = |d| Metrics::from_ranks(rs.iter().filter(|r| r.direction == d));
            (
                cat,
                CategoryMetrics {
                    n_queries: rs.len(),
                    metrics: Metrics::from_ranks(&rs),
                    head: dir(Direction::Head),
                    tail: dir(Direction::Tail),
                },
            )
        })
        .collect())
}

/// Per-category filtered metrics. `categories[r]` is the category of relation `r`.
pub fn evaluate_by_category<T: Scalar, S: TripleScorer<T> + ?Sized>(
    scorer: &S,
    split: &EncodedSplit,
    filter: &FilterIndex,
    categories: &[RelationCategory],
) -> Result<BTreeMap<RelationCategory, CategoryMetrics>, EvalError> {
    if let Some(t) = split.iter().find(|t| t.relation >= categories.len()) {
        return Err(EvalError::MissingCategory { relation: t.relation });
    }
    let eval = evaluate(scorer, split, filter)?;
    metrics_by_category(split, &eval.ranks, categories)
}

pub fn write_ranks_csv(ranks: &[RankResult]) -> String {
    let mut out = String::from("triple_index,direction,rank,reciprocal_rank\n");
    for r in ranks {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.triple_index, r.direction, r.rank, r.reciprocal_rank
        ));
    }
    out
}

pub fn read_ranks_csv(text: &str) -> Result<Vec<RankResult>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Csv { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        out.push(RankResult {
            triple_index: fields[0].parse().map_err(|e| err(format!("triple_index: {e}")))?,
            direction: fields[1].parse().map_err(err)?,
            rank: fields[2].parse().map_err(|e| err(format!("rank: {e}")))?,
            reciprocal_rank: fields[3].parse().map_err(|e| err(format!("reciprocal_rank: {e}")))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub n: usize,
    pub mean_diff: f64,
    /// The differences had zero variance; `t` and `p` follow the
    /// degenerate-case convention.
    pub degenerate: bool,
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `dof`
/// degrees of freedom, via the regularized incomplete beta function.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Paired t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTest {
            t,
            p,
            n,
            mean_diff: mean,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, (n - 1) as f64),
        n,
        mean_diff: mean,
        degenerate: false,
    })
}

/// Paired t-test on reciprocal ranks, after checking both lists describe
/// the same queries in the same order.
pub fn paired_ttest_ranks(a: &[RankResult], b: &[RankResult]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if let Some(index) = a
        .iter()
        .zip(b)
        .position(|(x, y)| (x.triple_index, x.direction) != (y.triple_index, y.direction))
    {
        return Err(EvalError::QueryMismatch { index });
    }
    let ra: Vec<f64> = a.iter().map(|r| r.reciprocal_rank).collect();
    let rb: Vec<f64> = b.iter().map(|r| r.reciprocal_rank).collect();
    paired_ttest(&ra, &rb)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins over `[0, max(values)]`; the last bin is closed.
    pub fn build(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let max = values.iter().copied().fold(0.0, f64::max);
        let hi = if max > 0.0 { max } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = ((v.max(0.0) / hi) * bins as f64).floor() as usize;
            counts[idx.min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegDistReport {
    pub model_kind: ModelKind,
    pub queries: usize,
    pub negatives_per_query: usize,
    pub samples: usize,
    pub mean: f64,
    /// Population variance of the raw scores.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    #[serde(skip)]
    pub histogram: Histogram,
}

pub const NEG_DIST_QUERIES: usize = 1000;
pub const NEG_DIST_NEGATIVES: usize = 1024;

/// Scores of uniformly drawn tails for `queries` distinct `(h, r)` pairs
/// taken from `test` (all of them if fewer are available).
pub fn negative_score_distribution<T: Scalar, R: Rng + ?Sized>(
    model: &KgModel<T>,
    test: &EncodedSplit,
    queries: usize,
    negatives: usize,
    rng: &mut R,
    bins: usize,
) -> Result<NegDistReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    for t in test.iter() {
        model.check_triple(*t)?;
    }
    let ne = model.num_entities();
    let scorer = model.scorer();
    let picked = sample(rng, test.len(), queries.min(test.len()));
    let mut scores = Vec::with_capacity(picked.len() * negatives);
    for i in picked.iter() {
        let t = test.triples[i];
        for _ in 0..negatives {
            let tail = rng.random_range(0..ne);
            scores.push(scorer.score(Triple::new(t.head, t.relation, tail)).as_f64());
        }
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(NegDistReport {
        model_kind: model.kind(),
        queries: picked.len(),
        negatives_per_query: negatives,
        samples: scores.len(),
        mean,
        variance,
        min: scores.iter().copied().fold(f64::INFINITY, f64::min),
        max: scores.iter().copied().fold(0.0, f64::max),
        histogram: Histogram::build(&scores, bins),
    })
}

/// The `k` entities closest to `anchor` in representation space (sphere
/// points for spherical models, latent vectors for TransE), nearest first,
/// ties by id. The anchor itself is excluded.
pub fn knn<T: Scalar>(model: &KgModel<T>, anchor: usize, k: usize) -> Result<Vec<(usize, f64)>, EvalError> {
    model.check_entity(anchor)?;
    let available = model.num_entities() - 1;
    if k > available {
        return Err(EvalError::KTooLarge { k, available });
    }
    let points = model.entity_points();
    let w = model.point_width();
    let a = &points[anchor * w..(anchor + 1) * w];
    let mut dists: Vec<(usize, f64)> = (0..model.num_entities())
        .filter(|&e| e != anchor)
        .map(|e| (e, euclidean(a, &points[e * w..(e + 1) * w]).as_f64()))
        .collect();
    dists.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    dists.truncate(k);
    Ok(dists)
}

/// [`knn`] addressed by entity label.
pub fn knn_by_label<T: Scalar>(
    model: &KgModel<T>,
    vocab: &Vocab,
    label: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, EvalError> {
    let anchor = vocab
        .entity_id(label)
        .ok_or_else(|| EvalError::UnknownLabel(label.to_owned()))?;
    Ok(knn(model, anchor, k)?
        .into_iter()
        .map(|(e, d)| (vocab.entity_label(e).unwrap_or_default().to_owned(), d))
        .collect())
}
