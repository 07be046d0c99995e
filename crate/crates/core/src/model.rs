//! Parameter containers, scoring and backward passes for TransE and the
//! spherical model family.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Triple;
use crate::geometry::{
    project_backward, project_in_place, spherize_backward, spherize_cached, spherize_into, GeometryError,
    SpherizationParams, SpherizeCache,
};
use crate::scalar::{euclidean, norm, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("operation requires a {expected} model, got {actual}")]
    WrongKind { expected: &'static str, actual: ModelKind },
    #[error("entity id {id} out of range for {count} entities")]
    EntityOutOfRange { id: usize, count: usize },
    #[error("relation id {id} out of range for {count} relations")]
    RelationOutOfRange { id: usize, count: usize },
    #[error("{what} has length {actual}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite {what} parameter at flat index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("sizes must be positive (entities {entities}, relations {relations}, dim {dim})")]
    EmptyModel {
        entities: usize,
        relations: usize,
        dim: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "transe")]
    TransE,
    #[serde(rename = "skge")]
    Skge,
    /// Spherization replaced by plain L2 normalization.
    #[serde(rename = "skge-fixednorm")]
    SkgeFixedNorm,
    /// Spherization with a trainable sigmoid scale.
    #[serde(rename = "skge-learnablescale")]
    SkgeLearnableScale,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::TransE, Self::Skge, Self::SkgeFixedNorm, Self::SkgeLearnableScale];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TransE => "transe",
            Self::Skge => "skge",
            Self::SkgeFixedNorm => "skge-fixednorm",
            Self::SkgeLearnableScale => "skge-learnablescale",
        }
    }

    pub fn is_spherical(self) -> bool {
        self != Self::TransE
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(Self::TransE),
            "skge" => Ok(Self::Skge),
            "skge-fixednorm" | "fixednorm" => Ok(Self::SkgeFixedNorm),
            "skge-learnablescale" | "learnablescale" => Ok(Self::SkgeLearnableScale),
            other => Err(format!(
                "unknown model kind {other:?} (expected transe, skge, skge-fixednorm or skge-learnablescale)"
            )),
        }
    }
}

/// Embedding tables plus the spherization settings.
///
/// Entity rows hold the latent vectors (`D` wide, or `D + 1` for the
/// fixed-norm variant so that normalization lands in the relation space).
/// Relation rows are `D` wide for TransE and `D + 1` for every spherical
/// variant.
#[derive(Debug, Clone, PartialEq)]
pub struct KgModel<T> {
    kind: ModelKind,
    num_entities: usize,
    num_relations: usize,
    sphere: SpherizationParams<T>,
    entity: Vec<T>,
    relation: Vec<T>,
}

fn widths(kind: ModelKind, dim: usize) -> (usize, usize) {
    match kind {
        ModelKind::TransE => (dim, dim),
        ModelKind::Skge | ModelKind::SkgeLearnableScale => (dim, dim + 1),
        ModelKind::SkgeFixedNorm => (dim + 1, dim + 1),
    }
}

impl<T: Scalar> KgModel<T> {
    /// Uniform `[-6/√D, 6/√D]` initialization, deterministic in `seed`.
    pub fn init(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        sphere: SpherizationParams<T>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let dim = sphere.dim;
        if num_entities == 0 || num_relations == 0 || dim == 0 {
            return Err(ModelError::EmptyModel {
                entities: num_entities,
                relations: num_relations,
                dim,
            });
        }
        sphere.validate()?;
        let (ew, rw) = widths(kind, dim);
        let bound = 6.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect() };
        let entity = draw(num_entities * ew);
        let relation = draw(num_relations * rw);
        Ok(Self {
            kind,
            num_entities,
            num_relations,
            sphere,
            entity,
            relation,
        })
    }

    /// Assembles a model from flat row-major tables, checking shapes and
    /// finiteness.
    pub fn from_parts(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        sphere: SpherizationParams<T>,
        entity: Vec<T>,
        relation: Vec<T>,
    ) -> Result<Self, ModelError> {
        if num_entities == 0 || num_relations == 0 || sphere.dim == 0 {
            return Err(ModelError::EmptyModel {
                entities: num_entities,
                relations: num_relations,
                dim: sphere.dim,
            });
        }
        sphere.validate()?;
        let (ew, rw) = widths(kind, sphere.dim);
        if entity.len() != num_entities * ew {
            return Err(ModelError::Shape {
                what: "entity table",
                expected: num_entities * ew,
                actual: entity.len(),
            });
        }
        if relation.len() != num_relations * rw {
            return Err(ModelError::Shape {
                what: "relation table",
                expected: num_relations * rw,
                actual: relation.len(),
            });
        }
        let model = Self {
            kind,
            num_entities,
            num_relations,
            sphere,
            entity,
            relation,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        if let Some(index) = self.entity.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { what: "entity", index });
        }
        if let Some(index) = self.relation.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite {
                what: "relation",
                index,
            });
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn dim(&self) -> usize {
        self.sphere.dim
    }

    pub fn sphere(&self) -> &SpherizationParams<T> {
        &self.sphere
    }

    pub fn sphere_mut(&mut self) -> &mut SpherizationParams<T> {
        &mut self.sphere
    }

    /// Width of a latent entity row.
    pub fn entity_width(&self) -> usize {
        widths(self.kind, self.dim()).0
    }

    /// Width of a relation row.
    pub fn relation_width(&self) -> usize {
        widths(self.kind, self.dim()).1
    }

    /// Width of an entity representation (the space scores are computed in).
    pub fn point_width(&self) -> usize {
        self.relation_width()
    }

    pub fn entity_table(&self) -> &[T] {
        &self.entity
    }

    pub fn relation_table(&self) -> &[T] {
        &self.relation
    }

    pub fn entity_table_mut(&mut self) -> &mut [T] {
        &mut self.entity
    }

    pub fn relation_table_mut(&mut self) -> &mut [T] {
        &mut self.relation
    }

    /// Simultaneous mutable access to both tables and the sphere settings.
    pub fn tables_mut(&mut self) -> (&mut [T], &mut [T], &mut SpherizationParams<T>) {
        (&mut self.entity, &mut self.relation, &mut self.sphere)
    }

    pub fn entity_row(&self, e: usize) -> &[T] {
        let w = self.entity_width();
        &self.entity[e * w..(e + 1) * w]
    }

    pub fn relation_row(&self, r: usize) -> &[T] {
        let w = self.relation_width();
        &self.relation[r * w..(r + 1) * w]
    }

    pub fn entity_row_mut(&mut self, e: usize) -> &mut [T] {
        let w = self.entity_width();
        &mut self.entity[e * w..(e + 1) * w]
    }

    pub fn check_triple(&self, t: Triple) -> Result<(), ModelError> {
        self.check_entity(t.head)?;
        self.check_relation(t.relation)?;
        self.check_entity(t.tail)
    }

    pub fn check_entity(&self, id: usize) -> Result<(), ModelError> {
        if id < self.num_entities {
            Ok(())
        } else {
            Err(ModelError::EntityOutOfRange {
                id,
                count: self.num_entities,
            })
        }
    }

    pub fn check_relation(&self, id: usize) -> Result<(), ModelError> {
        if id < self.num_relations {
            Ok(())
        } else {
            Err(ModelError::RelationOutOfRange {
                id,
                count: self.num_relations,
            })
        }
    }

    /// Writes the representation of entity `e` (latent vector for TransE,
    /// point on the sphere otherwise) into `out`.
    pub fn representation_into(&self, e: usize, out: &mut [T]) {
        let v = self.entity_row(e);
        match self.kind {
            ModelKind::TransE => out.copy_from_slice(v),
            ModelKind::Skge | ModelKind::SkgeLearnableScale => spherize_into(v, &self.sphere, out),
            ModelKind::SkgeFixedNorm => {
                out.copy_from_slice(v);
                project_in_place(out, self.sphere.radius, self.sphere.epsilon);
            }
        }
    }

    pub fn representation(&self, e: usize) -> Result<Vec<T>, ModelError> {
        self.check_entity(e)?;
        let mut out = vec![T::zero(); self.point_width()];
        self.representation_into(e, &mut out);
        Ok(out)
    }

    /// Representations of every entity, row-major.
    pub fn entity_points(&self) -> Vec<T> {
        let w = self.point_width();
        let mut out = vec![T::zero(); self.num_entities * w];
        out.par_chunks_mut(w)
            .enumerate()
            .for_each(|(e, row)| self.representation_into(e, row));
        out
    }

    /// Score of one triple from precomputed head/tail representations.
    fn score_points(&self, head: &[T], relation: &[T], tail: &[T], buf: &mut [T]) -> T {
        for ((b, &h), &r) in buf.iter_mut().zip(head).zip(relation) {
            *b = h + r;
        }
        if self.kind.is_spherical() {
            project_in_place(buf, self.sphere.radius, self.sphere.epsilon);
        }
        euclidean(buf, tail)
    }

    fn score_unchecked(&self, t: Triple, h_buf: &mut [T], t_buf: &mut [T], buf: &mut [T]) -> T {
        self.representation_into(t.head, h_buf);
        self.representation_into(t.tail, t_buf);
        self.score_points(h_buf, self.relation_row(t.relation), t_buf, buf)
    }

    /// Distance-based score of every triple (lower is more plausible).
    pub fn score_triples(&self, triples: &[Triple]) -> Result<Vec<T>, ModelError> {
        for &t in triples {
            self.check_triple(t)?;
        }
        let w = self.point_width();
        Ok(triples
            .par_iter()
            .map_init(
                || vec![T::zero(); 3 * w],
                |bufs, &t| {
                    let (h_buf, rest) = bufs.split_at_mut(w);
                    let (t_buf, buf) = rest.split_at_mut(w);
                    self.score_unchecked(t, h_buf, t_buf, buf)
                },
            )
            .collect())
    }

    /// `‖e_h + r − e_t‖` for each triple.
    pub fn transe_score(&self, triples: &[Triple]) -> Result<Vec<T>, ModelError> {
        if self.kind != ModelKind::TransE {
            return Err(ModelError::WrongKind {
                expected: "transe",
                actual: self.kind,
            });
        }
        self.score_triples(triples)
    }

    /// Chord distance between the projected translation of the head and the
    /// tail, for each triple.
    pub fn skge_score(&self, triples: &[Triple]) -> Result<Vec<T>, ModelError> {
        if !self.kind.is_spherical() {
            return Err(ModelError::WrongKind {
                expected: "spherical",
                actual: self.kind,
            });
        }
        self.score_triples(triples)
    }

    /// Precomputes all entity representations for repeated ranking queries.
    pub fn scorer(&self) -> Scorer<'_, T> {
        Scorer {
            model: self,
            points: self.entity_points(),
        }
    }

    pub fn score_all_tails(&self, head: usize, relation: usize) -> Result<Vec<T>, ModelError> {
        self.check_entity(head)?;
        self.check_relation(relation)?;
        Ok(self.scorer().all_tails(head, relation))
    }

    pub fn score_all_heads(&self, relation: usize, tail: usize) -> Result<Vec<T>, ModelError> {
        self.check_relation(relation)?;
        self.check_entity(tail)?;
        Ok(self.scorer().all_heads(relation, tail))
    }

    /// Gradients of `upstream · score(t)` with respect to every parameter
    /// the triple touches.
    pub fn triple_backward(&self, t: Triple, upstream: T) -> Result<TripleGrad<T>, ModelError> {
        self.check_triple(t)?;
        let mut grad = TripleGrad {
            triple: t,
            head: vec![T::zero(); self.entity_width()],
            relation: vec![T::zero(); self.relation_width()],
            tail: vec![T::zero(); self.entity_width()],
            scale: T::zero(),
        };
        if upstream == T::zero() {
            return Ok(grad);
        }
        let head = self.entity_cache(t.head)?;
        let tail = self.entity_cache(t.tail)?;
        let Some((g_head, g_tail)) =
            self.point_backward(head.point(), self.relation_row(t.relation), tail.point(), upstream)?
        else {
            return Ok(grad);
        };
        grad.relation.copy_from_slice(&g_head);
        let (gh, sh) = self.entity_backward(t.head, &head, &g_head)?;
        let (gt, st) = self.entity_backward(t.tail, &tail, &g_tail)?;
        grad.head = gh;
        grad.tail = gt;
        grad.scale = sh + st;
        Ok(grad)
    }

    fn entity_cache(&self, e: usize) -> Result<EntityCache<T>, ModelError> {
        Ok(match self.kind {
            ModelKind::Skge | ModelKind::SkgeLearnableScale => {
                EntityCache::Sphere(spherize_cached(self.entity_row(e), &self.sphere)?)
            }
            _ => {
                let mut out = vec![T::zero(); self.point_width()];
                self.representation_into(e, &mut out);
                EntityCache::Plain(out)
            }
        })
    }

    /// Pulls a gradient on entity `e`'s representation back to its latent
    /// row; also returns the contribution to the sigmoid scale (zero unless
    /// the scale is learned).
    fn entity_backward(&self, e: usize, cache: &EntityCache<T>, grad_point: &[T]) -> Result<(Vec<T>, T), ModelError> {
        Ok(match (self.kind, cache) {
            (ModelKind::TransE, _) => (grad_point.to_vec(), T::zero()),
            (ModelKind::SkgeFixedNorm, _) => (
                project_backward(self.entity_row(e), self.sphere.radius, self.sphere.epsilon, grad_point)?,
                T::zero(),
            ),
            (_, EntityCache::Sphere(c)) => {
                let (g, s) = spherize_backward(c, grad_point)?;
                (
                    g,
                    if self.kind == ModelKind::SkgeLearnableScale {
                        s
                    } else {
                        T::zero()
                    },
                )
            }
            (_, EntityCache::Plain(_)) => unreachable!("spherical kinds cache the spherization"),
        })
    }

    /// Gradients of `upstream · score` with respect to the head and tail
    /// representations. The relation gradient equals the head one. `None`
    /// when the score sits at its non-differentiable zero.
    fn point_backward(
        &self,
        head: &[T],
        rel: &[T],
        tail: &[T],
        upstream: T,
    ) -> Result<Option<PointGrads<T>>, ModelError> {
        let p: Vec<T> = head.iter().zip(rel).map(|(&a, &b)| a + b).collect();
        let mut q = p.clone();
        let spherical = self.kind.is_spherical();
        if spherical {
            project_in_place(&mut q, self.sphere.radius, self.sphere.epsilon);
        }
        let diff: Vec<T> = q.iter().zip(tail).map(|(&a, &b)| a - b).collect();
        let s = norm(&diff);
        if s == T::zero() {
            return Ok(None);
        }
        let g_q: Vec<T> = diff.iter().map(|&x| upstream * x / s).collect();
        let g_tail = g_q.iter().map(|&x| -x).collect();
        let g_head = if spherical {
            project_backward(&p, self.sphere.radius, self.sphere.epsilon, &g_q)?
        } else {
            g_q
        };
        Ok(Some((g_head, g_tail)))
    }

    /// Representations of every entity used by `splits`, computed once.
    pub fn batch_points(&self, splits: &[&[Triple]]) -> Result<BatchPoints<T>, ModelError> {
        let mut slot = vec![usize::MAX; self.num_entities];
        let mut entities = Vec::new();
        for &t in splits.iter().flat_map(|s| s.iter()) {
            self.check_triple(t)?;
            for e in [t.head, t.tail] {
                if slot[e] == usize::MAX {
                    slot[e] = entities.len();
                    entities.push(e);
                }
            }
        }
        let caches = entities
            .par_iter()
            .map(|&e| self.entity_cache(e))
            .collect::<Result<Vec<_>, _>>()?;
        let w = self.point_width();
        Ok(BatchPoints {
            point_grads: vec![T::zero(); entities.len() * w],
            slot,
            entities,
            caches,
        })
    }

    /// Scores of `triples`, every one of which was passed to
    /// [`batch_points`](Self::batch_points).
    pub fn batch_scores(&self, points: &BatchPoints<T>, triples: &[Triple]) -> Vec<T> {
        let w = self.point_width();
        triples
            .par_iter()
            .map_init(
                || vec![T::zero(); w],
                |buf, &t| {
                    self.score_points(
                        points.point(t.head),
                        self.relation_row(t.relation),
                        points.point(t.tail),
                        buf,
                    )
                },
            )
            .collect()
    }

    /// Adds `Σᵢ upstreamᵢ · ∂score(tripleᵢ)/∂θ` to the relation gradient and to
    /// the per-entity representation gradients held in `points`. Call
    /// [`finish_batch_gradients`](Self::finish_batch_gradients) afterwards.
    pub fn batch_gradients(
        &self,
        points: &mut BatchPoints<T>,
        triples: &[Triple],
        upstream: &[T],
        grads: &mut ModelGrads<T>,
    ) -> Result<(), ModelError> {
        if triples.len() != upstream.len() {
            return Err(ModelError::Shape {
                what: "upstream gradient",
                expected: triples.len(),
                actual: upstream.len(),
            });
        }
        grads.check_shape(self)?;
        let shared: &BatchPoints<T> = points;
        let per_triple = triples
            .par_iter()
            .zip(upstream.par_iter())
            .filter(|(_, &u)| u != T::zero())
            .map(|(&t, &u)| {
                let g = self.point_backward(
                    shared.point(t.head),
                    self.relation_row(t.relation),
                    shared.point(t.tail),
                    u,
                )?;
                Ok(g.map(|g| (t, g)))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let (w, rw) = (self.point_width(), self.relation_width());
        let add = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        for (t, (g_head, g_tail)) in per_triple.into_iter().flatten() {
            let (h, tl) = (points.slot[t.head], points.slot[t.tail]);
            add(&mut points.point_grads[h * w..(h + 1) * w], &g_head);
            add(&mut points.point_grads[tl * w..(tl + 1) * w], &g_tail);
            add(&mut grads.relation[t.relation * rw..(t.relation + 1) * rw], &g_head);
        }
        Ok(())
    }

    /// Pulls the accumulated representation gradients back to the entity
    /// table (and the scale) of `grads`.
    pub fn finish_batch_gradients(&self, points: &BatchPoints<T>, grads: &mut ModelGrads<T>) -> Result<(), ModelError> {
        grads.check_shape(self)?;
        let w = self.point_width();
        let per_entity = points
            .entities
            .par_iter()
            .zip(&points.caches)
            .zip(points.point_grads.par_chunks(w))
            .map(|((&e, cache), g)| self.entity_backward(e, cache, g))
            .collect::<Result<Vec<_>, _>>()?;
        let ew = self.entity_width();
        for (&e, (g, s)) in points.entities.iter().zip(per_entity) {
            grads.entity[e * ew..(e + 1) * ew]
                .iter_mut()
                .zip(&g)
                .for_each(|(d, &x)| *d += x);
            grads.scale += s;
        }
        Ok(())
    }

    /// Accumulates `Σᵢ upstreamᵢ · ∂score(tripleᵢ)/∂θ` into `grads`.
    ///
    /// Per-triple gradients are computed in parallel and merged in triple
    /// order, so the result does not depend on the thread count.
    pub fn model_gradients(
        &self,
        triples: &[Triple],
        upstream: &[T],
        grads: &mut ModelGrads<T>,
    ) -> Result<(), ModelError> {
        if triples.len() != upstream.len() {
            return Err(ModelError::Shape {
                what: "upstream gradient",
                expected: triples.len(),
                actual: upstream.len(),
            });
        }
        grads.check_shape(self)?;
        let per_triple = triples
            .par_iter()
            .zip(upstream.par_iter())
            .filter(|(_, &u)| u != T::zero())
            .map(|(&t, &u)| self.triple_backward(t, u))
            .collect::<Result<Vec<_>, _>>()?;
        for g in &per_triple {
            grads.accumulate(self, g);
        }
        Ok(())
    }
}

/// Gradient contribution of a single triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGrad<T> {
    pub triple: Triple,
    pub head: Vec<T>,
    pub relation: Vec<T>,
    pub tail: Vec<T>,
    pub scale: T,
}

/// Gradients on the head and tail representations of one triple.
type PointGrads<T> = (Vec<T>, Vec<T>);

enum EntityCache<T> {
    Plain(Vec<T>),
    Sphere(SpherizeCache<T>),
}

impl<T: Scalar> EntityCache<T> {
    fn point(&self) -> &[T] {
        match self {
            Self::Plain(p) => p,
            Self::Sphere(c) => c.coords(),
        }
    }
}

/// Entity representations for the entities of one training batch, plus
/// the gradient accumulated on each of them.
pub struct BatchPoints<T> {
    /// Entity id to position in `entities`, `usize::MAX` when absent.
    slot: Vec<usize>,
    entities: Vec<usize>,
    caches: Vec<EntityCache<T>>,
    point_grads: Vec<T>,
}

impl<T: Scalar> BatchPoints<T> {
    fn point(&self, e: usize) -> &[T] {
        self.caches[self.slot[e]].point()
    }

    /// Entities in order of first appearance.
    pub fn entities(&self) -> &[usize] {
        &self.entities
    }
}

/// Dense gradient buffers mirroring a model's tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub entity: Vec<T>,
    pub relation: Vec<T>,
    pub scale: T,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &KgModel<T>) -> Self {
        Self {
            entity: vec![T::zero(); model.entity_table().len()],
            relation: vec![T::zero(); model.relation_table().len()],
            scale: T::zero(),
        }
    }

    pub fn zero(&mut self) {
        self.entity.iter_mut().for_each(|x| *x = T::zero());
        self.relation.iter_mut().for_each(|x| *x = T::zero());
        self.scale = T::zero();
    }

    fn check_shape(&self, model: &KgModel<T>) -> Result<(), ModelError> {
        if self.entity.len() != model.entity_table().len() {
            return Err(ModelError::Shape {
                what: "entity gradient",
                expected: model.entity_table().len(),
                actual: self.entity.len(),
            });
        }
        if self.relation.len() != model.relation_table().len() {
            return Err(ModelError::Shape {
                what: "relation gradient",
                expected: model.relation_table().len(),
                actual: self.relation.len(),
            });
        }
        Ok(())
    }

    fn accumulate(&mut self, model: &KgModel<T>, g: &TripleGrad<T>) {
        let ew = model.entity_width();
        let rw = model.relation_width();
        let add = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        let t = g.triple;
        add(&mut self.entity[t.head * ew..(t.head + 1) * ew], &g.head);
        add(&mut self.entity[t.tail * ew..(t.tail + 1) * ew], &g.tail);
        add(&mut self.relation[t.relation * rw..(t.relation + 1) * rw], &g.relation);
        self.scale += g.scale;
    }
}

/// Anything that can score candidate entities for link prediction.
/// Implementations may panic on out-of-range ids; callers validate first.
pub trait TripleScorer<T: Scalar>: Sync {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn score(&self, t: Triple) -> T;
    /// Scores of `(head, relation, c)` for every entity `c`.
    fn all_tails(&self, head: usize, relation: usize) -> Vec<T>;
    /// Scores of `(c, relation, tail)` for every entity `c`.
    fn all_heads(&self, relation: usize, tail: usize) -> Vec<T>;
}

/// A model with its entity representations precomputed.
pub struct Scorer<'m, T> {
    model: &'m KgModel<T>,
    points: Vec<T>,
}

impl<T: Scalar> Scorer<'_, T> {
    pub fn point(&self, e: usize) -> &[T] {
        let w = self.model.point_width();
        &self.points[e * w..(e + 1) * w]
    }

    pub fn model(&self) -> &KgModel<T> {
        self.model
    }
}

impl<T: Scalar> TripleScorer<T> for Scorer<'_, T> {
    fn num_entities(&self) -> usize {
        self.model.num_entities
    }

    fn num_relations(&self) -> usize {
        self.model.num_relations
    }

    fn score(&self, t: Triple) -> T {
        let mut buf = vec![T::zero(); self.model.point_width()];
        self.model.score_points(
            self.point(t.head),
            self.model.relation_row(t.relation),
            self.point(t.tail),
            &mut buf,
        )
    }

    fn all_tails(&self, head: usize, relation: usize) -> Vec<T> {
        let m = self.model;
        let mut pred: Vec<T> = self
            .point(head)
            .iter()
            .zip(m.relation_row(relation))
            .map(|(&h, &r)| h + r)
            .collect();
        if m.kind.is_spherical() {
            project_in_place(&mut pred, m.sphere.radius, m.sphere.epsilon);
        }
        (0..m.num_entities).map(|c| euclidean(&pred, self.point(c))).collect()
    }

    fn all_heads(&self, relation: usize, tail: usize) -> Vec<T> {
        let m = self.model;
        let rel = m.relation_row(relation);
        let tail_point = self.point(tail);
        let mut buf = vec![T::zero(); m.point_width()];
        (0..m.num_entities)
            .map(|c| m.score_points(self.point(c), rel, tail_point, &mut buf))
            .collect()
    }
}
