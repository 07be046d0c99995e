//! Margin-ranking training with uniform corruption and Adam, plus the
//! validation-driven outer loop with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, EncodedSplit, FilterIndex, Triple};
use crate::eval::{evaluate_model, EvalError};
use crate::geometry::SpherizationParams;
use crate::model::{KgModel, ModelError, ModelGrads, ModelKind};
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("score vectors do not conform: {positives} positives, {negatives} negatives")]
    Shape { positives: usize, negatives: usize },
    #[error("non-finite gradient in {tensor} at flat index {index}")]
    NonFiniteGradient { tensor: &'static str, index: usize },
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training split is empty")]
    EmptySplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Margins and learning rates searched by the `grid` command.
pub const MARGIN_GRID: [f64; 4] = [3.0, 6.0, 9.0, 12.0];
pub const LR_GRID: [f64; 4] = [1e-3, 5e-4, 1e-4, 5e-5];

/// Lower bound kept on a learned sigmoid scale.
pub const MIN_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Negatives per positive.
    pub negatives: usize,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Consecutive non-improving validations before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Renormalize touched TransE entity rows to unit length after each update.
    pub transe_normalize_entities: bool,
    /// Resample corruptions that hit a known-true triple.
    pub filter_negatives: bool,
    pub radius: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            margin: 6.0,
            lr: 5e-4,
            batch_size: 1024,
            epochs: 1000,
            negatives: 1,
            eval_every: 50,
            patience: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            transe_normalize_entities: true,
            filter_negatives: false,
            radius: 1.0,
            delta: 1e-4,
            epsilon: 1e-9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.margin.is_nan() || self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        self.sphere::<f64>()
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn sphere<T: Scalar>(&self) -> SpherizationParams<T> {
        let mut s = SpherizationParams::new(self.dim).with_radius(T::lit(self.radius));
        s.delta = T::lit(self.delta);
        s.epsilon = T::lit(self.epsilon);
        s
    }

    pub fn init_model<T: Scalar>(
        &self,
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<KgModel<T>, TrainError> {
        self.validate()?;
        Ok(KgModel::init(
            kind,
            num_entities,
            num_relations,
            self.sphere(),
            self.seed,
        )?)
    }
}

/// Corrupts each positive `k` times, replacing the head or the tail (fair
/// coin) with an entity drawn uniformly from `0..num_entities`. Output is
/// positive-major: the negatives of positive `i` occupy `i*k..(i+1)*k`.
pub fn sample_negatives<R: Rng + ?Sized>(batch: &[Triple], num_entities: usize, k: usize, rng: &mut R) -> Vec<Triple> {
    let mut out = Vec::with_capacity(batch.len() * k);
    for &t in batch {
        for _ in 0..k {
            out.push(corrupt(t, num_entities, rng));
        }
    }
    out
}

#[inline]
fn corrupt<R: Rng + ?Sized>(t: Triple, num_entities: usize, rng: &mut R) -> Triple {
    let replace_head = rng.random_bool(0.5);
    let e = rng.random_range(0..num_entities);
    if replace_head {
        Triple::new(e, t.relation, t.tail)
    } else {
        Triple::new(t.head, t.relation, e)
    }
}

/// Like [`sample_negatives`] but redraws corruptions that are known-true,
/// giving up after a fixed number of attempts.
pub fn sample_negatives_filtered<R: Rng + ?Sized>(
    batch: &[Triple],
    num_entities: usize,
    k: usize,
    filter: &FilterIndex,
    rng: &mut R,
) -> Vec<Triple> {
    const ATTEMPTS: usize = 32;
    let mut out = Vec::with_capacity(batch.len() * k);
    for &t in batch {
        for _ in 0..k {
            let mut neg = corrupt(t, num_entities, rng);
            for _ in 1..ATTEMPTS {
                if !filter.contains(neg) {
                    break;
                }
                neg = corrupt(t, num_entities, rng);
            }
            out.push(neg);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss<T> {
    /// Mean hinge over all (positive, negative) pairs.
    pub loss: f64,
    pub grad_pos: Vec<T>,
    pub grad_neg: Vec<T>,
}

/// `mean(max(0, γ + s_pos − s_neg))` where `s_neg` holds `k` negatives per
/// positive, positive-major. Exact ties at the hinge take subgradient 0.
pub fn margin_loss<T: Scalar>(s_pos: &[T], s_neg: &[T], margin: T) -> Result<MarginLoss<T>, TrainError> {
    if s_pos.is_empty() || !s_neg.len().is_multiple_of(s_pos.len()) || s_neg.is_empty() {
        return Err(TrainError::Shape {
            positives: s_pos.len(),
            negatives: s_neg.len(),
        });
    }
    let k = s_neg.len() / s_pos.len();
    let pairs = T::lit(s_neg.len() as f64);
    let step = T::one() / pairs;
    let mut loss = 0.0f64;
    let mut grad_pos = vec![T::zero(); s_pos.len()];
    let mut grad_neg = vec![T::zero(); s_neg.len()];
    for (i, &p) in s_pos.iter().enumerate() {
        for j in i * k..(i + 1) * k {
            let hinge = margin + p - s_neg[j];
            if hinge > T::zero() {
                loss += hinge.as_f64();
                grad_pos[i] += step;
                grad_neg[j] -= step;
            }
        }
    }
    Ok(MarginLoss {
        loss: loss / s_neg.len() as f64,
        grad_pos,
        grad_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, hp: &AdamParams) {
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let c1 = T::lit(1.0 - hp.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - hp.beta2.powf(t as f64));
    let (lr, eps) = (T::lit(hp.lr), T::lit(hp.eps));
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// First and second moments for every model tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub entity_m: Vec<T>,
    pub entity_v: Vec<T>,
    pub relation_m: Vec<T>,
    pub relation_v: Vec<T>,
    pub scale_m: T,
    pub scale_v: T,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &KgModel<T>) -> Self {
        let ne = model.entity_table().len();
        let nr = model.relation_table().len();
        Self {
            entity_m: vec![T::zero(); ne],
            entity_v: vec![T::zero(); ne],
            relation_m: vec![T::zero(); nr],
            relation_v: vec![T::zero(); nr],
            scale_m: T::zero(),
            scale_v: T::zero(),
            step: 0,
        }
    }

    /// Applies one update to every tensor. Non-finite gradients abort the
    /// step before anything is modified.
    pub fn step(&mut self, model: &mut KgModel<T>, grads: &ModelGrads<T>, hp: &AdamParams) -> Result<(), TrainError> {
        if let Some(index) = grads.entity.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: "entity",
                index,
            });
        }
        if let Some(index) = grads.relation.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: "relation",
                index,
            });
        }
        if !grads.scale.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                tensor: "scale",
                index: 0,
            });
        }
        self.step += 1;
        let t = self.step;
        let learn_scale = model.kind() == ModelKind::SkgeLearnableScale;
        let (entity, relation, sphere) = model.tables_mut();
        adam_update(entity, &grads.entity, &mut self.entity_m, &mut self.entity_v, t, hp);
        adam_update(
            relation,
            &grads.relation,
            &mut self.relation_m,
            &mut self.relation_v,
            t,
            hp,
        );
        if learn_scale {
            let mut s = [sphere.scale];
            let (mut m, mut v) = ([self.scale_m], [self.scale_v]);
            adam_update(&mut s, &[grads.scale], &mut m, &mut v, t, hp);
            sphere.scale = s[0].max(T::lit(MIN_SCALE));
            self.scale_m = m[0];
            self.scale_v = v[0];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_mrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mrr: Option<f64>,
    pub stopped_early: bool,
    pub transe_normalize_entities: bool,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Owns a model and its optimizer state for the duration of training.
pub struct Trainer<T> {
    model: KgModel<T>,
    config: TrainConfig,
    adam: AdamState<T>,
    grads: ModelGrads<T>,
    shuffle_rng: ChaCha8Rng,
    negative_rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: KgModel<T>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1);
        let mut negative_rng = ChaCha8Rng::seed_from_u64(config.seed);
        negative_rng.set_stream(2);
        Ok(Self {
            adam: AdamState::new(&model),
            grads: ModelGrads::zeros_like(&model),
            model,
            config,
            shuffle_rng,
            negative_rng,
            order: Vec::new(),
            epoch: 0,
        })
    }

    pub fn model(&self) -> &KgModel<T> {
        &self.model
    }

    pub fn into_model(self) -> KgModel<T> {
        self.model
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn normalizes(&self) -> bool {
        self.model.kind() == ModelKind::TransE && self.config.transe_normalize_entities
    }

    /// One optimization step on `batch`; returns the batch's mean margin loss.
    pub fn train_batch(&mut self, batch: &[Triple], filter: Option<&FilterIndex>) -> Result<f64, TrainError> {
        let ne = self.model.num_entities();
        let k = self.config.negatives;
        let negatives = match filter {
            Some(f) if self.config.filter_negatives => {
                sample_negatives_filtered(batch, ne, k, f, &mut self.negative_rng)
            }
            _ => sample_negatives(batch, ne, k, &mut self.negative_rng),
        };
        let mut points = self.model.batch_points(&[batch, &negatives])?;
        let s_pos = self.model.batch_scores(&points, batch);
        let s_neg = self.model.batch_scores(&points, &negatives);
        let loss = margin_loss(&s_pos, &s_neg, T::lit(self.config.margin))?;
        self.grads.zero();
        self.model
            .batch_gradients(&mut points, batch, &loss.grad_pos, &mut self.grads)?;
        self.model
            .batch_gradients(&mut points, &negatives, &loss.grad_neg, &mut self.grads)?;
        self.model.finish_batch_gradients(&points, &mut self.grads)?;
        self.adam
            .step(&mut self.model, &self.grads, &AdamParams::from(&self.config))?;
        if self.normalizes() {
            for &e in points.entities() {
                let row = self.model.entity_row_mut(e);
                let n = norm(row);
                if n > T::zero() {
                    row.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        Ok(loss.loss)
    }

    /// Shuffles `train` and runs every batch once; returns the pair-weighted
    /// mean loss.
    pub fn train_epoch(&mut self, train: &EncodedSplit, filter: Option<&FilterIndex>) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        self.epoch += 1;
        if self.order.len() != train.len() {
            self.order = (0..train.len()).collect();
        }
        self.order.shuffle(&mut self.shuffle_rng);
        let order = std::mem::take(&mut self.order);
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for chunk in order.chunks(self.config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train.triples[i]));
            total += self.train_batch(&batch, filter)? * batch.len() as f64;
        }
        self.order = order;
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: self.epoch });
        }
        Ok(mean)
    }
}

pub struct TrainOutcome<T> {
    /// Best validation checkpoint, or the final model when validation never ran.
    pub best: KgModel<T>,
    pub log: TrainLog,
}

/// Full training loop with periodic filtered validation and early stopping.
/// `on_epoch` sees every record as it is produced.
pub fn train_with<T: Scalar>(
    model: KgModel<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    record_timing: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    let filter = dataset.filter_index();
    let mut trainer = Trainer::new(model, config.clone())?;
    let validate = config.eval_every > 0 && !dataset.valid.is_empty();
    let mut log = TrainLog {
        transe_normalize_entities: trainer.normalizes(),
        ..TrainLog::default()
    };
    let mut best: Option<KgModel<T>> = None;
    let mut stale = 0usize;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mean_loss = trainer.train_epoch(&dataset.train, Some(&filter))?;
        let mut val_mrr = None;
        if validate && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let mrr = evaluate_model(trainer.model(), &dataset.valid, &filter)?.metrics.mrr;
            val_mrr = Some(mrr);
            if log.best_val_mrr.is_none_or(|b| mrr > b) {
                log.best_val_mrr = Some(mrr);
                log.best_epoch = Some(epoch);
                best = Some(trainer.model().clone());
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            val_mrr,
            seconds: record_timing.then(|| start.elapsed().as_secs_f64()),
        };
        on_epoch(&record);
        log.records.push(record);
        if val_mrr.is_some() && config.patience > 0 && stale >= config.patience {
            log.stopped_early = epoch < config.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| trainer.into_model()),
        log,
    })
}

pub fn train<T: Scalar>(
    model: KgModel<T>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with(model, dataset, config, false, |_| {})
}
