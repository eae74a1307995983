//! Symmetric InfoNCE training with AdamW and a cosine-annealed step size.
//!
//! Only the first element of each pair goes through the model. With anchors
//! `F = f(A)` and raw partners `P`, the in-batch logits are
//! `S = F Pᵀ / τ` and the loss averages row-wise and column-wise
//! cross-entropy against the diagonal.
//!
//! In sampled-negative modes each step draws two pools of `k` entities. The
//! anchor direction scores `f(a_i)` against `[p_i, pool1...]`; the partner
//! direction scores raw `p_i` against `[f(a_i), f(pool2)...]`. Pool entries
//! that are the anchor, the partner or a known positive of the row are
//! masked out of that row's softmax.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, Matrix};
use crate::model::{CalModel, GradientBuffer, ParamKind};
use crate::rng::SeededRng;
use crate::sampler::{make_batches, DegreeBins, NegativeMode};
use crate::scalar::Real;
use crate::types::{EmbeddingSet, PairIndex, PairSet};

/// Consecutive epochs above `DIVERGENCE_FACTOR` × initial loss that abort a run.
pub const DIVERGENCE_PATIENCE: usize = 5;
pub const DIVERGENCE_FACTOR: f64 = 3.0;

// Seed streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub anneal_t_max: usize,
    pub seed: u64,
    pub negative_mode: NegativeMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: crate::model::DEFAULT_HIDDEN,
            batch_size: 512,
            temperature: 0.05,
            lr: 3e-4,
            weight_decay: 1e-4,
            epochs: 100,
            anneal_t_max: 100,
            seed: 42,
            negative_mode: NegativeMode::InBatch,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.anneal_t_max == 0 {
            return bad("anneal_t_max must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.negatives_per_step() == Some(0) {
            return bad("random negative count k must be at least 1");
        }
        Ok(())
    }

    /// Pool size for sampled-negative modes, `None` for in-batch.
    pub fn negatives_per_step(&self) -> Option<usize> {
        match self.negative_mode {
            NegativeMode::InBatch => None,
            NegativeMode::RandomK { k } | NegativeMode::DegreeMatched { k } => {
                Some(k.unwrap_or(self.batch_size - 1))
            }
        }
    }
}

/// Cosine annealing without restarts: `lr (1 + cos(π e / T)) / 2`, held at 0
/// once `e ≥ T`.
pub fn cosine_lr(base: f64, epoch: usize, t_max: usize) -> f64 {
    let e = epoch.min(t_max) as f64;
    base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * e / t_max as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Loss of the very first step.
    pub initial_loss: f64,
    pub final_alpha: f64,
    pub steps: usize,
    pub batches_per_epoch: usize,
    pub dropped_per_epoch: usize,
    /// Rows whose gradient was zeroed by the normalization guard.
    pub degenerate_rows: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Loss, accuracy and the gradient with respect to the transformed anchors.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub accuracy: f64,
    pub d_anchor: Matrix<T>,
}

fn check_pair_shapes<T>(anchors: &Matrix<T>, partners: &Matrix<T>) -> Result<()> {
    if anchors.rows() < 2 {
        return Err(Error::Config(format!(
            "contrastive batch needs at least 2 rows, got {}",
            anchors.rows()
        )));
    }
    if anchors.rows() != partners.rows() || anchors.cols() != partners.cols() {
        return Err(Error::Shape {
            expected: anchors.rows() * anchors.cols(),
            found: partners.rows() * partners.cols(),
        });
    }
    Ok(())
}

/// In-place softmax of `row`; returns `(log-sum-exp, argmax)` with ties
/// going to the first index.
fn softmax_row<T: Real>(row: &mut [T]) -> (f64, usize) {
    let mut arg = 0;
    let mut max = T::NEG_INFINITY;
    for (j, v) in row.iter().enumerate() {
        if *v > max {
            max = *v;
            arg = j;
        }
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::ONE / sum;
    row.iter_mut().for_each(|v| *v *= inv);
    (max.to_f64() + libm::log(sum.to_f64()), arg)
}

/// Symmetric in-batch InfoNCE on already-transformed anchors.
pub fn in_batch_info_nce<T: Real>(anchors: &Matrix<T>, partners: &Matrix<T>, tau: f64) -> Result<LossOutput<T>> {
    check_pair_shapes(anchors, partners)?;
    let b = anchors.rows();
    let inv_tau = T::from_f64(1.0 / tau);
    let mut logits = Matrix::zeros(b, b);
    gemm(inv_tau, anchors, false, partners, true, T::ZERO, &mut logits);
    let diag: Vec<f64> = (0..b).map(|i| logits.get(i, i).to_f64()).collect();

    let mut rows = logits.clone();
    let mut loss_rows = 0.0;
    let mut correct = 0usize;
    for i in 0..b {
        let (lse, arg) = softmax_row(rows.row_mut(i));
        loss_rows += lse - diag[i];
        if arg == i {
            correct += 1;
        }
    }
    // Column softmax via the transpose.
    let mut cols = Matrix::from_fn(b, b, |r, c| logits.get(c, r));
    let mut loss_cols = 0.0;
    for j in 0..b {
        let (lse, _) = softmax_row(cols.row_mut(j));
        loss_cols += lse - diag[j];
    }
    let loss = 0.5 * (loss_rows + loss_cols) / b as f64;

    // dL/dS = ((P_row - I) + (P_col - I)) / 2B; cols holds P_colᵀ.
    let scale = T::from_f64(0.5 / b as f64);
    let mut d_logits = rows;
    for i in 0..b {
        let row = d_logits.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v += cols.get(j, i);
        }
        row[i] -= T::from_f64(2.0);
        row.iter_mut().for_each(|v| *v *= scale);
    }
    let mut d_anchor = Matrix::zeros(b, anchors.cols());
    gemm(inv_tau, &d_logits, false, partners, false, T::ZERO, &mut d_anchor);
    Ok(LossOutput {
        loss,
        accuracy: correct as f64 / b as f64,
        d_anchor,
    })
}

/// Raw pools of sampled negatives for one step, with per-row masks
/// (`true` = excluded from that row's softmax), both `B x k` row-major.
#[derive(Debug, Clone)]
pub struct NegativePools<T> {
    /// Candidates scored against the transformed anchors (kept raw).
    pub partner_pool: Matrix<T>,
    /// Candidates that are transformed and scored against raw partners.
    pub anchor_pool: Matrix<T>,
    pub partner_mask: Vec<bool>,
    pub anchor_mask: Vec<bool>,
}

/// Loss over sampled pools; returns gradients for the transformed anchors
/// and for the transformed anchor pool.
pub fn sampled_info_nce<T: Real>(
    anchors: &Matrix<T>,
    partners: &Matrix<T>,
    partner_pool: &Matrix<T>,
    anchor_pool_out: &Matrix<T>,
    partner_mask: &[bool],
    anchor_mask: &[bool],
    tau: f64,
) -> Result<(LossOutput<T>, Matrix<T>)> {
    check_pair_shapes(anchors, partners)?;
    let b = anchors.rows();
    let d = anchors.cols();
    let k = partner_pool.rows();
    if anchor_pool_out.rows() != k
        || partner_pool.cols() != d
        || anchor_pool_out.cols() != d
        || partner_mask.len() != b * k
        || anchor_mask.len() != b * k
    {
        return Err(Error::Shape {
            expected: b * k,
            found: partner_mask.len(),
        });
    }
    let inv_tau = T::from_f64(1.0 / tau);
    let mut g1 = Matrix::zeros(b, k);
    gemm(inv_tau, anchors, false, partner_pool, true, T::ZERO, &mut g1);
    let mut g2 = Matrix::zeros(b, k);
    gemm(inv_tau, partners, false, anchor_pool_out, true, T::ZERO, &mut g2);

    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut coef_pos = vec![T::ZERO; b];
    let mut row = vec![T::ZERO; k + 1];
    for (dir, (g, mask)) in [(&mut g1, partner_mask), (&mut g2, anchor_mask)].into_iter().enumerate() {
        for i in 0..b {
            row[0] = dot(anchors.row(i), partners.row(i)) * inv_tau;
            let gi = g.row_mut(i);
            for j in 0..k {
                row[j + 1] = if mask[i * k + j] { T::NEG_INFINITY } else { gi[j] };
            }
            let pos = row[0].to_f64();
            let (lse, arg) = softmax_row(&mut row);
            loss += lse - pos;
            if dir == 0 && arg == 0 {
                correct += 1;
            }
            coef_pos[i] += row[0] - T::ONE;
            gi.copy_from_slice(&row[1..]);
        }
    }
    let scale = 0.5 / b as f64;
    // Both directions share the positive logit f(a_i)·p_i.
    let grad_scale = T::from_f64(scale / tau);
    let mut d_anchor = Matrix::zeros(b, d);
    for i in 0..b {
        let c = coef_pos[i] * grad_scale;
        for (o, p) in d_anchor.row_mut(i).iter_mut().zip(partners.row(i)) {
            *o = c * *p;
        }
    }
    gemm(grad_scale, &g1, false, partner_pool, false, T::ONE, &mut d_anchor);
    let mut d_pool = Matrix::zeros(k, d);
    gemm(grad_scale, &g2, true, partners, false, T::ZERO, &mut d_pool);
    Ok((
        LossOutput {
            loss: loss * scale,
            accuracy: correct as f64 / b as f64,
            d_anchor,
        },
        d_pool,
    ))
}

/// Everything one optimization step consumes.
#[derive(Debug, Clone)]
pub struct StepInputs<T> {
    pub anchors: Matrix<T>,
    pub partners: Matrix<T>,
    pub negatives: Option<NegativePools<T>>,
}

/// Full loss of one step and its parameter gradients.
pub fn step_loss<T: Real>(model: &CalModel<T>, step: &StepInputs<T>, tau: f64) -> Result<(f64, f64, GradientBuffer<T>)> {
    let b = step.anchors.rows();
    match &step.negatives {
        None => {
            let (fa, cache) = model.forward(&step.anchors)?;
            let out = in_batch_info_nce(&fa, &step.partners, tau)?;
            let grads = model.backward(&cache, &out.d_anchor)?;
            Ok((out.loss, out.accuracy, grads))
        }
        Some(pools) => {
            let k = pools.anchor_pool.rows();
            let d = step.anchors.cols();
            let mut stacked = Matrix::zeros(b + k, d);
            stacked.as_mut_slice()[..b * d].copy_from_slice(step.anchors.as_slice());
            stacked.as_mut_slice()[b * d..].copy_from_slice(pools.anchor_pool.as_slice());
            let (out, cache) = model.forward(&stacked)?;
            let fa = Matrix::from_vec(b, d, out.as_slice()[..b * d].to_vec())?;
            let fpool = Matrix::from_vec(k, d, out.as_slice()[b * d..].to_vec())?;
            let (loss, d_pool) = sampled_info_nce(
                &fa,
                &step.partners,
                &pools.partner_pool,
                &fpool,
                &pools.partner_mask,
                &pools.anchor_mask,
                tau,
            )?;
            let mut d_out = Matrix::zeros(b + k, d);
            d_out.as_mut_slice()[..b * d].copy_from_slice(loss.d_anchor.as_slice());
            d_out.as_mut_slice()[b * d..].copy_from_slice(d_pool.as_slice());
            let grads = model.backward(&cache, &d_out)?;
            Ok((loss.loss, loss.accuracy, grads))
        }
    }
}

/// AdamW with decoupled weight decay on linear weights and biases only.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: GradientBuffer<T>,
    v: GradientBuffer<T>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(model: &CalModel<T>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            m: GradientBuffer::zeros_like(model),
            v: GradientBuffer::zeros_like(model),
            t: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut CalModel<T>, grads: &GradientBuffer<T>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_b1 = T::from_f64(1.0 - self.beta1);
        let one_b2 = T::from_f64(1.0 - self.beta2);
        let step_size = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / libm::sqrt(bc2));
        let eps = T::from_f64(self.eps);
        let decay = T::from_f64(1.0 - lr * self.weight_decay);

        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        };
        let params = model.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((kind, p), (_, g)), (_, m)), (_, v)) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            let decayed = matches!(kind, ParamKind::Weight | ParamKind::Bias);
            for i in 0..p.len() {
                if decayed {
                    p[i] *= decay;
                }
                update(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        update(
            &mut model.alpha_logit,
            grads.alpha_logit,
            &mut self.m.alpha_logit,
            &mut self.v.alpha_logit,
        );
    }
}

/// Draws the two negative pools for a batch and builds the row masks.
struct PoolSampler<'a> {
    k: usize,
    n_entities: usize,
    positives: &'a PairIndex,
    bins: Option<DegreeBins>,
    rng: SeededRng,
}

impl PoolSampler<'_> {
    fn draw_pool(&mut self, like: &[usize]) -> Vec<usize> {
        match &self.bins {
            None => (0..self.k).map(|_| self.rng.index(self.n_entities)).collect(),
            Some(bins) => (0..self.k)
                .map(|j| {
                    let template = like[j % like.len()];
                    bins.draw_exact(bins.bin_of(template), &mut self.rng)
                })
                .collect(),
        }
    }

    fn mask(&self, rows: &[usize], other: &[usize], pool: &[usize]) -> Vec<bool> {
        let mut mask = Vec::with_capacity(rows.len() * pool.len());
        for (&r, &o) in rows.iter().zip(other) {
            for &c in pool {
                mask.push(c == r || c == o || self.positives.contains(r, c));
            }
        }
        mask
    }

    fn sample(&mut self, anchors: &[usize], partners: &[usize], embeddings: &EmbeddingSet) -> NegativePools<f32> {
        let pool1 = self.draw_pool(partners);
        let pool2 = self.draw_pool(anchors);
        NegativePools {
            partner_mask: self.mask(anchors, partners, &pool1),
            anchor_mask: self.mask(partners, anchors, &pool2),
            partner_pool: embeddings.gather(&pool1),
            anchor_pool: embeddings.gather(&pool2),
        }
    }
}

/// Fresh model for `config`, initialized from the run seed.
pub fn init_for(config: &TrainConfig, dim: usize) -> Result<CalModel<f32>> {
    let mut rng = SeededRng::new(SeededRng::child_seed(config.seed, STREAM_INIT));
    CalModel::init(dim, config.hidden, &mut rng)
}

/// Initializes a model from `config.seed` and trains it.
pub fn fit(
    positives: &PairSet,
    embeddings: &EmbeddingSet,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(CalModel<f32>, TrainLog)> {
    config.validate()?;
    let model = init_for(config, embeddings.dim())?;
    train(model, positives, embeddings, config, on_epoch)
}

/// Trains `model` for `config.epochs` epochs over `positives`.
pub fn train(
    mut model: CalModel<f32>,
    positives: &PairSet,
    embeddings: &EmbeddingSet,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(CalModel<f32>, TrainLog)> {
    config.validate()?;
    if model.dim() != embeddings.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            found: embeddings.dim(),
        });
    }
    if positives.len() < config.batch_size {
        return Err(Error::Config(format!(
            "{} training pairs is fewer than batch_size {}",
            positives.len(),
            config.batch_size
        )));
    }
    let n_entities = embeddings.len();
    let pairs = positives.pairs();
    let index = PairIndex::new(n_entities, positives.iter());
    let mut sampler = config.negatives_per_step().map(|k| PoolSampler {
        k,
        n_entities,
        positives: &index,
        bins: match config.negative_mode {
            NegativeMode::DegreeMatched { .. } => {
                let degrees: Vec<u32> = (0..n_entities).map(|e| index.neighbors(e).len() as u32).collect();
                Some(DegreeBins::new(&degrees))
            }
            _ => None,
        },
        rng: SeededRng::new(SeededRng::child_seed(config.seed, STREAM_NEGATIVES)),
    });

    let batch_seed = SeededRng::child_seed(config.seed, STREAM_BATCHES);
    let mut optimizer = AdamW::new(
        &model,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let mut log = TrainLog {
        epochs: Vec::with_capacity(config.epochs),
        initial_loss: f64::NAN,
        final_alpha: 0.0,
        steps: 0,
        batches_per_epoch: positives.len() / config.batch_size,
        dropped_per_epoch: positives.len() % config.batch_size,
        degenerate_rows: 0,
        adam_beta1: config.adam_beta1,
        adam_beta2: config.adam_beta2,
        adam_eps: config.adam_eps,
        wall_time_secs: None,
    };
    let mut last_good = model.clone();
    let mut strikes = 0usize;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, epoch, config.anneal_t_max);
        let batches = make_batches(pairs.len(), config.batch_size, SeededRng::child_seed(batch_seed, epoch as u64))?;
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for batch in &batches {
            let a_idx: Vec<usize> = batch.iter().map(|&i| pairs[i].0).collect();
            let b_idx: Vec<usize> = batch.iter().map(|&i| pairs[i].1).collect();
            let step = StepInputs {
                anchors: embeddings.gather(&a_idx),
                partners: embeddings.gather(&b_idx),
                negatives: sampler.as_mut().map(|s| s.sample(&a_idx, &b_idx, embeddings)),
            };
            let (loss, acc, grads) = step_loss(&model, &step, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss,
                    last_good: Some(alloc::boxed::Box::new(last_good)),
                });
            }
            if log.steps == 0 {
                log.initial_loss = loss;
            }
            log.steps += 1;
            log.degenerate_rows += grads.degenerate_rows;
            loss_sum += loss;
            acc_sum += acc;
            optimizer.step(&mut model, &grads, lr);
        }
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            accuracy: acc_sum / n,
            lr,
        };
        if record.loss > DIVERGENCE_FACTOR * log.initial_loss {
            strikes += 1;
            if strikes >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    epoch,
                    loss: record.loss,
                    last_good: Some(alloc::boxed::Box::new(last_good)),
                });
            }
        } else {
            strikes = 0;
            last_good = model.clone();
        }
        on_epoch(&record);
        log.epochs.push(record);
    }
    log.final_alpha = model.alpha().to_f64();
    Ok((model, log))
}
