//! Shared training loop for every gradient-trained tagger.
//!
//! One recipe: seeded shuffling into mini-batches of 8, global gradient-norm
//! clipping at 1.0, adaptive-moment updates, and a dev-driven learning-rate
//! schedule — halve after 2 epochs without improvement of dev weighted-F1,
//! stop once the 5-decay budget is exhausted and the score still does not
//! improve. The epoch snapshot with the best dev score is what training
//! returns.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation;
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Epochs without dev improvement before a decay.
    pub patience_epochs: u32,
    /// Decay budget; the run stops when patience runs out again afterwards.
    pub max_decays: u32,
    pub initial_lr: f64,
    pub seed: u64,
    /// Safety cap on epochs.
    pub max_epochs: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            clip_norm: 1.0,
            patience_epochs: 2,
            max_decays: 5,
            initial_lr: 1e-3,
            seed: 0,
            max_epochs: 200,
        }
    }
}

/// Mutable schedule state across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: u32,
    pub lr: f64,
    pub best_dev_f1: f64,
    pub epochs_since_improve: u32,
    pub decay_count: u32,
}

impl TrainState {
    pub fn new(initial_lr: f64) -> Self {
        TrainState {
            epoch: 0,
            lr: initial_lr,
            best_dev_f1: f64::NEG_INFINITY,
            epochs_since_improve: 0,
            decay_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleDecision {
    Continue,
    /// Learning rate was halved; keep training.
    Decay,
    /// Decay budget exhausted without improvement.
    Stop,
}

/// Advance the schedule with this epoch's dev score. Improvement means a
/// strict increase of the best score; it resets patience but not the decay
/// count.
pub fn schedule_step(
    state: &mut TrainState,
    dev_f1: f64,
    cfg: &TrainConfig,
) -> ScheduleDecision {
    if dev_f1 > state.best_dev_f1 {
        state.best_dev_f1 = dev_f1;
        state.epochs_since_improve = 0;
        return ScheduleDecision::Continue;
    }
    state.epochs_since_improve += 1;
    if state.epochs_since_improve < cfg.patience_epochs {
        return ScheduleDecision::Continue;
    }
    if state.decay_count >= cfg.max_decays {
        return ScheduleDecision::Stop;
    }
    state.decay_count += 1;
    state.lr /= 2.0;
    state.epochs_since_improve = 0;
    ScheduleDecision::Decay
}

/// Rescale all gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. Non-finite gradients abort.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> Result<f64> {
    let norm = store.grad_norm()?;
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    Ok(norm)
}

/// Adaptive-moment optimizer over a parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, tensor)) in store.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let (data, grad) = tensor.data_mut_and_grad();
            for k in 0..data.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                data[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// A model the shared loop can train: parameters in a store, per-batch
/// forward/backward, and id-level prediction for dev scoring.
pub trait Trainable {
    type Sent;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Zero gradients, run forward and backward over the batch, and leave the
    /// gradient of the mean per-sentence objective in the store. Returns that
    /// mean loss. `data_frac` is |batch| / |train|, the share of any global
    /// regularizer belonging to this batch.
    fn batch_backward(
        &mut self,
        batch: &[&Self::Sent],
        data_frac: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64>;

    fn predict_ids(&self, sent: &Self::Sent) -> Result<Vec<u32>>;
    fn gold_ids<'a>(&self, sent: &'a Self::Sent) -> Result<&'a [u32]>;
    fn tag_names(&self) -> &[String];
}

/// One history line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub decayed: bool,
    pub snapshot: bool,
}

/// History serialized as line-delimited JSON.
pub fn render_history(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec).expect("history record serializes"));
        out.push('\n');
    }
    out
}

/// Dev weighted-F1 of a model over encoded sentences.
pub fn dev_weighted_f1<T: Trainable>(model: &T, dev: &[T::Sent]) -> Result<f64> {
    let mut gold: Vec<Vec<u32>> = Vec::with_capacity(dev.len());
    let mut pred: Vec<Vec<u32>> = Vec::with_capacity(dev.len());
    for s in dev {
        gold.push(model.gold_ids(s)?.to_vec());
        pred.push(model.predict_ids(s)?);
    }
    evaluation::weighted_f1_from_ids(
        model.tag_names(),
        gold.iter()
            .map(|g| g.as_slice())
            .zip(pred.iter().map(|p| p.as_slice())),
    )
}

/// Run the full recipe and leave the best-dev snapshot in the model.
pub fn train_loop<T: Trainable>(
    model: &mut T,
    cfg: &TrainConfig,
    train: &[T::Sent],
    dev: &[T::Sent],
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if dev.is_empty() {
        return Err(Error::InvalidInput("empty development set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }

    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut adam = Adam::new(model.params());
    let mut state = TrainState::new(cfg.initial_lr);
    let mut history = Vec::new();
    let mut best_snapshot: Option<Vec<Vec<f64>>> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        state.epoch = epoch;
        let lr_this_epoch = state.lr;
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&T::Sent> = chunk.iter().map(|&i| &train[i]).collect();
            let frac = batch.len() as f64 / train.len() as f64;
            let loss = model.batch_backward(&batch, frac, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {loss} at epoch {epoch}"
                )));
            }
            clip_gradients(model.params_mut(), cfg.clip_norm)?;
            adam.step(model.params_mut(), state.lr);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let dev_f1 = dev_weighted_f1(model, dev)?;
        let improved = dev_f1 > state.best_dev_f1;
        if improved {
            best_snapshot = Some(model.params().snapshot());
        }
        let decision = schedule_step(&mut state, dev_f1, cfg);
        history.push(EpochRecord {
            epoch,
            lr: lr_this_epoch,
            train_loss,
            dev_f1,
            decayed: decision == ScheduleDecision::Decay,
            snapshot: improved,
        });
        if decision == ScheduleDecision::Stop {
            break;
        }
    }

    if let Some(snap) = &best_snapshot {
        model.params_mut().restore(snap)?;
    }
    Ok(history)
}

/// Ranked grid-search cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    /// Enumeration index of the cell in the search space.
    pub index: usize,
    pub label: String,
    pub dev_f1: f64,
}

/// Rank labelled scores by dev F1, descending; ties keep enumeration order.
pub fn rank_leaderboard(scores: Vec<(String, f64)>) -> Vec<GridResult> {
    let mut board: Vec<GridResult> = scores
        .into_iter()
        .enumerate()
        .map(|(index, (label, dev_f1))| GridResult {
            index,
            label,
            dev_f1,
        })
        .collect();
    board.sort_by(|a, b| b.dev_f1.partial_cmp(&a.dev_f1).unwrap_or(std::cmp::Ordering::Equal));
    board
}

/// Train every cell of a finite space and rank by dev weighted-F1.
pub fn grid_search<C: std::fmt::Display, F>(cells: &[C], mut run: F) -> Result<Vec<GridResult>>
where
    F: FnMut(&C) -> Result<f64>,
{
    if cells.is_empty() {
        return Err(Error::InvalidInput("empty grid-search space".into()));
    }
    let mut scores = Vec::with_capacity(cells.len());
    for cell in cells {
        scores.push((cell.to_string(), run(cell)?));
    }
    Ok(rank_leaderboard(scores))
}
