//! Pre-training and retrieval-augmented fine-tuning loops.

use crate::head::Model;
use crate::seqdata::RawSequence;
use crate::tape::Tape;
use crate::tka::{init_fusion_params, EmbeddingStore};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    /// Mean total loss over the last (up to) 100 steps.
    pub tail_mean_loss: f64,
}

fn summarize(losses: &[f64]) -> TrainReport {
    let tail = &losses[losses.len().saturating_sub(100)..];
    TrainReport {
        steps: losses.len(),
        final_loss: losses.last().copied().unwrap_or(0.0),
        tail_mean_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
    }
}

/// One Adam step per sequence, visiting the training set in a reshuffled
/// order each epoch, for `steps` steps total.
pub fn pretrain(
    model: &mut Model,
    train_set: &[RawSequence],
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("pretrain: empty train set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut losses = Vec::with_capacity(steps);
    let mut cursor = order.len();
    for _ in 0..steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let seq = &train_set[order[cursor]];
        cursor += 1;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, seq, None)?;
        let grads = tape.backward(fwd.terms.total)?;
        grads.apply_to(&tape, &mut model.params)?;
        model.params.adam_step(lr, BETA1, BETA2, EPS)?;
        losses.push(fwd.terms.report.total);
    }
    Ok(summarize(&losses))
}

/// Fine-tune with the embedding bank in the loop. The bank is built from
/// the training set and re-encoded at the start of every epoch so entries
/// follow the updated encoder.
pub fn finetune(
    model: &mut Model,
    train_set: &[RawSequence],
    k_neighbors: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(EmbeddingStore, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("finetune: empty train set".into()));
    }
    let candidates = if model.cfg.exclude_self {
        train_set.len().saturating_sub(1)
    } else {
        train_set.len()
    };
    if k_neighbors > candidates {
        return Err(Error::InvalidArgument(format!(
            "finetune: K = {k_neighbors} exceeds {candidates} retrieval candidates"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_fusion_params(&mut model.params, k_neighbors, &mut rng);
    let mut store = EmbeddingStore::build(&model.encoder, &model.params, train_set, model.cfg.k)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut losses = Vec::with_capacity(steps);
    let mut cursor = order.len();
    for step in 0..steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
            if step > 0 {
                store.refresh(&model.encoder, &model.params, train_set, model.cfg.k)?;
            }
        }
        let seq = &train_set[order[cursor]];
        cursor += 1;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, seq, Some((&store, k_neighbors)))?;
        let grads = tape.backward(fwd.terms.total)?;
        grads.apply_to(&tape, &mut model.params)?;
        model.params.adam_step(lr, BETA1, BETA2, EPS)?;
        losses.push(fwd.terms.report.total);
    }
    // Leave the bank consistent with the final parameters.
    store.refresh(&model.encoder, &model.params, train_set, model.cfg.k)?;
    Ok((store, summarize(&losses)))
}
