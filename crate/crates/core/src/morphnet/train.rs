use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::MorphSequence;
use crate::morphnet::{Forward, ForwardOptions, MorphModel};
use crate::tensorcore::{reduce_grads, AdamConfig, AdamState, Grads, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop as soon as the per-token training NLL drops below this.
    pub target_nll: Option<f64>,
    pub clip_norm: Option<f64>,
    pub dropout: f64,
    pub zero_edit_vector: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 50,
            patience: 3,
            max_steps: None,
            target_nll: None,
            clip_norm: None,
            dropout: 0.0,
            zero_edit_vector: false,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Per-token NLL averaged over the epoch's batches; absent for epoch 0.
    pub train_nll: Option<f64>,
    pub valid_nll: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    MaxSteps,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
    pub steps: usize,
    pub stop: StopReason,
}

/// Per-token NLL of `seqs` (summed NLL over summed token count).
pub fn corpus_nll(model: &MorphModel, seqs: &[MorphSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InsufficientData("no sequences to score".into()));
    }
    let parts = seqs.par_iter().map(|s| model.sequence_nll(s)).collect::<Result<Vec<_>>>()?;
    let (loss, tokens) = parts.iter().fold((0.0, 0usize), |(l, t), &(a, b)| (l + a, t + b));
    Ok(loss / tokens as f64)
}

fn example_grads(
    model: &MorphModel,
    seq: &MorphSequence,
    options: ForwardOptions,
    dropout_seed: u64,
) -> Result<(Grads, f64, usize)> {
    let mut tape = Tape::new(&model.params);
    let out = Forward::new(&mut tape, model).with_options(options, dropout_seed).sequence_nll(seq)?;
    let grads = tape.backward(out.loss)?;
    Ok((grads, tape.scalar(out.loss), out.tokens))
}

/// Minimizes the batch-mean sequence NLL with Adam. Validation NLL is
/// measured before training and after every epoch; the parameters with the
/// lowest validation NLL are restored on return. With an empty validation
/// set the training data is used for selection.
pub fn train(
    model: &mut MorphModel,
    train_set: &[MorphSequence],
    valid_set: &[MorphSequence],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::InvalidParam("batch size must be positive and dropout in [0, 1)".into()));
    }
    let selection = if valid_set.is_empty() { train_set } else { valid_set };
    let options = ForwardOptions { zero_edit_vector: cfg.zero_edit_vector, dropout: cfg.dropout };
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig { lr: cfg.lr, clip_norm: cfg.clip_norm, ..AdamConfig::default() },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let init_nll = corpus_nll(model, selection)?;
    info!("epoch 0: valid nll {init_nll:.4}");
    let mut history = TrainHistory {
        epochs: vec![EpochRecord { epoch: 0, steps: 0, train_nll: None, valid_nll: init_nll }],
        best_epoch: 0,
        best_valid_nll: init_nll,
        steps: 0,
        stop: StopReason::MaxEpochs,
    };
    let mut best_params = model.params.clone();
    let mut stale = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_tokens) = (0.0, 0usize);
        let mut stop = None;
        for batch in order.chunks(cfg.batch_size) {
            let step = history.steps as u64;
            let model_ref: &MorphModel = model;
            let parts = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let seed = cfg.seed ^ (step << 20) ^ k as u64;
                    example_grads(model_ref, &train_set[i], options, seed)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch}, step {step}: {what}")),
                    other => other,
                })?;
            let grads: Vec<Grads> = parts.iter().map(|p| p.0.clone()).collect();
            let mut total = reduce_grads(&model.params, &grads);
            total.scale(1.0 / batch.len() as f64);
            for (_, loss, tokens) in &parts {
                epoch_loss += loss;
                epoch_tokens += tokens;
            }
            adam.step(&mut model.params, &mut total)?;
            history.steps += 1;
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                stop = Some(StopReason::MaxSteps);
                break;
            }
        }
        let train_nll = epoch_loss / epoch_tokens as f64;
        let valid_nll = corpus_nll(model, selection)?;
        info!("epoch {epoch}: train nll {train_nll:.4}, valid nll {valid_nll:.4}, steps {}", history.steps);
        history.epochs.push(EpochRecord { epoch, steps: history.steps, train_nll: Some(train_nll), valid_nll });
        if valid_nll < history.best_valid_nll {
            history.best_valid_nll = valid_nll;
            history.best_epoch = epoch;
            best_params = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if let Some(target) = cfg.target_nll {
            // the running mean lags the current parameters, so confirm on a full pass
            if train_nll < 2.0 * target {
                let now = if valid_set.is_empty() { valid_nll } else { corpus_nll(model, train_set)? };
                debug!("full-pass train nll {now:.4}");
                if now < target {
                    stop = Some(StopReason::TargetReached);
                }
            }
        }
        if stop.is_none() && stale >= cfg.patience {
            stop = Some(StopReason::Patience);
        }
        if let Some(reason) = stop {
            history.stop = reason;
            break 'epochs;
        }
    }
    model.params = best_params;
    Ok(history)
}
