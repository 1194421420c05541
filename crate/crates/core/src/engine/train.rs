use super::{rng_streams, Engine, Mode};
use crate::config::BatchOrder;
use crate::error::{Error, Result};
use crate::events::{EventStream, TemporalEvent};
use crate::heads::class_weights;
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Event-weighted mean joint loss over the training batches.
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Whether this epoch set a new best validation loss.
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

/// Patience-based stopping rule on a loss that should decrease.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            waited: 0,
        }
    }

    /// Records one evaluation; returns whether it improved on the best so far.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.waited = 0;
            true
        } else {
            self.waited += 1;
            false
        }
    }

    /// True once `patience` evaluations in a row failed to improve.
    pub fn should_stop(&self) -> bool {
        self.waited >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Consecutive, non-overlapping chunks of `size` events.
pub fn batches(events: &[TemporalEvent], size: usize) -> Vec<&[TemporalEvent]> {
    events.chunks(size.max(1)).collect()
}

/// [`train_with_order_seed`] with the run seed driving batch order.
pub fn train(engine: &mut Engine, train: &EventStream, validation: &EventStream) -> Result<TrainLog> {
    let seed = engine.config().seed;
    train_with_order_seed(engine, train, validation, seed)
}

/// Epoch loop with early stopping on validation loss.
///
/// Every epoch starts from reset memory and replays the training batches
/// (chronologically, or in an order drawn from `order_seed` when the config
/// asks for shuffled batches), then continues into the validation batches
/// without parameter updates. The parameters of the best validation epoch
/// are restored at the end. With an empty validation partition the training
/// loss stands in for the validation loss.
pub fn train_with_order_seed(
    engine: &mut Engine,
    train: &EventStream,
    validation: &EventStream,
    order_seed: u64,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::Contract("training partition is empty".into()));
    }
    let cfg = engine.config().clone();
    engine.set_class_weights(class_weights(&train.category_counts(), train.category_names())?)?;
    let mut order_rng = Rng::new(order_seed).fork(rng_streams::ORDER);
    let train_batches = batches(train.events(), cfg.batch_size);
    let val_batches = batches(validation.events(), cfg.batch_size);

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = engine.model.params.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    for epoch in 1..=cfg.epochs {
        engine.reset_state();
        let mut order: Vec<usize> = (0..train_batches.len()).collect();
        let shuffled = cfg.batch_order == BatchOrder::Shuffled;
        if shuffled {
            order_rng.shuffle(&mut order);
        }
        engine.set_allow_unordered(shuffled);
        let mut sum = 0.0;
        for (pos, &b) in order.iter().enumerate() {
            let out = engine
                .process_batch(train_batches[b], Mode::Train, 0)
                .map_err(|e| annotate(e, epoch, pos))?;
            sum += out.loss.expect("training computes a loss").total * train_batches[b].len() as f64;
        }
        engine.set_allow_unordered(false);
        let train_loss = sum / train.len() as f64;

        let validation_loss = if validation.is_empty() {
            train_loss
        } else {
            let mut sum = 0.0;
            for (pos, b) in val_batches.iter().enumerate() {
                let out = engine
                    .process_batch(b, Mode::Eval, 0)
                    .map_err(|e| annotate(e, epoch, pos))?;
                sum += out.loss.expect("evaluation computes a loss").total * b.len() as f64;
            }
            sum / validation.len() as f64
        };

        let improved = stopper.observe(validation_loss);
        if improved {
            log.best_validation_loss = validation_loss;
            log.best_epoch = epoch;
            best = engine.model.params.clone();
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
            improved,
        });
        if stopper.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    engine.model.params = best;
    engine.reset_state();
    Ok(log)
}

fn annotate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}
