//! Joint optimisation: schedule, clipping, variational noise, Adam, the
//! per-step objective, the data stream and greedy decoding.

mod config;
mod decode;
mod eval;
mod optim;
mod step;

pub use config::{AugmentConfig, DataConfig, LossConfig, RunConfig, TempoMode, TrainConfig};
pub use decode::{greedy_decode, DecodeLimits};
pub use eval::{retrieval_eval, RetrievalReport};
pub use optim::{
    adam_update, add_variational_noise, clip_global_norm, global_norm, lr_at, AdamHyper, AdamState,
};
pub use step::{
    augment_view, augmented_branch, batch_gradients, siamese_loss, supervised_loss, target_branch,
    train_step, AugmentedView, Batch, BatchGradients, MetricsRecord, StepOptions,
    SupervisedExample, TrainState,
};

use rand::Rng;

use crate::error::Result;
use crate::frontend::{FeatureSequence, SyntheticCorpus};
use crate::rng::rng_for;
use crate::scalar::Scalar;

const DATA_STREAM: u64 = 0x4441;

/// Synthetic training data: utterances `0..num_supervised` are labelled,
/// the next `num_unsupervised` are used without labels. Label ids are
/// class + 1 (0 is blank).
#[derive(Debug, Clone)]
pub struct ToyData {
    pub corpus: SyntheticCorpus,
    pub cfg: DataConfig,
}

impl ToyData {
    pub fn new(cfg: &DataConfig) -> Result<Self> {
        Ok(Self {
            corpus: SyntheticCorpus::new(cfg.corpus_spec())?,
            cfg: cfg.clone(),
        })
    }

    pub fn supervised<S: Scalar>(&self, i: usize) -> SupervisedExample<S> {
        let u = self.corpus.utterance::<S>(i as u64);
        SupervisedExample {
            features: u.features,
            labels: u.symbols.iter().map(|s| s + 1).collect(),
        }
    }

    pub fn unsupervised<S: Scalar>(&self, i: usize) -> FeatureSequence<S> {
        self.corpus
            .utterance::<S>((self.cfg.num_supervised + i) as u64)
            .features
    }

    /// Independent uniform draws (with replacement) of each half of the
    /// batch, seeded by `(seed, step)`.
    pub fn sample_batch<S: Scalar>(&self, train: &TrainConfig, step: u64) -> Batch<S> {
        let mut rng = rng_for(train.seed, &[DATA_STREAM, step]);
        let sup = if self.cfg.num_supervised == 0 {
            Vec::new()
        } else {
            (0..train.batch_size_sup)
                .map(|_| self.supervised(rng.random_range(0..self.cfg.num_supervised)))
                .collect()
        };
        let unsup = if self.cfg.num_unsupervised == 0 {
            Vec::new()
        } else {
            (0..train.batch_size_unsup)
                .map(|_| self.unsupervised(rng.random_range(0..self.cfg.num_unsupervised)))
                .collect()
        };
        Batch { sup, unsup }
    }
}

/// Runs steps until `state.step == until_step`, calling `on_step` after
/// each.
pub fn train_until<S: Scalar>(
    mut state: TrainState<S>,
    data: &ToyData,
    cfg: &RunConfig,
    until_step: u64,
    opts: &StepOptions,
    mut on_step: impl FnMut(&TrainState<S>, &MetricsRecord) -> Result<()>,
) -> Result<TrainState<S>> {
    while state.step < until_step {
        let batch = data.sample_batch(&cfg.train, state.step);
        let (next, record) = train_step(&state, &batch, cfg, opts)?;
        state = next;
        on_step(&state, &record)?;
    }
    Ok(state)
}
