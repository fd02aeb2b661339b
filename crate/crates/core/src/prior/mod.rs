//! Joint score models: the analytic Gaussian-mixture oracle and the learned
//! noise-conditional score network.

pub mod checkpoint;
pub mod gm;
pub mod net;
pub mod stack;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointDescriptor};
pub use gm::{gm_log_density, gm_score, GaussianMixture, GmPrior};
pub use net::{score_net_forward, ScoreNet, ScoreNetParams};
pub use stack::{Channels, Stack};
pub use train::{
    dsm_loss, dsm_loss_and_grad, load_split, train_on_dataset, train_score, write_log_csv, EpochLog, TrainConfig,
    LOSS_EXPLOSION_FACTOR,
    TrainOutcome,
};

use crate::error::Result;

/// Anything that can estimate `∇ log p_σ(x)` for a stacked iterate.
pub trait ScoreSource: Sync {
    /// Channel set the source models.
    fn channels(&self) -> Channels;

    fn score(&self, x: &Stack, sigma: f64) -> Result<Stack>;
}

/// A source that always returns zero, i.e. a flat prior.
#[derive(Clone, Copy, Debug)]
pub struct ZeroScore(pub Channels);

impl ScoreSource for ZeroScore {
    fn channels(&self) -> Channels {
        self.0
    }

    fn score(&self, x: &Stack, _sigma: f64) -> Result<Stack> {
        Ok(Stack::zeros(x.shape(), x.channels()))
    }
}
