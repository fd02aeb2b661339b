//! Denoising score matching and the training loop.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{crop, ScoreNet, ScoreNetParams};
use super::stack::{Channels, Stack};
use super::ScoreSource;
use crate::acquisition::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::grid::ImagePair;
use crate::io;
use crate::rng::{draw_gaussian, RandomStream};
use crate::sampler::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm cap; `None` leaves gradients untouched.
    pub clip_norm: Option<f64>,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub channels: Channels,
    pub widths: [usize; 3],
    /// Train on random square crops of this size instead of whole images.
    pub crop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-4,
            momentum: 0.9,
            clip_norm: Some(2000.0),
            schedule: NoiseSchedule::default(),
            seed: 0,
            channels: Channels::Joint,
            widths: [16, 32, 32],
            crop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum must lie in [0, 1)"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::param("clip norm must be positive"));
        }
        if self.crop.is_some_and(|c| c == 0 || c % 4 != 0) {
            return Err(Error::param("crop size must be a positive multiple of 4"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ScoreNetParams,
    pub log: Vec<EpochLog>,
}

/// A noisy training example: input, noise draw and level.
struct Draw {
    noisy: Stack,
    z: Vec<f64>,
    sigma: f64,
}

fn draw(x: &Stack, schedule: &NoiseSchedule, stream: &mut RandomStream) -> Result<Draw> {
    let level = stream.int_range(0, schedule.n_steps);
    let sigma = schedule.sigma_at(level)?;
    let z = draw_gaussian(stream, x.data().len());
    let noisy = x.data().iter().zip(&z).map(|(a, b)| a + sigma * b).collect();
    Ok(Draw {
        noisy: Stack::new(x.shape(), x.channels(), noisy)?,
        z,
        sigma,
    })
}

fn draw_batch(batch: &[Stack], schedule: &NoiseSchedule, stream: &mut RandomStream) -> Result<Vec<Draw>> {
    if batch.is_empty() {
        return Err(Error::param("DSM loss needs a nonempty batch"));
    }
    batch.iter().map(|x| draw(x, schedule, stream)).collect()
}

/// Mean over the batch of `‖σ_i s(x + σ_i z, σ_i) + z‖²`, with `i` uniform
/// over the schedule indices and `z` standard normal, both from `stream`.
pub fn dsm_loss(
    score: &dyn ScoreSource,
    batch: &[Stack],
    schedule: &NoiseSchedule,
    stream: &mut RandomStream,
) -> Result<f64> {
    let draws = draw_batch(batch, schedule, stream)?;
    let losses = draws
        .par_iter()
        .map(|d| {
            let s = score.score(&d.noisy, d.sigma)?;
            Ok(s.data().iter().zip(&d.z).map(|(si, zi)| (d.sigma * si + zi).powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// [`dsm_loss`] together with its gradient in flat parameter order.
pub fn dsm_loss_and_grad(
    net: &ScoreNet,
    batch: &[Stack],
    schedule: &NoiseSchedule,
    stream: &mut RandomStream,
) -> Result<(f64, Vec<f64>)> {
    let draws = draw_batch(batch, schedule, stream)?;
    let n = net.params().n_params();
    let parts = draws
        .par_iter()
        .map(|d| {
            let mut g = vec![0.0; n];
            let l = net.sample_loss(&d.noisy, &d.z, d.sigma, Some(&mut g))?;
            Ok((l, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

fn random_crops(xs: &[Stack], size: Option<usize>, stream: &mut RandomStream) -> Result<Vec<Stack>> {
    let Some(size) = size else {
        return Ok(xs.to_vec());
    };
    xs.iter()
        .map(|x| {
            let s = x.shape();
            if s.height < size || s.width < size {
                return Err(Error::dim(format!("crop {size} larger than image {s}")));
            }
            let top = stream.int_range(0, s.height - size);
            let left = stream.int_range(0, s.width - size);
            crop(x, top, left, size)
        })
        .collect()
}

/// A batch loss this many times the initial training loss counts as
/// divergence even while it is still finite.
pub const LOSS_EXPLOSION_FACTOR: f64 = 1e4;

fn diverged(epoch: usize, what: &str, value: f64) -> Error {
    Error::TrainingDiverged {
        epoch,
        reason: format!("{what} became {value}; lower the learning rate"),
    }
}

/// Momentum SGD on the DSM loss over in-memory stacks.
///
/// Epoch 0 records the losses of the initial network; epochs `1..=epochs`
/// each make one shuffled pass over `train`. The held-out loss is always
/// evaluated with the same noise draws so the curve is comparable across
/// epochs.
pub fn train_score(
    train: &[Stack],
    heldout: &[Stack],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::MissingInput("training needs train and held-out samples".into()));
    }
    let select = |xs: &[Stack]| xs.iter().map(|x| x.select(cfg.channels)).collect::<Result<Vec<_>>>();
    let train = select(train)?;
    let heldout = select(heldout)?;

    let root = RandomStream::new(cfg.seed, "train");
    let mut params = ScoreNetParams::init(
        cfg.channels,
        cfg.widths,
        cfg.schedule.sigma_min,
        cfg.schedule.sigma_max,
        &mut root.derive("init"),
    )?;
    let heldout = random_crops(&heldout, cfg.crop, &mut root.derive("heldout-crops"))?;
    let heldout_loss = |net: &ScoreNet| -> Result<f64> {
        let mut s = root.derive("heldout");
        let mut total = 0.0;
        for chunk in heldout.chunks(cfg.batch_size.max(16)) {
            total += dsm_loss(net, chunk, &cfg.schedule, &mut s)? * chunk.len() as f64;
        }
        Ok(total / heldout.len() as f64)
    };

    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let net = ScoreNet::new(params.clone())?;
    let first = EpochLog {
        epoch: 0,
        train_loss: {
            let mut s = root.derive("train-eval");
            let xs = random_crops(&train, cfg.crop, &mut s)?;
            let mut total = 0.0;
            for chunk in xs.chunks(cfg.batch_size.max(16)) {
                total += dsm_loss(&net, chunk, &cfg.schedule, &mut s)? * chunk.len() as f64;
            }
            total / xs.len() as f64
        },
        heldout_loss: heldout_loss(&net)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    on_epoch(&first);
    log.push(first);

    let mut master: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let mut velocity = vec![0.0; master.len()];
    for epoch in 1..=cfg.epochs {
        let mut s = root.derive(&format!("epoch/{epoch}"));
        let order = s.sample_indices(train.len(), train.len());
        let shuffled: Vec<Stack> = order.iter().map(|&i| train[i].clone()).collect();
        let xs = random_crops(&shuffled, cfg.crop, &mut s)?;
        let mut total = 0.0;
        for batch in xs.chunks(cfg.batch_size) {
            let net = ScoreNet::new(params.clone())?;
            let (loss, mut grad) = dsm_loss_and_grad(&net, batch, &cfg.schedule, &mut s)?;
            if !loss.is_finite() || loss > LOSS_EXPLOSION_FACTOR * log[0].train_loss {
                return Err(diverged(epoch, "training loss", loss));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(diverged(epoch, "gradient norm", norm));
            }
            if let Some(c) = cfg.clip_norm {
                if norm > c {
                    grad.iter_mut().for_each(|g| *g *= c / norm);
                }
            }
            for ((w, v), g) in master.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.learning_rate * *v;
            }
            if let Some(bad) = master.iter().find(|w| !(w.is_finite() && w.abs() < f32::MAX as f64)) {
                return Err(diverged(epoch, "a parameter", *bad));
            }
            params.values = master.iter().map(|&w| w as f32).collect();
            total += loss * batch.len() as f64;
        }
        let net = ScoreNet::new(params.clone())?;
        let entry = EpochLog {
            epoch,
            train_loss: total / xs.len() as f64,
            heldout_loss: heldout_loss(&net)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if !entry.heldout_loss.is_finite() {
            return Err(diverged(epoch, "held-out loss", entry.heldout_loss));
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// Loads the ground-truth pairs of one split of a dataset.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<ImagePair>> {
    let manifest = DatasetManifest::load(root)?;
    manifest
        .split(split)
        .map(|e| {
            let dir = root.join(&e.dir);
            let pet = io::load_real(&dir.join("pet.jrg"))?;
            let mri = io::load_complex(&dir.join("mri.jrg"))?;
            ImagePair::new(pet, mri)
        })
        .collect()
}

/// [`train_score`] on a dataset directory: trains on its train split and
/// reports held-out loss on its test split.
pub fn train_on_dataset(root: &Path, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let stacks = |split| -> Result<Vec<Stack>> { Ok(load_split(root, split)?.iter().map(Stack::from_pair).collect()) };
    let train = stacks(Split::Train)?;
    let heldout = stacks(Split::Test)?;
    train_score(&train, &heldout, cfg, on_epoch)
}

/// Writes the training log as CSV.
pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_loss,heldout_loss,wall_seconds\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.3}\n",
            e.epoch, e.train_loss, e.heldout_loss, e.wall_seconds
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
