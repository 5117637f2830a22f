//! End-to-end training of both networks against the NLPD loss.
//!
//! Each epoch draws its randomness from a ChaCha stream keyed by
//! `(seed, epoch)`, so a run resumed from a checkpoint replays exactly the
//! batches an uninterrupted run would have seen.

mod adam;
mod checkpoint;
mod data;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cantmo::{tonemap_taped, ArchConfig, CanWeights, Mode, ParamVars};
use crate::error::{Error, Result};
use crate::gradkern::{Tape, Tensor};
use crate::hdrimg::DisplayRange;
use crate::nlpd::{NlpdParams, NlpdReference};
use crate::plane::Plane;
use crate::pyramid::PyramidParams;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, read_log_csv, save_checkpoint, write_log_csv, ADAM_VERSION};
pub use data::{
    augment, crop_reflect, load_luminance, make_dataset, sample_smax, synthetic_scene,
    write_synthetic_set, AugmentConfig, Dataset, SmaxSampling,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// The learning rate is divided by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub augment: AugmentConfig,
    pub levels: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub arch: ArchConfig,
    pub display: DisplayRange,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            lr0: 1e-3,
            decay_every: 1000,
            decay_factor: 10.0,
            epochs: 2000,
            augment: AugmentConfig::default(),
            levels: 5,
            seed: 0,
            checkpoint_every: 100,
            arch: ArchConfig::default(),
            display: DisplayRange::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr0 > 0.0
            && self.decay_every > 0
            && self.decay_factor > 0.0
            && self.epochs > 0
            && self.augment.crop > 0
            && self.augment.s_min > 0.0
            && self.augment.s_max_range.0 > self.augment.s_min
            && self.augment.s_max_range.1 >= self.augment.s_max_range.0;
        if !ok {
            return Err(Error::InvalidParam(
                "training configuration needs positive sizes, rates and ranges".into(),
            ));
        }
        self.arch.validate()?;
        PyramidParams::with_levels(self.levels).validate()
    }

    /// Learning rate for a 0-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 / self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    fn nlpd_params(&self) -> NlpdParams {
        NlpdParams::with_levels(self.levels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub weights: CanWeights,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = CanWeights::init(cfg.arch.clone(), cfg.seed)?;
        let shapes: Vec<usize> = weights.params().iter().map(|p| p.len()).collect();
        Ok(TrainState {
            weights,
            adam: AdamState::new(&shapes),
            epoch: 0,
            log: Vec::new(),
        })
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// One batch: forward, loss gradient, backward, Adam. Returns per-sample losses.
fn train_batch(
    state: &mut TrainState,
    crops: &[Plane],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<Vec<f64>> {
    let params = cfg.nlpd_params();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &state.weights);
    let mark = tape.len();
    let inv = 1.0 / crops.len() as f64;
    let mut losses = Vec::with_capacity(crops.len());
    for s in crops {
        let out = tonemap_taped(
            &mut tape,
            &vars,
            s,
            &state.weights,
            &params.pyramid,
            &cfg.display,
            Mode::Train,
        )?;
        let img = tape.value(out.image).to_plane()?;
        if !img.is_finite() {
            return Err(Error::NonFinite(format!("network output at epoch {}", state.epoch)));
        }
        let (rep, g) = NlpdReference::new(s, &params)?.eval_with_grad(&img)?;
        if !rep.distance.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {} at epoch {}",
                rep.distance, state.epoch
            )));
        }
        losses.push(rep.distance);
        tape.backward_with(out.image, Tensor::from_plane(&g.scale(inv)))?;
        let momentum = cfg.arch.momentum;
        for sig in &out.bandpass_sigmas {
            state.weights.bandpass.update_running(sig, momentum);
        }
        state.weights.lowpass.update_running(&out.lowpass_sigmas, momentum);
        tape.truncate(mark);
    }
    let grads = vars.grads(&tape);
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient at epoch {}", state.epoch)));
    }
    adam_step(&mut state.weights.params_mut(), &grads, &mut state.adam, lr)?;
    Ok(losses)
}

/// Runs the next epoch over `images` (uncalibrated luminance).
pub fn train_epoch(state: &mut TrainState, images: &[Plane], cfg: &TrainConfig) -> Result<EpochLog> {
    if images.is_empty() {
        return Err(Error::Degenerate("no training images".into()));
    }
    let epoch = state.epoch;
    let lr = cfg.lr_at(epoch);
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng);
    let mut losses = Vec::with_capacity(images.len());
    for batch in order.chunks(cfg.batch_size) {
        let crops = batch
            .iter()
            .map(|&i| augment(&images[i], &cfg.augment, &mut rng).map(|c| c.0))
            .collect::<Result<Vec<_>>>()?;
        losses.extend(train_batch(state, &crops, cfg, lr)?);
    }
    let entry = EpochLog {
        epoch,
        lr,
        mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
    };
    state.epoch += 1;
    state.weights.meta.epochs = state.epoch;
    state.log.push(entry.clone());
    Ok(entry)
}

/// Trains until `cfg.epochs` epochs are complete, starting from `resume` or
/// a fresh initialization. With `out_dir`, checkpoints are written there on
/// the configured cadence and at the end; a non-finite loss writes a
/// diagnostic checkpoint to `out_dir/diverged` before returning the error.
pub fn train(
    images: &[Plane],
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    out_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(cfg)?,
    };
    state.weights.meta.training =
        Some(serde_json::to_value(cfg).map_err(|e| Error::Other(e.to_string()))?);
    while state.epoch < cfg.epochs {
        let before = state.clone();
        match train_epoch(&mut state, images, cfg) {
            Ok(entry) => {
                log::info!(
                    "epoch {} lr {:.3e} loss {:.6}",
                    entry.epoch,
                    entry.lr,
                    entry.mean_loss
                );
            }
            Err(e @ Error::NonFinite(_)) => {
                if let Some(dir) = out_dir {
                    save_checkpoint(&dir.join("diverged"), &before)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(dir, &state)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(dir, &state)?;
    }
    Ok(state)
}

/// Moving average over `window` epochs.
pub fn smoothed_losses(log: &[EpochLog], window: usize) -> Vec<f64> {
    let w = window.max(1);
    log.windows(w.min(log.len().max(1)))
        .map(|win| win.iter().map(|e| e.mean_loss).sum::<f64>() / win.len() as f64)
        .collect()
}
