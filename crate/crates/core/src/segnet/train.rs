use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamMoments};
use super::network::{image_to_tensor, loss_and_gradients, predict, ArchitectureConfig, NetworkParams};
use super::SegnetError;
use crate::image::GrayImage;
use crate::raster::{dice, Mask};
use crate::rng::{derive_key, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a strict improvement in
    /// validation Dice.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Random left-right flips of each training pair.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            patience: 3,
            batch_size: 5,
            adam: AdamConfig::default(),
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SegnetError> {
        let bad = |m: &str| Err(SegnetError::InvalidConfig(m.into()));
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("epochs, patience and batch size must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience cannot exceed max epochs");
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(a.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One training or validation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub mask: Mask,
}

/// Mirrors image and mask left-right together when `coin` is set.
pub fn augment_flip(img: &GrayImage, mask: &Mask, coin: bool) -> (GrayImage, Mask) {
    if coin {
        (img.flipped_lr(), mask.flipped_lr())
    } else {
        (img.clone(), mask.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a score that should increase.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    pub fn update(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if !(score > best) => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

impl TrainLog {
    pub fn stopped_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |r| r.epoch)
    }

    /// `epoch,train_loss,val_dice` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_dice\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_dice);
        }
        s
    }
}

/// Mean Dice of predicted masks against the samples' masks.
pub fn validation_dice(params: &NetworkParams, samples: &[Sample]) -> Result<f64, SegnetError> {
    if samples.is_empty() {
        return Err(SegnetError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let pred = predict(params, &s.image)?;
        total += dice(&pred.mask, &s.mask).map_err(|e| SegnetError::ShapeMismatch(e.to_string()))?;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainLog), SegnetError> {
    train_with_progress(train_set, val_set, arch, cfg, |_| {})
}

pub fn train_with_progress(
    train_set: &[Sample],
    val_set: &[Sample],
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams, TrainLog), SegnetError> {
    if val_set.is_empty() {
        return Err(SegnetError::EmptyDataset);
    }
    train_with_validator(train_set, arch, cfg, |epoch, params, loss| {
        let val_dice = validation_dice(params, val_set)?;
        on_epoch(&EpochRecord { epoch, train_loss: loss, val_dice });
        Ok(val_dice)
    })
}

/// The training loop with validation abstracted: `validate(epoch, params,
/// mean_train_loss)` scores the parameters after each epoch.
///
/// Each epoch shuffles the training set and draws one flip coin per sample
/// from a stream keyed by `(seed, epoch)`; initialization uses key
/// `(seed, 0)`. The parameters from the best-scoring epoch are returned.
pub fn train_with_validator(
    train_set: &[Sample],
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    mut validate: impl FnMut(usize, &NetworkParams, f64) -> Result<f64, SegnetError>,
) -> Result<(NetworkParams, TrainLog), SegnetError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(SegnetError::EmptyDataset);
    }
    let mut params = NetworkParams::init(arch, derive_key(cfg.seed, 0))?;
    let mut moments: Vec<AdamMoments> = params.blocks().iter().map(|b| AdamMoments::zeros(b.len())).collect();
    let mut step = 0u64;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = SplitMix64::new(derive_key(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let coins: Vec<bool> = order.iter().map(|_| cfg.augment && rng.coin()).collect();

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (idx, flips) in order.chunks(cfg.batch_size).zip(coins.chunks(cfg.batch_size)) {
            let pairs: Vec<(GrayImage, Mask)> = idx
                .iter()
                .zip(flips)
                .map(|(&i, &c)| augment_flip(&train_set[i].image, &train_set[i].mask, c))
                .collect();
            let images: Vec<&GrayImage> = pairs.iter().map(|p| &p.0).collect();
            let masks: Vec<&Mask> = pairs.iter().map(|p| &p.1).collect();
            let input = image_to_tensor(&images)?;
            let (loss, grads) = loss_and_gradients(&params, &input, &masks)?;
            step += 1;
            for ((block, g), m) in params.blocks_mut().into_iter().zip(grads.blocks()).zip(&mut moments) {
                adam_step(block, g, m, &cfg.adam, step)?;
            }
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        if !train_loss.is_finite() {
            return Err(SegnetError::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let score = validate(epoch, &params, train_loss)?;
        log.push(EpochRecord { epoch, train_loss, val_dice: score });
        match stopper.update(epoch, score) {
            StopDecision::Improved => best_params = params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (best_epoch, best_val_dice) = stopper.best().expect("at least one epoch ran");
    Ok((best_params, TrainLog { epochs: log, best_epoch, best_val_dice }))
}
