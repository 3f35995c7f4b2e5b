use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use callig_core::corpus::{GlyphDataset, Vocabulary};

use crate::layers::{bce_with_logits, Adam};
use crate::{Checkpoint, Error, GanConfig, NoiseVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    /// 1-based epoch number.
    pub epoch: usize,
    pub generator: f32,
    pub discriminator: f32,
}

/// Returned by the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainControl {
    Continue,
    Stop,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    /// Training diverged. The checkpoint holds the parameters at the failing step.
    #[error("non-finite {which} loss at epoch {epoch}, step {step}")]
    NonFinite {
        which: &'static str,
        epoch: usize,
        step: usize,
        checkpoint: Box<Checkpoint>,
    },
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains for `config.epochs` epochs on one-hot conditions of the real labels.
///
/// `on_epoch` sees each epoch's mean losses and the current state and may
/// stop training early. Same inputs give the same loss sequence.
pub fn train(
    dataset: &GlyphDataset,
    vocabulary: &Vocabulary,
    config: GanConfig,
    on_epoch: &mut dyn FnMut(&EpochLosses, &Checkpoint) -> TrainControl,
) -> Result<Checkpoint, TrainError> {
    if dataset.side != config.image_side {
        return Err(Error::InvalidConfig {
            field: "image_side",
            reason: format!("{} does not match the dataset side {}", config.image_side, dataset.side),
        }
        .into());
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig {
            field: "dataset",
            reason: "has no training images".into(),
        }
        .into());
    }
    let v = vocabulary.size();
    if let Some((_, bad)) = dataset.samples.iter().find(|(_, l)| *l >= v) {
        return Err(Error::InvalidConfig {
            field: "dataset",
            reason: format!("label {bad} is outside the vocabulary of {v}"),
        }
        .into());
    }

    let mut ck = Checkpoint::initialize(config.clone(), vocabulary.clone())?;
    let opt = |lr| Adam {
        lr,
        beta1: config.betas.0,
        beta2: config.betas.1,
        eps: 1e-8,
    };
    let (g_opt, d_opt) = (opt(config.learning_rates.0), opt(config.learning_rates.1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut t = 0u32;

    for epoch in 1..=config.epochs {
        let (mut g_sum, mut d_sum, mut steps) = (0.0f64, 0.0f64, 0usize);
        for (step, batch) in dataset.epoch(config.batch_size, epoch_seed(config.seed, epoch)).into_iter().enumerate() {
            let n = batch.len();
            let real: Vec<f32> = batch.images.iter().flat_map(|i| i.pixels().iter().copied()).collect();
            let mut cond = vec![0.0f32; n * v];
            for (i, &l) in batch.labels.iter().enumerate() {
                cond[i * v + l] = 1.0;
            }
            let z: Vec<f32> = (0..n)
                .flat_map(|_| NoiseVector::sample(&mut noise_rng, config.z_dim).z)
                .collect();
            t += 1;

            let g_cache = ck.generator.forward_train(&z, &cond, n);
            let fake = ck.generator.output(&g_cache).to_vec();

            // Discriminator step.
            ck.discriminator.trainable_mut().into_iter().for_each(|p| p.zero_grad());
            let rc = ck.discriminator.forward(&real, &cond, n);
            let (lr, gr) = bce_with_logits(&rc.logits, config.real_label);
            ck.discriminator.backward(&rc, &gr, n);
            let fc = ck.discriminator.forward(&fake, &cond, n);
            let (lf, gf) = bce_with_logits(&fc.logits, 0.0);
            ck.discriminator.backward(&fc, &gf, n);
            let d_loss = lr + lf;
            if !d_loss.is_finite() {
                return Err(non_finite(ck, "discriminator", epoch, step));
            }
            for p in ck.discriminator.trainable_mut() {
                d_opt.step(p, t);
            }

            // Generator step against the updated discriminator.
            ck.generator.trainable_mut().into_iter().for_each(|p| p.zero_grad());
            let fc = ck.discriminator.forward(&fake, &cond, n);
            let (g_loss, gg) = bce_with_logits(&fc.logits, 1.0);
            if !g_loss.is_finite() {
                return Err(non_finite(ck, "generator", epoch, step));
            }
            let d_fake = ck.discriminator.backward(&fc, &gg, n);
            ck.generator.backward(&g_cache, &d_fake, n);
            for p in ck.generator.trainable_mut() {
                g_opt.step(p, t);
            }

            g_sum += g_loss as f64;
            d_sum += d_loss as f64;
            steps += 1;
        }
        let losses = EpochLosses {
            epoch,
            generator: (g_sum / steps as f64) as f32,
            discriminator: (d_sum / steps as f64) as f32,
        };
        ck.epoch = epoch;
        ck.history.push(losses);
        log::info!(
            "epoch {epoch}/{}: generator {:.4} discriminator {:.4}",
            config.epochs,
            losses.generator,
            losses.discriminator
        );
        if on_epoch(&losses, &ck) == TrainControl::Stop {
            break;
        }
    }
    Ok(ck)
}

fn non_finite(mut ck: Checkpoint, which: &'static str, epoch: usize, step: usize) -> TrainError {
    ck.epoch = epoch - 1;
    TrainError::NonFinite {
        which,
        epoch,
        step,
        checkpoint: Box::new(ck),
    }
}
