//! Conditional DCGAN for glyph synthesis.
//!
//! The condition vector enters both networks through a learned linear
//! embedding, so weighted mixtures of characters are valid inputs at
//! inference even though training only ever sees one-hot labels.

mod checkpoint;
mod layers;
mod nets;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use callig_core::corpus::{Vocabulary, SUPPORTED_SIDES};
use callig_core::{ConditionVector, GrayImage};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use train::{train, EpochLosses, TrainControl, TrainError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("checkpoint was trained on vocabulary {expected}, got {actual}")]
    VocabularyMismatch { expected: String, actual: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] callig_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub image_side: u32,
    pub z_dim: usize,
    pub condition_embed_dim: usize,
    /// (generator, discriminator).
    pub learning_rates: (f32, f32),
    pub betas: (f32, f32),
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Channels of the generator's last hidden stage; doubled per stage upward.
    pub gen_channels: usize,
    /// Channels of the discriminator's first conv; doubled per stage.
    pub disc_channels: usize,
    /// Target for real samples in the discriminator loss.
    pub real_label: f32,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            z_dim: 128,
            condition_embed_dim: 64,
            learning_rates: (2e-4, 2e-4),
            betas: (0.5, 0.999),
            batch_size: 32,
            epochs: 25,
            seed: 0,
            gen_channels: 16,
            disc_channels: 16,
            real_label: 0.9,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(Error::InvalidConfig { field, reason: reason.into() });
        if !SUPPORTED_SIDES.contains(&self.image_side) {
            return bad("image_side", "must be 32, 64 or 128");
        }
        for (field, v) in [
            ("z_dim", self.z_dim),
            ("condition_embed_dim", self.condition_embed_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("gen_channels", self.gen_channels),
            ("disc_channels", self.disc_channels),
        ] {
            if v == 0 {
                return bad(field, "must be positive");
            }
        }
        let (g, d) = self.learning_rates;
        if !(g > 0.0 && d > 0.0 && g.is_finite() && d.is_finite()) {
            return bad("learning_rates", "must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas", "must lie in [0, 1)");
        }
        if !(self.real_label > 0.0 && self.real_label <= 1.0) {
            return bad("real_label", "must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Standard-normal latent input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub z: Vec<f32>,
}

impl NoiseVector {
    pub fn sample(rng: &mut impl Rng, z_dim: usize) -> Self {
        Self {
            z: (0..z_dim).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    /// The `n` noise vectors used by [`Checkpoint::generate_batch`] for `seed`.
    pub fn sequence(seed: u64, z_dim: usize, n: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Self::sample(&mut rng, z_dim)).collect()
    }

    /// First vector of the seed's sequence.
    pub fn from_seed(seed: u64, z_dim: usize) -> Self {
        Self::sequence(seed, z_dim, 1).remove(0)
    }
}

impl Checkpoint {
    /// Untrained networks with seeded initialization.
    pub fn initialize(config: GanConfig, vocabulary: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocabulary.size() == 0 {
            return Err(Error::InvalidConfig {
                field: "vocabulary",
                reason: "is empty".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let side = config.image_side as usize;
        let v = vocabulary.size();
        let generator = nets::Generator::new(
            v,
            config.z_dim,
            config.condition_embed_dim,
            side,
            config.gen_channels,
            &mut rng,
        );
        let discriminator = nets::Discriminator::new(v, side, config.disc_channels, &mut rng);
        Ok(Self {
            vocabulary_fingerprint: vocabulary.fingerprint(),
            vocabulary,
            config,
            epoch: 0,
            history: Vec::new(),
            generator,
            discriminator,
        })
    }

    /// One glyph for `(condition, noise)`. Pure: depends only on the arguments
    /// and the stored parameters.
    pub fn generate(&self, condition: &ConditionVector, noise: &NoiseVector) -> Result<GrayImage> {
        let v = self.vocabulary.size();
        if condition.len() != v {
            return Err(Error::DimensionMismatch {
                what: "condition",
                expected: v,
                actual: condition.len(),
            });
        }
        if noise.z.len() != self.config.z_dim {
            return Err(Error::DimensionMismatch {
                what: "noise",
                expected: self.config.z_dim,
                actual: noise.z.len(),
            });
        }
        let pixels = self.generator.forward_eval(&noise.z, &condition.to_f32(), 1);
        let side = self.config.image_side;
        Ok(GrayImage::from_vec(side, side, pixels)?)
    }

    /// `n` glyphs from the noise sequence of `seed`.
    pub fn generate_batch(&self, condition: &ConditionVector, n: usize, seed: u64) -> Result<Vec<GrayImage>> {
        if n == 0 {
            return Err(Error::InvalidConfig {
                field: "n",
                reason: "must be at least 1".into(),
            });
        }
        NoiseVector::sequence(seed, self.config.z_dim, n)
            .iter()
            .map(|z| self.generate(condition, z))
            .collect()
    }

    /// Fails unless `vocab` has the exact ordering the checkpoint was trained on.
    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        let actual = vocab.fingerprint();
        if actual != self.vocabulary_fingerprint {
            return Err(Error::VocabularyMismatch {
                expected: self.vocabulary_fingerprint.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn image_side(&self) -> u32 {
        self.config.image_side
    }
}
