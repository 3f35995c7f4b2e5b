//! Building blocks for turning a piece of text into a calligraphy-inspired
//! abstract artwork.
//!
//! The crate is split by pipeline stage:
//!
//! * [`corpus`] scans a glyph dataset laid out as one directory per
//!   character, selects the training vocabulary and serves batches.
//! * [`condition`] holds the weighted condition vector that steers the
//!   generator.
//! * [`text_mapper`] maps free text to the closest vocabulary characters by
//!   embedding similarity.
//! * [`curator`] scores generated candidates with the Fréchet distance
//!   against real reference glyphs.
//! * [`aesthetics`] cleans, recolors and optionally stylizes the chosen glyph.
//! * [`composer`] lays out and renders the final canvas.
//!
//! Everything here is deterministic given its inputs and seed, and none of
//! it needs model downloads; the learned pieces plug in through the
//! [`text_mapper::EmbeddingProvider`], [`curator::FeatureExtractor`] and
//! [`aesthetics::StyleAdapter`] traits.

pub mod aesthetics;
pub mod composer;
pub mod condition;
pub mod corpus;
pub mod curator;
mod error;
pub mod raster;
pub mod synth;
pub mod text_mapper;

pub use condition::{build_condition, ConditionVector};
pub use error::{Error, Result};
pub use raster::GrayImage;
