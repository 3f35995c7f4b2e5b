//! The end-to-end pipeline: text → condition → candidates → curation →
//! denoise, palette and style → layout.
//!
//! Each stage is exposed on its own so the CLI can run stages separately
//! and chain them through files with the same result as [`Engine::run`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use callig_core::aesthetics::{
    default_min_blob_area, default_palette, denoise, extract_palette, recolor, Palette, RecolorParams,
    StyleEngine, StyleRegistry, DEFAULT_THRESHOLD_PERCENTILE, MAX_PALETTE,
};
use callig_core::composer::{layout, render, ArtworkComposition, CompositionMetadata, MAX_WHITESPACE_RATIO};
use callig_core::corpus::{scan_corpus, split_glyphs, DatasetManifest, Split, Vocabulary};
use callig_core::curator::{curate_against, CurationResult, CurationSummary, RandomConvExtractor, StatsCache};
use callig_core::text_mapper::{
    embed_vocabulary, text_to_condition, CharacterScore, CommandEmbedder, EmbeddingProvider, HashEmbedder,
    VocabularyEmbeddings,
};
use callig_core::{ConditionVector, GrayImage};
use callig_gan::Checkpoint;

use crate::config::StudioConfig;

/// Characters chosen per request.
pub const TOP_K: usize = 5;

/// A request failed for a reason attributable to one input field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Core(callig_core::Error),
    #[error(transparent)]
    Gan(#[from] callig_gan::Error),
}

impl From<callig_core::Error> for PipelineError {
    /// Argument errors map onto request field names.
    fn from(e: callig_core::Error) -> Self {
        use callig_core::Error as E;
        let field = match &e {
            E::InvalidArgument { field, .. } => match *field {
                "k" => Some("palette_k"),
                "strength" => Some("style_strength"),
                f @ ("text" | "weights" | "whitespace_ratio" | "style_strength" | "canvas_size") => Some(f),
                _ => None,
            },
            E::UnknownStyle { .. } => Some("style_id"),
            E::LayoutInfeasible { .. } => Some("whitespace_ratio"),
            _ => None,
        };
        match field {
            Some(f) => PipelineError::Field(FieldError::new(f, e.to_string())),
            None => PipelineError::Core(e),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn default_palette_k() -> usize {
    5
}
fn default_ratio() -> f64 {
    0.3
}
fn default_strength() -> f64 {
    0.7
}

/// Parameters of one artwork. The dish image travels separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    pub text: String,
    #[serde(default = "default_palette_k")]
    pub palette_k: usize,
    #[serde(default = "default_ratio")]
    pub whitespace_ratio: f64,
    #[serde(default)]
    pub style_id: Option<String>,
    #[serde(default = "default_strength")]
    pub style_strength: f64,
    /// Per-rank weights of the chosen characters.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Defaults to `text`; an empty string draws no caption.
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub logo_id: Option<String>,
}

impl GenerationRequest {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            palette_k: default_palette_k(),
            whitespace_ratio: default_ratio(),
            style_id: None,
            style_strength: default_strength(),
            weights: None,
            seed: None,
            caption: None,
            logo_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.text.trim().is_empty() {
            return Err(FieldError::new("text", "must not be empty"));
        }
        if !(1..=MAX_PALETTE).contains(&self.palette_k) {
            return Err(FieldError::new("palette_k", format!("must be between 1 and {MAX_PALETTE}")));
        }
        if !(0.0..=MAX_WHITESPACE_RATIO).contains(&self.whitespace_ratio) {
            return Err(FieldError::new(
                "whitespace_ratio",
                format!("must be between 0 and {MAX_WHITESPACE_RATIO}"),
            ));
        }
        if !(0.0..=1.0).contains(&self.style_strength) {
            return Err(FieldError::new("style_strength", "must be between 0 and 1"));
        }
        if let Some(w) = &self.weights {
            if w.len() != TOP_K {
                return Err(FieldError::new("weights", format!("must have exactly {TOP_K} entries")));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(FieldError::new("weights", "must be finite and nonnegative"));
            }
            if w.iter().all(|v| *v == 0.0) {
                return Err(FieldError::new("weights", "must not all be zero"));
            }
        }
        if let Some(id) = &self.style_id {
            if id.is_empty() {
                return Err(FieldError::new("style_id", "must not be empty"));
            }
        }
        if let Some(id) = &self.logo_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(FieldError::new("logo_id", "must be letters, digits, '-' or '_'"));
            }
        }
        Ok(())
    }

    pub fn caption_text(&self) -> &str {
        self.caption.as_deref().unwrap_or(&self.text)
    }
}

/// Builds an embedding provider from `hash-<dim>` or `command:<dim>:<program>`.
pub fn provider_from_spec(spec: &str) -> Result<Box<dyn EmbeddingProvider>, String> {
    if let Some(dim) = spec.strip_prefix("hash-") {
        let d: usize = dim.parse().map_err(|_| format!("bad dimension in {spec:?}"))?;
        if d == 0 {
            return Err("dimension must be positive".into());
        }
        return Ok(Box::new(HashEmbedder::new(d)));
    }
    if let Some(rest) = spec.strip_prefix("command:") {
        let (dim, program) = rest
            .split_once(':')
            .ok_or_else(|| format!("expected command:<dim>:<program>, got {spec:?}"))?;
        let d: usize = dim.parse().map_err(|_| format!("bad dimension in {spec:?}"))?;
        let mut parts = program.split_whitespace();
        let exe = parts.next().ok_or("missing program")?;
        let args = parts.map(String::from).collect();
        return Ok(Box::new(CommandEmbedder::new(spec, exe, args, d)));
    }
    Err(format!("unknown provider {spec:?}"))
}

/// Denoise, palette extraction, recolor and optional style transfer.
pub struct StylizeParams<'a> {
    pub dish: Option<&'a RgbImage>,
    pub palette_k: usize,
    pub style_id: Option<&'a str>,
    pub style_strength: f64,
    pub seed: u64,
}

pub fn stylize(glyph: &GrayImage, styles: &StyleEngine, p: &StylizeParams) -> Result<(RgbImage, Palette)> {
    let side = glyph.width().min(glyph.height());
    let clean = denoise(glyph, DEFAULT_THRESHOLD_PERCENTILE, default_min_blob_area(side))?;
    let palette = match p.dish {
        Some(dish) => extract_palette(dish, p.palette_k, p.seed)?.palette,
        None => default_palette().truncated(p.palette_k),
    };
    let mut art = recolor(&clean.image, &palette, &RecolorParams::default(), p.seed)?;
    if let Some(id) = p.style_id {
        art = styles.apply_style(&art, id, p.style_strength)?;
    }
    Ok((art, palette))
}

/// Layout and render onto a canvas.
pub fn compose(
    art: &RgbImage,
    caption: &str,
    logo: Option<&RgbImage>,
    whitespace_ratio: f64,
    canvas: (u32, u32),
    seed: u64,
    metadata: CompositionMetadata,
) -> Result<ArtworkComposition> {
    let spec = layout(canvas, whitespace_ratio, !caption.is_empty(), logo.is_some(), seed)?;
    Ok(render(&spec, art, caption, logo, metadata)?)
}

/// Curation output cast to 8 bits, as it would be after a PNG round trip.
pub fn finish_glyph(chosen: &GrayImage) -> GrayImage {
    chosen.quantized()
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub seed: u64,
    pub characters: Vec<CharacterScore>,
    pub condition: ConditionVector,
    pub curation: CurationSummary,
    pub palette: Palette,
    pub composition: ArtworkComposition,
    pub png: Vec<u8>,
}

/// Loaded model and resources; immutable and shareable across threads.
pub struct Engine {
    checkpoint: Checkpoint,
    provider: Box<dyn EmbeddingProvider>,
    embeddings: VocabularyEmbeddings,
    manifest: DatasetManifest,
    holdout: BTreeMap<char, Vec<GrayImage>>,
    extractor: RandomConvExtractor,
    styles: StyleEngine,
    stats_cache: Option<StatsCache>,
    pub candidates: usize,
    pub group_size: usize,
    pub canvas: (u32, u32),
}

/// Ingredients for [`Engine::new`].
pub struct EngineParts {
    pub checkpoint: Checkpoint,
    pub provider: Box<dyn EmbeddingProvider>,
    pub manifest: DatasetManifest,
    pub styles: StyleEngine,
    pub embedding_cache: Option<PathBuf>,
    pub stats_cache: Option<PathBuf>,
    pub candidates: usize,
    pub group_size: usize,
    pub canvas: (u32, u32),
}

fn load_manifest(corpus: &Path) -> Result<DatasetManifest> {
    let saved = corpus.join("manifest.json");
    if saved.exists() {
        return Ok(DatasetManifest::load(&saved)?);
    }
    Ok(scan_corpus(corpus)?)
}

impl Engine {
    pub fn new(parts: EngineParts) -> Result<Self> {
        let vocab = parts.checkpoint.vocabulary().clone();
        let embeddings = embed_vocabulary(parts.provider.as_ref(), &vocab, parts.embedding_cache.as_deref())?;
        let chars: Vec<char> = vocab.characters().collect();
        let side = parts.checkpoint.image_side();
        let mut holdout: BTreeMap<char, Vec<GrayImage>> = BTreeMap::new();
        for record in split_glyphs(&parts.manifest, &chars, side, Split::Holdout)? {
            holdout.entry(record.character).or_default().push(record.image);
        }
        Ok(Self {
            checkpoint: parts.checkpoint,
            provider: parts.provider,
            embeddings,
            manifest: parts.manifest,
            holdout,
            extractor: RandomConvExtractor::default(),
            styles: parts.styles,
            stats_cache: parts.stats_cache.map(StatsCache::new),
            candidates: parts.candidates,
            group_size: parts.group_size,
            canvas: parts.canvas,
        })
    }

    /// Loads everything named by the configuration.
    pub fn from_config(config: &StudioConfig) -> Result<Self> {
        let ckpt_path = config
            .checkpoint_path
            .as_deref()
            .ok_or_else(|| PipelineError::Unavailable("checkpoint_path is not configured".into()))?;
        let checkpoint = Checkpoint::load(ckpt_path)?;
        if let Some(vp) = &config.vocab_path {
            checkpoint.check_vocabulary(&Vocabulary::load(vp)?)?;
        }
        let corpus = config
            .corpus_dir
            .as_deref()
            .ok_or_else(|| PipelineError::Unavailable("corpus_dir is not configured".into()))?;
        let styles = match &config.styles_dir {
            Some(dir) => StyleRegistry::load_dir(dir)?,
            None => StyleRegistry::builtin(),
        };
        let provider = provider_from_spec(&config.embedding_provider).map_err(PipelineError::Unavailable)?;
        Self::new(EngineParts {
            checkpoint,
            provider,
            manifest: load_manifest(corpus)?,
            styles: StyleEngine::new(styles),
            embedding_cache: Some(config.data_dir.join("embeddings")),
            stats_cache: Some(config.data_dir.join("stats")),
            candidates: config.candidates,
            group_size: config.group_size,
            canvas: config.canvas(),
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.checkpoint.vocabulary()
    }

    pub fn styles(&self) -> &StyleEngine {
        &self.styles
    }

    pub fn top_k(&self) -> usize {
        TOP_K.min(self.vocabulary().size())
    }

    /// Top characters for the text and the weighted condition over them.
    pub fn select(&self, text: &str, weights: Option<&[f64]>) -> Result<(ConditionVector, Vec<CharacterScore>)> {
        let k = self.top_k();
        let w = weights.map(|w| &w[..k.min(w.len())]);
        Ok(text_to_condition(
            text,
            self.provider.as_ref(),
            self.vocabulary(),
            &self.embeddings,
            k,
            w,
        )?)
    }

    pub fn generate(&self, condition: &ConditionVector, n: usize, seed: u64) -> Result<Vec<GrayImage>> {
        Ok(self.checkpoint.generate_batch(condition, n, seed)?)
    }

    /// Reference glyphs of the given characters. Falls back to the train
    /// split when the holdout split has fewer than two images.
    pub fn references(&self, characters: &[char], split: Split) -> Result<Vec<GrayImage>> {
        let side = self.checkpoint.image_side();
        let mut refs: Vec<GrayImage> = match split {
            Split::Holdout => characters
                .iter()
                .flat_map(|c| self.holdout.get(c).into_iter().flatten().cloned())
                .collect(),
            Split::Train => Vec::new(),
        };
        if refs.len() < 2 {
            if split == Split::Holdout {
                log::warn!("fewer than 2 holdout references; using the train split");
            }
            refs = split_glyphs(&self.manifest, characters, side, Split::Train)?
                .into_iter()
                .map(|r| r.image)
                .collect();
        }
        if refs.len() < 2 {
            return Err(PipelineError::Unavailable(
                "the corpus has fewer than 2 reference glyphs for the chosen characters".into(),
            ));
        }
        Ok(refs)
    }

    pub fn curate(&self, candidates: &[GrayImage], references: &[GrayImage], group_size: usize) -> Result<CurationResult> {
        let ref_stats = match &self.stats_cache {
            Some(cache) => cache.reference_stats(&self.extractor, references)?,
            None => callig_core::curator::stats(
                &callig_core::curator::FeatureExtractor::extract(&self.extractor, references)?,
            )?,
        };
        Ok(curate_against(candidates, &ref_stats, &self.extractor, group_size)?)
    }

    /// Runs every stage with one seed.
    pub fn run(
        &self,
        request: &GenerationRequest,
        seed: u64,
        dish: Option<&RgbImage>,
        logo: Option<&RgbImage>,
        request_id: &str,
    ) -> Result<PipelineOutput> {
        request.validate()?;
        let (condition, characters) = self.select(&request.text, request.weights.as_deref())?;
        let chars: Vec<char> = characters.iter().map(|c| c.character).collect();
        let candidates = self.generate(&condition, self.candidates, seed)?;
        let references = self.references(&chars, Split::Holdout)?;
        let curation = self.curate(&candidates, &references, self.group_size)?;
        let glyph = finish_glyph(&curation.chosen_image);
        let (art, palette) = stylize(
            &glyph,
            &self.styles,
            &StylizeParams {
                dish,
                palette_k: request.palette_k,
                style_id: request.style_id.as_deref(),
                style_strength: request.style_strength,
                seed,
            },
        )?;
        let metadata = CompositionMetadata {
            request_id: request_id.to_string(),
            seed,
            style_id: request.style_id.clone(),
            palette: Some(palette.clone()),
            condition_characters: chars,
        };
        let composition = compose(
            &art,
            request.caption_text(),
            logo,
            request.whitespace_ratio,
            self.canvas,
            seed,
            metadata,
        )?;
        let png = composition.encode_png()?;
        Ok(PipelineOutput {
            seed,
            characters,
            condition,
            curation: curation.summary(),
            palette,
            composition,
            png,
        })
    }
}
