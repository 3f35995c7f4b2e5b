//! Calligraphy glyph corpus: scanning, vocabulary selection, preprocessing
//! and training batches.
//!
//! The on-disk layout is `<root>/<character>/<file>.{png,jpg}`, one
//! directory per character whose name is the character itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster::GrayImage;
use crate::{Error, Result};

/// Glyph sides accepted by [`preprocess_glyph`].
pub const SUPPORTED_SIDES: [u32; 3] = [32, 64, 128];

/// Share of each character's images reserved as real reference glyphs.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphRecord {
    pub character: char,
    pub calligrapher: String,
    pub image: GrayImage,
    pub source_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Directory the relative paths in `splits` are resolved against.
    pub root: PathBuf,
    pub total_images: usize,
    pub distinct_characters: usize,
    pub per_character_counts: BTreeMap<char, usize>,
    /// Relative source path → split.
    pub splits: BTreeMap<String, Split>,
    /// Files that could not be read, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unreadable: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Relative paths in the given split, sorted.
    pub fn paths_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.splits
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(p, _)| p.as_str())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

/// Character owning a relative path such as `永/a_01.png`.
pub fn character_of(rel: &str) -> Option<char> {
    let dir = rel.split('/').next()?;
    single_char(dir)
}

fn single_char(s: &str) -> Option<char> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn path_hash(rel: &str) -> [u8; 32] {
    Sha256::digest(rel.as_bytes()).into()
}

/// Number of holdout images for a character with `count` images.
pub fn holdout_count(count: usize) -> usize {
    if count < 2 {
        0
    } else {
        ((count as f64 * HOLDOUT_FRACTION).round() as usize).max(1)
    }
}

/// Walks a corpus directory and counts every readable glyph image.
///
/// Unreadable files and directories whose name is not a single character are
/// listed in [`DatasetManifest::unreadable`] rather than failing the scan.
pub fn scan_corpus(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut per_char: BTreeMap<char, Vec<String>> = BTreeMap::new();
    let mut unreadable = Vec::new();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.starts_with('.') {
            continue;
        }
        let Some(character) = single_char(&name) else {
            unreadable.push((name, "directory name is not a single character".into()));
            continue;
        };
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        for file in files {
            let rel = format!(
                "{name}/{}",
                file.file_name().and_then(|n| n.to_str()).unwrap_or_default()
            );
            match image::ImageReader::open(&file)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
            {
                Ok((w, h)) if w > 0 && h > 0 => per_char.entry(character).or_default().push(rel),
                Ok(_) => unreadable.push((rel, "empty image".into())),
                Err(reason) => {
                    log::warn!("skipping unreadable glyph {rel}: {reason}");
                    unreadable.push((rel, reason));
                }
            }
        }
    }

    let total_images: usize = per_char.values().map(Vec::len).sum();
    if total_images == 0 {
        return Err(Error::ZeroImages(root.to_path_buf()));
    }

    let mut splits = BTreeMap::new();
    for paths in per_char.values() {
        let mut ranked: Vec<_> = paths.iter().map(|p| (path_hash(p), p)).collect();
        ranked.sort();
        let holdout = holdout_count(paths.len());
        for (i, (_, p)) in ranked.into_iter().enumerate() {
            let split = if i < holdout { Split::Holdout } else { Split::Train };
            splits.insert(p.clone(), split);
        }
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        total_images,
        distinct_characters: per_char.len(),
        per_character_counts: per_char.iter().map(|(c, p)| (*c, p.len())).collect(),
        splits,
        unreadable,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub character: char,
    pub class_index: usize,
    pub image_count: usize,
}

/// Ordered character vocabulary; `class_index` is the position in `entries`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
}

impl Vocabulary {
    /// Characters with strictly more than `min_images` images, ordered by
    /// descending count then ascending codepoint, truncated to `max_size`.
    pub fn from_counts(
        counts: &BTreeMap<char, usize>,
        min_images: usize,
        max_size: usize,
    ) -> Result<Self> {
        if min_images < 1 {
            return Err(Error::invalid("min_images", "must be at least 1"));
        }
        if max_size < 1 {
            return Err(Error::invalid("max_size", "must be at least 1"));
        }
        let mut qualifying: Vec<(char, usize)> = counts
            .iter()
            .filter(|(_, &n)| n > min_images)
            .map(|(&c, &n)| (c, n))
            .collect();
        if qualifying.is_empty() {
            return Err(Error::EmptyVocabulary { min_images });
        }
        qualifying.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        qualifying.truncate(max_size);
        Ok(Self::from_ordered(qualifying))
    }

    /// Vocabulary in exactly the given order.
    pub fn from_ordered(chars: impl IntoIterator<Item = (char, usize)>) -> Self {
        let entries = chars
            .into_iter()
            .enumerate()
            .map(|(class_index, (character, image_count))| VocabEntry {
                character,
                class_index,
                image_count,
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn character(&self, class_index: usize) -> Option<char> {
        self.entries.get(class_index).map(|e| e.character)
    }

    pub fn index_of(&self, character: char) -> Option<usize> {
        self.entries.iter().position(|e| e.character == character)
    }

    pub fn characters(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.iter().map(|e| e.character)
    }

    /// Hex SHA-256 over the ordered characters; binds class indices.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.character.to_string().as_bytes());
            hasher.update([0u8]);
        }
        hex_string(&hasher.finalize())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn select_vocabulary(
    manifest: &DatasetManifest,
    min_images: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    Vocabulary::from_counts(&manifest.per_character_counts, min_images, max_size)
}

pub fn load_record(manifest: &DatasetManifest, rel: &str) -> Result<GlyphRecord> {
    let character = character_of(rel).ok_or_else(|| Error::BadImage {
        path: rel.to_string(),
        reason: "path does not start with a character directory".into(),
    })?;
    let image = GrayImage::load(&manifest.resolve(rel))?;
    let stem = Path::new(rel)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let calligrapher = match stem.split_once('_') {
        Some((who, _)) if !who.is_empty() => who.to_string(),
        _ => "unknown".to_string(),
    };
    Ok(GlyphRecord {
        character,
        calligrapher,
        image,
        source_path: rel.to_string(),
    })
}

/// Fits a glyph into a `side`×`side` square, preserving aspect ratio and
/// padding with white. Already-square glyphs of the right size pass through
/// untouched.
pub fn preprocess_glyph(record: &GlyphRecord, side: u32) -> Result<GlyphRecord> {
    if !SUPPORTED_SIDES.contains(&side) {
        return Err(Error::UnsupportedSide(side));
    }
    let (w, h) = (record.image.width(), record.image.height());
    if w == 0 || h == 0 {
        return Err(Error::BadImage {
            path: record.source_path.clone(),
            reason: "empty image".into(),
        });
    }
    if w == side && h == side {
        return Ok(record.clone());
    }
    let scale = side as f64 / w.max(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).clamp(1, side);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, side);
    let scaled = record.image.resized(nw, nh);
    let mut out = GrayImage::white(side, side);
    let (ox, oy) = ((side - nw) / 2, (side - nh) / 2);
    for y in 0..nh {
        for x in 0..nw {
            out.set(ox + x, oy + y, scaled.get(x, y));
        }
    }
    Ok(GlyphRecord {
        image: out,
        ..record.clone()
    })
}

/// Deterministic permutation of `0..n` for an epoch.
pub fn epoch_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// One training batch: flattened `side`×`side` images plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub side: u32,
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train-split paths of vocabulary characters with their class, sorted.
fn train_items(manifest: &DatasetManifest, vocab: &Vocabulary) -> Vec<(String, usize)> {
    manifest
        .paths_in(Split::Train)
        .filter_map(|p| {
            let class = vocab.index_of(character_of(p)?)?;
            Some((p.to_string(), class))
        })
        .collect()
}

/// Lazily loads one epoch of train-split glyphs in a seeded order.
pub struct BatchStream<'a> {
    manifest: &'a DatasetManifest,
    items: Vec<(String, usize)>,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    side: u32,
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        while self.cursor < self.order.len() {
            let end = (self.cursor + self.batch_size).min(self.order.len());
            let mut batch = Batch {
                side: self.side,
                images: Vec::with_capacity(end - self.cursor),
                labels: Vec::with_capacity(end - self.cursor),
            };
            for &i in &self.order[self.cursor..end] {
                let (path, class) = &self.items[i];
                match load_record(self.manifest, path).and_then(|r| preprocess_glyph(&r, self.side)) {
                    Ok(r) => {
                        batch.images.push(r.image);
                        batch.labels.push(*class);
                    }
                    Err(e) => log::warn!("skipping {path}: {e}"),
                }
            }
            self.cursor = end;
            if !batch.is_empty() {
                return Some(batch);
            }
        }
        None
    }
}

/// One epoch over the train split, restricted to vocabulary characters.
pub fn batches<'a>(
    manifest: &'a DatasetManifest,
    vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
    side: u32,
) -> Result<BatchStream<'a>> {
    if batch_size < 1 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if !SUPPORTED_SIDES.contains(&side) {
        return Err(Error::UnsupportedSide(side));
    }
    let items = train_items(manifest, vocab);
    let order = epoch_permutation(items.len(), seed);
    Ok(BatchStream {
        manifest,
        items,
        order,
        cursor: 0,
        batch_size,
        side,
    })
}

/// Preprocessed glyphs held in memory, for repeated epochs.
#[derive(Debug, Clone)]
pub struct GlyphDataset {
    pub side: u32,
    pub samples: Vec<(GrayImage, usize)>,
}

impl GlyphDataset {
    /// Loads the train split of every vocabulary character.
    pub fn load_train(manifest: &DatasetManifest, vocab: &Vocabulary, side: u32) -> Result<Self> {
        if !SUPPORTED_SIDES.contains(&side) {
            return Err(Error::UnsupportedSide(side));
        }
        let mut samples = Vec::new();
        for (path, class) in train_items(manifest, vocab) {
            match load_record(manifest, &path).and_then(|r| preprocess_glyph(&r, side)) {
                Ok(r) => samples.push((r.image, class)),
                Err(e) => log::warn!("skipping {path}: {e}"),
            }
        }
        Ok(Self { side, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Batches for one epoch, same ordering rule as [`batches`].
    pub fn epoch(&self, batch_size: usize, seed: u64) -> Vec<Batch> {
        let order = epoch_permutation(self.samples.len(), seed);
        order
            .chunks(batch_size.max(1))
            .map(|chunk| Batch {
                side: self.side,
                images: chunk.iter().map(|&i| self.samples[i].0.clone()).collect(),
                labels: chunk.iter().map(|&i| self.samples[i].1).collect(),
            })
            .collect()
    }
}

/// Preprocessed holdout glyphs of the given characters, in path order.
pub fn holdout_glyphs(
    manifest: &DatasetManifest,
    characters: &[char],
    side: u32,
) -> Result<Vec<GlyphRecord>> {
    split_glyphs(manifest, characters, side, Split::Holdout)
}

/// Preprocessed glyphs of the given characters in one split, in path order.
pub fn split_glyphs(
    manifest: &DatasetManifest,
    characters: &[char],
    side: u32,
    split: Split,
) -> Result<Vec<GlyphRecord>> {
    let mut out = Vec::new();
    for path in manifest.paths_in(split) {
        if !character_of(path).is_some_and(|c| characters.contains(&c)) {
            continue;
        }
        match load_record(manifest, path).and_then(|r| preprocess_glyph(&r, side)) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping {path}: {e}"),
        }
    }
    Ok(out)
}
