//! Maps free text to the vocabulary characters whose embeddings are most
//! similar to it, and from there to a [`ConditionVector`].
//!
//! The whole input text is embedded as one string, every vocabulary
//! character is embedded on its own, and the `k` characters with the highest
//! cosine similarity win. Embedding backends plug in through
//! [`EmbeddingProvider`]; [`HashEmbedder`] is the hermetic default.

use std::cmp::Ordering;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condition::{build_condition, ConditionVector};
use crate::corpus::Vocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    pub provider_id: String,
}

/// Source of text embeddings. `embed` must be deterministic.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<TextEmbedding>;
}

/// Deterministic embedder: the SHA-256 of the text seeds a Gaussian vector
/// which is normalized to unit length. Identical strings map to identical
/// vectors; different strings are nearly orthogonal.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    id: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            id: format!("hash-{dimension}"),
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut vector: Vec<f32> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            vector.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(TextEmbedding {
            vector,
            provider_id: self.id.clone(),
        })
    }
}

/// Runs an external program once per text: the text is written to its
/// standard input and a JSON array of numbers is expected on standard
/// output. This is how a contextual language model (mean-pooled last layer)
/// is attached without linking it into the binary.
#[derive(Debug, Clone)]
pub struct CommandEmbedder {
    id: String,
    program: PathBuf,
    args: Vec<String>,
    dimension: usize,
}

impl CommandEmbedder {
    pub fn new(id: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>, dimension: usize) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            dimension,
        }
    }
}

impl EmbeddingProvider for CommandEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let fail = |reason: String| Error::Provider {
            text: text.to_string(),
            reason,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_string(&mut out)
            .map_err(|e| fail(e.to_string()))?;
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        let vector: Vec<f32> = serde_json::from_str(out.trim()).map_err(|e| fail(e.to_string()))?;
        if vector.len() != self.dimension {
            return Err(fail(format!(
                "expected {} dimensions, got {}",
                self.dimension,
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite embedding".into()));
        }
        Ok(TextEmbedding {
            vector,
            provider_id: self.id.clone(),
        })
    }
}

fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity of two embeddings from the same provider.
pub fn similarity(a: &TextEmbedding, b: &TextEmbedding) -> Result<f64> {
    if a.provider_id != b.provider_id {
        return Err(Error::ProviderMismatch(a.provider_id.clone(), b.provider_id.clone()));
    }
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch {
            expected: a.vector.len(),
            actual: b.vector.len(),
        });
    }
    cosine(&a.vector, &b.vector)
}

/// Per-character embeddings in class-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyEmbeddings {
    pub provider_id: String,
    pub dimension: usize,
    pub vocabulary_fingerprint: String,
    rows: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    provider_id: String,
    dimension: usize,
    vocabulary_fingerprint: String,
    rows: usize,
}

const CACHE_MAGIC: &[u8; 4] = b"CEMB";

impl VocabularyEmbeddings {
    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, class_index: usize) -> TextEmbedding {
        TextEmbedding {
            vector: self.rows[class_index].clone(),
            provider_id: self.provider_id.clone(),
        }
    }

    /// Cache file name for a provider and vocabulary.
    pub fn cache_file(dir: &Path, provider_id: &str, fingerprint: &str) -> PathBuf {
        let safe: String = provider_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        dir.join(format!("{safe}-{}.emb", &fingerprint[..16.min(fingerprint.len())]))
    }

    /// Binary layout: `CEMB`, little-endian `u32` header length, JSON
    /// header, then `rows × dimension` little-endian `f32`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&CacheHeader {
            provider_id: self.provider_id.clone(),
            dimension: self.dimension,
            vocabulary_fingerprint: self.vocabulary_fingerprint.clone(),
            rows: self.rows.len(),
        })?;
        let mut buf = Vec::with_capacity(8 + header.len() + self.rows.len() * self.dimension * 4);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for row in &self.rows {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let bad = |reason: &str| Error::BadImage {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        if buf.len() < 8 || &buf[..4] != CACHE_MAGIC {
            return Err(bad("not an embedding cache"));
        }
        let header_len = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")) as usize;
        let header: CacheHeader = serde_json::from_slice(
            buf.get(8..8 + header_len).ok_or_else(|| bad("truncated header"))?,
        )?;
        let body = &buf[8 + header_len..];
        if body.len() != header.rows * header.dimension * 4 {
            return Err(bad("matrix size does not match header"));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let rows = if header.dimension == 0 {
            vec![Vec::new(); header.rows]
        } else {
            values.chunks(header.dimension).map(<[f32]>::to_vec).collect()
        };
        Ok(Self {
            provider_id: header.provider_id,
            dimension: header.dimension,
            vocabulary_fingerprint: header.vocabulary_fingerprint,
            rows,
        })
    }
}

/// Embeds every vocabulary character. With a `cache_dir`, a matching cache
/// file is reused without calling the provider, and a fresh result is
/// written back.
pub fn embed_vocabulary(
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    cache_dir: Option<&Path>,
) -> Result<VocabularyEmbeddings> {
    let fingerprint = vocab.fingerprint();
    let cache_path = cache_dir.map(|d| VocabularyEmbeddings::cache_file(d, provider.id(), &fingerprint));
    if let Some(path) = cache_path.as_deref().filter(|p| p.exists()) {
        match VocabularyEmbeddings::read(path) {
            Ok(cached)
                if cached.provider_id == provider.id()
                    && cached.vocabulary_fingerprint == fingerprint
                    && cached.dimension == provider.dimension()
                    && cached.len() == vocab.size() =>
            {
                return Ok(cached);
            }
            Ok(_) => log::warn!("embedding cache {} is stale; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable embedding cache {}: {e}", path.display()),
        }
    }
    let mut rows = Vec::with_capacity(vocab.size());
    for character in vocab.characters() {
        let text = character.to_string();
        let e = provider.embed(&text).map_err(|e| match e {
            Error::Provider { .. } => e,
            other => Error::Provider {
                text,
                reason: other.to_string(),
            },
        })?;
        if e.vector.len() != provider.dimension() {
            return Err(Error::DimensionMismatch {
                expected: provider.dimension(),
                actual: e.vector.len(),
            });
        }
        rows.push(e.vector);
    }
    let out = VocabularyEmbeddings {
        provider_id: provider.id().to_string(),
        dimension: provider.dimension(),
        vocabulary_fingerprint: fingerprint,
        rows,
    };
    if let Some(path) = cache_path {
        out.write(&path)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterScore {
    pub character: char,
    pub class_index: usize,
    pub similarity: f64,
}

/// Descending similarity, ties by ascending codepoint.
pub fn rank_order(a: &CharacterScore, b: &CharacterScore) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.character.cmp(&b.character))
}

/// The `k` vocabulary characters most similar to `text`.
pub fn top_k_characters(
    text: &str,
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    embeddings: &VocabularyEmbeddings,
    k: usize,
) -> Result<Vec<CharacterScore>> {
    if text.trim().is_empty() {
        return Err(Error::invalid("text", "must not be empty"));
    }
    if k < 1 || k > vocab.size() {
        return Err(Error::invalid(
            "k",
            format!("must be between 1 and the vocabulary size {}", vocab.size()),
        ));
    }
    if embeddings.vocabulary_fingerprint != vocab.fingerprint() {
        return Err(Error::invalid("embeddings", "built for a different vocabulary"));
    }
    if embeddings.provider_id != provider.id() {
        return Err(Error::ProviderMismatch(
            embeddings.provider_id.clone(),
            provider.id().to_string(),
        ));
    }
    let query = provider.embed(text)?;
    let mut scores = vocab
        .entries()
        .iter()
        .map(|entry| {
            Ok(CharacterScore {
                character: entry.character,
                class_index: entry.class_index,
                similarity: similarity(&query, &embeddings.row(entry.class_index))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(rank_order);
    scores.truncate(k);
    Ok(scores)
}

/// Top-`k` characters turned into a condition. Without `weights` every
/// chosen character gets `1/k`; otherwise `weights[r]` applies to rank `r`.
pub fn text_to_condition(
    text: &str,
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    embeddings: &VocabularyEmbeddings,
    k: usize,
    weights: Option<&[f64]>,
) -> Result<(ConditionVector, Vec<CharacterScore>)> {
    if let Some(w) = weights {
        if w.len() != k {
            return Err(Error::invalid(
                "weights",
                format!("expected {k} weights, got {}", w.len()),
            ));
        }
    }
    let top = top_k_characters(text, provider, vocab, embeddings, k)?;
    let selected: Vec<(usize, f64)> = top
        .iter()
        .enumerate()
        .map(|(rank, s)| (s.class_index, weights.map_or(1.0, |w| w[rank])))
        .collect();
    Ok((build_condition(&selected, vocab.size())?, top))
}
