//! Artwork records: SQLite rows plus PNG and upload files under `data_dir`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use callig_core::composer::{CompositionMetadata, LayoutSpec};
use callig_core::text_mapper::CharacterScore;

use crate::engine::{GenerationRequest, PipelineOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub rating: u8,
    pub comment: String,
    pub created_at: String,
}

/// Curation scores of one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub candidates: usize,
    pub chosen_index: usize,
    pub chosen_score: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub extractor_id: String,
    pub group_size: usize,
    pub scores: Vec<f64>,
}

impl ScoreSummary {
    pub fn from_curation(c: &callig_core::curator::CurationSummary) -> Self {
        let n = c.scores.len();
        Self {
            candidates: n,
            chosen_index: c.chosen_index,
            chosen_score: c.scores[c.chosen_index],
            min: c.scores.iter().copied().fold(f64::INFINITY, f64::min),
            max: c.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: c.scores.iter().sum::<f64>() / n as f64,
            extractor_id: c.extractor_id.clone(),
            group_size: c.group_size,
            scores: c.scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkRecord {
    pub id: String,
    pub created_at: String,
    /// The request with defaults filled in and the seed fixed.
    pub request: GenerationRequest,
    pub metadata: CompositionMetadata,
    pub layout: LayoutSpec,
    pub caption_truncated: bool,
    pub characters: Vec<CharacterScore>,
    pub scores: ScoreSummary,
    pub image_path: String,
    pub image_url: String,
    pub has_dish_image: bool,
    #[serde(default)]
    pub feedback: Vec<Feedback>,
}

impl ArtworkRecord {
    pub fn new(
        id: &str,
        created_at: String,
        request: GenerationRequest,
        output: &PipelineOutput,
        image_path: &Path,
        has_dish_image: bool,
    ) -> Self {
        Self {
            id: id.to_string(),
            created_at,
            request,
            metadata: output.composition.metadata.clone(),
            layout: output.composition.spec.clone(),
            caption_truncated: output.composition.caption_truncated,
            characters: output.characters.clone(),
            scores: ScoreSummary::from_curation(&output.curation),
            image_path: image_path.display().to_string(),
            image_url: format!("/api/artworks/{id}/image"),
            has_dish_image,
            feedback: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Sql(#[from] rusqlite::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub struct Store {
    conn: Mutex<Connection>,
    dir: PathBuf,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS artworks (
    id TEXT PRIMARY KEY,
    created_at TEXT NOT NULL,
    record TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS artworks_order ON artworks (created_at, id);
CREATE TABLE IF NOT EXISTS feedback (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    artwork_id TEXT NOT NULL REFERENCES artworks (id),
    rating INTEGER NOT NULL CHECK (rating BETWEEN 1 AND 5),
    comment TEXT NOT NULL,
    created_at TEXT NOT NULL
);
";

impl Store {
    /// Opens or creates `records.db` and the file directories under `dir`.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("uploads"))?;
        let conn = Connection::open(dir.join("records.db"))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self {
            conn: Mutex::new(conn),
            dir: dir.to_path_buf(),
        })
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.dir.join("images").join(format!("{id}.png"))
    }

    fn dish_path(&self, id: &str) -> PathBuf {
        self.dir.join("uploads").join(format!("{id}.dish"))
    }

    pub fn logo_path(&self, logo_id: &str) -> PathBuf {
        self.dir.join("logos").join(format!("{logo_id}.png"))
    }

    /// Writes the files, then the row, so a visible record always has its image.
    pub fn insert(&self, record: &ArtworkRecord, png: &[u8], dish: Option<&[u8]>) -> Result<(), StoreError> {
        fs::write(self.image_path(&record.id), png)?;
        if let Some(bytes) = dish {
            fs::write(self.dish_path(&record.id), bytes)?;
        }
        let json = serde_json::to_string(record)?;
        self.conn.lock().expect("store lock").execute(
            "INSERT INTO artworks (id, created_at, record) VALUES (?1, ?2, ?3)",
            params![record.id, record.created_at, json],
        )?;
        Ok(())
    }

    fn feedback_for(conn: &Connection, id: &str) -> Result<Vec<Feedback>, StoreError> {
        let mut stmt =
            conn.prepare("SELECT rating, comment, created_at FROM feedback WHERE artwork_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([id], |r| {
            Ok(Feedback {
                rating: r.get(0)?,
                comment: r.get(1)?,
                created_at: r.get(2)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn get(&self, id: &str) -> Result<Option<ArtworkRecord>, StoreError> {
        let conn = self.conn.lock().expect("store lock");
        let json: Option<String> = conn
            .query_row("SELECT record FROM artworks WHERE id = ?1", [id], |r| r.get(0))
            .optional()?;
        let Some(json) = json else { return Ok(None) };
        let mut record: ArtworkRecord = serde_json::from_str(&json)?;
        record.feedback = Self::feedback_for(&conn, id)?;
        Ok(Some(record))
    }

    /// Records ordered by `(created_at, id)`, and the total count.
    pub fn list(&self, limit: usize, offset: usize) -> Result<(Vec<ArtworkRecord>, usize), StoreError> {
        let conn = self.conn.lock().expect("store lock");
        let total: i64 = conn.query_row("SELECT COUNT(*) FROM artworks", [], |r| r.get(0))?;
        let mut stmt =
            conn.prepare("SELECT id, record FROM artworks ORDER BY created_at, id LIMIT ?1 OFFSET ?2")?;
        let rows: Vec<(String, String)> = stmt
            .query_map(params![limit as i64, offset as i64], |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(rows.len());
        for (id, json) in rows {
            let mut record: ArtworkRecord = serde_json::from_str(&json)?;
            record.feedback = Self::feedback_for(&conn, &id)?;
            out.push(record);
        }
        Ok((out, total as usize))
    }

    /// Returns `false` when no record has this id.
    pub fn add_feedback(&self, id: &str, rating: u8, comment: &str, created_at: &str) -> Result<bool, StoreError> {
        let conn = self.conn.lock().expect("store lock");
        let exists: Option<i64> = conn
            .query_row("SELECT 1 FROM artworks WHERE id = ?1", [id], |r| r.get(0))
            .optional()?;
        if exists.is_none() {
            return Ok(false);
        }
        conn.execute(
            "INSERT INTO feedback (artwork_id, rating, comment, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![id, rating, comment, created_at],
        )?;
        Ok(true)
    }

    pub fn image(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        read_optional(&self.image_path(id))
    }

    pub fn dish(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        read_optional(&self.dish_path(id))
    }
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// RFC 3339 UTC timestamp with microseconds; sorts lexicographically.
pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}
