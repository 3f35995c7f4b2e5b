//! Fixtures shared by the integration tests: synthetic corpora, toy
//! checkpoints, an in-process server and the HTTP contract checks.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use callig_core::corpus::{scan_corpus, select_vocabulary, GlyphDataset};
use callig_core::synth::{fixture_characters, write_corpus};
use callig_gan::{train, Checkpoint, GanConfig, TrainControl};
use callig_studio::config::StudioConfig;
use callig_studio::service::{router, Studio};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

pub const SIDE: u32 = 32;

/// `chars` fixture characters with `count` images each, plus `manifest.json`.
pub fn corpus(root: &Path, chars: usize, count: usize, seed: u64) -> PathBuf {
    let dir = root.join("corpus");
    write_corpus(&dir, &fixture_characters(chars, count), SIDE, 3, seed).unwrap();
    scan_corpus(&dir).unwrap().save(&dir.join("manifest.json")).unwrap();
    dir
}

pub fn toy_config(seed: u64, epochs: usize) -> GanConfig {
    GanConfig {
        image_side: SIDE,
        epochs,
        batch_size: 32,
        seed,
        ..GanConfig::default()
    }
}

/// Trains on the corpus (every character has more than `min_images`).
pub fn train_checkpoint(corpus: &Path, config: GanConfig, min_images: usize) -> Checkpoint {
    let manifest = scan_corpus(corpus).unwrap();
    let vocab = select_vocabulary(&manifest, min_images, 1000).unwrap();
    let data = GlyphDataset::load_train(&manifest, &vocab, SIDE).unwrap();
    train(&data, &vocab, config, &mut |_, _| TrainControl::Continue).unwrap()
}

/// Untrained but complete checkpoint; enough to exercise the service.
pub fn init_checkpoint(corpus: &Path, out: &Path) -> PathBuf {
    let manifest = scan_corpus(corpus).unwrap();
    let vocab = select_vocabulary(&manifest, 1, 1000).unwrap();
    let path = out.join("init.ckpt");
    Checkpoint::initialize(toy_config(0, 1), vocab).unwrap().save(&path).unwrap();
    path
}

pub fn studio_config(root: &Path, checkpoint: Option<&Path>, corpus: &Path) -> StudioConfig {
    StudioConfig {
        checkpoint_path: checkpoint.map(Path::to_path_buf),
        corpus_dir: Some(corpus.to_path_buf()),
        data_dir: root.join("data"),
        canvas_size: "256x256".into(),
        ..StudioConfig::default()
    }
}

/// Writes a style directory with an empty manifest.
pub fn empty_styles(root: &Path) -> PathBuf {
    let dir = root.join("no-styles");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("styles.json"), "[]").unwrap();
    dir
}

/// A served studio on an ephemeral port.
pub struct Server {
    pub base: String,
    pub studio: Arc<Studio>,
    pub rt: tokio::runtime::Runtime,
}

impl Server {
    pub fn start(studio: Studio) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let studio = Arc::new(studio);
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = router(Arc::clone(&studio));
        rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self { base, studio, rt }
    }
}

/// Two-color dish photo.
pub fn dish_png() -> Vec<u8> {
    let img = RgbImage::from_fn(48, 48, |x, _| if x < 24 { Rgb([200, 60, 30]) } else { Rgb([40, 120, 70]) });
    callig_core::raster::encode_rgb_png(&img).unwrap()
}

/// Outcome of one named contract check.
pub struct Check {
    pub name: &'static str,
    pub result: Result<(), String>,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

async fn error_field(resp: reqwest::Response, status: u16) -> Result<String, String> {
    let got = resp.status().as_u16();
    let body: Value = resp.json().await.map_err(|e| format!("error body is not JSON: {e}"))?;
    ensure!(got == status, "status {got}, expected {status}: {body}");
    let field = body["field"].as_str().unwrap_or("").to_string();
    ensure!(!field.is_empty(), "4xx body names no field: {body}");
    ensure!(body["message"].as_str().is_some_and(|m| !m.is_empty()), "no message: {body}");
    Ok(field)
}

async fn expect_field(resp: reqwest::Response, status: u16, field: &str) -> Result<(), String> {
    let got = error_field(resp, status).await?;
    ensure!(got == field, "named field {got:?}, expected {field:?}");
    Ok(())
}

async fn create(c: &reqwest::Client, base: &str, body: Value) -> Result<Value, String> {
    let resp = c.post(format!("{base}/api/artworks")).json(&body).send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let v: Value = resp.json().await.map_err(|e| e.to_string())?;
    ensure!(status == 201, "create returned {status}: {v}");
    Ok(v)
}

async fn create_and_fetch(c: &reqwest::Client, base: &str, canvas: (u32, u32)) -> Result<(), String> {
    let rec = create(c, base, json!({ "text": "spicy noodle soup", "seed": 42, "caption": "Noodles" })).await?;
    let id = rec["id"].as_str().ok_or("record has no id")?;
    ensure!(rec["request"]["seed"] == 42, "seed not kept: {}", rec["request"]);
    ensure!(rec["request"]["palette_k"] == 5, "palette_k default missing");
    ensure!(rec["request"]["whitespace_ratio"] == 0.3, "whitespace_ratio default missing");
    ensure!(rec["request"]["style_strength"] == 0.7, "style_strength default missing");
    ensure!(rec["characters"].as_array().is_some_and(|a| !a.is_empty()), "no characters");
    ensure!(rec["scores"]["scores"].as_array().is_some_and(|a| a.len() == 50), "expected 50 candidate scores");
    ensure!(rec["feedback"].as_array().is_some_and(|a| a.is_empty()), "fresh record has feedback");
    ensure!(rec["created_at"].as_str().is_some(), "no created_at");
    ensure!(rec["image_path"].as_str().is_some(), "no image_path");

    let got: Value = c.get(format!("{base}/api/artworks/{id}")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    ensure!(got == rec, "GET differs from POST response");

    let resp = c.get(format!("{base}/api/artworks/{id}/image")).send().await.map_err(|e| e.to_string())?;
    ensure!(resp.status() == 200, "image status {}", resp.status());
    ensure!(
        resp.headers().get("content-type").is_some_and(|v| v == "image/png"),
        "image content type"
    );
    let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
    let img = image::load_from_memory(&bytes).map_err(|e| e.to_string())?;
    ensure!((img.width(), img.height()) == canvas, "image is {}x{}", img.width(), img.height());

    let unseeded = create(c, base, json!({ "text": "tea" })).await?;
    let seed = unseeded["request"]["seed"].as_u64().ok_or("no seed assigned")?;
    ensure!(seed < (1 << 53), "seed {seed} not JSON-safe");
    ensure!(unseeded["id"] != rec["id"], "ids repeat");
    Ok(())
}

async fn multipart_dish(c: &reqwest::Client, base: &str) -> Result<(), String> {
    use reqwest::multipart::{Form, Part};
    let form = Form::new()
        .text("request", json!({ "text": "tomato and greens", "seed": 3, "palette_k": 2 }).to_string())
        .part("dish_image", Part::bytes(dish_png()).file_name("dish.png").mime_str("image/png").unwrap());
    let resp = c.post(format!("{base}/api/artworks")).multipart(form).send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let rec: Value = resp.json().await.map_err(|e| e.to_string())?;
    ensure!(status == 201, "multipart create returned {status}: {rec}");
    ensure!(rec["has_dish_image"] == true, "dish not recorded");
    let colors = rec["metadata"]["palette"]["colors"].as_array().ok_or("no palette")?;
    ensure!(colors.len() == 2, "palette {colors:?}");
    let has = |c: [u64; 3]| colors.iter().any(|v| (0..3).all(|i| v[i].as_u64() == Some(c[i])));
    ensure!(has([200, 60, 30]) && has([40, 120, 70]), "palette not taken from the dish: {colors:?}");
    Ok(())
}

async fn validation_errors(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let url = format!("{base}/api/artworks");
    let cases = [
        (json!({ "text": "" }), "text"),
        (json!({ "text": "   " }), "text"),
        (json!({}), "text"),
        (json!({ "text": "a", "palette_k": 0 }), "palette_k"),
        (json!({ "text": "a", "palette_k": "five" }), "palette_k"),
        (json!({ "text": "a", "whitespace_ratio": 0.95 }), "whitespace_ratio"),
        (json!({ "text": "a", "style_strength": -0.1 }), "style_strength"),
        (json!({ "text": "a", "weights": [1, 1, 1, 1] }), "weights"),
        (json!({ "text": "a", "weights": [0, 0, 0, 0, 0] }), "weights"),
        (json!({ "text": "a", "seed": -1 }), "seed"),
        (json!({ "text": "a", "colour": "red" }), "colour"),
        (json!({ "text": "a", "style_id": "no-such-style" }), "style_id"),
        (json!({ "text": "a", "logo_id": "missing" }), "logo_id"),
    ];
    for (body, field) in cases {
        let resp = c.post(&url).json(&body).send().await.map_err(|e| e.to_string())?;
        expect_field(resp, 422, field).await.map_err(|e| format!("{body}: {e}"))?;
    }
    let resp = c
        .post(&url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .map_err(|e| e.to_string())?;
    error_field(resp, 422).await.map_err(|e| format!("malformed JSON: {e}"))?;
    let resp = c.post(&url).header("content-type", "text/plain").body("text").send().await.map_err(|e| e.to_string())?;
    error_field(resp, 415).await.map_err(|e| format!("text/plain: {e}"))?;

    use reqwest::multipart::{Form, Part};
    let form = Form::new()
        .text("request", json!({ "text": "a" }).to_string())
        .part("dish_image", Part::bytes(b"not an image".to_vec()).file_name("d.png"));
    let resp = c.post(&url).multipart(form).send().await.map_err(|e| e.to_string())?;
    expect_field(resp, 422, "dish_image").await.map_err(|e| format!("undecodable dish: {e}"))?;
    let form = Form::new().part("dish_image", Part::bytes(dish_png()).file_name("d.png"));
    let resp = c.post(&url).multipart(form).send().await.map_err(|e| e.to_string())?;
    expect_field(resp, 422, "request").await.map_err(|e| format!("no request part: {e}"))?;
    Ok(())
}

async fn oversized_upload(c: &reqwest::Client, base: &str, limit: usize) -> Result<(), String> {
    use reqwest::multipart::{Form, Part};
    let form = Form::new()
        .text("request", json!({ "text": "a" }).to_string())
        .part("dish_image", Part::bytes(vec![0u8; limit + 1]).file_name("big.png"));
    let resp = c.post(format!("{base}/api/artworks")).multipart(form).send().await.map_err(|e| e.to_string())?;
    expect_field(resp, 413, "dish_image").await
}

async fn listing(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let page: Value = c.get(format!("{base}/api/artworks?limit=100")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    let items = page["items"].as_array().ok_or("no items")?;
    let total = page["total"].as_u64().ok_or("no total")? as usize;
    ensure!(items.len() == total && total >= 2, "{} items, total {total}", items.len());
    let keys: Vec<(String, String)> = items
        .iter()
        .map(|r| (r["created_at"].as_str().unwrap_or("").to_string(), r["id"].as_str().unwrap_or("").to_string()))
        .collect();
    ensure!(keys.windows(2).all(|w| w[0] <= w[1]), "not ordered by (created_at, id)");
    let second: Value = c.get(format!("{base}/api/artworks?limit=1&offset=1")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    ensure!(second["items"][0]["id"] == items[1]["id"], "offset paging");
    for q in ["limit=0", "limit=101", "limit=x", "offset=-1"] {
        let resp = c.get(format!("{base}/api/artworks?{q}")).send().await.map_err(|e| e.to_string())?;
        let field = q.split('=').next().unwrap();
        expect_field(resp, 422, field).await.map_err(|e| format!("{q}: {e}"))?;
    }
    Ok(())
}

async fn not_found(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let id = uuid::Uuid::new_v4();
    for path in [format!("/api/artworks/{id}"), format!("/api/artworks/{id}/image")] {
        let resp = c.get(format!("{base}{path}")).send().await.map_err(|e| e.to_string())?;
        expect_field(resp, 404, "id").await.map_err(|e| format!("{path}: {e}"))?;
    }
    let resp = c
        .post(format!("{base}/api/artworks/{id}/feedback"))
        .json(&json!({ "rating": 3 }))
        .send()
        .await
        .map_err(|e| e.to_string())?;
    expect_field(resp, 404, "id").await.map_err(|e| format!("feedback: {e}"))
}

async fn feedback(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let rec = create(c, base, json!({ "text": "dumplings", "seed": 9 })).await?;
    let id = rec["id"].as_str().unwrap();
    let url = format!("{base}/api/artworks/{id}/feedback");
    for bad in [json!({ "rating": 0 }), json!({ "rating": 6 }), json!({ "rating": 2.5 }), json!({ "comment": "x" })] {
        let resp = c.post(&url).json(&bad).send().await.map_err(|e| e.to_string())?;
        expect_field(resp, 422, "rating").await.map_err(|e| format!("{bad}: {e}"))?;
    }
    for (rating, comment) in [(5, "lovely"), (1, "")] {
        let resp = c.post(&url).json(&json!({ "rating": rating, "comment": comment })).send().await.map_err(|e| e.to_string())?;
        ensure!(resp.status() == 204, "feedback status {}", resp.status());
    }
    let got: Value = c.get(format!("{base}/api/artworks/{id}")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    let fb = got["feedback"].as_array().ok_or("no feedback list")?;
    ensure!(fb.len() == 2, "feedback {fb:?}");
    ensure!(fb[0]["rating"] == 5 && fb[0]["comment"] == "lovely" && fb[1]["rating"] == 1, "feedback {fb:?}");
    ensure!(fb.iter().all(|f| f["created_at"].is_string()), "feedback lacks timestamps");
    Ok(())
}

async fn styles(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let list: Value = c.get(format!("{base}/api/styles")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    let list = list.as_array().ok_or("styles is not a list")?;
    ensure!(!list.is_empty(), "built-in registry is empty");
    for s in list {
        let id = s["style_id"].as_str().ok_or("no style_id")?;
        ensure!(s["display_name"].is_string(), "no display_name");
        let url = s["preview_url"].as_str().ok_or("no preview_url")?;
        let resp = c.get(format!("{base}{url}")).send().await.map_err(|e| e.to_string())?;
        ensure!(resp.status() == 200, "preview of {id}: {}", resp.status());
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
        image::load_from_memory(&bytes).map_err(|e| format!("preview of {id}: {e}"))?;
        let rec = create(c, base, json!({ "text": "plum wine", "seed": 1, "style_id": id, "style_strength": 1.0 })).await?;
        ensure!(rec["metadata"]["style_id"] == id, "style not recorded");
    }
    let resp = c.get(format!("{base}/api/styles/none/preview")).send().await.map_err(|e| e.to_string())?;
    expect_field(resp, 404, "style_id").await
}

async fn health(c: &reqwest::Client, base: &str) -> Result<(), String> {
    let h: Value = c.get(format!("{base}/api/health")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
    ensure!(h["model_loaded"] == true, "health {h}");
    Ok(())
}

/// Every check against a server with a model loaded.
pub fn contract(server: &Server) -> Vec<Check> {
    let base = server.base.clone();
    let canvas = server.studio.config.canvas();
    let limit = server.studio.config.max_upload_bytes;
    server.rt.block_on(async move {
        let c = reqwest::Client::new();
        vec![
            Check { name: "health", result: health(&c, &base).await },
            Check { name: "create, get and image", result: create_and_fetch(&c, &base, canvas).await },
            Check { name: "multipart dish upload", result: multipart_dish(&c, &base).await },
            Check { name: "422 names the field", result: validation_errors(&c, &base).await },
            Check { name: "413 oversized upload", result: oversized_upload(&c, &base, limit).await },
            Check { name: "listing and paging", result: listing(&c, &base).await },
            Check { name: "404 unknown id", result: not_found(&c, &base).await },
            Check { name: "feedback", result: feedback(&c, &base).await },
            Check { name: "styles", result: styles(&c, &base).await },
        ]
    })
}

/// Checks against a server without a model.
pub fn contract_without_model(server: &Server) -> Vec<Check> {
    let base = server.base.clone();
    server.rt.block_on(async move {
        let c = reqwest::Client::new();
        let unavailable = async {
            let resp = c
                .post(format!("{base}/api/artworks"))
                .json(&json!({ "text": "soup" }))
                .send()
                .await
                .map_err(|e| e.to_string())?;
            expect_field(resp, 503, "model").await?;
            let h: Value = c.get(format!("{base}/api/health")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
            ensure!(h["model_loaded"] == false, "health {h}");
            let resp = c.post(format!("{base}/api/artworks")).json(&json!({ "text": "" })).send().await.map_err(|e| e.to_string())?;
            expect_field(resp, 422, "text").await
        }
        .await;
        let empty_styles = async {
            let list: Value = c.get(format!("{base}/api/styles")).send().await.map_err(|e| e.to_string())?.json().await.map_err(|e| e.to_string())?;
            ensure!(list == json!([]), "styles {list}");
            Ok(())
        }
        .await;
        vec![
            Check { name: "503 without a model", result: unavailable },
            Check { name: "empty style registry", result: empty_styles },
        ]
    })
}

pub fn failures(checks: &[Check]) -> Vec<String> {
    checks
        .iter()
        .filter_map(|c| c.result.as_ref().err().map(|e| format!("{}: {e}", c.name)))
        .collect()
}
