//! WebAssembly bindings for the demo page in `www/`.
//!
//! Three operations run entirely in the browser: recoloring a glyph with
//! the palette of an uploaded dish photo, previewing a layout, and ranking
//! vocabulary characters against a text. Each has a plain Rust function
//! (used by the tests) and a thin `#[wasm_bindgen]` wrapper.

use callig_core::aesthetics::{
    default_min_blob_area, denoise, extract_palette, recolor, RecolorParams, DEFAULT_THRESHOLD_PERCENTILE,
};
use callig_core::composer::layout;
use callig_core::corpus::Vocabulary;
use callig_core::synth::render_glyph;
use callig_core::text_mapper::{embed_vocabulary, top_k_characters, HashEmbedder};
use image::RgbImage;
use wasm_bindgen::prelude::*;

const GLYPH_SIDE: u32 = 128;

/// A recolored glyph and the palette used.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Recolored {
    side: u32,
    rgba: Vec<u8>,
    colors: Vec<u8>,
    proportions: Vec<f64>,
    reduced: bool,
}

#[wasm_bindgen]
impl Recolored {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> u32 {
        self.side
    }

    /// RGBA pixels, row-major, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Palette colors as flat RGB triples.
    #[wasm_bindgen(getter)]
    pub fn colors(&self) -> Vec<u8> {
        self.colors.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn proportions(&self) -> Vec<f64> {
        self.proportions.clone()
    }

    /// The photo had fewer distinct colors than requested.
    #[wasm_bindgen(getter)]
    pub fn reduced(&self) -> bool {
        self.reduced
    }
}

/// Paints a synthetic glyph of `character` with the `k`-color palette of an
/// RGBA photo.
pub fn recolor_with_photo(
    rgba: &[u8],
    width: u32,
    height: u32,
    character: char,
    k: usize,
    seed: u64,
) -> Result<Recolored, String> {
    if rgba.len() != width as usize * height as usize * 4 || rgba.is_empty() {
        return Err(format!("expected {width}x{height} RGBA pixels, got {} bytes", rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let photo = RgbImage::from_raw(width, height, rgb).ok_or("bad image size")?;
    let found = extract_palette(&photo, k, seed).map_err(|e| e.to_string())?;
    let glyph = render_glyph(character, 0, GLYPH_SIDE, seed);
    let clean = denoise(&glyph, DEFAULT_THRESHOLD_PERCENTILE, default_min_blob_area(GLYPH_SIDE))
        .map_err(|e| e.to_string())?;
    let art = recolor(&clean.image, &found.palette, &RecolorParams::default(), seed).map_err(|e| e.to_string())?;
    Ok(Recolored {
        side: GLYPH_SIDE,
        rgba: art.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2], 255]).collect(),
        colors: found.palette.colors.iter().flatten().copied().collect(),
        proportions: found.palette.proportions,
        reduced: found.reduced,
    })
}

/// Layout of artwork, caption and logo boxes as JSON.
pub fn layout_json(width: u32, height: u32, ratio: f64, caption: bool, logo: bool, seed: u64) -> Result<String, String> {
    let spec = layout((width, height), ratio, caption, logo, seed).map_err(|e| e.to_string())?;
    serde_json::to_string(&spec).map_err(|e| e.to_string())
}

/// The `k` characters of `vocabulary` closest to `text`, as JSON, using the
/// built-in hash embedder.
pub fn rank_json(text: &str, vocabulary: &str, k: usize) -> Result<String, String> {
    let mut chars: Vec<char> = vocabulary.chars().filter(|c| !c.is_whitespace()).collect();
    chars.sort_unstable();
    chars.dedup();
    if chars.is_empty() {
        return Err("the vocabulary is empty".into());
    }
    let vocab = Vocabulary::from_ordered(chars.into_iter().map(|c| (c, 1)));
    let provider = HashEmbedder::default();
    let embeddings = embed_vocabulary(&provider, &vocab, None).map_err(|e| e.to_string())?;
    let scores = top_k_characters(text, &provider, &vocab, &embeddings, k.min(vocab.size()))
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&scores).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = recolorWithPhoto)]
pub fn recolor_with_photo_js(
    rgba: &[u8],
    width: u32,
    height: u32,
    character: &str,
    k: usize,
    seed: u32,
) -> Result<Recolored, JsError> {
    let c = character.chars().next().unwrap_or('永');
    recolor_with_photo(rgba, width, height, c, k, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = layoutPreview)]
pub fn layout_preview_js(width: u32, height: u32, ratio: f64, caption: bool, logo: bool, seed: u32) -> Result<String, JsError> {
    layout_json(width, height, ratio, caption, logo, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = rankCharacters)]
pub fn rank_characters_js(text: &str, vocabulary: &str, k: usize) -> Result<String, JsError> {
    rank_json(text, vocabulary, k).map_err(|e| JsError::new(&e))
}
