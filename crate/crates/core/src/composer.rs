//! Final artwork layout and rendering.
//!
//! The canvas is divided into tiles: an artwork tile and, when a caption or
//! logo is present, a margin band along the top or bottom edge shared by
//! the caption and a square logo tile. Every element box is its tile scaled
//! by `√(1 − whitespace_ratio)`, so the occupied area equals
//! `(1 − whitespace_ratio)` of the canvas and boxes can never overlap. The
//! seed picks one of eight placement rules (band edge, logo side, anchoring).

use std::path::Path;

use font8x8::UnicodeFonts;
use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::aesthetics::Palette;
use crate::raster::encode_rgb_png;
use crate::{Error, Result};

pub const MIN_CANVAS_SIDE: u32 = 256;
pub const MAX_WHITESPACE_RATIO: f64 = 0.9;
/// Margin band height as a share of the canvas height.
const BAND_FRACTION: f64 = 0.16;
const MIN_ARTWORK_SIDE: u32 = 16;
const CAPTION_PADDING: u32 = 4;
const GLYPH_PX: u32 = 8;
const MIN_CAPTION_HEIGHT: u32 = GLYPH_PX + 2 * CAPTION_PADDING;
const MIN_CAPTION_WIDTH: u32 = 3 * GLYPH_PX + 2 * CAPTION_PADDING;
const MIN_LOGO_SIDE: u32 = 8;
const CAPTION_COLOR: [u8; 3] = [40, 38, 36];
const RULES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Artwork,
    Caption,
    Logo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedElement {
    pub kind: ElementKind,
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub content_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub canvas_size: (u32, u32),
    pub whitespace_ratio: f64,
    pub elements: Vec<PlacedElement>,
    pub background_color: [u8; 3],
    /// Placement rule chosen by the seed.
    pub rule: u8,
}

impl LayoutSpec {
    pub fn element(&self, kind: ElementKind) -> Option<&PlacedElement> {
        self.elements.iter().find(|e| e.kind == kind)
    }

    pub fn occupied_area(&self) -> u64 {
        self.elements.iter().map(|e| e.bbox.area()).sum()
    }

    pub fn canvas_area(&self) -> u64 {
        self.canvas_size.0 as u64 * self.canvas_size.1 as u64
    }

    /// Checks ratio range, box sizes, containment, non-overlap and that
    /// exactly one artwork element exists.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.canvas_size;
        if !(0.0..=MAX_WHITESPACE_RATIO).contains(&self.whitespace_ratio) {
            return Err(Error::invalid(
                "whitespace_ratio",
                format!("{} is outside [0, {MAX_WHITESPACE_RATIO}]", self.whitespace_ratio),
            ));
        }
        let artworks = self.elements.iter().filter(|e| e.kind == ElementKind::Artwork).count();
        if artworks != 1 {
            return Err(Error::invalid("elements", format!("{artworks} artwork elements")));
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.bbox.w == 0 || e.bbox.h == 0 {
                return Err(Error::invalid("elements", format!("{:?} box is empty", e.kind)));
            }
            if !e.bbox.within(w, h) {
                return Err(Error::invalid("elements", format!("{:?} box leaves the canvas", e.kind)));
            }
            for other in &self.elements[i + 1..] {
                if e.bbox.overlaps(&other.bbox) {
                    return Err(Error::invalid(
                        "elements",
                        format!("{:?} and {:?} overlap", e.kind, other.kind),
                    ));
                }
            }
        }
        Ok(())
    }
}

struct Tile {
    kind: ElementKind,
    rect: Rect,
    min: (u32, u32),
}

/// Places the artwork and optional caption and logo on the canvas.
pub fn layout(
    canvas_size: (u32, u32),
    whitespace_ratio: f64,
    has_caption: bool,
    has_logo: bool,
    seed: u64,
) -> Result<LayoutSpec> {
    let (w, h) = canvas_size;
    if w < MIN_CANVAS_SIDE || h < MIN_CANVAS_SIDE {
        return Err(Error::invalid(
            "canvas_size",
            format!("{w}x{h} is smaller than {MIN_CANVAS_SIDE}x{MIN_CANVAS_SIDE}"),
        ));
    }
    if !whitespace_ratio.is_finite() || !(0.0..=MAX_WHITESPACE_RATIO).contains(&whitespace_ratio) {
        return Err(Error::invalid(
            "whitespace_ratio",
            format!("{whitespace_ratio} is outside [0, {MAX_WHITESPACE_RATIO}]"),
        ));
    }
    let rule = (seed % RULES) as u8;
    let band_top = rule & 1 != 0;
    let logo_left = rule & 2 != 0;
    let hug_edges = rule & 4 != 0;

    let mut tiles = Vec::new();
    let art_min = (MIN_ARTWORK_SIDE, MIN_ARTWORK_SIDE);
    if !has_caption && !has_logo {
        tiles.push(Tile {
            kind: ElementKind::Artwork,
            rect: Rect { x: 0, y: 0, w, h },
            min: art_min,
        });
    } else {
        let band = (h as f64 * BAND_FRACTION).round() as u32;
        let band_y = if band_top { 0 } else { h - band };
        let art_y = if band_top { band } else { 0 };
        tiles.push(Tile {
            kind: ElementKind::Artwork,
            rect: Rect { x: 0, y: art_y, w, h: h - band },
            min: art_min,
        });
        // Square logo tile, but never more than half a narrow band.
        let logo_side = if has_caption { band.min(w / 2) } else { w };
        if has_logo {
            let x = if logo_left || !has_caption { 0 } else { w - logo_side };
            tiles.push(Tile {
                kind: ElementKind::Logo,
                rect: Rect { x, y: band_y, w: logo_side, h: band },
                min: (MIN_LOGO_SIDE, MIN_LOGO_SIDE),
            });
        }
        if has_caption {
            let (x, cw) = match (has_logo, logo_left) {
                (false, _) => (0, w),
                (true, true) => (logo_side, w - logo_side),
                (true, false) => (0, w - logo_side),
            };
            tiles.push(Tile {
                kind: ElementKind::Caption,
                rect: Rect { x, y: band_y, w: cw, h: band },
                min: (MIN_CAPTION_WIDTH, MIN_CAPTION_HEIGHT),
            });
        }
    }

    let scale = (1.0 - whitespace_ratio).sqrt();
    let min_scale = tiles
        .iter()
        .map(|t| (t.min.0 as f64 / t.rect.w as f64).max(t.min.1 as f64 / t.rect.h as f64))
        .fold(0.0, f64::max);
    let sized: Vec<(u32, u32)> = tiles
        .iter()
        .map(|t| {
            (
                ((t.rect.w as f64 * scale).round() as u32).clamp(1, t.rect.w),
                ((t.rect.h as f64 * scale).round() as u32).clamp(1, t.rect.h),
            )
        })
        .collect();
    if tiles.iter().zip(&sized).any(|(t, s)| s.0 < t.min.0 || s.1 < t.min.1) {
        return Err(Error::LayoutInfeasible {
            reason: "caption, logo or artwork would fall below its minimum size".into(),
            max_ratio: (1.0 - min_scale * min_scale).max(0.0),
        });
    }

    // Fold rounding error into the artwork height.
    let target = (1.0 - whitespace_ratio) * w as f64 * h as f64;
    let mut sized = sized;
    let rest: f64 = sized[1..].iter().map(|s| s.0 as f64 * s.1 as f64).sum();
    let art_tile = &tiles[0].rect;
    let art_w = sized[0].0 as f64;
    let wanted_h = ((target - rest) / art_w).round();
    sized[0].1 = (wanted_h.max(MIN_ARTWORK_SIDE as f64) as u32).min(art_tile.h);

    let elements = tiles
        .iter()
        .zip(sized)
        .map(|(t, (bw, bh))| {
            let center_x = t.rect.x + (t.rect.w - bw) / 2;
            let center_y = t.rect.y + (t.rect.h - bh) / 2;
            let (x, y) = match t.kind {
                ElementKind::Artwork => (center_x, center_y),
                _ if !hug_edges => (center_x, center_y),
                kind => {
                    let y = if band_top { t.rect.y } else { t.rect.y + t.rect.h - bh };
                    let x = match kind {
                        ElementKind::Logo if t.rect.x == 0 => 0,
                        ElementKind::Logo => t.rect.x + t.rect.w - bw,
                        _ => center_x,
                    };
                    (x, y)
                }
            };
            PlacedElement {
                kind: t.kind,
                bbox: Rect { x, y, w: bw, h: bh },
                content_ref: match t.kind {
                    ElementKind::Artwork => "artwork",
                    ElementKind::Caption => "caption",
                    ElementKind::Logo => "logo",
                }
                .into(),
            }
        })
        .collect();

    let spec = LayoutSpec {
        canvas_size,
        whitespace_ratio,
        elements,
        background_color: [255, 255, 255],
        rule,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionMetadata {
    pub request_id: String,
    pub seed: u64,
    pub style_id: Option<String>,
    pub palette: Option<Palette>,
    pub condition_characters: Vec<char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtworkComposition {
    pub spec: LayoutSpec,
    #[serde(skip)]
    pub rendered: RgbImage,
    pub metadata: CompositionMetadata,
    /// The caption did not fit and was cut with an ellipsis.
    pub caption_truncated: bool,
}

impl ArtworkComposition {
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_rgb_png(&self.rendered)
    }

    /// Writes the PNG and a JSON sidecar (same stem, `.json`).
    pub fn write(&self, png_path: &Path) -> Result<()> {
        std::fs::write(png_path, self.encode_png()?)?;
        std::fs::write(png_path.with_extension("json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Scales `img` into `rect` preserving aspect ratio, centered.
fn draw_fitted(canvas: &mut RgbImage, img: &RgbImage, rect: Rect) {
    let scale = (rect.w as f64 / img.width() as f64).min(rect.h as f64 / img.height() as f64);
    let nw = ((img.width() as f64 * scale).round() as u32).clamp(1, rect.w);
    let nh = ((img.height() as f64 * scale).round() as u32).clamp(1, rect.h);
    let scaled = if (nw, nh) == img.dimensions() {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, imageops::FilterType::CatmullRom)
    };
    let (ox, oy) = (rect.x + (rect.w - nw) / 2, rect.y + (rect.h - nh) / 2);
    imageops::replace(canvas, &scaled, ox as i64, oy as i64);
}

fn glyph_bitmap(c: char) -> [u8; 8] {
    font8x8::BASIC_FONTS
        .get(c)
        .or_else(|| font8x8::LATIN_FONTS.get(c))
        .or_else(|| font8x8::GREEK_FONTS.get(c))
        .or_else(|| font8x8::HIRAGANA_FONTS.get(c))
        // Anything without a bitmap is drawn as a hollow box.
        .unwrap_or([0x7E, 0x42, 0x42, 0x42, 0x42, 0x42, 0x7E, 0x00])
}

/// Draws `text` centered in `rect` at the largest integer scale that fits,
/// truncating with "..." when even scale 1 is too wide.
fn draw_caption(canvas: &mut RgbImage, text: &str, rect: Rect) -> bool {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return false;
    }
    let inner_w = rect.w.saturating_sub(2 * CAPTION_PADDING);
    let inner_h = rect.h.saturating_sub(2 * CAPTION_PADDING);
    let max_chars = (inner_w / GLYPH_PX) as usize;
    let (line, truncated): (Vec<char>, bool) = if chars.len() <= max_chars {
        (chars, false)
    } else if max_chars >= 3 {
        let mut cut: Vec<char> = chars[..max_chars - 3].to_vec();
        cut.extend("...".chars());
        (cut, true)
    } else {
        (Vec::new(), true)
    };
    if truncated {
        log::warn!("caption {text:?} truncated to fit {}px", rect.w);
    }
    if line.is_empty() || inner_h < GLYPH_PX {
        return truncated;
    }
    let scale = (inner_w / (GLYPH_PX * line.len() as u32)).min(inner_h / GLYPH_PX).max(1);
    let text_w = GLYPH_PX * scale * line.len() as u32;
    let text_h = GLYPH_PX * scale;
    let x0 = rect.x + (rect.w - text_w) / 2;
    let y0 = rect.y + (rect.h - text_h) / 2;
    for (i, &c) in line.iter().enumerate() {
        let bitmap = glyph_bitmap(c);
        for (row, bits) in bitmap.iter().enumerate() {
            for col in 0..8u32 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = x0 + (i as u32 * GLYPH_PX + col) * scale + dx;
                        let y = y0 + row as u32 * scale + dy;
                        canvas.put_pixel(x, y, Rgb(CAPTION_COLOR));
                    }
                }
            }
        }
    }
    truncated
}

/// Renders the composition. Pixels outside element boxes keep the
/// background color.
pub fn render(
    spec: &LayoutSpec,
    artwork: &RgbImage,
    caption: &str,
    logo: Option<&RgbImage>,
    metadata: CompositionMetadata,
) -> Result<ArtworkComposition> {
    spec.validate()?;
    if artwork.width() == 0 || artwork.height() == 0 {
        return Err(Error::invalid("artwork", "empty image"));
    }
    let (w, h) = spec.canvas_size;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb(spec.background_color));
    let mut caption_truncated = false;
    for e in &spec.elements {
        match e.kind {
            ElementKind::Artwork => draw_fitted(&mut canvas, artwork, e.bbox),
            ElementKind::Caption => caption_truncated = draw_caption(&mut canvas, caption, e.bbox),
            ElementKind::Logo => {
                if let Some(logo) = logo.filter(|l| l.width() > 0 && l.height() > 0) {
                    draw_fitted(&mut canvas, logo, e.bbox);
                }
            }
        }
    }
    Ok(ArtworkComposition {
        spec: spec.clone(),
        rendered: canvas,
        metadata,
        caption_truncated,
    })
}
