//! Procedural stand-in glyphs for fixtures, demos and desk-scale training.
//!
//! Each character gets a fixed set of brush strokes (quadratic curves with a
//! width) derived from its codepoint; every rendered sample jitters the
//! strokes, ink tone and paper texture so that a class looks like the same
//! character written by different hands.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::GrayImage;
use crate::Result;

/// Characters used by the bundled fixtures, most familiar first.
pub const FIXTURE_CHARACTERS: &str =
    "永東南西北春夏秋冬山水火木金土日月風雲花鳥魚竹石心人天地雨雪酒茶米麵湯肉飯蝦蟹豆菜香甜酸辣鹹鮮";

/// Start, end and half-width of one stroke segment.
type Segment = ((f32, f32), (f32, f32), f32);

#[derive(Debug, Clone, Copy)]
struct Stroke {
    points: [(f32, f32); 3],
    width: f32,
}

/// The stroke skeleton of one character.
#[derive(Debug, Clone)]
pub struct GlyphTemplate {
    strokes: Vec<Stroke>,
}

impl GlyphTemplate {
    pub fn for_character(character: char) -> Self {
        Self::from_seed(0x5eed_0000 ^ character as u64)
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=5);
        let strokes = (0..n)
            .map(|_| {
                // Mostly horizontal, vertical or diagonal sweeps, like brush
                // strokes, with a bent middle point.
                let kind = rng.random_range(0..4);
                let (a, b) = match kind {
                    0 => {
                        let y = rng.random_range(0.18..0.82);
                        ((rng.random_range(0.12..0.35), y), (rng.random_range(0.65..0.88), y + rng.random_range(-0.08..0.08)))
                    }
                    1 => {
                        let x = rng.random_range(0.18..0.82);
                        ((x, rng.random_range(0.12..0.35)), (x + rng.random_range(-0.08..0.08), rng.random_range(0.65..0.88)))
                    }
                    2 => (
                        (rng.random_range(0.5..0.85), rng.random_range(0.12..0.45)),
                        (rng.random_range(0.12..0.45), rng.random_range(0.55..0.88)),
                    ),
                    _ => (
                        (rng.random_range(0.15..0.5), rng.random_range(0.12..0.45)),
                        (rng.random_range(0.55..0.88), rng.random_range(0.55..0.88)),
                    ),
                };
                let mid = (
                    (a.0 + b.0) / 2.0 + rng.random_range(-0.12..0.12),
                    (a.1 + b.1) / 2.0 + rng.random_range(-0.12..0.12),
                );
                Stroke {
                    points: [a, mid, b],
                    width: rng.random_range(0.045..0.085),
                }
            })
            .collect();
        Self { strokes }
    }

    /// Renders one handwritten-looking sample.
    pub fn render(&self, side: u32, variant_seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(variant_seed);
        let jitter = Normal::new(0.0f32, 0.022).expect("valid sigma");
        let shift = (jitter.sample(&mut rng) * 1.3, jitter.sample(&mut rng) * 1.3);
        let scale = rng.random_range(0.92f32..1.04);
        let width_scale = rng.random_range(0.8f32..1.2);
        let ink = rng.random_range(0.02f32..0.15);

        let segments: Vec<Segment> = self
            .strokes
            .iter()
            .flat_map(|s| {
                let pts: Vec<(f32, f32)> = s
                    .points
                    .iter()
                    .map(|&(x, y)| {
                        let x = 0.5 + (x - 0.5) * scale + shift.0 + jitter.sample(&mut rng);
                        let y = 0.5 + (y - 0.5) * scale + shift.1 + jitter.sample(&mut rng);
                        (x * side as f32, y * side as f32)
                    })
                    .collect();
                let width = s.width * width_scale * side as f32 / 2.0;
                let curve: Vec<(f32, f32)> = (0..=16)
                    .map(|i| {
                        let t = i as f32 / 16.0;
                        let u = 1.0 - t;
                        (
                            u * u * pts[0].0 + 2.0 * u * t * pts[1].0 + t * t * pts[2].0,
                            u * u * pts[0].1 + 2.0 * u * t * pts[1].1 + t * t * pts[2].1,
                        )
                    })
                    .collect();
                curve
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        // Brush tapers towards the end of the stroke.
                        let taper = 1.0 - 0.35 * (i as f32 / 16.0);
                        (w[0], w[1], width * taper)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();

        let mut img = GrayImage::white(side, side);
        for y in 0..side {
            for x in 0..side {
                let p = (x as f32 + 0.5, y as f32 + 0.5);
                let coverage = segments
                    .iter()
                    .map(|&(a, b, w)| (w - segment_distance(p, a, b) + 0.5).clamp(0.0, 1.0))
                    .fold(0.0f32, f32::max);
                let paper = 1.0 - rng.random_range(0.0f32..0.035);
                img.set(x, y, paper * (1.0 - coverage) + ink * coverage);
            }
        }
        // A few specks of stray ink.
        for _ in 0..rng.random_range(0..3) {
            let (sx, sy) = (rng.random_range(0..side), rng.random_range(0..side));
            img.set(sx, sy, ink + 0.2);
        }
        img
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Sample `index` of `character`, written by one of `calligraphers` hands.
pub fn render_glyph(character: char, index: usize, side: u32, seed: u64) -> GrayImage {
    let variant = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((character as u64) << 20)
        .wrapping_add(index as u64);
    GlyphTemplate::for_character(character).render(side, variant)
}

/// Writes a corpus in the dataset layout: `<root>/<char>/c<k>_<i>.png`.
pub fn write_corpus(
    root: &Path,
    characters: &[(char, usize)],
    side: u32,
    calligraphers: usize,
    seed: u64,
) -> Result<()> {
    for &(character, count) in characters {
        let dir = root.join(character.to_string());
        fs::create_dir_all(&dir)?;
        for i in 0..count {
            let who = i % calligraphers.max(1);
            render_glyph(character, i, side, seed).save_png(&dir.join(format!("c{who:02}_{i:03}.png")))?;
        }
    }
    Ok(())
}

/// The first `n` fixture characters, each with `count` images.
pub fn fixture_characters(n: usize, count: usize) -> Vec<(char, usize)> {
    FIXTURE_CHARACTERS.chars().take(n).map(|c| (c, count)).collect()
}
