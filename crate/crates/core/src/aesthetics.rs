//! Aesthetic controls applied to a generated glyph: background cleanup,
//! key-color extraction from a dish photo, palette recoloring and optional
//! style transfer.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::GrayImage;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD_PERCENTILE: f64 = 75.0;

/// Minimum blob area for a glyph of `side` pixels: 16 at 64×64, scaled with
/// the pixel count.
pub fn default_min_blob_area(side: u32) -> usize {
    ((16.0 * (side as f64 / 64.0).powi(2)).round() as usize).max(1)
}

/// Pixels at or above this value count as background when deciding whether
/// an image has any background at all.
const BACKGROUND_CUT: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub image: GrayImage,
    /// Set when the input had no background; the image is returned as is.
    pub all_ink: bool,
    pub removed_blobs: usize,
}

/// Whitens the background and removes small ink specks.
///
/// The lightest `threshold_percentile` percent of pixels are treated as
/// paper: the threshold is the value at the `(100 − p)`-th percentile,
/// never below 0.5, and every pixel at or above it becomes 1.0. Then
/// 8-connected components of remaining ink smaller than `min_blob_area` are
/// erased, except the largest component, which always survives. The result
/// is a fixed point: denoising it again changes nothing.
pub fn denoise(glyph: &GrayImage, threshold_percentile: f64, min_blob_area: usize) -> Result<Denoised> {
    if !(threshold_percentile > 0.0 && threshold_percentile < 100.0) {
        return Err(Error::invalid(
            "threshold_percentile",
            format!("{threshold_percentile} is outside (0, 100)"),
        ));
    }
    if glyph.is_empty() {
        return Err(Error::invalid("glyph", "empty image"));
    }
    if glyph.pixels().iter().all(|&v| v < BACKGROUND_CUT) {
        log::warn!("denoise: image has no background, leaving it unchanged");
        return Ok(Denoised {
            image: glyph.clone(),
            all_ink: true,
            removed_blobs: 0,
        });
    }

    let mut sorted = glyph.pixels().to_vec();
    sorted.sort_by(f32::total_cmp);
    let q = (100.0 - threshold_percentile) / 100.0;
    let rank = (q * (sorted.len() - 1) as f64).floor() as usize;
    let threshold = sorted[rank].max(BACKGROUND_CUT);

    let mut image = glyph.clone();
    for v in image.pixels_mut() {
        if *v >= threshold {
            *v = 1.0;
        }
    }

    let (w, h) = (image.width() as usize, image.height() as usize);
    let labels = label_components(image.pixels(), w, h);
    let mut sizes = vec![0usize; labels.count];
    for &l in labels.labels.iter().flatten() {
        sizes[l] += 1;
    }
    // First component in scan order wins a tie for largest.
    let largest = sizes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (i, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i);
    let removed: Vec<bool> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| Some(i) != largest && s < min_blob_area)
        .collect();
    for (px, label) in image.pixels_mut().iter_mut().zip(&labels.labels) {
        if let Some(l) = label {
            if removed[*l] {
                *px = 1.0;
            }
        }
    }
    Ok(Denoised {
        image,
        all_ink: false,
        removed_blobs: removed.iter().filter(|&&r| r).count(),
    })
}

struct Components {
    labels: Vec<Option<usize>>,
    count: usize,
}

/// 8-connected labelling of non-white pixels, labels in scan order.
fn label_components(pixels: &[f32], w: usize, h: usize) -> Components {
    let mut labels = vec![None; pixels.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..pixels.len() {
        if pixels[start] >= 1.0 || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if pixels[n] < 1.0 && labels[n].is_none() {
                        labels[n] = Some(count);
                        stack.push(n);
                    }
                }
            }
        }
        count += 1;
    }
    Components { labels, count }
}

/// Key colors with their pixel shares, most common first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
    pub proportions: Vec<f64>,
}

pub const MAX_PALETTE: usize = 16;

impl Palette {
    /// Equal-share palette, in the given order.
    pub fn uniform(colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.is_empty() || colors.len() > MAX_PALETTE {
            return Err(Error::invalid("palette", format!("{} colors", colors.len())));
        }
        let share = 1.0 / colors.len() as f64;
        Ok(Self {
            proportions: vec![share; colors.len()],
            colors,
        })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// The first `k` colors, shares renormalized.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.clamp(1, self.colors.len());
        let total: f64 = self.proportions[..k].iter().sum();
        Self {
            colors: self.colors[..k].to_vec(),
            proportions: self.proportions[..k].iter().map(|p| p / total).collect(),
        }
    }
}

/// Warm ink-and-lacquer fallback used when no dish photo is supplied.
pub fn default_palette() -> Palette {
    Palette::uniform(vec![
        [178, 34, 34],
        [28, 28, 30],
        [214, 140, 45],
        [46, 82, 120],
        [112, 128, 64],
        [150, 90, 150],
        [220, 196, 140],
        [90, 60, 40],
    ])
    .expect("non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaletteResult {
    pub palette: Palette,
    /// Fewer distinct colors than requested were present.
    pub reduced: bool,
}

/// Clustering runs on at most this many pixels; larger images are strided.
const MAX_CLUSTER_PIXELS: usize = 1 << 16;
const MAX_ITERATIONS: usize = 100;
const CONVERGENCE: f64 = 0.5;
const RESTARTS: u64 = 4;

/// Seeded k-means over RGB pixels (k-means++ initialization, up to 100
/// Lloyd iterations or until no centroid moves by 0.5).
pub fn extract_palette(image: &RgbImage, k: usize, seed: u64) -> Result<PaletteResult> {
    if !(1..=MAX_PALETTE).contains(&k) {
        return Err(Error::invalid("k", format!("{k} is outside 1..={MAX_PALETTE}")));
    }
    let n = image.pixels().len();
    if n == 0 {
        return Err(Error::invalid("dish_image", "empty image"));
    }
    let stride = n.div_ceil(MAX_CLUSTER_PIXELS);
    let mut histogram: HashMap<[u8; 3], usize> = HashMap::new();
    for px in image.pixels().step_by(stride) {
        *histogram.entry(px.0).or_default() += 1;
    }
    let mut colors: Vec<([u8; 3], usize)> = histogram.into_iter().collect();
    colors.sort();
    let total: usize = colors.iter().map(|c| c.1).sum();

    if colors.len() <= k {
        let reduced = colors.len() < k;
        if reduced {
            log::warn!("palette: only {} distinct colors for k={k}", colors.len());
        }
        let clusters = colors.iter().map(|&(c, n)| (c, n as f64)).collect();
        return Ok(PaletteResult {
            palette: finish_palette(clusters, total as f64),
            reduced,
        });
    }

    let points: Vec<([f64; 3], f64)> = colors
        .iter()
        .map(|&(c, n)| ([c[0] as f64, c[1] as f64, c[2] as f64], n as f64))
        .collect();
    let mut best: Option<(f64, Vec<[f64; 3]>, Vec<f64>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart.wrapping_mul(0x9E37_79B9)));
        let (inertia, centroids, weights) = kmeans(&points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, centroids, weights));
        }
    }
    let (_, centroids, weights) = best.expect("at least one restart");
    let clusters = centroids
        .iter()
        .zip(weights)
        .filter(|(_, w)| *w > 0.0)
        .map(|(c, w)| (c.map(|v| v.round().clamp(0.0, 255.0) as u8), w))
        .collect();
    Ok(PaletteResult {
        palette: finish_palette(clusters, total as f64),
        reduced: false,
    })
}

fn finish_palette(mut clusters: Vec<([u8; 3], f64)>, total: f64) -> Palette {
    clusters.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Palette {
        colors: clusters.iter().map(|c| c.0).collect(),
        proportions: clusters.iter().map(|c| c.1 / total).collect(),
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Weighted k-means; returns inertia, centroids and cluster weights.
fn kmeans(points: &[([f64; 3], f64)], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<[f64; 3]>, Vec<f64>) {
    let mut centroids: Vec<[f64; 3]> = Vec::with_capacity(k);
    let total_weight: f64 = points.iter().map(|p| p.1).sum();
    // k-means++: first centroid by weight, later ones by weight × D².
    let mut target = rng.random_range(0.0..total_weight);
    let first = points
        .iter()
        .position(|p| {
            target -= p.1;
            target < 0.0
        })
        .unwrap_or(points.len() - 1);
    centroids.push(points[first].0);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(&p.0, &centroids[0])).collect();
    while centroids.len() < k {
        let mass: f64 = points.iter().zip(&d2).map(|(p, d)| p.1 * d).sum();
        let next = if mass > 0.0 {
            let mut target = rng.random_range(0.0..mass);
            points
                .iter()
                .zip(&d2)
                .position(|(p, d)| {
                    target -= p.1 * d;
                    target < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].0);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(&p.0, &points[next].0));
        }
    }

    let mut assignment = vec![0usize; points.len()];
    let mut weights = vec![0.0; k];
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![[0.0f64; 3]; k];
        weights.iter_mut().for_each(|w| *w = 0.0);
        for (i, (p, w)) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            assignment[i] = c;
            weights[c] += w;
            for ch in 0..3 {
                sums[c][ch] += p[ch] * w;
            }
        }
        let mut moved = 0.0f64;
        for c in 0..k {
            let updated = if weights[c] > 0.0 {
                sums[c].map(|s| s / weights[c])
            } else {
                // Empty cluster: restart it at the point worst served.
                let (far, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, dist2(&p.0, &centroids[assignment[i]])))
                    .fold((0, -1.0), |b, cur| if cur.1 > b.1 { cur } else { b });
                points[far].0
            };
            moved = moved.max(dist2(&updated, &centroids[c]).sqrt());
            centroids[c] = updated;
        }
        if moved < CONVERGENCE {
            break;
        }
    }
    weights.iter_mut().for_each(|w| *w = 0.0);
    let mut inertia = 0.0;
    for (p, w) in points {
        let (c, d) = nearest(p, &centroids);
        weights[c] += w;
        inertia += d * w;
    }
    (inertia, centroids, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecolorParams {
    /// Per-channel jitter radius applied to ink pixels.
    pub jitter: u8,
    pub background: [u8; 3],
}

impl Default for RecolorParams {
    fn default() -> Self {
        Self {
            jitter: 10,
            background: [255, 255, 255],
        }
    }
}

/// Paints the ink of a glyph with palette colors.
///
/// Ink pixels (value below 1.0) are binned by the mid-rank quantile of their
/// intensity among all ink pixels, so the darkest share of the ink takes
/// `colors[0]`, the next share `colors[1]` and so on. Each ink pixel then
/// gets a seeded per-channel offset within `±jitter`. Paper stays at the
/// background color.
pub fn recolor(glyph: &GrayImage, palette: &Palette, params: &RecolorParams, seed: u64) -> Result<RgbImage> {
    if palette.is_empty() {
        return Err(Error::invalid("palette", "empty"));
    }
    let mut ink: Vec<f32> = glyph.pixels().iter().copied().filter(|&v| v < 1.0).collect();
    ink.sort_by(f32::total_cmp);
    let n_ink = ink.len() as f64;
    let k = palette.len();
    let bin_of = |v: f32| -> usize {
        let below = ink.partition_point(|&x| x < v);
        let through = ink.partition_point(|&x| x <= v);
        let midrank = (below as f64 + (through - below) as f64 / 2.0) / n_ink;
        ((midrank * k as f64).floor() as usize).min(k - 1)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = params.jitter as i16;
    let mut out = RgbImage::from_pixel(glyph.width(), glyph.height(), Rgb(params.background));
    for (i, &v) in glyph.pixels().iter().enumerate() {
        if v >= 1.0 {
            continue;
        }
        let base = palette.colors[bin_of(v)];
        let color = if j == 0 {
            base
        } else {
            base.map(|c| (c as i16 + rng.random_range(-j..=j)).clamp(0, 255) as u8)
        };
        let (x, y) = (i as u32 % glyph.width(), i as u32 / glyph.width());
        out.put_pixel(x, y, Rgb(color));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleSample {
    pub style_id: String,
    pub display_name: String,
    /// Identifier of the [`StyleAdapter`] that renders this style.
    pub adapter: String,
    pub reference_image: RgbImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub style_id: String,
    pub display_name: String,
    pub adapter: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StyleManifestEntry {
    style_id: String,
    display_name: String,
    adapter: String,
}

/// Registered style samples, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct StyleRegistry {
    styles: Vec<StyleSample>,
}

pub const STUB_STYLE_ID: &str = "color-field";

impl StyleRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding only the built-in palette-shift stub style.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.insert(stub_style()).expect("unique id");
        r
    }

    /// Reads `styles.json` (entries `{style_id, display_name, adapter}`) and
    /// the matching `<style_id>.png` or `.jpg` reference images.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest: Vec<StyleManifestEntry> =
            serde_json::from_slice(&fs::read(dir.join("styles.json"))?)?;
        let mut r = Self::empty();
        for entry in manifest {
            let path = ["png", "jpg", "jpeg"]
                .iter()
                .map(|ext| dir.join(format!("{}.{ext}", entry.style_id)))
                .find(|p| p.exists())
                .ok_or_else(|| Error::BadImage {
                    path: dir.join(&entry.style_id).display().to_string(),
                    reason: "style reference image not found".into(),
                })?;
            r.insert(StyleSample {
                reference_image: crate::raster::load_rgb(&path)?,
                style_id: entry.style_id,
                display_name: entry.display_name,
                adapter: entry.adapter,
            })?;
        }
        Ok(r)
    }

    pub fn insert(&mut self, style: StyleSample) -> Result<()> {
        if self.get(&style.style_id).is_some() {
            return Err(Error::invalid("style_id", format!("duplicate style {}", style.style_id)));
        }
        self.styles.push(style);
        Ok(())
    }

    pub fn get(&self, style_id: &str) -> Option<&StyleSample> {
        self.styles.iter().find(|s| s.style_id == style_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.styles.iter().map(|s| s.style_id.clone()).collect()
    }

    pub fn summaries(&self) -> Vec<StyleSummary> {
        self.styles
            .iter()
            .map(|s| StyleSummary {
                style_id: s.style_id.clone(),
                display_name: s.display_name.clone(),
                adapter: s.adapter.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.styles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.styles.is_empty()
    }
}

/// Horizontal bands of saturated color, in the manner of a color-field
/// painting.
fn stub_style() -> StyleSample {
    let bands = [[150, 30, 40], [205, 90, 40], [120, 20, 60]];
    let img = RgbImage::from_fn(96, 96, |_, y| Rgb(bands[(y as usize * bands.len()) / 96]));
    StyleSample {
        style_id: STUB_STYLE_ID.into(),
        display_name: "Color field (palette shift)".into(),
        adapter: PaletteShiftAdapter::ID.into(),
        reference_image: img,
    }
}

/// Renders an image in a registered style.
pub trait StyleAdapter: Send + Sync {
    fn id(&self) -> &str;
    /// `strength` is in `(0, 1]`; output must keep the input dimensions.
    fn stylize(&self, image: &RgbImage, style: &StyleSample, strength: f64) -> Result<RgbImage>;
}

/// Shifts every pixel by `strength` times the difference between the
/// style's mean color and the image's mean color.
#[derive(Debug, Clone, Copy, Default)]
pub struct PaletteShiftAdapter;

impl PaletteShiftAdapter {
    pub const ID: &'static str = "palette-shift";
}

pub fn mean_color(image: &RgbImage) -> [f64; 3] {
    let n = (image.width() as f64 * image.height() as f64).max(1.0);
    let mut sum = [0.0; 3];
    for px in image.pixels() {
        for (s, v) in sum.iter_mut().zip(px.0) {
            *s += v as f64;
        }
    }
    sum.map(|s| s / n)
}

impl StyleAdapter for PaletteShiftAdapter {
    fn id(&self) -> &str {
        Self::ID
    }

    fn stylize(&self, image: &RgbImage, style: &StyleSample, strength: f64) -> Result<RgbImage> {
        let (from, to) = (mean_color(image), mean_color(&style.reference_image));
        let shift: [f64; 3] = std::array::from_fn(|c| strength * (to[c] - from[c]));
        let mut out = image.clone();
        for px in out.pixels_mut() {
            for (v, d) in px.0.iter_mut().zip(shift) {
                *v = (*v as f64 + d).round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(out)
    }
}

/// Delegates to an external arbitrary-style-transfer program invoked as
/// `program [args..] <content.png> <style.png> <output.png> <strength>`.
#[derive(Debug, Clone)]
pub struct CommandStyleAdapter {
    id: String,
    program: PathBuf,
    args: Vec<String>,
    scratch: PathBuf,
}

impl CommandStyleAdapter {
    pub fn new(id: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>, scratch: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            program: program.into(),
            args,
            scratch: scratch.into(),
        }
    }
}

impl StyleAdapter for CommandStyleAdapter {
    fn id(&self) -> &str {
        &self.id
    }

    fn stylize(&self, image: &RgbImage, style: &StyleSample, strength: f64) -> Result<RgbImage> {
        fs::create_dir_all(&self.scratch)?;
        let tag = format!("{}-{}", std::process::id(), style.style_id);
        let content = self.scratch.join(format!("{tag}-content.png"));
        let reference = self.scratch.join(format!("{tag}-style.png"));
        let output = self.scratch.join(format!("{tag}-out.png"));
        image.save(&content)?;
        style.reference_image.save(&reference)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&content)
            .arg(&reference)
            .arg(&output)
            .arg(strength.to_string())
            .status()?;
        if !status.success() {
            return Err(Error::Numerical(format!("style adapter {} exited with {status}", self.id)));
        }
        let out = crate::raster::load_rgb(&output)?;
        for p in [content, reference, output] {
            let _ = fs::remove_file(p);
        }
        Ok(out)
    }
}

/// Style registry plus the adapters able to render its entries.
pub struct StyleEngine {
    pub registry: StyleRegistry,
    adapters: Vec<Box<dyn StyleAdapter>>,
}

impl StyleEngine {
    pub fn new(registry: StyleRegistry) -> Self {
        Self {
            registry,
            adapters: vec![Box::new(PaletteShiftAdapter)],
        }
    }

    pub fn with_adapter(mut self, adapter: Box<dyn StyleAdapter>) -> Self {
        self.adapters.push(adapter);
        self
    }

    /// Styles whose adapter is installed.
    pub fn available(&self) -> Vec<String> {
        self.registry
            .styles
            .iter()
            .filter(|s| self.adapters.iter().any(|a| a.id() == s.adapter))
            .map(|s| s.style_id.clone())
            .collect()
    }

    pub fn apply_style(&self, image: &RgbImage, style_id: &str, strength: f64) -> Result<RgbImage> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::invalid("style_strength", format!("{strength} is outside [0, 1]")));
        }
        let style = self.registry.get(style_id).ok_or_else(|| Error::UnknownStyle {
            requested: style_id.to_string(),
            available: self.registry.ids(),
        })?;
        let adapter = self
            .adapters
            .iter()
            .find(|a| a.id() == style.adapter)
            .ok_or_else(|| Error::UnknownStyle {
                requested: style_id.to_string(),
                available: self.available(),
            })?;
        if strength == 0.0 {
            return Ok(image.clone());
        }
        let out = adapter.stylize(image, style, strength)?;
        if out.dimensions() != image.dimensions() {
            return Err(Error::DimensionMismatch {
                expected: (image.width() * image.height()) as usize,
                actual: (out.width() * out.height()) as usize,
            });
        }
        Ok(out)
    }
}
