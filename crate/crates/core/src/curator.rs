//! Candidate curation by Fréchet distance between feature distributions.
//!
//! A single image has no distribution, so each candidate is scored by the
//! Fréchet distance between its group (itself plus its nearest neighbours
//! in feature space, `group_size` images in total) and the real reference
//! glyphs. The candidate with the lowest group score wins; ties go to the
//! lower index. With `group_size` equal to the number of candidates every
//! candidate shares the whole-batch score and index 0 is chosen.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::hex_string;
use crate::raster::GrayImage;
use crate::{Error, Result};

/// Eigenvalues of a covariance square-root step that are negative but
/// within this magnitude are treated as rounding noise and clamped to zero.
pub const EIGEN_CLAMP_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_GROUP_SIZE: usize = 10;

/// Maps images to fixed-length feature vectors; rows of the output matrix
/// follow the input order.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn extract(&self, images: &[GrayImage]) -> Result<DMatrix<f64>>;
}

/// Fixed-seed random convolutional projector.
///
/// Images are resampled to 32×32 and inverted so that ink is positive,
/// convolved with random 5×5 filters at stride 2, rectified, average-pooled
/// over a 3×3 grid and finally projected to `dimension` outputs by a random
/// Gaussian matrix.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    id: String,
    filters: Vec<[f64; 25]>,
    projection: DMatrix<f64>,
}

const EXTRACTOR_INPUT: u32 = 32;
const CONV_OUT: usize = 14;
const POOL_GRID: usize = 3;

impl RandomConvExtractor {
    pub fn new(seed: u64, n_filters: usize, dimension: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filters = (0..n_filters)
            .map(|_| {
                let mut f = [0.0; 25];
                for v in &mut f {
                    *v = StandardNormal.sample(&mut rng);
                }
                let mean = f.iter().sum::<f64>() / 25.0;
                // Half the filters respond to edges (zero mean), half to mass.
                if rng_bit(&mut rng) {
                    f.iter_mut().for_each(|v| *v -= mean);
                }
                f.iter_mut().for_each(|v| *v /= 5.0);
                f
            })
            .collect();
        let pooled = n_filters * POOL_GRID * POOL_GRID;
        let scale = 1.0 / (pooled as f64).sqrt();
        let projection = DMatrix::from_fn(dimension, pooled, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * scale
        });
        Self {
            id: format!("randconv-s{seed}-f{n_filters}-d{dimension}"),
            filters,
            projection,
        }
    }

    fn pooled(&self, image: &GrayImage) -> Vec<f64> {
        let img = image.resized(EXTRACTOR_INPUT, EXTRACTOR_INPUT);
        let side = EXTRACTOR_INPUT as usize;
        let ink: Vec<f64> = img.pixels().iter().map(|&v| 1.0 - v as f64).collect();
        let cell = CONV_OUT.div_ceil(POOL_GRID);
        let mut out = Vec::with_capacity(self.filters.len() * POOL_GRID * POOL_GRID);
        for f in &self.filters {
            let mut pooled = [0.0f64; POOL_GRID * POOL_GRID];
            let mut counts = [0usize; POOL_GRID * POOL_GRID];
            for oy in 0..CONV_OUT {
                for ox in 0..CONV_OUT {
                    let mut acc = 0.0;
                    for ky in 0..5 {
                        let row = (oy * 2 + ky) * side + ox * 2;
                        for kx in 0..5 {
                            acc += f[ky * 5 + kx] * ink[row + kx];
                        }
                    }
                    let cellidx = (oy / cell) * POOL_GRID + ox / cell;
                    pooled[cellidx] += acc.max(0.0);
                    counts[cellidx] += 1;
                }
            }
            out.extend(pooled.iter().zip(counts).map(|(s, n)| s / n.max(1) as f64));
        }
        out
    }
}

fn rng_bit(rng: &mut ChaCha8Rng) -> bool {
    use rand::Rng;
    rng.random_bool(0.5)
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        Self::new(7, 16, 32)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.projection.nrows()
    }

    fn extract(&self, images: &[GrayImage]) -> Result<DMatrix<f64>> {
        let d = self.dimension();
        let mut out = DMatrix::zeros(images.len(), d);
        for (i, img) in images.iter().enumerate() {
            if img.is_empty() {
                return Err(Error::invalid("images", format!("image {i} is empty")));
            }
            let pooled = DVector::from_vec(self.pooled(img));
            let feat = &self.projection * pooled;
            out.row_mut(i).copy_from(&feat.transpose());
        }
        Ok(out)
    }
}

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
}

impl DistributionStats {
    pub fn dimension(&self) -> usize {
        self.mean.len()
    }
}

/// Column mean and unbiased covariance of an `n × d` feature matrix.
pub fn stats(features: &DMatrix<f64>) -> Result<DistributionStats> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::invalid("features", format!("need at least 2 rows, got {n}")));
    }
    let mean: DVector<f64> = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut covariance = centered.transpose() * &centered / (n as f64 - 1.0);
    // Exact symmetry regardless of summation order.
    let d = covariance.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            covariance[(i, j)] = v;
            covariance[(j, i)] = v;
        }
    }
    Ok(DistributionStats {
        mean,
        covariance,
        sample_count: n,
    })
}

/// Eigendecomposition of the symmetric part of `m`, with negative
/// eigenvalues inside the clamp tolerance set to zero.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -EIGEN_CLAMP_TOLERANCE * scale {
                return Err(Error::Numerical(format!(
                    "matrix is not positive semidefinite (eigenvalue {v:e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(eig)
}

fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * roots * eig.eigenvectors.transpose())
}

/// Trace of `(Σa Σb)^{1/2}`, computed as the trace of the square root of
/// the symmetric product `Σa^{1/2} Σb Σa^{1/2}`, which has the same
/// eigenvalues.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let root_a = sqrt_psd(a)?;
    let inner = &root_a * b * &root_a;
    Ok(psd_eigen(&inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`.
pub fn frechet_distance(a: &DistributionStats, b: &DistributionStats) -> Result<f64> {
    let d = a.dimension();
    if b.dimension() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: b.dimension(),
        });
    }
    for s in [a, b] {
        if s.covariance.nrows() != d || s.covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: s.covariance.nrows(),
            });
        }
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let trace_term = a.covariance.trace() + b.covariance.trace()
        - 2.0 * trace_sqrt_product(&a.covariance, &b.covariance)?;
    let mut dist = mean_term + trace_term;
    if dist < 0.0 && dist > -EIGEN_CLAMP_TOLERANCE * (1.0 + a.covariance.trace() + b.covariance.trace()) {
        dist = 0.0;
    }
    if !dist.is_finite() || dist < 0.0 {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {dist}")));
    }
    Ok(dist)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationResult {
    pub chosen_index: usize,
    pub chosen_image: GrayImage,
    pub scores: Vec<f64>,
    pub extractor_id: String,
    pub group_size: usize,
}

/// Serializable part of a [`CurationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub chosen_index: usize,
    pub scores: Vec<f64>,
    pub extractor_id: String,
    pub group_size: usize,
}

impl CurationResult {
    pub fn summary(&self) -> CurationSummary {
        CurationSummary {
            chosen_index: self.chosen_index,
            scores: self.scores.clone(),
            extractor_id: self.extractor_id.clone(),
            group_size: self.group_size,
        }
    }
}

/// Index of the smallest score, lowest index on ties.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Candidate `i` followed by the `group_size − 1` candidates closest to it
/// in feature space (ties by index).
fn group_of(features: &DMatrix<f64>, i: usize, group_size: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..features.nrows())
        .filter(|&j| j != i)
        .map(|j| ((features.row(i) - features.row(j)).norm_squared(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    std::iter::once(i)
        .chain(others.into_iter().map(|(_, j)| j))
        .take(group_size)
        .collect()
}

pub fn curate(
    candidates: &[GrayImage],
    reference: &[GrayImage],
    extractor: &dyn FeatureExtractor,
    group_size: usize,
) -> Result<CurationResult> {
    if reference.len() < 2 {
        return Err(Error::invalid(
            "reference",
            format!("need at least 2 reference images, got {}", reference.len()),
        ));
    }
    let reference_stats = stats(&extractor.extract(reference)?)?;
    curate_against(candidates, &reference_stats, extractor, group_size)
}

/// As [`curate`], with precomputed reference statistics.
pub fn curate_against(
    candidates: &[GrayImage],
    reference_stats: &DistributionStats,
    extractor: &dyn FeatureExtractor,
    group_size: usize,
) -> Result<CurationResult> {
    if group_size < 2 {
        return Err(Error::invalid("group_size", "must be at least 2"));
    }
    if candidates.len() < group_size {
        return Err(Error::invalid(
            "candidates",
            format!("{} candidates for group size {group_size}", candidates.len()),
        ));
    }
    let features = extractor.extract(candidates)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for i in 0..candidates.len() {
        let group = group_of(&features, i, group_size);
        let rows = DMatrix::from_fn(group.len(), features.ncols(), |r, c| features[(group[r], c)]);
        scores.push(frechet_distance(&stats(&rows)?, reference_stats)?);
    }
    let chosen_index = argmin(&scores).expect("at least two candidates");
    Ok(CurationResult {
        chosen_index,
        chosen_image: candidates[chosen_index].clone(),
        scores,
        extractor_id: extractor.id().to_string(),
        group_size,
    })
}

/// Hex digest identifying a reference image set.
pub fn reference_fingerprint(images: &[GrayImage]) -> String {
    let mut hasher = Sha256::new();
    for img in images {
        hasher.update(img.width().to_le_bytes());
        hasher.update(img.height().to_le_bytes());
        for v in img.pixels() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}

/// On-disk cache of reference statistics keyed by extractor and reference
/// fingerprint.
#[derive(Debug, Clone)]
pub struct StatsCache {
    dir: PathBuf,
}

impl StatsCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, extractor_id: &str, fingerprint: &str) -> PathBuf {
        self.dir
            .join(format!("{extractor_id}-{}.stats.json", &fingerprint[..16.min(fingerprint.len())]))
    }

    pub fn reference_stats(
        &self,
        extractor: &dyn FeatureExtractor,
        reference: &[GrayImage],
    ) -> Result<DistributionStats> {
        let path = self.path(extractor.id(), &reference_fingerprint(reference));
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(s) = serde_json::from_slice::<DistributionStats>(&bytes) {
                return Ok(s);
            }
        }
        let s = stats(&extractor.extract(reference)?)?;
        fs::create_dir_all(&self.dir)?;
        fs::write(&path, serde_json::to_vec(&s)?)?;
        Ok(s)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
