//! Stability and retrieval experiments: spread error across affine variants,
//! modified chi-square distance, ranked retrieval and precision/recall.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::invariants::{feature_vector, FeatureConfig, FeatureVector, InvariantId};
use crate::moments::centroid;
use crate::raster::{generate_synthetic, warp_affine, AffineParams, Raster, SyntheticSpec, TABLE4};
use crate::sum::compensated_sum;
use crate::{Error, Result};

/// Relative spread `(max - min) / (|max| + |min|)` in percent.
///
/// `None` for an empty list, non-finite values or all zeros.
pub fn stability_error(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let den = max.abs() + min.abs();
    if den == 0.0 {
        return None;
    }
    Some((max - min) / den * 100.0)
}

/// Mean of `|a - b| / (|a| + |b|)` over components defined in both inputs.
/// A component that is zero in both contributes zero. `None` when no component
/// is jointly defined.
pub fn chi2_mod_components(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut count = 0usize;
    let terms = a.iter().zip(b).filter_map(|pair| match pair {
        (Some(x), Some(y)) => {
            count += 1;
            let den = x.abs() + y.abs();
            Some(if den == 0.0 { 0.0 } else { (x - y).abs() / den })
        }
        _ => None,
    });
    let total = compensated_sum(terms);
    (count > 0).then(|| total / count as f64)
}

/// Modified chi-square distance between two feature vectors with the same
/// layout.
///
/// Not a metric: the triangle inequality can fail.
pub fn chi2_mod_distance(v1: &FeatureVector, v2: &FeatureVector) -> Result<f64> {
    if !v1.ids().eq(v2.ids()) {
        return Err(Error::FeatureLayoutMismatch);
    }
    let a: Vec<_> = v1.values().collect();
    let b: Vec<_> = v2.values().collect();
    chi2_mod_components(&a, &b).ok_or(Error::NoCommonComponents)
}

/// How a transform is positioned in the output frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Use `T` as given.
    Literal,
    /// Keep `A` and replace `T` so the source centroid lands on the frame
    /// center.
    #[default]
    Recenter,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Literal => "literal",
            Placement::Recenter => "recenter",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(Placement::Literal),
            "recenter" | "center" => Ok(Placement::Recenter),
            other => Err(Error::InvalidConfig(format!("unknown placement {other:?}"))),
        }
    }
}

/// Transform actually applied to `src` under `placement`.
pub fn placed_transform(
    src: &Raster,
    params: &AffineParams,
    placement: Placement,
) -> Result<AffineParams> {
    params.ensure_nonsingular()?;
    Ok(match placement {
        Placement::Literal => *params,
        Placement::Recenter => {
            let c = centroid(src)?;
            let to = (src.width() as f64 / 2.0, src.height() as f64 / 2.0);
            params.recentered((c.x, c.y), to)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub features: FeatureConfig,
    pub placement: Placement,
    /// Relative mass deviation from `|det A| * m00` that triggers a clipping
    /// warning.
    pub clip_tolerance: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::both(),
            placement: Placement::default(),
            clip_tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub params: AffineParams,
    /// Warped mass over `|det A| * m00`.
    pub mass_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantStability {
    pub id: InvariantId,
    pub values: Vec<Option<f64>>,
    /// `None` if any variant value is undefined or all are zero.
    pub error_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStability {
    pub image: String,
    pub variants: Vec<Variant>,
    pub invariants: Vec<InvariantStability>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub placement: Placement,
    pub images: Vec<ImageStability>,
}

impl StabilityReport {
    /// Largest error per invariant across images; `None` where any image is
    /// undefined.
    pub fn worst_errors(&self) -> Vec<(InvariantId, Option<f64>)> {
        let Some(first) = self.images.first() else {
            return Vec::new();
        };
        first
            .invariants
            .iter()
            .enumerate()
            .map(|(k, inv)| {
                let worst = self
                    .images
                    .iter()
                    .map(|img| img.invariants[k].error_pct)
                    .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)));
                (inv.id, worst)
            })
            .collect()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &String> {
        self.images.iter().flat_map(|i| i.warnings.iter())
    }
}

fn map_images<T: Send, U: Sync>(
    items: &[U],
    f: impl Fn(&U) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

fn stability_for_image(
    name: &str,
    src: &Raster,
    transforms: &[AffineParams],
    cfg: &StabilityConfig,
) -> Result<ImageStability> {
    let m00 = compensated_sum(src.intensities().iter().copied());
    let mut variants = vec![Variant {
        label: "identity".into(),
        params: AffineParams::IDENTITY,
        mass_ratio: 1.0,
    }];
    let mut rasters = vec![src.clone()];
    let mut warnings = Vec::new();
    for (k, t) in transforms.iter().enumerate() {
        let placed = placed_transform(src, t, cfg.placement)?;
        let warped = warp_affine(src, &placed, src.width(), src.height())?;
        let mass = compensated_sum(warped.intensities().iter().copied());
        let mass_ratio = mass / (placed.determinant().abs() * m00);
        let label = format!("T{}", k + 1);
        if (mass_ratio - 1.0).abs() > cfg.clip_tolerance {
            warnings.push(format!(
                "{name}: {label} keeps {:.2}% of the expected mass; content likely clipped",
                mass_ratio * 100.0
            ));
        }
        variants.push(Variant {
            label,
            params: placed,
            mass_ratio,
        });
        rasters.push(warped);
    }
    let features = map_images(&rasters, |r| feature_vector(r, &cfg.features))?;
    let invariants = cfg
        .features
        .ids
        .iter()
        .map(|&id| {
            let values: Vec<Option<f64>> = features.iter().map(|f| f.get(id)).collect();
            let defined: Option<Vec<f64>> = values.iter().copied().collect();
            let error_pct = defined.and_then(|v| stability_error(&v));
            InvariantStability {
                id,
                values,
                error_pct,
            }
        })
        .collect();
    Ok(ImageStability {
        image: name.to_string(),
        variants,
        invariants,
        warnings,
    })
}

/// Features of each base image and of its warps, with per-invariant spread.
/// The identity variant is always first.
pub fn run_stability(
    images: &[(String, Raster)],
    transforms: &[AffineParams],
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    if images.is_empty() {
        return Err(Error::Dataset("no base images".into()));
    }
    for t in transforms {
        t.ensure_nonsingular()?;
    }
    let images = images
        .iter()
        .map(|(name, r)| stability_for_image(name, r, transforms, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        placement: cfg.placement,
        images,
    })
}

/// One labeled feature vector in a retrieval set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub id: String,
    pub class: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub query: usize,
    /// `(image index, distance)` sorted by distance, ties by index.
    pub ranked: Vec<(usize, f64)>,
    pub relevant: Vec<bool>,
}

impl RetrievalRun {
    pub fn relevant_total(&self) -> usize {
        self.relevant.iter().filter(|&&r| r).count()
    }

    /// Relevant items within the first `rank` results.
    pub fn hits_at(&self, rank: usize) -> usize {
        self.relevant[..rank].iter().filter(|&&r| r).count()
    }

    /// `(recall, precision)` at every cutoff `1..=len`.
    pub fn pr_points(&self) -> Vec<(f64, f64)> {
        let total = self.relevant_total();
        let mut hits = 0usize;
        self.relevant
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                hits += r as usize;
                let recall = if total == 0 {
                    0.0
                } else {
                    hits as f64 / total as f64
                };
                (recall, hits as f64 / (i + 1) as f64)
            })
            .collect()
    }

    /// Interpolated precision: best precision at any cutoff with recall at
    /// least `level`.
    pub fn interpolated_precision(&self, level: f64) -> f64 {
        self.pr_points()
            .into_iter()
            .filter(|&(r, _)| r >= level - 1e-12)
            .map(|(_, p)| p)
            .fold(0.0, f64::max)
    }
}

pub const RECALL_LEVELS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub method: String,
    /// 11-point interpolated precision averaged over queries.
    pub interpolated: Vec<PrPoint>,
    /// Recall and precision at each rank cutoff, averaged over queries.
    pub cutoffs: Vec<PrPoint>,
}

impl PrCurve {
    pub fn precision_at(&self, recall: f64) -> Option<f64> {
        self.interpolated
            .iter()
            .find(|p| (p.recall - recall).abs() < 1e-9)
            .map(|p| p.precision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub curve: PrCurve,
    pub runs: Vec<RetrievalRun>,
}

/// Ranks every item against all others by [`chi2_mod_components`]. Pairs with
/// no jointly defined component sit at infinite distance.
pub fn rank_queries(items: &[LabeledFeatures]) -> Result<Vec<RetrievalRun>> {
    validate_dataset(items.iter().map(|i| i.class.as_str()))?;
    let width = items[0].values.len();
    if items.iter().any(|i| i.values.len() != width) {
        return Err(Error::FeatureLayoutMismatch);
    }
    let run_for = |q: usize| -> Result<RetrievalRun> {
        let mut ranked: Vec<(usize, f64)> = (0..items.len())
            .filter(|&j| j != q)
            .map(|j| {
                let d = chi2_mod_components(&items[q].values, &items[j].values)
                    .unwrap_or(f64::INFINITY);
                (j, d)
            })
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let relevant = ranked
            .iter()
            .map(|&(j, _)| items[j].class == items[q].class)
            .collect();
        Ok(RetrievalRun {
            query: q,
            ranked,
            relevant,
        })
    };
    let queries: Vec<usize> = (0..items.len()).collect();
    map_images(&queries, |&q| run_for(q))
}

fn validate_dataset<'a>(classes: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for c in classes {
        *counts.entry(c).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if counts.len() < 2 {
        return Err(Error::Dataset("need at least 2 classes".into()));
    }
    if let Some((c, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Dataset(format!(
            "class {c:?} has {n} image(s), need 2"
        )));
    }
    Ok(())
}

/// Averages per-query precision/recall into a curve.
pub fn pr_curve(method: &str, runs: &[RetrievalRun]) -> PrCurve {
    let nq = runs.len().max(1) as f64;
    let interpolated = RECALL_LEVELS
        .iter()
        .map(|&level| PrPoint {
            recall: level,
            precision: compensated_sum(runs.iter().map(|r| r.interpolated_precision(level))) / nq,
        })
        .collect();
    let len = runs.first().map_or(0, |r| r.relevant.len());
    let per_query: Vec<Vec<(f64, f64)>> = runs.iter().map(RetrievalRun::pr_points).collect();
    let cutoffs = (0..len)
        .map(|k| PrPoint {
            recall: compensated_sum(per_query.iter().map(|p| p[k].0)) / nq,
            precision: compensated_sum(per_query.iter().map(|p| p[k].1)) / nq,
        })
        .collect();
    PrCurve {
        method: method.to_string(),
        interpolated,
        cutoffs,
    }
}

/// One image of a retrieval dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub class: String,
    pub raster: Raster,
}

/// Feature extraction plus ranking over an in-memory dataset.
pub fn run_retrieval(
    images: &[LabeledImage],
    features: &FeatureConfig,
    method: &str,
) -> Result<RetrievalResult> {
    validate_dataset(images.iter().map(|i| i.class.as_str()))?;
    let vectors = map_images(images, |img| {
        let v = feature_vector(&img.raster, features)?;
        Ok(LabeledFeatures {
            id: img.id.clone(),
            class: img.class.clone(),
            values: v.values().collect(),
        })
    })?;
    let runs = rank_queries(&vectors)?;
    Ok(RetrievalResult {
        curve: pr_curve(method, &runs),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: usize,
    pub size: usize,
    pub seed: u64,
    pub placement: Placement,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            size: 256,
            seed: 0,
            placement: Placement::Recenter,
        }
    }
}

/// Procedural shape classes, each as identity plus the five built-in
/// transforms.
pub fn synthetic_dataset(cfg: &DatasetConfig) -> Result<Vec<LabeledImage>> {
    if cfg.classes < 2 {
        return Err(Error::Dataset("need at least 2 classes".into()));
    }

    let per_class = |c: usize| -> Result<Vec<LabeledImage>> {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(c as u64);
        let base = generate_synthetic(&SyntheticSpec::shape_mask(cfg.size, cfg.size, seed))?;
        let class = format!("class{c:02}");
        let mut out = vec![LabeledImage {
            id: format!("{class}/v0"),
            class: class.clone(),
            raster: base.clone(),
        }];
        for (k, t) in TABLE4.iter().enumerate() {
            let placed = placed_transform(&base, t, cfg.placement)?;
            out.push(LabeledImage {
                id: format!("{class}/v{}", k + 1),
                class: class.clone(),
                raster: warp_affine(&base, &placed, cfg.size, cfg.size)?,
            });
        }
        Ok(out)
    };
    let classes: Vec<usize> = (0..cfg.classes).collect();
    Ok(map_images(&classes, |&c| per_class(c))?
        .into_iter()
        .flatten()
        .collect())
}

/// Images under `<root>/<class>/`, classes and files in name order.
/// Returns the dataset and the number of files that could not be read.
#[cfg(feature = "io")]
pub fn load_dataset(root: impl AsRef<std::path::Path>) -> Result<(Vec<LabeledImage>, usize)> {
    use crate::raster::load_image;
    let root = root.as_ref();
    let io_err = |path: &std::path::Path, source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let sorted_entries = |dir: &std::path::Path| -> Result<Vec<std::path::PathBuf>> {
        let mut v = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
            .collect::<Result<Vec<_>>>()?;
        v.sort();
        Ok(v)
    };
    let mut images = Vec::new();
    let mut skipped = 0;
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let class = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        for file in sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file())
        {
            match load_image(&file) {
                Ok(raster) => images.push(LabeledImage {
                    id: format!(
                        "{class}/{}",
                        file.file_name()
                            .map(|n| n.to_string_lossy())
                            .unwrap_or_default()
                    ),
                    class: class.clone(),
                    raster,
                }),
                Err(_) => skipped += 1,
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no readable images under {}",
            root.display()
        )));
    }
    Ok((images, skipped))
}
