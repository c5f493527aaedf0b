use awmi::diffops::{adi_fields, derivative_stack, DiffConfig, KernelNormalization};
use awmi::invariants::{feature_vector, FeatureConfig};
use awmi::moments::centroid;
use awmi::raster::{generate_synthetic, warp_affine, SyntheticSpec};
use awmi::retrieval::{placed_transform, stability_error, Placement};
use awmi::{AffineParams, Error, Raster, Result};
use serde_json::json;

pub fn synth(kind: &str, size: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = match kind {
        "blobs" => SyntheticSpec::random_blobs(size, size, 3, seed),
        "shape" => SyntheticSpec::shape_mask(size, size, seed),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown image kind {other:?}"
            )))
        }
    };
    Ok(generate_synthetic(&spec)?.intensities().to_vec())
}

pub fn luminance(rgba: &[u8]) -> Vec<f64> {
    rgba.chunks_exact(4)
        .map(|p| (0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64) / 255.0)
        .collect()
}

fn raster(pixels: &[f64], width: usize, height: usize) -> Result<Raster> {
    Raster::new(width, height, pixels.to_vec())
}

fn diff_config(kernel: &str) -> Result<DiffConfig> {
    let normalization: KernelNormalization = kernel.parse()?;
    let cfg = DiffConfig {
        normalization,
        ..DiffConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn warp(
    pixels: &[f64],
    width: usize,
    height: usize,
    params: &[f64],
    recenter: bool,
) -> Result<Vec<f64>> {
    let src = raster(pixels, width, height)?;
    let params = AffineParams::from_slice(params)?;
    let placement = if recenter {
        Placement::Recenter
    } else {
        Placement::Literal
    };
    let t = placed_transform(&src, &params, placement)?;
    Ok(warp_affine(&src, &t, width, height)?.intensities().to_vec())
}

pub fn compare(a: &[f64], b: &[f64], width: usize, height: usize, kernel: &str) -> Result<String> {
    let cfg = FeatureConfig::both().with_diff(diff_config(kernel)?);
    let fa = feature_vector(&raster(a, width, height)?, &cfg)?;
    let fb = feature_vector(&raster(b, width, height)?, &cfg)?;
    let rows: Vec<_> = fa
        .entries
        .iter()
        .zip(&fb.entries)
        .map(|(x, y)| {
            let err = match (x.value, y.value) {
                (Some(u), Some(v)) => stability_error(&[u, v]),
                _ => None,
            };
            json!({ "id": x.id.name(), "a": x.value, "b": y.value, "error_pct": err })
        })
        .collect();
    Ok(serde_json::Value::Array(rows).to_string())
}

pub fn gray_rgba(pixels: &[f64]) -> Vec<u8> {
    let max = pixels.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    pixels
        .iter()
        .flat_map(|&v| {
            let g = (v * scale).round().clamp(0.0, 255.0) as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Blue for negative, red for positive; square-root compression so the weak
/// outer structure stays visible next to the peaks.
fn diverging(t: f64) -> [u8; 4] {
    let s = t.abs().sqrt().min(1.0);
    let fade = (255.0 * (1.0 - s)).round() as u8;
    if t >= 0.0 {
        [255, fade, fade, 255]
    } else {
        [fade, fade, 255, 255]
    }
}

pub fn adi_heatmap(
    pixels: &[f64],
    width: usize,
    height: usize,
    which: usize,
    kernel: &str,
) -> Result<Vec<u8>> {
    let src = raster(pixels, width, height)?;
    let stack = derivative_stack(&src, &diff_config(kernel)?)?;
    let c = centroid(&src)?;
    let fields = adi_fields(&stack, (c.x, c.y));
    let field = fields
        .get(which)
        .ok_or_else(|| Error::InvalidConfig(format!("ADI index must be 1..=5, got {which}")))?;
    let max = field.max_abs();
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Ok(field
        .as_slice()
        .iter()
        .flat_map(|&v| diverging(v * scale))
        .collect())
}
