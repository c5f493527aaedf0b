//! Grayscale image model, file ingestion, synthetic images and affine warps.
//!
//! Pixel `(row, col)` has continuous coordinates `(x, y) = (col + 0.5, row + 0.5)`,
//! so every integral in this crate is a unit-area sum over pixel centers.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::{Error, Result};

/// Grayscale image with finite, nonnegative intensities (normally in `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    field: Field,
}

impl Raster {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if intensities.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} intensities for a {width}x{height} grid",
                intensities.len()
            )));
        }
        if let Some(bad) = intensities.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidRaster(format!(
                "intensity {bad} is not finite and >= 0"
            )));
        }
        Ok(Self {
            field: Field::from_vec(width, height, intensities),
        })
    }

    /// Evaluates `f(x, y)` at pixel centers. Negative values are rejected.
    pub fn from_fn(width: usize, height: usize, f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let field = Field::from_fn(width, height, f);
        Self::new(width, height, field.into_vec())
    }

    pub fn from_field(field: Field) -> Result<Self> {
        let (w, h) = (field.width(), field.height());
        Self::new(w, h, field.into_vec())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.field.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.field.height()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.field.get(col, row)
    }

    #[inline]
    pub fn intensities(&self) -> &[f64] {
        self.field.as_slice()
    }

    #[inline]
    pub fn field(&self) -> &Field {
        &self.field
    }

    /// Multiplies every intensity by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_field(self.field.map(|v| v * factor))
    }

    /// Sample at continuous coordinates with bilinear interpolation; anything
    /// outside the frame reads as black.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        // Index space: pixel centers at integers.
        let u = x - 0.5;
        let v = y - 0.5;
        let u0 = u.floor();
        let v0 = v.floor();
        let du = u - u0;
        let dv = v - v0;
        let (w, h) = (self.width() as i64, self.height() as i64);
        let at = |c: i64, r: i64| -> f64 {
            if c < 0 || r < 0 || c >= w || r >= h {
                0.0
            } else {
                self.field.get(c as usize, r as usize)
            }
        };
        let (c0, r0) = (u0 as i64, v0 as i64);
        if du == 0.0 && dv == 0.0 {
            return at(c0, r0);
        }
        let top = at(c0, r0) * (1.0 - du) + at(c0 + 1, r0) * du;
        let bottom = at(c0, r0 + 1) * (1.0 - du) + at(c0 + 1, r0 + 1) * du;
        top * (1.0 - dv) + bottom * dv
    }
}

/// Affine map `x' = A x + T` on continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub t1: f64,
    pub t2: f64,
}

/// Table of the five affine transforms used by the stability experiment.
pub const TABLE4: [AffineParams; 5] = [
    AffineParams::new(0.69, -0.12, 0.21, 1.18, 0.0, 150.0),
    AffineParams::new(0.57, 0.42, -0.42, 0.42, 160.0, 280.0),
    AffineParams::new(0.60, -1.03, 0.52, 0.30, 50.0, 15.0),
    AffineParams::new(1.00, -1.00, 0.00, 1.00, 100.0, 50.0),
    AffineParams::new(1.50, 0.00, 0.00, 0.80, 30.0, 10.0),
];

const SINGULAR_EPS: f64 = 1e-12;

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64, t1: f64, t2: f64) -> Self {
        Self {
            a11,
            a12,
            a21,
            a22,
            t1,
            t2,
        }
    }

    pub const fn translation(t1: f64, t2: f64) -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0, t1, t2)
    }

    #[inline]
    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn ensure_nonsingular(&self) -> Result<()> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_EPS {
            return Err(Error::SingularTransform(det.abs()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a11 * x + self.a12 * y + self.t1,
            self.a21 * x + self.a22 * y + self.t2,
        )
    }

    #[inline]
    pub fn apply_linear(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a11 * x + self.a12 * y, self.a21 * x + self.a22 * y)
    }

    pub fn inverse(&self) -> Result<AffineParams> {
        self.ensure_nonsingular()?;
        let det = self.determinant();
        let (b11, b12, b21, b22) = (
            self.a22 / det,
            -self.a12 / det,
            -self.a21 / det,
            self.a11 / det,
        );
        Ok(AffineParams::new(
            b11,
            b12,
            b21,
            b22,
            -(b11 * self.t1 + b12 * self.t2),
            -(b21 * self.t1 + b22 * self.t2),
        ))
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineParams) -> AffineParams {
        let (t1, t2) = self.apply(first.t1, first.t2);
        AffineParams::new(
            self.a11 * first.a11 + self.a12 * first.a21,
            self.a11 * first.a12 + self.a12 * first.a22,
            self.a21 * first.a11 + self.a22 * first.a21,
            self.a21 * first.a12 + self.a22 * first.a22,
            t1,
            t2,
        )
    }

    /// Same linear part, translation replaced so that `from` lands on `to`.
    pub fn recentered(&self, from: (f64, f64), to: (f64, f64)) -> AffineParams {
        let (lx, ly) = self.apply_linear(from.0, from.1);
        AffineParams::new(self.a11, self.a12, self.a21, self.a22, to.0 - lx, to.1 - ly)
    }

    /// Largest singular value of the linear part.
    pub fn max_stretch(&self) -> f64 {
        let p = self.a11 * self.a11 + self.a21 * self.a21;
        let q = self.a12 * self.a12 + self.a22 * self.a22;
        let r = self.a11 * self.a12 + self.a21 * self.a22;
        let mean = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + r * r).sqrt();
        (mean + disc).sqrt()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a11, self.a12, self.a21, self.a22, self.t1, self.t2]
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values {
            [a11, a12, a21, a22, t1, t2] => Ok(Self::new(*a11, *a12, *a21, *a22, *t1, *t2)),
            _ => Err(Error::InvalidConfig(format!(
                "affine transform needs 6 numbers, got {}",
                values.len()
            ))),
        }
    }
}

impl std::str::FromStr for AffineParams {
    type Err = Error;

    /// Parses `a11,a12,a21,a22,t1,t2`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad affine tuple {s:?}: {e}")))?;
        Self::from_slice(&values)
    }
}

/// Inverse-mapping warp: output pixel center `p'` samples the source at
/// `A^-1 (p' - T)` with bilinear interpolation and a black background.
pub fn warp_affine(
    src: &Raster,
    params: &AffineParams,
    out_width: usize,
    out_height: usize,
) -> Result<Raster> {
    let inv = params.inverse()?;
    if out_width == 0 || out_height == 0 {
        return Err(Error::InvalidRaster(format!(
            "output dimensions must be positive, got {out_width}x{out_height}"
        )));
    }
    // Identity linear parts keep exact integer offsets for pure translations.
    let pure_translation =
        params.a11 == 1.0 && params.a12 == 0.0 && params.a21 == 0.0 && params.a22 == 1.0;
    let field = Field::from_fn(out_width, out_height, |x, y| {
        let (sx, sy) = if pure_translation {
            (x - params.t1, y - params.t2)
        } else {
            inv.apply(x, y)
        };
        src.sample_bilinear(sx, sy)
    });
    Raster::from_field(field)
}

/// Anisotropic Gaussian bump `amplitude * exp(-q/2)` with covariance given by
/// its principal standard deviations and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    pub cx: f64,
    pub cy: f64,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Orientation of the major axis in radians.
    pub angle: f64,
    pub amplitude: f64,
}

impl GaussianBlob {
    pub fn isotropic(cx: f64, cy: f64, sigma: f64, amplitude: f64) -> Self {
        Self {
            cx,
            cy,
            sigma_major: sigma,
            sigma_minor: sigma,
            angle: 0.0,
            amplitude,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if self.sigma_major == self.sigma_minor {
            let r2 = dx * dx + dy * dy;
            return self.amplitude * (-0.5 * r2 / (self.sigma_major * self.sigma_major)).exp();
        }
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let q = (u / self.sigma_major).powi(2) + (v / self.sigma_minor).powi(2);
        self.amplitude * (-0.5 * q).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Explicit list of Gaussian blobs.
    Blobs { blobs: Vec<GaussianBlob> },
    /// `count` random anisotropic blobs, deterministic in `seed`.
    RandomBlobs {
        count: usize,
        seed: u64,
        sigma_min: f64,
        sigma_max: f64,
    },
    /// `offset + slope_x * x + slope_y * y`.
    Ramp {
        offset: f64,
        slope_x: f64,
        slope_y: f64,
    },
    /// Smooth star-shaped region with a soft edge and linear shading.
    ShapeMask {
        seed: u64,
        harmonics: usize,
        edge_width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub width: usize,
    pub height: usize,
    /// Margin kept free of content, as a fraction of `min(width, height)`.
    pub margin: f64,
}

impl SyntheticSpec {
    pub const DEFAULT_MARGIN: f64 = 0.25;

    pub fn random_blobs(width: usize, height: usize, count: usize, seed: u64) -> Self {
        let scale = width.min(height) as f64;
        Self {
            kind: SyntheticKind::RandomBlobs {
                count,
                seed,
                sigma_min: 0.03 * scale,
                sigma_max: 0.06 * scale,
            },
            width,
            height,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn shape_mask(width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::ShapeMask {
                seed,
                harmonics: 4,
                edge_width: 0.02 * width.min(height) as f64,
            },
            width,
            height,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    fn content_box(&self) -> Result<(f64, f64, f64, f64)> {
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::InvalidSynthetic(format!(
                "margin {} must be in [0, 0.5)",
                self.margin
            )));
        }
        let m = self.margin * self.width.min(self.height) as f64;
        Ok((m, m, self.width as f64 - m, self.height as f64 - m))
    }
}

/// Deterministic synthetic image. Blob and shape kinds are scaled so the peak
/// intensity is 1.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Raster> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidSynthetic("zero dimensions".into()));
    }
    let (x0, y0, x1, y1) = spec.content_box()?;
    match &spec.kind {
        SyntheticKind::Blobs { blobs } => {
            if blobs.is_empty() {
                return Err(Error::InvalidSynthetic("no blobs".into()));
            }
            render_blobs(spec.width, spec.height, blobs)
        }
        SyntheticKind::RandomBlobs {
            count,
            seed,
            sigma_min,
            sigma_max,
        } => {
            if *count == 0 {
                return Err(Error::InvalidSynthetic("no blobs".into()));
            }
            if !(*sigma_min > 0.0 && sigma_max >= sigma_min) {
                return Err(Error::InvalidSynthetic(format!(
                    "bad sigma range [{sigma_min}, {sigma_max}]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut blobs = Vec::with_capacity(*count);
            for _ in 0..*count {
                let sigma_major = rng.random_range(*sigma_min..=*sigma_max);
                let sigma_minor = sigma_major * rng.random_range(0.5..=1.0);
                // Keep three major deviations inside the content box.
                let reach = 3.0 * sigma_major;
                if x1 - x0 <= 2.0 * reach || y1 - y0 <= 2.0 * reach {
                    return Err(Error::InvalidSynthetic(
                        "blobs do not fit inside the margin".into(),
                    ));
                }
                blobs.push(GaussianBlob {
                    cx: rng.random_range(x0 + reach..x1 - reach),
                    cy: rng.random_range(y0 + reach..y1 - reach),
                    sigma_major,
                    sigma_minor,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    amplitude: rng.random_range(0.4..=1.0),
                });
            }
            render_blobs(spec.width, spec.height, &blobs)
        }
        SyntheticKind::Ramp {
            offset,
            slope_x,
            slope_y,
        } => Raster::from_fn(spec.width, spec.height, |x, y| {
            offset + slope_x * x + slope_y * y
        })
        .map_err(|e| Error::InvalidSynthetic(format!("ramp: {e}"))),
        SyntheticKind::ShapeMask {
            seed,
            harmonics,
            edge_width,
        } => {
            if *edge_width <= 0.0 {
                return Err(Error::InvalidSynthetic(
                    "edge width must be positive".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let outer = 0.5 * (x1 - x0).min(y1 - y0) - 2.0 * edge_width;
            if outer <= 0.0 {
                return Err(Error::InvalidSynthetic(
                    "shape does not fit inside the margin".into(),
                ));
            }
            // r(theta) = base * (1 + sum a_k cos(k theta + phi_k)), bounded by `outer`.
            let terms: Vec<(f64, f64)> = (2..2 + *harmonics)
                .map(|_| {
                    (
                        rng.random_range(0.0..0.12),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let excursion: f64 = terms.iter().map(|(a, _)| a).sum();
            let base = outer / (1.0 + excursion);
            let shade_angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (sx, sy) = (shade_angle.cos(), shade_angle.sin());
            let raw = Field::from_fn(spec.width, spec.height, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let theta = dy.atan2(dx);
                let radius = base
                    * (1.0
                        + terms
                            .iter()
                            .enumerate()
                            .map(|(k, (a, phi))| a * ((k + 2) as f64 * theta + phi).cos())
                            .sum::<f64>());
                let d = (dx * dx + dy * dy).sqrt() - radius;
                let inside = 0.5 * (1.0 - (d / edge_width).tanh());
                let shade = 0.65 + 0.35 * (dx * sx + dy * sy) / outer;
                inside * shade
            });
            normalize_peak(raw)
        }
    }
}

fn render_blobs(width: usize, height: usize, blobs: &[GaussianBlob]) -> Result<Raster> {
    let raw = Field::from_fn(width, height, |x, y| {
        blobs.iter().map(|b| b.eval(x, y)).sum()
    });
    normalize_peak(raw)
}

fn normalize_peak(field: Field) -> Result<Raster> {
    let peak = field.max_abs();
    if peak <= 0.0 {
        return Err(Error::InvalidSynthetic("image is empty".into()));
    }
    Raster::from_field(field.map(|v| (v / peak).max(0.0)))
}

/// Loads a PGM or PNG file as intensities in `[0, 1]`.
#[cfg(feature = "io")]
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    use image::DynamicImage;

    let path = path.as_ref();
    let unsupported = |reason: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format = image::guess_format(&bytes).map_err(|e| unsupported(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(unsupported(format!("format {format:?} is not PGM or PNG")));
    }
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| unsupported(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(unsupported("zero-dimension image".into()));
    }
    let intensities: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let rgb = img.to_rgb16();
            rgb.pixels()
                .map(|p| luma(p.0.map(|c| c as f64 / 65535.0)))
                .collect()
        }
        _ => {
            let rgb = img.to_rgb8();
            rgb.pixels()
                .map(|p| luma(p.0.map(|c| c as f64 / 255.0)))
                .collect()
        }
    };
    Raster::new(width, height, intensities)
}

#[cfg(feature = "io")]
fn luma([r, g, b]: [f64; 3]) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}

/// Writes an 8-bit binary PGM (P5). Intensities are clamped to `[0, 1]`.
pub fn write_pgm(raster: &Raster, mut out: impl std::io::Write) -> std::io::Result<()> {
    write!(out, "P5\n{} {}\n255\n", raster.width(), raster.height())?;
    let bytes: Vec<u8> = raster
        .intensities()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}

pub fn save_pgm(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::with_capacity(raster.intensities().len() + 32);
    write_pgm(raster, &mut buf).map_err(io_err)?;
    std::fs::write(path, buf).map_err(io_err)
}
