//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Images cross the boundary as row-major `Float64Array`s plus width and
//! height. The plain-Rust functions live in [`ops`] so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod ops;

fn js(e: awmi::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthetic image: `kind` is "blobs" or "shape".
#[wasm_bindgen]
pub fn synth(kind: &str, size: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    ops::synth(kind, size, seed).map_err(js)
}

/// Luminance of canvas RGBA data, scaled to [0, 1].
#[wasm_bindgen]
pub fn luminance(rgba: &[u8]) -> Vec<f64> {
    ops::luminance(rgba)
}

/// Warps with `[a11, a12, a21, a22, t1, t2]` into a frame of the same size.
/// With `recenter` the translation is replaced so the centroid lands mid-frame.
#[wasm_bindgen]
pub fn warp(
    pixels: &[f64],
    width: usize,
    height: usize,
    params: &[f64],
    recenter: bool,
) -> Result<Vec<f64>, JsError> {
    ops::warp(pixels, width, height, params, recenter).map_err(js)
}

/// JSON array of `{id, a, b, error_pct}` for every invariant.
#[wasm_bindgen]
pub fn compare(
    a: &[f64],
    b: &[f64],
    width: usize,
    height: usize,
    kernel: &str,
) -> Result<String, JsError> {
    ops::compare(a, b, width, height, kernel).map_err(js)
}

#[wasm_bindgen]
pub fn gray_rgba(pixels: &[f64]) -> Vec<u8> {
    ops::gray_rgba(pixels)
}

/// Diverging heatmap of ADI`which` (1..=5) around the image centroid.
#[wasm_bindgen]
pub fn adi_heatmap(
    pixels: &[f64],
    width: usize,
    height: usize,
    which: usize,
    kernel: &str,
) -> Result<Vec<u8>, JsError> {
    ops::adi_heatmap(pixels, width, height, which, kernel).map_err(js)
}
