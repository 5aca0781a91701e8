//! Browser bindings for three interactive views. Each export takes plain
//! numbers and arrays and returns a JSON string. The logic lives in [`demo`]
//! so it runs and is tested natively.

use wasm_bindgen::prelude::*;

pub mod demo;

fn to_js<T: serde::Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

/// Log-density of a three-component model on a triangular grid.
#[wasm_bindgen]
pub fn density_grid(a: f64, b: f64, k: &[f64], eta: &[f64], resolution: usize) -> Result<String, JsError> {
    to_js(demo::density_grid(a, b, k, eta, resolution))
}

/// Boundary weight `h_j ∘ φ_j` and its derivative on a triangular grid.
#[wasm_bindgen]
pub fn weight_field(h_exponent: f64, c: f64, j: usize, dropped: usize, resolution: usize) -> Result<String, JsError> {
    to_js(demo::weight_field(h_exponent, c, j, dropped, resolution))
}

/// Simulates a banded graph, fits a path and scores support recovery.
#[wasm_bindgen]
pub fn recovery(m: usize, n: usize, bandwidth: usize, h_exponent: f64, seed: u64) -> Result<String, JsError> {
    to_js(demo::recovery(m, n, bandwidth, h_exponent, seed))
}

#[wasm_bindgen]
pub fn version() -> String {
    simplex_score::VERSION.to_string()
}
