use wasm_bindgen::prelude::*;

pub mod demo;

/// JSON summary of fusing one random RepMBConv block.
#[wasm_bindgen]
pub fn fusion_check(channels: usize, seed: u32, size: usize) -> Result<String, JsError> {
    let r = demo::fusion_check(channels, seed.into(), size).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string_pretty(&r)?)
}

/// Grey RGBA attention map for an RGBA image; `kind` is `gate`,
/// `importance` or `combined`.
#[wasm_bindgen]
pub fn importance_map(rgba: &[u8], width: usize, height: usize, seed: u32, kind: &str) -> Result<Vec<u8>, JsError> {
    let kind = demo::MapKind::parse(kind).map_err(|e| JsError::new(&e))?;
    demo::importance_map(rgba, width, height, seed.into(), kind).map_err(|e| JsError::new(&e))
}

/// Fused-model profile report as JSON.
#[wasm_bindgen]
pub fn profile(variant: &str, scale: usize, size: usize, attention: &str) -> Result<String, JsError> {
    demo::profile_json(variant, scale, size, attention).map_err(|e| JsError::new(&e))
}
