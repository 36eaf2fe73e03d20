//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export returns JSON (or a flat `Float64Array`) so the page needs no
//! glue beyond `JSON.parse`. Errors surface as thrown JS strings.

use iop_core::graph::{synth_generate, SynthParams};
use iop_core::metrics::{score_sample, MetricOptions};
use iop_core::motif::build_dataset;
use iop_core::nn::{time_encode, TimeEncoding};
use iop_core::seqspace::EdgeVocab;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Scores a predicted edge order against a target for an `n`-clique.
/// Sequences use tokens like `"12 13 23"`.
pub fn score_json(n: usize, prediction: &str, target: &str, pad_rank: bool) -> iop_core::Result<String> {
    let vocab = EdgeVocab::new(n);
    let pred = vocab.parse_sequence(prediction)?;
    let tgt = vocab.parse_sequence(target)?;
    let m = score_sample(&pred, &tgt, MetricOptions { pad_rank })?;
    Ok(serde_json::to_string(&m)?)
}

/// Row-major `(max_rank + 1) x dim` matrix of sinusoidal time encodings.
pub fn encoding_matrix(dim: usize, base: f64, max_rank: u32) -> iop_core::Result<Vec<f64>> {
    let enc = TimeEncoding::new(dim, base)?;
    Ok((0..=max_rank as u64).flat_map(|r| time_encode(r, &enc)).collect())
}

/// Generates a synthetic graph and mines its `n`-cliques.
pub fn mine_json(nodes: usize, cliques: usize, n: usize, noise: usize, seed: u64) -> iop_core::Result<String> {
    let g = synth_generate(SynthParams {
        num_nodes: nodes,
        num_cliques: cliques,
        n,
        noise_edges: noise,
        seed,
    })?;
    let samples = build_dataset(&g, n, 1)?;
    let events: Vec<_> = g.events().iter().map(|e| [e.u as i64, e.v as i64, e.t]).collect();
    let mined: Vec<_> = samples
        .iter()
        .map(|s| {
            let vocab = s.vocab();
            json!({
                "nodes": s.clique,
                "order": vocab.format_sequence(s.label.ids()),
                "completion_time": s.completion_time,
                "tied": s.tied,
                "subgraph_nodes": s.subgraph.num_nodes(),
            })
        })
        .collect();
    Ok(json!({ "nodes": g.nodes(), "events": events, "cliques": mined }).to_string())
}

#[wasm_bindgen]
pub fn score_sequences(n: usize, prediction: &str, target: &str, pad_rank: bool) -> Result<String, JsValue> {
    score_json(n, prediction, target, pad_rank).map_err(js_err)
}

#[wasm_bindgen]
pub fn time_encoding_curve(dim: usize, base: f64, max_rank: u32) -> Result<Vec<f64>, JsValue> {
    encoding_matrix(dim, base, max_rank).map_err(js_err)
}

#[wasm_bindgen]
pub fn mine_synthetic(nodes: usize, cliques: usize, n: usize, noise: usize, seed: u32) -> Result<String, JsValue> {
    mine_json(nodes, cliques, n, noise, seed as u64).map_err(js_err)
}
