//! Browser demo: chunk text layer by layer, watch an edit's footprint, and
//! check the Fibonacci palindrome. Every export returns JSON text; failures
//! come back as `{"error": "..."}`.

use chonkers::bench::{boundary_extents, fibonacci_timed};
use chonkers::pipeline::list_at_level;
use chonkers::rebuild::{edit_ops, splice_with_stats, Cut};
use chonkers::store::{level_of, Phase};
use chonkers::{build_tree, pipeline, ChunkerConfig, NodeId, Result, Store};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const BITS: u64 = 32;

fn to_text(r: Result<Value>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e.to_string() }))
        .to_string()
}

fn chars(text: &str) -> Vec<char> {
    text.chars().collect()
}

fn layer_lists(store: &Store, root: NodeId) -> Vec<Vec<NodeId>> {
    let height = store.provenance(root).layer;
    (1..=height)
        .map(|l| list_at_level(store, root, level_of(l, Phase::Diffbit)))
        .collect()
}

fn ends(store: &Store, list: &[NodeId]) -> Vec<u64> {
    let mut pos = 0;
    list.iter()
        .map(|&c| {
            pos += store.weight(c) / BITS;
            pos
        })
        .collect()
}

/// Chunks of every layer of `text`, as character spans.
pub fn layers_json(text: &str) -> Result<Value> {
    let config = ChunkerConfig::char32();
    let mut store = Store::default();
    let root = build_tree(&mut store, text.as_bytes(), &config)?;
    let cs = chars(text);
    let layers: Vec<Value> = layer_lists(&store, root)
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let mut start = 0usize;
            let chunks: Vec<Value> = list
                .iter()
                .map(|&c| {
                    let len = (store.weight(c) / BITS) as usize;
                    let v = json!({
                        "start": start,
                        "len": len,
                        "text": cs[start..start + len].iter().collect::<String>(),
                        "caterpillar": store.is_caterpillar(c),
                    });
                    start += len;
                    v
                })
                .collect();
            json!({ "layer": i + 1, "unit": config.params(i as u32 + 1).unit, "chunks": chunks })
        })
        .collect();
    Ok(json!({ "length": cs.len(), "layers": layers, "nodes": store.stats().nodes }))
}

/// Replace `deleted` characters at `position` with `inserted`; per layer,
/// how far chunk boundaries moved, and how the incremental rebuild fared.
pub fn edit_json(text: &str, position: u64, deleted: u64, inserted: &str) -> Result<Value> {
    let config = ChunkerConfig::char32();
    let mut store = Store::default();
    let root = build_tree(&mut store, text.as_bytes(), &config)?;
    let ins = inserted.chars().count() as u64;
    let new_root = edit_ops(
        &mut store,
        Some(root),
        position,
        deleted,
        inserted.as_bytes(),
        &config,
    )?;
    let middle = pipeline::proto_chunks(&mut store, inserted.as_bytes(), config.granularity)?;
    let (_, stats) = splice_with_stats(
        &mut store,
        Cut::new(root, position * BITS),
        &middle,
        Cut::new(root, (position + deleted) * BITS),
        &config,
    )?;
    let old_lists = layer_lists(&store, root);
    let new_lists = new_root.map(|r| layer_lists(&store, r)).unwrap_or_default();
    let layers: Vec<Value> = old_lists
        .iter()
        .enumerate()
        .map(|(i, old)| {
            let new = new_lists.get(i).map_or(&[][..], |v| v.as_slice());
            let (o, n) = (ends(&store, old), ends(&store, new));
            let trim = |v: &[u64]| v[..v.len().saturating_sub(1)].to_vec();
            let (left, right) = boundary_extents(&trim(&o), &trim(&n), position, deleted, ins);
            json!({ "layer": i + 1, "old": o, "new": n, "left": left, "right": right })
        })
        .collect();
    let new_text: String = {
        let cs = chars(text);
        let p = position as usize;
        cs[..p]
            .iter()
            .copied()
            .chain(inserted.chars())
            .chain(cs[p + deleted as usize..].iter().copied())
            .collect()
    };
    Ok(json!({
        "text": new_text,
        "layers": layers,
        "retries": stats.retries,
        "fallbacks": stats.fallbacks,
        "nodes": store.stats().nodes,
    }))
}

pub fn fibonacci_json(n: u32) -> Result<Value> {
    let r = fibonacci_timed(n, || 0.0)?;
    Ok(json!({
        "n": r.n,
        "length": r.length,
        "palindrome": r.palindrome,
        "nodes": r.nodes,
        "reverse_misses": r.reverse_misses,
    }))
}

#[wasm_bindgen]
pub fn chunk_layers(text: &str) -> String {
    to_text(layers_json(text))
}

#[wasm_bindgen]
pub fn edit_locality(text: &str, position: u32, deleted: u32, inserted: &str) -> String {
    to_text(edit_json(text, position as u64, deleted as u64, inserted))
}

#[wasm_bindgen]
pub fn fibonacci_palindrome(n: u32) -> String {
    to_text(fibonacci_json(n))
}
