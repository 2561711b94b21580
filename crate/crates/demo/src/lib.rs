//! WebAssembly bindings behind `www/index.html`.
//!
//! Each export is a thin wrapper over a plain function in this crate so the
//! logic can be tested natively.

use std::collections::BTreeMap;

use lookmatch_core::corpus::{ImageRecord, Role};
use lookmatch_core::curation::{build_manifest, form_pairs, TierCutoffs};
use lookmatch_core::eval::{correlation_matrix, fmt_two_decimals};
use lookmatch_core::fusion::{fuse_second_highest, EnsembleSpec, FusionMode};
use lookmatch_core::fuzzy::brand_similarity;
use lookmatch_core::retrieval::{prefilter, BrandFilter};
use lookmatch_core::standardize::{calibrate, standardize};
use lookmatch_core::table::{Completeness, ScoreTable};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Scores every gallery brand (one per line) against `query` and marks the
/// ones that pass `threshold`.
pub fn brand_matches(query: &str, gallery: &str, threshold: f64) -> Result<String, String> {
    let filter = BrandFilter::new(threshold).map_err(|e| e.to_string())?;
    let records: Vec<ImageRecord> = gallery
        .lines()
        .enumerate()
        .map(|(i, brand)| ImageRecord {
            id: format!("{i}"),
            role: Role::Gallery,
            brand: brand.to_string(),
            image_uri: String::new(),
            source: String::new(),
        })
        .collect();
    let q = ImageRecord {
        id: "query".into(),
        role: Role::Query,
        brand: query.to_string(),
        image_uri: String::new(),
        source: String::new(),
    };
    let kept = prefilter(&q, &records, &filter);
    let rows: Vec<_> = records
        .iter()
        .map(|r| {
            json!({
                "brand": r.brand,
                "similarity": (brand_similarity(query, &r.brand) * 100.0).round() / 100.0,
                "kept": kept.contains(&r.id),
            })
        })
        .collect();
    Ok(json!({ "threshold": threshold, "rows": rows }).to_string())
}

/// Parses `name: v1 v2 ...` lines into one table per model over the same
/// synthetic pair index.
fn parse_series(text: &str) -> Result<Vec<ScoreTable>, String> {
    let mut tables = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (name, values) = line
            .split_once(':')
            .ok_or_else(|| format!("line {}: expected `name: values`", n + 1))?;
        let values: Vec<f64> = values
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|v| !v.is_empty())
            .map(|v| v.parse().map_err(|_| format!("line {}: bad number {v:?}", n + 1)))
            .collect::<Result<_, _>>()?;
        let entries = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (("q".to_string(), format!("{i:06}")), v));
        tables
            .push(ScoreTable::from_entries(name.trim(), Completeness::Truncated, entries).map_err(|e| e.to_string())?);
    }
    Ok(tables)
}

/// Spearman matrix of the given series, rendered as a two-decimal grid.
pub fn rank_correlation(text: &str) -> Result<String, String> {
    let tables = parse_series(text)?;
    let m = correlation_matrix(&tables, usize::MAX, 0).map_err(|e| e.to_string())?;
    let cells: Vec<Vec<String>> = m
        .values
        .iter()
        .map(|row| row.iter().map(|v| fmt_two_decimals(*v)).collect())
        .collect();
    Ok(json!({ "models": m.models, "cells": cells, "pairs": m.sample_size, "text": m.render_heatmap() }).to_string())
}

/// Z-scores each model's `query,gallery,score` rows (one model per
/// `[name]` section), fuses them by second-highest score and ranks the best
/// pair per query.
pub fn fuse_and_rank(text: &str, min_support: usize) -> Result<String, String> {
    let mut raw: BTreeMap<String, ScoreTable> = BTreeMap::new();
    let mut order = Vec::new();
    let mut current: Option<String> = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if !raw.contains_key(&name) {
                order.push(name.clone());
                raw.insert(name.clone(), ScoreTable::new(name.clone(), Completeness::Truncated));
            }
            current = Some(name);
            continue;
        }
        let model = current
            .as_ref()
            .ok_or_else(|| format!("line {}: rows before any [model]", n + 1))?;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [q, g, s] = f[..] else {
            return Err(format!("line {}: expected query,gallery,score", n + 1));
        };
        let s: f64 = s.parse().map_err(|_| format!("line {}: bad score {s:?}", n + 1))?;
        raw.get_mut(model)
            .expect("section registered")
            .insert(q, g, s)
            .map_err(|e| e.to_string())?;
    }

    let mut standardized = Vec::new();
    let mut stats = Vec::new();
    for name in &order {
        let t = &raw[name];
        let st = calibrate(t, t.len(), 0).map_err(|e| e.to_string())?;
        stats.push(json!({ "model": name, "mu": st.mu, "sigma": st.sigma }));
        standardized.push(standardize(t, &st).map_err(|e| e.to_string())?);
    }
    let spec = EnsembleSpec {
        name: "ensemble".into(),
        mode: FusionMode::SecondHighestTruncated,
        min_support,
        members: order.clone(),
    };
    let fused = fuse_second_highest(&standardized, &spec).map_err(|e| e.to_string())?;
    let pairs = form_pairs(&fused);
    let n = pairs.len().max(3);
    let cutoffs = TierCutoffs::new(n.div_ceil(3).max(1), (2 * n).div_ceil(3).max(2), n).map_err(|e| e.to_string())?;
    let manifest = build_manifest(&pairs, cutoffs).map_err(|e| e.to_string())?;
    let rows: Vec<_> = manifest
        .rows
        .iter()
        .map(|r| json!({ "rank": r.rank, "query": r.query_id, "gallery": r.gallery_id, "score": r.score, "tier": r.tier.as_str() }))
        .collect();
    Ok(json!({ "stats": stats, "fused_pairs": fused.len(), "rows": rows }).to_string())
}

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = brandMatches)]
pub fn brand_matches_js(query: &str, gallery: &str, threshold: f64) -> Result<String, JsError> {
    to_js(brand_matches(query, gallery, threshold))
}

#[wasm_bindgen(js_name = rankCorrelation)]
pub fn rank_correlation_js(text: &str) -> Result<String, JsError> {
    to_js(rank_correlation(text))
}

#[wasm_bindgen(js_name = fuseAndRank)]
pub fn fuse_and_rank_js(text: &str, min_support: usize) -> Result<String, JsError> {
    to_js(fuse_and_rank(text, min_support))
}
