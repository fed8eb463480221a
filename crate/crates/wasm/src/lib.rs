//! Browser bindings for the demo page: simulated coefficient surfaces, an
//! ESF-MA fit against them, and the prior weight map of one sub-model.
//! Every export returns a JSON string.

use esfma::aggregate::prior_weights;
use esfma::geometry::{kmeans_partition, mst_range};
use esfma::simulate::{generate_scenario, grid_sites, score};
use esfma::{fit_esfma, ClusterSpec, Coord, EsfmaConfig, SimConfig, WeightScheme};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_SIDE: usize = 60;

fn check_side(side: usize) -> Result<(), String> {
    if !(3..=MAX_SIDE).contains(&side) {
        return Err(format!("grid side must be between 3 and {MAX_SIDE}, got {side}"));
    }
    Ok(())
}

fn scheme(name: &str) -> Result<WeightScheme, String> {
    WeightScheme::from_name(name).ok_or_else(|| format!("unknown scheme '{name}'"))
}

fn column(m: &esfma::Mat<f64>, k: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, k)]).collect()
}

/// True coefficient surfaces of a varying-only scenario.
pub fn surfaces(side: usize, range: f64, seed: u64) -> Result<Value, String> {
    check_side(side)?;
    let truth = generate_scenario(&SimConfig::svc_only(side, range, seed)).map_err(|e| e.to_string())?;
    let ds = &truth.dataset;
    let surfaces: Vec<Value> = (0..ds.k())
        .map(|k| json!({ "name": ds.names[k], "values": column(&truth.beta, k) }))
        .collect();
    Ok(json!({ "side": side, "surfaces": surfaces }))
}

/// Simulates a varying-only scenario, fits ESF-MA and returns true and
/// fitted surfaces with per-coefficient RMSE.
pub fn fit(side: usize, range: f64, seed: u64, scheme_name: &str, target_size: usize, global_l: usize) -> Result<Value, String> {
    check_side(side)?;
    let truth = generate_scenario(&SimConfig::svc_only(side, range, seed)).map_err(|e| e.to_string())?;
    let config = EsfmaConfig {
        clusters: ClusterSpec::TargetSize(target_size.max(1)),
        scheme: scheme(scheme_name)?,
        global_l: global_l.max(1),
        svc: Some(truth.svc.clone()),
        seed,
        ..EsfmaConfig::default()
    };
    let fit = fit_esfma(&truth.dataset, &config).map_err(|e| e.to_string())?;
    let s = score(&fit.beta, &truth.beta).map_err(|e| e.to_string())?;
    let ds = &truth.dataset;
    let surfaces: Vec<Value> = (0..ds.k())
        .map(|k| {
            json!({
                "name": ds.names[k],
                "truth": column(&truth.beta, k),
                "fitted": column(&fit.beta, k),
                "rmse": s.rmse[k],
            })
        })
        .collect();
    Ok(json!({
        "side": side,
        "scheme": config.scheme.name(),
        "models": fit.n_models(),
        "loglik": fit.loglik,
        "bic": fit.bic,
        "surfaces": surfaces,
    }))
}

/// Cluster assignment and the normalized prior weight of sub-model `model`
/// at every grid site. With a global model it is the last index.
pub fn weights(side: usize, clusters: usize, scheme_name: &str, threshold: f64, model: usize) -> Result<Value, String> {
    check_side(side)?;
    let sites: Vec<Coord> = grid_sites(side);
    let mut sch = scheme(scheme_name)?;
    sch.threshold_factor = threshold;
    let part = kmeans_partition(&sites, clusters.max(1), 0).map_err(|e| e.to_string())?;
    let ranges = part
        .members()
        .iter()
        .map(|m| {
            let pts: Vec<Coord> = m.iter().map(|&i| sites[i]).collect();
            mst_range(&pts)
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    let w = prior_weights(&part, &sites, &ranges, &sch).map_err(|e| e.to_string())?;
    if model >= w.n_models() {
        return Err(format!("model {model} out of range; there are {}", w.n_models()));
    }
    let values: Vec<f64> = (0..sites.len()).map(|i| w.row(i)[model]).collect();
    Ok(json!({
        "side": side,
        "models": w.n_models(),
        "global": sch.include_global && model + 1 == w.n_models(),
        "assignments": part.assignments,
        "weights": values,
        "total": w.totals[model],
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateSurfaces)]
pub fn simulate_surfaces(side: u32, range: f64, seed: u32) -> Result<String, JsError> {
    to_js(surfaces(side as usize, range, seed as u64))
}

#[wasm_bindgen(js_name = fitDemo)]
pub fn fit_demo(side: u32, range: f64, seed: u32, scheme: &str, target_size: u32, global_l: u32) -> Result<String, JsError> {
    to_js(fit(side as usize, range, seed as u64, scheme, target_size as usize, global_l as usize))
}

#[wasm_bindgen(js_name = weightMap)]
pub fn weight_map(side: u32, clusters: u32, scheme: &str, threshold: f64, model: u32) -> Result<String, JsError> {
    to_js(weights(side as usize, clusters as usize, scheme, threshold, model as usize))
}
