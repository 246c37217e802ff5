//! Browser bindings for the interactive page in `www/`.
//!
//! Every export returns a JSON string so the same functions run unchanged in
//! native tests; failures come back as `{"error": "..."}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tlinedet::anchors::{kmeans_shapes, shape_fitness, DistanceMetric, KMeansConfig, DEFAULT_BPR_THRESHOLD};
use tlinedet::geometry::{iou_distance, wh_iou, Wh};
use tlinedet::nn::{focal_loss, focal_loss_grad, FocalParams};
use wasm_bindgen::prelude::*;

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// IoU of two box shapes placed on a common centre.
#[wasm_bindgen]
pub fn shape_iou(w1: f64, h1: f64, w2: f64, h2: f64) -> String {
    respond((|| {
        let a = Wh::new(w1, h1).map_err(|e| e.to_string())?;
        let b = Wh::new(w2, h2).map_err(|e| e.to_string())?;
        let iou = wh_iou(a, b).map_err(|e| e.to_string())?;
        let d = iou_distance(&a.centered_at(0.0, 0.0), &b.centered_at(0.0, 0.0)).map_err(|e| e.to_string())?;
        let euclid = ((w1 - w2).powi(2) + (h1 - h2).powi(2)).sqrt();
        Ok(json!({
            "iou": iou,
            "one_minus_iou": d,
            "shape_distance": euclid,
            "centre_distance": 0.0,
        }))
    })())
}

/// Focal loss, its gradient and plain cross-entropy at `n` evenly spaced
/// probabilities in (0, 1).
#[wasm_bindgen]
pub fn focal_curve(alpha: f64, gamma: f64, positive: bool, n: usize) -> String {
    respond((|| {
        let fp = FocalParams::new(alpha, gamma).map_err(|e| e.to_string())?;
        let ce = FocalParams::new(if positive { 1.0 } else { 0.0 }, 0.0).unwrap();
        let n = n.clamp(2, 2000);
        let mut p = Vec::with_capacity(n);
        let mut loss = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        let mut xent = Vec::with_capacity(n);
        for i in 1..=n {
            let x = i as f64 / (n + 1) as f64;
            p.push(x);
            loss.push(focal_loss(x, positive, &fp).map_err(|e| e.to_string())?.loss);
            grad.push(focal_loss_grad(x, positive, &fp).map_err(|e| e.to_string())?);
            xent.push(focal_loss(x, positive, &ce).map_err(|e| e.to_string())?.loss);
        }
        Ok(json!({ "p": p, "loss": loss, "grad": grad, "cross_entropy": xent }))
    })())
}

/// Random box shapes in pixels: a mix of small squares, thin verticals and
/// flat horizontals, plus a few large elongated boxes.
#[wasm_bindgen]
pub fn sample_shapes(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let families = [
        (6.0, 6.0),
        (5.0, 40.0),
        (30.0, 8.0),
        (14.0, 30.0),
        (60.0, 170.0),
        (90.0, 55.0),
    ];
    let shapes: Vec<[f64; 2]> = (0..n.min(5000))
        .map(|_| {
            let (w, h) = families[rng.random_range(0..families.len())];
            let s = rng.random_range(0.7..1.6);
            let round = |v: f64| (v * 10.0).round() / 10.0;
            [
                round(w * s * rng.random_range(0.9..1.1)),
                round(h * s * rng.random_range(0.9..1.1)),
            ]
        })
        .collect();
    json!(shapes).to_string()
}

/// Clusters `shapes_json` (`[[w,h],...]`) into `k` anchors under `metric`
/// (`"euclidean"` or `"one-minus-iou"`).
#[wasm_bindgen]
pub fn cluster_anchors(shapes_json: &str, k: usize, metric: &str, seed: u64) -> String {
    respond((|| {
        let raw: Vec<[f64; 2]> = serde_json::from_str(shapes_json).map_err(|e| e.to_string())?;
        let shapes = raw
            .iter()
            .map(|&[w, h]| Wh::new(w, h))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let metric: DistanceMetric = metric.parse().map_err(|e: tlinedet::Error| e.to_string())?;
        let cfg = KMeansConfig {
            k,
            metric,
            seed,
            ..Default::default()
        };
        let r = kmeans_shapes(&shapes, &cfg).map_err(|e| e.to_string())?;
        let fit = shape_fitness(&r.centroids, &shapes, DEFAULT_BPR_THRESHOLD).map_err(|e| e.to_string())?;
        Ok(json!({
            "centroids": r.centroids,
            "assignment": r.assignment,
            "inertia": r.inertia,
            "iterations": r.iterations,
            "mean_best_iou": fit.mean_best_iou,
            "best_possible_recall": fit.best_possible_recall,
        }))
    })())
}
