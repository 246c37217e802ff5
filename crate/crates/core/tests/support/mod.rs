//! Independent reference implementations used by the oracle tests.
//! Nothing here calls into the library's metric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlinedet::anchors::DistanceMetric;
use tlinedet::eval::{Detection, GroundTruth};
use tlinedet::geometry::{BBoxPix, Wh};

fn shape_distance(metric: DistanceMetric, a: (f64, f64), b: (f64, f64)) -> f64 {
    match metric {
        DistanceMetric::Euclidean => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
        DistanceMetric::OneMinusIou => {
            let inter = a.0.min(b.0) * a.1.min(b.1);
            1.0 - inter / (a.0 * a.1 + b.0 * b.1 - inter)
        }
    }
}

/// Lower bound on the inertia any run of the clusterer can return.
///
/// Every centroid the clusterer can hold is a data point or the mean of some
/// subset of points, so each part of the final partition costs at least the
/// best such candidate. Minimising over all partitions into at most `k` parts
/// gives the bound; it equals the true optimum restricted to those centroids.
pub fn clustering_optimum(shapes: &[Wh], k: usize, metric: DistanceMetric) -> f64 {
    let n = shapes.len();
    assert!(n <= 12 && k >= 1);
    let pts: Vec<(f64, f64)> = shapes.iter().map(|s| (s.w, s.h)).collect();
    let full = 1usize << n;
    let mut candidates = Vec::with_capacity(full + n * n);
    for mask in 1..full {
        let (mut sw, mut sh, mut m) = (0.0, 0.0, 0.0);
        for (i, p) in pts.iter().enumerate() {
            if mask >> i & 1 == 1 {
                sw += p.0;
                sh += p.1;
                m += 1.0;
            }
        }
        candidates.push((sw / m, sh / m));
    }
    for a in &pts {
        for b in &pts {
            candidates.push((a.0, b.1));
        }
    }
    let mut part_cost = vec![f64::INFINITY; full];
    for (mask, cost) in part_cost.iter_mut().enumerate().skip(1) {
        for c in &candidates {
            let mut s = 0.0;
            for (i, p) in pts.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s += shape_distance(metric, *p, *c);
                }
            }
            *cost = cost.min(s);
        }
    }
    // best[mask] with at most j parts, built up one part at a time.
    let mut best = part_cost.clone();
    best[0] = 0.0;
    for _ in 1..k {
        let mut next = best.clone();
        for mask in 1..full {
            let low = mask & mask.wrapping_neg();
            let mut sub = mask;
            while sub > 0 {
                if sub & low != 0 {
                    let v = part_cost[sub] + best[mask ^ sub];
                    if v < next[mask] {
                        next[mask] = v;
                    }
                }
                sub = (sub - 1) & mask;
            }
        }
        best = next;
    }
    best[full - 1]
}

/// Random shapes on a coarse grid so that duplicates and near-ties occur.
pub fn random_shapes(rng: &mut ChaCha8Rng, n: usize) -> Vec<Wh> {
    (0..n)
        .map(|_| {
            let w = rng.random_range(1..=40) as f64 * 0.5;
            let h = rng.random_range(1..=40) as f64 * 0.5;
            Wh::new(w, h).unwrap()
        })
        .collect()
}

fn box_iou(a: &BBoxPix, b: &BBoxPix) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    inter / union
}

/// Per-class AP by replaying greedy matching and integrating the
/// interpolated precision on a dense recall grid.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruth], class_id: usize, thr: f64) -> Option<f64> {
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
    let mut dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class_id).collect();
    if gts.is_empty() {
        return None;
    }
    // Insertion sort, descending confidence, equal keys keep input order.
    for i in 1..dets.len() {
        let mut j = i;
        while j > 0 && dets[j - 1].confidence < dets[j].confidence {
            dets.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (rank, d) in dets.iter().enumerate() {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || g.image_id != d.image_id {
                continue;
            }
            let v = box_iou(&d.bbox, &g.bbox);
            if v > pick_iou {
                pick_iou = v;
                pick = Some(gi);
            }
        }
        if let Some(gi) = pick.filter(|_| pick_iou >= thr) {
            used[gi] = true;
            tp += 1;
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    // Recall steps are multiples of 1/n_gt with n_gt <= 4, so cells of
    // width 1/12000 never straddle a step.
    const CELLS: usize = 12_000;
    let mut area = 0.0;
    for c in 0..CELLS {
        let r = (c as f64 + 0.5) / CELLS as f64;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        area += p;
    }
    Some(area / CELLS as f64)
}

pub struct EvalInstance {
    pub dets: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
    pub n_classes: usize,
}

/// At most 5 images, 6 detections, 4 ground truths and 2 classes, with
/// integer corners so every IoU is an exact ratio.
pub fn random_eval_instance(seed: u64) -> EvalInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.random_range(1..=5);
    let n_classes = rng.random_range(1..=2);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let x1 = rng.random_range(0..8) as f64;
        let y1 = rng.random_range(0..8) as f64;
        let w = rng.random_range(1..=6) as f64;
        let h = rng.random_range(1..=6) as f64;
        BBoxPix::new(x1, y1, x1 + w, y1 + h).unwrap()
    };
    let n_gt = rng.random_range(1..=4);
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|_| GroundTruth {
            image_id: format!("img{}", rng.random_range(0..n_images)),
            class_id: rng.random_range(0..n_classes),
            bbox: rand_box(&mut rng),
        })
        .collect();
    let n_det = rng.random_range(0..=6);
    let dets = (0..n_det)
        .map(|_| {
            // Half the detections are jittered copies of a ground truth.
            let (image_id, class_id, bbox) = if rng.random_bool(0.5) {
                let g = &gts[rng.random_range(0..gts.len())];
                let b = g.bbox;
                let dx = rng.random_range(-1..=1) as f64;
                let dy = rng.random_range(-1..=1) as f64;
                let grow = rng.random_range(0..=1) as f64;
                (
                    g.image_id.clone(),
                    g.class_id,
                    BBoxPix::new(b.x1 + dx, b.y1 + dy, b.x2 + dx + grow, b.y2 + dy).unwrap(),
                )
            } else {
                (
                    format!("img{}", rng.random_range(0..n_images)),
                    rng.random_range(0..n_classes),
                    rand_box(&mut rng),
                )
            };
            Detection {
                image_id,
                class_id,
                bbox,
                confidence: rng.random_range(1..=10) as f64 / 10.0,
            }
        })
        .collect();
    EvalInstance { dets, gts, n_classes }
}

/// Cross-entropy of a prediction `p` for label `y`, evaluated directly.
pub fn cross_entropy(p: f64, positive: bool) -> f64 {
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}
