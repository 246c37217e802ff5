//! Anchor generation by k-means over annotation shapes.
//!
//! Shapes are clustered either by plain Euclidean distance on `(w, h)` or by
//! the `1 - IoU` distance between co-centered boxes. The second metric is
//! insensitive to absolute size and separates boxes of equal area but
//! different aspect ratio, which Euclidean distance lumps together.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{wh_iou_unchecked, Wh};

/// Number of anchors per detection scale.
pub const ANCHORS_PER_SCALE: usize = 3;
/// Total anchors in a grouped set (3 scales x 3).
pub const ANCHOR_COUNT: usize = 9;
/// Output strides of the three detection heads (small, medium, large objects).
pub const HEAD_STRIDES: [u32; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Euclidean,
    OneMinusIou,
}

impl DistanceMetric {
    #[inline]
    pub fn distance(self, a: Wh, b: Wh) -> f64 {
        match self {
            DistanceMetric::Euclidean => (a.w - b.w).hypot(a.h - b.h),
            DistanceMetric::OneMinusIou => 1.0 - wh_iou_unchecked(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::OneMinusIou => "one-minus-iou",
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "one-minus-iou" | "1-iou" | "iou" => Ok(DistanceMetric::OneMinusIou),
            other => Err(Error::invalid(format!("unknown distance metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub metric: DistanceMetric,
    pub max_iters: usize,
    pub seed: u64,
    /// Side of the square network input the shapes are letterboxed to.
    pub input_size: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: ANCHOR_COUNT,
            metric: DistanceMetric::OneMinusIou,
            max_iters: 300,
            seed: 41,
            input_size: 640.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansResult {
    pub centroids: Vec<Wh>,
    /// Cluster index of every input shape.
    pub assignment: Vec<usize>,
    /// Sum of point-to-assigned-centroid distances.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after seeding and after every accepted Lloyd step.
    pub inertia_trace: Vec<f64>,
}

/// Seeded k-means++ followed by Lloyd iterations.
///
/// Centroids move to the component-wise mean of their members unless that
/// raises the cluster's cost, in which case the previous centroid is kept.
/// Empty clusters are reseeded with the point farthest from its centroid.
/// The returned `inertia_trace` is non-increasing.
pub fn kmeans_shapes(shapes: &[Wh], cfg: &KMeansConfig) -> Result<KMeansResult> {
    if shapes.is_empty() {
        return Err(Error::invalid("no shapes to cluster"));
    }
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    for s in shapes {
        s.validate()?;
    }
    let distinct = count_distinct(shapes);
    if cfg.k > distinct {
        return Err(Error::Infeasible(format!(
            "k = {} exceeds the {distinct} distinct shapes",
            cfg.k
        )));
    }

    let metric = cfg.metric;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(shapes, cfg.k, metric, &mut rng);
    let (mut assignment, mut dists) = assign(shapes, &centroids, metric);
    let mut inertia = seq_sum(&dists);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let next = update_centroids(shapes, &assignment, &dists, &centroids, metric);
        let (next_assignment, next_dists) = assign(shapes, &next, metric);
        let next_inertia = seq_sum(&next_dists);
        if next_inertia > inertia {
            // Summation order can leave a rounding-level increase; treat as converged.
            converged = true;
            break;
        }
        let stable = next_assignment == assignment;
        centroids = next;
        assignment = next_assignment;
        dists = next_dists;
        inertia = next_inertia;
        trace.push(inertia);
        if stable {
            converged = true;
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        assignment,
        inertia,
        iterations,
        converged,
        inertia_trace: trace,
    })
}

fn count_distinct(shapes: &[Wh]) -> usize {
    let mut keys: Vec<(u64, u64)> = shapes.iter().map(|s| (s.w.to_bits(), s.h.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

fn seq_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

fn nearest(p: Wh, centroids: &[Wh], metric: DistanceMetric) -> (usize, f64) {
    let mut best = (0, metric.distance(p, centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = metric.distance(p, *c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(shapes: &[Wh], centroids: &[Wh], metric: DistanceMetric) -> (Vec<usize>, Vec<f64>) {
    shapes.iter().map(|&p| nearest(p, centroids, metric)).unzip()
}

fn plus_plus_init(shapes: &[Wh], k: usize, metric: DistanceMetric, rng: &mut impl Rng) -> Vec<Wh> {
    let n = shapes.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(shapes[rng.random_range(0..n)]);
    let mut weights: Vec<f64> = shapes
        .iter()
        .map(|&p| metric.distance(p, centroids[0]).powi(2))
        .collect();

    while centroids.len() < k {
        let total = seq_sum(&weights);
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            // Every point coincides (under the metric) with a seed; take the
            // first shape not yet used verbatim.
            shapes
                .iter()
                .position(|s| !centroids.contains(s))
                .expect("distinct shapes >= k")
        };
        let c = shapes[pick];
        centroids.push(c);
        for (w, &p) in weights.iter_mut().zip(shapes) {
            let d = metric.distance(p, c).powi(2);
            if d < *w {
                *w = d;
            }
        }
    }
    centroids
}

fn update_centroids(
    shapes: &[Wh],
    assignment: &[usize],
    dists: &[f64],
    current: &[Wh],
    metric: DistanceMetric,
) -> Vec<Wh> {
    let k = current.len();
    let mut sum_w = vec![0.0; k];
    let mut sum_h = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (p, &j) in shapes.iter().zip(assignment) {
        sum_w[j] += p.w;
        sum_h[j] += p.h;
        count[j] += 1;
    }

    let mut next = current.to_vec();
    for j in 0..k {
        if count[j] == 0 {
            continue;
        }
        let mean = Wh {
            w: sum_w[j] / count[j] as f64,
            h: sum_h[j] / count[j] as f64,
        };
        let (mut old_cost, mut new_cost) = (0.0, 0.0);
        for (p, _) in shapes.iter().zip(assignment).filter(|(_, &a)| a == j) {
            old_cost += metric.distance(*p, current[j]);
            new_cost += metric.distance(*p, mean);
        }
        if new_cost <= old_cost {
            next[j] = mean;
        }
    }

    let mut spent = vec![false; shapes.len()];
    for j in (0..k).filter(|&j| count[j] == 0) {
        let mut far: Option<usize> = None;
        for i in 0..shapes.len() {
            if spent[i] {
                continue;
            }
            if far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            spent[i] = true;
            next[j] = shapes[i];
        }
    }
    next
}

/// Nine anchors split into the three detection scales, smallest area first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub small: [Wh; ANCHORS_PER_SCALE],
    pub medium: [Wh; ANCHORS_PER_SCALE],
    pub large: [Wh; ANCHORS_PER_SCALE],
    /// Grid side of the head each group is attached to.
    #[serde(skip, default = "default_feature_maps")]
    pub feature_map_sizes: [u32; 3],
}

fn default_feature_maps() -> [u32; 3] {
    feature_map_sizes(640)
}

/// Head grid sizes for a square input of side `input_size`.
pub fn feature_map_sizes(input_size: u32) -> [u32; 3] {
    HEAD_STRIDES.map(|s| input_size / s)
}

impl AnchorSet {
    pub fn all(&self) -> [Wh; ANCHOR_COUNT] {
        let mut out = [Wh { w: 0.0, h: 0.0 }; ANCHOR_COUNT];
        out[..3].copy_from_slice(&self.small);
        out[3..6].copy_from_slice(&self.medium);
        out[6..].copy_from_slice(&self.large);
        out
    }

    /// Same set with every side rounded to the nearest integer.
    pub fn rounded(&self) -> AnchorSet {
        let r = |g: [Wh; 3]| {
            g.map(|a| Wh {
                w: a.w.round(),
                h: a.h.round(),
            })
        };
        AnchorSet {
            small: r(self.small),
            medium: r(self.medium),
            large: r(self.large),
            feature_map_sizes: self.feature_map_sizes,
        }
    }

    /// The 18 rounded integers, `w,h` pairs separated by `", "`, smallest first.
    pub fn yolo_line(&self) -> String {
        self.all()
            .iter()
            .map(|a| format!("{},{}", a.w.round() as i64, a.h.round() as i64))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Sorts nine centroids by area (stable) and deals them out three per scale.
pub fn group_anchors(centroids: &[Wh]) -> Result<AnchorSet> {
    group_anchors_for_input(centroids, 640)
}

pub fn group_anchors_for_input(centroids: &[Wh], input_size: u32) -> Result<AnchorSet> {
    if centroids.len() != ANCHOR_COUNT {
        return Err(Error::invalid(format!(
            "expected {ANCHOR_COUNT} centroids, got {}",
            centroids.len()
        )));
    }
    for c in centroids {
        c.validate()?;
    }
    let mut sorted = centroids.to_vec();
    sorted.sort_by(|a, b| a.area().total_cmp(&b.area()));
    let group = |i: usize| [sorted[i], sorted[i + 1], sorted[i + 2]];
    Ok(AnchorSet {
        small: group(0),
        medium: group(3),
        large: group(6),
        feature_map_sizes: feature_map_sizes(input_size),
    })
}

/// Annotation shapes in network-input pixels: each image is scaled so its
/// longest side equals `input_size`, aspect preserved.
pub fn dataset_shapes(d: &Dataset, input_size: f64) -> Vec<Wh> {
    let mut out = Vec::new();
    for img in &d.images {
        let (iw, ih) = (img.width as f64, img.height as f64);
        let scale = input_size / iw.max(ih);
        for a in &img.annotations {
            out.push(Wh {
                w: a.bbox.w * iw * scale,
                h: a.bbox.h * ih * scale,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    /// Mean over shapes of the best co-centered IoU against any anchor.
    pub mean_best_iou: f64,
    /// Fraction of shapes whose best IoU reaches `threshold`.
    pub best_possible_recall: f64,
    pub threshold: f64,
    pub n_shapes: usize,
}

/// Default IoU an anchor must reach to count a shape as recallable.
pub const DEFAULT_BPR_THRESHOLD: f64 = 0.25;

pub fn shape_fitness(anchors: &[Wh], shapes: &[Wh], threshold: f64) -> Result<Fitness> {
    if shapes.is_empty() {
        return Err(Error::invalid("no shapes to score"));
    }
    if anchors.is_empty() {
        return Err(Error::invalid("no anchors to score"));
    }
    for a in anchors.iter().chain(shapes) {
        a.validate()?;
    }
    let mut sum = 0.0;
    let mut hits = 0usize;
    for &s in shapes {
        let best = anchors
            .iter()
            .map(|&a| wh_iou_unchecked(s, a))
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        if best >= threshold {
            hits += 1;
        }
    }
    let n = shapes.len() as f64;
    Ok(Fitness {
        mean_best_iou: sum / n,
        best_possible_recall: hits as f64 / n,
        threshold,
        n_shapes: shapes.len(),
    })
}

pub fn anchor_fitness(a: &AnchorSet, d: &Dataset, input_size: f64, threshold: f64) -> Result<Fitness> {
    let shapes = dataset_shapes(d, input_size);
    if shapes.is_empty() {
        return Err(Error::invalid("dataset has no annotations"));
    }
    shape_fitness(&a.all(), &shapes, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRun {
    pub metric: DistanceMetric,
    pub centroids: Vec<Wh>,
    /// Present when exactly nine centroids were requested.
    pub anchors: Option<AnchorSet>,
    pub fitness: Fitness,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricComparison {
    pub input_size: f64,
    pub n_shapes: usize,
    pub euclidean: MetricRun,
    pub one_minus_iou: MetricRun,
}

pub fn run_metric(shapes: &[Wh], cfg: &KMeansConfig, threshold: f64) -> Result<MetricRun> {
    let res = kmeans_shapes(shapes, cfg)?;
    let anchors = if res.centroids.len() == ANCHOR_COUNT {
        Some(group_anchors_for_input(&res.centroids, cfg.input_size.round() as u32)?)
    } else {
        None
    };
    let fitness = shape_fitness(&res.centroids, shapes, threshold)?;
    Ok(MetricRun {
        metric: cfg.metric,
        centroids: res.centroids,
        anchors,
        fitness,
        inertia: res.inertia,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Clusters the dataset's shapes under both metrics with otherwise identical settings.
pub fn compare_metrics(d: &Dataset, cfg: &KMeansConfig, threshold: f64) -> Result<MetricComparison> {
    let shapes = dataset_shapes(d, cfg.input_size);
    if shapes.is_empty() {
        return Err(Error::invalid("dataset has no annotations"));
    }
    let with = |metric| KMeansConfig { metric, ..cfg.clone() };
    Ok(MetricComparison {
        input_size: cfg.input_size,
        n_shapes: shapes.len(),
        euclidean: run_metric(&shapes, &with(DistanceMetric::Euclidean), threshold)?,
        one_minus_iou: run_metric(&shapes, &with(DistanceMetric::OneMinusIou), threshold)?,
    })
}
