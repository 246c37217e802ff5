//! Detection metrics: greedy matching, precision/recall curves, average
//! precision as the area under the precision envelope, and mAP over a sweep
//! of IoU thresholds.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBoxPix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBoxPix,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBoxPix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// `TP / (TP + FP)`, 0 with no detections.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, 0 with no ground truth.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Detection indices in descending confidence (stable for ties).
    pub order: Vec<usize>,
    /// `true` = TP, aligned with `order`.
    pub flags: Vec<bool>,
    pub counts: ConfusionCounts,
}

/// Indices sorted by descending confidence; equal confidences keep input order.
fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

fn check_threshold(iou_thr: f64) -> Result<()> {
    if iou_thr > 0.0 && iou_thr <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "IoU threshold must lie in (0, 1], got {iou_thr}"
        )))
    }
}

/// Greedy single-class matching. Each detection, best first, takes the
/// unmatched ground truth of its image with the highest IoU (lowest index on
/// ties) if that IoU reaches `iou_thr`; otherwise it is a false positive.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Result<MatchResult> {
    check_threshold(iou_thr)?;
    if let Some(first) = dets.first().map(|d| d.class_id).or(gts.first().map(|g| g.class_id)) {
        if dets.iter().any(|d| d.class_id != first) || gts.iter().any(|g| g.class_id != first) {
            return Err(Error::invalid("match_detections expects a single class"));
        }
    }
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let order = confidence_order(dets);
    let mut flags = Vec::with_capacity(dets.len());
    for &di in &order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for &gi in by_image.get(d.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if taken[gi] {
                continue;
            }
            let v = iou(&d.bbox, &gts[gi].bbox)?;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        let hit = match best {
            Some((gi, v)) if v >= iou_thr => {
                taken[gi] = true;
                true
            }
            _ => false,
        };
        flags.push(hit);
    }
    let tp = flags.iter().filter(|f| **f).count();
    Ok(MatchResult {
        order,
        flags,
        counts: ConfusionCounts {
            tp,
            fp: dets.len() - tp,
            fn_: gts.len() - tp,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    /// Cumulative recall/precision after each ranked detection.
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

pub fn pr_curve(flags: &[bool], n_gt: usize) -> Result<PrCurve> {
    let total_tp = flags.iter().filter(|f| **f).count();
    if total_tp > n_gt {
        return Err(Error::Contract(format!(
            "{total_tp} true positives but only {n_gt} ground truths"
        )));
    }
    let mut tp = 0usize;
    let points = flags
        .iter()
        .enumerate()
        .map(|(rank, &hit)| {
            tp += hit as usize;
            PrPoint {
                recall: ratio(tp, n_gt),
                precision: tp as f64 / (rank + 1) as f64,
            }
        })
        .collect();
    Ok(PrCurve { points, n_gt })
}

/// All-point interpolated AP: each precision is replaced by the highest
/// precision at equal or greater recall, then integrated over recall.
pub fn average_precision(curve: &PrCurve) -> f64 {
    if curve.n_gt == 0 || curve.points.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.points.iter().zip(&envelope) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * env;
            prev_recall = p.recall;
        }
    }
    ap
}

/// Arithmetic mean of per-class APs.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("no AP values to average"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// 0.50, 0.55, ..., 0.95
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// IoU for the headline mAP and the confusion counts.
    pub primary_iou: f64,
    /// Detections below this confidence are ignored for the confusion counts
    /// (AP always uses every detection).
    pub confidence: f64,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            primary_iou: 0.5,
            confidence: 0.25,
            thresholds: coco_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEval {
    pub class: String,
    pub n_gt: usize,
    pub n_det: usize,
    /// AP per sweep threshold; `None` when the class has no ground truth.
    pub ap: Vec<Option<f64>>,
    pub ap_primary: Option<f64>,
    /// At `primary_iou` and the operating confidence.
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub primary_iou: f64,
    pub confidence: f64,
    pub classes: Vec<ClassEval>,
    /// Mean AP over classes with ground truth, per sweep threshold.
    pub map_per_threshold: Vec<f64>,
    pub map_primary: f64,
    /// mAP at IoU 0.5 (`NaN`-free; equals the sweep entry when 0.5 is in it).
    #[serde(rename = "map@0.5")]
    pub map_50: f64,
    /// Mean of `map_per_threshold`.
    #[serde(rename = "map@0.5:0.95")]
    pub map_50_95: f64,
    pub totals: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    /// Number of classes entering the means.
    pub n_classes: usize,
}

impl EvalReport {
    /// AP table: one row per class, one column per sweep threshold, and a
    /// closing `mAP` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class");
        for t in &self.thresholds {
            s.push_str(&format!(",{t:.2}"));
        }
        s.push('\n');
        for c in &self.classes {
            s.push_str(&c.class);
            for v in &c.ap {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&v.to_string());
                }
            }
            s.push('\n');
        }
        s.push_str("mAP");
        for v in &self.map_per_threshold {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
        s
    }
}

fn check_classes(dets: &[Detection], gts: &[GroundTruth], n_classes: usize) -> Result<()> {
    for d in dets {
        if d.class_id >= n_classes {
            return Err(Error::Validation(format!(
                "detection class {} not in the {n_classes}-class list",
                d.class_id
            )));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Validation(format!("confidence {} outside [0, 1]", d.confidence)));
        }
        d.bbox.validate()?;
    }
    for g in gts {
        if g.class_id >= n_classes {
            return Err(Error::Validation(format!(
                "ground-truth class {} not in the {n_classes}-class list",
                g.class_id
            )));
        }
        g.bbox.validate()?;
    }
    Ok(())
}

fn partition<T: Clone>(items: &[T], n_classes: usize, class_of: impl Fn(&T) -> usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new(); n_classes];
    for it in items {
        out[class_of(it)].push(it.clone());
    }
    out
}

fn class_ap(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Result<f64> {
    let m = match_detections(dets, gts, thr)?;
    Ok(average_precision(&pr_curve(&m.flags, gts.len())?))
}

/// Full per-class, per-threshold evaluation.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_names: &[String],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_threshold(cfg.primary_iou)?;
    for t in &cfg.thresholds {
        check_threshold(*t)?;
    }
    if cfg.thresholds.is_empty() {
        return Err(Error::invalid("no IoU thresholds"));
    }
    let n_classes = class_names.len();
    check_classes(dets, gts, n_classes)?;
    let det_by_class = partition(dets, n_classes, |d| d.class_id);
    let gt_by_class = partition(gts, n_classes, |g| g.class_id);

    let classes = (0..n_classes)
        .into_par_iter()
        .map(|c| {
            let (cd, cg) = (&det_by_class[c], &gt_by_class[c]);
            let has_gt = !cg.is_empty();
            let ap = cfg
                .thresholds
                .iter()
                .map(|&t| {
                    if has_gt {
                        class_ap(cd, cg, t).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let ap_primary = if has_gt {
                Some(class_ap(cd, cg, cfg.primary_iou)?)
            } else {
                None
            };
            let confident: Vec<Detection> = cd.iter().filter(|d| d.confidence >= cfg.confidence).cloned().collect();
            let counts = match_detections(&confident, cg, cfg.primary_iou)?.counts;
            Ok(ClassEval {
                class: class_names[c].clone(),
                n_gt: cg.len(),
                n_det: cd.len(),
                ap,
                ap_primary,
                precision: counts.precision(),
                recall: counts.recall(),
                counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<&ClassEval> = classes.iter().filter(|c| c.n_gt > 0).collect();
    if scored.is_empty() {
        return Err(Error::Validation("no ground truth boxes to evaluate against".into()));
    }
    let map_per_threshold = (0..cfg.thresholds.len())
        .map(|t| mean_ap(&scored.iter().map(|c| c.ap[t].unwrap_or(0.0)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let map_primary = mean_ap(&scored.iter().map(|c| c.ap_primary.unwrap_or(0.0)).collect::<Vec<_>>())?;
    let map_50 = match cfg.thresholds.iter().position(|t| *t == 0.5) {
        Some(i) => map_per_threshold[i],
        None => {
            let aps = (0..n_classes)
                .filter(|&c| !gt_by_class[c].is_empty())
                .map(|c| class_ap(&det_by_class[c], &gt_by_class[c], 0.5))
                .collect::<Result<Vec<_>>>()?;
            mean_ap(&aps)?
        }
    };
    let map_50_95 = mean_ap(&map_per_threshold)?;
    let totals = classes
        .iter()
        .fold(ConfusionCounts::default(), |acc, c| ConfusionCounts {
            tp: acc.tp + c.counts.tp,
            fp: acc.fp + c.counts.fp,
            fn_: acc.fn_ + c.counts.fn_,
        });
    Ok(EvalReport {
        thresholds: cfg.thresholds.clone(),
        primary_iou: cfg.primary_iou,
        confidence: cfg.confidence,
        n_classes: scored.len(),
        classes,
        map_per_threshold,
        map_primary,
        map_50,
        map_50_95,
        precision: totals.precision(),
        recall: totals.recall(),
        totals,
    })
}

/// [`evaluate`] over the standard 0.50:0.95 sweep.
pub fn map_range(dets: &[Detection], gts: &[GroundTruth], class_names: &[String]) -> Result<EvalReport> {
    evaluate(dets, gts, class_names, &EvalConfig::default())
}

/// Per-class PR curves at one IoU threshold as CSV rows
/// `class,rank,confidence,recall,precision`.
pub fn pr_curves_csv(dets: &[Detection], gts: &[GroundTruth], class_names: &[String], iou_thr: f64) -> Result<String> {
    let n = class_names.len();
    check_classes(dets, gts, n)?;
    let det_by_class = partition(dets, n, |d| d.class_id);
    let gt_by_class = partition(gts, n, |g| g.class_id);
    let mut s = String::from("class,rank,confidence,recall,precision\n");
    for c in 0..n {
        let m = match_detections(&det_by_class[c], &gt_by_class[c], iou_thr)?;
        let curve = pr_curve(&m.flags, gt_by_class[c].len())?;
        for (rank, (p, &di)) in curve.points.iter().zip(&m.order).enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                class_names[c],
                rank + 1,
                det_by_class[c][di].confidence,
                p.recall,
                p.precision
            ));
        }
    }
    Ok(s)
}

/// Parses lines `image_id class_id confidence x1 y1 x2 y2`.
pub fn parse_detections(text: &str, file: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let class_id = f[1].parse().map_err(|_| err(format!("bad class id '{}'", f[1])))?;
        let mut v = [0.0; 5];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            *slot = s.parse().map_err(|_| err(format!("bad number '{s}'")))?;
        }
        let bbox = BBoxPix::new(v[1], v[2], v[3], v[4])
            .map_err(|e| Error::Validation(format!("{}:{}: {e}", file.display(), i + 1)))?;
        if !(0.0..=1.0).contains(&v[0]) {
            return Err(Error::Validation(format!(
                "{}:{}: confidence {} outside [0, 1]",
                file.display(),
                i + 1,
                v[0]
            )));
        }
        out.push(Detection {
            image_id: f[0].to_string(),
            class_id,
            bbox,
            confidence: v[0],
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&fs::read_to_string(path)?, path)
}

/// Ground-truth boxes in pixels; image ids are the image file stems.
pub fn ground_truth_from_dataset(d: &Dataset) -> Vec<GroundTruth> {
    d.images
        .iter()
        .flat_map(|img| {
            let id = img.id();
            img.annotations.iter().map(move |a| GroundTruth {
                image_id: id.clone(),
                class_id: a.class_id,
                bbox: a.bbox.to_pixels(img.width as f64, img.height as f64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpsReport {
    pub mean_ms: f64,
    /// `1000 / mean_ms`
    pub fps: f64,
    pub warmup_iters: usize,
    pub timed_iters: usize,
}

/// Times `workload` on the monotonic clock; warm-up runs are not timed.
pub fn fps_benchmark(mut workload: impl FnMut(), warmup_iters: usize, timed_iters: usize) -> Result<FpsReport> {
    if timed_iters == 0 {
        return Err(Error::invalid("need at least one timed iteration"));
    }
    for _ in 0..warmup_iters {
        workload();
    }
    let start = Instant::now();
    for _ in 0..timed_iters {
        workload();
    }
    let elapsed = start.elapsed().as_secs_f64() * 1000.0;
    if elapsed <= 0.0 {
        return Err(Error::Numeric("elapsed time below clock resolution".into()));
    }
    let mean_ms = elapsed / timed_iters as f64;
    Ok(FpsReport {
        mean_ms,
        fps: 1000.0 / mean_ms,
        warmup_iters,
        timed_iters,
    })
}
