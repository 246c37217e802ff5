mod support;

use std::path::PathBuf;

use proptest::prelude::*;
use tlinedet::anchors::{group_anchors, kmeans_shapes, DistanceMetric, KMeansConfig};
use tlinedet::dataset::{augment, split_dataset, AnnotatedImage, Annotation, AugmentOp, Dataset, Image, Span};
use tlinedet::eval::{average_precision, map_range, match_detections, pr_curve, Detection, GroundTruth};
use tlinedet::geometry::{iou, iou_distance, wh_iou, BBoxNorm, BBoxPix, Wh};
use tlinedet::nn::{cbam_forward, focal_loss, CbamParams, FocalParams, Tensor4};

fn pix_box() -> impl Strategy<Value = BBoxPix> {
    (0.0..100.0f64, 0.0..100.0f64, 0.1..50.0f64, 0.1..50.0f64)
        .prop_map(|(x, y, w, h)| BBoxPix::new(x, y, x + w, y + h).unwrap())
}

fn norm_box() -> impl Strategy<Value = BBoxNorm> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.01..=1.0f64, 0.01..=1.0f64)
        .prop_map(|(cx, cy, w, h)| BBoxNorm::new(cx, cy, w, h).unwrap())
}

fn annotations() -> impl Strategy<Value = Vec<Annotation>> {
    prop::collection::vec((0usize..3, norm_box()), 0..6).prop_map(|v| {
        v.into_iter()
            .map(|(class_id, bbox)| Annotation { class_id, bbox })
            .collect()
    })
}

fn image() -> impl Strategy<Value = Image> {
    (1u32..12, 1u32..12, prop_oneof![Just(1u8), Just(3u8)]).prop_flat_map(|(w, h, c)| {
        prop::collection::vec(any::<u8>(), (w * h * c as u32) as usize)
            .prop_map(move |data| Image::new(w, h, c, data).unwrap())
    })
}

fn shapes(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<Wh>> {
    prop::collection::vec((1u32..60, 1u32..60), len).prop_map(|v| {
        v.into_iter()
            .map(|(w, h)| Wh::new(w as f64, h as f64).unwrap())
            .collect()
    })
}

fn distinct(s: &[Wh]) -> usize {
    let mut v: Vec<(u64, u64)> = s.iter().map(|x| (x.w.to_bits(), x.h.to_bits())).collect();
    v.sort();
    v.dedup();
    v.len()
}

fn dataset(n: usize) -> Dataset {
    let images = (0..n)
        .map(|i| AnnotatedImage {
            image_path: PathBuf::from(format!("img_{i:04}.png")),
            width: 64,
            height: 48,
            annotations: vec![],
        })
        .collect();
    Dataset::new(vec!["line".into()], images).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_identity_and_containment(a in pix_box(), f in 0.05..1.0f64) {
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(iou_distance(&a, &a).unwrap(), 0.0);
        let (cx, cy) = a.center();
        let inner = BBoxPix::new(
            cx - a.width() * f / 2.0,
            cy - a.height() * f / 2.0,
            cx + a.width() * f / 2.0,
            cy + a.height() * f / 2.0,
        )
        .unwrap();
        let want = inner.area() / a.area();
        prop_assert!((iou(&a, &inner).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn wh_iou_scale_invariant(w in 0.1..100.0f64, h in 0.1..100.0f64, w2 in 0.1..100.0f64, h2 in 0.1..100.0f64, s in 0.01..100.0f64) {
        let a = Wh::new(w, h).unwrap();
        let b = Wh::new(w2, h2).unwrap();
        let v = wh_iou(a, b).unwrap();
        prop_assert!((v - wh_iou(a.scaled(s), b.scaled(s)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_seeded_partition(n in 3usize..200, seed in any::<u64>()) {
        let d = dataset(n);
        let (a, b, c) = split_dataset(&d, [8.0, 1.0, 1.0], seed).unwrap();
        let mut ids: Vec<String> = a.images.iter().chain(&b.images).chain(&c.images).map(|i| i.id()).collect();
        ids.sort();
        let mut want: Vec<String> = d.images.iter().map(|i| i.id()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        prop_assert_eq!(split_dataset(&d, [8.0, 1.0, 1.0], seed).unwrap(), (a, b, c));
    }

    #[test]
    fn flips_are_involutions(img in image(), anns in annotations(), seed in any::<u64>()) {
        for op in [AugmentOp::Hflip, AugmentOp::Vflip] {
            let (i1, a1) = augment(&img, &anns, &op, seed).unwrap();
            let (i2, a2) = augment(&i1, &a1, &op, seed).unwrap();
            prop_assert_eq!(&i2, &img);
            prop_assert_eq!(a2.len(), anns.len());
            for (x, y) in a2.iter().zip(&anns) {
                prop_assert_eq!(x.class_id, y.class_id);
                prop_assert!((x.bbox.cx - y.bbox.cx).abs() <= 1e-12);
                prop_assert!((x.bbox.cy - y.bbox.cy).abs() <= 1e-12);
                prop_assert_eq!((x.bbox.w, x.bbox.h), (y.bbox.w, y.bbox.h));
            }
        }
    }

    #[test]
    fn photometric_ops_keep_annotations(img in image(), anns in annotations(), seed in any::<u64>(), v in 0.0..3.0f64) {
        let ops = [
            AugmentOp::Invert,
            AugmentOp::Brightness { delta: Span { lo: -60.0 * v, hi: 60.0 * v } },
            AugmentOp::Contrast { factor: Span::fixed(v) },
            AugmentOp::GaussianBlur { sigma: Span::fixed(v) },
        ];
        for op in ops {
            let (out, a) = augment(&img, &anns, &op, seed).unwrap();
            prop_assert_eq!(&a, &anns);
            prop_assert_eq!((out.width, out.height, out.channels), (img.width, img.height, img.channels));
        }
    }

    #[test]
    fn affine_boxes_stay_valid(anns in annotations(), rot in -180.0..180.0f64, scale in 0.5..1.5f64, tx in -0.3..0.3f64, ty in -0.3..0.3f64, seed in any::<u64>()) {
        let img = Image::blank(16, 12, 1).unwrap();
        let op = AugmentOp::Affine {
            rotation: Span::fixed(rot),
            scale: Span::fixed(scale),
            translate_x: Span::fixed(tx),
            translate_y: Span::fixed(ty),
        };
        let (_, out) = augment(&img, &anns, &op, seed).unwrap();
        prop_assert!(out.len() <= anns.len());
        for a in out {
            prop_assert!(a.bbox.is_valid(), "{:?}", a.bbox);
        }
    }

    #[test]
    fn augmentation_is_deterministic(img in image(), anns in annotations(), seed in any::<u64>()) {
        let op: AugmentOp = "affine:rot=-15..15,scale=0.8..1.2,tx=-0.1..0.1,ty=-0.1..0.1".parse().unwrap();
        prop_assert_eq!(augment(&img, &anns, &op, seed).unwrap(), augment(&img, &anns, &op, seed).unwrap());
    }

    #[test]
    fn kmeans_deterministic_and_monotone(s in shapes(1..=30), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(distinct(&s) >= k);
        for metric in [DistanceMetric::OneMinusIou, DistanceMetric::Euclidean] {
            let cfg = KMeansConfig { k, metric, seed, ..Default::default() };
            let r = kmeans_shapes(&s, &cfg).unwrap();
            prop_assert_eq!(&r, &kmeans_shapes(&s, &cfg).unwrap());
            for w in r.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn one_minus_iou_clustering_scale_invariant(s in shapes(1..=20), k in 1usize..4, seed in any::<u64>(), pow in -3i32..4) {
        prop_assume!(distinct(&s) >= k);
        let cfg = KMeansConfig { k, seed, ..Default::default() };
        let base = kmeans_shapes(&s, &cfg).unwrap();
        let c = 2f64.powi(pow);
        let scaled: Vec<Wh> = s.iter().map(|x| x.scaled(c)).collect();
        let r = kmeans_shapes(&scaled, &cfg).unwrap();
        prop_assert_eq!(&r.assignment, &base.assignment);
        for (a, b) in r.centroids.iter().zip(&base.centroids) {
            prop_assert_eq!((a.w, a.h), (b.w * c, b.h * c));
        }
    }

    #[test]
    fn grouped_areas_non_decreasing(s in shapes(9)) {
        let a = group_anchors(&s).unwrap();
        let all = a.all();
        for w in all.windows(2) {
            prop_assert!(w[0].area() <= w[1].area());
        }
    }

    #[test]
    fn cbam_preserves_shape_and_gates(n in 1usize..3, c4 in 1usize..5, h in 1usize..7, w in 1usize..7, k in prop_oneof![Just(1usize), Just(3), Just(7)], seed in any::<u64>()) {
        let c = 4 * c4;
        let p = CbamParams::seeded(c, 4, k, seed).unwrap();
        let f = Tensor4::random_uniform([n, c, h, w], -2.0, 2.0, seed ^ 1);
        let (out, _) = cbam_forward(&f, &p).unwrap();
        prop_assert_eq!(out.dims(), f.dims());
        for (o, x) in out.data().iter().zip(f.data()) {
            prop_assert!(o.abs() <= x.abs());
        }
    }

    #[test]
    fn focal_decreasing_and_focusing(a in 0.01..1.0f64, g in 0.1..5.0f64, p1 in 0.01..0.99f64, p2 in 0.01..0.99f64) {
        prop_assume!((p1 - p2).abs() > 1e-6);
        let fp = FocalParams::new(a, g).unwrap();
        let (hard, easy) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
        let lh = focal_loss(hard, true, &fp).unwrap().loss;
        let le = focal_loss(easy, true, &fp).unwrap().loss;
        prop_assert!(le < lh);
        prop_assert!(le / support::cross_entropy(easy, true) < lh / support::cross_entropy(hard, true));
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn class_ap(dets: &[Detection], gts: &[GroundTruth], class: usize, thr: f64) -> f64 {
    let d: Vec<Detection> = dets.iter().filter(|x| x.class_id == class).cloned().collect();
    let g: Vec<GroundTruth> = gts.iter().filter(|x| x.class_id == class).cloned().collect();
    let m = match_detections(&d, &g, thr).unwrap();
    average_precision(&pr_curve(&m.flags, g.len()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ap_depends_only_on_rank(seed in any::<u64>()) {
        let inst = support::random_eval_instance(seed);
        let base = map_range(&inst.dets, &inst.gts, &names(inst.n_classes)).unwrap();
        let squashed: Vec<Detection> = inst
            .dets
            .iter()
            .map(|d| Detection { confidence: d.confidence * d.confidence, ..d.clone() })
            .collect();
        let r = map_range(&squashed, &inst.gts, &names(inst.n_classes)).unwrap();
        prop_assert_eq!(r.map_per_threshold, base.map_per_threshold);
    }

    #[test]
    fn false_positives_never_help(seed in any::<u64>()) {
        let inst = support::random_eval_instance(seed);
        for c in 0..inst.n_classes {
            let base = class_ap(&inst.dets, &inst.gts, c, 0.5);
            let mut more = inst.dets.clone();
            more.push(Detection {
                image_id: "elsewhere".into(),
                class_id: c,
                bbox: BBoxPix::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                confidence: 0.01,
            });
            prop_assert!(class_ap(&more, &inst.gts, c, 0.5) <= base);

            let d: Vec<Detection> = inst.dets.iter().filter(|x| x.class_id == c).cloned().collect();
            let g: Vec<GroundTruth> = inst.gts.iter().filter(|x| x.class_id == c).cloned().collect();
            let m = match_detections(&d, &g, 0.5).unwrap();
            if let Some(pos) = m.flags.iter().position(|f| !f) {
                let drop = m.order[pos];
                let fewer: Vec<Detection> = d.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, x)| x.clone()).collect();
                prop_assert!(class_ap(&fewer, &g, c, 0.5) >= class_ap(&d, &g, c, 0.5));
            }
        }
    }

    #[test]
    fn counts_cover_ground_truth(seed in any::<u64>(), t in 0.05..1.0f64) {
        let inst = support::random_eval_instance(seed);
        for c in 0..inst.n_classes {
            let d: Vec<Detection> = inst.dets.iter().filter(|x| x.class_id == c).cloned().collect();
            let g: Vec<GroundTruth> = inst.gts.iter().filter(|x| x.class_id == c).cloned().collect();
            let m = match_detections(&d, &g, t).unwrap();
            prop_assert_eq!(m.counts.tp + m.counts.fn_, g.len());
            prop_assert_eq!(m.counts.tp + m.counts.fp, d.len());
        }
    }

    #[test]
    fn sweep_map_not_above_map50(seed in any::<u64>()) {
        let inst = support::random_eval_instance(seed);
        let r = map_range(&inst.dets, &inst.gts, &names(inst.n_classes)).unwrap();
        prop_assert!(r.map_50_95 <= r.map_50 + 1e-12, "{} > {}", r.map_50_95, r.map_50);
    }
}
