use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use tlinedet::anchors::{compare_metrics, dataset_shapes, run_metric, KMeansConfig};
use tlinedet::dataset::{
    augment_dataset, augment_dataset_to_dir, dataset_stats, load_dataset, parse_ops, read_class_names, split_dataset,
    write_dataset_annotations, Dataset, CLASSES_FILE,
};
use tlinedet::eval::{
    coco_thresholds, evaluate, fps_benchmark, ground_truth_from_dataset, pr_curves_csv, read_detections, EvalConfig,
};
use tlinedet::nn::{cbam_forward, cbam_grad_check_with, focal_loss, focal_loss_grad, CbamParams, FocalParams, Tensor4};

use crate::args::*;

pub enum Status {
    Ok,
    /// The command ran but its result missed the requested tolerance.
    ToleranceExceeded,
}

pub fn run(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Stats(a) => stats(a),
        Command::Split(a) => split(a),
        Command::Augment(a) => augment(a),
        Command::Anchors(a) => anchors(a),
        Command::CompareMetrics(a) => compare(a),
        Command::Eval(a) => eval(a),
        Command::Focal(a) => focal(a),
        Command::CbamCheck(a) => cbam_check(a),
        Command::Bench(a) => bench(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn class_names(root: &Path, classes: Option<&str>) -> Result<Vec<String>> {
    match classes {
        Some(c) if Path::new(c).is_file() => Ok(read_class_names(Path::new(c))?),
        Some(c) => Ok(c
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()),
        None => {
            let p = root.join(CLASSES_FILE);
            read_class_names(&p).with_context(|| format!("reading class list {}", p.display()))
        }
    }
}

fn load(d: &DataArgs) -> Result<Dataset> {
    let names = class_names(&d.data, d.classes.as_deref())?;
    load_dataset(&d.data, &names).with_context(|| format!("loading dataset {}", d.data.display()))
}

fn stats(a: StatsArgs) -> Result<Status> {
    let d = load(&a.data)?;
    let report = dataset_stats(&d, a.bins)?;
    if let Some(p) = &a.histogram {
        fs::write(p, report.histogram_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    let text = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => report.to_csv(),
    };
    emit(a.common.out.as_deref(), &text)?;
    Ok(Status::Ok)
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --ratios '{s}'"))?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("--ratios needs three values, got {}", v.len()),
    }
}

fn split(a: SplitArgs) -> Result<Status> {
    let d = load(&a.data)?;
    let ratios = parse_ratios(&a.ratios)?;
    let (train, val, test) = split_dataset(&d, ratios, a.seed)?;
    if let Some(dir) = &a.write_dir {
        for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
            write_dataset_annotations(part, &dir.join(name))?;
        }
    }
    let ids = |p: &Dataset| p.images.iter().map(|i| i.id()).collect::<Vec<_>>();
    let report = json!({
        "seed": a.seed,
        "ratios": ratios,
        "sizes": [train.images.len(), val.images.len(), test.images.len()],
        "train": ids(&train),
        "val": ids(&val),
        "test": ids(&test),
    });
    emit(a.common.out.as_deref(), &to_json(&report)?)?;
    Ok(Status::Ok)
}

fn augment(a: AugmentArgs) -> Result<Status> {
    let d = load(&a.data)?;
    let ops = parse_ops(&a.ops)?;
    let out = if a.annotations_only {
        let out = augment_dataset(&d, &ops, a.seed)?;
        write_dataset_annotations(&out, &a.write_dir)?;
        out
    } else {
        augment_dataset_to_dir(&d, &ops, a.seed, &a.write_dir)?
    };
    let report = json!({
        "seed": a.seed,
        "ops": ops,
        "input_images": d.images.len(),
        "output_images": out.images.len(),
        "output_annotations": out.annotation_count(),
        "write_dir": a.write_dir,
    });
    emit(a.common.out.as_deref(), &to_json(&report)?)?;
    Ok(Status::Ok)
}

fn kmeans_config(c: &ClusterArgs, metric: MetricArg) -> KMeansConfig {
    KMeansConfig {
        k: c.k,
        metric: metric.into(),
        max_iters: c.max_iters,
        seed: c.seed,
        input_size: c.input_size as f64,
    }
}

fn anchors(a: AnchorsArgs) -> Result<Status> {
    let d = load(&a.data)?;
    let cfg = kmeans_config(&a.cluster, a.metric);
    let shapes = dataset_shapes(&d, cfg.input_size);
    if shapes.is_empty() {
        bail!("dataset has no annotations to cluster");
    }
    let run = run_metric(&shapes, &cfg, a.cluster.bpr_threshold)?;
    eprintln!(
        "{}: {} shapes, mean best IoU {:.4}, BPR {:.4}, {} iterations",
        run.metric.name(),
        shapes.len(),
        run.fitness.mean_best_iou,
        run.fitness.best_possible_recall,
        run.iterations
    );
    let text = match (a.format, &run.anchors) {
        (AnchorFormat::Json, Some(set)) => to_json(set)?,
        (AnchorFormat::Json, None) => to_json(&json!({ "centroids": run.centroids }))?,
        (AnchorFormat::Yolo, Some(set)) => set.yolo_line(),
        (AnchorFormat::Yolo, None) => bail!("--format yolo needs --k 9"),
    };
    emit(a.common.out.as_deref(), &text)?;
    Ok(Status::Ok)
}

fn compare(a: CompareArgs) -> Result<Status> {
    let d = load(&a.data)?;
    let cfg = kmeans_config(&a.cluster, MetricArg::OneMinusIou);
    let cmp = compare_metrics(&d, &cfg, a.cluster.bpr_threshold)?;
    for run in [&cmp.euclidean, &cmp.one_minus_iou] {
        eprintln!(
            "{:>14}: mean best IoU {:.4}, BPR {:.4}",
            run.metric.name(),
            run.fitness.mean_best_iou,
            run.fitness.best_possible_recall
        );
    }
    emit(a.common.out.as_deref(), &to_json(&cmp)?)?;
    Ok(Status::Ok)
}

fn eval(a: EvalArgs) -> Result<Status> {
    let names = class_names(&a.gt, a.classes.as_deref())?;
    let d = load_dataset(&a.gt, &names).with_context(|| format!("loading ground truth {}", a.gt.display()))?;
    let gts = ground_truth_from_dataset(&d);
    let dets = read_detections(&a.dets).with_context(|| format!("reading detections {}", a.dets.display()))?;
    let cfg = EvalConfig {
        primary_iou: a.iou,
        confidence: a.conf,
        thresholds: coco_thresholds(),
    };
    let report = evaluate(&dets, &gts, &names, &cfg)?;
    if let Some(p) = &a.pr_curve {
        fs::write(p, pr_curves_csv(&dets, &gts, &names, a.iou)?).with_context(|| format!("writing {}", p.display()))?;
    }
    let text = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => report.to_csv(),
    };
    emit(a.common.out.as_deref(), &text)?;
    Ok(Status::Ok)
}

fn focal(a: FocalArgs) -> Result<Status> {
    let fp = FocalParams::new(a.alpha, a.gamma)?;
    let ps: Vec<f64> = match a.grid {
        Some(0) => bail!("--grid needs at least one point"),
        Some(n) => (1..=n).map(|i| i as f64 / (n + 1) as f64).collect(),
        None if a.p.is_empty() => bail!("give --p or --grid"),
        None => a.p.clone(),
    };
    let positive = a.label == 1;
    let mut rows = Vec::with_capacity(ps.len());
    for &p in &ps {
        let e = focal_loss(p, positive, &fp)?;
        let g = focal_loss_grad(p, positive, &fp)?;
        rows.push(json!({ "p": p, "loss": e.loss, "grad": g, "clamped": e.clamped }));
    }
    let text = match a.format {
        Format::Json => to_json(&json!({
            "alpha": fp.alpha,
            "gamma": fp.gamma,
            "label": a.label,
            "points": rows,
        }))?,
        Format::Csv => {
            let mut s = String::from("p,loss,grad\n");
            for r in &rows {
                s.push_str(&format!("{},{},{}\n", r["p"], r["loss"], r["grad"]));
            }
            s
        }
    };
    emit(a.common.out.as_deref(), &text)?;
    Ok(Status::Ok)
}

fn block_setup(b: &BlockArgs, default_dims: [usize; 4]) -> Result<([usize; 4], CbamParams)> {
    let dims = match &b.shape {
        None => default_dims,
        Some(v) => match v.as_slice() {
            [n, c, h, w] => [*n, *c, *h, *w],
            _ => bail!("--shape needs four values n,c,h,w, got {}", v.len()),
        },
    };
    if dims.contains(&0) {
        bail!("--shape dimensions must be positive");
    }
    let params = match &b.load_params {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            CbamParams::from_blob(&bytes).with_context(|| format!("decoding {}", p.display()))?
        }
        None => CbamParams::seeded(dims[1], b.reduction, b.kernel_size, b.seed.wrapping_add(1))?,
    };
    if params.channels != dims[1] {
        bail!(
            "parameters are for {} channels, --shape has {}",
            params.channels,
            dims[1]
        );
    }
    if let Some(p) = &b.save_params {
        save_blob(p, &params)?;
    }
    Ok((dims, params))
}

fn save_blob(path: &PathBuf, params: &CbamParams) -> Result<()> {
    fs::write(path, params.to_blob()).with_context(|| format!("writing {}", path.display()))
}

fn cbam_check(a: CbamCheckArgs) -> Result<Status> {
    if !(a.tol.is_finite() && a.tol > 0.0) {
        bail!("--tol must be positive");
    }
    let (dims, params) = block_setup(&a.block, [2, 16, 5, 5])?;
    let report = cbam_grad_check_with(&params, dims, a.block.seed, a.step)?;
    let pass = report.max_rel_err <= a.tol;
    let text = to_json(&json!({
        "dims": dims,
        "reduction": params.reduction,
        "kernel_size": params.kernel_size,
        "seed": a.block.seed,
        "tol": a.tol,
        "pass": pass,
        "report": report,
    }))?;
    emit(a.common.out.as_deref(), &text)?;
    if pass {
        Ok(Status::Ok)
    } else {
        eprintln!("max relative error {:e} exceeds {:e}", report.max_rel_err, a.tol);
        Ok(Status::ToleranceExceeded)
    }
}

fn bench(a: BenchArgs) -> Result<Status> {
    let (dims, params) = block_setup(&a.block, [1, 64, 40, 40])?;
    let input = Tensor4::random_uniform(dims, -1.0, 1.0, a.block.seed);
    cbam_forward(&input, &params)?;
    let report = fps_benchmark(
        || {
            std::hint::black_box(cbam_forward(&input, &params).ok());
        },
        a.warmup,
        a.iters,
    )?;
    let text = to_json(&json!({
        "dims": dims,
        "reduction": params.reduction,
        "kernel_size": params.kernel_size,
        "benchmark": report,
    }))?;
    emit(a.common.out.as_deref(), &text)?;
    Ok(Status::Ok)
}
