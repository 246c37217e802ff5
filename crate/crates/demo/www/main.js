import init, { shape_iou, focal_curve, sample_shapes, cluster_anchors } from "./pkg/tlinedet_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324", "#469990",
  "#800000", "#808000", "#000075", "#a9a9a9", "#bfef45", "#fabed4"];

function call(fn, ...args) {
  const v = JSON.parse(fn(...args));
  if (v.error) throw new Error(v.error);
  return v;
}

function drawIou() {
  const [w1, h1, w2, h2] = ["w1", "h1", "w2", "h2"].map((id) => {
    $(id + "v").textContent = $(id).value;
    return Number($(id).value);
  });
  const ctx = $("iou-canvas").getContext("2d");
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  const s = Math.min(width, height) / 210;
  const box = (w, h, color) => {
    ctx.fillStyle = color;
    ctx.fillRect(width / 2 - (w * s) / 2, height / 2 - (h * s) / 2, w * s, h * s);
  };
  box(w1, h1, "rgba(67, 99, 216, 0.45)");
  box(w2, h2, "rgba(230, 25, 75, 0.45)");
  try {
    const r = call(shape_iou, w1, h1, w2, h2);
    $("iou-out").textContent =
      `IoU ${r.iou.toFixed(4)}   1-IoU ${r.one_minus_iou.toFixed(4)}   ` +
      `centre distance ${r.centre_distance}   |(w,h) difference| ${r.shape_distance.toFixed(2)}`;
  } catch (e) {
    $("iou-out").textContent = e.message;
  }
}

function plot(ctx, xs, ys, color, dashed, ymax) {
  const { width, height } = ctx.canvas;
  ctx.strokeStyle = color;
  ctx.setLineDash(dashed ? [6, 4] : []);
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = 40 + x * (width - 50);
    const py = height - 25 - (Math.min(ys[i], ymax) / ymax) * (height - 35);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawFocal() {
  const alpha = Number($("alpha").value);
  const gamma = Number($("gamma").value);
  $("alphav").textContent = alpha.toFixed(2);
  $("gammav").textContent = gamma.toFixed(1);
  const positive = $("label").value === "1";
  const ctx = $("focal-canvas").getContext("2d");
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  const r = call(focal_curve, alpha, gamma, positive, 300);
  const ymax = 4;
  ctx.fillStyle = "#555";
  ctx.fillText("p", width - 15, height - 8);
  ctx.fillText(String(ymax), 5, 15);
  ctx.fillText("0", 25, height - 25);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(40, 10, width - 50, height - 35);
  plot(ctx, r.p, r.cross_entropy, "#888", true, ymax);
  plot(ctx, r.p, r.loss, "#e6194b", false, ymax);
}

function drawClusters(canvasId, outId, shapes, res, label) {
  const ctx = $(canvasId).getContext("2d");
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  // log-log axes keep small and large boxes readable
  const lx = (v) => Math.log(v);
  const all = shapes.concat(res.centroids);
  const [xmin, xmax] = [Math.min(...all.map((s) => lx(s[0]))), Math.max(...all.map((s) => lx(s[0])))];
  const [ymin, ymax] = [Math.min(...all.map((s) => lx(s[1]))), Math.max(...all.map((s) => lx(s[1])))];
  const px = (w) => 30 + ((lx(w) - xmin) / (xmax - xmin || 1)) * (width - 45);
  const py = (h) => height - 25 - ((lx(h) - ymin) / (ymax - ymin || 1)) * (height - 40);
  shapes.forEach((s, i) => {
    ctx.fillStyle = COLORS[res.assignment[i] % COLORS.length];
    ctx.fillRect(px(s[0]) - 1.5, py(s[1]) - 1.5, 3, 3);
  });
  ctx.strokeStyle = "#000";
  res.centroids.forEach((c) => {
    ctx.beginPath();
    ctx.arc(px(c[0]), py(c[1]), 6, 0, 2 * Math.PI);
    ctx.stroke();
  });
  ctx.fillStyle = "#333";
  ctx.fillText(`${label}: width (x) vs height (y), log scale`, 30, 14);
  $(outId).textContent =
    `mean best IoU ${res.mean_best_iou.toFixed(4)}  BPR ${res.best_possible_recall.toFixed(4)}\n` +
    res.centroids.map((c) => `[${c[0].toFixed(1)}, ${c[1].toFixed(1)}]`).join(" ");
}

function runClustering() {
  const n = Number($("n").value);
  const k = Number($("k").value);
  const seed = BigInt($("seed").value);
  const shapesJson = sample_shapes(n, seed);
  const shapes = JSON.parse(shapesJson);
  for (const [metric, canvas, out, label] of [
    ["euclidean", "c-euclidean", "o-euclidean", "Euclidean"],
    ["one-minus-iou", "c-iou", "o-iou", "1-IoU"],
  ]) {
    try {
      drawClusters(canvas, out, shapes, call(cluster_anchors, shapesJson, k, metric, seed), label);
    } catch (e) {
      $(out).textContent = e.message;
    }
  }
}

await init();
for (const id of ["w1", "h1", "w2", "h2"]) $(id).addEventListener("input", drawIou);
for (const id of ["alpha", "gamma", "label"]) $(id).addEventListener("input", drawFocal);
$("cluster").addEventListener("click", runClustering);
drawIou();
drawFocal();
runClustering();
