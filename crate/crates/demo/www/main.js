// Page logic: settings form, calls into the wasm module, canvas plots.
import init, {
  default_settings,
  run_ensemble,
  spectrum_compare,
  similarity_histogram,
} from "./pkg/repbank_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"];
const status = document.getElementById("status");
const summary = document.getElementById("summary");
const plotA = document.getElementById("plot-a");
const plotB = document.getElementById("plot-b");

function buildForm(defaults) {
  const box = document.getElementById("settings");
  for (const [key, value] of Object.entries(defaults)) {
    const label = document.createElement("label");
    label.textContent = key;
    const input = document.createElement("input");
    input.name = key;
    if (typeof value === "boolean") {
      input.type = "checkbox";
      input.checked = value;
    } else {
      input.type = "number";
      input.step = "any";
      input.value = value;
    }
    label.appendChild(input);
    box.appendChild(label);
  }
}

function settings() {
  const out = {};
  for (const input of document.querySelectorAll("#settings input")) {
    out[input.name] = input.type === "checkbox" ? input.checked : Number(input.value);
  }
  return JSON.stringify(out);
}

// Axes frame; returns a mapper from data to pixel coordinates.
function frame(canvas, title, xr, yr, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const pad = { l: 52, r: 12, t: 24, b: 28 };
  const w = canvas.width - pad.l - pad.r;
  const h = canvas.height - pad.t - pad.b;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#222";
  ctx.font = "13px system-ui";
  ctx.fillText(title, pad.l, 16);
  const ty = (v) => (logY ? Math.log10(Math.max(v, 1e-12)) : v);
  const [y0, y1] = [ty(yr[0]), ty(yr[1])];
  const px = (x) => pad.l + ((x - xr[0]) / (xr[1] - xr[0] || 1)) * w;
  const py = (y) => pad.t + h - ((ty(y) - y0) / (y1 - y0 || 1)) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad.l, pad.t, w, h);
  ctx.font = "11px system-ui";
  for (let i = 0; i <= 4; i++) {
    const v = y0 + ((y1 - y0) * i) / 4;
    const label = logY ? (10 ** v).toExponential(0) : v.toFixed(3);
    ctx.fillText(label, 4, pad.t + h - (h * i) / 4 + 4);
  }
  ctx.fillText(String(xr[0]), pad.l, canvas.height - 8);
  ctx.fillText(String(xr[1]), pad.l + w - 16, canvas.height - 8);
  return { ctx, px, py };
}

function legend(ctx, names, x, y) {
  names.forEach((name, i) => {
    ctx.fillStyle = COLORS[i % COLORS.length];
    ctx.fillRect(x, y + i * 15, 10, 10);
    ctx.fillStyle = "#222";
    ctx.fillText(name, x + 14, y + i * 15 + 9);
  });
}

function lines(canvas, title, series, opts = {}) {
  const all = series.flatMap((s) => s.values);
  const n = Math.max(...series.map((s) => s.values.length));
  const yr = opts.logY ? [Math.min(...all), Math.max(...all)] : [0, Math.max(...all)];
  const { ctx, px, py } = frame(canvas, title, [0, Math.max(n - 1, 1)], yr, opts);
  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    s.values.forEach((v, x) => (x ? ctx.lineTo(px(x), py(v)) : ctx.moveTo(px(x), py(v))));
    ctx.stroke();
  });
  if (opts.marker !== undefined) {
    ctx.strokeStyle = "#aaa";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(px(opts.marker), py(yr[0]));
    ctx.lineTo(px(opts.marker), py(yr[1]));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  legend(ctx, series.map((s) => s.name), canvas.width - 170, 34);
}

function bars(canvas, title, items) {
  const { ctx, px, py } = frame(canvas, title, [0, items.length], [0, 1]);
  items.forEach((it, i) => {
    const x0 = px(i + 0.15);
    const x1 = px(i + 0.85);
    ctx.fillStyle = COLORS[i % COLORS.length];
    ctx.fillRect(x0, py(it.accuracy), x1 - x0, py(0) - py(it.accuracy));
    ctx.fillStyle = "#222";
    ctx.save();
    ctx.translate(x0 + 4, py(0) - 6);
    ctx.rotate(-Math.PI / 2);
    ctx.fillText(`${it.method} ${(100 * it.accuracy).toFixed(1)}%`, 0, 0);
    ctx.restore();
  });
}

function histograms(canvas, title, result) {
  const max = Math.max(...result.histograms.flatMap((h) => h.counts));
  const { ctx, px, py } = frame(canvas, title, [result.lo, result.hi], [0, max]);
  result.histograms.forEach((h, i) => {
    const width = h.edges.length > 1 ? h.edges[1] - h.edges[0] : 1;
    ctx.fillStyle = COLORS[i % COLORS.length] + "88";
    h.counts.forEach((c, b) => {
      const x0 = px(h.edges[b]);
      const x1 = px(h.edges[b] + width);
      ctx.fillRect(x0, py(c), x1 - x0, py(0) - py(c));
    });
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    ctx.moveTo(px(h.median), py(0));
    ctx.lineTo(px(h.median), py(max));
    ctx.stroke();
    ctx.setLineDash([]);
  });
  legend(ctx, result.histograms.map((h) => `${h.method} (median ${h.median.toFixed(3)})`), px(result.lo) + 8, 34);
}

// Runs a wasm call after the status text has painted.
function busy(label, work) {
  status.textContent = `${label}…`;
  setTimeout(() => {
    const t0 = performance.now();
    try {
      work();
      status.textContent = `${label} done in ${((performance.now() - t0) / 1000).toFixed(1)}s`;
    } catch (e) {
      status.textContent = `error: ${e}`;
    }
  }, 20);
}

function onEnsemble() {
  busy("training", () => {
    const r = JSON.parse(run_ensemble(settings()));
    lines(plotA, "Mean cosine loss per epoch", [
      { name: "train", values: r.train_loss },
      { name: "test inference", values: r.infer_loss },
    ], { marker: r.warmup });
    bars(plotB, "k-NN test accuracy", r.accuracies);
    summary.textContent =
      `reconstruction cosine: train ${r.train_cosine.toFixed(4)}, test ${r.test_cosine.toFixed(4)}\n` +
      `bank updates start at epoch ${r.warmup} (dashed line)\n` +
      r.accuracies.map((a) => `${a.method.padEnd(14)} ${(100 * a.accuracy).toFixed(1)}%`).join("\n");
  });
}

function onSpectrum() {
  busy("training two banks", () => {
    const r = JSON.parse(spectrum_compare(settings()));
    lines(plotA, "Sorted singular values (log scale)", r.map((s) => ({ name: s.label, values: s.singular_values })), {
      logY: true,
    });
    const ctx = plotB.getContext("2d");
    ctx.clearRect(0, 0, plotB.width, plotB.height);
    summary.textContent = "single-model corpus\n" +
      r.map((s) => `${s.label.padEnd(18)} spectral entropy ${s.entropy.toFixed(4)}`).join("\n");
  });
}

function onSimilarity() {
  busy("training", () => {
    const r = JSON.parse(similarity_histogram(settings()));
    histograms(plotA, "Max train similarity / mean similarity, per test row", r);
    const ctx = plotB.getContext("2d");
    ctx.clearRect(0, 0, plotB.width, plotB.height);
    summary.textContent = r.histograms.map((h) => `${h.method.padEnd(10)} median ${h.median.toFixed(4)}`).join("\n");
  });
}

await init();
buildForm(JSON.parse(default_settings()));
document.getElementById("run-ensemble").onclick = onEnsemble;
document.getElementById("run-spectrum").onclick = onSpectrum;
document.getElementById("run-similarity").onclick = onSimilarity;
status.textContent = "ready";
