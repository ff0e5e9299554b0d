import init, { scan_path, ssm_step_response, infonce_curve } from "./pkg/scst_demo.js";

const $ = (id) => document.getElementById(id);

function plot(canvas, series, yLabel) {
  const ctx = canvas.getContext("2d");
  const { width: W, height: H } = canvas;
  const pad = 36;
  ctx.clearRect(0, 0, W, H);
  const all = series.flatMap((s) => s.ys);
  const lo = Math.min(0, ...all), hi = Math.max(...all) || 1;
  const n = series[0].ys.length;
  const x = (i) => pad + (i / Math.max(n - 1, 1)) * (W - 2 * pad);
  const y = (v) => H - pad - ((v - lo) / (hi - lo)) * (H - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toPrecision(3), 2, pad + 4);
  ctx.fillText(lo.toPrecision(3), 2, H - pad);
  ctx.fillText(yLabel, pad, pad - 8);
  for (const s of series) {
    ctx.strokeStyle = s.colour;
    ctx.setLineDash(s.dash || []);
    ctx.beginPath();
    s.ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
  }
  ctx.setLineDash([]);
}

function drawScan() {
  const t = +$("t").value, h = +$("h").value, w = +$("w").value;
  let out;
  try {
    out = scan_path(t, h, w, $("pattern").value);
  } catch (e) {
    $("scan-out").textContent = e.message;
    return;
  }
  const violations = out[out.length - 1];
  const order = out.slice(0, -1);
  $("scan-out").textContent = `${order.length} voxels, ${violations} jumps`;
  const canvas = $("scan"), ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  // Frames side by side; each voxel is a cell.
  const cell = Math.min(24, Math.floor((canvas.width - 20 * t) / (t * w)), Math.floor((canvas.height - 20) / h));
  const pos = (idx) => {
    const f = Math.floor(idx / (h * w)), r = Math.floor(idx / w) % h, c = idx % w;
    return [10 + f * (w * cell + 20) + (c + 0.5) * cell, 10 + (r + 0.5) * cell];
  };
  ctx.strokeStyle = "#ddd";
  for (let f = 0; f < t; f++)
    for (let r = 0; r < h; r++)
      for (let c = 0; c < w; c++) ctx.strokeRect(10 + f * (w * cell + 20) + c * cell, 10 + r * cell, cell, cell);
  for (let i = 1; i < order.length; i++) {
    const [x0, y0] = pos(order[i - 1]), [x1, y1] = pos(order[i]);
    ctx.strokeStyle = `hsl(${(240 * i) / order.length}, 70%, 45%)`;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
  }
  ctx.lineWidth = 1;
  const [sx, sy] = pos(order[0]);
  ctx.fillStyle = "#000";
  ctx.fillRect(sx - 3, sy - 3, 6, 6);
}

function drawSsm() {
  const a = +$("a").value, delta = +$("delta").value, len = 100;
  const ys = Array.from(ssm_step_response(a, delta, len));
  const exact = ys.map((_, k) => (1 - Math.exp(a * delta * (k + 1))) / -a);
  const err = Math.max(...ys.map((v, k) => Math.abs(v - exact[k])));
  $("ssm-out").textContent = `a=${a} Δ=${delta}, max |scan − closed form| = ${err.toExponential(2)}`;
  plot($("ssm"), [{ ys, colour: "#1565c0" }, { ys: exact, colour: "#e65100", dash: [4, 4] }], "y_k");
}

function drawNce() {
  const n = +$("neg").value, tau = +$("tau").value;
  let ys;
  try {
    ys = Array.from(infonce_curve(n, tau, 201));
  } catch (e) {
    $("nce-out").textContent = e.message;
    return;
  }
  $("nce-out").textContent = `N=${n} τ=${tau}: loss ${ys[0].toFixed(2)} at s=−1, ${ys[200].toExponential(2)} at s=1, ln(N+1)=${Math.log(n + 1).toFixed(3)}`;
  plot($("nce"), [{ ys, colour: "#2e7d32" }], "loss (s from −1 to 1)");
}

await init();
for (const id of ["t", "h", "w", "pattern"]) $(id).addEventListener("input", drawScan);
for (const id of ["a", "delta"]) $(id).addEventListener("input", drawSsm);
for (const id of ["neg", "tau"]) $(id).addEventListener("input", drawNce);
drawScan();
drawSsm();
drawNce();
