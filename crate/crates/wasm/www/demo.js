import init, { closedLoop, rmseByKind, parameterCounts } from "./pkg/tpc_wasm.js";

const KINDS = ["subspace", "multistep", "transient", "fixed_length", "state_space"];
const KIND_COLORS = ["#9467bd", "#8c564b", "#e377c2", "#17becf", "#1f77b4"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, lo, hi, n) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const pad = 36;
  const sx = (i) => pad + (i / Math.max(n - 1, 1)) * (w - pad - 8);
  const sy = (v) => h - 16 - ((v - lo) / (hi - lo || 1)) * (h - 28);
  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.beginPath();
  ctx.moveTo(pad, sy(lo));
  ctx.lineTo(pad, sy(hi));
  ctx.stroke();
  ctx.fillText(hi.toPrecision(3), 2, sy(hi) + 4);
  ctx.fillText(lo.toPrecision(3), 2, sy(lo));
  if (lo < 0 && hi > 0) {
    ctx.beginPath();
    ctx.moveTo(pad, sy(0));
    ctx.lineTo(w - 8, sy(0));
    ctx.stroke();
  }
  return { ctx, sx, sy };
}

function lines(canvas, series) {
  const all = series.flatMap((s) => s.values).filter(Number.isFinite);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const n = Math.max(...series.map((s) => s.values.length));
  const { ctx, sx, sy } = frame(canvas, lo, hi, n);
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = s.width ?? 1.2;
    ctx.beginPath();
    s.values.forEach((v, i) => (i ? ctx.lineTo(sx(i), sy(v)) : ctx.moveTo(sx(i), sy(v))));
    ctx.stroke();
  }
}

function fail(out, e) {
  out.className = "out err";
  out.textContent = String(e);
}

function runClosedLoop() {
  const out = $("cl-out");
  out.className = "out";
  const lambda = num("cl-lambda");
  const req = {
    kind: $("cl-kind").value,
    mode: $("cl-mode").value,
    d: num("cl-d"),
    seed: num("cl-seed"),
    lambda: lambda > 0 ? lambda : null,
  };
  let res;
  try {
    res = JSON.parse(closedLoop(JSON.stringify(req)));
  } catch (e) {
    return fail(out, e);
  }
  const ys = [
    { values: res.lqg.reference, color: "#888" },
    { values: res.lqg.y1, color: "#2ca02c" },
  ];
  const us = [{ values: res.lqg.u, color: "#2ca02c" }];
  if (res.tpc) {
    ys.push({ values: res.tpc.y1, color: "#1f77b4" });
    us.push({ values: res.tpc.u, color: "#1f77b4" });
  }
  if (res.relaxed) {
    ys.push({ values: res.relaxed.y1, color: "#d62728" });
    us.push({ values: res.relaxed.u, color: "#d62728" });
  }
  lines($("cl-y"), ys);
  lines($("cl-u"), us);
  const ratio = (t) => (t.cost / res.lqg.cost).toFixed(3) + (t.diverged ? " (diverged)" : "");
  const parts = [`memory m = ${res.m ?? "-"}`, `LQG cost ${res.lqg.cost.toFixed(1)}`];
  if (res.tpc) parts.push(`TPC / LQG = ${ratio(res.tpc)}`);
  if (res.relaxed) parts.push(`relaxed / LQG = ${ratio(res.relaxed)}`);
  if (res.error) parts.push(`identification failed: ${res.error}`);
  out.textContent = parts.join("   ");
}

function runRmse() {
  const out = $("rm-out");
  out.className = "out";
  let rows;
  try {
    rows = JSON.parse(rmseByKind(JSON.stringify({ mode: $("rm-mode").value, d: num("rm-d"), seed: num("rm-seed") })));
  } catch (e) {
    return fail(out, e);
  }
  const canvas = $("rm-bars");
  const vals = rows.flatMap((r) => [r.rmse_open_test, r.rmse_closed_test]).filter(Number.isFinite);
  const hi = Math.min(Math.max(...vals, 1e-6), 5 * median(vals));
  const { ctx, sy } = frame(canvas, 0, hi, 2);
  const slot = (canvas.width - 50) / rows.length;
  ctx.font = "12px sans-serif";
  rows.forEach((r, i) => {
    const x0 = 44 + i * slot;
    [[r.rmse_open_test, "#1f77b4"], [r.rmse_closed_test, "#ff7f0e"]].forEach(([v, c], j) => {
      if (!Number.isFinite(v)) return;
      ctx.fillStyle = c;
      const top = sy(Math.min(v, hi));
      ctx.fillRect(x0 + 10 + j * (slot / 2 - 12), top, slot / 2 - 16, sy(0) - top);
    });
    ctx.fillStyle = "#222";
    ctx.fillText(r.kind, x0 + 10, canvas.height - 2);
  });
  out.textContent = rows
    .map((r) =>
      r.error
        ? `${r.kind.padEnd(13)} not identified: ${r.error}`
        : `${r.kind.padEnd(13)} m=${r.m}  open ${fmt(r.rmse_open_test)}  closed ${fmt(r.rmse_closed_test)}`
    )
    .join("\n");
}

const fmt = (v) => (Number.isFinite(v) ? v.toFixed(4) : "n/a");

function median(v) {
  const s = [...v].sort((a, b) => a - b);
  return s.length ? s[Math.floor(s.length / 2)] : 1;
}

function runCounts() {
  const what = $("pc-what").value;
  const rows = JSON.parse(parameterCounts(num("pc-m"), num("pc-h"), num("pc-ny")));
  const series = KINDS.map((k, i) => ({
    values: rows.filter((r) => r.kind === k).map((r) => r[what]),
    color: KIND_COLORS[i],
    width: 2,
  }));
  lines($("pc-plot"), series);
  $("pc-legend").innerHTML = KINDS.map((k, i) => `<span style="color:${KIND_COLORS[i]}">${k}</span>`).join("");
}

await init();
$("cl-run").onclick = runClosedLoop;
$("rm-run").onclick = runRmse;
$("pc-run").onclick = runCounts;
runCounts();
runClosedLoop();
runRmse();
