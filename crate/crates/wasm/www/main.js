import init, { simulateTrajectories, unfairnessCurve, biasDemo } from "./pkg/repsample_wasm.js";

const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(ctx, w, h, pad, xmax, ymin, ymax) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  for (let i = 0; i <= 4; i++) {
    const v = ymin + (ymax - ymin) * i / 4;
    const y = h - pad - (h - 1.5 * pad) * i / 4;
    ctx.fillText(v.toPrecision(2), 2, y + 4);
  }
  ctx.fillText(String(xmax), w - pad, h - pad + 14);
  return {
    x: (v) => pad + (w - 1.5 * pad) * v / xmax,
    y: (v) => h - pad - (h - 1.5 * pad) * (v - ymin) / (ymax - ymin || 1),
  };
}

function line(ctx, pts, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
}

function runSimulation() {
  const lambda = num("sim-l");
  const m = num("sim-m");
  const config = {
    m,
    horizon: num("sim-t"),
    k: num("sim-k"),
    replicates: num("sim-r"),
    seed: num("sim-seed"),
    policies: [
      { kind: "opt" }, { kind: "pbrs" }, { kind: "dpbrs" }, { kind: "random" },
      { kind: "eps_greedy", epsilon: 0.1 }, { kind: "ucb_lcb" }, { kind: "ol_vec" },
    ],
    bias: lambda === 1 ? null : { lambda, gamma: Math.floor(m / 2) },
  };
  const curves = JSON.parse(simulateTrajectories(JSON.stringify(config)));
  const canvas = $("sim-plot");
  const ctx = canvas.getContext("2d");
  const ymax = Math.max(...curves.flatMap((c) => c.mean));
  const sc = axes(ctx, canvas.width, canvas.height, 40, config.horizon, 0, ymax);
  curves.forEach((c, i) => line(ctx, c.mean.map((v, s) => [sc.x(s + 1), sc.y(v)]), COLORS[i]));
  $("sim-legend").innerHTML = curves
    .map((c, i) => `<span><i style="background:${COLORS[i]}"></i>${c.policy} ${c.mean[c.mean.length - 1].toFixed(4)}</span>`)
    .join("");
}

function runTheory() {
  const n1 = num("th-n1");
  const n0s = Array.from({ length: 20 }, (_, i) => Math.round(n1 * 0.5 * (i + 1)));
  const pts = JSON.parse(unfairnessCurve(num("th-s0"), num("th-s1"), n1, Uint32Array.from(n0s), num("th-trials"), 1n));
  const canvas = $("th-plot");
  const ctx = canvas.getContext("2d");
  const vals = pts.flatMap((p) => [p.expected, p.simulated - 2 * p.std_error, p.simulated + 2 * p.std_error]);
  const sc = axes(ctx, canvas.width, canvas.height, 40, n0s[n0s.length - 1], Math.min(0, ...vals), Math.max(...vals));
  line(ctx, [[sc.x(0), sc.y(0)], [sc.x(n0s[n0s.length - 1]), sc.y(0)]], "#ccc");
  line(ctx, pts.map((p) => [sc.x(p.n0), sc.y(p.expected)]), COLORS[0]);
  ctx.strokeStyle = COLORS[3];
  for (const p of pts) {
    const x = sc.x(p.n0);
    ctx.beginPath();
    ctx.moveTo(x, sc.y(p.simulated - 2 * p.std_error));
    ctx.lineTo(x, sc.y(p.simulated + 2 * p.std_error));
    ctx.stroke();
    ctx.fillStyle = COLORS[3];
    ctx.fillRect(x - 2, sc.y(p.simulated) - 2, 4, 4);
  }
}

function runBias() {
  const d = JSON.parse(biasDemo(num("b-l"), num("b-q"), num("b-n"), 7n));
  $("b-out").textContent =
    `site majority share  ${d.base_share.toFixed(4)}\n` +
    `observed share       ${d.observed_share.toFixed(4)}\n` +
    `predicted share      ${d.predicted_share.toFixed(4)}`;
}

function guarded(f) {
  return () => {
    $("status").textContent = "";
    try {
      f();
    } catch (e) {
      $("status").innerHTML = `<span class="err">${e.message ?? e}</span>`;
    }
  };
}

await init();
$("sim-run").onclick = guarded(runSimulation);
$("th-run").onclick = guarded(runTheory);
$("b-run").onclick = guarded(runBias);
guarded(runSimulation)();
guarded(runBias)();
