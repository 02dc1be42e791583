import init, { integralSamples, truncationProfile, conditionLadder } from "./pkg/stepdiff_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ccc";
  ctx.strokeRect(40, 10, w - 50, h - 40);
}

function histogram(canvas, groups, colors) {
  const ctx = canvas.getContext("2d"), w = canvas.width, h = canvas.height;
  frame(ctx, w, h);
  const all = groups.flat();
  const lo = Math.min(...all), hi = Math.max(...all), bins = 60;
  const width = (hi - lo) / bins || 1;
  const counts = groups.map((g) => {
    const c = new Array(bins).fill(0);
    for (const x of g) c[Math.min(bins - 1, Math.floor((x - lo) / width))]++;
    return c.map((k) => k / g.length);
  });
  const top = Math.max(...counts.flat());
  const X = (i) => 40 + (i / bins) * (w - 50), Y = (p) => h - 30 - (p / top) * (h - 45);
  counts.forEach((c, g) => {
    ctx.strokeStyle = colors[g];
    ctx.beginPath();
    c.forEach((p, i) => { ctx.lineTo(X(i), Y(p)); ctx.lineTo(X(i + 1), Y(p)); });
    ctx.stroke();
  });
  ctx.fillStyle = "#444";
  ctx.fillText(lo.toFixed(2), 40, h - 12);
  ctx.fillText(hi.toFixed(2), w - 40, h - 12);
  const zero = 40 + ((0 - lo) / (hi - lo)) * (w - 50);
  ctx.fillText("0", zero, h - 12);
}

function lines(canvas, xs, series, colors, { logx = false, logy = false } = {}) {
  const ctx = canvas.getContext("2d"), w = canvas.width, h = canvas.height;
  frame(ctx, w, h);
  const fx = logx ? Math.log10 : (x) => x;
  const fy = logy ? (y) => Math.log10(Math.max(y, 1e-12)) : (y) => y;
  const xl = Math.min(...xs.map(fx)), xh = Math.max(...xs.map(fx));
  const ys = series.flat().map(fy);
  const yl = Math.min(...ys), yh = Math.max(...ys);
  const X = (x) => 40 + ((fx(x) - xl) / (xh - xl || 1)) * (w - 50);
  const Y = (y) => h - 30 - ((fy(y) - yl) / (yh - yl || 1)) * (h - 45);
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    s.forEach((y, i) => ctx.lineTo(X(xs[i]), Y(y)));
    ctx.stroke();
  });
  ctx.fillStyle = "#444";
  ctx.fillText(String(xs[0]), 40, h - 12);
  ctx.fillText(String(xs[xs.length - 1]), w - 40, h - 12);
  ctx.fillText(logy ? `1e${yh.toFixed(1)}` : yh.toFixed(2), 2, 18);
  ctx.fillText(logy ? `1e${yl.toFixed(1)}` : yl.toFixed(2), 2, h - 30);
}

const mean = (a) => a.reduce((s, x) => s + x, 0) / a.length;

function runHistogram() {
  const m = num("h-m");
  try {
    const v = Array.from(integralSamples(num("h-n"), m, BigInt(num("h-seed"))));
    const pre = v.slice(0, m), lim = v.slice(m);
    histogram($("h-plot"), [pre, lim], ["#d55", "#36c"]);
    $("h-out").textContent = `prelimit mean ${mean(pre).toFixed(4)}   limit mean ${mean(lim).toFixed(4)}`;
  } catch (e) {
    $("h-out").textContent = String(e);
  }
}

function runTruncation() {
  const k = num("t-k"), c = num("t-c");
  $("t-kv").textContent = k.toFixed(2);
  $("t-cv").textContent = c.toFixed(2);
  const v = truncationProfile(k, c, Math.max(k, 2 / c) * 1.2, 400);
  const r = [], h = [], g = [];
  for (let i = 0; i < v.length; i += 3) { r.push(v[i]); h.push(v[i + 1]); g.push(v[i + 2]); }
  lines($("t-plot"), r, [h, g, r], ["#36c", "#d55", "#999"]);
}

function runLadder() {
  try {
    const v = conditionLadder($("c-model").value, num("c-theta"), num("c-m"), 1n);
    const n = [], a = [], b = [], c = [], ref = [];
    const rows = [];
    for (let i = 0; i < v.length; i += 4) {
      n.push(v[i]); a.push(v[i + 1]); b.push(v[i + 2]); c.push(v[i + 3]); ref.push(10 / v[i]);
      rows.push(`n=${v[i]}  (i) ${v[i + 1].toExponential(2)}  (ii) ${v[i + 2].toExponential(2)}  (iii) ${v[i + 3].toExponential(2)}`);
    }
    lines($("c-plot"), n, [a, b, c, ref], ["#d55", "#36c", "#393", "#999"], { logx: true, logy: true });
    $("c-out").textContent = rows.join("\n");
  } catch (e) {
    $("c-out").textContent = String(e);
  }
}

await init();
$("h-run").onclick = runHistogram;
$("c-run").onclick = runLadder;
$("t-k").oninput = runTruncation;
$("t-c").oninput = runTruncation;
runTruncation();
runHistogram();
runLadder();
