import init, { Dataset } from "./pkg/tcl_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const status = (msg) => { $("status").textContent = msg; };
const num = (id) => Number($(id).value);

let data = null;

function extent(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) {
    if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  }
  return lo === hi ? [lo - 1, hi + 1] : [lo, hi];
}

function clear(canvas, title) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(title, 6, 14);
  return ctx;
}

// Component `row` of a column-major n x N matrix.
function row(flat, n, r) {
  const out = new Float64Array(flat.length / n);
  for (let t = 0; t < out.length; t++) out[t] = flat[t * n + r];
  return out;
}

function drawSeries(canvas, series, segments, title) {
  const ctx = clear(canvas, title);
  const colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
  const h = (canvas.height - 20) / series.length;
  const len = series[0].length;
  ctx.strokeStyle = "#eee";
  for (let k = 1; k < segments; k++) {
    const x = (k * canvas.width) / segments;
    ctx.beginPath(); ctx.moveTo(x, 18); ctx.lineTo(x, canvas.height); ctx.stroke();
  }
  series.forEach((s, i) => {
    const [lo, hi] = extent(s);
    const top = 20 + i * h;
    ctx.strokeStyle = colors[i % colors.length];
    ctx.beginPath();
    const step = Math.max(1, Math.floor(len / canvas.width));
    for (let t = 0; t < len; t += step) {
      const x = (t / len) * canvas.width;
      const y = top + h - ((s[t] - lo) / (hi - lo)) * h;
      if (t === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
    }
    ctx.stroke();
  });
}

function drawScatter(canvas, xs, ys, title, color = "rgba(31,119,180,0.25)") {
  const ctx = clear(canvas, title);
  const [xlo, xhi] = extent(xs), [ylo, yhi] = extent(ys);
  const pad = 20, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  ctx.fillStyle = color;
  const step = Math.max(1, Math.floor(xs.length / 4000));
  for (let i = 0; i < xs.length; i += step) {
    const x = pad + ((xs[i] - xlo) / (xhi - xlo)) * w;
    const y = pad + h - ((ys[i] - ylo) / (yhi - ylo)) * h;
    ctx.fillRect(x, y, 2, 2);
  }
}

function drawCurve(canvas, values, title) {
  const ctx = clear(canvas, title);
  if (values.length < 2) return;
  const [lo, hi] = extent(values);
  const pad = 20, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  ctx.strokeStyle = "#d62728";
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = pad + (i / (values.length - 1)) * w;
    const y = pad + h - ((v - lo) / (hi - lo)) * h;
    if (i === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.fillText(`${hi.toFixed(3)}`, pad, pad - 4);
  ctx.fillText(`${lo.toFixed(3)}`, pad, canvas.height - 4);
}

function generate() {
  if (data) data.free();
  const started = performance.now();
  data = new Dataset(num("n"), num("depth"), num("segments"), num("seglen"), BigInt(num("seed")));
  const n = data.dim();
  const src = data.sources(), obs = data.observations();
  const shown = Math.min(n, 3);
  drawSeries($("sources"), [...Array(shown).keys()].map((i) => row(src, n, i)), data.segments(),
    `sources s1..s${shown} (segment boundaries in grey)`);
  drawScatter($("mixed"), row(obs, n, 0), row(obs, n, 1), "observations x1 vs x2");
  $("matches").innerHTML = "";
  drawCurve($("loss"), [], "training loss");
  status(`${data.samples()} samples, n=${n}, depth ${data.depth()}, ${data.segments()} segments ` +
    `(${(performance.now() - started).toFixed(0)} ms)`);
}

function invert() {
  if (!data) generate();
  const err = data.roundtrip_error();
  status(`max |s - f⁻¹(f(s))| = ${err.toExponential(3)}`);
}

function separate(method) {
  if (!data) generate();
  status(`running ${method}…`);
  // Let the status repaint before the blocking call.
  setTimeout(() => {
    const started = performance.now();
    try {
      const res = data.separate(method, num("epochs"));
      const n = data.dim();
      const truth = res.truth(), est = res.estimates();
      const holder = $("matches");
      holder.innerHTML = "";
      const corr = res.per_component();
      for (let i = 0; i < n; i++) {
        const c = document.createElement("canvas");
        c.width = 190; c.height = 190;
        holder.appendChild(c);
        drawScatter(c, row(truth, n, i), row(est, n, i), `q(s${i + 1}) vs estimate, |r|=${corr[i].toFixed(3)}`,
          "rgba(214,39,40,0.25)");
      }
      drawCurve($("loss"), Array.from(res.loss_curve()), "training loss per epoch");
      let msg = `${method}: mean |corr| ${res.mean_abs_corr().toFixed(4)}`;
      if (Number.isFinite(res.accuracy())) {
        msg += `, held-out accuracy ${res.accuracy().toFixed(3)} (chance level ${res.chance().toFixed(3)}, ` +
          `1/T = ${(1 / data.segments()).toFixed(3)})`;
      }
      status(`${msg} [${((performance.now() - started) / 1000).toFixed(1)} s]`);
      res.free();
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 20);
}

await init();
$("generate").onclick = () => { try { generate(); } catch (e) { status(`error: ${e.message ?? e}`); } };
$("invert").onclick = () => { try { invert(); } catch (e) { status(`error: ${e.message ?? e}`); } };
$("tcl").onclick = () => separate("tcl");
$("nsvica").onclick = () => separate("nsvica");
generate();
