import init, { friedmann_curves, flow_profiles_1d, decay_series_2d } from "./pkg/arwimcf_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

function num(id) {
  return parseFloat(document.getElementById(id).value);
}

// series: [{x: [], y: [], color, dashed}]
function plot(canvas, series, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 45;
  ctx.clearRect(0, 0, W, H);
  const ty = logY ? (v) => Math.log10(v) : (v) => v;
  let xs = [], ys = [];
  for (const s of series) {
    s.x.forEach((x, i) => {
      const y = s.y[i];
      if (!logY || y > 0) { xs.push(x); ys.push(ty(y)); }
    });
  }
  if (!xs.length) return;
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y1 - y0 < 1e-12) { y0 -= 1; y1 += 1; }
  const px = (x) => pad + (x - x0) / (x1 - x0) * (W - 2 * pad);
  const py = (y) => H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad);

  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(x0.toPrecision(3), pad, H - pad + 14);
  ctx.fillText(x1.toPrecision(3), W - pad - 30, H - pad + 14);
  const lab = (y) => (logY ? "1e" + y.toFixed(1) : y.toPrecision(4));
  ctx.fillText(lab(y1), 2, pad + 4);
  ctx.fillText(lab(y0), 2, H - pad);

  series.forEach((s, k) => {
    ctx.strokeStyle = s.color || COLORS[k % COLORS.length];
    ctx.setLineDash(s.dashed ? [5, 4] : []);
    ctx.beginPath();
    let started = false;
    s.x.forEach((x, i) => {
      const y = s.y[i];
      if (logY && !(y > 0)) { started = false; return; }
      const [X, Y] = [px(x), py(ty(y))];
      started ? ctx.lineTo(X, Y) : ctx.moveTo(X, Y);
      started = true;
    });
    ctx.stroke();
  });
  ctx.setLineDash([]);
}

function guarded(outId, f) {
  const out = document.getElementById(outId);
  try {
    f(out);
  } catch (e) {
    out.textContent = "error: " + e;
  }
}

function friedmann() {
  guarded("fr-out", (out) => {
    const r = JSON.parse(friedmann_curves(num("fr-rho"), num("fr-r"), num("fr-omega")));
    const limit = r.tau.map(() => r.phi_limit);
    plot(document.getElementById("fr-plot"), [
      { x: r.tau, y: r.phi },
      { x: r.tau, y: limit, dashed: true, color: "#999" },
    ]);
    out.textContent =
      `m = ${r.m.toPrecision(10)}   φ → ${r.phi_limit.toPrecision(6)}   ` +
      `last φ = ${r.phi[r.phi.length - 1].toPrecision(6)}   singularity at τ = ${r.singularity_tau.toPrecision(6)}`;
  });
}

function profiles() {
  guarded("pr-out", (out) => {
    const r = JSON.parse(flow_profiles_1d(num("pr-amp"), num("pr-omega"), num("pr-t")));
    plot(document.getElementById("pr-plot"), r.profiles.map((p) => ({ x: r.x, y: p.u_tilde })));
    out.textContent = r.profiles
      .map((p, k) => {
        const lo = Math.min(...p.u_tilde), hi = Math.max(...p.u_tilde);
        return `t = ${p.t.toFixed(2).padStart(6)}  oscillation ${(hi - lo).toExponential(3)}  (${COLORS[k]})`;
      })
      .join("\n");
  });
}

function decay() {
  guarded("dc-out", (out) => {
    const r = JSON.parse(decay_series_2d(num("dc-amp"), num("dc-omega"), Math.round(num("dc-n"))));
    plot(document.getElementById("dc-plot"), [
      { x: r.t, y: r.grad_u },
      { x: r.t, y: r.umbilicity },
    ], { logY: true });
    const line = (name, f) =>
      `${name.padEnd(12)} rate ${f.rate === null ? "n/a" : f.rate.toFixed(4)}   predicted ${f.predicted.toFixed(4)}`;
    out.textContent = [line("‖Du‖", r.grad_u_fit), line("umbilicity", r.umbilicity_fit)].join("\n");
  });
}

await init();
document.getElementById("fr-go").onclick = friedmann;
document.getElementById("pr-go").onclick = profiles;
document.getElementById("dc-go").onclick = decay;
friedmann();
