import init, { default_scenario, run_scenario, optimal_placement, penalty_curves } from "./pkg/web_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#2563eb", "#d97706", "#059669", "#dc2626", "#7c3aed", "#0891b2"];
const MARKS = {
  leader_elected: { color: "#2563eb", label: "leader" },
  proposal_created: { color: "#d97706", label: "proposal" },
  proposal_committed: { color: "#059669", label: "commit" },
  proposal_rejected: { color: "#dc2626", label: "reject" },
  node_crashed: { color: "#111827", label: "crash" },
  node_started: { color: "#6b7280", label: "start" },
  rollback: { color: "#7c3aed", label: "rollback" },
};

function showError(e) {
  $("error").textContent = e ? String(e.message ?? e) : "";
}

function setupCanvas(canvas) {
  const ratio = window.devicePixelRatio || 1;
  const w = canvas.clientWidth, h = canvas.height;
  canvas.width = w * ratio;
  canvas.style.height = `${h}px`;
  canvas.height = h * ratio;
  const ctx = canvas.getContext("2d");
  ctx.scale(ratio, ratio);
  ctx.clearRect(0, 0, w, h);
  ctx.font = "11px system-ui, sans-serif";
  return { ctx, w, h };
}

function axis(ctx, x0, y0, x1, y1) {
  ctx.strokeStyle = "#9aa4ae";
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x0, y1);
  ctx.moveTo(x0, y0);
  ctx.lineTo(x1, y0);
  ctx.stroke();
}

function drawTimeline(result) {
  const canvas = $("timeline");
  canvas.height = 320;
  const { ctx, w, h } = setupCanvas(canvas);
  const members = result.members;
  const duration = result.summary.duration_ms;
  const left = 120, right = w - 20, laneTop = 20, laneH = 28;
  const sx = (t) => left + (right - left) * (t / duration);

  members.forEach((m, i) => {
    const y = laneTop + i * laneH + laneH / 2;
    ctx.fillStyle = "#1d232b";
    ctx.fillText(m, 8, y + 4);
    ctx.strokeStyle = "#e3e7eb";
    ctx.beginPath();
    ctx.moveTo(left, y);
    ctx.lineTo(right, y);
    ctx.stroke();
  });
  const lane = Object.fromEntries(members.map((m, i) => [m, laneTop + i * laneH + laneH / 2]));
  for (const e of result.timeline) {
    const mark = MARKS[e.event];
    if (!mark) continue;
    ctx.fillStyle = mark.color;
    ctx.beginPath();
    ctx.arc(sx(e.time_ms), lane[e.node], e.event === "leader_elected" ? 5 : 4, 0, Math.PI * 2);
    ctx.fill();
  }

  // Cost trajectory below the lanes.
  const top = laneTop + members.length * laneH + 20, bottom = h - 30;
  const costs = result.cost_trace;
  const all = costs.map((c) => c.y).concat([result.summary.initial_cost, result.summary.oracle_cost ?? result.summary.final_cost]);
  const lo = Math.min(...all) * 0.9, hi = Math.max(...all) * 1.05;
  const sy = (v) => bottom - (bottom - top) * ((v - lo) / (hi - lo || 1));
  axis(ctx, left, bottom, right, top);
  ctx.fillStyle = "#56606b";
  ctx.fillText("cost", 8, (top + bottom) / 2);
  ctx.fillText(hi.toFixed(0), left - 34, top + 8);
  ctx.fillText(lo.toFixed(0), left - 34, bottom);
  for (let t = 0; t <= duration; t += 1000) {
    ctx.fillText(`${t / 1000}s`, sx(t) - 6, bottom + 14);
  }
  if (result.summary.oracle_cost != null) {
    ctx.setLineDash([4, 4]);
    ctx.strokeStyle = "#059669";
    ctx.beginPath();
    ctx.moveTo(left, sy(result.summary.oracle_cost));
    ctx.lineTo(right, sy(result.summary.oracle_cost));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  ctx.strokeStyle = "#1d232b";
  ctx.lineWidth = 2;
  ctx.beginPath();
  let cost = result.summary.initial_cost;
  ctx.moveTo(left, sy(cost));
  for (const c of costs) {
    ctx.lineTo(sx(c.x), sy(cost));
    cost = c.y;
    ctx.lineTo(sx(c.x), sy(cost));
  }
  ctx.lineTo(right, sy(cost));
  ctx.stroke();
  ctx.lineWidth = 1;

  let lx = left;
  for (const { color, label } of Object.values(MARKS)) {
    ctx.fillStyle = color;
    ctx.fillRect(lx, h - 12, 8, 8);
    ctx.fillStyle = "#1d232b";
    ctx.fillText(label, lx + 11, h - 4);
    lx += 80;
  }
}

function runCluster() {
  showError();
  try {
    const seed = BigInt(Math.max(0, parseInt($("seed").value, 10) || 0));
    const result = JSON.parse(run_scenario($("scenario").value, seed, $("crash").checked));
    drawTimeline(result);
    const s = result.summary;
    const voting = result.voting_ms.map(([, ms]) => ms.toFixed(1)).join(", ") || "none";
    $("run-stats").textContent =
      `cost ${s.initial_cost} → ${s.final_cost} (optimum ${s.oracle_cost ?? "n/a"}), ` +
      `${s.proposals_committed} committed, ${s.proposals_rejected} rejected, ${s.leader_elections} elections, final term ${s.final_term}\n` +
      `proposal-to-commit latency (ms): ${voting}\n` +
      `quiescent: ${s.quiescent}, safety violations: ${s.violations.length}, messages ${s.messages_sent} sent / ${s.messages_dropped} dropped`;
  } catch (e) {
    showError(e);
  }
}

function solve() {
  showError();
  try {
    const r = JSON.parse(optimal_placement($("scenario").value));
    $("oracle-cost").textContent = `cost ${r.initial_cost} → ${r.cost}, ${r.moves.length} move(s)`;
    const moved = new Set(r.moves.map((m) => m.service));
    const rows = Object.keys(r.placement)
      .map((svc) => `<tr class="${moved.has(svc) ? "moved" : ""}"><td>${svc}</td><td>${r.initial_placement[svc]}</td><td>${r.placement[svc]}</td></tr>`)
      .join("");
    $("oracle-table").innerHTML = `<table><tr><th>service</th><th>initial</th><th>optimal</th></tr>${rows}</table>`;
  } catch (e) {
    showError(e);
  }
}

function plot(ctx, box, points, color, lo, hi, xlo, xhi) {
  const sx = (x) => box.x + box.w * ((x - xlo) / (xhi - xlo));
  const sy = (y) => box.y + box.h - box.h * ((y - lo) / (hi - lo || 1));
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach((p, i) => (i ? ctx.lineTo(sx(p.x), sy(p.y)) : ctx.moveTo(sx(p.x), sy(p.y))));
  ctx.stroke();
  ctx.lineWidth = 1;
  return { sx, sy };
}

function drawCurves() {
  showError();
  const ell = parseFloat($("ell").value), gp = parseFloat($("gp").value), gv = parseFloat($("gv").value);
  $("ell-v").textContent = ell.toFixed(0);
  $("gp-v").textContent = gp.toFixed(1);
  $("gv-v").textContent = gv.toFixed(2);
  let c;
  try {
    c = JSON.parse(penalty_curves(ell, gp, gv, 200));
  } catch (e) {
    showError(e);
    return;
  }
  const canvas = $("curves");
  canvas.height = 300;
  const { ctx, w, h } = setupCanvas(canvas);
  const half = (w - 60) / 2;
  const left = { x: 40, y: 20, w: half - 30, h: h - 60 };
  const right = { x: 60 + half, y: 20, w: half - 30, h: h - 60 };

  const xs = c.penalty.map((p) => p.x);
  const ys = c.penalty.map((p) => p.y).concat(c.score.map((p) => p.y));
  const lo = Math.min(...ys), hi = Math.max(...ys);
  axis(ctx, left.x, left.y + left.h, left.x + left.w, left.y);
  const { sx, sy } = plot(ctx, left, c.penalty, COLORS[1], lo, hi, xs[0], xs[xs.length - 1]);
  plot(ctx, left, c.score, COLORS[0], lo, hi, xs[0], xs[xs.length - 1]);
  ctx.strokeStyle = "#cbd2d9";
  ctx.beginPath();
  ctx.moveTo(left.x, sy(0));
  ctx.lineTo(left.x + left.w, sy(0));
  ctx.moveTo(sx(0), left.y);
  ctx.lineTo(sx(0), left.y + left.h);
  ctx.stroke();
  ctx.fillStyle = "#1d232b";
  ctx.fillText("affinity gain ΔA →", left.x + left.w - 100, left.y + left.h + 16);
  ctx.fillStyle = COLORS[1];
  ctx.fillText("latency penalty L", left.x + 8, left.y + 10);
  ctx.fillStyle = COLORS[0];
  ctx.fillText("score Q = ΔA − L (propose when > 0)", left.x + 8, left.y + 24);

  axis(ctx, right.x, right.y + right.h, right.x + right.w, right.y);
  plot(ctx, right, c.weight, COLORS[2], 0.5, 1.0, 0, 1);
  ctx.fillStyle = "#1d232b";
  ctx.fillText("normalised impact Ĩ →", right.x + right.w - 120, right.y + right.h + 16);
  ctx.fillText("1.0", right.x - 22, right.y + 8);
  ctx.fillText("0.5", right.x - 22, right.y + right.h);
  ctx.fillStyle = COLORS[2];
  ctx.fillText("vote weight W = σ(Ĩ / γ vote)", right.x + 8, right.y + 14);
}

await init();
$("scenario").value = default_scenario();
$("run").addEventListener("click", runCluster);
$("oracle").addEventListener("click", solve);
for (const id of ["ell", "gp", "gv"]) $(id).addEventListener("input", drawCurves);
drawCurves();
runCluster();
solve();
