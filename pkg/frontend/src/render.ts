// Canvas/DOM rendering. Browser-only; the tests exercise the view models.

import type { ViewState } from "./state.js";
import { messageLog, oruMap, rateChart } from "./viewmodel.js";

const COLORS = ["#2563eb", "#059669", "#dc2626", "#d97706", "#7c3aed",
                "#0891b2", "#be185d", "#4d7c0f"];

export function renderRateChart(canvas: HTMLCanvasElement, state: ViewState,
                                userIndex: number): void {
  const model = rateChart(state, userIndex);
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  const pad = 28;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#9ca3af";
  ctx.strokeRect(pad, 8, width - pad - 8, height - pad - 8);

  const points = model.points;
  if (points.length === 0) return;
  const loopMin = points[0].loop;
  const loopMax = Math.max(points[points.length - 1].loop, loopMin + 1);
  const x = (loop: number) =>
    pad + ((loop - loopMin) / (loopMax - loopMin)) * (width - pad - 8);
  const y = (value: number) =>
    height - pad - 8 - (value / model.yMax) * (height - pad - 16);

  if (model.rMinMbps !== null) {
    ctx.strokeStyle = "#dc2626";
    ctx.setLineDash([6, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, y(model.rMinMbps));
    ctx.lineTo(width - 8, y(model.rMinMbps));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = "#dc2626";
    ctx.font = "11px sans-serif";
    ctx.fillText(`R_min ${model.rMinMbps} Mbps`, pad + 4, y(model.rMinMbps) - 4);
  }

  ctx.strokeStyle = COLORS[userIndex % COLORS.length];
  ctx.lineWidth = 1.8;
  ctx.beginPath();
  points.forEach((p, i) => {
    if (i === 0) ctx.moveTo(x(p.loop), y(p.value));
    else ctx.lineTo(x(p.loop), y(p.value));
  });
  ctx.stroke();
  ctx.lineWidth = 1;
  ctx.fillStyle = "#111827";
  ctx.font = "12px sans-serif";
  const last = points[points.length - 1];
  ctx.fillText(`${model.userLabel}: ${last.value.toFixed(1)} Mbps`, pad + 4, 20);
}

export function renderOruMap(canvas: HTMLCanvasElement, state: ViewState): void {
  const model = oruMap(state);
  const ctx = canvas.getContext("2d");
  if (!ctx || !model) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#9ca3af";
  ctx.strokeRect(4, 4, width - 8, height - 8);
  const sx = (v: number) => 8 + (v / model.areaSide) * (width - 16);
  const sy = (v: number) => height - 8 - (v / model.areaSide) * (height - 16);
  for (const oru of model.orus) {
    ctx.fillStyle = oru.active ? "#059669" : "#d1d5db";
    ctx.beginPath();
    ctx.arc(sx(oru.x), sy(oru.y), 7, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#374151";
    ctx.stroke();
  }
  ctx.fillStyle = "#1f2937";
  ctx.font = "11px sans-serif";
  for (const user of model.users) {
    ctx.fillText("✕", sx(user.x) - 4, sy(user.y) + 4);
    ctx.fillText(user.label, sx(user.x) + 6, sy(user.y) - 4);
  }
  ctx.fillStyle = "#111827";
  ctx.font = "12px sans-serif";
  ctx.fillText(`active: ${(100 * model.activeFraction).toFixed(0)}%`, 10, 18);
}

export function renderLog(container: HTMLElement, state: ViewState): void {
  const lines = messageLog(state);
  container.innerHTML = lines
    .map((l) => `<div class="log-line log-${l.kind}">` +
      `<span class="loop">#${l.loop}</span> ` +
      `<span class="sender">${l.sender}</span> ${l.text}</div>`)
    .join("");
  container.scrollTop = container.scrollHeight;
}

export function renderStatus(el: HTMLElement, state: ViewState): void {
  const snap = state.latest;
  const memory = state.memoryHits().length;
  el.innerHTML =
    `<span class="badge badge-${state.connection}">${state.connection}</span>` +
    (snap
      ? ` loop ${snap.loop} · ${snap.active_count} radios on · ` +
        `${snap.energy_saving ? "energy-saving" : "full-power"} mode` +
        (memory ? ` · ${memory} memory hit(s)` : "")
      : " waiting for snapshots");
}
