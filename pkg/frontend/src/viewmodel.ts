// Display transforms: chart/map/log models consumed by the renderer and
// asserted by the tests. Pure functions of the view state.

import type { ViewState } from "./state.js";

export interface RateChartModel {
  userLabel: string;
  points: { loop: number; value: number }[];
  rMinMbps: number | null; // horizontal reference line, null when no floor
  yMax: number;
}

export function rateChart(state: ViewState, userIndex: number): RateChartModel {
  const series = state.rateSeries[userIndex] ?? [];
  const rMin =
    state.latest?.r_min_mbps?.[userIndex] ??
    state.world?.r_min_mbps?.[userIndex] ??
    0;
  const top = Math.max(
    rMin,
    ...series.map((p) => p.value),
    1,
  );
  return {
    userLabel: `user ${userIndex + 1}`,
    points: series.map((p) => ({ loop: p.loop, value: p.value })),
    rMinMbps: rMin > 0 ? rMin : null,
    yMax: top * 1.15,
  };
}

export interface OruMapModel {
  areaSide: number;
  orus: { x: number; y: number; active: boolean }[];
  users: { x: number; y: number; label: string }[];
  activeFraction: number;
}

export function oruMap(state: ViewState): OruMapModel | null {
  if (!state.world) return null;
  const z = state.latest?.z ?? state.world.oru_positions.map(() => 1);
  return {
    areaSide: state.world.area_side_m,
    orus: state.world.oru_positions.map(([x, y], i) => ({
      x,
      y,
      active: Boolean(z[i]),
    })),
    users: state.world.user_positions.map(([x, y], i) => ({
      x,
      y,
      label: `u${i + 1}`,
    })),
    activeFraction: state.latest?.active_fraction ?? 1,
  };
}

export interface LogLine {
  loop: number;
  sender: string;
  channel: string;
  kind: string;
  text: string;
}

export function messageLog(state: ViewState, limit = 40): LogLine[] {
  return state.messages.slice(-limit).map((m) => ({
    loop: m.loop,
    sender: m.sender,
    channel: m.channel,
    kind: m.kind,
    text: summarizePayload(m.kind, m.payload),
  }));
}

function summarizePayload(kind: string, payload: Record<string, unknown>): string {
  switch (kind) {
    case "objective": {
      const objective = payload["objective"];
      const constraints = payload["constraints"] as [number, number][] | undefined;
      const cons = constraints?.length
        ? ` | ${constraints.map(([u, r]) => `r${u} >= ${r} Mbps`).join(", ")}`
        : "";
      return `objective: ${objective}${cons}`;
    }
    case "boost_weight":
    case "raise_penalty":
      return `${kind} for user ${payload["user"]}: ${payload["reason"] ?? ""}`;
    case "memory-hit":
      return `retrieved prior coefficients (converged in ${payload["loops_to_converge"]} loops)`;
    case "weights":
      return "priority weights forwarded to the precoder";
    case "activations": {
      const z = payload["z"] as number[] | undefined;
      const active = z ? z.reduce((a, b) => a + b, 0) : "?";
      return `activation vector forwarded (${active} active)`;
    }
    case "monitor":
      return "monitoring targets registered";
    default:
      return JSON.stringify(payload);
  }
}

export function objectiveSummary(objective: {
  utility_kind: string;
  energy_saving: boolean;
  r_min_mbps: Record<string, number>;
}): string {
  const goal = objective.energy_saving
    ? "energy saving"
    : objective.utility_kind === "sum_log_rate"
      ? "maximize sum of log-rates"
      : "maximize sum of rates";
  const floors = Object.entries(objective.r_min_mbps)
    .map(([user, mbps]) => `r${user} >= ${mbps} Mbps`)
    .join(", ");
  return floors ? `${goal} | ${floors}` : goal;
}
