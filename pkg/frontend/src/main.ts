// App entry: connect to the service, stream snapshots into the view state,
// submit intents (two one-click presets mirror the published examples).

import { ConsoleSession } from "./client.js";
import { ViewState } from "./state.js";
import { objectiveSummary } from "./viewmodel.js";
import { renderLog, renderOruMap, renderRateChart, renderStatus } from "./render.js";

const ES_PRESET = "Enter the energy-saving mode. Guarantee 50 Mbps for user 3.";
const UM_PRESET = "Maximize the sum of log-rates. No minimum rate requirements.";

const endpoint = new URLSearchParams(location.search).get("endpoint")
  ?? "http://127.0.0.1:8080";

const state = new ViewState();
const statusEl = document.getElementById("status")!;
const chartsEl = document.getElementById("charts")!;
const mapCanvas = document.getElementById("map") as HTMLCanvasElement;
const logEl = document.getElementById("log")!;
const echoEl = document.getElementById("intent-echo")!;
const input = document.getElementById("intent-input") as HTMLInputElement;

const charts: HTMLCanvasElement[] = [];

function ensureCharts(numUsers: number): void {
  if (charts.length === numUsers) return;
  chartsEl.innerHTML = "";
  charts.length = 0;
  for (let k = 0; k < numUsers; k += 1) {
    const canvas = document.createElement("canvas");
    canvas.width = 360;
    canvas.height = 170;
    chartsEl.appendChild(canvas);
    charts.push(canvas);
  }
}

function redraw(): void {
  renderStatus(statusEl, state);
  if (state.world) {
    ensureCharts(state.world.num_users);
    charts.forEach((canvas, k) => renderRateChart(canvas, state, k));
    renderOruMap(mapCanvas, state);
  }
  renderLog(logEl, state);
}

const session = new ConsoleSession(endpoint, {
  onEvent: (event) => {
    if (event.name === "snapshot") state.applySnapshot(event.data);
    else if (event.name === "message") state.applyMessage(event.data);
    redraw();
  },
  onStatus: (status) => {
    state.connection = status;
    redraw();
    if (status === "connecting" && state.latest === null) {
      statusEl.innerHTML =
        '<span class="badge badge-stale">service unreachable, retrying…</span>';
    }
  },
});

async function submit(text: string): Promise<void> {
  state.pendingIntent = text;
  try {
    const ack = await session.submitIntent(text);
    if (ack.accepted && ack.objective) {
      echoEl.className = "echo ok";
      echoEl.textContent = `supervisor read: ${objectiveSummary(ack.objective)}`;
    } else {
      echoEl.className = "echo err";
      echoEl.textContent = `rejected: ${ack.error}`;
    }
  } catch (err) {
    echoEl.className = "echo err";
    echoEl.textContent = `service unreachable: ${err}`;
  }
  state.pendingIntent = null;
}

document.getElementById("preset-es")!.addEventListener("click", () => submit(ES_PRESET));
document.getElementById("preset-um")!.addEventListener("click", () => submit(UM_PRESET));
document.getElementById("intent-send")!.addEventListener("click", () => {
  if (input.value.trim()) submit(input.value.trim());
});
input.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter" && input.value.trim()) submit(input.value.trim());
});

(async () => {
  try {
    state.setWorld(await session.world());
    const initial = await session.state();
    if (initial.loop > 0) state.applySnapshot(initial);
    redraw();
  } catch {
    // world fetch failed: the stream loop below keeps retrying
  }
  await session.stream();
  redraw();
})();
