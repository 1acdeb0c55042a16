// End-to-end: drive the console client against a live simulation service.
// Spawns the Python backend (a 20-loop scripted run) and asserts the required
// console behavior: 20 in-order snapshots, user-3 chart with its rate floor,
// and a correctly echoed energy-saving preset.

import { spawn, ChildProcess } from "node:child_process";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ConsoleSession } from "../src/client.js";
import { ViewState } from "../src/state.js";
import { rateChart } from "../src/viewmodel.js";
import type { ServiceEvent } from "../src/types.js";

const REPO_ROOT = path.resolve(__dirname, "..", "..");
const ES_PRESET = "Enter the energy-saving mode. Guarantee 50 Mbps for user 3.";

let proc: ChildProcess | null = null;
let endpoint = "";

function startService(): Promise<string> {
  return new Promise((resolve, reject) => {
    proc = spawn(
      "python3",
      ["-m", "cforan.cli", "serve",
       "--scenario", "scenarios/console-e2e.yaml",
       "--mode", "full_power", "--port", "0", "--loop-delay", "0.1"],
      { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"],
        env: { ...process.env, PYTHONUNBUFFERED: "1" } },
    );
    let out = "";
    const timer = setTimeout(
      () => reject(new Error(`service did not start: ${out}`)), 30_000);
    proc.stdout?.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      const match = out.match(/serving on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    proc.stderr?.on("data", (chunk: Buffer) => {
      out += chunk.toString();
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early (${code}): ${out}`));
    });
  });
}

beforeAll(async () => {
  endpoint = await startService();
}, 40_000);

afterAll(() => {
  proc?.kill("SIGKILL");
});

describe("console against a live 20-loop run", () => {
  it("receives exactly 20 snapshots in order, charts r3 with its floor, "
     + "and gets the energy-saving preset echoed", async () => {
    const state = new ViewState();
    const events: ServiceEvent[] = [];
    const session = new ConsoleSession(endpoint, {
      onEvent: (event) => {
        events.push(event);
        if (event.name === "snapshot") state.applySnapshot(event.data);
        if (event.name === "message") state.applyMessage(event.data);
      },
    });
    state.setWorld(await session.world());
    expect(state.world?.num_users).toBe(5);
    expect(state.world?.num_orus).toBe(10);

    // submit the preset while the run is live; the ack echoes the parsed
    // objective before any effect is visible
    const ack = await session.submitIntent(ES_PRESET);
    expect(ack.accepted).toBe(true);
    expect(ack.objective?.energy_saving).toBe(true);
    expect(ack.objective?.utility_kind).toBe("sum_rate");
    expect(ack.objective?.r_min_mbps).toEqual({ "3": 50.0 });
    expect(ack.objective?.monitored).toEqual([[3, 50.0]]);

    await session.stream();                    // until run-end
    session.close();

    const snapshots = events.filter((e) => e.name === "snapshot");
    expect(snapshots).toHaveLength(20);
    const loops = snapshots.map((e) => (e.data as { loop: number }).loop);
    expect(loops).toEqual(Array.from({ length: 20 }, (_, i) => i + 1));
    expect(state.snapshotsSeen).toBe(20);

    // user 3 chart: every loop charted, minimum-rate line at 50 Mbps
    const chart = rateChart(state, 2);
    expect(chart.points).toHaveLength(20);
    expect(chart.rMinMbps).toBe(50);
    expect(chart.points.every((p) => p.value > 0)).toBe(true);

    // a rejected intent is diagnosed, not crashed on
    const bad = await session.submitIntent("Make the network purple.");
    expect(bad.accepted).toBe(false);
    expect(bad.error).toContain("cannot parse");
  }, 60_000);
});
