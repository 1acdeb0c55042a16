// View state: bounded per-user rate series, message log, pending intent.
// Snapshots are display-only payloads from the service; nothing is recomputed
// here beyond shaping them for charts.

import type { AgentMessage, Snapshot, WorldInfo } from "./types.js";

export const SERIES_CAPACITY = 240;
export const LOG_CAPACITY = 400;

export interface SeriesPoint {
  loop: number;
  value: number;
}

export class ViewState {
  world: WorldInfo | null = null;
  latest: Snapshot | null = null;
  rateSeries: SeriesPoint[][] = [];
  messages: AgentMessage[] = [];
  pendingIntent: string | null = null;
  connection: "connecting" | "live" | "stale" | "closed" = "connecting";
  snapshotsSeen = 0;
  droppedStale = 0;

  setWorld(world: WorldInfo): void {
    this.world = world;
    if (this.rateSeries.length !== world.num_users) {
      this.rateSeries = Array.from({ length: world.num_users }, () => []);
    }
  }

  applySnapshot(snap: Snapshot): boolean {
    // loop indices must be strictly increasing; replays after reconnect are
    // dropped so charts never jump backwards
    if (this.latest !== null && snap.loop <= this.latest.loop) {
      this.droppedStale += 1;
      return false;
    }
    if (this.rateSeries.length !== snap.rates_mbps.length) {
      this.rateSeries = Array.from({ length: snap.rates_mbps.length }, () => []);
    }
    snap.rates_mbps.forEach((rate, k) => {
      const series = this.rateSeries[k];
      series.push({ loop: snap.loop, value: rate });
      if (series.length > SERIES_CAPACITY) {
        series.shift();
      }
    });
    this.latest = snap;
    this.snapshotsSeen += 1;
    return true;
  }

  applyMessage(msg: AgentMessage): void {
    this.messages.push(msg);
    if (this.messages.length > LOG_CAPACITY) {
      this.messages.shift();
    }
  }

  memoryHits(): AgentMessage[] {
    return this.messages.filter((m) => m.kind === "memory-hit");
  }
}
