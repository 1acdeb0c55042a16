// Service client: REST calls plus a server-sent-event stream implemented
// over fetch streaming (no EventSource dependency, works in Node and the
// browser). Reconnects with exponential backoff and flags silent sessions.

import type { IntentAck, ServiceEvent, Snapshot, WorldInfo } from "./types.js";

export interface SessionCallbacks {
  onEvent: (event: ServiceEvent) => void;
  onStatus?: (status: "connecting" | "live" | "stale" | "closed") => void;
}

export interface SessionOptions {
  staleAfterMs?: number;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  maxRetries?: number;
}

export function parseSseChunk(buffer: string): { events: ServiceEvent[]; rest: string } {
  const events: ServiceEvent[] = [];
  const blocks = buffer.split("\n\n");
  const rest = blocks.pop() ?? "";
  for (const block of blocks) {
    let name = "message";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("event: ")) {
        name = line.slice(7).trim();
      } else if (line.startsWith("data: ")) {
        data += line.slice(6);
      }
    }
    if (!data) continue;
    try {
      events.push({ name, data: JSON.parse(data) } as ServiceEvent);
    } catch {
      // malformed frame: skip rather than poison the stream
    }
  }
  return { events, rest };
}

export class ConsoleSession {
  private stopped = false;
  private lastEventAt = 0;
  private staleTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    readonly endpoint: string,
    private readonly callbacks: SessionCallbacks,
    private readonly options: SessionOptions = {},
  ) {}

  async world(): Promise<WorldInfo> {
    const resp = await fetch(`${this.endpoint}/world`);
    return (await resp.json()) as WorldInfo;
  }

  async state(): Promise<Snapshot> {
    const resp = await fetch(`${this.endpoint}/state`);
    return (await resp.json()) as Snapshot;
  }

  async submitIntent(text: string): Promise<IntentAck> {
    const resp = await fetch(`${this.endpoint}/intent`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    return (await resp.json()) as IntentAck;
  }

  /** Subscribe to the event stream until run-end; resolves when it ends. */
  async stream(): Promise<void> {
    const staleAfter = this.options.staleAfterMs ?? 10_000;
    const base = this.options.backoffBaseMs ?? 500;
    const max = this.options.backoffMaxMs ?? 8_000;
    const maxRetries = this.options.maxRetries ?? 20;
    let attempt = 0;

    this.staleTimer = setInterval(() => {
      if (this.lastEventAt && Date.now() - this.lastEventAt > staleAfter) {
        this.callbacks.onStatus?.("stale");
      }
    }, Math.min(staleAfter, 2_000));

    try {
      while (!this.stopped && attempt <= maxRetries) {
        this.callbacks.onStatus?.("connecting");
        try {
          const done = await this.consumeStream();
          if (done || this.stopped) return;
          attempt = 0; // stream dropped mid-run: reconnect promptly
        } catch {
          // connection refused or broken: back off below
        }
        attempt += 1;
        const delay = Math.min(max, base * 2 ** Math.min(attempt, 6));
        await new Promise((r) => setTimeout(r, delay));
      }
    } finally {
      if (this.staleTimer) clearInterval(this.staleTimer);
      this.callbacks.onStatus?.("closed");
    }
  }

  private async consumeStream(): Promise<boolean> {
    const resp = await fetch(`${this.endpoint}/events`);
    if (!resp.ok || !resp.body) {
      throw new Error(`events endpoint answered ${resp.status}`);
    }
    this.callbacks.onStatus?.("live");
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    while (!this.stopped) {
      const { value, done } = await reader.read();
      if (done) return false;
      buffer += decoder.decode(value, { stream: true });
      const { events, rest } = parseSseChunk(buffer);
      buffer = rest;
      for (const event of events) {
        this.lastEventAt = Date.now();
        this.callbacks.onEvent(event);
        if (event.name === "run-end") {
          return true;
        }
      }
    }
    return true;
  }

  close(): void {
    this.stopped = true;
    if (this.staleTimer) clearInterval(this.staleTimer);
  }
}
