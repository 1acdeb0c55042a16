// Wire schema of the simulation service (schema tag "cforan.v1").

export interface Snapshot {
  schema: string;
  event: "snapshot";
  loop: number;
  rates_mbps: number[];
  z: number[];
  alpha: number[];
  mu: number[];
  lam: number[];
  upsilon: number[];
  active_count: number;
  active_fraction: number;
  decision: string;
  decision_user?: number | null;
  memory_hit: boolean;
  energy_saving: boolean;
  r_min_mbps?: number[];
  pending_intents?: number;
  finished?: boolean;
}

export interface AgentMessage {
  schema: string;
  event: "message";
  sender: string;
  channel: string;
  kind: string;
  payload: Record<string, unknown>;
  loop: number;
  seq: number;
}

export interface IntentAck {
  schema: string;
  event: "intent-ack";
  accepted: boolean;
  text?: string;
  objective?: ObjectiveSpec;
  error?: string;
}

export interface ObjectiveSpec {
  utility_kind: "sum_rate" | "sum_log_rate";
  energy_saving: boolean;
  r_min_mbps: Record<string, number>;
  monitored: [number, number][];
}

export interface WorldInfo {
  schema: string;
  scenario: string;
  mode: string;
  num_users: number;
  num_orus: number;
  total_loops: number;
  area_side_m: number;
  oru_positions: [number, number][];
  user_positions: [number, number][];
  r_min_mbps: number[];
}

export type ServiceEvent =
  | { name: "snapshot"; data: Snapshot }
  | { name: "message"; data: AgentMessage }
  | { name: "intent"; data: Record<string, unknown> }
  | { name: "intent-ack"; data: IntentAck }
  | { name: "run-end"; data: { loops?: number } };
