// Wire types for the demo server's JSON frames.

export type Vec3 = [number, number, number];

export interface PredictorChoice {
  kind: "none" | "dead_reckoning" | "lagrange" | "poly";
  order?: number;
  window?: number;
  n?: number;
}

export interface HelloMsg {
  type: "hello";
  predictor: PredictorChoice;
  inject_oneway_ms: number;
  seed: number;
}

export interface InputMsg {
  type: "input";
  seq: number;
  t_ms: number;
  points: number[][];
}

export interface PingMsg {
  type: "ping";
  t_ms: number;
}

export interface StateMsg {
  type: "state";
  ack_seq: number;
  t_server_ms: number;
  horizon_ms: number;
  hand_pred: number[][];
  hand_raw: number[][];
  env: number[][];
}

export interface PongMsg {
  type: "pong";
  t_ms: number;
  t_server_ms: number;
}

export interface ErrorMsg {
  type: "error";
  code: string;
}

export type ServerMsg = StateMsg | PongMsg | ErrorMsg;

export function parseServerMsg(raw: string): ServerMsg | null {
  try {
    const msg = JSON.parse(raw);
    if (msg && (msg.type === "state" || msg.type === "pong" || msg.type === "error")) {
      return msg as ServerMsg;
    }
  } catch {
    // fall through
  }
  return null;
}
