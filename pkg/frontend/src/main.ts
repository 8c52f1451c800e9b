// Browser demo: drive the hand with the mouse through the simulated-latency
// loop and watch live vs delayed-raw vs predicted, with live error readouts.
//
// The page renders only what the server sends back (plus the locally drawn
// live hand); there is no client-side simulation of the environment.

import { REST_POINTS } from "./template_data.js";
import { frameError, RollingMean } from "./readout.js";
import { HelloMsg, InputMsg, parseServerMsg, PingMsg, StateMsg } from "./protocol.js";

const SAMPLE_INTERVAL_MS = 11;
const READOUT_WINDOW = 50;
const VR_BUDGET_MS = 20; // comfort threshold shown on the readout bar

interface UiState {
  connection: "connecting" | "open" | "closed";
  injectOnewayMs: number;
  predictor: { kind: "none" | "poly"; order?: number; window?: number };
  rawReadout: RollingMean;
  predReadout: RollingMean;
  lastState: StateMsg | null;
  seq: number;
  speedEstimate: number; // mm per ms, for the comfort-budget marker
}

const state: UiState = {
  connection: "closed",
  injectOnewayMs: 50,
  predictor: { kind: "poly", order: 2, window: 20 },
  rawReadout: new RollingMean(READOUT_WINDOW),
  predReadout: new RollingMean(READOUT_WINDOW),
  lastState: null,
  seq: 0,
  speedEstimate: 0,
};

let socket: WebSocket | null = null;
let livePoints: number[][] = REST_POINTS.map((p) => [...p]);
let mouse = { x: 400, y: 300 };
let lastMouse = { x: 400, y: 300, t: 0 };

function templateCenter(): [number, number] {
  let cx = 0;
  let cy = 0;
  for (const p of REST_POINTS) {
    cx += p[0];
    cy += p[1];
  }
  return [cx / REST_POINTS.length, cy / REST_POINTS.length];
}

const [tplCx, tplCy] = templateCenter();

function pointsAt(x: number, y: number): number[][] {
  // Rigid drag of the rest pose; z stays 0 in the 2D demo.
  return REST_POINTS.map((p) => [p[0] - tplCx + x, p[1] - tplCy + y, 0]);
}

function serverUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const port = params.get("port") ?? "8765";
  return `ws://${window.location.hostname || "127.0.0.1"}:${port}`;
}

function applyUrlPredictor(): void {
  const params = new URLSearchParams(window.location.search);
  const choice = params.get("predictor");
  if (choice === "none") state.predictor = { kind: "none" };
  if (choice === "poly") state.predictor = { kind: "poly", order: 2, window: 20 };
}

function connect(): void {
  if (socket) {
    socket.close();
  }
  state.rawReadout.reset();
  state.predReadout.reset();
  state.seq = 0;
  state.connection = "connecting";
  socket = new WebSocket(serverUrl());
  socket.onopen = () => {
    state.connection = "open";
    const hello: HelloMsg = {
      type: "hello",
      predictor: state.predictor,
      inject_oneway_ms: state.injectOnewayMs,
      seed: 1,
    };
    socket!.send(JSON.stringify(hello));
    const ping: PingMsg = { type: "ping", t_ms: performance.now() };
    socket!.send(JSON.stringify(ping));
  };
  socket.onclose = () => {
    state.connection = "closed";
    window.setTimeout(connect, 500); // fresh session on reconnect
  };
  socket.onmessage = (event) => {
    const msg = parseServerMsg(String(event.data));
    if (!msg) return;
    if (msg.type === "pong") {
      // Ping chain: the server measures round trips from consecutive
      // pong-send -> ping-receive gaps on its own clock.
      socket!.send(JSON.stringify({ type: "ping", t_ms: performance.now() }));
    } else if (msg.type === "state") {
      state.lastState = msg;
      state.rawReadout.push(frameError(msg.hand_raw, livePoints));
      state.predReadout.push(frameError(msg.hand_pred, livePoints));
    }
  };
}

function captureLoop(): void {
  window.setInterval(() => {
    if (!socket || socket.readyState !== WebSocket.OPEN) return;
    const now = performance.now();
    livePoints = pointsAt(mouse.x, mouse.y);
    const dt = now - lastMouse.t;
    if (dt > 0) {
      const dist = Math.hypot(mouse.x - lastMouse.x, mouse.y - lastMouse.y);
      state.speedEstimate = 0.8 * state.speedEstimate + 0.2 * (dist / dt);
    }
    lastMouse = { x: mouse.x, y: mouse.y, t: now };
    const input: InputMsg = { type: "input", seq: state.seq++, t_ms: now, points: livePoints };
    socket.send(JSON.stringify(input));
  }, SAMPLE_INTERVAL_MS);
}

// --- rendering -----------------------------------------------------------------

function drawHand(ctx: CanvasRenderingContext2D, pts: number[][], color: string, radius: number): void {
  ctx.fillStyle = color;
  for (const p of pts) {
    ctx.beginPath();
    ctx.arc(p[0], p[1], radius, 0, Math.PI * 2);
    ctx.fill();
  }
}

function fmt(value: number | null): string {
  return value === null ? "--" : value.toFixed(1);
}

function renderLoop(canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d")!;
  const frame = () => {
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, canvas.width, canvas.height);

    const last = state.lastState;
    if (last) {
      ctx.fillStyle = "#39434f";
      for (const p of last.env) {
        ctx.fillRect(p[0], p[1], 2, 2);
      }
      drawHand(ctx, last.hand_raw, "#d0616a", 2.5); // delayed round trip
      drawHand(ctx, last.hand_pred, "#58b368", 2.5); // compensated
    }
    drawHand(ctx, livePoints, "#dfe6ee", 1.5); // local ground truth

    const raw = state.rawReadout.mean;
    const pred = state.predReadout.mean;
    ctx.fillStyle = "#dfe6ee";
    ctx.font = "14px monospace";
    ctx.fillText(`latency ${state.injectOnewayMs} ms/way   ${state.connection}`, 12, 20);
    ctx.fillText(`raw error  ${fmt(raw)} mm`, 12, 40);
    ctx.fillText(`pred error ${fmt(pred)} mm`, 12, 58);
    if (last) ctx.fillText(`horizon ${last.horizon_ms.toFixed(1)} ms`, 12, 76);

    // Error bars with the VR comfort budget (20 ms at the current hand
    // speed) as a reference line.
    const budgetMm = Math.max(VR_BUDGET_MS * state.speedEstimate, 2);
    const scale = 3;
    const bar = (y: number, value: number | null, color: string) => {
      if (value === null) return;
      ctx.fillStyle = color;
      ctx.fillRect(180, y - 9, Math.min(value * scale, 360), 10);
    };
    bar(40, raw, "#d0616a");
    bar(58, pred, "#58b368");
    ctx.strokeStyle = "#f0c552";
    ctx.beginPath();
    ctx.moveTo(180 + budgetMm * scale, 24);
    ctx.lineTo(180 + budgetMm * scale, 64);
    ctx.stroke();
    ctx.fillStyle = "#f0c552";
    ctx.fillText("20 ms budget", 186 + budgetMm * scale, 34);

    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

// --- page wiring ------------------------------------------------------------------

export function start(): void {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const slider = document.getElementById("latency") as HTMLInputElement;
  const sliderLabel = document.getElementById("latency-label") as HTMLSpanElement;
  const predictorSelect = document.getElementById("predictor") as HTMLSelectElement;

  applyUrlPredictor();
  slider.value = String(state.injectOnewayMs);
  sliderLabel.textContent = `${state.injectOnewayMs} ms`;

  canvas.addEventListener("mousemove", (ev) => {
    const rect = canvas.getBoundingClientRect();
    mouse = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  });
  slider.addEventListener("change", () => {
    state.injectOnewayMs = Number(slider.value);
    sliderLabel.textContent = `${state.injectOnewayMs} ms`;
    connect(); // latency change starts a fresh session
  });
  predictorSelect.addEventListener("change", () => {
    state.predictor =
      predictorSelect.value === "none" ? { kind: "none" } : { kind: "poly", order: 2, window: 20 };
    connect();
  });

  connect();
  captureLoop();
  renderLoop(canvas);
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  start();
}
