"""Live demo server: the latency-compensation loop over a WebSocket.

A human (or scripted client) streams 50-point input frames; the server
holds them in per-channel windows, and on every tick sends back BOTH the
uncompensated newest hand and the extrapolated hand, plus the particle
field the predicted hand is stirring. Artificial one-way latency is
injected inside the server (deterministic, per-session), so the
compensation is visible even on localhost.

Protocol (JSON text frames):
  client -> server
    {"type":"hello","predictor":{"kind":"poly","order":2,"window":20},
     "inject_oneway_ms":50,"seed":1}
    {"type":"input","seq":N,"t_ms":F,"points":[[x,y,z] * 50]}
    {"type":"ping","t_ms":F}
  server -> client
    {"type":"state","ack_seq":N,"t_server_ms":F,"horizon_ms":F,
     "hand_pred":[...],"hand_raw":[...],"env":[...]}
    {"type":"pong","t_ms":F,"t_server_ms":F}
    {"type":"error","code":S}

Round-trip time is measured from server receive/send times only, so
client clock skew cannot corrupt it: clients SHOULD send their next ping
as soon as a pong arrives, making consecutive pong-send -> ping-receive
gaps equal to one round trip.

Each connection owns an isolated SessionChannel; the channel itself is a
pure state machine (explicit timestamps in, messages out), which is what
the determinism and isolation guarantees (and their tests) attach to.
The asyncio layer only moves bytes and schedules delayed deliveries.
"""

from __future__ import annotations

import asyncio
import json
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import predict
from .env import EnvConfig, env_step, init_state
from .netsim import HORIZON_CLAMP_MS
from .trace import POINT_COUNT, default_template, expand_points

RTT_ALPHA = 0.1
SERVER_FRAME_MS = 1000.0 / 133.0
OUTBOUND_QUEUE_LIMIT = 8
MAX_WINDOW = 60


class ProtocolError(ValueError):
    pass


def parse_hello_predictor(section: dict):
    kind = section.get("kind", "none")
    if kind == "none":
        return predict.NoPrediction()
    if kind == "dead_reckoning":
        return predict.DeadReckoning()
    if kind == "lagrange":
        return predict.Lagrange(n=int(section["n"]))
    if kind == "poly":
        return predict.poly(
            int(section.get("order", 2)),
            int(section.get("window", 20)),
            float(section.get("ridge", 1e-9)),
        )
    raise ProtocolError(f"unsupported predictor kind '{kind}'")


@dataclass
class ChannelConfig:
    predictor: object
    inject_oneway_ms: float = 0.0
    seed: int = 0
    env: EnvConfig | None = None
    env_stride: int = 1


class SessionChannel:
    """Per-connection server state: sample windows, rtt estimate, environment.

    All methods take explicit server-clock milliseconds; nothing reads the
    wall clock, so identical call sequences produce identical outputs.
    """

    def __init__(self, config: ChannelConfig, template=None):
        self.config = config
        self.template = template or default_template()
        self.times: deque[float] = deque(maxlen=MAX_WINDOW)  # client stamps
        self.values: deque[np.ndarray] = deque(maxlen=MAX_WINDOW)  # flat (150,)
        self.last_seq = -1
        self.rtt_ewma_ms: float | None = None
        self._pong_sent_ms: float | None = None
        self._offset_ms: float | None = None  # min(server recv - client stamp)
        self.env_state = init_state(config.env) if config.env else None

    # -- inbound ------------------------------------------------------------

    def deliver_input(self, t_server_ms: float, seq: int, t_client_ms: float, points) -> None:
        pts = np.asarray(points, dtype=float)
        if pts.shape != (POINT_COUNT, 3) or not np.all(np.isfinite(pts)):
            raise ProtocolError("bad points payload")
        if seq <= self.last_seq or (self.times and t_client_ms <= self.times[-1]):
            return  # stale or replayed sample; the window keeps only fresh ones
        self.last_seq = seq
        self.times.append(float(t_client_ms))
        self.values.append(pts.reshape(-1))
        offset = t_server_ms - t_client_ms
        if self._offset_ms is None or offset < self._offset_ms:
            self._offset_ms = offset

    def on_ping(self, t_server_ms: float, t_client_ms: float) -> dict:
        if self._pong_sent_ms is not None:
            sample = t_server_ms - self._pong_sent_ms
            if self.rtt_ewma_ms is None:
                self.rtt_ewma_ms = sample
            else:
                self.rtt_ewma_ms = RTT_ALPHA * sample + (1.0 - RTT_ALPHA) * self.rtt_ewma_ms
        return {"type": "pong", "t_ms": t_client_ms, "t_server_ms": t_server_ms}

    def mark_pong_sent(self, t_server_ms: float) -> None:
        self._pong_sent_ms = t_server_ms

    # -- tick ---------------------------------------------------------------

    def staleness_ms(self, t_server_ms: float) -> float:
        return max(0.0, (t_server_ms - self.times[-1]) - (self._offset_ms or 0.0))

    def horizon_ms(self, t_server_ms: float) -> float:
        if self.rtt_ewma_ms is not None:
            downstream = max(self.rtt_ewma_ms / 2.0, self.config.inject_oneway_ms)
        else:
            downstream = self.config.inject_oneway_ms
        return min(max(self.staleness_ms(t_server_ms) + downstream, 0.0), HORIZON_CLAMP_MS)

    def tick(self, t_server_ms: float) -> dict | None:
        if not self.times:
            return None
        newest = self.values[-1]
        horizon = self.horizon_ms(t_server_ms)
        n = len(self.times)
        kind = self.config.predictor
        if n < predict.required_history(kind):
            pred = newest.copy()
        else:
            t_arr = np.array(self.times)
            t_rel = (t_arr - t_arr[-1]) / 1000.0
            vals = np.stack(self.values)
            try:
                pred = predict.predict_channels(t_rel, vals, kind, horizon / 1000.0, newest)
            except predict.DegenerateWindowError:
                pred = newest.copy()
        env_payload = []
        if self.env_state is not None:
            mesh = expand_points(pred.reshape(-1, 3), self.template)
            self.env_state, _ = env_step(self.env_state, mesh, self.config.env)
            env_payload = self.env_state.positions[:: self.config.env_stride].tolist()
        return {
            "type": "state",
            "ack_seq": self.last_seq,
            "t_server_ms": t_server_ms,
            "horizon_ms": horizon,
            "hand_pred": pred.reshape(-1, 3).tolist(),
            "hand_raw": newest.reshape(-1, 3).tolist(),
            "env": env_payload,
        }


# --- asyncio wiring --------------------------------------------------------------


def _default_env_config(section: dict) -> EnvConfig | None:
    if not section.get("env_enabled", True):
        return None
    return EnvConfig(
        particle_count=int(section.get("env_particles", 400)),
        interaction_radius_mm=float(section.get("env_radius_mm", 15.0)),
        stiffness=float(section.get("env_stiffness", 5.0)),
        damping=0.98,
        dt_ms=SERVER_FRAME_MS,
        bounds_lo=(0.0, 0.0, -10.0),
        bounds_hi=(800.0, 600.0, 10.0),
        seed=int(section.get("env_seed", 0)),
    )


class _Connection:
    def __init__(self, ws, service_config: dict):
        self.ws = ws
        self.service_config = service_config
        self.channel: SessionChannel | None = None
        self.inject_s = 0.0
        self.outbound: deque = deque(maxlen=OUTBOUND_QUEUE_LIMIT)
        self.wakeup = asyncio.Event()
        self.t0 = time.monotonic()
        self.tasks: list[asyncio.Task] = []

    def now_ms(self) -> float:
        return (time.monotonic() - self.t0) * 1000.0

    def enqueue(self, message: dict, mark_pong: bool = False) -> None:
        self.outbound.append((message, mark_pong))
        self.wakeup.set()

    async def sender(self):
        while True:
            await self.wakeup.wait()
            self.wakeup.clear()
            while self.outbound:
                message, mark_pong = self.outbound.popleft()
                if mark_pong and self.channel is not None:
                    self.channel.mark_pong_sent(self.now_ms())
                await self.ws.send(json.dumps(message, separators=(",", ":")))

    async def ticker(self):
        loop = asyncio.get_running_loop()
        next_tick = loop.time()
        while True:
            next_tick += SERVER_FRAME_MS / 1000.0
            await asyncio.sleep(max(0.0, next_tick - loop.time()))
            if self.channel is None:
                continue
            state = self.channel.tick(self.now_ms())
            if state is not None:
                loop.call_later(self.inject_s, self.enqueue, state)

    def handle_message(self, raw: str) -> None:
        loop = asyncio.get_running_loop()
        try:
            msg = json.loads(raw)
            mtype = msg.get("type")
            if mtype == "hello":
                cfg = ChannelConfig(
                    predictor=parse_hello_predictor(msg.get("predictor", {})),
                    inject_oneway_ms=float(msg.get("inject_oneway_ms", 0.0)),
                    seed=int(msg.get("seed", 0)),
                    env=_default_env_config(self.service_config),
                    env_stride=int(self.service_config.get("env_stride", 1)),
                )
                self.channel = SessionChannel(cfg)
                self.inject_s = cfg.inject_oneway_ms / 1000.0
            elif mtype == "input":
                if self.channel is None:
                    raise ProtocolError("input before hello")
                seq, t_ms, points = int(msg["seq"]), float(msg["t_ms"]), msg["points"]
                loop.call_later(
                    self.inject_s,
                    self._deliver_input_safe,
                    seq,
                    t_ms,
                    points,
                )
            elif mtype == "ping":
                if self.channel is None:
                    raise ProtocolError("ping before hello")
                t_ms = float(msg["t_ms"])
                loop.call_later(self.inject_s, self._pong, t_ms)
            else:
                raise ProtocolError(f"unknown message type {mtype!r}")
        except (KeyError, TypeError, ValueError):
            self.enqueue({"type": "error", "code": "bad_input"})

    def _deliver_input_safe(self, seq, t_ms, points):
        try:
            self.channel.deliver_input(self.now_ms(), seq, t_ms, points)
        except ProtocolError:
            self.enqueue({"type": "error", "code": "bad_input"})

    def _pong(self, t_client_ms):
        pong = self.channel.on_ping(self.now_ms(), t_client_ms)
        # Another injected leg on the way out, like every other message.
        asyncio.get_running_loop().call_later(self.inject_s, self.enqueue, pong, True)


async def handle_connection(ws, service_config: dict):
    conn = _Connection(ws, service_config)
    conn.tasks = [asyncio.create_task(conn.sender()), asyncio.create_task(conn.ticker())]
    try:
        async for raw in ws:
            conn.handle_message(raw)
    finally:
        for task in conn.tasks:
            task.cancel()


async def run_server(port: int, config: dict | None = None, ready: asyncio.Event | None = None):
    import websockets

    config = config or {}

    async def handler(ws):
        await handle_connection(ws, config)

    async with websockets.serve(handler, "127.0.0.1", port, max_size=2**22):
        if ready is not None:
            ready.set()
        await asyncio.Future()


def serve_forever(port: int, config: dict | None = None) -> None:
    print(f"serving on ws://127.0.0.1:{port}")
    asyncio.run(run_server(port, config))
