"""Deterministic simulation of the client/server latency-compensation loop.

The simulated pipeline, per input sample: the client captures a frame every
sample interval, hands it off after an input-sampling delay, and sends it
over the uplink (which can jitter and drop). The server buffers delivered
samples per channel and, on every fixed-rate tick, extrapolates all
channels forward by its current horizon estimate, optionally steps the
particle environment against the predicted hand, and emits a state packet.
That packet crosses the downlink and is presented after a render delay.

At each presentation the log pairs the displayed (round-tripped, possibly
predicted) points with the live points: the newest sample the client has
obtained by then, late-latched the way VR renderers read local input.
Every millisecond of divergence between those two sample times turns into
displayed error at the hand's speed, which is exactly the staleness the
predictor is trying to cancel.

The horizon estimate is measurement driven: the server reads the newest
sample's age directly and learns the downlink + render leg from client
acknowledgments through an exponentially weighted moving average. Before
the first ack it falls back to the configured model means.

One seed fixes every random draw (input delays, network jitter, losses,
render delays), so identical configs reproduce identical logs byte for
byte. The event loop is single threaded; ties are broken by insertion
order.
"""

from __future__ import annotations

import heapq
import json
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .env import EnvConfig, EnvState, env_step, init_state
from .predict import (
    DegenerateWindowError,
    HorizonMismatchError,
    NoPrediction,
    PolyRegression,
    PredictorKind,
    _solve_small_batch,
    predict_channels,
    required_history,
)
from .trace import HandTemplate, TrackedFrame, default_template, expand_points, frames_to_arrays

# One-way network delay calibrated so the default pipeline's mean staleness
# reproduces the reference moving-baseline error at 1 m/s (see README). It
# deliberately absorbs the unmodeled parts of a real deployment's path
# (server simulation step, driver and OS queues), not just the wire.
DEFAULT_NET_ONEWAY_MS = 15.0

HORIZON_CLAMP_MS = 200.0
EWMA_ALPHA = 0.1


@dataclass(frozen=True)
class LatencyModel:
    """Stochastic delay pipeline; uniform input/render delays, jittered network."""

    input_sampling_ms: float = 10.0  # uniform [0, x] capture-to-send
    render_ms: float = 11.0  # uniform [0, x] arrival-to-present
    net_oneway_ms: float = DEFAULT_NET_ONEWAY_MS
    jitter_ms: float = 0.0  # uniform [-j, +j] per packet
    loss_prob: float = 0.0
    server_frame_ms: float = 1000.0 / 133.0
    seed: int = 0

    def __post_init__(self):
        for name in ("input_sampling_ms", "render_ms", "net_oneway_ms", "jitter_ms", "server_frame_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss_prob must be in [0, 1)")
        if self.server_frame_ms == 0:
            raise ValueError("server_frame_ms must be > 0")

    @property
    def static_downstream_ms(self) -> float:
        return self.net_oneway_ms + self.render_ms / 2.0


@dataclass
class SessionConfig:
    frames: list[TrackedFrame]
    predictor: PredictorKind = field(default_factory=NoPrediction)
    latency: LatencyModel = field(default_factory=LatencyModel)
    client_override: bool = False
    env: EnvConfig | None = None
    template: HandTemplate | None = None  # needed when env is enabled
    duration_ms: float | None = None
    env_snapshot_every: int = 10
    record_env_snapshots: bool = False


@dataclass
class SessionLog:
    """Per presented frame, displayed vs live state plus bookkeeping."""

    t_present_ms: np.ndarray  # (P,)
    live_points: np.ndarray  # (P, 50, 3)
    displayed_points: np.ndarray  # (P, 50, 3)
    horizon_used_ms: np.ndarray  # (P,)
    packet_loss_count: np.ndarray  # (P,) cumulative at presentation time
    reacting_centroid: np.ndarray  # (P, 3), NaN rows when env off / nothing reacting
    reacting_count: np.ndarray  # (P,)
    env_snapshots: list[tuple[int, np.ndarray]]
    config: dict
    meta: dict

    def __len__(self) -> int:
        return len(self.t_present_ms)


class HorizonEstimator:
    """Tracks how far ahead the server must predict for results to land on time."""

    def __init__(self, static_downstream_ms: float, alpha: float = EWMA_ALPHA):
        self.alpha = alpha
        self.static_downstream_ms = static_downstream_ms
        self.ewma_downstream_ms: float | None = None
        self.ewma_sample_delay_ms: float | None = None

    def on_sample_delivered(self, capture_to_arrival_ms: float) -> None:
        self.ewma_sample_delay_ms = self._mix(self.ewma_sample_delay_ms, capture_to_arrival_ms)

    def on_ack(self, downstream_ms: float) -> None:
        self.ewma_downstream_ms = self._mix(self.ewma_downstream_ms, downstream_ms)

    def _mix(self, current: float | None, value: float) -> float:
        if current is None:
            return value
        return self.alpha * value + (1.0 - self.alpha) * current

    def estimate(self, t_server_now_ms: float, t_capture_ms: float) -> float:
        downstream = (
            self.ewma_downstream_ms
            if self.ewma_downstream_ms is not None
            else self.static_downstream_ms
        )
        horizon = (t_server_now_ms - t_capture_ms) + downstream
        return float(min(max(horizon, 0.0), HORIZON_CLAMP_MS))


def estimate_horizon(
    estimator: HorizonEstimator, t_server_now_ms: float, t_capture_ms: float
) -> float:
    """Horizon = age of the newest sample plus the learned downstream delay."""
    return estimator.estimate(t_server_now_ms, t_capture_ms)


# --- core engine ------------------------------------------------------------


def _describe_kind(kind) -> dict:
    from . import predict

    if isinstance(kind, NoPrediction):
        return {"kind": "none"}
    if isinstance(kind, predict.DeadReckoning):
        return {"kind": "dead_reckoning"}
    if isinstance(kind, predict.Lagrange):
        return {"kind": "lagrange", "n": kind.n}
    if isinstance(kind, PolyRegression):
        s = kind.spec
        return {"kind": "poly", "order": s.order, "window": s.window, "ridge": s.ridge}
    if isinstance(kind, predict.Recurrent):
        return {"kind": "rnn", "horizon_ms": kind.model.horizon_ms, "cell": kind.model.spec.cell}
    return {"kind": repr(kind)}


def _config_echo(config: SessionConfig, duration_ms: float) -> dict:
    lat = config.latency
    echo = {
        "predictor": _describe_kind(config.predictor),
        "latency": {
            "input_sampling_ms": lat.input_sampling_ms,
            "render_ms": lat.render_ms,
            "net_oneway_ms": lat.net_oneway_ms,
            "jitter_ms": lat.jitter_ms,
            "loss_prob": lat.loss_prob,
            "server_frame_ms": lat.server_frame_ms,
            "seed": lat.seed,
        },
        "client_override": config.client_override,
        "duration_ms": duration_ms,
        "frame_count": len(config.frames),
        "env": None,
    }
    if config.env is not None:
        e = config.env
        echo["env"] = {
            "particle_count": e.particle_count,
            "interaction_radius_mm": e.interaction_radius_mm,
            "stiffness": e.stiffness,
            "damping": e.damping,
            "dt_ms": e.dt_ms,
            "bounds_lo": list(e.bounds_lo),
            "bounds_hi": list(e.bounds_hi),
            "seed": e.seed,
        }
    return echo


def _run(config: SessionConfig, kinds: list[PredictorKind]):
    if config.env is not None and len(kinds) != 1:
        raise ValueError("the environment can only follow a single predictor")
    frames = config.frames
    if not frames:
        raise ValueError("empty trace")
    times, pts = frames_to_arrays(frames)
    if np.any(np.diff(times) <= 0):
        raise ValueError("trace timestamps must be strictly increasing")
    flat = pts.reshape(len(frames), -1)
    lat = config.latency

    duration = config.duration_ms if config.duration_ms is not None else float(times[-1])
    truncated = duration > times[-1] + 1e-9

    ss = np.random.SeedSequence(lat.seed)
    r_input, r_up, r_uploss, r_down, r_render, r_ack = (
        np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(6)
    )

    F = len(times)
    d_in = r_input.uniform(0.0, lat.input_sampling_ms, F) if lat.input_sampling_ms else np.zeros(F)
    up_jit = r_up.uniform(-lat.jitter_ms, lat.jitter_ms, F) if lat.jitter_ms else np.zeros(F)
    up_lost = (
        r_uploss.uniform(0.0, 1.0, F) < lat.loss_prob if lat.loss_prob else np.zeros(F, dtype=bool)
    )
    arrive = times + d_in + np.maximum(0.0, lat.net_oneway_ms + up_jit)

    n_ticks = int(np.floor(duration / lat.server_frame_ms + 1e-9))
    tick_times = (np.arange(n_ticks, dtype=float) + 1.0) * lat.server_frame_ms
    down_jit = r_down.uniform(-lat.jitter_ms, lat.jitter_ms, n_ticks) if lat.jitter_ms else np.zeros(n_ticks)
    down_lost = (
        r_down.uniform(0.0, 1.0, n_ticks) < lat.loss_prob
        if lat.loss_prob
        else np.zeros(n_ticks, dtype=bool)
    )
    down_delay = np.maximum(0.0, lat.net_oneway_ms + down_jit)
    render = r_render.uniform(0.0, lat.render_ms, n_ticks) if lat.render_ms else np.zeros(n_ticks)
    ack_jit = r_ack.uniform(-lat.jitter_ms, lat.jitter_ms, n_ticks) if lat.jitter_ms else np.zeros(n_ticks)
    ack_lost = (
        r_ack.uniform(0.0, 1.0, n_ticks) < lat.loss_prob
        if lat.loss_prob
        else np.zeros(n_ticks, dtype=bool)
    )
    ack_delay = np.maximum(0.0, lat.net_oneway_ms + ack_jit)

    arrival_order = np.argsort(arrive, kind="stable")

    est = HorizonEstimator(lat.static_downstream_ms)
    caps: list[float] = []  # delivered sample stamps, kept sorted
    caps_idx: list[int] = []  # frame index per delivered sample
    pending_acks: list[tuple[float, float]] = []
    loss_times: list[float] = []

    env_state: EnvState | None = None
    template = config.template
    if config.env is not None:
        env_state = init_state(config.env)
        if template is None:
            template = default_template()

    max_need = max(max(required_history(k) for k in kinds), 2)
    K = len(kinds)
    presentations = []  # (t_present, tick_i, live_idx, horizon, preds (K, 150), env info)
    env_snapshots: list[tuple[int, np.ndarray]] = []

    # The timestamp a packet carries is the instant the client obtained the
    # sample, i.e. capture plus the input-sampling delay. The device's true
    # exposure instant is not observable to the client, so during motion the
    # stamp-vs-position mismatch surfaces as timing noise in the series.
    stamps = times + d_in

    # The live hand at any present time is the newest sample the client has
    # obtained by then. Stamps can reorder only if the input delay exceeds
    # the sample interval, so resolve "newest" through a prefix maximum.
    stamp_order = np.argsort(stamps, kind="stable")
    stamps_sorted = stamps[stamp_order]
    newest_upto = np.maximum.accumulate(stamp_order)

    ai = 0
    for i in range(n_ticks):
        T = tick_times[i]
        while ai < F and arrive[arrival_order[ai]] <= T:
            j = int(arrival_order[ai])
            ai += 1
            if up_lost[j]:
                loss_times.append(float(arrive[j]))
                continue
            t_stamp = float(stamps[j])
            if caps and t_stamp < caps[-1]:
                pos = bisect_right(caps, t_stamp)
                caps.insert(pos, t_stamp)
                caps_idx.insert(pos, j)
            else:
                caps.append(t_stamp)
                caps_idx.append(j)
            est.on_sample_delivered(float(arrive[j]) - t_stamp)
        while pending_acks and pending_acks[0][0] <= T:
            _, downstream = heapq.heappop(pending_acks)
            est.on_ack(downstream)

        m = len(caps)
        if m == 0:
            continue
        horizon = est.estimate(T, caps[-1])
        h_s = horizon / 1000.0

        take = min(m, max_need)
        win_idx = caps_idx[-take:]
        win_t = np.array(caps[-take:])
        win_t_s = (win_t - win_t[-1]) / 1000.0
        win_vals = flat[win_idx]
        newest_flat = win_vals[-1]

        preds = np.empty((K, flat.shape[1]))
        by_order: dict[int, list[tuple[int, int, float]]] = {}
        for k, kind in enumerate(kinds):
            if isinstance(kind, NoPrediction) or m < required_history(kind):
                preds[k] = newest_flat
            elif isinstance(kind, PolyRegression):
                by_order.setdefault(kind.spec.order, []).append(
                    (k, kind.spec.window, kind.spec.ridge)
                )
            else:
                try:
                    preds[k] = predict_channels(win_t_s, win_vals, kind, h_s, newest_flat)
                except (DegenerateWindowError, HorizonMismatchError):
                    # Degenerate windows and fixed-horizon models asked for a
                    # horizon outside their band both display the raw hand;
                    # the miss shows up as error instead of killing the run.
                    preds[k] = newest_flat
        if by_order:
            # All regression cells share the tick's window, so assemble every
            # normal system from one set of suffix power sums and eliminate
            # them as a stack.
            max_order = max(by_order)
            rev_t = win_t_s[::-1]
            pw = rev_t[:, None] ** np.arange(2 * max_order + 1)
            S = np.cumsum(pw, axis=0)
            rev_vals = win_vals[::-1]
            Cj = [np.cumsum(pw[:, j : j + 1] * rev_vals, axis=0) for j in range(max_order + 1)]
            for order, cells in by_order.items():
                kdim = order + 1
                ns = np.array([n for _, n, _ in cells], dtype=np.int64) - 1
                lam = np.array([l for _, _, l in cells])
                Sn = S[ns]
                ii, jj = np.meshgrid(np.arange(kdim), np.arange(kdim), indexing="ij")
                A = Sn[:, ii + jj]
                A[:, np.arange(1, kdim), np.arange(1, kdim)] += lam[:, None]
                B = np.stack([Cj[j][ns] for j in range(kdim)], axis=1)
                X, ok = _solve_small_batch(A, B)
                res = X[:, kdim - 1].copy()
                for j in range(kdim - 2, -1, -1):
                    res = res * h_s + X[:, j]
                for c_i, (k, _, _) in enumerate(cells):
                    preds[k] = res[c_i] if ok[c_i] else newest_flat

        react_centroid = None
        react_count = 0
        if env_state is not None:
            mesh = expand_points(preds[0].reshape(-1, 3), template)
            env_state, reacting = env_step(env_state, mesh, config.env)
            react_count = int(len(reacting))
            if react_count:
                react_centroid = env_state.positions[reacting].mean(axis=0)
            if config.record_env_snapshots and i % config.env_snapshot_every == 0:
                env_snapshots.append((i, env_state.positions.copy()))

        if down_lost[i]:
            loss_times.append(float(T))
            continue
        # The local comparison hand is late-latched: the client reads its
        # newest sample as close to scanout as it can, the standard way VR
        # renderers minimize motion-to-photon lag for locally drawn content.
        t_present = float(T + down_delay[i] + render[i])
        if not ack_lost[i]:
            heapq.heappush(pending_acks, (t_present + float(ack_delay[i]), t_present - float(T)))
        if t_present > duration:
            continue
        live_idx = int(newest_upto[np.searchsorted(stamps_sorted, t_present, side="right") - 1])
        presentations.append((t_present, i, live_idx, horizon, preds.copy(), react_centroid, react_count))

    presentations.sort(key=lambda rec: (rec[0], rec[1]))
    loss_arr = np.array(loss_times)

    P = len(presentations)
    t_present_arr = np.array([rec[0] for rec in presentations])
    horizon_arr = np.array([rec[3] for rec in presentations])
    live_idx_arr = np.array([rec[2] for rec in presentations], dtype=np.int64)
    loss_counts = (
        np.searchsorted(loss_arr, t_present_arr, side="right")
        if len(loss_arr)
        else np.zeros(P, dtype=np.int64)
    )

    meta = {
        "truncated": bool(truncated),
        "ticks": int(n_ticks),
        "presented": int(P),
        "total_losses": int(len(loss_times)),
        "mean_horizon_ms": float(horizon_arr.mean()) if P else 0.0,
    }
    return (
        presentations,
        t_present_arr,
        live_idx_arr,
        horizon_arr,
        loss_counts,
        env_snapshots,
        meta,
        times,
        pts,
        duration,
    )


def run_session(config: SessionConfig) -> SessionLog:
    """Simulate the full loop with one predictor and log every presented frame."""
    (
        presentations,
        t_present,
        live_idx,
        horizon,
        loss_counts,
        env_snapshots,
        meta,
        times,
        pts,
        duration,
    ) = _run(config, [config.predictor])

    P = len(presentations)
    n_points = pts.shape[1]
    live = pts[live_idx] if P else np.empty((0, n_points, 3))
    displayed = np.empty((P, n_points, 3))
    react_centroid = np.full((P, 3), np.nan)
    react_count = np.zeros(P, dtype=np.int64)
    for row, rec in enumerate(presentations):
        displayed[row] = rec[4][0].reshape(n_points, 3)
        if rec[5] is not None:
            react_centroid[row] = rec[5]
        react_count[row] = rec[6]
    if config.client_override and P:
        displayed = live.copy()

    return SessionLog(
        t_present_ms=t_present,
        live_points=live,
        displayed_points=displayed,
        horizon_used_ms=horizon,
        packet_loss_count=loss_counts,
        reacting_centroid=react_centroid,
        reacting_count=react_count,
        env_snapshots=env_snapshots,
        config=_config_echo(config, duration),
        meta=meta,
    )


def _mesh_weight_matrix(template: HandTemplate, stride: int = 1) -> np.ndarray:
    idx = np.maximum(template.anchor_idx[::stride], 0)
    w = template.anchor_weights[::stride]
    dense = np.zeros((len(idx), template.rest_points.shape[0]))
    rows = np.arange(len(idx))
    for col in range(idx.shape[1]):
        np.add.at(dense, (rows, idx[:, col]), w[:, col])
    return dense


def _mesh_frame_errors(diffs: np.ndarray, weight_matrix: np.ndarray) -> np.ndarray:
    """Mean per-particle error for a stack of 50-point difference vectors.

    diffs is (..., 150); the result collapses the last axis to the expanded
    mesh's mean particle distance.
    """
    lead = diffs.shape[:-1]
    d = diffs.reshape(-1, 50, 3)
    expanded = weight_matrix @ d.transpose(1, 0, 2).reshape(50, -1)
    expanded = expanded.reshape(len(weight_matrix), -1, 3)
    norms = np.sqrt(np.einsum("mfc,mfc->mf", expanded, expanded))
    return norms.mean(axis=0).reshape(lead)


def run_session_errors(
    config: SessionConfig,
    kinds: list[PredictorKind],
    on_mesh: bool = False,
    template: HandTemplate | None = None,
    mesh_stride: int = 1,
    chunk_size: int = 16,
):
    """One pipeline pass evaluated under several predictors at once.

    Prediction never feeds back into timing (and the environment is off
    here), so every candidate sees the identical event stream; the result
    is exactly what len(kinds) separate runs with the same seed would give.
    With on_mesh the per-frame error is the expanded mesh's mean particle
    distance (optionally on an evenly strided sub-mesh); otherwise it is
    taken on the 50 tracked points. Returns (t_present (P,), errors (P, K)).
    """
    if config.env is not None:
        raise ValueError("multi-predictor evaluation does not support the environment")
    wmat = None
    if on_mesh:
        wmat = _mesh_weight_matrix(template or default_template(), mesh_stride)

    t_out = None
    cols = []
    for lo in range(0, len(kinds), chunk_size):
        chunk = kinds[lo : lo + chunk_size]
        (
            presentations,
            t_present,
            live_idx,
            _horizon,
            _loss,
            _snaps,
            _meta,
            _times,
            pts,
            _duration,
        ) = _run(config, chunk)
        t_out = t_present
        P = len(presentations)
        if P == 0:
            cols.append(np.empty((0, len(chunk))))
            continue
        if config.client_override:
            cols.append(np.zeros((P, len(chunk))))
            continue
        preds = np.stack([rec[4] for rec in presentations])  # (P, Kc, 150)
        live_flat = pts[live_idx].reshape(P, 1, -1)
        diffs = preds - live_flat
        if on_mesh:
            cols.append(_mesh_frame_errors(diffs, wmat))
        else:
            cols.append(np.linalg.norm(diffs.reshape(P, len(chunk), -1, 3), axis=3).mean(axis=2))
    errors = np.concatenate(cols, axis=1) if cols else np.empty((0, len(kinds)))
    return t_out, errors


def replay_compare(log: SessionLog, on_mesh: bool = False, template: HandTemplate | None = None) -> metrics.ErrorSeries:
    """Per-presented-frame error between displayed and live state.

    By default the error is measured on the 50 tracked points themselves;
    passing on_mesh=True expands both sides through the template first.
    """
    errs = np.empty(len(log))
    if on_mesh:
        tpl = template or default_template()
        for i in range(len(log)):
            errs[i] = metrics.frame_error(
                expand_points(log.displayed_points[i], tpl),
                expand_points(log.live_points[i], tpl),
            )
    else:
        for i in range(len(log)):
            errs[i] = metrics.frame_error(log.displayed_points[i], log.live_points[i])
    return metrics.ErrorSeries(t_ms=log.t_present_ms, error_mm=errs)


def session_stats(log: SessionLog) -> metrics.SummaryStats:
    stats, _ = metrics.aggregate(replay_compare(log))
    return stats


# --- serialization -----------------------------------------------------------


def write_session_log(log: SessionLog, path: str) -> None:
    """JSONL: a metadata header line, then one line per presented frame."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"config": log.config, "meta": log.meta}, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
        for i in range(len(log)):
            env_obj = None
            if log.reacting_count[i] or not np.isnan(log.reacting_centroid[i, 0]):
                env_obj = {
                    "reacting_centroid": [None if np.isnan(v) else v for v in log.reacting_centroid[i].tolist()],
                    "reacting_count": int(log.reacting_count[i]),
                }
            fh.write(
                json.dumps(
                    {
                        "t_present_ms": float(log.t_present_ms[i]),
                        "live_points": log.live_points[i].tolist(),
                        "displayed_points": log.displayed_points[i].tolist(),
                        "horizon_used_ms": float(log.horizon_used_ms[i]),
                        "packet_loss_count": int(log.packet_loss_count[i]),
                        "env": env_obj,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def read_session_log(path: str) -> SessionLog:
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    P = len(rows)
    n_points = len(rows[0]["live_points"]) if P else 0
    live = np.array([r["live_points"] for r in rows]).reshape(P, n_points, 3)
    displayed = np.array([r["displayed_points"] for r in rows]).reshape(P, n_points, 3)
    centroid = np.full((P, 3), np.nan)
    counts = np.zeros(P, dtype=np.int64)
    for i, r in enumerate(rows):
        if r.get("env"):
            c = r["env"]["reacting_centroid"]
            if c and c[0] is not None:
                centroid[i] = c
            counts[i] = r["env"]["reacting_count"]
    return SessionLog(
        t_present_ms=np.array([r["t_present_ms"] for r in rows]),
        live_points=live,
        displayed_points=displayed,
        horizon_used_ms=np.array([r["horizon_used_ms"] for r in rows]),
        packet_loss_count=np.array([r["packet_loss_count"] for r in rows], dtype=np.int64),
        reacting_centroid=centroid,
        reacting_count=counts,
        env_snapshots=[],
        config=header["config"],
        meta=header["meta"],
    )
