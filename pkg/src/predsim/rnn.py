"""Small recurrent predictors (GRU / LSTM) trained per prediction horizon.

One model reads a fixed-length window of a single channel and emits the
displacement it expects at its trained horizon. Inputs are min-max
normalized per window and the output is scaled back by the window's range,
which keeps the same weights usable on any axis of any tracked point.

Cell equations are the standard formulations with sigmoid gates and tanh
candidates:

    GRU:   z = sig(Wz x + Uz h + bz)        LSTM:  i = sig(Wi x + Ui h + bi)
           r = sig(Wr x + Ur h + br)               f = sig(Wf x + Uf h + bf)
           g = tanh(Wh x + Uh (r*h) + bh)          o = sig(Wo x + Uo h + bo)
           h' = (1 - z) * h + z * g                g = tanh(Wg x + Ug h + bg)
                                                   c' = f * c + i * g
                                                   h' = o * tanh(c')

Training is plain mini-batch gradient descent on mean squared error with
full backpropagation through the window. There is deliberately no horizon
input: a model answers only for the horizon it was trained on, and asking
for any other horizon is a usage error surfaced by the caller.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import trace as trace_mod

_NORM_EPS = 1e-9


def _sigmoid(x):
    # exp may overflow for hugely negative inputs; the saturation to 0 is
    # exactly the right answer, so silence the warning rather than branch.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class RnnSpec:
    cell: str  # "gru" or "lstm"
    input_len: int = 60
    hidden_units: int = 10
    output_units: int = 1

    def __post_init__(self):
        if self.cell not in ("gru", "lstm"):
            raise ValueError("cell must be 'gru' or 'lstm'")
        if min(self.input_len, self.hidden_units, self.output_units) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.output_units != 1:
            raise ValueError("only a single output unit is supported")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 40
    batch_size: int = 64
    seed: int = 0
    dataset_size: int = 20000

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.learning_rate == 0:
            # Explicitly allowed: a zero rate trains nothing and changes nothing.
            pass


_GRU_GATES = ("z", "r", "h")
_LSTM_GATES = ("i", "f", "o", "g")


class RnnModel:
    """Weights for one cell type at one horizon."""

    def __init__(self, spec: RnnSpec, horizon_ms: float, params: dict[str, np.ndarray]):
        self.spec = spec
        self.horizon_ms = float(horizon_ms)
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self._check_shapes()

    def _check_shapes(self):
        H = self.spec.hidden_units
        gates = _GRU_GATES if self.spec.cell == "gru" else _LSTM_GATES
        for g in gates:
            assert self.params[f"W{g}"].shape == (H,)
            assert self.params[f"U{g}"].shape == (H, H)
            assert self.params[f"b{g}"].shape == (H,)
        assert self.params["w_out"].shape == (H,)
        assert np.ndim(self.params["b_out"]) == 0
        for v in self.params.values():
            if not np.all(np.isfinite(v)):
                raise ValueError("model weights must be finite")

    def copy(self) -> "RnnModel":
        return RnnModel(self.spec, self.horizon_ms, {k: v.copy() for k, v in self.params.items()})

    # -- inference ---------------------------------------------------------

    def step(self, state, x: float):
        """Advance the recurrent state by one scalar input."""
        if self.spec.cell == "gru":
            h = np.atleast_2d(state)
            h2, _ = _gru_steps(self.params, h, np.array([float(x)]))
            return h2[0]
        h, c = state
        (h2, c2), _ = _lstm_steps(self.params, np.atleast_2d(h), np.atleast_2d(c), np.array([float(x)]))
        return h2[0], c2[0]

    def initial_state(self, batch: int = 1):
        H = self.spec.hidden_units
        if self.spec.cell == "gru":
            return np.zeros((batch, H))
        return np.zeros((batch, H)), np.zeros((batch, H))

    def forward_batch(self, windows: np.ndarray) -> np.ndarray:
        """Predicted displacement (same unit as the windows) for each row."""
        w = np.atleast_2d(np.asarray(windows, dtype=float))
        if w.shape[1] != self.spec.input_len:
            raise ValueError(f"window length {w.shape[1]} != input_len {self.spec.input_len}")
        xn, rng = _normalize_windows(w)
        y, _ = _forward_core(self, xn)
        return y * rng

    def forward(self, window: np.ndarray) -> float:
        return float(self.forward_batch(np.asarray(window)[None, :])[0])

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "cell": self.spec.cell,
            "input_len": self.spec.input_len,
            "hidden_units": self.spec.hidden_units,
            "output_units": self.spec.output_units,
            "horizon_ms": self.horizon_ms,
            "normalization": "window_minmax",
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RnnModel":
        spec = RnnSpec(
            cell=obj["cell"],
            input_len=obj["input_len"],
            hidden_units=obj["hidden_units"],
            output_units=obj.get("output_units", 1),
        )
        params = {k: np.array(v) for k, v in obj["params"].items()}
        params["b_out"] = np.float64(obj["params"]["b_out"])
        return cls(spec, obj["horizon_ms"], params)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"), sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "RnnModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def init_model(spec: RnnSpec, horizon_ms: float, seed: int = 0) -> RnnModel:
    rng = np.random.Generator(np.random.PCG64(seed))
    H = spec.hidden_units
    gates = _GRU_GATES if spec.cell == "gru" else _LSTM_GATES
    params: dict[str, np.ndarray] = {}
    for g in gates:
        params[f"W{g}"] = rng.normal(0.0, 0.5, size=H)
        params[f"U{g}"] = rng.normal(0.0, 1.0 / math.sqrt(H), size=(H, H))
        params[f"b{g}"] = np.zeros(H)
    params["w_out"] = rng.normal(0.0, 1.0 / math.sqrt(H), size=H)
    params["b_out"] = np.float64(0.0)
    return RnnModel(spec, horizon_ms, params)


def zero_model(spec: RnnSpec, horizon_ms: float) -> RnnModel:
    H = spec.hidden_units
    gates = _GRU_GATES if spec.cell == "gru" else _LSTM_GATES
    params = {}
    for g in gates:
        params[f"W{g}"] = np.zeros(H)
        params[f"U{g}"] = np.zeros((H, H))
        params[f"b{g}"] = np.zeros(H)
    params["w_out"] = np.zeros(H)
    params["b_out"] = np.float64(0.0)
    return RnnModel(spec, horizon_ms, params)


def _normalize_windows(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = w.min(axis=1, keepdims=True)
    rng = w.max(axis=1, keepdims=True) - lo
    rng = np.where(rng < _NORM_EPS, 1.0, rng)
    return (w - lo) / rng, rng[:, 0]


# --- forward/backward cores -------------------------------------------------


def _gru_steps(p, h, x):
    z = _sigmoid(x[:, None] * p["Wz"] + h @ p["Uz"] + p["bz"])
    r = _sigmoid(x[:, None] * p["Wr"] + h @ p["Ur"] + p["br"])
    g = np.tanh(x[:, None] * p["Wh"] + (r * h) @ p["Uh"] + p["bh"])
    h2 = (1.0 - z) * h + z * g
    return h2, (z, r, g, h)


def _lstm_steps(p, h, c, x):
    i = _sigmoid(x[:, None] * p["Wi"] + h @ p["Ui"] + p["bi"])
    f = _sigmoid(x[:, None] * p["Wf"] + h @ p["Uf"] + p["bf"])
    o = _sigmoid(x[:, None] * p["Wo"] + h @ p["Uo"] + p["bo"])
    g = np.tanh(x[:, None] * p["Wg"] + h @ p["Ug"] + p["bg"])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return (h2, c2), (i, f, o, g, h, c, c2)


def _forward_core(model: RnnModel, xn: np.ndarray):
    """Run the cell across normalized windows; returns (readout (B,), caches)."""
    p = model.params
    B, T = xn.shape
    caches = []
    if model.spec.cell == "gru":
        h = np.zeros((B, model.spec.hidden_units))
        for t in range(T):
            h, cache = _gru_steps(p, h, xn[:, t])
            caches.append(cache)
        y = h @ p["w_out"] + p["b_out"]
        return y, (caches, h)
    h = np.zeros((B, model.spec.hidden_units))
    c = np.zeros((B, model.spec.hidden_units))
    for t in range(T):
        (h, c), cache = _lstm_steps(p, h, c, xn[:, t])
        caches.append(cache)
    y = h @ p["w_out"] + p["b_out"]
    return y, (caches, h)


def _backward_core(model: RnnModel, xn: np.ndarray, y: np.ndarray, targets: np.ndarray, fw_cache):
    """Gradients of mean squared error over the batch, for every parameter."""
    p = model.params
    caches, h_final = fw_cache
    B, T = xn.shape
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dy = 2.0 * (y - targets) / B  # d(mse)/dy
    grads["w_out"] = h_final.T @ dy
    grads["b_out"] = np.float64(dy.sum())
    dh = dy[:, None] * p["w_out"][None, :]

    if model.spec.cell == "gru":
        for t in range(T - 1, -1, -1):
            z, r, g, h_prev = caches[t]
            x = xn[:, t]
            dz = dh * (g - h_prev)
            dg = dh * z
            dh_prev = dh * (1.0 - z)
            dg_pre = dg * (1.0 - g * g)
            drh = dg_pre @ p["Uh"].T
            dr = drh * h_prev
            dh_prev = dh_prev + drh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            grads["Wh"] += x @ dg_pre
            grads["Uh"] += (r * h_prev).T @ dg_pre
            grads["bh"] += dg_pre.sum(axis=0)
            grads["Wz"] += x @ dz_pre
            grads["Uz"] += h_prev.T @ dz_pre
            grads["bz"] += dz_pre.sum(axis=0)
            grads["Wr"] += x @ dr_pre
            grads["Ur"] += h_prev.T @ dr_pre
            grads["br"] += dr_pre.sum(axis=0)
            dh = dh_prev + dz_pre @ p["Uz"].T + dr_pre @ p["Ur"].T
        return grads

    dc = np.zeros_like(dh)
    for t in range(T - 1, -1, -1):
        i, f, o, g, h_prev, c_prev, c2 = caches[t]
        x = xn[:, t]
        tc = np.tanh(c2)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dc_prev = dc * f
        di_pre = di * i * (1.0 - i)
        df_pre = df * f * (1.0 - f)
        do_pre = do * o * (1.0 - o)
        dg_pre = dg * (1.0 - g * g)
        for name, dpre in (("i", di_pre), ("f", df_pre), ("o", do_pre), ("g", dg_pre)):
            grads[f"W{name}"] += x @ dpre
            grads[f"U{name}"] += h_prev.T @ dpre
            grads[f"b{name}"] += dpre.sum(axis=0)
        dh = (
            di_pre @ p["Ui"].T
            + df_pre @ p["Uf"].T
            + do_pre @ p["Uo"].T
            + dg_pre @ p["Ug"].T
        )
        dc = dc_prev
    return grads


# --- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: RnnModel
    epoch_losses: list[float]


def _loss_and_grads(model: RnnModel, xn: np.ndarray, tn: np.ndarray):
    y, cache = _forward_core(model, xn)
    loss = float(np.mean((y - tn) ** 2))
    grads = _backward_core(model, xn, y, tn, cache)
    return loss, grads


def train(
    spec: RnnSpec,
    windows: np.ndarray,
    targets_mm: np.ndarray,
    horizon_ms: float,
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch gradient descent; keeps the best-epoch weights.

    `windows` are raw-unit (mm) input rows; `targets_mm` is the displacement
    each window should predict at the horizon. Both are normalized per
    window before optimization. Raises RuntimeError if the loss diverges.
    """
    w = np.asarray(windows, dtype=float)
    t = np.asarray(targets_mm, dtype=float)
    if w.ndim != 2 or w.shape[1] != spec.input_len or len(w) != len(t):
        raise ValueError("windows must be (N, input_len) aligned with targets")
    xn, rng_scale = _normalize_windows(w)
    tn = t / rng_scale

    model = init_model(spec, horizon_ms, seed=config.seed)
    shuffler = np.random.Generator(np.random.PCG64(config.seed + 1))
    best = model.copy()
    best_loss = math.inf
    losses = []
    n = len(w)
    bs = min(config.batch_size, n)
    for _ in range(config.epochs):
        order = shuffler.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, bs):
            sel = order[lo : lo + bs]
            loss, grads = _loss_and_grads(model, xn[sel], tn[sel])
            if not math.isfinite(loss):
                raise RuntimeError(f"training diverged (loss={loss})")
            epoch_loss += loss * len(sel)
            if config.learning_rate:
                for k, gval in grads.items():
                    model.params[k] = model.params[k] - config.learning_rate * gval
        epoch_loss /= n
        losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = model.copy()
    return TrainResult(model=best, epoch_losses=losses)


def dataset_loss(model: RnnModel, windows: np.ndarray, targets_mm: np.ndarray) -> float:
    xn, rng_scale = _normalize_windows(np.asarray(windows, dtype=float))
    tn = np.asarray(targets_mm, dtype=float) / rng_scale
    y, _ = _forward_core(model, xn)
    return float(np.mean((y - tn) ** 2))


# --- gradient verification ---------------------------------------------------


def grad_check(model: RnnModel, window: np.ndarray, target_mm: float, eps: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients."""
    w = np.asarray(window, dtype=float)[None, :]
    xn, rng_scale = _normalize_windows(w)
    tn = np.array([target_mm]) / rng_scale
    _, analytic = _loss_and_grads(model, xn, tn)

    worst = 0.0
    for key in model.params:
        p = model.params[key]
        if np.ndim(p) == 0:
            grid = [()]
        else:
            grid = list(np.ndindex(p.shape))
        for idx in grid:
            orig = p[idx] if idx != () else float(p)
            m_plus = model.copy()
            m_minus = model.copy()
            if idx == ():
                m_plus.params[key] = np.float64(orig + eps)
                m_minus.params[key] = np.float64(orig - eps)
            else:
                m_plus.params[key][idx] = orig + eps
                m_minus.params[key][idx] = orig - eps
            yp, _ = _forward_core(m_plus, xn)
            ym, _ = _forward_core(m_minus, xn)
            lp = float(np.mean((yp - tn) ** 2))
            lm = float(np.mean((ym - tn) ** 2))
            numeric = (lp - lm) / (2.0 * eps)
            ana = analytic[key][idx] if idx != () else float(analytic[key])
            scale = max(abs(numeric), abs(ana), 1e-8)
            worst = max(worst, abs(numeric - ana) / scale)
    return worst


# --- dataset construction -----------------------------------------------------


def build_dataset(
    horizon_ms: float,
    n_windows: int,
    input_len: int = 60,
    sample_interval_ms: float = 11.0,
    sigma_mm: float = 1.06,
    seed: int = 0,
    speed_jitter: float = 0.35,
    turn_boost: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows over randomized back-and-forth motion, one scalar channel.

    Profiles vary in speed and leg duration around the defaults so a model
    learns the motion family rather than one exact benchmark trajectory.
    Direction changes are where prediction is hard, so windows ending in or
    near a turnaround are sampled turn_boost times more densely. Targets are
    the channel's observed value at window-end + horizon, linearly
    interpolated between samples, minus the window's last value.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    windows = []
    targets = []
    while len(windows) < n_windows:
        profile = trace_mod.MotionProfile(
            speed_mm_s=1000.0 * (1.0 + rng.uniform(-speed_jitter, speed_jitter)),
            leg_duration_s=float(rng.uniform(1.6, 3.4)),
            transition_duration_s=float(rng.uniform(0.35, 0.75)),
            direction_changes=3,
            sample_interval_ms=sample_interval_ms,
        )
        times = trace_mod.sample_times_ms(profile)
        series = trace_mod.path_position(profile, times)
        if sigma_mm > 0:
            series = series + rng.normal(0.0, sigma_mm, size=series.shape)
        horizon_steps = horizon_ms / sample_interval_ms
        last_start = int(len(series) - input_len - math.ceil(horizon_steps) - 1)
        if last_start <= 0:
            continue
        turn_spans = []
        cycle_ms = (profile.leg_duration_s + profile.transition_duration_s) * 1000.0
        leg_ms = profile.leg_duration_s * 1000.0
        pad = profile.transition_duration_s * 500.0
        for c in range(profile.direction_changes):
            turn_spans.append((c * cycle_ms + leg_ms - pad, (c + 1) * cycle_ms + pad))
        base_stride = 3
        turn_stride = max(1, base_stride // max(turn_boost, 1))
        for start in range(0, last_start):
            end = start + input_len - 1
            near_turn = any(lo <= times[end] <= hi for lo, hi in turn_spans)
            stride = turn_stride if near_turn else base_stride
            if start % stride != 0:
                continue
            target_pos = end + horizon_steps
            k = int(math.floor(target_pos))
            frac = target_pos - k
            target_val = series[k] * (1.0 - frac) + series[k + 1] * frac
            windows.append(series[start : start + input_len])
            targets.append(target_val - series[end])
            if len(windows) >= n_windows:
                break
    return np.array(windows), np.array(targets)
