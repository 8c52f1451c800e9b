"""Synthetic hand-motion traces.

A trace is a stream of timestamped input samples, each carrying 50 tracked
points (two rigid 25-point hands). The motion profile is a back-and-forth
sweep along one axis: constant-speed legs joined by short turnarounds in
which the velocity blends through a half cosine, v(tau) = V*cos(pi*tau/T).
The blend integrates to zero net displacement, so each turnaround returns
to the reversal point before the next leg starts.

Tracking noise is modeled as independent per-axis Gaussian jitter added to
every point of every sample. All randomness flows through numpy's PCG64
generator so a (profile, template, seed) triple reproduces the same trace
bit for bit on any platform.

Units are millimeters and milliseconds throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

POINT_COUNT = 50
POINTS_PER_HAND = 25


@dataclass(frozen=True)
class MotionProfile:
    """Back-and-forth sweep: legs at constant speed, cosine-blended turnarounds."""

    speed_mm_s: float = 1000.0
    leg_duration_s: float = 2.9
    transition_duration_s: float = 70.0 / 133.0
    direction_changes: int = 7
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    sample_interval_ms: float = 11.0

    def __post_init__(self):
        if self.speed_mm_s < 0:
            raise ValueError("speed_mm_s must be >= 0")
        if self.transition_duration_s <= 0:
            raise ValueError("transition_duration_s must be > 0")
        if self.sample_interval_ms <= 0:
            raise ValueError("sample_interval_ms must be > 0")
        if self.direction_changes < 0:
            raise ValueError("direction_changes must be >= 0")
        norm = math.sqrt(sum(c * c for c in self.axis))
        if not (norm > 0 and math.isfinite(norm)):
            raise ValueError("axis must be a nonzero finite vector")

    @property
    def axis_unit(self) -> np.ndarray:
        a = np.asarray(self.axis, dtype=float)
        return a / np.linalg.norm(a)

    @property
    def duration_s(self) -> float:
        legs = self.direction_changes + 1
        return legs * self.leg_duration_s + self.direction_changes * self.transition_duration_s

    @property
    def duration_ms(self) -> float:
        return self.duration_s * 1000.0


@dataclass(frozen=True)
class NoiseModel:
    sigma_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_mm < 0:
            raise ValueError("sigma_mm must be >= 0")


@dataclass(frozen=True)
class TrackedFrame:
    """One input sample: 50 points at a capture timestamp."""

    seq: int
    t_ms: float
    points: np.ndarray  # (50, 3) float64, mm

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (POINT_COUNT, 3):
            raise ValueError(f"expected ({POINT_COUNT}, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class HandTemplate:
    """Rest pose plus the anchor table that expands 50 points into a particle mesh.

    Each mesh particle is a convex combination of two or three template
    points; `anchor_idx` rows are padded with -1 where only two anchors are
    used (the matching weight is 0).
    """

    rest_points: np.ndarray  # (50, 3)
    anchor_idx: np.ndarray  # (M, 3) int, -1 padding
    anchor_weights: np.ndarray  # (M, 3) float, rows sum to 1

    def __post_init__(self):
        rest = np.asarray(self.rest_points, dtype=float)
        idx = np.asarray(self.anchor_idx, dtype=np.int64)
        w = np.asarray(self.anchor_weights, dtype=float)
        if rest.shape != (POINT_COUNT, 3):
            raise ValueError(f"rest_points must be ({POINT_COUNT}, 3)")
        if idx.shape != w.shape or idx.ndim != 2 or idx.shape[1] != 3:
            raise ValueError("anchor_idx and anchor_weights must both be (M, 3)")
        if idx.max() >= POINT_COUNT:
            raise ValueError("anchor index out of range")
        if np.any((idx < 0) & (w != 0.0)):
            raise ValueError("padded anchors must carry zero weight")
        if not np.allclose(w.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("anchor weights must sum to 1 per particle")
        if np.any(w < -1e-12):
            raise ValueError("anchor weights must be nonnegative")
        object.__setattr__(self, "rest_points", rest)
        object.__setattr__(self, "anchor_idx", idx)
        object.__setattr__(self, "anchor_weights", w)

    @property
    def mesh_size(self) -> int:
        return self.anchor_idx.shape[0]


@dataclass(frozen=True)
class HandMesh:
    particles: np.ndarray  # (M, 3)


# --- motion path ----------------------------------------------------------


def path_position(profile: MotionProfile, t_ms) -> np.ndarray:
    """Signed distance along the travel axis at time t (scalar or array, ms).

    Piecewise: leg k runs at dir_k * V; the following turnaround adds
    dir_k * V * (T/pi) * sin(pi*tau/T), which starts and ends at zero, so
    leg k+1 resumes from the same reversal point with the sign flipped.
    """
    t = np.asarray(t_ms, dtype=float) / 1000.0
    V = profile.speed_mm_s
    L = profile.leg_duration_s
    T = profile.transition_duration_s
    cycle = L + T
    n_legs = profile.direction_changes + 1

    t = np.clip(t, 0.0, profile.duration_s)
    k = np.minimum(np.floor(t / cycle).astype(np.int64), n_legs - 1)
    tau = t - k * cycle
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    # Position at the start of leg k: legs alternate direction, turnarounds
    # contribute nothing net.
    start = np.where(k % 2 == 0, 0.0, V * L)

    in_leg = tau <= L
    leg_pos = start + sign * V * np.minimum(tau, L)
    blend = sign * V * (T / math.pi) * np.sin(math.pi * np.clip(tau - L, 0.0, T) / T)
    pos = np.where(in_leg, leg_pos, start + sign * V * L + blend)
    return pos if pos.ndim else float(pos)


def leg_intervals(profile: MotionProfile) -> list[tuple[float, float]]:
    """(start_ms, end_ms) of every constant-velocity leg."""
    cycle = (profile.leg_duration_s + profile.transition_duration_s) * 1000.0
    leg = profile.leg_duration_s * 1000.0
    return [(k * cycle, k * cycle + leg) for k in range(profile.direction_changes + 1)]


# --- trace generation -----------------------------------------------------


def sample_times_ms(profile: MotionProfile) -> np.ndarray:
    n = int(math.floor(profile.duration_ms / profile.sample_interval_ms + 1e-9)) + 1
    return np.arange(n, dtype=float) * profile.sample_interval_ms


def gen_trace(
    profile: MotionProfile,
    template: HandTemplate,
    noise: NoiseModel = NoiseModel(),
) -> list[TrackedFrame]:
    """Sample the motion path every sample_interval_ms and add tracking noise.

    All 50 template points translate rigidly along the path. Noise is drawn
    per point per axis after path evaluation; the same seed reproduces the
    identical trace.
    """
    times = sample_times_ms(profile)
    s = path_position(profile, times)
    axis = profile.axis_unit
    pts = template.rest_points[None, :, :] + s[:, None, None] * axis[None, None, :]
    if noise.sigma_mm > 0:
        rng = np.random.Generator(np.random.PCG64(noise.seed))
        pts = pts + rng.normal(0.0, noise.sigma_mm, size=pts.shape)
    return [TrackedFrame(seq=i, t_ms=float(times[i]), points=pts[i]) for i in range(len(times))]


def apply_noise(frame: TrackedFrame, noise: NoiseModel, rng: np.random.Generator) -> TrackedFrame:
    """Perturb every coordinate with independent Gaussian(0, sigma^2); timestamps unchanged."""
    if noise.sigma_mm == 0:
        return frame
    jitter = rng.normal(0.0, noise.sigma_mm, size=frame.points.shape)
    return TrackedFrame(seq=frame.seq, t_ms=frame.t_ms, points=frame.points + jitter)


def expand_hand(points: np.ndarray, template: HandTemplate) -> HandMesh:
    """Blend the 50 tracked points into the template's particle mesh."""
    pts = np.asarray(points, dtype=float)
    if pts.shape != (POINT_COUNT, 3):
        raise ValueError(f"expected ({POINT_COUNT}, 3) points, got {pts.shape}")
    return HandMesh(particles=expand_points(pts, template))


def expand_points(pts: np.ndarray, template: HandTemplate) -> np.ndarray:
    # idx -1 rows carry zero weight, so clipping them to 0 is harmless.
    idx = np.maximum(template.anchor_idx, 0)
    return np.einsum("mk,mkc->mc", template.anchor_weights, pts[idx])


# --- the default two-hand template ----------------------------------------

# One hand: wrist, four palm corners, and four joints per digit (base to tip),
# 25 points in a flat-ish rest pose. Coordinates are mm in hand-local space.
_HAND_LOCAL = np.array(
    [
        (0.0, -85.0, 0.0),  # wrist
        (-28.0, -50.0, 0.0),  # palm base left
        (28.0, -50.0, 0.0),  # palm base right
        (-22.0, -15.0, 0.0),  # palm top left
        (22.0, -15.0, 0.0),  # palm top right
        (-45.0, -45.0, 8.0), (-58.0, -30.0, 12.0), (-66.0, -18.0, 14.0), (-72.0, -8.0, 15.0),  # thumb
        (-30.0, -5.0, 0.0), (-34.0, 15.0, 2.0), (-36.0, 30.0, 3.0), (-38.0, 42.0, 4.0),  # index
        (-10.0, 0.0, 0.0), (-11.0, 22.0, 2.0), (-12.0, 38.0, 3.0), (-13.0, 50.0, 4.0),  # middle
        (10.0, -2.0, 0.0), (11.0, 18.0, 2.0), (12.0, 33.0, 3.0), (13.0, 44.0, 4.0),  # ring
        (28.0, -8.0, 0.0), (32.0, 8.0, 1.0), (34.0, 20.0, 2.0), (36.0, 30.0, 3.0),  # pinky
    ]
)

_SEGMENTS = [
    (0, 1), (0, 2), (1, 3), (2, 4), (3, 4), (1, 2),
    (1, 5), (5, 6), (6, 7), (7, 8),
    (3, 9), (9, 10), (10, 11), (11, 12),
    (3, 13), (13, 14), (14, 15), (15, 16),
    (4, 17), (17, 18), (18, 19), (19, 20),
    (4, 21), (21, 22), (22, 23), (23, 24),
]

_TRIANGLES = [(0, 1, 2), (1, 2, 3), (2, 3, 4), (3, 4, 1)]

_PARTICLES_PER_SEGMENT = 15
_PARTICLES_PER_TRIANGLE = 65

_PHI = (math.sqrt(5.0) - 1.0) / 2.0

# Mesh particles crowd toward the tracked skeleton points (joints carry the
# visual detail of a hand); these exponents set how hard they cluster.
_SEGMENT_CLUSTER = 3.0
_TRIANGLE_PULL = 3.0


def _segment_u(i: int, m: int = _PARTICLES_PER_SEGMENT) -> float:
    u = (i + 1) / (m + 1)
    if u < 0.5:
        return 0.5 * (2.0 * u) ** _SEGMENT_CLUSTER
    return 1.0 - 0.5 * (2.0 * (1.0 - u)) ** _SEGMENT_CLUSTER


def _triangle_weights(k: int) -> tuple[float, float, float]:
    # Kronecker low-discrepancy pair folded into the unit triangle, then
    # pulled toward the nearest vertex.
    u = (k * _PHI) % 1.0
    v = (k * _PHI * _PHI) % 1.0
    if u + v > 1.0:
        u, v = 1.0 - u, 1.0 - v
    w = np.array([1.0 - u - v, u, v]) ** _TRIANGLE_PULL
    w = w / w.sum()
    return float(w[0]), float(w[1]), float(w[2])


def default_template(hand_offset_mm: float = 110.0) -> HandTemplate:
    """Two mirrored 25-point hands plus a 1300-particle expansion table."""
    left = _HAND_LOCAL + np.array([-hand_offset_mm, 0.0, 0.0])
    right = _HAND_LOCAL * np.array([-1.0, 1.0, 1.0]) + np.array([hand_offset_mm, 0.0, 0.0])
    rest = np.vstack([left, right])

    idx_rows: list[tuple[int, int, int]] = []
    w_rows: list[tuple[float, float, float]] = []
    for hand in range(2):
        base = hand * POINTS_PER_HAND
        for a, b in _SEGMENTS:
            for i in range(_PARTICLES_PER_SEGMENT):
                u = _segment_u(i)
                idx_rows.append((base + a, base + b, -1))
                w_rows.append((1.0 - u, u, 0.0))
        for a, b, c in _TRIANGLES:
            for k in range(_PARTICLES_PER_TRIANGLE):
                w0, w1, w2 = _triangle_weights(k)
                idx_rows.append((base + a, base + b, base + c))
                w_rows.append((w0, w1, w2))
    return HandTemplate(
        rest_points=rest,
        anchor_idx=np.array(idx_rows, dtype=np.int64),
        anchor_weights=np.array(w_rows, dtype=float),
    )


# --- serialization --------------------------------------------------------


def write_trace(frames: list[TrackedFrame], path: str) -> None:
    """JSONL, one frame per line: {"seq":..,"t_ms":..,"points":[[x,y,z]*50]}."""
    with open(path, "w") as fh:
        for f in frames:
            fh.write(
                json.dumps(
                    {"seq": f.seq, "t_ms": f.t_ms, "points": f.points.tolist()},
                    separators=(",", ":"),
                )
            )
            fh.write("\n")


def read_trace(path: str) -> list[TrackedFrame]:
    frames = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            frames.append(
                TrackedFrame(seq=obj["seq"], t_ms=obj["t_ms"], points=np.array(obj["points"]))
            )
    return frames


def save_template(template: HandTemplate, path: str) -> None:
    obj = {
        "rest_points": template.rest_points.tolist(),
        "expansion_anchors": {
            "indices": template.anchor_idx.tolist(),
            "weights": template.anchor_weights.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, separators=(",", ":"))


def load_template(path: str) -> HandTemplate:
    with open(path) as fh:
        obj = json.load(fh)
    anchors = obj["expansion_anchors"]
    return HandTemplate(
        rest_points=np.array(obj["rest_points"]),
        anchor_idx=np.array(anchors["indices"], dtype=np.int64),
        anchor_weights=np.array(anchors["weights"]),
    )


def frames_to_arrays(frames: list[TrackedFrame]) -> tuple[np.ndarray, np.ndarray]:
    """(times_ms (F,), points (F, 50, 3)) views of a frame list."""
    times = np.array([f.t_ms for f in frames], dtype=float)
    pts = np.stack([f.points for f in frames])
    return times, pts
