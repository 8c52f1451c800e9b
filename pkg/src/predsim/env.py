"""Server-side particle field that reacts to the (predicted) hand mesh.

Free particles feel a repulsive spring from every hand particle closer than
the interaction radius, integrated with damped semi-implicit Euler. This is
deliberately minimal dynamics: just enough for "the environment reacts to
the hand" to be observable and measurable. Neighbor queries run on a
uniform spatial hash grid with cell size equal to the radius, so only the
27 cells around a particle are ever inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trace import HandMesh

MM_PER_S2_TO_MM_PER_MS2 = 1e-6


@dataclass(frozen=True)
class EnvConfig:
    """Defaults size the box to hug the corridor the benchmark motion sweeps,
    so the hand actually wades through particles rather than empty space."""

    particle_count: int = 10000
    interaction_radius_mm: float = 15.0
    stiffness: float = 50.0  # mm/s^2 of acceleration per mm of overlap
    damping: float = 0.98  # velocity retention per step
    dt_ms: float = 1000.0 / 133.0
    bounds_lo: tuple[float, float, float] = (-250.0, -130.0, -25.0)
    bounds_hi: tuple[float, float, float] = (3150.0, 100.0, 40.0)
    seed: int = 0

    def __post_init__(self):
        if self.interaction_radius_mm <= 0:
            raise ValueError("interaction radius must be > 0")
        if self.particle_count < 0:
            raise ValueError("particle_count must be >= 0")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must be in (0, 1]")
        if self.dt_ms <= 0:
            raise ValueError("dt_ms must be > 0")


@dataclass
class EnvState:
    positions: np.ndarray  # (N, 3) mm
    velocities: np.ndarray  # (N, 3) mm/ms


def init_state(cfg: EnvConfig) -> EnvState:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    lo = np.array(cfg.bounds_lo)
    hi = np.array(cfg.bounds_hi)
    pos = rng.uniform(lo, hi, size=(cfg.particle_count, 3))
    return EnvState(positions=pos, velocities=np.zeros_like(pos))


def _cell_key(coords: np.ndarray, radius: float) -> np.ndarray:
    return np.floor(coords / radius).astype(np.int64)


def hand_forces(
    positions: np.ndarray, hand: np.ndarray, cfg: EnvConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Repulsion from hand particles within the radius, via the hash grid.

    Returns (accelerations mm/ms^2, indices of particles with a nonzero
    interaction). Accumulation order is fixed (particle index, then hand
    index), so results are bitwise reproducible.
    """
    r = cfg.interaction_radius_mm
    n = len(positions)
    acc = np.zeros((n, 3))
    if len(hand) == 0 or n == 0:
        return acc, np.empty(0, dtype=np.int64)

    # Particles outside the hand's padded bounding box cannot interact.
    pad = r * 1.0001
    box_lo = hand.min(axis=0) - pad
    box_hi = hand.max(axis=0) + pad
    near = np.nonzero(np.all((positions >= box_lo) & (positions <= box_hi), axis=1))[0]
    if len(near) == 0:
        return acc, near

    grid: dict[tuple[int, int, int], list[int]] = {}
    for j, key in enumerate(map(tuple, _cell_key(hand, r))):
        grid.setdefault(key, []).append(j)
    grid_arrays = {k: np.array(v, dtype=np.int64) for k, v in grid.items()}

    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    near_cells = _cell_key(positions[near], r)
    reacting = []
    for row, i in enumerate(near):
        cx, cy, cz = near_cells[row]
        cand = [
            grid_arrays[key]
            for key in ((cx + ox, cy + oy, cz + oz) for ox, oy, oz in offsets)
            if key in grid_arrays
        ]
        if not cand:
            continue
        js = np.sort(np.concatenate(cand))
        delta = positions[i] - hand[js]
        dist = np.linalg.norm(delta, axis=1)
        mask = (dist < r) & (dist > 1e-12)
        if not np.any(mask):
            continue
        d = dist[mask]
        overlap = r - d
        a = (cfg.stiffness * MM_PER_S2_TO_MM_PER_MS2) * overlap / d
        acc[i] = (a[:, None] * delta[mask]).sum(axis=0)
        reacting.append(i)
    return acc, np.array(reacting, dtype=np.int64)


def env_step(state: EnvState, hand: HandMesh | np.ndarray, cfg: EnvConfig) -> tuple[EnvState, np.ndarray]:
    """One damped semi-implicit Euler step; returns (new state, reacting indices)."""
    hand_pts = hand.particles if isinstance(hand, HandMesh) else np.asarray(hand, dtype=float)
    acc, reacting = hand_forces(state.positions, hand_pts, cfg)
    vel = cfg.damping * (state.velocities + acc * cfg.dt_ms)
    pos = state.positions + vel * cfg.dt_ms
    np.clip(pos, cfg.bounds_lo, cfg.bounds_hi, out=pos)
    return EnvState(positions=pos, velocities=vel), reacting


def kinetic_energy(state: EnvState) -> float:
    return float(0.5 * np.sum(state.velocities**2))


def mesh_mean_weights(template) -> np.ndarray:
    """Per tracked point, its average weight across the mesh; the expanded
    mesh centroid is then mean_weights @ points."""
    w = np.zeros(len(template.rest_points))
    np.add.at(w, np.maximum(template.anchor_idx, 0), template.anchor_weights)
    return w / template.mesh_size


def interaction_lag(log, template, time_mask: np.ndarray | None = None):
    """How far the reacting particles trail the live hand, frame by frame.

    Uses the reacting-particle centroid recorded at each server tick against
    the live hand-mesh centroid at presentation. Frames without any reacting
    particle are skipped. Returns (mean_lag_mm, t_ms array, lag array).
    """
    mw = mesh_mean_weights(template)
    has_react = log.reacting_count > 0
    if time_mask is not None:
        has_react = has_react & time_mask
    idx = np.nonzero(has_react)[0]
    if len(idx) == 0:
        raise ValueError("no frames with reacting particles")
    live_centroid = np.einsum("p,fpc->fc", mw, log.live_points[idx])
    lag = np.linalg.norm(log.reacting_centroid[idx] - live_centroid, axis=1)
    return float(lag.mean()), log.t_present_ms[idx], lag
