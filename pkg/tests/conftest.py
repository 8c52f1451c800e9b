import numpy as np
import pytest

from predsim import trace


@pytest.fixture(scope="session")
def template():
    return trace.default_template()


@pytest.fixture(scope="session")
def default_profile():
    return trace.MotionProfile()


@pytest.fixture(scope="session")
def short_profile():
    # Two direction changes, ~7.9 s: enough pipeline to exercise everything
    # without paying for the full benchmark run in every test.
    return trace.MotionProfile(direction_changes=2)


def make_frames(n, dt_ms=11.0, velocity=None, start=None, seed=None, sigma=0.0):
    """Rigid-translation frames along +x at a constant velocity (mm/ms)."""
    tpl = trace.default_template()
    rest = tpl.rest_points if start is None else tpl.rest_points + np.asarray(start)
    vel = np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float)
    rng = np.random.Generator(np.random.PCG64(0 if seed is None else seed))
    frames = []
    for i in range(n):
        t = i * dt_ms
        pts = rest + vel * t
        if sigma:
            pts = pts + rng.normal(0.0, sigma, size=pts.shape)
        frames.append(trace.TrackedFrame(seq=i, t_ms=t, points=pts))
    return frames
