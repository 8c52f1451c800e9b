"""Generate the frontend's shared fixtures and template data.

Writes, under frontend/:
  fixtures/error_conformance.json  point-cloud pairs with the primary
                                   metric's frame error, for bit-level
                                   agreement tests of the UI readout code
  fixtures/sweep_states.json       a scripted 50 ms constant sweep run
                                   through the real session channel: state
                                   messages paired with the live hand at
                                   each tick
  src/template_data.ts             the 50-point rest pose the capture loop
                                   drags with the mouse

Rerun after changing the error metric, the template, or the service
protocol, then re-run the frontend tests.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from predsim import metrics, trace
from predsim.predict import poly
from predsim.service import ChannelConfig, SessionChannel

ROOT = os.path.join(os.path.dirname(__file__), "..", "frontend")


def gen_conformance():
    rng = np.random.Generator(np.random.PCG64(2024))
    cases = []
    for i in range(40):
        n = int(rng.integers(1, 60))
        displayed = rng.normal(0.0, 120.0, size=(n, 3))
        live = displayed + rng.normal(0.0, rng.uniform(0.1, 40.0), size=(n, 3))
        cases.append(
            {
                "displayed": displayed.tolist(),
                "live": live.tolist(),
                "expected_mm": metrics.frame_error(displayed, live),
            }
        )
    # degenerate but legal: identical clouds, single point
    pts = rng.normal(size=(1, 3))
    cases.append({"displayed": pts.tolist(), "live": pts.tolist(), "expected_mm": 0.0})
    with open(os.path.join(ROOT, "fixtures", "error_conformance.json"), "w") as fh:
        json.dump({"cases": cases}, fh)
    print(f"wrote {len(cases)} conformance cases")


def gen_sweep_states():
    tpl = trace.default_template()
    lag = 50.0
    channel = SessionChannel(
        ChannelConfig(predictor=poly(2, 20), inject_oneway_ms=lag, env=None), template=tpl
    )
    channel.rtt_ewma_ms = 2 * lag
    vel = np.array([0.9, 0.25, 0.0])  # mm per ms, a steady diagonal sweep
    records = []
    dt = 11.0
    next_k = 0
    tick_ms = 1000.0 / 133.0
    for i in range(260):
        T = (i + 1) * tick_ms
        while next_k * dt + lag <= T:
            t = next_k * dt
            channel.deliver_input(t + lag, seq=next_k, t_client_ms=t, points=tpl.rest_points + vel * t)
            next_k += 1
        if not channel.times:
            continue
        state = channel.tick(T)
        live = tpl.rest_points + vel * (T + lag)
        if i % 2 == 0 and T > 900.0:
            records.append({"state": state, "live": live.tolist()})
    with open(os.path.join(ROOT, "fixtures", "sweep_states.json"), "w") as fh:
        json.dump({"inject_oneway_ms": lag, "records": records}, fh)
    print(f"wrote {len(records)} sweep states")


def gen_template_data():
    tpl = trace.default_template()
    lines = [
        "// Generated by tools/gen_frontend_assets.py; do not edit by hand.",
        "export const REST_POINTS: number[][] = ",
        json.dumps(np.round(tpl.rest_points, 6).tolist()) + ";",
        "",
    ]
    with open(os.path.join(ROOT, "src", "template_data.ts"), "w") as fh:
        fh.write("\n".join(lines))
    print("wrote template data")


if __name__ == "__main__":
    os.makedirs(os.path.join(ROOT, "fixtures"), exist_ok=True)
    os.makedirs(os.path.join(ROOT, "src"), exist_ok=True)
    gen_conformance()
    gen_sweep_states()
    gen_template_data()
