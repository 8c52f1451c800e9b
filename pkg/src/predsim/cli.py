"""Command-line driver.

Subcommands: gen-trace (synthetic input recordings), simulate (one full
client/server session to a JSONL log), bench (predictor/window sweeps to
CSV), train-rnn / eval-rnn (recurrent predictor training and offline
evaluation), and serve (the live WebSocket demo).

All commands read one JSON config document with optional sections
(trace/noise/latency/predictor/session/env/bench/rnn). Unknown keys
anywhere are hard errors naming the offending key, so experiment typos
fail loudly instead of silently using defaults. Every command is
deterministic: config plus seeds fully determine the output bytes.

Exit codes: 0 ok, 2 config error, 3 usage or contract error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import metrics, netsim, rnn, trace
from .predict import DeadReckoning, Lagrange, NoPrediction, PolyRegression, RegressionSpec, Recurrent

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_USAGE = 3


class ConfigError(Exception):
    pass


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section '{where}'")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"missing required key '{key}' in section '{where}'")
    return obj[key]


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(
        cfg,
        {"trace", "noise", "latency", "predictor", "session", "env", "bench", "rnn", "service"},
        "root",
    )
    return cfg


# --- section parsers ---------------------------------------------------------


def parse_trace_section(cfg: dict):
    section = cfg.get("trace", {})
    _check_keys(
        section,
        {
            "file",
            "speed_mm_s",
            "leg_duration_s",
            "transition_duration_s",
            "direction_changes",
            "axis",
            "sample_interval_ms",
            "template",
        },
        "trace",
    )
    template = section.get("template", "default")
    tpl = trace.default_template() if template == "default" else trace.load_template(template)
    if "file" in section:
        return trace.read_trace(section["file"]), None, tpl
    kwargs = {}
    for key in (
        "speed_mm_s",
        "leg_duration_s",
        "transition_duration_s",
        "direction_changes",
        "sample_interval_ms",
    ):
        if key in section:
            kwargs[key] = section[key]
    if "axis" in section:
        kwargs["axis"] = tuple(section["axis"])
    try:
        profile = trace.MotionProfile(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid trace profile: {exc}")
    return None, profile, tpl


def parse_noise_section(cfg: dict) -> trace.NoiseModel:
    section = cfg.get("noise", {})
    _check_keys(section, {"sigma_mm", "seed"}, "noise")
    try:
        return trace.NoiseModel(
            sigma_mm=section.get("sigma_mm", 1.06), seed=section.get("seed", 0)
        )
    except ValueError as exc:
        raise ConfigError(f"invalid noise model: {exc}")


def parse_latency_section(cfg: dict) -> netsim.LatencyModel:
    section = cfg.get("latency", {})
    allowed = {
        "input_sampling_ms",
        "render_ms",
        "net_oneway_ms",
        "jitter_ms",
        "loss_prob",
        "server_frame_ms",
        "seed",
    }
    _check_keys(section, allowed, "latency")
    try:
        return netsim.LatencyModel(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid latency model: {exc}")


def parse_predictor(section: dict, where: str = "predictor"):
    _check_keys(section, {"kind", "order", "window", "ridge", "n", "model"}, where)
    kind = _require(section, "kind", where)
    try:
        if kind == "none":
            return NoPrediction()
        if kind == "dead_reckoning":
            return DeadReckoning()
        if kind == "lagrange":
            return Lagrange(n=_require(section, "n", where))
        if kind == "poly":
            return PolyRegression(
                RegressionSpec(
                    order=_require(section, "order", where),
                    window=_require(section, "window", where),
                    ridge=section.get("ridge", 1e-9),
                )
            )
        if kind == "rnn":
            model = rnn.RnnModel.load(_require(section, "model", where))
            return Recurrent(model=model)
    except ValueError as exc:
        raise ConfigError(f"invalid predictor in '{where}': {exc}")
    raise ConfigError(f"unknown predictor kind '{kind}' in section '{where}'")


def parse_env_section(cfg: dict):
    section = cfg.get("env", {})
    allowed = {
        "enabled",
        "particle_count",
        "interaction_radius_mm",
        "stiffness",
        "damping",
        "dt_ms",
        "bounds_lo",
        "bounds_hi",
        "seed",
    }
    _check_keys(section, allowed, "env")
    if not section.get("enabled", False):
        return None
    kwargs = {k: v for k, v in section.items() if k != "enabled"}
    for key in ("bounds_lo", "bounds_hi"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return netsim.EnvConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid env config: {exc}")


def parse_session_section(cfg: dict) -> dict:
    section = cfg.get("session", {})
    _check_keys(section, {"duration_ms", "client_override", "error_on_mesh"}, "session")
    return {
        "duration_ms": section.get("duration_ms"),
        "client_override": section.get("client_override", False),
        "error_on_mesh": section.get("error_on_mesh", True),
    }


def _seeded(cfg: dict, override: int | None) -> dict:
    if override is None:
        return cfg
    cfg = json.loads(json.dumps(cfg))
    cfg.setdefault("noise", {})["seed"] = override
    cfg.setdefault("latency", {})["seed"] = override + 1000
    if "bench" in cfg:
        cfg["bench"]["base_seed"] = override
    if "rnn" in cfg:
        cfg["rnn"]["seed"] = override
    return cfg


def build_frames(cfg: dict):
    frames, profile, tpl = parse_trace_section(cfg)
    noise = parse_noise_section(cfg)
    if frames is None:
        frames = trace.gen_trace(profile, tpl, noise)
    return frames, profile, tpl


# --- commands ------------------------------------------------------------------


def cmd_gen_trace(cfg: dict, out: str, quiet: bool) -> int:
    frames, profile, _ = build_frames(cfg)
    trace.write_trace(frames, out)
    if not quiet:
        duration = frames[-1].t_ms / 1000.0
        print(f"wrote {len(frames)} frames spanning {duration:.3f} s to {out}")
    return EXIT_OK


def cmd_simulate(cfg: dict, out: str, quiet: bool) -> int:
    frames, _, tpl = build_frames(cfg)
    predictor = parse_predictor(cfg.get("predictor", {"kind": "none"}))
    latency = parse_latency_section(cfg)
    env_cfg = parse_env_section(cfg)
    session = parse_session_section(cfg)
    config = netsim.SessionConfig(
        frames=frames,
        predictor=predictor,
        latency=latency,
        client_override=session["client_override"],
        env=env_cfg,
        template=tpl,
        duration_ms=session["duration_ms"],
    )
    log = netsim.run_session(config)
    netsim.write_session_log(log, out)
    if not quiet:
        series = netsim.replay_compare(log, on_mesh=session["error_on_mesh"], template=tpl)
        stats, _ = metrics.aggregate(series)
        surface = "mesh" if session["error_on_mesh"] else "points"
        print(
            f"presented {stats.n} frames; {surface} error mean {stats.mean_mm:.3f} mm, "
            f"std {stats.std_mm:.3f} mm; mean horizon {log.meta['mean_horizon_ms']:.2f} ms"
        )
    return EXIT_OK


BENCH_COLUMNS = "predictor,order,window,seed,mean_err_mm,std_err_mm,reduction_mean,reduction_std,status"


def _expand_bench_cells(section: dict):
    cells = []
    for i, cell in enumerate(_require(section, "cells", "bench")):
        where = f"bench.cells[{i}]"
        _check_keys(cell, {"kind", "order", "window", "windows", "ridge", "n"}, where)
        kind = _require(cell, "kind", where)
        if kind in ("poly", "lagrange"):
            if "windows" in cell:
                lo, hi = cell["windows"]
                window_values = range(int(lo), int(hi) + 1)
            else:
                window_values = [int(_require(cell, "window" if kind == "poly" else "n", where))]
            for n in window_values:
                cells.append((kind, cell.get("order", 0), int(n), cell.get("ridge", 0.0)))
        elif kind == "dead_reckoning":
            cells.append(("dead_reckoning", 0, 2, 0.0))
        elif kind == "none":
            cells.append(("none", 0, 1, 0.0))
        else:
            raise ConfigError(f"unknown predictor kind '{kind}' in {where}")
    return cells


def _bench_kind(kind_name: str, order: int, window: int, ridge: float):
    if kind_name == "poly":
        if window < order + 1:
            return None  # infeasible: reported as skipped
        return PolyRegression(RegressionSpec(order=order, window=window, ridge=ridge))
    if kind_name == "lagrange":
        if window < 2:
            return None
        return Lagrange(window)
    if kind_name == "dead_reckoning":
        return DeadReckoning()
    if kind_name == "none":
        return NoPrediction()
    raise ConfigError(f"unknown predictor kind '{kind_name}'")


def cmd_bench(cfg: dict, out: str, quiet: bool) -> int:
    section = cfg.get("bench", {})
    _check_keys(
        section,
        {"cells", "seeds", "base_seed", "warmup_ms", "error_on_mesh", "mesh_stride"},
        "bench",
    )
    n_seeds = section.get("seeds", 5)
    base_seed = section.get("base_seed", 0)
    warmup_ms = section.get("warmup_ms", 1000.0)
    on_mesh = section.get("error_on_mesh", True)
    mesh_stride = section.get("mesh_stride", 2)

    cells = _expand_bench_cells(section)
    _, profile, tpl = parse_trace_section(cfg)
    if profile is None:
        raise ConfigError("bench requires a generated trace (profile), not a trace file")
    noise = parse_noise_section(cfg)
    latency = parse_latency_section(cfg)

    kinds = [NoPrediction()]
    feasible: list[int | None] = []
    for kind_name, order, window, ridge in cells:
        kind = _bench_kind(kind_name, order, window, ridge)
        if kind is None:
            feasible.append(None)
        else:
            feasible.append(len(kinds))
            kinds.append(kind)

    per_seed = []  # (seed, means, stds)
    for rep in range(n_seeds):
        frames = trace.gen_trace(
            profile, tpl, trace.NoiseModel(sigma_mm=noise.sigma_mm, seed=base_seed + rep)
        )
        lat = netsim.LatencyModel(
            input_sampling_ms=latency.input_sampling_ms,
            render_ms=latency.render_ms,
            net_oneway_ms=latency.net_oneway_ms,
            jitter_ms=latency.jitter_ms,
            loss_prob=latency.loss_prob,
            server_frame_ms=latency.server_frame_ms,
            seed=base_seed + 1000 + rep,
        )
        session = netsim.SessionConfig(frames=frames, latency=lat)
        t_present, errs = netsim.run_session_errors(
            session, kinds, on_mesh=on_mesh, template=tpl, mesh_stride=mesh_stride
        )
        mask = t_present >= warmup_ms
        per_seed.append((base_seed + rep, errs[mask].mean(axis=0), errs[mask].std(axis=0)))

    rows = []

    def add_rows(kind_name, order, window, column):
        seed_stats = []
        for seed, means, stds in per_seed:
            if column is None:
                rows.append((kind_name, order, window, str(seed), None, None, None, None, "skipped"))
                continue
            base_mean, base_std = means[0], stds[0]
            m, s = means[column], stds[column]
            rows.append(
                (
                    kind_name,
                    order,
                    window,
                    str(seed),
                    m,
                    s,
                    base_mean / m if m > 0 else math.inf,
                    base_std / s if s > 0 else math.inf,
                    "ok",
                )
            )
            seed_stats.append((m, s, base_mean, base_std))
        if column is not None and seed_stats:
            arr = np.array(seed_stats)
            mean_avg = arr[:, 0].mean()
            pooled_std = math.sqrt(float(np.mean(arr[:, 1] ** 2 + (arr[:, 0] - mean_avg) ** 2)))
            base_mean_avg = arr[:, 2].mean()
            base_pooled = math.sqrt(
                float(np.mean(arr[:, 3] ** 2 + (arr[:, 2] - arr[:, 2].mean()) ** 2))
            )
            rows.append(
                (
                    kind_name,
                    order,
                    window,
                    "avg",
                    mean_avg,
                    pooled_std,
                    base_mean_avg / mean_avg if mean_avg > 0 else math.inf,
                    base_pooled / pooled_std if pooled_std > 0 else math.inf,
                    "ok",
                )
            )

    add_rows("none", 0, 1, 0)
    for (kind_name, order, window, ridge), column in zip(cells, feasible):
        add_rows(kind_name, order, window, column)

    def sort_key(row):
        seed_key = (1, 0) if row[3] == "avg" else (0, int(row[3]))
        return (row[0], row[1], row[2], seed_key)

    rows.sort(key=sort_key)

    with open(out, "w") as fh:
        fh.write("# seed-averaged rows: mean of per-seed means; pooled std = ")
        fh.write("sqrt(mean(std_i^2 + (mean_i - grand_mean)^2))\n")
        fh.write(f"# repetitions={n_seeds} base_seed={base_seed} warmup_ms={warmup_ms} ")
        fh.write(f"error_surface={'mesh' if on_mesh else 'points'} mesh_stride={mesh_stride}\n")
        fh.write(BENCH_COLUMNS + "\n")
        for row in rows:
            fields = [row[0], str(row[1]), str(row[2]), row[3]]
            for value in row[4:8]:
                if value is None:
                    fields.append("")
                elif math.isinf(value):
                    fields.append("inf")
                else:
                    fields.append(f"{value:.6f}")
            fields.append(row[8])
            fh.write(",".join(fields) + "\n")
    if not quiet:
        print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_train_rnn(cfg: dict, out: str, quiet: bool) -> int:
    section = cfg.get("rnn", {})
    allowed = {
        "cell",
        "horizon_ms",
        "windows",
        "epochs",
        "learning_rate",
        "batch_size",
        "seed",
        "sigma_mm",
        "input_len",
        "hidden_units",
    }
    _check_keys(section, allowed, "rnn")
    horizon = _require(section, "horizon_ms", "rnn")
    try:
        spec = rnn.RnnSpec(
            cell=section.get("cell", "gru"),
            input_len=section.get("input_len", 60),
            hidden_units=section.get("hidden_units", 10),
        )
        config = rnn.TrainConfig(
            learning_rate=section.get("learning_rate", 0.05),
            epochs=section.get("epochs", 40),
            batch_size=section.get("batch_size", 64),
            seed=section.get("seed", 0),
            dataset_size=section.get("windows", 20000),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid rnn config: {exc}")
    X, Y = rnn.build_dataset(
        horizon_ms=horizon,
        n_windows=config.dataset_size,
        input_len=spec.input_len,
        sigma_mm=section.get("sigma_mm", 1.06),
        seed=config.seed + 7,
    )
    result = rnn.train(spec, X, Y, horizon, config)
    result.model.save(out)
    if not quiet:
        print(
            f"trained {spec.cell} for horizon {horizon} ms: loss "
            f"{result.epoch_losses[0]:.6f} -> {min(result.epoch_losses):.6f}; saved {out}"
        )
    return EXIT_OK


def eval_rnn_on_trace(model: rnn.RnnModel, frames: list, horizon_ms: float):
    """Offline evaluation rows: (idx, t_ms, min-dist sum/mean, frame error,
    plus the no-prediction reference for the same target)."""
    times, pts = trace.frames_to_arrays(frames)
    flat = pts.reshape(len(frames), -1)
    dt = float(np.median(np.diff(times)))
    hsteps = horizon_ms / dt
    n_in = model.spec.input_len
    last = len(frames) - int(math.ceil(hsteps)) - 1
    if last <= n_in:
        raise ValueError("trace too short for this window and horizon")
    idx = np.arange(n_in - 1, last)
    k = (idx + hsteps).astype(int)
    frac = idx + hsteps - k
    targets = flat[k] * (1 - frac)[:, None] + flat[k + 1] * frac[:, None]
    rows = []
    for r, i in enumerate(idx):
        pred = flat[i] + model.forward_batch(flat[i - n_in + 1 : i + 1].T)
        tgt = targets[r].reshape(-1, 3)
        md = metrics.min_dist_error(pred.reshape(-1, 3), tgt)
        fe = metrics.frame_error(pred.reshape(-1, 3), tgt)
        base = flat[i].reshape(-1, 3)
        md0 = metrics.min_dist_error(base, tgt)
        fe0 = metrics.frame_error(base, tgt)
        rows.append((int(i), float(times[i]), md.sum_mm, md.mean_mm, fe, md0.mean_mm, fe0))
    return rows


EVAL_COLUMNS = "idx,t_ms,min_dist_sum_mm,min_dist_mean_mm,frame_err_mm,nopred_min_dist_mean_mm,nopred_frame_err_mm"


def cmd_eval_rnn(model_path: str, trace_path: str, out: str, horizon: float | None, quiet: bool) -> int:
    model = rnn.RnnModel.load(model_path)
    if horizon is not None and abs(horizon - model.horizon_ms) > 1e-9:
        print(
            f"error: model was trained for {model.horizon_ms} ms, asked to evaluate at {horizon} ms",
            file=sys.stderr,
        )
        return EXIT_USAGE
    frames = trace.read_trace(trace_path)
    rows = eval_rnn_on_trace(model, frames, model.horizon_ms)
    with open(out, "w") as fh:
        fh.write(EVAL_COLUMNS + "\n")
        for row in rows:
            fh.write(
                f"{row[0]},{row[1]:.6f},{row[2]:.6f},{row[3]:.6f},{row[4]:.6f},{row[5]:.6f},{row[6]:.6f}\n"
            )
    if not quiet:
        md = np.array([r[3] for r in rows])
        md0 = np.array([r[5] for r in rows])
        print(
            f"evaluated {len(rows)} samples at {model.horizon_ms} ms: "
            f"min-dist mean {md.mean():.3f} mm (no prediction {md0.mean():.3f} mm)"
        )
    return EXIT_OK


def cmd_serve(cfg: dict, port: int) -> int:
    from . import service

    section = cfg.get("service", {})
    _check_keys(
        section,
        {"env_enabled", "env_particles", "env_radius_mm", "env_stiffness", "env_seed", "env_stride"},
        "service",
    )
    service.serve_forever(port=port, config=section)
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="JSON config path")
        if needs_out:
            p.add_argument("--out", required=True, help="output file path")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("gen-trace", help="write a synthetic input trace (JSONL)"))
    common(sub.add_parser("simulate", help="run one session and write its log (JSONL)"))
    common(sub.add_parser("bench", help="sweep predictors and write per-cell stats (CSV)"))
    common(sub.add_parser("train-rnn", help="train a recurrent predictor, save model JSON"))

    ev = sub.add_parser("eval-rnn", help="offline model evaluation on a trace (CSV)")
    ev.add_argument("--model", required=True)
    ev.add_argument("--trace", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--horizon", type=float, default=None, help="must match the model's horizon")
    ev.add_argument("--quiet", action="store_true")

    sv = sub.add_parser("serve", help="run the live WebSocket demo server")
    sv.add_argument("--port", type=int, default=8765)
    sv.add_argument("--config", required=False, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval-rnn":
            return cmd_eval_rnn(args.model, args.trace, args.out, args.horizon, args.quiet)
        if args.command == "serve":
            cfg = load_config(args.config) if args.config else {}
            return cmd_serve(cfg, args.port)
        cfg = _seeded(load_config(args.config), args.seed)
        if args.command == "gen-trace":
            return cmd_gen_trace(cfg, args.out, args.quiet)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.quiet)
        if args.command == "bench":
            return cmd_bench(cfg, args.out, args.quiet)
        if args.command == "train-rnn":
            return cmd_train_rnn(cfg, args.out, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
