"""Command-line entry point: dataset generation, training, evaluation, planning,
MPC simulation, benchmarking, and plot emission.

Every subcommand reads an optional TOML config file; command-line flags
override file values, the merged configuration is echoed into the output
directory, and all randomness flows from a single seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import datasets, evalbench, geometry, mpc, net, plots, robot as robot_mod, trajopt
from .errors import (
    CssdfError,
    DivergenceError,
    InvalidInputError,
    PlanningFailedError,
    SchemaError,
    VersionError,
)

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_SCHEMA = 2
EXIT_VERSION = 3
EXIT_DIVERGENCE = 4
EXIT_PLANNING = 5
EXIT_IO = 6


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, VersionError):
        return EXIT_VERSION
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(exc, PlanningFailedError):
        return EXIT_PLANNING
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_GENERIC


def _load_robot(spec: str) -> robot_mod.RobotModel:
    if spec.startswith("builtin:"):
        return robot_mod.builtin_robot(spec.split(":", 1)[1])
    return robot_mod.load_robot(spec)


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _merge_config(args: argparse.Namespace, parser_keys: set) -> dict:
    """File values fill in flags the user left at their defaults; unknown file
    keys are rejected."""
    cfg = vars(args).copy()
    path = cfg.pop("config", None)
    cfg.pop("func", None)
    if path:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        unknown = set(data) - parser_keys
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        for key, value in data.items():
            if key in cfg and cfg[f"_explicit_{key}"] is False:
                cfg[key] = value
    return {k: v for k, v in cfg.items() if not k.startswith("_explicit_")}


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in cfg.items()}
    with open(out / "config_echo.json", "w") as fh:
        json.dump(echo, fh, indent=2, default=str)
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)


def _workers_default() -> int:
    return int(os.environ.get("CSSDF_WORKERS", "1"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_self(cfg: dict) -> int:
    out = _outdir(cfg)
    rb = _load_robot(cfg["robot"])
    ds_cfg = datasets.SelfDatasetConfig(tau=cfg["tau"], sigma=cfg["sigma"])
    ds, report = datasets.build_self_dataset(rb, cfg["n"], cfg["seed"], ds_cfg)
    ds.save(out / "dataset.csd1")
    ds.to_csv(out / "dataset.csv")
    _write_json(out / "report.json", report)
    print(f"gen-self: {report}")
    return EXIT_OK


def cmd_gen_external(cfg: dict) -> int:
    out = _outdir(cfg)
    rb = _load_robot(cfg["robot"])
    if cfg["n_points"] < 1:
        raise InvalidInputError(
            "external generation needs at least one obstacle point source; "
            "use gen-self for the obstacle-free field"
        )
    if cfg.get("scene"):
        scene = geometry.load_scene(cfg["scene"])
        if not scene.obstacles and (scene.points is None or not len(scene.points)):
            raise InvalidInputError(
                "scene provides no obstacles or points; external generation "
                "needs at least one point source (or use gen-self)"
            )
    ex_cfg = datasets.ExternalDatasetConfig(
        n_configs=cfg["n_configs"],
        n_points=cfg["n_points"],
        samples_per_point=cfg["samples_per_point"],
        workers=cfg["workers"],
    )
    ds, report, _ = datasets.build_external_dataset(rb, cfg["seed"], ex_cfg)
    ds.save(out / "dataset.csd1")
    ds.to_csv(out / "dataset.csv")
    _write_json(out / "report.json", report)
    print(f"gen-external: {report}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    out = _outdir(cfg)
    ds = datasets.FieldDataset.load(cfg["dataset"])
    ncfg = net.NetConfig(
        hidden_layers=cfg["layers"], width=cfg["width"], dropout=cfg["dropout"],
        seed=cfg["seed"],
    )
    q_bounds = np.stack([ds.q.min(axis=0), ds.q.max(axis=0)], axis=1)
    p_bounds = np.stack([ds.p.min(axis=0), ds.p.max(axis=0)], axis=1)
    if cfg.get("robot"):
        rb = _load_robot(cfg["robot"])
        model = net.FieldModel.for_robot(rb, ncfg)
    else:
        model = net.FieldModel(ds.dof, ds.point_dim, q_bounds, p_bounds, ncfg)
    weights = evalbench.LOSS_VARIANTS[cfg["loss"]]
    tcfg = net.TrainConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], grad_mode=cfg["grad_mode"],
    )
    history = net.train_field(model, ds, tcfg, weights)
    model.save(out / "checkpoint.csn1")
    net.history_to_csv(history, out / "history.csv")
    plots.emit_loss_curves(history, out / "loss_curves.svg")
    diverged = bool(history and history[-1].get("diverged"))
    _write_json(
        out / "summary.json",
        {
            "epochs_run": len(history),
            "final_val_loss": history[-1]["val_loss"] if history else None,
            "diverged": diverged,
        },
    )
    if diverged:
        raise DivergenceError("training diverged; last finite checkpoint saved")
    print(f"train: {len(history)} epochs, final val loss {history[-1]['val_loss']:.6f}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    out = _outdir(cfg)
    ds = datasets.FieldDataset.load(cfg["dataset"])
    idx = np.arange(len(ds))
    if cfg["oracle"]:
        # reference predictor: replays the dataset ground truth through the metrics
        pred, pgrads = ds.value.copy(), ds.grad.copy()
    else:
        model = net.FieldModel.load(cfg["checkpoint"])
        pred, pgrads = model.predict_with_grad(ds.inputs())
    fpr_pct, n_band = evalbench.fpr(pred, ds.value, cfg["band"])
    report = {
        "mae": evalbench.mae(pred, ds.value),
        "grad_sim": evalbench.grad_similarity(pgrads, ds.grad),
        "fpr_pct": "N/A" if fpr_pct is None else fpr_pct,
        "fpr_band_count": n_band,
        "bsr_pct": 100.0 * ds.boundary_sample_ratio(cfg["band"]),
        "class_ratio_pct": ds.class_ratio(),
        "n_samples": int(idx.size),
    }
    _write_json(out / "metrics.json", report)
    print(f"eval: {report}")
    return EXIT_OK


def _planning_field(cfg, rb):
    if cfg.get("checkpoint"):
        return net.NetPointField(net.FieldModel.load(cfg["checkpoint"]))
    return geometry.OraclePointField(rb, resolution=cfg.get("field_resolution", 81))


def cmd_plan(cfg: dict) -> int:
    out = _outdir(cfg)
    rb = _load_robot(cfg["robot"])
    scene = geometry.load_scene(cfg["scene"])
    q_start = _parse_vector(cfg["start"])
    q_goal = _parse_vector(cfg["goal"])
    points = scene.sample_points(cfg["point_spacing"])

    def checker(q):
        return geometry.scene_collides(rb, q, scene)

    t0 = time.perf_counter()
    waypoints = trajopt.rrt_connect_init(
        checker, q_start, q_goal, rb.joint_limits, seed=cfg["seed"]
    )
    init_time = time.perf_counter() - t0
    traj0 = trajopt.waypoints_to_trajectory(waypoints, segments=cfg["segments"])
    lam_phi = 0.0 if cfg["no_safety"] else cfg["lam_phi"]
    weights = trajopt.TrajWeights(lam_phi=lam_phi, lam_q=cfg["lam_q"])
    penalty = trajopt.SafetyPenaltyParams(d0=cfg["d0"], alpha=cfg["alpha"])
    limits = trajopt.TrajLimits(
        q_min=rb.joint_limits[:, 0], q_max=rb.joint_limits[:, 1],
        v_max=cfg["v_max"], a_max=cfg["a_max"],
    )
    field = _planning_field(cfg, rb)
    traj, report = trajopt.optimize(
        traj0, field, points, weights, penalty, limits, max_iter=cfg["max_iter"]
    )
    cr, tl, at = trajopt.metrics(traj, checker, init_time + report["plan_time_s"])
    traj.to_csv(out / "trajectory.csv")
    payload = {
        "CR_pct": cr,
        "TL_rad": tl,
        "AT_ms": at,
        "optimizer": report,
        "params": {k: cfg[k] for k in ("lam_phi", "lam_q", "d0", "alpha", "segments", "seed")},
    }
    _write_json(out / "report.json", payload)
    print(f"plan: CR {cr:.2f}% TL {tl:.3f} AT {at:.1f} ms")
    return EXIT_OK


def cmd_mpc(cfg: dict) -> int:
    out = _outdir(cfg)
    rb = _load_robot(cfg["robot"])
    scene = geometry.load_scene(cfg["scene"])
    q_start = _parse_vector(cfg["start"])
    q_goal = _parse_vector(cfg["goal"])
    n = rb.dof
    problem = mpc.MpcProblem(
        horizon=cfg["h"],
        dt=cfg["dt"],
        Q=np.full(n, cfg["q_weight"]),
        R=np.full(n, cfg["r_weight"]),
        q_min=rb.joint_limits[:, 0],
        q_max=rb.joint_limits[:, 1],
        u_min=np.full(n, -cfg["u_max"]),
        u_max=np.full(n, cfg["u_max"]),
        gamma=cfg["gamma"],
    )
    field = _planning_field(cfg, rb)
    log = mpc.simulate(
        rb, field, scene, problem, q_start, q_goal, cfg["duration"],
        point_spacing=cfg["point_spacing"],
    )
    log.to_csv(out / "episode.csv")
    summary = log.metrics()
    _write_json(out / "metrics.json", summary)
    if rb.point_dim == 2:
        plots.emit_avoidance_snapshots(rb, log, scene, out / "avoidance.svg")
    print(f"mpc: {summary}")
    return EXIT_OK


def cmd_bench_latency(cfg: dict) -> int:
    out = _outdir(cfg)
    if cfg.get("checkpoint"):
        model = net.FieldModel.load(cfg["checkpoint"])
    else:
        rb = _load_robot(cfg["robot"])
        model = net.FieldModel.for_robot(rb, net.NetConfig(seed=cfg["seed"]))
    scales = [int(s) for s in str(cfg["scales"]).split(",")]
    rows = evalbench.latency_bench(model, scales, repeats=cfg["repeats"], seed=cfg["seed"])
    evalbench.latency_to_csv(rows, out / "latency.csv")
    plots.emit_latency(rows, out / "latency.svg")
    print(f"bench-latency: {rows}")
    return EXIT_OK


def cmd_ablate(cfg: dict) -> int:
    out = _outdir(cfg)
    rb = _load_robot(cfg["robot"])
    data_variants = tuple(v for v in cfg["data_variants"].split(",") if v)
    loss_variants = tuple(v for v in cfg["loss_variants"].split(",") if v)
    results = evalbench.ablation_run(
        rb, n_samples=cfg["n"], seed=cfg["seed"], epochs=cfg["epochs"],
        data_variants=data_variants, loss_variants=loss_variants,
    )
    evalbench.ablation_to_csv(results, out / "ablation.csv")
    for name, (_, history) in results.items():
        net.history_to_csv(history, out / f"history_{name.replace('/', '_')}.csv")
    printable = {
        k: (None if r is None else {"mae": r.mae, "grad_sim": r.grad_sim, "fpr": r.fpr_pct})
        for k, (r, _) in results.items()
    }
    print(f"ablate: {printable}")
    return EXIT_OK


def cmd_plot(cfg: dict) -> int:
    out = _outdir(cfg)
    kind = cfg["kind"]
    if kind == "field":
        rb = _load_robot(cfg["robot"])
        grid = geometry.oracle_self_distance(rb, resolution=cfg.get("resolution", 201))
        plots.emit_cspace_field(grid.values, grid.bounds, out / "field.svg", rb.name)
    elif kind == "loss":
        rows = []
        with open(cfg["input"]) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                vals = line.strip().split(",")
                rows.append({k: float(v) for k, v in zip(header, vals)})
        plots.emit_loss_curves(rows, out / "loss_curves.svg")
    else:
        raise InvalidInputError(f"unknown plot kind {kind!r} (choices: field, loss)")
    print(f"plot: wrote {kind} figure to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring


class _TrackedParser(argparse.ArgumentParser):
    """Records which options the user supplied so config files only fill gaps."""

    def parse_args(self, argv=None, namespace=None):  # type: ignore[override]
        ns = super().parse_args(argv, namespace)
        supplied = set()
        argv = sys.argv[1:] if argv is None else argv
        for token in argv:
            if token.startswith("--"):
                supplied.add(token.lstrip("-").split("=")[0].replace("-", "_"))
        for key in list(vars(ns)):
            if key in ("func", "config"):
                continue
            setattr(ns, f"_explicit_{key}", key in supplied)
        return ns


def _add_common(sp, robot_default="builtin:planar2"):
    sp.add_argument("--config", default=None, help="TOML config file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--workers", type=int, default=_workers_default())
    sp.add_argument("--robot", default=robot_default, help="robot JSON path or builtin:<name>")


def build_parser() -> _TrackedParser:
    parser = _TrackedParser(prog="cssdf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-self", help="generate a self-collision dataset")
    _add_common(sp)
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--tau", type=float, default=1.25)
    sp.add_argument("--sigma", type=float, default=0.05)
    sp.set_defaults(func=cmd_gen_self)

    sp = sub.add_parser("gen-external", help="generate an external-collision dataset")
    _add_common(sp)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--n-configs", type=int, default=3000)
    sp.add_argument("--n-points", type=int, default=60)
    sp.add_argument("--samples-per-point", type=int, default=40)
    sp.set_defaults(func=cmd_gen_external)

    sp = sub.add_parser("train", help="train a field model on a dataset")
    _add_common(sp, robot_default=None)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=256)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--width", type=int, default=216)
    sp.add_argument("--layers", type=int, default=5)
    sp.add_argument("--dropout", type=float, default=0.2)
    sp.add_argument("--loss", default="complete", choices=sorted(evalbench.LOSS_VARIANTS))
    sp.add_argument("--grad-mode", default="analytic", choices=["analytic", "fd"])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint (or oracle reference) on a dataset")
    _add_common(sp, robot_default=None)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--oracle", action="store_true", help="score the dataset ground truth itself")
    sp.add_argument("--band", type=float, default=0.05)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plan", help="offline safety-constrained trajectory optimization")
    _add_common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--start", required=True, help="comma-separated joint vector")
    sp.add_argument("--goal", required=True)
    sp.add_argument("--checkpoint", default=None, help="use a trained field instead of the oracle")
    sp.add_argument("--segments", type=int, default=8)
    sp.add_argument("--lam-phi", type=float, default=10.0)
    sp.add_argument("--lam-q", type=float, default=1.0)
    sp.add_argument("--d0", type=float, default=0.1)
    sp.add_argument("--alpha", type=float, default=5.0)
    sp.add_argument("--v-max", type=float, default=2.0)
    sp.add_argument("--a-max", type=float, default=10.0)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--point-spacing", type=float, default=0.12)
    sp.add_argument("--no-safety", action="store_true")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("mpc", help="receding-horizon simulation with a moving scene")
    _add_common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--start", required=True)
    sp.add_argument("--goal", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--h", type=int, default=10)
    sp.add_argument("--dt", type=float, default=0.01)
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--duration", type=float, default=6.0)
    sp.add_argument("--u-max", type=float, default=2.0)
    sp.add_argument("--q-weight", type=float, default=10.0)
    sp.add_argument("--r-weight", type=float, default=0.1)
    sp.add_argument("--point-spacing", type=float, default=0.08)
    sp.set_defaults(func=cmd_mpc)

    sp = sub.add_parser("bench-latency", help="query latency versus point-cloud scale")
    _add_common(sp, robot_default="builtin:spatial7")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--scales", default="1,10,100,1000,10000,100000")
    sp.add_argument("--repeats", type=int, default=5)
    sp.set_defaults(func=cmd_bench_latency)

    sp = sub.add_parser("ablate", help="train dataset/loss variants and tabulate metrics")
    _add_common(sp)
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--data-variants", default="uniform,balanced,complete")
    sp.add_argument("--loss-variants", default="distance_only,distance_magnitude,distance_direction,complete")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot", help="emit SVG figures from artifacts")
    _add_common(sp)
    sp.add_argument("--kind", required=True)
    sp.add_argument("--input", default=None)
    sp.add_argument("--resolution", type=int, default=201)
    sp.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    keys = {k for k in vars(args) if not k.startswith("_explicit_")}
    try:
        cfg = _merge_config(args, keys)
        return args.func(cfg)
    except CssdfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
