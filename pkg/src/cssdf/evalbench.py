"""Metric computation and benchmark harnesses: field quality, latency, ablations."""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from .datasets import (
    BOUNDARY_BAND,
    FieldDataset,
    SelfDatasetConfig,
    build_balanced_dataset,
    build_self_dataset,
    build_uniform_dataset,
)
from .errors import InvalidInputError
from .geometry import GridField, oracle_self_distance
from .net import (
    FieldModel,
    LossWeights,
    NetConfig,
    TrainConfig,
    split_indices,
    train_field,
)
from .robot import RobotModel, workspace_bounds

LATENCY_SCALES = (1, 10, 100, 1000, 10000, 100000)


@dataclass
class EvalReport:
    mae: float
    grad_sim: float
    fpr_pct: float  # nan when the band set is empty (reported as N/A)
    fpr_band_count: int
    bsr_pct: float
    class_ratio_pct: float
    n_samples: int
    band: float = BOUNDARY_BAND
    oracle_mae: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction/truth length mismatch")
    return float(np.mean(np.abs(pred - truth)))


def fpr(pred: np.ndarray, truth: np.ndarray, band: float = BOUNDARY_BAND):
    """Boundary false positive rate.

    Over samples within `band` of the boundary (|truth| <= band), the
    percentage predicted in collision (pred < 0) while truly safe (truth > 0).
    Returns (percentage or None for an empty band set, band count).
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction/truth length mismatch")
    in_band = np.abs(truth) <= band
    n_band = int(in_band.sum())
    if n_band == 0:
        return None, 0
    false_pos = (pred < 0) & (truth > 0) & in_band
    return 100.0 * float(false_pos.sum()) / n_band, n_band


def grad_similarity(pred_grads: np.ndarray, true_grads: np.ndarray) -> float:
    """Mean cosine similarity; zero predicted gradients contribute 0."""
    pred_grads = np.atleast_2d(pred_grads)
    true_grads = np.atleast_2d(true_grads)
    if pred_grads.shape != true_grads.shape:
        raise InvalidInputError("gradient array shape mismatch")
    pn = np.linalg.norm(pred_grads, axis=1)
    tn = np.linalg.norm(true_grads, axis=1)
    if np.any(tn < 1e-12):
        raise InvalidInputError("true gradients must be nonzero")
    ok = pn > 1e-12
    cos = np.zeros(pred_grads.shape[0])
    cos[ok] = np.einsum("bi,bi->b", pred_grads[ok], true_grads[ok]) / (pn[ok] * tn[ok])
    return float(cos.mean())


def evaluate_on_split(model: FieldModel, dataset: FieldDataset, idx: np.ndarray,
                      band: float = BOUNDARY_BAND) -> EvalReport:
    """Validation-split metrics against the dataset's own ground truth."""
    X = dataset.inputs()[idx]
    truth = dataset.value[idx]
    tgrads = dataset.grad[idx]
    pred, pgrads = model.predict_with_grad(X)
    fpr_pct, n_band = fpr(pred, truth, band)
    return EvalReport(
        mae=mae(pred, truth),
        grad_sim=grad_similarity(pgrads, tgrads),
        fpr_pct=float("nan") if fpr_pct is None else fpr_pct,
        fpr_band_count=n_band,
        bsr_pct=100.0 * dataset.boundary_sample_ratio(band),
        class_ratio_pct=dataset.class_ratio(),
        n_samples=int(idx.size),
        band=band,
    )


def oracle_mae(model: FieldModel, robot: RobotModel, n_eval: int = 3000, seed: int = 99,
               resolution: int = 201) -> float:
    """MAE against the grid-oracle self-distance field at random configurations.

    Evaluation points pair random configurations with virtual obstacle points
    outside the reachable set, matching the pure self-collision reading.
    """
    grid = oracle_self_distance(robot, resolution=resolution)
    gf = GridField(grid)
    rng = np.random.default_rng(seed)
    box = robot.extended_limits()
    Q = rng.uniform(box[:, 0], box[:, 1], size=(n_eval, robot.dof))
    lo, hi = workspace_bounds(robot, 1.5)
    dirs = rng.normal(size=(n_eval, robot.point_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    max_r = float(np.min(np.minimum(hi - robot.base_translation, robot.base_translation - lo)))
    radii = rng.uniform(robot.reach() * 1.02, max_r, size=n_eval)
    P = robot.base_translation + dirs * radii[:, None]
    X = np.concatenate([Q, P], axis=1)
    pred = model.predict(X)
    truth = gf.value(Q)
    return mae(pred, truth)


# ---------------------------------------------------------------------------
# latency harness


def latency_bench(
    model: FieldModel,
    scales=LATENCY_SCALES,
    repeats: int = 5,
    seed: int = 0,
    single_thread: bool = True,
) -> dict:
    """Median wall time (ms) for distance-only and distance+gradient batched
    queries at each point-cloud scale. Absolute numbers are hardware-bound."""
    rng = np.random.default_rng(seed)
    n, w = model.dof, model.point_dim
    q = 0.5 * (model.lo[:n] + model.hi[:n])
    rows = {"dist": {}, "dist_grad": {}}
    for scale in scales:
        pts = rng.uniform(model.lo[n:], model.hi[n:], size=(int(scale), w))
        X = np.concatenate([np.broadcast_to(q, (int(scale), n)), pts], axis=1)
        model.predict(X)  # warmup
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict(X)
            times.append(time.perf_counter() - t0)
        rows["dist"][int(scale)] = 1e3 * float(np.median(times))
        model.predict_with_grad(X)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            model.predict_with_grad(X)
            times.append(time.perf_counter() - t0)
        rows["dist_grad"][int(scale)] = 1e3 * float(np.median(times))
    return rows


def latency_to_csv(rows: dict, path) -> None:
    scales = sorted(next(iter(rows.values())).keys())
    with open(path, "w") as fh:
        fh.write("mode," + ",".join(f"n={s}" for s in scales) + "\n")
        for mode, vals in rows.items():
            fh.write(mode + "," + ",".join(f"{vals[s]:.4f}" for s in scales) + "\n")


# ---------------------------------------------------------------------------
# ablation harness


LOSS_VARIANTS = {
    "distance_only": LossWeights(5.0, 0.0, 0.0),
    "distance_magnitude": LossWeights(5.0, 0.1, 0.0),
    "distance_direction": LossWeights(5.0, 0.0, 0.2),
    "complete": LossWeights(5.0, 0.1, 0.2),
}

DATA_VARIANTS = ("uniform", "balanced", "complete")


def build_variant_dataset(robot: RobotModel, variant: str, n: int, seed: int,
                          cfg: SelfDatasetConfig = None):
    if variant == "uniform":
        return build_uniform_dataset(robot, n, seed, cfg)
    if variant == "balanced":
        return build_balanced_dataset(robot, n, seed, cfg)
    if variant == "complete":
        return build_self_dataset(robot, n, seed, cfg)
    raise InvalidInputError(f"unknown dataset variant {variant!r}")


def ablation_run(
    robot: RobotModel,
    n_samples: int = 10000,
    seed: int = 0,
    epochs: int = 100,
    net_config: NetConfig = None,
    train_config: TrainConfig = None,
    data_variants=DATA_VARIANTS,
    loss_variants=tuple(LOSS_VARIANTS),
    with_oracle_mae: bool = True,
) -> dict:
    """Train every requested variant with an identical budget and seed.

    Data-strategy variants train with the complete loss; loss variants train
    on the complete-strategy dataset. Returns {variant_name: (EvalReport,
    history)} with keys "data/<name>" and "loss/<name>".
    """
    net_config = net_config or NetConfig()
    base_train = train_config or TrainConfig()
    results = {}
    datasets = {}
    for name in set(data_variants) | ({"complete"} if loss_variants else set()):
        datasets[name] = build_variant_dataset(robot, name, n_samples, seed)[0]

    def run(dataset, weights):
        model = FieldModel.for_robot(robot, net_config)
        tc = TrainConfig(
            lr=base_train.lr, weight_decay=base_train.weight_decay,
            betas=base_train.betas, batch_size=base_train.batch_size,
            epochs=epochs, patience=base_train.patience, factor=base_train.factor,
            min_lr=base_train.min_lr, val_fraction=base_train.val_fraction,
            seed=seed, grad_mode=base_train.grad_mode, fd_step=base_train.fd_step,
        )
        history = train_field(model, dataset, tc, weights)
        _, val_idx = split_indices(len(dataset), tc.val_fraction, seed)
        report = evaluate_on_split(model, dataset, val_idx)
        if with_oracle_mae:
            report.oracle_mae = oracle_mae(model, robot)
        return model, report, history

    for name in data_variants:
        try:
            _, report, history = run(datasets[name], LOSS_VARIANTS["complete"])
            results[f"data/{name}"] = (report, history)
        except FloatingPointError:
            results[f"data/{name}"] = (None, [{"diverged": True}])
    for name in loss_variants:
        try:
            _, report, history = run(datasets["complete"], LOSS_VARIANTS[name])
            results[f"loss/{name}"] = (report, history)
        except FloatingPointError:
            results[f"loss/{name}"] = (None, [{"diverged": True}])
    return results


def ablation_to_csv(results: dict, path) -> None:
    cols = [
        "variant", "mae", "grad_sim", "fpr_pct", "fpr_band_count",
        "bsr_pct", "class_ratio_pct", "oracle_mae", "n_samples",
    ]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for name, (report, _) in results.items():
            if report is None:
                fh.write(f"{name},failed,,,,,,,\n")
                continue
            d = report.as_dict()
            fh.write(
                ",".join([name] + [str(d[c]) for c in cols[1:]]) + "\n"
            )
