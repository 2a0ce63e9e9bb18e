"""Training-data generation: sampling, class balancing, boundary mining, spatial hashing.

Self-collision tuples come from uniform sampling over the extended joint box,
perturbation-based class balancing, and bisection boundary mining between
opposite-label nearest neighbors. External-collision tuples use a voxel map
from workspace positions to risk configurations so that ground truth for an
arbitrary obstacle point is produced without rechecking every configuration.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BoundaryBracketError,
    ClassMissingError,
    InvalidInputError,
    OutOfBoundsError,
    ZeroDistanceError,
)
from .geometry import batch_point_collision, batch_self_collision, collides_with_point
from .neighbors import ExactIndex, make_index
from .robot import RobotModel, batch_sphere_centers, workspace_bounds

DATASET_MAGIC = b"CSD1"
DATASET_VERSION = 1

# |value| band that counts as a boundary sample, same constant as the FPR band
BOUNDARY_BAND = 0.05


def sample_dtype(dof: int, point_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("q", "<f8", (dof,)),
            ("p", "<f8", (point_dim,)),
            ("value", "<f8"),
            ("label", "u1"),
            ("grad", "<f8", (dof,)),
        ]
    )


@dataclass
class FieldDataset:
    """Array of training tuples (q, p, value, label, grad)."""

    dof: int
    point_dim: int
    samples: np.ndarray

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def q(self) -> np.ndarray:
        return self.samples["q"]

    @property
    def p(self) -> np.ndarray:
        return self.samples["p"]

    @property
    def value(self) -> np.ndarray:
        return self.samples["value"]

    @property
    def label(self) -> np.ndarray:
        return self.samples["label"]

    @property
    def grad(self) -> np.ndarray:
        return self.samples["grad"]

    def inputs(self) -> np.ndarray:
        return np.concatenate([self.q, self.p], axis=1)

    def boundary_sample_ratio(self, band: float = BOUNDARY_BAND) -> float:
        return float(np.mean(np.abs(self.value) <= band))

    def class_ratio(self) -> float:
        """Majority class fraction in percent."""
        frac = float(np.mean(self.label))
        return 100.0 * max(frac, 1.0 - frac)

    def validate(self) -> None:
        if np.any((self.value > 0) != (self.label == 0)):
            raise InvalidInputError("sign/label mismatch in dataset")
        norms = np.linalg.norm(self.grad, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvalidInputError("non-unit gradient in dataset")

    def save(self, path) -> None:
        header = struct.pack(
            "<4sIIIQ", DATASET_MAGIC, DATASET_VERSION, self.dof, self.point_dim, len(self)
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.samples.tobytes())

    @classmethod
    def load(cls, path) -> "FieldDataset":
        from .errors import SchemaError, VersionError

        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIIIQ"))
            magic, version, dof, w, count = struct.unpack("<4sIIIQ", head)
            if magic != DATASET_MAGIC:
                raise SchemaError(f"not a CSD1 dataset (magic {magic!r})")
            if version != DATASET_VERSION:
                raise VersionError(f"unsupported dataset version {version}")
            dt = sample_dtype(dof, w)
            raw = fh.read(count * dt.itemsize)
        samples = np.frombuffer(raw, dtype=dt, count=count).copy()
        return cls(dof=dof, point_dim=w, samples=samples)

    def to_csv(self, path) -> None:
        n, w = self.dof, self.point_dim
        cols = (
            [f"q{i+1}" for i in range(n)]
            + [f"p{i+1}" for i in range(w)]
            + ["value", "label"]
            + [f"g{i+1}" for i in range(n)]
        )
        flat = np.concatenate(
            [self.q, self.p, self.value[:, None], self.label[:, None].astype(float), self.grad],
            axis=1,
        )
        np.savetxt(path, flat, delimiter=",", header=",".join(cols), comments="")


def concat_datasets(parts: list[FieldDataset]) -> FieldDataset:
    if not parts:
        raise InvalidInputError("no dataset parts to concatenate")
    first = parts[0]
    return FieldDataset(
        dof=first.dof,
        point_dim=first.point_dim,
        samples=np.concatenate([p.samples for p in parts]),
    )


# ---------------------------------------------------------------------------
# self-collision pipeline


def sample_base_configs(model: RobotModel, n: int, seed: int, bounds=None):
    """Uniform configurations over the extended joint box with collision labels."""
    if n < 1:
        raise InvalidInputError("need at least one sample")
    box = model.extended_limits() if bounds is None else np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    Q = rng.uniform(box[:, 0], box[:, 1], size=(n, model.dof))
    labels = batch_self_collision(model, Q)
    return Q, labels


def balance_classes(
    Q: np.ndarray,
    labels: np.ndarray,
    checker,
    tau: float = 1.25,
    sigma: float = 0.05,
    max_tries: int = 10,
    seed: int = 0,
    bounds: np.ndarray = None,
):
    """Perturbation augmentation until majority/minority count ratio <= tau.

    New samples are Gaussian perturbations (std `sigma`) of minority samples,
    relabeled by `checker` and kept only when they land in the minority class.
    Returns (Q, labels, n_added).
    """
    labels = np.asarray(labels, dtype=bool)
    n_col = int(labels.sum())
    n_free = labels.size - n_col
    if n_col == 0 or n_free == 0:
        raise ClassMissingError("both collision classes must be present to balance")
    minority = n_col <= n_free
    n_min, n_maj = (n_col, n_free) if minority else (n_free, n_col)
    if n_maj / n_min <= tau:
        return Q, labels, 0
    target = int(np.ceil(n_maj / tau))
    needed = target - n_min
    rng = np.random.default_rng(seed)
    parents = Q[labels == minority]
    added_q = []
    budget = max_tries * needed
    while len(added_q) < needed and budget > 0:
        take = min(needed - len(added_q), max(64, needed // 4))
        picks = parents[rng.integers(0, parents.shape[0], size=take)]
        cand = picks + rng.normal(0.0, sigma, size=picks.shape)
        if bounds is not None:
            inside = np.all((cand >= bounds[:, 0]) & (cand <= bounds[:, 1]), axis=1)
            cand = cand[inside]
        budget -= take
        if cand.shape[0] == 0:
            continue
        lab = checker(cand)
        keep = cand[lab == minority]
        for row in keep:
            added_q.append(row)
    if len(added_q) < needed:
        warnings.warn(
            f"balance_classes hit its resample cap with {len(added_q)}/{needed} added",
            RuntimeWarning,
            stacklevel=2,
        )
    if added_q:
        extra = np.asarray(added_q[:needed])
        Q = np.vstack([Q, extra])
        labels = np.concatenate([labels, np.full(extra.shape[0], minority)])
    return Q, labels, len(added_q[:needed]) if added_q else 0


def _as_bool(x) -> bool:
    return bool(np.asarray(x).reshape(-1)[0])


def bisect_boundary(a: np.ndarray, b: np.ndarray, checker, tol: float):
    """Shrink [a, b] (opposite labels) until ||b - a|| <= tol; returns final bracket.

    The label of `a` is preserved on the a-side endpoint throughout.
    """
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    la = _as_bool(checker(a))
    if _as_bool(checker(b)) == la:
        raise BoundaryBracketError("bisection endpoints carry the same label")
    while np.linalg.norm(b - a) > tol:
        mid = 0.5 * (a + b)
        if _as_bool(checker(mid)) == la:
            a = mid
        else:
            b = mid
    return a, b


def mine_boundary(free_index, col_index, q, checker, tol: float = 1e-4):
    """Locate a decision-boundary point between q and its opposite-label neighbor.

    The nearest neighbor in the opposing index brackets the boundary with q;
    bisection isolates the flip. Both converged bracket endpoints are inserted
    into the index of their own side, and the midpoint (the boundary estimate)
    is returned along with the endpoints.

    Returns:
        (q_boundary, safe_end, col_end)
    """
    if tol <= 0:
        raise InvalidInputError("tolerance must be positive")
    q = np.asarray(q, dtype=float)
    label = _as_bool(checker(q))
    opposing = free_index if label else col_index
    if len(opposing) == 0:
        raise BoundaryBracketError("opposing index is empty")
    nn_id, _ = opposing.nearest(q, 1)[0]
    q_nn = opposing.points[nn_id]
    if _as_bool(checker(q_nn)) == label:
        # stale entry: re-query once with a wider beam
        cands = opposing.nearest(q, min(2, len(opposing)))
        q_nn = None
        for cid, _ in cands:
            cand = opposing.points[cid]
            if _as_bool(checker(cand)) != label:
                q_nn = cand
                break
        if q_nn is None:
            raise BoundaryBracketError("no opposite-label bracket found")
    a, b = bisect_boundary(q, q_nn, checker, tol)
    if label:
        col_end, safe_end = a, b
    else:
        safe_end, col_end = a, b
    free_index.insert(safe_end)
    col_index.insert(col_end)
    return 0.5 * (a + b), safe_end, col_end


def ground_truth(q: np.ndarray, q_boundary: np.ndarray, collision: bool):
    """Distance/gradient pair from a boundary point.

    value = +-||q - q_b|| signed by the label; grad = (q - q_b) / value, i.e.
    the gradient of the signed field. On the collision side this points back
    toward the boundary, so the direction is continuous across it: the two
    bisection endpoints of a mined pair carry the same gradient, and the
    boundary projection identity q_b = q - value * grad holds on both sides.
    """
    q = np.asarray(q, dtype=float)
    q_boundary = np.asarray(q_boundary, dtype=float)
    delta = q - q_boundary
    dist = float(np.linalg.norm(delta))
    if dist < 1e-15:
        raise ZeroDistanceError("configuration coincides with its boundary point")
    value = -dist if collision else dist
    return value, delta / value


def make_self_collision_points(
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    count: int,
    seed: int,
    reach: float,
    base: np.ndarray = None,
    outside_fraction: float = 0.5,
) -> np.ndarray:
    """Virtual obstacle points for self-collision tuples, sampled in the extended
    workspace with a configurable fraction forced outside the reachable set."""
    if count < 1:
        raise InvalidInputError("need at least one point")
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    w = box_lo.shape[0]
    base = np.zeros(w) if base is None else np.asarray(base, dtype=float)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box_lo, box_hi, size=(count, w))
    n_out = int(round(outside_fraction * count))
    if n_out:
        max_r = float(np.min(np.minimum(box_hi - base, base - box_lo)))
        if max_r <= reach:
            raise InvalidInputError("workspace box too small to hold out-of-reach points")
        dirs = rng.normal(size=(n_out, w))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = rng.uniform(reach * (1 + 1e-6), max_r, size=n_out)
        pts[:n_out] = base + dirs * radii[:, None]
    return pts


@dataclass
class SelfDatasetConfig:
    random_fraction: float = 0.4
    tau: float = 1.25
    sigma: float = 0.05
    max_tries: int = 10
    mine_tol: float = 1e-4
    outside_fraction: float = 0.5
    workspace_extension: float = 1.5
    index_backend: str = "exact"


def build_self_dataset(model: RobotModel, n: int, seed: int, cfg: SelfDatasetConfig = None):
    """Complete self-collision pipeline: sample, balance, mine, label with Eq.-style
    nearest-boundary ground truth.

    Returns (FieldDataset, report dict).
    """
    cfg = cfg or SelfDatasetConfig()
    box = model.extended_limits()

    def checker(X):
        return batch_self_collision(model, np.atleast_2d(X))

    n_random = max(2, int(round(n * cfg.random_fraction)))
    Q, labels = sample_base_configs(model, n_random, seed)
    Q, labels, n_added = balance_classes(
        Q, labels, checker, cfg.tau, cfg.sigma, cfg.max_tries, seed + 1, bounds=box
    )

    free_index = make_index(model.dof, cfg.index_backend)
    col_index = make_index(model.dof, cfg.index_backend)
    for q, lab in zip(Q, labels):
        (col_index if lab else free_index).insert(q)

    rng = np.random.default_rng(seed + 2)
    boundary_q: list[np.ndarray] = []
    boundary_lab: list[bool] = []
    n_boundary = max(0, n - Q.shape[0])
    order = rng.permutation(Q.shape[0])
    cursor = 0
    attempts = 0
    while len(boundary_q) < n_boundary and attempts < 4 * n_boundary + 16:
        attempts += 1
        q_seed = Q[order[cursor % order.size]]
        cursor += 1
        try:
            _, safe_end, col_end = mine_boundary(
                free_index, col_index, q_seed, checker, cfg.mine_tol
            )
        except BoundaryBracketError:
            continue
        boundary_q.extend([safe_end, col_end])
        boundary_lab.extend([False, True])
    boundary_q = boundary_q[:n_boundary]
    boundary_lab = boundary_lab[:n_boundary]

    all_q = np.vstack([Q] + [np.asarray(boundary_q)]) if boundary_q else Q
    all_lab = np.concatenate([labels, np.asarray(boundary_lab, dtype=bool)])

    values = np.empty(all_q.shape[0])
    grads = np.empty_like(all_q)
    free_pts = free_index.points
    col_pts = col_index.points
    for i, (q, lab) in enumerate(zip(all_q, all_lab)):
        pool = free_pts if lab else col_pts
        d = np.linalg.norm(pool - q, axis=1)
        j = int(np.argmin(d))
        if d[j] < 1e-12:
            d[j] = np.inf
            j = int(np.argmin(d))
        values[i], grads[i] = ground_truth(q, pool[j], bool(lab))

    lo, hi = workspace_bounds(model, cfg.workspace_extension)
    pts = make_self_collision_points(
        lo, hi, all_q.shape[0], seed + 3, model.reach(), model.base_translation,
        cfg.outside_fraction,
    )
    perm = rng.permutation(all_q.shape[0])

    dt = sample_dtype(model.dof, model.point_dim)
    samples = np.zeros(all_q.shape[0], dtype=dt)
    samples["q"] = all_q[perm]
    samples["p"] = pts[perm]
    samples["value"] = values[perm]
    samples["label"] = all_lab[perm].astype(np.uint8)
    samples["grad"] = grads[perm]
    ds = FieldDataset(dof=model.dof, point_dim=model.point_dim, samples=samples)
    ds.validate()
    report = {
        "n_total": len(ds),
        "n_random": n_random,
        "n_balanced": n_added,
        "n_boundary": len(boundary_q),
        "class_ratio_pct": ds.class_ratio(),
        "bsr_pct": 100.0 * ds.boundary_sample_ratio(),
    }
    return ds, report


def build_uniform_dataset(model: RobotModel, n: int, seed: int, cfg: SelfDatasetConfig = None):
    """Uniform-sampling ablation baseline: no balancing, no mining; ground truth is
    the distance to the nearest opposite-class sample."""
    cfg = cfg or SelfDatasetConfig()
    Q, labels = sample_base_configs(model, n, seed)
    return _finalize_sampled(model, Q, labels, seed, cfg, {"n_random": n, "n_balanced": 0})


def build_balanced_dataset(model: RobotModel, n: int, seed: int, cfg: SelfDatasetConfig = None):
    """Class-balanced ablation variant: balancing but no boundary mining."""
    cfg = cfg or SelfDatasetConfig()
    checker = lambda Q: batch_self_collision(model, np.atleast_2d(Q))
    n0 = max(2, int(round(n / (1 + 1.0 / cfg.tau))))
    Q, labels = sample_base_configs(model, n0, seed)
    Q, labels, n_added = balance_classes(
        Q, labels, lambda c: batch_self_collision(model, np.atleast_2d(c)), cfg.tau,
        cfg.sigma, cfg.max_tries, seed + 1, bounds=model.extended_limits(),
    )
    return _finalize_sampled(model, Q, labels, seed, cfg, {"n_random": n0, "n_balanced": n_added})


def _finalize_sampled(model, Q, labels, seed, cfg, extra_report):
    free = Q[~labels]
    col = Q[labels]
    if free.shape[0] == 0 or col.shape[0] == 0:
        raise ClassMissingError("need both classes to produce signed ground truth")
    values = np.empty(Q.shape[0])
    grads = np.empty_like(Q)
    for i, (q, lab) in enumerate(zip(Q, labels)):
        pool = free if lab else col
        d = np.linalg.norm(pool - q, axis=1)
        j = int(np.argmin(d))
        values[i], grads[i] = ground_truth(q, pool[j], bool(lab))
    lo, hi = workspace_bounds(model, cfg.workspace_extension)
    pts = make_self_collision_points(
        lo, hi, Q.shape[0], seed + 3, model.reach(), model.base_translation,
        cfg.outside_fraction,
    )
    dt = sample_dtype(model.dof, model.point_dim)
    samples = np.zeros(Q.shape[0], dtype=dt)
    samples["q"] = Q
    samples["p"] = pts
    samples["value"] = values
    samples["label"] = labels.astype(np.uint8)
    samples["grad"] = grads
    ds = FieldDataset(dof=model.dof, point_dim=model.point_dim, samples=samples)
    ds.validate()
    report = {
        "n_total": len(ds),
        "n_boundary": 0,
        "class_ratio_pct": ds.class_ratio(),
        "bsr_pct": 100.0 * ds.boundary_sample_ratio(),
    }
    report.update(extra_report)
    return ds, report


# ---------------------------------------------------------------------------
# spatial hashing (external collision)


@dataclass
class VoxelConfigMap:
    """Mapping from voxel index to the ids of configurations whose spheres
    intersect that voxel, plus the configuration table itself."""

    origin: np.ndarray
    dx: float
    counts: np.ndarray
    mapping: dict
    configs: np.ndarray

    def voxel_of(self, p: np.ndarray) -> tuple:
        p = np.asarray(p, dtype=float)
        idx = np.floor((p - self.origin) / self.dx).astype(int)
        return tuple(idx)


def hash_point(p: np.ndarray, origin: np.ndarray, dx: float) -> tuple:
    """h(p) = floor((p - w_min) / dx)."""
    p = np.asarray(p, dtype=float)
    origin = np.asarray(origin, dtype=float)
    return tuple(np.floor((p - origin) / dx).astype(int))


def sphere_voxel_hits(center: np.ndarray, radius: float, origin: np.ndarray, dx: float, counts):
    """Voxel indices whose box intersects the sphere (exact clamp test over the
    sphere's AABB influence range)."""
    lo_idx = np.floor((center - radius - origin) / dx).astype(int)
    hi_idx = np.floor((center + radius - origin) / dx).astype(int)
    lo_idx = np.maximum(lo_idx, 0)
    hi_idx = np.minimum(hi_idx, np.asarray(counts) - 1)
    if np.any(lo_idx > hi_idx):
        return np.zeros((0, center.shape[0]), dtype=int)
    axes = [np.arange(lo_idx[a], hi_idx[a] + 1) for a in range(center.shape[0])]
    mesh = np.meshgrid(*axes, indexing="ij")
    cells = np.stack([m.ravel() for m in mesh], axis=1)
    box_lo = origin + cells * dx
    closest = np.clip(center, box_lo, box_lo + dx)
    keep = np.linalg.norm(closest - center, axis=1) <= radius
    return cells[keep]


def build_voxel_map(
    model: RobotModel,
    configs: np.ndarray,
    box=None,
    dx: float = None,
    workers: int = 1,
) -> VoxelConfigMap:
    """Parallel spatial hashing construction.

    For every configuration and sphere, the influence voxel range is scanned
    and a voxel keeps the configuration id only if the sphere truly intersects
    it. Work is split over configuration chunks; the merged result is
    independent of chunk order.
    """
    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    if configs.shape[0] == 0:
        raise InvalidInputError("need at least one configuration")
    if dx is None:
        dx = float(np.min(model.sphere_radii))
    if dx <= 0:
        raise InvalidInputError("voxel resolution must be positive")
    if box is None:
        box = workspace_bounds(model)
    lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    counts = np.maximum(np.ceil((hi - lo) / dx).astype(int), 1)

    def process(chunk_ids):
        part: dict = {}
        centers = batch_sphere_centers(model, configs[chunk_ids])
        radii = model.sphere_radii
        for local, cid in enumerate(chunk_ids):
            for s in range(radii.size):
                c, r = centers[local, s], radii[s]
                if np.any(c - r < lo) or np.any(c + r > hi):
                    raise OutOfBoundsError(
                        f"configuration {cid} has a sphere outside the hashed box"
                    )
                for cell in map(tuple, sphere_voxel_hits(c, r, lo, dx, counts)):
                    part.setdefault(cell, set()).add(int(cid))
        return part

    ids = np.arange(configs.shape[0])
    chunks = np.array_split(ids, max(1, workers))
    partials = []
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(process, [c for c in chunks if c.size]))
    else:
        partials = [process(c) for c in chunks if c.size]

    merged: dict = {}
    for part in partials:
        for cell, idset in part.items():
            merged.setdefault(cell, set()).update(idset)
    mapping = {cell: np.array(sorted(s), dtype=int) for cell, s in merged.items()}
    return VoxelConfigMap(origin=lo, dx=dx, counts=counts, mapping=mapping, configs=configs)


def risk_configs(vmap: VoxelConfigMap, p: np.ndarray) -> np.ndarray:
    """Configuration ids whose geometry covers the voxel containing p."""
    p = np.asarray(p, dtype=float)
    idx = np.floor((p - vmap.origin) / vmap.dx).astype(int)
    if np.any(idx < 0) or np.any(idx >= vmap.counts):
        raise OutOfBoundsError(f"point {p} lies outside the hashed box")
    return vmap.mapping.get(tuple(idx), np.zeros(0, dtype=int))


def external_ground_truth(
    model: RobotModel,
    vmap: VoxelConfigMap,
    q: np.ndarray,
    p: np.ndarray,
    tol: float = 1e-4,
    free_pool_radius: float = 1.0,
):
    """One external-collision tuple for (q, p) via the voxel map.

    Nearest opposing-class configurations come from the risk set (colliding
    side) and from non-risk samples near it (free side); bisection against the
    point-collision checker refines the boundary before applying the
    distance/gradient rule.

    Returns (value, label, grad).
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    label = collides_with_point(model, q, p)
    risk = risk_configs(vmap, p)
    clamp = float(np.linalg.norm(model.extended_limits()[:, 1] - model.extended_limits()[:, 0]))
    if risk.size == 0:
        grad = np.zeros(model.dof)
        grad[0] = 1.0
        return clamp, False, grad
    risk_q = vmap.configs[risk]
    risk_lab = batch_point_collision(model, risk_q, p)
    col_pool = risk_q[risk_lab]
    if col_pool.shape[0] == 0:
        grad = np.zeros(model.dof)
        grad[0] = 1.0
        return clamp, False, grad
    if label:
        mask = np.ones(vmap.configs.shape[0], dtype=bool)
        mask[risk] = False
        others = vmap.configs[mask]
        anchor = col_pool[np.argmin(np.linalg.norm(col_pool - q, axis=1))]
        near = others[np.linalg.norm(others - anchor, axis=1) <= free_pool_radius]
        if near.shape[0]:
            near = near[~batch_point_collision(model, near, p)]
        if near.shape[0] == 0:
            grad = np.zeros(model.dof)
            grad[0] = 1.0
            return -float(tol), True, grad
        pool = near
    else:
        pool = col_pool
    nn = pool[np.argmin(np.linalg.norm(pool - q, axis=1))]
    checker = lambda x: collides_with_point(model, x, p)
    a, b = bisect_boundary(q, nn, checker, tol)
    value, grad = ground_truth(q, 0.5 * (a + b), bool(label))
    return value, bool(label), grad


@dataclass
class ExternalDatasetConfig:
    n_configs: int = 3000
    n_points: int = 60
    samples_per_point: int = 40
    dx: float = None
    mine_tol: float = 1e-4
    free_pool_radius: float = 1.0
    workspace_extension: float = 1.5
    workers: int = 1
    risk_sample_fraction: float = 0.5
    # fraction of obstacle points drawn from inside the reachable set; the rest
    # cover the extended workspace and mostly land unreachable
    reachable_point_fraction: float = 0.75


def build_external_dataset(model: RobotModel, seed: int, cfg: ExternalDatasetConfig = None):
    """External-collision pipeline: spatial hash once, then per-point tuples."""
    cfg = cfg or ExternalDatasetConfig()
    rng = np.random.default_rng(seed)
    box = model.extended_limits()
    configs = rng.uniform(box[:, 0], box[:, 1], size=(cfg.n_configs, model.dof))
    wlo, whi = workspace_bounds(model, cfg.workspace_extension)
    vmap = build_voxel_map(model, configs, (wlo, whi), cfg.dx, workers=cfg.workers)

    rows = []
    dt = sample_dtype(model.dof, model.point_dim)
    n_unreachable = 0
    reach = model.reach()
    base = model.base_translation
    for k in range(cfg.n_points):
        if rng.random() < cfg.reachable_point_fraction:
            direction = rng.normal(size=model.point_dim)
            direction /= np.linalg.norm(direction)
            p = base + direction * (reach * 0.95 * rng.random() ** (1.0 / model.point_dim))
        else:
            p = rng.uniform(wlo, whi)
        risk = risk_configs(vmap, p)
        if risk.size == 0:
            n_unreachable += 1
        take_risk = int(cfg.samples_per_point * cfg.risk_sample_fraction)
        qs = []
        if risk.size:
            picks = risk[rng.integers(0, risk.size, size=min(take_risk, risk.size))]
            qs.extend(vmap.configs[picks])
        while len(qs) < cfg.samples_per_point:
            qs.append(configs[rng.integers(0, configs.shape[0])])
        for q in qs:
            value, label, grad = external_ground_truth(
                model, vmap, q, p, cfg.mine_tol, cfg.free_pool_radius
            )
            row = np.zeros(1, dtype=dt)
            row["q"] = q
            row["p"] = p
            row["value"] = value
            row["label"] = np.uint8(label)
            row["grad"] = grad
            rows.append(row)
    samples = np.concatenate(rows) if rows else np.zeros(0, dtype=dt)
    ds = FieldDataset(dof=model.dof, point_dim=model.point_dim, samples=samples)
    ds.validate()
    report = {
        "n_total": len(ds),
        "n_unreachable": n_unreachable,
        "n_voxels": len(vmap.mapping),
        "class_ratio_pct": ds.class_ratio() if len(ds) else float("nan"),
        "bsr_pct": 100.0 * ds.boundary_sample_ratio() if len(ds) else float("nan"),
    }
    return ds, report, vmap
