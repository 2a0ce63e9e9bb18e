"""Ground-truth collision checking and brute-force C-space signed distance fields.

Distances live in configuration space (rad). A field value is positive at safe
configurations and negative in collision; the magnitude is the Euclidean
joint-space distance to the nearest opposite-class grid cell center. Joint
limits enter the self-collision field analytically as the distance to the
limit box.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    InvalidInputError,
    DegenerateGradientError,
    OutOfBoundsError,
    SchemaError,
    VersionError,
)
from .robot import RobotModel, batch_sphere_centers, workspace_bounds

SCENE_SCHEMA_VERSION = 1
GRID_MAGIC = b"CSG1"


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Obstacle:
    """Geometric primitive with optional constant velocity (m/s)."""

    kind: str  # "disc" or "box"
    center: np.ndarray
    radius: float = 0.0
    half_extents: np.ndarray = None
    velocity: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.kind not in ("disc", "box"):
            raise InvalidInputError(f"unknown obstacle kind {self.kind!r}")
        if self.kind == "disc" and self.radius <= 0:
            raise InvalidInputError("disc radius must be positive")
        if self.kind == "box":
            self.half_extents = np.asarray(self.half_extents, dtype=float)
            if np.any(self.half_extents <= 0):
                raise InvalidInputError("box extents must be positive")
        if self.velocity is None:
            self.velocity = np.zeros_like(self.center)
        else:
            self.velocity = np.asarray(self.velocity, dtype=float)

    def at(self, t: float) -> "Obstacle":
        return Obstacle(
            self.kind,
            self.center + t * self.velocity,
            self.radius,
            None if self.half_extents is None else self.half_extents.copy(),
            self.velocity.copy(),
        )

    def boundary_points(self, spacing: float) -> np.ndarray:
        """Points on the primitive surface, roughly `spacing` apart (2D)."""
        if self.center.size != 2:
            raise InvalidInputError("boundary sampling implemented for planar scenes")
        if self.kind == "disc":
            n = max(8, int(np.ceil(2 * np.pi * self.radius / spacing)))
            ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            return self.center + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        hx, hy = self.half_extents
        xs = np.arange(-hx, hx + 1e-9, spacing)
        ys = np.arange(-hy, hy + 1e-9, spacing)
        pts = (
            [(x, -hy) for x in xs]
            + [(x, hy) for x in xs]
            + [(-hx, y) for y in ys]
            + [(hx, y) for y in ys]
        )
        return self.center + np.unique(np.asarray(pts), axis=0)

    def interior_points(self, spacing: float) -> np.ndarray:
        if self.center.size != 2:
            raise InvalidInputError("interior sampling implemented for planar scenes")
        if self.kind == "disc":
            r = np.arange(0.0, self.radius, spacing)
        else:
            r = np.arange(0.0, float(np.min(self.half_extents)), spacing)
        pts = [self.center]
        for rad in r[1:]:
            n = max(4, int(np.ceil(2 * np.pi * rad / spacing)))
            ang = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
            ring = self.center + rad * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            if self.kind == "box":
                ring = ring[np.all(np.abs(ring - self.center) <= self.half_extents, axis=1)]
            pts.append(np.atleast_2d(ring))
        return np.vstack([np.atleast_2d(p) for p in pts])


@dataclass
class Scene:
    """Obstacle list plus an optional explicit obstacle point set."""

    obstacles: list = field(default_factory=list)
    points: np.ndarray = None

    def __post_init__(self):
        if self.points is not None:
            self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
            if not np.all(np.isfinite(self.points)):
                raise InvalidInputError("scene points must be finite")

    def at(self, t: float) -> "Scene":
        return Scene([o.at(t) for o in self.obstacles], self.points)

    def sample_points(self, spacing: float = 0.1, interior: bool = True) -> np.ndarray:
        """Point-cloud view of the scene: primitive surfaces plus explicit points."""
        chunks = []
        for o in self.obstacles:
            chunks.append(o.boundary_points(spacing))
            if interior:
                chunks.append(o.interior_points(spacing * 1.5))
        if self.points is not None:
            chunks.append(self.points)
        if not chunks:
            return np.zeros((0, 2))
        return np.vstack(chunks)


def scene_to_dict(scene: Scene) -> dict:
    d = {"version": SCENE_SCHEMA_VERSION, "obstacles": []}
    for o in scene.obstacles:
        entry = {
            "type": o.kind,
            "center": o.center.tolist(),
            "velocity": o.velocity.tolist(),
        }
        if o.kind == "disc":
            entry["radius"] = o.radius
        else:
            entry["half_extents"] = o.half_extents.tolist()
        d["obstacles"].append(entry)
    if scene.points is not None:
        d["points"] = scene.points.tolist()
    return d


def scene_from_dict(d: dict) -> Scene:
    if not isinstance(d, dict) or "version" not in d:
        raise SchemaError("scene file must be an object with a 'version' field")
    if d["version"] != SCENE_SCHEMA_VERSION:
        raise VersionError(f"unsupported scene schema version {d['version']!r}")
    try:
        obstacles = []
        for entry in d.get("obstacles", []):
            obstacles.append(
                Obstacle(
                    kind=entry["type"],
                    center=np.asarray(entry["center"], dtype=float),
                    radius=float(entry.get("radius", 0.0)),
                    half_extents=np.asarray(entry["half_extents"], dtype=float)
                    if "half_extents" in entry
                    else None,
                    velocity=np.asarray(entry["velocity"], dtype=float)
                    if "velocity" in entry
                    else None,
                )
            )
        pts = np.asarray(d["points"], dtype=float) if "points" in d else None
        return Scene(obstacles, pts)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed scene file: {exc}") from exc


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# binary collision checks


def batch_self_collision(model: RobotModel, Q: np.ndarray, pairs_only: bool = False) -> np.ndarray:
    """Vectorized self-collision labels for configurations Q (B, n).

    A configuration is in collision when any tested sphere pair overlaps or,
    unless `pairs_only`, when it violates the joint limits.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    centers = batch_sphere_centers(model, Q)
    ii, jj = model.collision_pairs
    if ii.size:
        diff = centers[:, ii, :] - centers[:, jj, :]
        dist = np.linalg.norm(diff, axis=2)
        thresh = model.sphere_radii[ii] + model.sphere_radii[jj]
        hit = np.any(dist <= thresh, axis=1)
    else:
        hit = np.zeros(Q.shape[0], dtype=bool)
    if not pairs_only:
        hit |= ~model.within_limits(Q)
    return hit


def is_self_collision(model: RobotModel, q: np.ndarray) -> bool:
    """True iff q self-collides (non-exempt sphere pair overlap or limit violation)."""
    return bool(batch_self_collision(model, np.asarray(q, dtype=float)[None, :])[0])


def batch_point_collision(model: RobotModel, Q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Labels for `p lies inside some robot sphere` over configurations Q."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape[0] != model.point_dim:
        raise InvalidInputError(f"point must have dimension {model.point_dim}")
    centers = batch_sphere_centers(model, np.atleast_2d(Q))
    dist = np.linalg.norm(centers - p, axis=2)
    return np.any(dist <= model.sphere_radii, axis=1)


def collides_with_point(model: RobotModel, q, p) -> bool:
    return bool(batch_point_collision(model, np.asarray(q, dtype=float)[None, :], p)[0])


def point_clearance(model: RobotModel, q: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Workspace clearance min_i(||p - c_i|| - r_i) for each point (negative inside)."""
    centers = batch_sphere_centers(model, np.asarray(q, dtype=float)[None, :])[0]
    pts = np.atleast_2d(points)
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2) - model.sphere_radii
    return d.min(axis=1)


def batch_scene_collision(model: RobotModel, Q: np.ndarray, scene: Scene, t: float = 0.0):
    """Robot-vs-primitive overlap labels (self-collision not included)."""
    Q = np.atleast_2d(Q)
    centers = batch_sphere_centers(model, Q)
    radii = model.sphere_radii
    hit = np.zeros(Q.shape[0], dtype=bool)
    for obs in scene.at(t).obstacles:
        if obs.kind == "disc":
            d = np.linalg.norm(centers - obs.center, axis=2)
            hit |= np.any(d <= radii + obs.radius, axis=1)
        else:
            delta = np.abs(centers - obs.center) - obs.half_extents
            d = np.linalg.norm(np.maximum(delta, 0.0), axis=2)
            hit |= np.any(d <= radii, axis=1)
    return hit


def scene_collides(model: RobotModel, q, scene: Scene, t: float = 0.0, include_self=True) -> bool:
    q = np.asarray(q, dtype=float)[None, :]
    if include_self and batch_self_collision(model, q)[0]:
        return True
    return bool(batch_scene_collision(model, q, scene, t)[0])


# ---------------------------------------------------------------------------
# C-space grids


@dataclass
class CSpaceGrid:
    """Cell-centered signed distance samples over a joint-space box.

    values[i, j, ...] is the signed distance at the cell center; `nearest`
    optionally stores, per cell, the index of the nearest opposite-class cell
    as produced by the distance transform.
    """

    bounds: np.ndarray  # (n, 2)
    values: np.ndarray
    labels: np.ndarray = None
    nearest: np.ndarray = None

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)

    @property
    def dof(self) -> int:
        return self.bounds.shape[0]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_sizes(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / np.asarray(self.shape)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.bounds[:, 1] - self.bounds[:, 0]))

    def axis_centers(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        n = self.shape[axis]
        step = (hi - lo) / n
        return lo + (np.arange(n) + 0.5) * step

    def cell_centers(self) -> np.ndarray:
        """(prod(shape), n) array of cell centers in row-major cell order."""
        axes = [self.axis_centers(a) for a in range(self.dof)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_index(self, q: np.ndarray) -> tuple:
        q = np.asarray(q, dtype=float)
        idx = np.floor((q - self.bounds[:, 0]) / self.cell_sizes).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return tuple(idx)

    def value_at(self, q: np.ndarray) -> float:
        """Multilinear interpolation of the stored values at q (clamped to the box)."""
        return float(_interp(self.values, self.bounds, np.atleast_2d(q))[0])

    def gradient_grids(self) -> np.ndarray:
        """Central-difference gradient per axis, shape (n, *shape)."""
        grads = np.gradient(self.values, *self.cell_sizes)
        if self.dof == 1:
            grads = [grads]
        return np.stack(grads, axis=0)


def _interp(values: np.ndarray, bounds: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Multilinear interpolation on a cell-centered grid, clamped at the edges."""
    n = bounds.shape[0]
    shape = np.asarray(values.shape)
    cell = (bounds[:, 1] - bounds[:, 0]) / shape
    u = (Q - bounds[:, 0]) / cell - 0.5
    i0 = np.clip(np.floor(u).astype(int), 0, shape - 2)
    frac = np.clip(u - i0, 0.0, 1.0)
    out = np.zeros(Q.shape[0])
    for corner in range(1 << n):
        w = np.ones(Q.shape[0])
        idx = []
        for a in range(n):
            bit = (corner >> a) & 1
            idx.append(i0[:, a] + bit)
            w = w * (frac[:, a] if bit else (1.0 - frac[:, a]))
        out += w * values[tuple(idx)]
    return out


def _interp_with_grad(values: np.ndarray, bounds: np.ndarray, Q: np.ndarray):
    """Multilinear interpolation and its exact gradient.

    The gradient is the derivative of the interpolant itself (piecewise
    constant per cell along each axis), so value and gradient are always
    consistent; clamped queries get zero gradient along saturated axes.
    """
    n = bounds.shape[0]
    shape = np.asarray(values.shape)
    cell = (bounds[:, 1] - bounds[:, 0]) / shape
    u = (Q - bounds[:, 0]) / cell - 0.5
    i0 = np.clip(np.floor(u).astype(int), 0, shape - 2)
    raw = u - i0
    frac = np.clip(raw, 0.0, 1.0)
    interior = (raw > 0.0) & (raw < 1.0)
    out = np.zeros(Q.shape[0])
    grad = np.zeros((Q.shape[0], n))
    for corner in range(1 << n):
        idx = []
        factors = np.empty((n, Q.shape[0]))
        for a in range(n):
            bit = (corner >> a) & 1
            idx.append(i0[:, a] + bit)
            factors[a] = frac[:, a] if bit else (1.0 - frac[:, a])
        v = values[tuple(idx)]
        w = factors.prod(axis=0)
        out += w * v
        for a in range(n):
            others = np.ones(Q.shape[0])
            for b in range(n):
                if b != a:
                    others *= factors[b]
            sign = 1.0 if (corner >> a) & 1 else -1.0
            grad[:, a] += sign * others * v / cell[a]
    grad *= interior.astype(float)
    return out, grad


def joint_box_distance(q: np.ndarray, limits: np.ndarray) -> np.ndarray:
    """Signed distance to the joint-limit box: min_j min(q_j - lo_j, hi_j - q_j).

    Positive inside, negative outside (magnitude of the worst violation).
    """
    q = np.atleast_2d(q)
    d = np.minimum(q - limits[:, 0], limits[:, 1] - q)
    return d.min(axis=1)


def signed_from_labels(labels: np.ndarray, cell_sizes: np.ndarray, clamp: float):
    """Signed Euclidean distance between cell centers from boolean collision labels.

    Returns (values, nearest) where nearest[:, cell] indexes the closest
    opposite-class cell. Degenerate single-class grids come back clamped with
    a warning.
    """
    labels = np.asarray(labels, dtype=bool)
    if not labels.any() or labels.all():
        warnings.warn(
            "degenerate grid: only one collision class present; returning clamped field",
            RuntimeWarning,
            stacklevel=2,
        )
        sign = -1.0 if labels.all() else 1.0
        values = np.full(labels.shape, sign * clamp)
        return values, None
    sampling = tuple(float(c) for c in cell_sizes)
    d_safe, idx_safe = ndimage.distance_transform_edt(
        ~labels, sampling=sampling, return_indices=True
    )
    d_col, idx_col = ndimage.distance_transform_edt(
        labels, sampling=sampling, return_indices=True
    )
    values = np.where(labels, -d_col, d_safe)
    nearest = np.where(labels, idx_col, idx_safe)
    return values, nearest


def _grid_bounds(model: RobotModel, bounds) -> np.ndarray:
    if bounds is None:
        return model.extended_limits()
    return np.asarray(bounds, dtype=float).reshape(model.dof, 2)


def grid_labels_self(
    model: RobotModel, bounds=None, resolution: int = 101, pairs_only: bool = True,
    chunk: int = 50000,
) -> CSpaceGrid:
    """Boolean sphere-pair collision labels over a cell-centered C-space grid."""
    b = _grid_bounds(model, bounds)
    shape = (resolution,) * model.dof if np.isscalar(resolution) else tuple(resolution)
    grid = CSpaceGrid(bounds=b, values=np.zeros(shape))
    centers = grid.cell_centers()
    labels = np.empty(centers.shape[0], dtype=bool)
    for s in range(0, centers.shape[0], chunk):
        labels[s : s + chunk] = batch_self_collision(
            model, centers[s : s + chunk], pairs_only=pairs_only
        )
    grid.labels = labels.reshape(shape)
    return grid


def oracle_self_distance(model: RobotModel, bounds=None, resolution: int = 101) -> CSpaceGrid:
    """Discretized generalized self-collision distance (link pairs + joint limits).

    The pair-collision field is a signed distance transform between cell
    centers; the joint-limit boundary is folded in analytically as
    min(pair field, limit box distance).
    """
    grid = grid_labels_self(model, bounds, resolution, pairs_only=True)
    values, nearest = signed_from_labels(grid.labels, grid.cell_sizes, grid.diameter)
    limit = joint_box_distance(grid.cell_centers(), model.joint_limits).reshape(grid.shape)
    grid.values = np.minimum(values, limit)
    grid.nearest = nearest
    # final labels reflect the merged field: collision = pairs or out of limits
    grid.labels = grid.labels | (limit < 0)
    return grid


def oracle_point_distance(
    model: RobotModel, p: np.ndarray, bounds=None, resolution: int = 101, chunk: int = 50000
) -> CSpaceGrid:
    """Discretized signed distance to the set of configurations colliding with p."""
    b = _grid_bounds(model, bounds)
    shape = (resolution,) * model.dof if np.isscalar(resolution) else tuple(resolution)
    grid = CSpaceGrid(bounds=b, values=np.zeros(shape))
    centers = grid.cell_centers()
    labels = np.empty(centers.shape[0], dtype=bool)
    for s in range(0, centers.shape[0], chunk):
        labels[s : s + chunk] = batch_point_collision(model, centers[s : s + chunk], p)
    grid.labels = labels.reshape(shape)
    grid.values, grid.nearest = signed_from_labels(grid.labels, grid.cell_sizes, grid.diameter)
    return grid


# ---------------------------------------------------------------------------
# composition rules


def compose_distance(d_s: float, d_c: float) -> float:
    """Composite per-point rule: max when both negative, else min."""
    if not (np.isfinite(d_s) and np.isfinite(d_c)):
        raise InvalidInputError("compose_distance requires finite inputs")
    if d_s < 0 and d_c < 0:
        return max(d_s, d_c)
    return min(d_s, d_c)


def compose_arrays(d_s: np.ndarray, d_c: np.ndarray) -> np.ndarray:
    both_neg = (d_s < 0) & (d_c < 0)
    return np.where(both_neg, np.maximum(d_s, d_c), np.minimum(d_s, d_c))


def aggregate_points(values) -> float:
    """Multi-point rule: max of the values when all negative, else min."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise InvalidInputError("aggregate_points needs a non-empty value list")
    if np.all(values < 0):
        return float(values.max())
    return float(values.min())


def aggregate_index(values) -> int:
    """Index of the value selected by aggregate_points (first on ties)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise InvalidInputError("aggregate_points needs a non-empty value list")
    if np.all(values < 0):
        return int(np.argmax(values))
    return int(np.argmin(values))


def project_to_boundary(q: np.ndarray, d: float, grad: np.ndarray) -> np.ndarray:
    """Boundary projection q - d * grad with the gradient renormalized to unit length."""
    q = np.asarray(q, dtype=float)
    grad = np.asarray(grad, dtype=float)
    norm = np.linalg.norm(grad)
    if norm < 1e-9:
        raise DegenerateGradientError("cannot project along a zero gradient")
    return q - d * grad / norm


# ---------------------------------------------------------------------------
# queryable fields backed by oracle grids


class GridField:
    """Multilinear view of one grid: value and gradient queries at arbitrary q.

    Gradients are the exact derivatives of the interpolant, so optimizers see
    consistent (value, gradient) pairs.
    """

    def __init__(self, grid: CSpaceGrid):
        self.grid = grid

    def value(self, Q: np.ndarray) -> np.ndarray:
        return _interp(self.grid.values, self.grid.bounds, np.atleast_2d(Q))

    def value_and_grad(self, Q: np.ndarray):
        return _interp_with_grad(self.grid.values, self.grid.bounds, np.atleast_2d(Q))


class OraclePointField:
    """Per-point composite C-space fields built on demand from grid oracles.

    Each workspace point gets its own signed-distance grid composed with the
    robot's self-collision field. Grids are cached by exact point coordinates,
    so static points are computed once and moving points are rebuilt as they
    move.
    """

    def __init__(
        self,
        model: RobotModel,
        bounds=None,
        resolution: int = 81,
        cache_size: int = 4096,
        point_quantize: float = 0.0,
    ):
        self.model = model
        self.bounds = _grid_bounds(model, bounds)
        self.resolution = resolution
        self.point_quantize = point_quantize
        self.self_grid = oracle_self_distance(model, self.bounds, resolution)
        shape = self.self_grid.shape
        self._centers = self.self_grid.cell_centers()
        self._sphere_centers = batch_sphere_centers(model, self._centers)
        self._cache: dict = {}
        self._cache_size = cache_size
        self._shape = shape

    def _point_field(self, p: np.ndarray) -> GridField:
        p = np.asarray(p, dtype=float)
        if self.point_quantize > 0:
            p = np.round(p / self.point_quantize) * self.point_quantize
        key = tuple(np.round(p, 12))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        dist = np.linalg.norm(self._sphere_centers - p, axis=2)
        labels = np.any(dist <= self.model.sphere_radii, axis=1).reshape(self._shape)
        if labels.any():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                values, _ = signed_from_labels(
                    labels, self.self_grid.cell_sizes, self.self_grid.diameter
                )
        else:
            values = np.full(self._shape, self.self_grid.diameter)
        composite = compose_arrays(self.self_grid.values, values)
        fieldview = GridField(CSpaceGrid(bounds=self.bounds, values=composite))
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = fieldview
        return fieldview

    def point_values_and_grads(self, q: np.ndarray, points: np.ndarray):
        """Composite distance and q-gradient for each workspace point."""
        pts = np.atleast_2d(points)
        vals = np.empty(pts.shape[0])
        grads = np.empty((pts.shape[0], self.model.dof))
        for i, p in enumerate(pts):
            fv = self._point_field(p)
            v, g = fv.value_and_grad(q[None, :])
            vals[i] = v[0]
            grads[i] = g[0]
        return vals, grads

    def aggregate(self, q: np.ndarray, points: np.ndarray):
        """Scene-level (phi, grad) via the multi-point aggregation rule."""
        phi, grad = self.aggregate_batch(np.asarray(q, dtype=float)[None, :], points)
        return float(phi[0]), grad[0]

    def aggregate_batch(self, Q: np.ndarray, points: np.ndarray):
        """Aggregated (phi, grad) for a batch of configurations (S, n)."""
        Q = np.atleast_2d(Q)
        pts = np.atleast_2d(points) if points is not None and len(points) else None
        if pts is None or pts.shape[0] == 0:
            if not hasattr(self, "_self_view"):
                self._self_view = GridField(self.self_grid)
            return self._self_view.value_and_grad(Q)
        S = Q.shape[0]
        vals = np.empty((pts.shape[0], S))
        grads = np.empty((pts.shape[0], S, self.model.dof))
        for i, p in enumerate(pts):
            fv = self._point_field(p)
            vals[i], grads[i] = fv.value_and_grad(Q)
        all_neg = np.all(vals < 0, axis=0)
        pick = np.where(all_neg, np.argmax(vals, axis=0), np.argmin(vals, axis=0))
        cols = np.arange(S)
        return vals[pick, cols], grads[pick, cols, :]

    def point_scores(self, q: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Cheap ranking proxy: workspace clearance of each point."""
        return point_clearance(self.model, q, points)


# ---------------------------------------------------------------------------
# grid dump format (CSG1)


def save_grid(grid: CSpaceGrid, path) -> None:
    """Flat binary dump: magic, dof, per-axis counts, per-axis bounds, row-major values."""
    n = grid.dof
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I", n))
        fh.write(struct.pack(f"<{n}I", *grid.shape))
        fh.write(np.ascontiguousarray(grid.bounds, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def load_grid(path) -> CSpaceGrid:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRID_MAGIC:
            raise SchemaError(f"not a CSG1 grid file (magic {magic!r})")
        (n,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{n}I", fh.read(4 * n))
        bounds = np.frombuffer(fh.read(16 * n), dtype="<f8").reshape(n, 2).copy()
        count = int(np.prod(shape))
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
    return CSpaceGrid(bounds=bounds, values=values)
