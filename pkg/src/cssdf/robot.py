"""Serial-chain robot models: revolute kinematics, joint limits, sphere-cluster geometry.

A robot is a chain of revolute joints. Joint ``i`` sits at a fixed offset in the
frame of link ``i-1`` and rotates link ``i`` about its axis (the z axis for
planar robots). Collision geometry is a cluster of spheres rigidly attached to
each link, expressed in that link's frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SchemaError, VersionError

ROBOT_SCHEMA_VERSION = 1

# Sphere pairs closer than this at the zero configuration are treated as
# permanently in contact (they share a joint) and excluded from self-collision
# testing.
_ZERO_CONFIG_CONTACT_TOL = 1e-9


@dataclass
class LinkGeometry:
    """One link: the joint that drives it plus its collision spheres.

    Attributes:
        parent_joint: index of the joint preceding this link (0-based).
        offset: translation from the previous link frame to this joint, in m.
        axis: rotation axis for spatial robots (unit 3-vector); ignored when
            the workspace is planar.
        sphere_centers: (k, w) sphere center offsets in the link frame, m.
        sphere_radii: (k,) strictly positive radii, m.
    """

    parent_joint: int
    offset: np.ndarray
    sphere_centers: np.ndarray
    sphere_radii: np.ndarray
    axis: np.ndarray | None = None

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        self.sphere_centers = np.atleast_2d(np.asarray(self.sphere_centers, dtype=float))
        self.sphere_radii = np.atleast_1d(np.asarray(self.sphere_radii, dtype=float))
        if self.axis is not None:
            self.axis = np.asarray(self.axis, dtype=float)
            n = np.linalg.norm(self.axis)
            if n < 1e-12:
                raise InvalidInputError("joint axis must be a nonzero vector")
            self.axis = self.axis / n
        if self.sphere_centers.shape[0] != self.sphere_radii.shape[0]:
            raise InvalidInputError("sphere center/radius count mismatch")
        if self.sphere_radii.size < 1:
            raise InvalidInputError("every link needs at least one collision sphere")
        if np.any(self.sphere_radii <= 0):
            raise InvalidInputError("sphere radii must be strictly positive")
        if not np.all(np.isfinite(self.sphere_centers)):
            raise InvalidInputError("sphere centers must be finite")


@dataclass
class RobotModel:
    """Kinematic chain with limits and sphere-cluster collision geometry."""

    dof: int
    point_dim: int
    joint_limits: np.ndarray
    links: list[LinkGeometry]
    base_rotation: np.ndarray = None
    base_translation: np.ndarray = None
    name: str = "robot"
    # filled by __post_init__
    collision_pairs: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.dof < 1:
            raise InvalidInputError("dof must be >= 1")
        if self.point_dim not in (2, 3):
            raise InvalidInputError("point_dim must be 2 or 3")
        if len(self.links) != self.dof:
            raise InvalidInputError("need one link per joint")
        self.joint_limits = np.asarray(self.joint_limits, dtype=float).reshape(self.dof, 2)
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise InvalidInputError("joint limits must satisfy q_min < q_max")
        w = self.point_dim
        if self.base_rotation is None:
            self.base_rotation = np.eye(w)
        if self.base_translation is None:
            self.base_translation = np.zeros(w)
        self.base_rotation = np.asarray(self.base_rotation, dtype=float).reshape(w, w)
        self.base_translation = np.asarray(self.base_translation, dtype=float).reshape(w)
        for lk in self.links:
            if lk.offset.shape != (w,):
                raise InvalidInputError("link offset dimension mismatch")
            if lk.sphere_centers.shape[1] != w:
                raise InvalidInputError("sphere center dimension mismatch")
            if w == 3 and lk.axis is None:
                raise InvalidInputError("spatial joints need an axis")
        self._sphere_link = np.concatenate(
            [np.full(len(lk.sphere_radii), i) for i, lk in enumerate(self.links)]
        )
        self._all_centers = np.vstack([lk.sphere_centers for lk in self.links])
        self._all_radii = np.concatenate([lk.sphere_radii for lk in self.links])
        if self.collision_pairs is None:
            self.collision_pairs = self._build_collision_pairs()

    @property
    def num_spheres(self) -> int:
        return self._all_radii.size

    @property
    def sphere_radii(self) -> np.ndarray:
        return self._all_radii

    def _build_collision_pairs(self):
        """Sphere pairs subject to self-collision testing.

        Pairs on the same link are rigid and skipped. Pairs on adjacent links
        that already overlap at the zero configuration share the joint and
        would report a permanent false collision, so they are exempt; every
        other pair is tested.
        """
        centers0 = batch_sphere_centers(self, np.zeros((1, self.dof)))[0]
        radii = self._all_radii
        link = self._sphere_link
        ii, jj = [], []
        m = radii.size
        for a in range(m):
            for b in range(a + 1, m):
                da = abs(int(link[a]) - int(link[b]))
                if da == 0:
                    continue
                if da == 1:
                    gap = np.linalg.norm(centers0[a] - centers0[b]) - (radii[a] + radii[b])
                    if gap <= _ZERO_CONFIG_CONTACT_TOL:
                        continue
                ii.append(a)
                jj.append(b)
        return (np.asarray(ii, dtype=int), np.asarray(jj, dtype=int))

    def reach(self) -> float:
        """Upper bound on the distance of any sphere surface from the base."""
        total = sum(np.linalg.norm(lk.offset) for lk in self.links)
        ext = max(np.max(np.linalg.norm(lk.sphere_centers, axis=1)) for lk in self.links)
        return float(total + ext + np.max(self._all_radii))

    def extended_limits(self) -> np.ndarray:
        """Per-joint normalization bounds [min(-pi, q_min), max(pi, q_max)]."""
        lo = np.minimum(-np.pi, self.joint_limits[:, 0])
        hi = np.maximum(np.pi, self.joint_limits[:, 1])
        return np.stack([lo, hi], axis=1)

    def within_limits(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        return np.all(
            (q >= self.joint_limits[:, 0]) & (q <= self.joint_limits[:, 1]), axis=1
        )


def _rot2(q: np.ndarray) -> np.ndarray:
    c, s = np.cos(q), np.sin(q)
    out = np.empty(q.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _rot3(axis: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis for a batch of angles."""
    kx, ky, kz = axis
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    c = np.cos(q)[..., None, None]
    s = np.sin(q)[..., None, None]
    eye = np.eye(3)
    return eye + s * K + (1.0 - c) * (K @ K)


def batch_sphere_centers(model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """World sphere centers for a batch of configurations.

    Args:
        Q: (B, n) joint vectors in rad.

    Returns:
        (B, m, w) centers where m is the total sphere count.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != model.dof:
        raise InvalidInputError(f"expected configurations of shape (B, {model.dof})")
    if not np.all(np.isfinite(Q)):
        raise InvalidInputError("configuration contains non-finite entries")
    B = Q.shape[0]
    w = model.point_dim
    R = np.broadcast_to(model.base_rotation, (B, w, w)).copy()
    t = np.broadcast_to(model.base_translation, (B, w)).copy()
    out = np.empty((B, model.num_spheres, w))
    col = 0
    for i, lk in enumerate(model.links):
        t = t + np.einsum("bij,j->bi", R, lk.offset)
        if w == 2:
            R = R @ _rot2(Q[:, i])
        else:
            R = R @ _rot3(lk.axis, Q[:, i])
        k = lk.sphere_centers.shape[0]
        out[:, col : col + k, :] = t[:, None, :] + np.einsum(
            "bij,kj->bki", R, lk.sphere_centers
        )
        col += k
    return out


def forward_spheres(model: RobotModel, q: np.ndarray) -> list[tuple[np.ndarray, float]]:
    """World-frame spheres (center, radius) at configuration q."""
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.dof:
        raise InvalidInputError(f"expected {model.dof} joint values, got {q.shape[0]}")
    centers = batch_sphere_centers(model, q[None, :])[0]
    return [(centers[i], float(model._all_radii[i])) for i in range(model.num_spheres)]


def workspace_bounds(model: RobotModel, extension: float = 1.5):
    """Axis-aligned workspace box: the reach sphere scaled about the base.

    Args:
        extension: scale factor >= 1 applied to the reach half-width.

    Returns:
        (lo, hi) arrays of length point_dim.
    """
    if extension < 1.0:
        raise InvalidInputError("extension must be >= 1")
    half = model.reach() * extension
    base = model.base_translation
    return base - half, base + half


# ---------------------------------------------------------------------------
# description files


def to_dict(model: RobotModel) -> dict:
    d = {
        "version": ROBOT_SCHEMA_VERSION,
        "name": model.name,
        "dof": model.dof,
        "point_dim": model.point_dim,
        "joint_limits": model.joint_limits.tolist(),
        "base_pose": {
            "rotation": model.base_rotation.tolist(),
            "translation": model.base_translation.tolist(),
        },
        "links": [],
    }
    for lk in model.links:
        entry = {
            "offset": lk.offset.tolist(),
            "spheres": [
                {"center": c.tolist(), "radius": float(r)}
                for c, r in zip(lk.sphere_centers, lk.sphere_radii)
            ],
        }
        if lk.axis is not None:
            entry["axis"] = lk.axis.tolist()
        d["links"].append(entry)
    return d


def from_dict(d: dict) -> RobotModel:
    if not isinstance(d, dict) or "version" not in d:
        raise SchemaError("robot description must be an object with a 'version' field")
    if d["version"] != ROBOT_SCHEMA_VERSION:
        raise VersionError(f"unsupported robot schema version {d['version']!r}")
    required = {"dof", "point_dim", "joint_limits", "links"}
    missing = required - set(d)
    if missing:
        raise SchemaError(f"robot description missing fields: {sorted(missing)}")
    try:
        links = []
        for i, entry in enumerate(d["links"]):
            centers = np.array([s["center"] for s in entry["spheres"]], dtype=float)
            radii = np.array([s["radius"] for s in entry["spheres"]], dtype=float)
            links.append(
                LinkGeometry(
                    parent_joint=i,
                    offset=np.asarray(entry["offset"], dtype=float),
                    sphere_centers=centers,
                    sphere_radii=radii,
                    axis=np.asarray(entry["axis"], dtype=float) if "axis" in entry else None,
                )
            )
        pose = d.get("base_pose", {})
        return RobotModel(
            dof=int(d["dof"]),
            point_dim=int(d["point_dim"]),
            joint_limits=np.asarray(d["joint_limits"], dtype=float),
            links=links,
            base_rotation=np.asarray(pose["rotation"], dtype=float) if "rotation" in pose else None,
            base_translation=np.asarray(pose["translation"], dtype=float)
            if "translation" in pose
            else None,
            name=d.get("name", "robot"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed robot description: {exc}") from exc


def save_robot(model: RobotModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(model), fh, indent=2)


def load_robot(path) -> RobotModel:
    with open(path) as fh:
        return from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# built-in robots

def _capsule_spheres(length: float, radius: float, count: int, dim: int) -> tuple:
    """Evenly spaced spheres along the link segment from the joint to the tip."""
    fractions = np.linspace(0.0, 1.0, count)
    centers = np.zeros((count, dim))
    centers[:, 0] = fractions * length
    return centers, np.full(count, radius)


def planar_arm(
    lengths=(1.0, 1.0),
    radius: float = 0.05,
    spheres_per_link: int = 5,
    limit: float = 2.9,
    name: str = None,
) -> RobotModel:
    """Planar revolute arm with capsule-like sphere clusters on every link."""
    n = len(lengths)
    links = []
    prev = 0.0
    for i, L in enumerate(lengths):
        centers, radii = _capsule_spheres(L, radius, spheres_per_link, 2)
        links.append(
            LinkGeometry(
                parent_joint=i,
                offset=np.array([prev, 0.0]),
                sphere_centers=centers,
                sphere_radii=radii,
            )
        )
        prev = L
    return RobotModel(
        dof=n,
        point_dim=2,
        joint_limits=np.tile([-limit, limit], (n, 1)),
        links=links,
        name=name or f"planar{n}",
    )


def spatial_arm(
    dof: int = 7,
    segment: float = 0.30,
    radius: float = 0.06,
    spheres_per_link: int = 4,
    limit: float = 2.8,
) -> RobotModel:
    """Spatial arm with alternating z/y axes, loosely in the shape of a 7-DoF manipulator."""
    links = []
    prev = np.zeros(3)
    for i in range(dof):
        axis = np.array([0.0, 0.0, 1.0]) if i % 2 == 0 else np.array([0.0, 1.0, 0.0])
        centers, radii = _capsule_spheres(segment, radius, spheres_per_link, 3)
        links.append(
            LinkGeometry(
                parent_joint=i,
                offset=prev.copy(),
                sphere_centers=centers,
                sphere_radii=radii,
                axis=axis,
            )
        )
        prev = np.array([segment, 0.0, 0.0])
    return RobotModel(
        dof=dof,
        point_dim=3,
        joint_limits=np.tile([-limit, limit], (dof, 1)),
        links=links,
        name=f"spatial{dof}",
    )


_BUILTINS = {
    "planar2": lambda: planar_arm((1.0, 1.0)),
    "planar3": lambda: planar_arm((1.0, 0.8, 0.6)),
    "spatial7": lambda: spatial_arm(7),
}


def builtin_robot(key: str) -> RobotModel:
    try:
        return _BUILTINS[key]()
    except KeyError:
        raise InvalidInputError(
            f"unknown builtin robot {key!r}; choices: {sorted(_BUILTINS)}"
        ) from None
