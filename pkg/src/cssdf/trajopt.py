"""Offline spatiotemporal trajectory optimization with a distance-field safety term.

Trajectories are piecewise cubics in the acceleration form: each segment is
determined by its endpoint positions and endpoint accelerations, giving exact
position and acceleration continuity at knots. Durations are optimized through
T_i = exp(tau_i) so they stay positive; boundary knot accelerations are
eliminated analytically so the start/end velocities are met exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidInputError, PlanningFailedError

# K2 weight matrix of the smoothness term tr(m' K2 m)
K2 = np.array([[1.0, 1.0], [0.0, 1.0]])

_LEN_EPS = 1e-12  # smoothing of the segment-length norm at zero


@dataclass
class SplineTrajectory:
    """Control points q, knot accelerations m, durations T, boundary velocities."""

    q: np.ndarray  # (N+1, n)
    m: np.ndarray  # (N+1, n)
    T: np.ndarray  # (N,)
    v_start: np.ndarray = None
    v_end: np.ndarray = None

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.m = np.atleast_2d(np.asarray(self.m, dtype=float))
        self.T = np.asarray(self.T, dtype=float).reshape(-1)
        if self.q.shape != self.m.shape or self.q.shape[0] != self.T.shape[0] + 1:
            raise InvalidInputError("inconsistent spline dimensions")
        if np.any(self.T <= 0):
            raise InvalidInputError("durations must be strictly positive")
        n = self.q.shape[1]
        self.v_start = np.zeros(n) if self.v_start is None else np.asarray(self.v_start, float)
        self.v_end = np.zeros(n) if self.v_end is None else np.asarray(self.v_end, float)

    @property
    def segments(self) -> int:
        return self.T.shape[0]

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    @property
    def total_time(self) -> float:
        return float(self.T.sum())

    def knot_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.T)])

    def left_velocity(self, i: int) -> np.ndarray:
        """Velocity at the left endpoint of segment i (the Eq.-style expression)."""
        Ti = self.T[i]
        return (
            (self.q[i + 1] - self.q[i]) / Ti
            - (Ti / 3.0) * self.m[i]
            - (Ti / 6.0) * self.m[i + 1]
        )

    def right_velocity(self, i: int) -> np.ndarray:
        Ti = self.T[i]
        return (
            (self.q[i + 1] - self.q[i]) / Ti
            + (Ti / 6.0) * self.m[i]
            + (Ti / 3.0) * self.m[i + 1]
        )

    def eval(self, t: float):
        """(q, qdot, qddot) at time t in [0, total_time]."""
        knots = self.knot_times()
        if t < -1e-12 or t > knots[-1] + 1e-12:
            raise InvalidInputError(f"t={t} outside [0, {knots[-1]}]")
        t = min(max(t, 0.0), knots[-1])
        i = min(int(np.searchsorted(knots, t, side="right")) - 1, self.segments - 1)
        i = max(i, 0)
        s = t - knots[i]
        Ti = self.T[i]
        mi, mj = self.m[i], self.m[i + 1]
        qi, qj = self.q[i], self.q[i + 1]
        r = Ti - s
        pos = (
            mi * (r**3) / (6 * Ti)
            + mj * (s**3) / (6 * Ti)
            + (qi / Ti - mi * Ti / 6.0) * r
            + (qj / Ti - mj * Ti / 6.0) * s
        )
        vel = (
            -mi * (r**2) / (2 * Ti)
            + mj * (s**2) / (2 * Ti)
            + (qj - qi) / Ti
            + (mi - mj) * Ti / 6.0
        )
        acc = mi * r / Ti + mj * s / Ti
        return pos, vel, acc

    def sample(self, count: int) -> np.ndarray:
        ts = np.linspace(0.0, self.total_time, count)
        return np.stack([self.eval(t)[0] for t in ts])

    def to_csv(self, path, count: int = 200) -> None:
        ts = np.linspace(0.0, self.total_time, count)
        rows = []
        for t in ts:
            pos, vel, acc = self.eval(t)
            rows.append(np.concatenate([[t], pos, vel, acc]))
        n = self.dof
        cols = (
            ["t"]
            + [f"q{i+1}" for i in range(n)]
            + [f"qd{i+1}" for i in range(n)]
            + [f"qdd{i+1}" for i in range(n)]
        )
        np.savetxt(path, np.asarray(rows), delimiter=",", header=",".join(cols), comments="")


def k2_quadratic(mi: np.ndarray, mj: np.ndarray) -> float:
    """tr([mi; mj]' K2 [mi; mj]) = |mi|^2 + mi.mj + |mj|^2."""
    return float(mi @ mi + mi @ mj + mj @ mj)


@dataclass
class SafetyPenaltyParams:
    d0: float = 0.1  # boundary softness, rad
    alpha: float = 5.0  # decay rate, 1/rad
    shim: bool = True  # add exp(-alpha*d0) to the negative branch for C0 continuity
    # beyond `linearize_depth * d0` of penetration the exponential is extended
    # linearly (C1), keeping line searches finite when iterates probe deep inside
    linearize_depth: float = 6.0

    def __post_init__(self):
        if self.d0 <= 0 or self.alpha <= 0:
            raise InvalidInputError("d0 and alpha must be positive")


def safety_penalty(phi: float, params: SafetyPenaltyParams):
    """Piecewise exponential barrier; returns (value, d value / d phi)."""
    if not np.isfinite(phi):
        raise InvalidInputError("non-finite distance in safety penalty")
    if phi < 0:
        shim = np.exp(-params.alpha * params.d0) if params.shim else 0.0
        cap = params.linearize_depth * params.d0
        if phi < -cap:
            base = np.exp(params.linearize_depth)
            val = base * (1.0 + (-phi - cap) / params.d0) - 1.0 + shim
            return float(val), float(-base / params.d0)
        val = np.exp(-phi / params.d0) - 1.0 + shim
        return float(val), float(-np.exp(-phi / params.d0) / params.d0)
    val = np.exp(-params.alpha * (phi + params.d0))
    return float(val), float(-params.alpha * val)


@dataclass
class TrajWeights:
    lam_s: float = 1.0  # smoothness
    lam_t: float = 1.0  # total time
    lam_p: float = 0.1  # duration regularity
    lam_q: float = 1.0  # path length
    lam_phi: float = 10.0  # safety


@dataclass
class TrajLimits:
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: float = 2.0
    a_max: float = 10.0


def _interior_nodes(count: int) -> np.ndarray:
    return (np.arange(1, count + 1)) / (count + 1.0)


def objective(
    traj: SplineTrajectory,
    field,
    points: np.ndarray,
    weights: TrajWeights = None,
    penalty: SafetyPenaltyParams = None,
    interior_samples: int = 5,
    limits: TrajLimits = None,
    box_weight: float = 1e3,
):
    """Objective value and analytic gradients w.r.t. all q, m, and T.

    The safety term queries `field.aggregate(q, points)` at every control
    point and at `interior_samples` interior states per segment. Velocity and
    (derived) acceleration boxes enter as smooth hinge penalties; position and
    acceleration boxes on free knots are handled by the optimizer's bounds.

    Returns (value, grad_q, grad_m, grad_T).
    """
    weights = weights or TrajWeights()
    penalty = penalty or SafetyPenaltyParams()
    q, m, T = traj.q, traj.m, traj.T
    N = traj.segments
    n = traj.dof
    gq = np.zeros_like(q)
    gm = np.zeros_like(m)
    gT = np.zeros_like(T)
    f = 0.0

    # smoothness: lam_s * sum T_i/3 * (|m_i|^2 + m_i.m_{i+1} + |m_{i+1}|^2)
    for i in range(N):
        quad = k2_quadratic(m[i], m[i + 1])
        f += weights.lam_s * T[i] / 3.0 * quad
        gT[i] += weights.lam_s * quad / 3.0
        gm[i] += weights.lam_s * T[i] / 3.0 * (2 * m[i] + m[i + 1])
        gm[i + 1] += weights.lam_s * T[i] / 3.0 * (2 * m[i + 1] + m[i])

    # time and duration regularity
    f += weights.lam_t * float(T.sum())
    gT += weights.lam_t
    for i in range(1, N):
        d = T[i] - T[i - 1]
        f += weights.lam_p * d * d
        gT[i] += 2 * weights.lam_p * d
        gT[i - 1] -= 2 * weights.lam_p * d

    # path length (smoothed at zero)
    for i in range(N):
        delta = q[i + 1] - q[i]
        norm = np.sqrt(delta @ delta + _LEN_EPS)
        f += weights.lam_q * norm
        gq[i + 1] += weights.lam_q * delta / norm
        gq[i] -= weights.lam_q * delta / norm

    # safety at control points and interior samples (one batched field query)
    if weights.lam_phi > 0 and field is not None:
        states = [q[k] for k in range(N + 1)]
        interior_meta = []
        if interior_samples > 0:
            us = _interior_nodes(interior_samples)
            alpha_u = ((1 - us) ** 3 - (1 - us)) / 6.0
            beta_u = (us**3 - us) / 6.0
            for i in range(N):
                Ti = T[i]
                for u, au, bu in zip(us, alpha_u, beta_u):
                    states.append(
                        q[i] * (1 - u)
                        + q[i + 1] * u
                        + m[i] * au * Ti**2
                        + m[i + 1] * bu * Ti**2
                    )
                    interior_meta.append((i, u, au, bu))
        phis, grads = field.aggregate_batch(np.asarray(states), points)
        for k in range(N + 1):
            val, dval = safety_penalty(phis[k], penalty)
            f += weights.lam_phi * val
            gq[k] += weights.lam_phi * dval * grads[k]
        for row, (i, u, au, bu) in enumerate(interior_meta, start=N + 1):
            Ti = T[i]
            val, dval = safety_penalty(phis[row], penalty)
            f += weights.lam_phi * val
            g = weights.lam_phi * dval * grads[row]
            gq[i] += (1 - u) * g
            gq[i + 1] += u * g
            gm[i] += au * Ti**2 * g
            gm[i + 1] += bu * Ti**2 * g
            gT[i] += 2 * Ti * (au * m[i] + bu * m[i + 1]) @ g

    # velocity hinge penalties on the per-segment left-endpoint expression
    if limits is not None:
        for i in range(N):
            Ti = T[i]
            v = (q[i + 1] - q[i]) / Ti - (Ti / 3.0) * m[i] - (Ti / 6.0) * m[i + 1]
            over = np.maximum(v - limits.v_max, 0.0)
            under = np.maximum(-limits.v_max - v, 0.0)
            f += box_weight * float(over @ over + under @ under)
            dv = box_weight * 2.0 * (over - under)
            gq[i + 1] += dv / Ti
            gq[i] -= dv / Ti
            gm[i] += -Ti / 3.0 * dv
            gm[i + 1] += -Ti / 6.0 * dv
            gT[i] += dv @ (-(q[i + 1] - q[i]) / Ti**2 - m[i] / 3.0 - m[i + 1] / 6.0)
        # boundary accelerations are derived, so box them softly here
        for k in (0, N):
            over = np.maximum(m[k] - limits.a_max, 0.0)
            under = np.maximum(-limits.a_max - m[k], 0.0)
            f += box_weight * float(over @ over + under @ under)
            gm[k] += box_weight * 2.0 * (over - under)
    return f, gq, gm, gT


def _eliminate_boundary(qs, ms_free, T, q0, qN, v_s, v_e):
    """Full (q, m) arrays from free interior variables and boundary conditions."""
    N = T.shape[0]
    q = np.vstack([q0[None, :], qs, qN[None, :]])
    m1 = ms_free[0]
    mNm1 = ms_free[-1]
    m0 = 3.0 * (q[1] - q[0]) / T[0] ** 2 - 3.0 * v_s / T[0] - m1 / 2.0
    mN = 3.0 * v_e / T[N - 1] - 3.0 * (q[N] - q[N - 1]) / T[N - 1] ** 2 - mNm1 / 2.0
    m = np.vstack([m0[None, :], ms_free, mN[None, :]])
    return q, m


def optimize(
    traj0: SplineTrajectory,
    field,
    points: np.ndarray,
    weights: TrajWeights = None,
    penalty: SafetyPenaltyParams = None,
    limits: TrajLimits = None,
    interior_samples: int = 5,
    max_iter: int = 500,
    box_weight: float = 1e3,
):
    """First-order descent on (interior q, interior m, log-durations).

    Endpoints and boundary velocities are fixed; m_0 and m_N follow from them.
    Position/acceleration boxes on the free knots are native variable bounds;
    the remaining rows are smooth penalties, then a final verify pass reports
    any residual violation.

    Returns (trajectory, report).
    """
    weights = weights or TrajWeights()
    penalty = penalty or SafetyPenaltyParams()
    N = traj0.segments
    n = traj0.dof
    if N < 2:
        raise InvalidInputError("optimizer needs at least two segments")
    q0, qN = traj0.q[0].copy(), traj0.q[-1].copy()
    v_s, v_e = traj0.v_start.copy(), traj0.v_end.copy()

    def pack(q, m, T):
        return np.concatenate([q[1:-1].ravel(), m[1:-1].ravel(), np.log(T)])

    def unpack(x):
        k = (N - 1) * n
        qs = x[:k].reshape(N - 1, n)
        ms = x[k : 2 * k].reshape(N - 1, n)
        T = np.exp(x[2 * k :])
        return qs, ms, T

    def fun(x):
        qs, ms, T = unpack(x)
        q, m = _eliminate_boundary(qs, ms, T, q0, qN, v_s, v_e)
        traj = SplineTrajectory(q, m, T, v_s, v_e)
        f, gq, gm, gT = objective(
            traj, field, points, weights, penalty, interior_samples, limits, box_weight
        )
        # chain rule through the boundary elimination
        gq_free = gq[1:-1].copy()
        gm_free = gm[1:-1].copy()
        gT_full = gT.copy()
        gq_free[0] += gm[0] * 3.0 / T[0] ** 2
        gq_free[-1] += gm[-1] * 3.0 / T[-1] ** 2
        gm_free[0] += -0.5 * gm[0]
        gm_free[-1] += -0.5 * gm[-1]
        gT_full[0] += gm[0] @ (-6.0 * (q[1] - q[0]) / T[0] ** 3 + 3.0 * v_s / T[0] ** 2)
        gT_full[-1] += gm[-1] @ (
            -3.0 * v_e / T[-1] ** 2 + 6.0 * (q[-1] - q[-2]) / T[-1] ** 3
        )
        gtau = gT_full * T
        return f, np.concatenate([gq_free.ravel(), gm_free.ravel(), gtau])

    x0 = pack(traj0.q, traj0.m, traj0.T)
    bounds = None
    if limits is not None:
        k = (N - 1) * n
        bq = [(limits.q_min[j], limits.q_max[j]) for _ in range(N - 1) for j in range(n)]
        bm = [(-limits.a_max, limits.a_max)] * k
        bt = [(np.log(1e-2), np.log(30.0))] * N
        bounds = bq + bm + bt

    t_start = time.perf_counter()
    total_iters = 0
    # penalty continuation: escalate the hinge weight until the soft rows
    # (velocity expression, derived boundary accelerations) meet tolerance
    for _ in range(4):
        res = minimize(
            fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-12},
        )
        total_iters += int(res.nit)
        x0 = res.x
        if limits is None:
            break
        qs, ms, T = unpack(res.x)
        q, m = _eliminate_boundary(qs, ms, T, q0, qN, v_s, v_e)
        t_check = SplineTrajectory(q, m, T, v_s, v_e)
        vel = np.stack([t_check.left_velocity(i) for i in range(N)])
        worst = max(
            float(np.max(np.abs(vel)) - limits.v_max),
            float(np.max(np.abs(m[[0, N]])) - limits.a_max),
        )
        if worst <= 1e-6:
            break
        box_weight *= 30.0
    elapsed = time.perf_counter() - t_start
    qs, ms, T = unpack(res.x)
    q, m = _eliminate_boundary(qs, ms, T, q0, qN, v_s, v_e)
    traj = SplineTrajectory(q, m, T, v_s, v_e)

    # projected-gradient norm: bound-active components clipped
    g = res.jac
    if bounds is not None:
        pg = g.copy()
        for i, (lo, hi) in enumerate(bounds):
            if res.x[i] <= lo + 1e-12:
                pg[i] = min(g[i], 0.0)
            elif res.x[i] >= hi - 1e-12:
                pg[i] = max(g[i], 0.0)
        pg_norm = float(np.max(np.abs(pg)))
    else:
        pg_norm = float(np.max(np.abs(g)))

    violations = {}
    if limits is not None:
        vel = np.stack([traj.left_velocity(i) for i in range(N)])
        violations["velocity"] = float(np.max(np.maximum(np.abs(vel) - limits.v_max, 0.0)))
        violations["position"] = float(
            np.max(
                np.maximum(limits.q_min - traj.q, 0.0)
                + np.maximum(traj.q - limits.q_max, 0.0)
            )
        )
        violations["acceleration"] = float(np.max(np.maximum(np.abs(traj.m) - limits.a_max, 0.0)))
    report = {
        "objective": float(res.fun),
        "iterations": total_iters,
        "converged": bool(res.success) or pg_norm <= 1e-4,
        "proj_grad_norm": pg_norm,
        "violations": violations,
        "plan_time_s": elapsed,
    }
    return traj, report


# ---------------------------------------------------------------------------
# sampling initializer


def _edge_free(checker, a, b, resolution=0.02):
    dist = np.linalg.norm(b - a)
    steps = max(2, int(np.ceil(dist / resolution)) + 1)
    for s in np.linspace(0.0, 1.0, steps):
        if checker(a + s * (b - a)):
            return False
    return True


def rrt_connect_init(
    checker,
    q_start: np.ndarray,
    q_goal: np.ndarray,
    bounds: np.ndarray,
    seed: int = 0,
    step: float = 0.2,
    edge_resolution: float = 0.02,
    max_samples: int = 10000,
):
    """Bidirectional RRT-Connect over the joint box, shortcut-smoothed once.

    `checker(q) -> bool` returns True in collision. Raises PlanningFailedError
    when the sample budget runs out.
    """
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    if checker(q_start) or checker(q_goal):
        raise InvalidInputError("start or goal configuration is in collision")
    rng = np.random.default_rng(seed)
    bounds = np.asarray(bounds, dtype=float)

    trees = (
        {"pts": [q_start], "parent": [-1]},
        {"pts": [q_goal], "parent": [-1]},
    )

    def extend(tree, target):
        pts = np.asarray(tree["pts"])
        i = int(np.argmin(np.linalg.norm(pts - target, axis=1)))
        base = pts[i]
        d = np.linalg.norm(target - base)
        new = target if d <= step else base + (target - base) * (step / d)
        if _edge_free(checker, base, new, edge_resolution):
            tree["pts"].append(new)
            tree["parent"].append(i)
            return len(tree["pts"]) - 1, bool(np.linalg.norm(new - target) < 1e-9)
        return -1, False

    def connect(tree, target):
        while True:
            idx, reached = extend(tree, target)
            if idx < 0:
                return -1
            if reached:
                return idx

    def path_of(tree, idx):
        out = []
        while idx >= 0:
            out.append(tree["pts"][idx])
            idx = tree["parent"][idx]
        return out[::-1]

    a, b = 0, 1
    for it in range(max_samples):
        target = rng.uniform(bounds[:, 0], bounds[:, 1])
        if rng.random() < 0.1:
            target = trees[b]["pts"][0]
        idx_a, _ = extend(trees[a], target)
        if idx_a >= 0:
            idx_b = connect(trees[b], trees[a]["pts"][idx_a])
            if idx_b >= 0:
                pa = path_of(trees[a], idx_a)
                pb = path_of(trees[b], idx_b)
                path = pa + pb[::-1] if a == 0 else pb + pa[::-1]
                return _shortcut(checker, path, edge_resolution)
        a, b = b, a
    raise PlanningFailedError(f"no path within {max_samples} samples")


def _shortcut(checker, path, edge_resolution):
    """One greedy pass: from each waypoint jump to the farthest visible one."""
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not _edge_free(checker, path[i], path[j], edge_resolution):
            j -= 1
        out.append(path[j])
        i = j
    return [np.asarray(p, dtype=float) for p in out]


def waypoints_to_trajectory(
    waypoints, segments: int = 8, nominal_speed: float = 0.8, v_start=None, v_end=None
) -> SplineTrajectory:
    """Arc-length resampling of a polyline into an initial spline guess."""
    pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if pts.shape[0] < 2:
        raise InvalidInputError("need at least two waypoints")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-9:
        pts = np.vstack([pts[0], pts[0] + 1e-6])
        cum = np.array([0.0, 1e-6])
        total = 1e-6
    targets = np.linspace(0.0, total, segments + 1)
    ctrl = np.empty((segments + 1, pts.shape[1]))
    for k, s in enumerate(targets):
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, cum.size - 2)
        w = (s - cum[i]) / max(cum[i + 1] - cum[i], 1e-12)
        ctrl[k] = pts[i] * (1 - w) + pts[i + 1] * w
    T = np.full(segments, max(total / segments / nominal_speed, 1e-2))
    return SplineTrajectory(ctrl, np.zeros_like(ctrl), T, v_start, v_end)


def metrics(traj: SplineTrajectory, collision_fn, plan_time_s: float, samples: int = 1000):
    """(CR %, TL rad, AT ms) over a dense resampling of the trajectory."""
    states = traj.sample(samples)
    hits = np.fromiter((bool(collision_fn(s)) for s in states), dtype=bool, count=samples)
    cr = 100.0 * float(hits.mean())
    tl = float(np.sum(np.linalg.norm(np.diff(states, axis=0), axis=1)))
    return cr, tl, 1e3 * plan_time_s


def polyline_metrics(waypoints, collision_fn, plan_time_s: float, samples: int = 1000):
    """Metrics for a raw waypoint path, resampled like a trajectory."""
    pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, cum[-1], samples)
    states = np.empty((samples, pts.shape[1]))
    for k, s in enumerate(targets):
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, cum.size - 2)
        w = (s - cum[i]) / max(cum[i + 1] - cum[i], 1e-12)
        states[k] = pts[i] * (1 - w) + pts[i + 1] * w
    hits = np.fromiter((bool(collision_fn(s)) for s in states), dtype=bool, count=samples)
    cr = 100.0 * float(hits.mean())
    tl = float(np.sum(np.linalg.norm(np.diff(states, axis=0), axis=1)))
    return cr, tl, 1e3 * plan_time_s
