"""Receding-horizon safety-constrained control over single-integrator dynamics.

States are eliminated: with q_{k+1} = q_k + dt*u_k the decision variable is
the stacked input sequence. Safety enters as linearized rows
grad_phi(q_k)'(q_{k+1} - q_k) >= dt*(gamma - phi(q_k)) for every decided
transition k = 0..H-1; phi and its gradient come from a distance field,
evaluated at the measured state for k = 0 and at nominal states from the
shifted previous solution for k >= 1. A controller whose first input is
exempt from the safety rows tracks straight through obstacles, so the k = 0
row is always included.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import Scene, scene_collides
from .qp import QpInstance, QpResult, kkt_residuals, solve_qp
from .robot import RobotModel

_ZERO_GRAD = 1e-9
# gradients shorter than this carry no usable direction (field ridge or
# unresolved thin collision set); such rows are dropped while phi is positive
_WEAK_GRAD = 0.3


@dataclass
class MpcProblem:
    horizon: int
    dt: float
    Q: np.ndarray
    R: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    gamma: float = 0.05
    safety_points: int = 5
    cbf_form: bool = False  # alternate RHS: phi(q+) >= (1 - lambda*dt) phi(q)
    cbf_lambda: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        for name in ("Q", "R", "q_min", "q_max", "u_min", "u_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if np.any(self.Q <= 0) or np.any(self.R <= 0):
            raise InvalidInputError("Q and R diagonals must be positive")
        if self.gamma <= 0:
            raise InvalidInputError("safety margin must be positive")

    @property
    def dof(self) -> int:
        return self.Q.shape[0]


def linearized_safety_row(q_k, phi, grad, gamma, dt, cbf_form=False, cbf_lambda=1.0):
    """Inequality row over (q_{k+1} - q_k): returns (coefficients, lower bound).

    Verbatim form: grad'(q_{k+1} - q_k) >= dt*(gamma - phi). The alternate
    barrier form uses phi(q_{k+1}) >= (1 - lambda*dt)*phi(q_k) instead.
    """
    grad = np.asarray(grad, dtype=float)
    if not (np.all(np.isfinite(grad)) and np.isfinite(phi)):
        raise InvalidInputError("non-finite safety linearization")
    if cbf_form:
        rhs = -cbf_lambda * dt * phi
    else:
        rhs = dt * (gamma - phi)
    return grad.copy(), float(rhs)


def build_qp(
    problem: MpcProblem,
    q_now: np.ndarray,
    reference: np.ndarray,
    safety_rows=None,
):
    """Condensed QP over stacked inputs.

    Args:
        reference: (H, n) reference points; q_{k+1} tracks reference[k].
        safety_rows: optional list of (k, grad, rhs) with 0 <= k <= H-1,
            each encoding grad'(q_{k+1} - q_k) >= rhs; a None grad means an
            emergency stop row u_k = 0.

    Returns (QpInstance, meta) where meta maps row ranges to their kind.
    """
    H, n = problem.horizon, problem.dof
    q_now = np.asarray(q_now, dtype=float).reshape(n)
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if reference.shape[0] < H:
        raise InvalidInputError("reference must provide at least H points")
    dt = problem.dt
    N = H * n

    # q_{k+1} = q_now + dt * S_{k+1} z with S block prefix sums
    G = np.zeros((N, N))
    for k in range(H):
        for j in range(k + 1):
            G[k * n : (k + 1) * n, j * n : (j + 1) * n] = dt * np.eye(n)
    Qt = np.tile(problem.Q, H)
    Rt = np.tile(problem.R, H)
    c = (q_now[None, :] - reference[:H]).ravel()
    P = 2.0 * (G.T * Qt) @ G + 2.0 * np.diag(Rt)
    qlin = 2.0 * G.T @ (Qt * c)

    rows = [np.eye(N)]
    lowers = [np.tile(problem.u_min, H)]
    uppers = [np.tile(problem.u_max, H)]
    meta = {"input_box": (0, N)}

    rows.append(G)
    lowers.append(np.tile(problem.q_min - q_now, H))
    uppers.append(np.tile(problem.q_max - q_now, H))
    meta["state_box"] = (N, 2 * N)

    r0 = 2 * N
    n_safety = 0
    if safety_rows:
        for k, grad, rhs in safety_rows:
            if not (0 <= k <= H - 1):
                raise InvalidInputError("safety rows are defined for k = 0..H-1")
            if grad is None:
                block = np.zeros((n, N))
                block[:, k * n : (k + 1) * n] = np.eye(n)
                rows.append(block)
                lowers.append(np.zeros(n))
                uppers.append(np.zeros(n))
                n_safety += n
            else:
                row = np.zeros((1, N))
                row[0, k * n : (k + 1) * n] = dt * np.asarray(grad, dtype=float)
                rows.append(row)
                lowers.append([rhs])
                uppers.append([np.inf])
                n_safety += 1
    meta["safety"] = (r0, r0 + n_safety)
    inst = QpInstance(
        P=P,
        q=qlin,
        C=np.vstack(rows),
        l=np.concatenate(lowers),
        u=np.concatenate(uppers),
    )
    return inst, meta


@dataclass
class StepInfo:
    status: str
    phi_min: float
    solve_ms: float
    kkt: tuple
    fallback: bool = False
    emergency: bool = False
    slacks: np.ndarray = None


class SafeMpcController:
    """Receding-horizon controller: re-linearizes safety rows every step from
    fresh point queries and applies only the first input."""

    def __init__(self, problem: MpcProblem, point_field, reference: np.ndarray):
        self.problem = problem
        self.field = point_field
        self.reference = np.atleast_2d(np.asarray(reference, dtype=float))
        n = problem.dof
        self.prev_plan = np.zeros((problem.horizon, n))
        self.last_u = np.zeros(n)
        self.fail_count = 0

    def _reference_window(self, t_index: int) -> np.ndarray:
        H = self.problem.horizon
        T = self.reference.shape[0]
        idx = np.clip(np.arange(t_index, t_index + H), 0, T - 1)
        return self.reference[idx]

    def _shifted_plan(self) -> np.ndarray:
        return np.vstack([self.prev_plan[1:], self.prev_plan[-1:]])

    def _nominal_states(self, q: np.ndarray, plan: np.ndarray) -> np.ndarray:
        """Predicted states from the shifted previous solution (warm start)."""
        H, n = self.problem.horizon, self.problem.dof
        states = np.empty((H + 1, n))
        states[0] = q
        for k in range(H):
            states[k + 1] = states[k] + self.problem.dt * plan[k]
        return states

    def step(self, q: np.ndarray, points: np.ndarray, t_index: int = 0):
        """One control cycle; returns (u_0, StepInfo)."""
        prob = self.problem
        q = np.asarray(q, dtype=float).reshape(prob.dof)
        points = np.atleast_2d(points) if points is not None and len(points) else None

        phi_min = float("inf")
        safety_rows = []
        emergency = False
        selected = None
        shifted = self._shifted_plan()
        if points is not None:
            scores = self.field.point_scores(q, points)
            take = min(prob.safety_points, points.shape[0])
            selected = points[np.argsort(scores, kind="stable")[:take]]
            vals_now, grads_now = self.field.point_values_and_grads(q, selected)
            phi_min = float(vals_now.min())
            nominal = self._nominal_states(q, shifted)
            for k in range(0, prob.horizon):
                if k == 0:
                    vals, grads = vals_now, grads_now
                else:
                    vals, grads = self.field.point_values_and_grads(nominal[k], selected)
                for phi, grad in zip(vals, grads):
                    gn = np.linalg.norm(grad)
                    if gn < _ZERO_GRAD:
                        if phi < prob.gamma:
                            safety_rows.append((k, None, 0.0))
                            emergency = True
                        continue
                    if gn < _WEAK_GRAD and phi > 0:
                        continue
                    _, rhs = linearized_safety_row(
                        nominal[k], phi, grad, prob.gamma, prob.dt,
                        prob.cbf_form, prob.cbf_lambda,
                    )
                    safety_rows.append((k, grad, rhs))

        t0 = time.perf_counter()
        inst, meta = build_qp(prob, q, self._reference_window(t_index), safety_rows)
        res = solve_qp(inst)
        solve_ms = 1e3 * (time.perf_counter() - t0)

        if res.status == "solved":
            plan = res.z.reshape(prob.horizon, prob.dof)
            u0 = np.clip(plan[0], prob.u_min, prob.u_max)
            self.prev_plan = plan
            self.fail_count = 0
            fallback = False
        else:
            self.fail_count += 1
            fallback = True
            u0 = np.zeros(prob.dof) if self.fail_count >= 3 else 0.5 * self.last_u
            u0 = np.clip(u0, prob.u_min, prob.u_max)
            # keep the nominal trajectory advancing so the next linearization
            # reflects the input actually applied
            shifted[0] = u0
            self.prev_plan = shifted
        self.last_u = u0
        cz = inst.C @ res.z if res.status == "solved" else None
        s0, s1 = meta["safety"]
        info = StepInfo(
            status=res.status,
            phi_min=phi_min,
            solve_ms=solve_ms,
            kkt=kkt_residuals(inst, res.z, res.y),
            fallback=fallback,
            emergency=emergency,
            slacks=(cz[s0:s1] - inst.l[s0:s1]) if cz is not None and s1 > s0 else None,
        )
        return u0, info


@dataclass
class EpisodeLog:
    dt: float
    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    phi_min: np.ndarray
    solve_ms: np.ndarray
    status: list
    collided: np.ndarray
    obstacle_centers: np.ndarray
    goal: np.ndarray = None
    kkt_max: float = 0.0  # worst stationarity/primal residual among solved QPs

    def metrics(self) -> dict:
        cr = 100.0 * float(np.mean(self.collided))
        mci = float(np.max(np.abs(self.u))) if self.u.size else 0.0
        cf = 1000.0 / float(np.mean(self.solve_ms)) if self.solve_ms.size else float("inf")
        out = {"CR_pct": cr, "MCI_rad_s": mci, "CF_hz": cf, "steps": int(self.t.size)}
        if self.goal is not None and self.q.size:
            out["final_goal_dist"] = float(np.linalg.norm(self.q[-1] - self.goal))
        return out

    def to_csv(self, path) -> None:
        n = self.q.shape[1]
        w = self.obstacle_centers.shape[1] if self.obstacle_centers.size else 0
        cols = (
            ["t"]
            + [f"q{i+1}" for i in range(n)]
            + [f"u{i+1}" for i in range(n)]
            + ["min_phi", "solve_ms", "status", "collided"]
            + [f"obs{i+1}" for i in range(w)]
        )
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.t.size):
                row = (
                    [f"{self.t[i]:.6f}"]
                    + [f"{v:.9f}" for v in self.q[i]]
                    + [f"{v:.9f}" for v in self.u[i]]
                    + [f"{self.phi_min[i]:.9f}", f"{self.solve_ms[i]:.4f}",
                       self.status[i], str(int(self.collided[i]))]
                    + ([f"{v:.6f}" for v in self.obstacle_centers[i]] if w else [])
                )
                fh.write(",".join(row) + "\n")


def linear_reference(q_start, q_goal, steps: int, travel_fraction: float = 0.6):
    """Point-to-point nominal: linear ramp over the first part, then hold."""
    q_start = np.asarray(q_start, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    ramp = max(1, int(round(travel_fraction * steps)))
    out = np.empty((steps, q_start.shape[0]))
    for i in range(steps):
        a = min(1.0, i / ramp)
        out[i] = (1 - a) * q_start + a * q_goal
    return out


def simulate(
    robot: RobotModel,
    point_field,
    scene: Scene,
    problem: MpcProblem,
    q_start: np.ndarray,
    q_goal: np.ndarray,
    duration: float,
    point_spacing: float = 0.08,
    travel_fraction: float = 0.6,
) -> EpisodeLog:
    """Discrete-time closed loop with a moving scene and oracle collision audit."""
    if duration <= 0:
        raise InvalidInputError("duration must be positive")
    dt = problem.dt
    steps = int(round(duration / dt))
    reference = linear_reference(q_start, q_goal, steps, travel_fraction)
    ctrl = SafeMpcController(problem, point_field, reference)
    q = np.asarray(q_start, dtype=float).copy()
    n = q.shape[0]
    w = robot.point_dim
    log_t = np.empty(steps)
    log_q = np.empty((steps, n))
    log_u = np.empty((steps, n))
    log_phi = np.empty(steps)
    log_ms = np.empty(steps)
    log_status = []
    log_col = np.empty(steps, dtype=bool)
    log_obs = np.empty((steps, w)) if scene.obstacles else np.zeros((steps, 0))
    kkt_max = 0.0
    for i in range(steps):
        t = i * dt
        snap = scene.at(t)
        points = snap.sample_points(point_spacing)
        u, info = ctrl.step(q, points, i)
        q = q + dt * u
        log_t[i] = t
        log_q[i] = q
        log_u[i] = u
        log_phi[i] = info.phi_min
        log_ms[i] = info.solve_ms
        log_status.append(info.status)
        if info.status == "solved":
            kkt_max = max(kkt_max, info.kkt[0], info.kkt[1])
        log_col[i] = scene_collides(robot, q, scene, t + dt)
        if scene.obstacles:
            log_obs[i] = snap.obstacles[0].center
    return EpisodeLog(
        dt=dt,
        t=log_t,
        q=log_q,
        u=log_u,
        phi_min=log_phi,
        solve_ms=log_ms,
        status=log_status,
        collided=log_col,
        obstacle_centers=log_obs,
        goal=np.asarray(q_goal, dtype=float),
        kkt_max=kkt_max,
    )
