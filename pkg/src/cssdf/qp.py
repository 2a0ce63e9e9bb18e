"""Dense convex QP solver via operator splitting, with active-set polishing.

Problems take the unified form

    minimize    0.5 z' P z + q' z
    subject to  l <= C z <= u

with P symmetric positive semidefinite. The splitting iteration follows the
standard OSQP scheme (scalar rho, over-relaxation, adaptive rho updates); a
final equality-constrained polish snaps the iterate onto the detected active
set so residuals reach solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidInputError


@dataclass
class QpInstance:
    P: np.ndarray
    q: np.ndarray
    C: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.l = np.asarray(self.l, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise InvalidInputError("cost matrix dimension mismatch")
        if not np.allclose(self.P, self.P.T, atol=1e-10):
            raise InvalidInputError("cost matrix must be symmetric")
        if self.C.shape[1] != n and self.C.size:
            raise InvalidInputError("constraint matrix dimension mismatch")
        if self.l.shape != (self.C.shape[0],) or self.u.shape != (self.C.shape[0],):
            raise InvalidInputError("bound dimension mismatch")
        if np.any(self.l > self.u):
            raise InvalidInputError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass
class QpResult:
    z: np.ndarray
    y: np.ndarray
    status: str  # "solved" | "max_iter" | "infeasible"
    iterations: int
    pri_res: float
    dua_res: float
    obj: float


def kkt_residuals(inst: QpInstance, z: np.ndarray, y: np.ndarray):
    """(stationarity, primal violation, complementarity) infinity norms."""
    stat = float(np.max(np.abs(inst.P @ z + inst.q + inst.C.T @ y))) if inst.n else 0.0
    if inst.m:
        cz = inst.C @ z
        prim = float(np.max(np.maximum(np.maximum(inst.l - cz, cz - inst.u), 0.0)))
        slack_l = np.where(np.isfinite(inst.l), cz - inst.l, 0.0)
        slack_u = np.where(np.isfinite(inst.u), inst.u - cz, 0.0)
        comp = float(
            np.max(np.abs(np.where(y > 0, y * slack_u, y * slack_l)), initial=0.0)
        )
    else:
        prim, comp = 0.0, 0.0
    return stat, prim, comp


def _polish(inst: QpInstance, z, y, tol_act=1e-6):
    """Equality solve on the active set detected from (z, y)."""
    cz = inst.C @ z
    low = (np.abs(cz - inst.l) < tol_act) | (y < -tol_act)
    upp = (np.abs(cz - inst.u) < tol_act) | (y > tol_act)
    # equality rows (l == u) count once
    both = low & upp
    low = low & ~both | (both & (np.abs(inst.u - inst.l) < 1e-12))
    act = np.where(low | upp)[0]
    b = np.where(low[act], inst.l[act], inst.u[act])
    n, k = inst.n, act.size
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = inst.P + 1e-12 * np.eye(n)
    if k:
        kkt[:n, n:] = inst.C[act].T
        kkt[n:, :n] = inst.C[act]
    rhs = np.concatenate([-inst.q, b])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    z_pol = sol[:n]
    y_pol = np.zeros(inst.m)
    y_pol[act] = sol[n:]
    # dual sign check: lower-active multipliers <= 0, upper-active >= 0
    sign_ok = np.all(y_pol[act][low[act]] <= 1e-7) and np.all(y_pol[act][upp[act] & ~low[act]] >= -1e-7)
    cz_pol = inst.C @ z_pol if inst.m else np.zeros(0)
    feas_ok = inst.m == 0 or np.all(
        (cz_pol >= inst.l - 1e-7) & (cz_pol <= inst.u + 1e-7)
    )
    if not (sign_ok and feas_ok):
        return None
    return z_pol, y_pol


def solve_qp(
    inst: QpInstance,
    eps_abs: float = 1e-6,
    max_iter: int = 4000,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    adaptive_rho: bool = True,
    polish: bool = True,
) -> QpResult:
    """Solve a QpInstance; primal/dual residuals <= eps_abs on success."""
    n, m = inst.n, inst.m
    if m == 0:
        # unconstrained: one linear solve
        z = np.linalg.solve(inst.P + sigma * np.eye(n), -inst.q)
        return QpResult(z, np.zeros(0), "solved", 0, 0.0, 0.0, inst.objective(z))

    P, q = inst.P, inst.q
    # row equilibration: scaling each constraint row to unit norm leaves the
    # feasible set unchanged and conditions the splitting iteration
    row_norms = np.linalg.norm(inst.C, axis=1)
    row_scale = np.where(row_norms > 1e-12, 1.0 / np.maximum(row_norms, 1e-12), 1.0)
    C = inst.C * row_scale[:, None]
    l = inst.l * row_scale
    u = inst.u * row_scale
    z = np.zeros(n)
    zc = np.zeros(m)
    y = np.zeros(m)

    def factor(r):
        return cho_factor(P + sigma * np.eye(n) + r * (C.T @ C))

    chol = factor(rho)
    pri_res = dua_res = np.inf
    status = "max_iter"
    it = 0
    check_every = 25

    def try_polish(it_count):
        """Polish against the unscaled instance; returns a QpResult or None."""
        pol = _polish(inst, z, row_scale * y)
        if pol is None:
            return None
        z_p, y_p = pol
        stat_p = float(np.max(np.abs(inst.P @ z_p + inst.q + inst.C.T @ y_p)))
        cz_p = inst.C @ z_p
        pri_p = float(np.max(np.maximum(np.maximum(inst.l - cz_p, cz_p - inst.u), 0.0)))
        if stat_p <= eps_abs and pri_p <= eps_abs:
            return QpResult(z_p, y_p, "solved", it_count, pri_p, stat_p, inst.objective(z_p))
        return None

    for it in range(1, max_iter + 1):
        rhs = sigma * z - q + C.T @ (rho * zc - y)
        x_t = cho_solve(chol, rhs)
        v = C @ x_t
        z = alpha * x_t + (1 - alpha) * z
        zc_t = alpha * v + (1 - alpha) * zc
        zc_new = np.clip(zc_t + y / rho, l, u)
        y_prev = y
        y = y + rho * (zc_t - zc_new)
        delta_y = y - y_prev
        zc = zc_new
        if it % check_every == 0 or it == max_iter:
            cz = C @ z
            pri_res = float(np.max(np.abs(cz - zc)))
            dua_res = float(np.max(np.abs(P @ z + q + C.T @ y)))
            if pri_res <= eps_abs and dua_res <= eps_abs:
                status = "solved"
                break
            if polish and pri_res <= 1e4 * eps_abs and dua_res <= 1e4 * eps_abs:
                polished = try_polish(it)
                if polished is not None:
                    return polished
            # primal infeasibility certificate
            ndy = float(np.max(np.abs(delta_y)))
            if ndy > 1e-12:
                dyn = delta_y / ndy
                fin_u, fin_l = np.isfinite(u), np.isfinite(l)
                sup = (u[fin_u] * np.maximum(dyn[fin_u], 0)).sum()
                sup += (l[fin_l] * np.minimum(dyn[fin_l], 0)).sum()
                cert_dirs = np.all(
                    (np.isfinite(u) | (dyn <= 1e-9)) & (np.isfinite(l) | (dyn >= -1e-9))
                )
                if (
                    cert_dirs
                    and sup < -1e-9
                    and float(np.max(np.abs(C.T @ dyn))) <= 1e-9
                ):
                    return QpResult(
                        z, row_scale * y, "infeasible", it, pri_res, dua_res, float("nan")
                    )
            if adaptive_rho and it % 100 == 0 and dua_res > 0 and pri_res > 0:
                ratio = np.sqrt(pri_res / dua_res)
                if ratio > 5 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    chol = factor(rho)
    if polish:
        polished = try_polish(it)
        if polished is not None:
            return polished
    return QpResult(z, row_scale * y, status, it, pri_res, dua_res, inst.objective(z))
