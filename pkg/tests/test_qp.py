import numpy as np
import pytest

from cssdf.errors import InvalidInputError
from cssdf.qp import QpInstance, kkt_residuals, solve_qp

from _qp_oracle import solve_active_set


def test_unconstrained_1d():
    # min x^2 - 2x -> x = 1
    inst = QpInstance(np.array([[2.0]]), np.array([-2.0]), np.zeros((0, 1)),
                      np.zeros(0), np.zeros(0))
    res = solve_qp(inst)
    assert res.status == "solved"
    assert res.z[0] == pytest.approx(1.0, abs=1e-6)


def test_box_clipped_1d():
    # min x^2 - 2x s.t. x <= 0.5 -> x = 0.5
    inst = QpInstance(np.array([[2.0]]), np.array([-2.0]), np.array([[1.0]]),
                      np.array([-np.inf]), np.array([0.5]))
    res = solve_qp(inst)
    assert res.status == "solved"
    assert res.z[0] == pytest.approx(0.5, abs=1e-6)
    stat, prim, comp = kkt_residuals(inst, res.z, res.y)
    assert stat <= 1e-6 and prim <= 1e-6


def test_validation():
    with pytest.raises(InvalidInputError):
        QpInstance(np.eye(2), np.zeros(3), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    with pytest.raises(InvalidInputError):
        QpInstance(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), np.zeros((0, 2)),
                   np.zeros(0), np.zeros(0))
    with pytest.raises(InvalidInputError):
        QpInstance(np.eye(1), np.zeros(1), np.array([[1.0]]), np.array([1.0]),
                   np.array([0.0]))


def _random_instance(rng):
    n = int(rng.integers(1, 7))
    m_extra = int(rng.integers(0, 4))
    A = rng.normal(size=(n + 1, n))
    P = A.T @ A + 1e-2 * np.eye(n)
    q = rng.normal(size=n)
    z0 = rng.normal(size=n) * 0.5
    C = [np.eye(n)]
    l = [z0 - rng.uniform(0.1, 2.0, size=n)]
    u = [z0 + rng.uniform(0.1, 2.0, size=n)]
    for _ in range(m_extra):
        c = rng.normal(size=n)
        mid = c @ z0
        lo = mid - rng.uniform(0.05, 1.5)
        hi = mid + rng.uniform(0.05, 1.5)
        if rng.random() < 0.3:
            hi = np.inf
        if rng.random() < 0.3:
            lo = -np.inf
        C.append(c[None, :])
        l.append([lo])
        u.append([hi])
    return QpInstance(P, q, np.vstack(C), np.concatenate(l), np.concatenate(u))


def test_matches_active_set_oracle_200(rng):
    """200 random strictly convex instances against exhaustive KKT enumeration."""
    for _ in range(200):
        inst = _random_instance(rng)
        res = solve_qp(inst)
        ref = solve_active_set(inst.P, inst.q, inst.C, inst.l, inst.u)
        assert ref is not None
        assert res.status == "solved"
        assert np.max(np.abs(res.z - ref[1])) <= 1e-6


def test_solution_feasible_within_tolerance(rng):
    for _ in range(30):
        inst = _random_instance(rng)
        res = solve_qp(inst)
        cz = inst.C @ res.z
        assert np.all(cz >= inst.l - 1e-6)
        assert np.all(cz <= inst.u + 1e-6)


def test_deterministic(rng):
    inst = _random_instance(rng)
    a = solve_qp(inst)
    b = solve_qp(inst)
    np.testing.assert_array_equal(a.z, b.z)
    assert a.iterations == b.iterations


def test_infeasible_detected():
    # x >= 1 and x <= -1 simultaneously
    inst = QpInstance(
        np.eye(1), np.zeros(1),
        np.array([[1.0], [1.0]]),
        np.array([1.0, -np.inf]),
        np.array([np.inf, -1.0]),
    )
    res = solve_qp(inst)
    assert res.status == "infeasible"


def test_badly_scaled_rows(rng):
    """Rows spanning several orders of magnitude still solve to tolerance."""
    n = 4
    A = rng.normal(size=(n + 1, n))
    P = A.T @ A + 1e-2 * np.eye(n)
    q = rng.normal(size=n)
    C = np.vstack([np.eye(n), 1e-3 * rng.normal(size=(2, n)), 1e3 * rng.normal(size=(2, n))])
    z0 = np.zeros(n)
    mid = C @ z0
    inst = QpInstance(P, q, C, mid - 1.0, mid + 1.0)
    res = solve_qp(inst)
    assert res.status == "solved"
    stat, prim, _ = kkt_residuals(inst, res.z, res.y)
    assert stat <= 1e-6 and prim <= 1e-6
