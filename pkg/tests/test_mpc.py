import numpy as np
import pytest

from cssdf.errors import InvalidInputError
from cssdf.geometry import Obstacle, OraclePointField, Scene
from cssdf.mpc import (
    EpisodeLog,
    MpcProblem,
    SafeMpcController,
    build_qp,
    linear_reference,
    linearized_safety_row,
    simulate,
)
from cssdf.qp import kkt_residuals, solve_qp


def make_problem(n=2, h=10, gamma=0.3, dt=0.01, u_max=2.0):
    return MpcProblem(
        horizon=h,
        dt=dt,
        Q=np.full(n, 8.0),
        R=np.full(n, 0.2),
        q_min=np.full(n, -2.9),
        q_max=np.full(n, 2.9),
        u_min=np.full(n, -u_max),
        u_max=np.full(n, u_max),
        gamma=gamma,
    )


class LinearField:
    """Synthetic exactly-linear distance field phi(q) = a.q + b."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = float(b)

    def point_values_and_grads(self, q, points):
        k = np.atleast_2d(points).shape[0]
        val = float(self.a @ q + self.b)
        return np.full(k, val), np.tile(self.a, (k, 1))

    def point_scores(self, q, points):
        return np.zeros(np.atleast_2d(points).shape[0])


# -- rows ---------------------------------------------------------------------


def test_row_satisfied_with_equality_at_margin():
    grad = np.array([0.7, -0.7])
    row, rhs = linearized_safety_row(np.zeros(2), phi=0.3, grad=grad, gamma=0.3, dt=0.01)
    # q_{k+1} = q_k: lhs = 0, rhs = dt*(gamma-phi) = 0
    assert rhs == pytest.approx(0.0)
    np.testing.assert_array_equal(row, grad)


def test_row_slack_above_margin():
    _, rhs = linearized_safety_row(np.zeros(2), phi=0.4, grad=np.ones(2), gamma=0.3,
                                   dt=0.01)
    assert rhs == pytest.approx(-0.001)  # stationary step has slack dt*0.1


def test_row_first_order_against_oracle(planar2, rng):
    """Stepping along the field gradient raises the oracle value to first order."""
    field = OraclePointField(planar2, resolution=101)
    pts = np.array([[1.3, 0.5]])
    checked = 0
    while checked < 10:
        q = rng.uniform(-1.5, 1.5, size=2)
        vals, grads = field.point_values_and_grads(q, pts)
        g = grads[0]
        if np.linalg.norm(g) < 0.8 or abs(vals[0]) > 1.0:
            continue
        delta = 1e-3 * g / np.linalg.norm(g)
        vals2, _ = field.point_values_and_grads(q + delta, pts)
        predicted = np.linalg.norm(g) * 1e-3
        actual = vals2[0] - vals[0]
        assert actual == pytest.approx(predicted, rel=0.1)
        checked += 1


def test_row_cbf_form():
    _, rhs = linearized_safety_row(np.zeros(2), phi=0.2, grad=np.ones(2), gamma=0.3,
                                   dt=0.01, cbf_form=True, cbf_lambda=2.0)
    assert rhs == pytest.approx(-2.0 * 0.01 * 0.2)


def test_row_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        linearized_safety_row(np.zeros(2), np.nan, np.ones(2), 0.3, 0.01)


# -- QP construction -------------------------------------------------------------


def test_stationary_optimum_h1():
    prob = make_problem(h=1)
    q = np.array([0.3, -0.2])
    inst, _ = build_qp(prob, q, q[None, :])
    res = solve_qp(inst)
    np.testing.assert_allclose(res.z, 0.0, atol=1e-6)


def test_condensed_cost_matches_rollout(rng):
    """The condensed quadratic equals the tracking cost of a simulated rollout.

    At u = 0 every predicted state stays at q_current, so the full cost is
    sum_k |q_current - ref_k|^2_Q; the QP stores that as its constant term.
    """
    prob = make_problem(h=5)
    q = np.array([0.5, 0.1])
    ref = rng.normal(size=(5, 2))
    inst, _ = build_qp(prob, q, ref)
    const = sum(float((q - r) @ (prob.Q * (q - r))) for r in ref)
    for _ in range(5):
        u = rng.normal(size=(5, 2))
        states = [q]
        for k in range(5):
            states.append(states[-1] + prob.dt * u[k])
        direct = sum(
            float((states[k + 1] - ref[k]) @ (prob.Q * (states[k + 1] - ref[k])))
            + float(u[k] @ (prob.R * u[k]))
            for k in range(5)
        )
        z = u.ravel()
        assert inst.objective(z) + const == pytest.approx(direct, rel=1e-10)
    # and at u = 0 the rollout cost is exactly the constant
    assert inst.objective(np.zeros(inst.n)) + const == pytest.approx(const)


def test_cost_matrix_psd():
    prob = make_problem(h=8)
    inst, _ = build_qp(prob, np.zeros(2), np.zeros((8, 2)))
    eig = np.linalg.eigvalsh(0.5 * (inst.P + inst.P.T))
    assert eig.min() >= -1e-10


def test_reference_too_short_rejected():
    prob = make_problem(h=5)
    with pytest.raises(InvalidInputError):
        build_qp(prob, np.zeros(2), np.zeros((3, 2)))


def test_safety_row_index_range_checked():
    prob = make_problem(h=3)
    with pytest.raises(InvalidInputError):
        build_qp(prob, np.zeros(2), np.zeros((3, 2)),
                 safety_rows=[(3, np.ones(2), 0.0)])


def test_emergency_stop_row():
    prob = make_problem(h=4)
    inst, meta = build_qp(prob, np.zeros(2), np.tile([1.0, 1.0], (4, 1)),
                          safety_rows=[(1, None, 0.0)])
    res = solve_qp(inst)
    assert res.status == "solved"
    u1 = res.z[2:4]
    np.testing.assert_allclose(u1, 0.0, atol=1e-7)


# -- controller ---------------------------------------------------------------------


def test_empty_cloud_pure_tracking():
    prob = make_problem(h=6)
    ref = linear_reference(np.zeros(2), np.array([1.0, -1.0]), 100)
    ctrl = SafeMpcController(prob, LinearField(np.ones(2), 10.0), ref)
    u, info = ctrl.step(np.zeros(2), None, 0)
    assert info.status == "solved"
    assert np.linalg.norm(u) > 0  # moves toward the reference
    assert info.phi_min == float("inf")


def test_input_box_respected():
    prob = make_problem(h=4, u_max=0.5)
    ref = np.tile(np.array([2.0, -2.0]), (50, 1))
    ctrl = SafeMpcController(prob, LinearField(np.ones(2), 10.0), ref)
    q = np.zeros(2)
    for k in range(20):
        u, _ = ctrl.step(q, np.zeros((3, 2)), k)
        assert np.max(np.abs(u)) <= 0.5 + 1e-12
        q = q + prob.dt * u


def test_one_step_safety_on_linear_field():
    """On an exactly linear field every solved transition obeys
    phi(q_{k+1}) >= phi(q_k) + dt*(gamma - phi(q_k))."""
    a = np.array([1.0, 0.0])
    field = LinearField(a, 0.05)  # phi < gamma near the origin: rows active
    prob = make_problem(h=6, gamma=0.3)
    ref = np.tile(np.array([-1.0, 0.0]), (20, 1))  # reference drives phi down
    ctrl = SafeMpcController(prob, field, ref)
    q = np.zeros(2)
    u, info = ctrl.step(q, np.zeros((2, 2)), 0)
    assert info.status == "solved"
    plan = ctrl.prev_plan
    states = [q]
    for k in range(prob.horizon):
        states.append(states[-1] + prob.dt * plan[k])
    for k in range(prob.horizon):
        phi_k = a @ states[k] + 0.05
        phi_k1 = a @ states[k + 1] + 0.05
        assert phi_k1 >= phi_k + prob.dt * (prob.gamma - phi_k) - 1e-8


def test_solved_qp_kkt_residuals(planar2):
    field = OraclePointField(planar2, resolution=61)
    scene = Scene([Obstacle("disc", np.array([1.4, 0.8]), 0.3)])
    prob = make_problem(h=8)
    ref = linear_reference(np.array([1.5, 0.3]), np.array([-1.5, -0.3]), 50)
    ctrl = SafeMpcController(prob, field, ref)
    q = np.array([1.5, 0.3])
    for k in range(10):
        pts = scene.sample_points(0.1)
        u, info = ctrl.step(q, pts, k)
        if info.status == "solved":
            stat, prim, _ = info.kkt
            assert stat <= 1e-6 and prim <= 1e-6
        q = q + prob.dt * u


def test_fallback_after_repeated_failures(monkeypatch):
    import cssdf.mpc as M

    prob = make_problem(h=3)
    ctrl = SafeMpcController(prob, LinearField(np.ones(2), 10.0), np.zeros((10, 2)))
    ctrl.last_u = np.array([1.0, 1.0])

    from cssdf.qp import QpResult

    def fail(inst, **kw):
        return QpResult(np.zeros(inst.n), np.zeros(inst.m), "max_iter", 1, 1.0, 1.0, 0.0)

    monkeypatch.setattr(M, "solve_qp", fail)
    u1, i1 = ctrl.step(np.zeros(2), None, 0)
    np.testing.assert_allclose(u1, [0.5, 0.5])
    u2, i2 = ctrl.step(np.zeros(2), None, 0)
    np.testing.assert_allclose(u2, [0.25, 0.25])
    u3, i3 = ctrl.step(np.zeros(2), None, 0)
    np.testing.assert_allclose(u3, [0.0, 0.0])  # emergency stop on 3rd failure
    assert i3.fallback


# -- simulation -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def mpc_field(planar2):
    return OraclePointField(planar2, resolution=81, point_quantize=0.02)


def test_static_empty_scene_converges(planar2, mpc_field):
    prob = make_problem(h=10)
    log = simulate(
        planar2, mpc_field, Scene([]), prob,
        np.array([1.0, 0.5]), np.array([-0.8, -0.2]), duration=4.0,
    )
    m = log.metrics()
    assert m["CR_pct"] == 0.0
    assert m["final_goal_dist"] <= 1e-2


@pytest.mark.slow
def test_moving_obstacle_episode_collision_free(planar2, mpc_field):
    scene = Scene([
        Obstacle("box", np.array([0.95, 1.55]), half_extents=np.array([0.15, 0.15]),
                 velocity=np.array([-0.45, 0.0])),
    ])
    prob = make_problem(h=10, gamma=0.3)
    log = simulate(planar2, mpc_field, scene, prob,
                   np.array([2.2, 0.4]), np.array([-2.2, -0.4]), duration=9.0)
    m = log.metrics()
    assert m["CR_pct"] == 0.0
    assert m["final_goal_dist"] <= 1e-2
    # the obstacle forced a deviation: commanded inputs differ from pure tracking
    assert log.phi_min.min() < prob.gamma


def test_episode_log_csv(tmp_path, planar2, mpc_field):
    prob = make_problem(h=5)
    log = simulate(planar2, mpc_field, Scene([]), prob,
                   np.array([0.5, 0.2]), np.array([-0.5, -0.2]), duration=0.5)
    path = tmp_path / "episode.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:6] == ["t", "q1", "q2", "u1", "u2", "min_phi"]
    assert len(lines) == int(0.5 / prob.dt) + 1


def test_simulation_deterministic(planar2, mpc_field):
    scene = Scene([
        Obstacle("box", np.array([0.9, 1.5]), half_extents=np.array([0.15, 0.15]),
                 velocity=np.array([-0.4, 0.0])),
    ])
    prob = make_problem(h=5)
    logs = [
        simulate(planar2, mpc_field, scene, prob, np.array([1.5, 0.3]),
                 np.array([-1.0, -0.3]), duration=1.0)
        for _ in range(2)
    ]
    np.testing.assert_array_equal(logs[0].q, logs[1].q)
    np.testing.assert_array_equal(logs[0].u, logs[1].u)


def test_problem_validation():
    with pytest.raises(InvalidInputError):
        make_problem(h=0)
    with pytest.raises(InvalidInputError):
        MpcProblem(horizon=2, dt=0.01, Q=np.array([1.0, -1.0]), R=np.ones(2),
                   q_min=np.full(2, -1), q_max=np.full(2, 1),
                   u_min=np.full(2, -1), u_max=np.full(2, 1))
    with pytest.raises(InvalidInputError):
        simulate(None, None, Scene([]), make_problem(), np.zeros(2), np.zeros(2),
                 duration=-1.0)
