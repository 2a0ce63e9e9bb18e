import numpy as np
import pytest

from cssdf.errors import InvalidInputError
from cssdf.evalbench import (
    LOSS_VARIANTS,
    ablation_run,
    ablation_to_csv,
    build_variant_dataset,
    evaluate_on_split,
    fpr,
    grad_similarity,
    latency_bench,
    latency_to_csv,
    mae,
    oracle_mae,
)
from cssdf.net import FieldModel, NetConfig, TrainConfig, split_indices


# -- metric functions ------------------------------------------------------------


def test_fpr_perfect_predictor():
    truth = np.array([0.02, -0.03, 0.5, -0.01])
    pct, n = fpr(truth, truth)
    assert pct == 0.0
    assert n == 3


def test_fpr_sign_flipped_all_positive_band():
    truth = np.array([0.02, 0.04, 0.01, 0.5])
    pred = -truth
    pct, n = fpr(pred, truth)
    assert pct == 100.0
    assert n == 3


def test_fpr_hand_counted_six_samples():
    # band = |truth| <= 0.05 keeps 4 samples; 2 of them are false positives
    truth = np.array([0.04, 0.03, -0.02, 0.05, 0.8, -0.9])
    pred = np.array([-0.01, 0.02, -0.05, -0.2, 0.7, -0.8])
    pct, n = fpr(pred, truth)
    assert n == 4
    assert pct == pytest.approx(50.0)


def test_fpr_empty_band_is_na():
    pct, n = fpr(np.array([1.0, -2.0]), np.array([1.0, -2.0]), band=0.05)
    assert pct is None
    assert n == 0


def test_fpr_length_mismatch():
    with pytest.raises(InvalidInputError):
        fpr(np.zeros(3), np.zeros(4))


def test_grad_similarity_identical():
    g = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert grad_similarity(g, g) == pytest.approx(1.0)


def test_grad_similarity_opposite():
    g = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert grad_similarity(-g, g) == pytest.approx(-1.0)


def test_grad_similarity_orthogonal():
    a = np.array([[1.0, 0.0]])
    b = np.array([[0.0, 1.0]])
    assert grad_similarity(a, b) == pytest.approx(0.0)


def test_grad_similarity_zero_pred_counts_zero():
    pred = np.array([[0.0, 0.0], [1.0, 0.0]])
    true = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert grad_similarity(pred, true) == pytest.approx(0.5)


def test_mae_basic():
    assert mae([1.0, 2.0], [0.5, 2.5]) == pytest.approx(0.5)


def test_metrics_are_pure():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=50)
    truth = rng.normal(size=50)
    assert fpr(pred, truth) == fpr(pred, truth)
    assert mae(pred, truth) == mae(pred, truth)


# -- harnesses ----------------------------------------------------------------------


def small_net(dof=2, w=2, seed=0):
    cfg = NetConfig(hidden_layers=2, width=16, frequencies=1, dropout=0.0,
                    batchnorm=False, seed=seed)
    return FieldModel(dof, w, [[-np.pi, np.pi]] * dof, [[-3, 3]] * w, cfg)


def test_latency_bench_shape_and_monotonicity(tmp_path):
    model = small_net()
    rows = latency_bench(model, scales=(1, 10, 100, 1000), repeats=3)
    assert set(rows) == {"dist", "dist_grad"}
    for mode in rows:
        assert set(rows[mode]) == {1, 10, 100, 1000}
        assert all(v > 0 for v in rows[mode].values())
    # gradient queries do strictly more work
    for s in rows["dist"]:
        assert rows["dist_grad"][s] >= rows["dist"][s]
    path = tmp_path / "latency.csv"
    latency_to_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mode,n=1,n=10,n=100,n=1000"
    assert len(lines) == 3


def test_variant_datasets(planar2):
    for name in ("uniform", "balanced", "complete"):
        ds, report = build_variant_dataset(planar2, name, 400, seed=1)
        assert len(ds) == 400 or name != "uniform"  # balanced/complete hit target too
        ds.validate()
    with pytest.raises(InvalidInputError):
        build_variant_dataset(planar2, "nope", 100, 0)


def test_evaluate_on_split_reports(planar2):
    ds, _ = build_variant_dataset(planar2, "complete", 400, seed=5)
    model = FieldModel.for_robot(planar2, NetConfig(hidden_layers=2, width=16,
                                                    frequencies=1, dropout=0.0,
                                                    batchnorm=False, seed=1))
    _, val_idx = split_indices(len(ds), 0.2, 5)
    report = evaluate_on_split(model, ds, val_idx)
    assert report.n_samples == val_idx.size
    assert 0 <= report.class_ratio_pct <= 100
    assert -1.0 <= report.grad_sim <= 1.0
    assert report.mae >= 0


def test_oracle_mae_perfect_on_grid_values(planar2):
    """A predictor that replays the oracle achieves near-zero oracle MAE."""

    class OracleReplay(FieldModel):
        pass

    from cssdf.geometry import GridField, oracle_self_distance

    grid = oracle_self_distance(planar2, resolution=201)
    gf = GridField(grid)
    model = small_net()
    model.predict = lambda X, chunk=0: gf.value(np.atleast_2d(X)[:, :2])
    assert oracle_mae(model, planar2, n_eval=500) <= 1e-9


@pytest.mark.slow
def test_ablation_run_deterministic(planar2):
    kwargs = dict(
        n_samples=600, seed=3, epochs=4,
        net_config=NetConfig(hidden_layers=2, width=16, frequencies=1,
                             dropout=0.0, batchnorm=False, seed=3),
        data_variants=(), loss_variants=("complete",), with_oracle_mae=False,
    )
    a = ablation_run(planar2, **kwargs)
    b = ablation_run(planar2, **kwargs)
    ra = a["loss/complete"][0]
    rb = b["loss/complete"][0]
    assert ra.mae == rb.mae
    assert ra.grad_sim == rb.grad_sim


def test_ablation_csv(tmp_path, planar2):
    results = ablation_run(
        planar2, n_samples=400, seed=2, epochs=2,
        net_config=NetConfig(hidden_layers=2, width=12, frequencies=1,
                             dropout=0.0, batchnorm=False, seed=2),
        data_variants=("uniform",), loss_variants=(), with_oracle_mae=False,
    )
    path = tmp_path / "ablation.csv"
    ablation_to_csv(results, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("variant,mae,grad_sim")
    assert len(lines) == 2


def test_loss_variant_weights():
    assert LOSS_VARIANTS["distance_only"].w_eik == 0.0
    assert LOSS_VARIANTS["distance_only"].w_dir == 0.0
    assert LOSS_VARIANTS["distance_magnitude"].w_eik == 0.1
    assert LOSS_VARIANTS["distance_direction"].w_dir == 0.2
    assert LOSS_VARIANTS["complete"].w_dist == 5.0
