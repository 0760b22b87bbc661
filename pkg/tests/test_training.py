import numpy as np
import pytest

from equibasis.training import (
    TaskSpec,
    TrainConfig,
    build_task_network,
    cosine_value,
    gen_task_data,
    least_squares_fit,
    run_experiment,
    split_task_data,
    train,
    trivial_baseline,
)
from equibasis.layers import forward, init_params


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec("frobnicate")
    assert TaskSpec("trace").loss == "mse"
    assert TaskSpec("max_singular_vector").loss == "cosine"


def test_data_deterministic_by_seed():
    a1 = gen_task_data(TaskSpec("sym_projection", n=6, train_size=8, test_size=4, seed=5))
    a2 = gen_task_data(TaskSpec("sym_projection", n=6, train_size=8, test_size=4, seed=5))
    b = gen_task_data(TaskSpec("sym_projection", n=6, train_size=8, test_size=4, seed=6))
    np.testing.assert_array_equal(a1[0], a2[0])
    np.testing.assert_array_equal(a1[1], a2[1])
    assert not np.array_equal(a1[0], b[0])


def test_sym_target_fixes_symmetric_input():
    x, y = gen_task_data(TaskSpec("sym_projection", n=5, train_size=6, test_size=2, seed=0))
    sym = 0.5 * (x[0, ..., 0] + x[0, ..., 0].T)
    np.testing.assert_allclose(0.5 * (sym + sym.T), sym)  # target of symmetric input is itself
    np.testing.assert_allclose(y[0, ..., 0], sym)


def test_trace_target_of_identity():
    x, y = gen_task_data(TaskSpec("trace", n=7, train_size=4, test_size=1, seed=1))
    assert y.shape == (5, 1)
    np.testing.assert_allclose(y[:, 0], np.einsum("bii->b", x[..., 0]))
    assert np.trace(np.eye(7)) == 7.0  # the reference routine is the diagonal sum


def test_diag_target():
    x, y = gen_task_data(TaskSpec("diag_extraction", n=4, train_size=3, test_size=1, seed=2))
    for a, t in zip(x[..., 0], y[..., 0]):
        np.testing.assert_array_equal(t, np.diag(np.diag(a)))


def test_singular_vector_targets():
    task = TaskSpec("max_singular_vector", n=8, train_size=10, test_size=2, seed=3)
    x, y = gen_task_data(task)
    rng = np.random.default_rng(99)
    for a, v in zip(x[..., 0], y):
        assert np.linalg.norm(v) == pytest.approx(1.0)
        # spectral gap of the construction
        s = np.linalg.svd(a, compute_uv=False)
        assert s[0] - s[1] >= 0.5 - 1e-9
        assert s[1] <= 0.5 + 1e-9
        # no random unit vector is stretched more (sampling check)
        best = np.linalg.norm(a @ v)
        for _ in range(1000):
            u = rng.normal(size=8)
            u /= np.linalg.norm(u)
            assert np.linalg.norm(a @ u) <= best + 1e-9


def test_trivial_baseline_mse_is_variance():
    rng = np.random.default_rng(4)
    train_y = rng.normal(size=(4000, 1)) * 3.0 + 5.0
    test_y = rng.normal(size=(4000, 1)) * 3.0 + 5.0
    base = trivial_baseline(train_y, test_y, "mse")
    assert base == pytest.approx(9.0, rel=0.1)


def test_trace_baseline_matches_uniform_variance():
    # trace of an n x n matrix of U[0,10] entries has variance n * 100/12
    task = TaskSpec("trace", n=20, train_size=4000, test_size=1000, seed=5)
    _, train_y, _, test_y = split_task_data(task)
    base = trivial_baseline(train_y, test_y, "mse")
    assert base == pytest.approx(20 * 100 / 12, rel=0.15)


def test_network_shapes_per_task():
    cfg = TrainConfig()
    net = build_task_network("sym_projection", 2, 8, "full", cfg)
    assert [(l.k_in, l.k_out, l.d_in, l.d_out) for l in net.layers] == [(2, 2, 1, 8), (2, 2, 8, 1)]
    net = build_task_network("max_singular_vector", 2, 8, "full", cfg)
    assert net.layers[-1].k_out == 1
    net = build_task_network("trace", 1, 8, "full", cfg)
    assert net.pool == "sum" and net.dense[-1].weight.shape == (16, 1)
    net = build_task_network("diag_extraction", 1, 8, "hartford", cfg)
    assert net.layers[0].op_subset is not None and net.layers[0].w.shape[0] == 4


def test_sgd_monotone_on_linear_task():
    # full-batch gradient descent with a small step never increases the loss
    task = TaskSpec("sym_projection", n=6, train_size=64, test_size=16, seed=6)
    x, y, _, _ = split_task_data(task)
    net = init_params(build_task_network("sym_projection", 1, 8, "full", TrainConfig()), 0)
    cfg = TrainConfig(depths=(1,), epochs=50, batch_size=64, learning_rate=1e-4,
                      optimizer="sgd", seed=6)
    _, history = train(net, x, y, "mse", cfg)
    diffs = np.diff(history)
    assert np.all(diffs <= 1e-12)


def test_short_training_improves_on_baseline():
    task = TaskSpec("diag_extraction", n=8, train_size=128, test_size=64, seed=7)
    cfg = TrainConfig(depths=(1,), epochs=60, batch_size=64, learning_rate=0.05,
                      lr_decay=0.9, decay_after=40, seed=7)
    report = run_experiment(task, cfg)
    assert report.best.test_loss < 0.05 * report.baseline


def test_run_experiment_report_contents():
    task = TaskSpec("trace", n=6, train_size=64, test_size=32, seed=8)
    cfg = TrainConfig(depths=(1, 2), epochs=5, batch_size=32, learning_rate=0.02, seed=8)
    report = run_experiment(task, cfg, eval_sizes=(5,))
    assert [r.depth for r in report.runs] == [1, 2]
    assert set(report.generalization) == {5}
    d = report.to_dict()
    assert d["schema_version"] == 1
    assert d["task"] == "trace" and len(d["runs"]) == 2
    rows = report.csv_rows()
    assert {r["depth"] for r in rows} == {1, 2}
    assert all(r["baseline"] == report.baseline for r in rows)


def test_experiment_deterministic():
    task = TaskSpec("sym_projection", n=5, train_size=32, test_size=16, seed=9)
    cfg = TrainConfig(depths=(1,), epochs=4, batch_size=16, learning_rate=0.02, seed=9)
    r1 = run_experiment(task, cfg)
    r2 = run_experiment(task, cfg)
    assert r1.best.test_loss == r2.best.test_loss
    assert r1.runs[0].history == r2.runs[0].history


# SGD-free expressivity oracle


def test_lsq_full_basis_exact_for_linear_tasks():
    for kind in ("sym_projection", "diag_extraction", "trace"):
        coeffs, residual = least_squares_fit(kind, "full", 20)
        assert residual < 1e-10


def test_lsq_sym_coefficients_are_half_identity_half_transpose():
    coeffs, _ = least_squares_fit("sym_projection", "full", 11)
    assert coeffs["identity"] == pytest.approx(0.5, abs=1e-9)
    assert coeffs["transpose"] == pytest.approx(0.5, abs=1e-9)
    others = {k: v for k, v in coeffs.items() if k not in ("identity", "transpose")}
    assert max(abs(v) for v in others.values()) < 1e-9


def test_lsq_hartford_cannot_express_diag_extraction():
    coeffs, residual = least_squares_fit("diag_extraction", "hartford", 20)
    assert residual > 0.05
    _, full_residual = least_squares_fit("diag_extraction", "full", 20)
    assert full_residual < 1e-10


def test_lsq_rejects_nonlinear_task():
    with pytest.raises(ValueError):
        least_squares_fit("max_singular_vector", "full", 8)
