import numpy as np
import pytest

from tnn.errors import DegenerateTargetError, NumericError
from tnn.interp import (
    InterpConfig,
    assemble_system,
    evaluate_fit,
    sample_batch,
    squared_loss,
    train_interpolation,
)
from tnn.linalg import solve_spd
from tnn.model import PointEvaluation, TnnModel, init_tnn, tnn_eval
from tnn.quad import BoxDomain, tensor_rules
from tnn.subnet import SubNetwork, compute_norms, forward

DOM3 = BoxDomain.cube(0.0, 1.0, 3)


def small_model(seed=0, rank=5, dom=DOM3):
    return init_tnn(dom, rank, (8, 8), rng=np.random.default_rng(seed), norm_quadrature=(8, 8))


def constant_model(value, dom):
    const = SubNetwork([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1), np.ones(1)])
    return TnnModel(dom, [const.copy() for _ in range(dom.dim)], [value], tensor_rules(dom, 2, 2))


def test_sample_batch():
    rng = np.random.default_rng(0)
    X = sample_batch(DOM3, 1, rng)
    assert X.shape == (1, 3) and np.all((X >= 0) & (X <= 1))
    X = sample_batch(BoxDomain.cube(0, 1, 1), 10**5, rng)
    assert abs(X.mean() - 0.5) < 0.005
    a = sample_batch(DOM3, 7, np.random.default_rng(4))
    assert np.array_equal(a, sample_batch(DOM3, 7, np.random.default_rng(4)))


def test_assemble_against_design_matrix():
    model = small_model()
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(50, 3))
    y = np.sin(X.sum(axis=1))
    A, B = assemble_system(model, X, y)
    # independent design matrix: products of normalised channel values, point by point
    G = np.ones((50, 5))
    for i, net in enumerate(model.subnets):
        G *= forward(net, X[:, i]) / model.norm_states[i].norms
    np.testing.assert_allclose(A, G.T @ G, rtol=1e-12, atol=1e-12 * np.abs(A).max())
    np.testing.assert_allclose(B, G.T @ y, rtol=1e-12, atol=1e-12 * np.abs(B).max())
    A2, B2 = assemble_system(model, np.vstack([X, X]), np.concatenate([y, y]))
    np.testing.assert_allclose(A2, 2 * A, rtol=1e-14)
    np.testing.assert_allclose(B2, 2 * B, rtol=1e-14)


def test_assemble_one_point_fit():
    model = small_model(rank=1)
    x = np.array([[0.3, 0.6, 0.2]])
    A, B = assemble_system(model, x, [1.7])
    phi = PointEvaluation(model, x).basis[0, 0]
    assert A[0, 0] == pytest.approx(phi**2) and B[0] == pytest.approx(1.7 * phi)
    c = solve_spd(A, B).x
    assert c[0] == pytest.approx(1.7 / phi)


def test_assemble_rejects_non_finite_target():
    with pytest.raises(NumericError) as info:
        assemble_system(small_model(), np.full((3, 3), 0.5), [1.0, np.nan, 2.0])
    assert info.value.location == 1


def test_squared_loss_identity_and_examples():
    model = small_model()
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(200, 3))
    y = np.exp(-X.sum(axis=1))
    A, B = assemble_system(model, X, y)
    c = solve_spd(A, B).x
    # optimality: the c-gradient 2(Ac - B) vanishes
    assert np.linalg.norm(A @ c - B) <= 1e-8 * np.linalg.norm(B)
    before = squared_loss(model, X, y)
    model.set_coefficients(c)
    after = squared_loss(model, X, y)
    assert after <= before
    assert after == pytest.approx(y @ y - c @ B, rel=1e-8)
    assert squared_loss(model, X, tnn_eval(model, X)) == pytest.approx(0.0, abs=1e-20)
    zero = constant_model(0.0, DOM3)
    assert squared_loss(zero, [[0.1, 0.2, 0.3]], [3.0]) == 9.0


def test_evaluate_fit_examples():
    dom = BoxDomain.cube(0, 1, 2)
    model = constant_model(1.0, dom)
    rmse, rel = evaluate_fit(model, lambda X: np.full(len(X), 2.0), 100, np.random.default_rng(0))
    assert rmse == pytest.approx(1.0) and rel == pytest.approx(0.5)
    rmse, rel = evaluate_fit(model, lambda X: tnn_eval(model, X), 50, np.random.default_rng(0))
    assert rmse == 0.0 and rel == 0.0
    with pytest.raises(DegenerateTargetError):
        evaluate_fit(model, lambda X: np.zeros(len(X)), 10, np.random.default_rng(0))


def quick_config(**kw):
    base = dict(
        outer_iterations=2,
        batch_size=300,
        adam_steps=15,
        lbfgs_steps=5,
        rank=4,
        hidden=(6, 6),
        norm_quadrature=(8, 8),
        validation_size=200,
        n_test=500,
        seed=3,
    )
    base.update(kw)
    return InterpConfig(**base)


def test_representable_target_after_one_solve():
    dom = BoxDomain.cube(-1.0, 1.0, 4)
    truth = init_tnn(dom, 6, (10, 10), rng=np.random.default_rng(11))
    truth.set_coefficients(np.random.default_rng(12).normal(size=6))
    target = lambda X: tnn_eval(truth, X)
    # same seed as the truth, so only the coefficients differ
    model = init_tnn(dom, 6, (10, 10), rng=np.random.default_rng(11))
    X = sample_batch(dom, 2000, np.random.default_rng(0))
    A, B = assemble_system(model, X, target(X))
    model.set_coefficients(solve_spd(A, B).x)
    rmse, _ = evaluate_fit(model, target, 10000, np.random.default_rng(1))
    assert rmse <= 1e-8


def test_training_report_and_monotonicity():
    target = lambda X: np.exp(-np.sum(X**2, axis=1))
    model, rep = train_interpolation(target, DOM3, quick_config())
    assert len(rep.loss_history) == 2 * 20
    assert rep.monotone_violations == 0
    assert rep.rmse >= 0 and rep.l2_relative >= 0
    assert len(rep.validation_history) == 2 and rep.best_outer_iteration in (0, 1)
    assert rep.validation_history[rep.best_outer_iteration] == min(rep.validation_history)
    assert sum(rep.solve_paths.values()) > 0
    # every channel of the returned model is normalised
    g = model.copy()
    for i, (net, rule) in enumerate(zip(g.subnets, g.norm_rules)):
        scaled = net.copy()
        scaled.weights[-1] = scaled.weights[-1] / g.norm_states[i].norms[:, None]
        scaled.biases[-1] = scaled.biases[-1] / g.norm_states[i].norms
        np.testing.assert_allclose(compute_norms(scaled, rule).norms, 1.0, atol=1e-10)
    assert rep.loss_history[-1] < rep.loss_history[0]


def test_training_is_deterministic():
    target = lambda X: np.cos(X.sum(axis=1))
    _, a = train_interpolation(target, DOM3, quick_config())
    _, b = train_interpolation(target, DOM3, quick_config())
    da, db = a.to_dict(), b.to_dict()
    da.pop("wall_time"), db.pop("wall_time")
    assert da == db


def test_global_schedule():
    cfg = quick_config(outer_iterations=4, adam_steps=6, lbfgs_steps=2, schedule="global")
    assert cfg.inner_steps == 2 and cfg.total_steps == 8
    assert cfg.uses_adam(0, 5) and not cfg.uses_adam(0, 6)
    _, rep = train_interpolation(lambda X: X[:, 0], DOM3, cfg)
    assert len(rep.loss_history) == 8
    per = quick_config(outer_iterations=4, adam_steps=6, lbfgs_steps=2)
    assert per.inner_steps == 8 and per.total_steps == 32
    assert per.uses_adam(5, 30) and not per.uses_adam(6, 0)


@pytest.mark.parametrize(
    "bad",
    [dict(outer_iterations=0), dict(batch_size=0), dict(schedule="weekly"), dict(adam_steps=0, lbfgs_steps=0), dict(adam_steps=-1)],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        quick_config(**bad)
