import math

import numpy as np
import pytest

from tnn.errors import DegenerateTrialError, InvalidArgumentError
from tnn.grid import (
    SeparableGrid,
    grid_from_separable,
    grid_from_tnn,
    laplacian_cross,
    laplacian_inner,
    mass_inner,
)
from tnn import pde
from tnn.model import flatten_gradients, init_tnn
from tnn.pde import (
    EIG_EXACT,
    UNIT_SQUARE,
    Eig2dConfig,
    PoissonConfig,
    PoissonProblem,
    bump_factor_grid,
    eig_loss_and_gradient,
    exp_prod_exact,
    exp_prod_source,
    exp_prod_taylor_grid,
    pinn_eig_loss,
    pinn_eig_loss_grid,
    poisson_problem_from_grid,
    poisson_residual_loss,
    rayleigh_quotient,
    rayleigh_quotient_grid,
    solve_poisson,
    train_eig2d,
)
from tnn.quad import BoxDomain, sample_uniform, tensor_rules

EVAL_RULES = tensor_rules(UNIT_SQUARE, 40, 16)


def trial(seed, rank=3, hidden=(8, 8)):
    u = init_tnn(UNIT_SQUARE, rank, hidden, boundary_factor=True, rng=np.random.default_rng(seed), norm_quadrature=(20, 8))
    u.set_coefficients(np.random.default_rng(seed + 1).normal(size=rank))
    return u


def sine_grid(rules):
    s = (
        lambda x: np.sin(math.pi * x),
        lambda x: math.pi * np.cos(math.pi * x),
        lambda x: -(math.pi**2) * np.sin(math.pi * x),
    )
    return grid_from_separable(2, [1.0], [[s, s]], rules)


def laplacian_source(grid):
    """Grid of ``-Lap u`` built from a grid of ``u`` (rank ``R * d``)."""
    d = grid.dim
    values = [np.vstack([grid.d2[i] if i == k else grid.values[i] for k in range(d)]) for i in range(d)]
    return SeparableGrid(np.tile(-grid.coefficients, d), values, grid.rules)


def brute_pinn(grid):
    W = np.multiply.outer(grid.rules[0].weights, grid.rules[1].weights)

    def full(f0, f1):
        return np.einsum("r,rn,rm->nm", grid.coefficients, f0, f1)

    v = full(grid.values[0], grid.values[1])
    gx, gy = full(grid.d1[0], grid.values[1]), full(grid.values[0], grid.d1[1])
    lap = full(grid.d2[0], grid.values[1]) + full(grid.values[0], grid.d2[1])
    lam = np.sum(W * (gx**2 + gy**2)) / np.sum(W * v**2)
    return float(np.sum(W * (lap + lam * v) ** 2))


# --- eigenvalue demo -----------------------------------------------------------


def test_sine_is_exact_eigenfunction():
    g = sine_grid(tensor_rules(UNIT_SQUARE, 20, 8))
    assert abs(rayleigh_quotient_grid(g) - EIG_EXACT) <= 1e-10 * EIG_EXACT
    assert pinn_eig_loss_grid(g) <= 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pinn_loss_matches_brute_force(seed):
    u = trial(seed)
    g = grid_from_tnn(u, tensor_rules(UNIT_SQUARE, 6, 5), 2)
    exact = brute_pinn(g)
    assert abs(pinn_eig_loss_grid(g) - exact) <= 1e-9 * exact
    assert pinn_eig_loss(u, rules=g.rules) >= -1e-10


def test_rayleigh_bound_and_degenerate_trial():
    for seed in range(20):
        assert rayleigh_quotient(trial(seed), rules=EVAL_RULES) >= EIG_EXACT - 1e-8
    u = trial(0)
    u.set_coefficients(np.zeros(3))
    with pytest.raises(DegenerateTrialError):
        rayleigh_quotient(u)
    with pytest.raises(DegenerateTrialError):
        pinn_eig_loss(u, "monte_carlo", 100, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        rayleigh_quotient(trial(0), "simpson")


def test_monte_carlo_around_gauss():
    u = trial(4)
    exact = rayleigh_quotient(u, rules=EVAL_RULES)
    ests = np.array([rayleigh_quotient(u, "monte_carlo", 25600, np.random.default_rng(s)) for s in range(30)])
    se = ests.std(ddof=1) / math.sqrt(len(ests))
    assert abs(ests.mean() - exact) <= 5 * se


@pytest.mark.parametrize("loss", ["ritz", "pinn"])
def test_monte_carlo_rate(loss):
    u = trial(5)
    fn = rayleigh_quotient if loss == "ritz" else pinn_eig_loss
    exact = fn(u, rules=EVAL_RULES)

    def rms(n):
        errs = [fn(u, "monte_carlo", n, np.random.default_rng(1000 + s)) - exact for s in range(20)]
        return math.sqrt(np.mean(np.square(errs)))

    ratio = rms(1600) / rms(6400)
    assert 1.0 <= ratio <= 4.0


def test_initial_training_state_and_trajectory():
    cfg = Eig2dConfig(steps=30, record_every=10, rank=4, hidden=(8, 8), quadrature=(10, 8), seed=1)
    u, rep = train_eig2d(cfg)
    assert len(rep.e_lambda_trajectory) == 3 and len(rep.loss_history) == 30
    assert all(math.isfinite(e) and e > 0 for e in rep.e_lambda_trajectory)
    assert rep.e_lambda == pytest.approx(abs(rep.eigenvalue - EIG_EXACT) / EIG_EXACT)
    _, again = train_eig2d(cfg)
    assert again.e_lambda_trajectory == rep.e_lambda_trajectory


def test_ritz_gauss_modest_schedule():
    _, rep = train_eig2d(Eig2dConfig(rank=10, steps=5000, seed=0, record_every=1000))
    assert 0 < rep.e_lambda_trajectory[0] and np.isfinite(rep.e_lambda_trajectory[0])
    assert rep.e_lambda <= 1e-5


def test_learning_rate_decay():
    cfg = Eig2dConfig(steps=11, lr=1e-2, lr_final=1e-4)
    assert cfg.lr_at(1) == pytest.approx(1e-2) and cfg.lr_at(11) == pytest.approx(1e-4)
    assert cfg.lr_at(6) == pytest.approx(1e-3)
    assert Eig2dConfig(steps=11, lr=1e-2).lr_at(7) == 1e-2
    with pytest.raises(ValueError):
        Eig2dConfig(lr_final=0.0)


@pytest.mark.parametrize("loss", ["ritz", "pinn"])
def test_mc_chunking_does_not_change_gradient(loss, monkeypatch):
    u = trial(4)

    def run():
        return eig_loss_and_gradient(u, loss, "monte_carlo", mc_samples=5000, rng=np.random.default_rng(9))

    monkeypatch.setattr(pde, "MC_CHUNK", 10**6)
    whole = run()
    monkeypatch.setattr(pde, "MC_CHUNK", 1024)
    split = run()
    assert split.value == pytest.approx(whole.value, rel=1e-13)
    np.testing.assert_allclose(split.coefficients, whole.coefficients, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(flatten_gradients(split.theta), flatten_gradients(whole.theta), rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("loss", ["ritz", "pinn"])
@pytest.mark.parametrize("method", ["gauss", "monte_carlo"])
def test_eig_gradients_match_finite_differences(loss, method):
    u = trial(6, rank=2, hidden=(5,))
    rules = tensor_rules(UNIT_SQUARE, 8, 6)

    def value(m):
        return eig_loss_and_gradient(m, loss, method, rules=rules, mc_samples=500, rng=np.random.default_rng(3)).value

    res = eig_loss_and_gradient(u, loss, method, rules=rules, mc_samples=500, rng=np.random.default_rng(3))
    assert res.value == pytest.approx(value(u), rel=1e-12)
    theta = u.theta()
    idx = np.random.default_rng(0).choice(theta.size, 15, replace=False)
    fd = []
    for k in idx:
        e = np.zeros_like(theta)
        e[k] = 1e-6
        a, b = u.copy(), u.copy()
        a.set_theta(theta + e)
        b.set_theta(theta - e)
        fd.append((value(a) - value(b)) / 2e-6)
    fd = np.array(fd)
    assert np.linalg.norm(flatten_gradients(res.theta)[idx] - fd) <= 1e-5 * np.linalg.norm(fd)


# --- Poisson ---------------------------------------------------------------------


DOM2 = BoxDomain.cube(-1.0, 1.0, 2)


def poisson_trial(seed, dom=DOM2, rank=3):
    u = init_tnn(dom, rank, (8, 8), boundary_factor=True, rng=np.random.default_rng(seed), norm_quadrature=(10, 8))
    u.set_coefficients(np.random.default_rng(seed + 7).normal(size=rank))
    return u


def test_residual_vanishes_at_exact_solution():
    for d in (1, 2, 3):
        dom = BoxDomain.cube(-1.0, 1.0, d)
        u = poisson_trial(d, dom)
        grid = grid_from_tnn(u, tensor_rules(dom, 10, 8), 2)
        problem = PoissonProblem(dom, laplacian_source(grid))
        assert poisson_residual_loss(u, problem).value <= 1e-9


def test_residual_identity_and_zero_source():
    u = poisson_trial(1)
    rules = tensor_rules(DOM2, 10, 8)
    f = exp_prod_taylor_grid(rules, 6)
    res = poisson_residual_loss(u, PoissonProblem(DOM2, f))
    g = grid_from_tnn(u, rules, 2)
    expected = laplacian_inner(g, g) + 2 * laplacian_cross(g, f) + mass_inner(f, f)
    assert abs(res.value - expected) <= 1e-10 * expected
    zero = SeparableGrid([0.0], [np.zeros((1, len(r))) for r in rules], rules)
    assert poisson_residual_loss(u, PoissonProblem(DOM2, zero)).value == pytest.approx(laplacian_inner(g, g), rel=1e-14)


def test_residual_gradient_finite_differences():
    u = poisson_trial(2)
    rules = tensor_rules(DOM2, 8, 8)
    problem = PoissonProblem(DOM2, exp_prod_taylor_grid(rules, 6))
    res = poisson_residual_loss(u, problem)
    theta = u.theta()
    idx = np.random.default_rng(1).choice(theta.size, 20, replace=False)
    fd = []
    for k in idx:
        e = np.zeros_like(theta)
        e[k] = 1e-6
        a, b = u.copy(), u.copy()
        a.set_theta(theta + e)
        b.set_theta(theta - e)
        fd.append((poisson_residual_loss(a, problem).value - poisson_residual_loss(b, problem).value) / 2e-6)
    fd = np.array(fd)
    assert np.linalg.norm(flatten_gradients(res.theta)[idx] - fd) <= 1e-4 * np.linalg.norm(fd)
    c = u.coefficients
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1e-6
        a, b = u.copy(), u.copy()
        a.set_coefficients(c + e)
        b.set_coefficients(c - e)
        fdc = (poisson_residual_loss(a, problem).value - poisson_residual_loss(b, problem).value) / 2e-6
        assert fdc == pytest.approx(res.coefficients[k], rel=1e-6)


def test_bump_grid_gives_exact_source():
    # (exp(P) h) tabulated through grids equals -Lap(exp(P) - 1) pointwise
    for d in (2, 4):
        dom = BoxDomain.cube(-1.0, 1.0, d)
        rules = tensor_rules(dom, 2, 3)
        h = bump_factor_grid(rules)
        nodes = [r.nodes for r in rules]
        X = np.array(np.meshgrid(*nodes, indexing="ij")).reshape(d, -1).T
        hv = np.zeros(len(X))
        for r, c in enumerate(h.coefficients):
            idx = np.array(np.meshgrid(*[np.arange(len(n)) for n in nodes], indexing="ij")).reshape(d, -1).T
            hv += c * np.prod([h.values[i][r][idx[:, i]] for i in range(d)], axis=0)
        np.testing.assert_allclose(exp_prod_exact(X) * hv, exp_prod_source(X), rtol=1e-12, atol=1e-12)


def test_zero_source_gives_zero_solution():
    rules = tensor_rules(DOM2, 6, 6)
    zero = SeparableGrid([0.0], [np.zeros((1, len(r))) for r in rules], rules)
    cfg = PoissonConfig(rank=3, hidden=(6, 6), adam_steps=20, lbfgs_steps=5, n_test=100)
    u, rep = solve_poisson(PoissonProblem(DOM2, zero), cfg)
    g = grid_from_tnn(u, rules)
    assert mass_inner(g, g) <= 1e-6


def test_small_poisson_solve_is_accurate_and_deterministic():
    rules = tensor_rules(DOM2, 20, 8)
    problem = poisson_problem_from_grid(exp_prod_taylor_grid(rules, 25), DOM2)
    cfg = PoissonConfig(rank=6, hidden=(16, 16), adam_steps=300, lbfgs_steps=30, n_test=5000, seed=1)
    _, rep = solve_poisson(problem, cfg)
    assert rep.l2_relative < 2e-2
    assert rep.loss_history[-1] < rep.loss_history[0]
    _, again = solve_poisson(problem, cfg)
    assert again.l2_relative == rep.l2_relative


def test_coarser_source_does_not_improve_solution():
    rules = tensor_rules(DOM2, 20, 8)
    X = sample_uniform(DOM2, 4000, np.random.default_rng(0))

    def linf(terms):
        P = np.prod(1 - X**2, axis=1)
        series = sum(P**n / math.factorial(n) for n in range(terms))
        return np.max(np.abs(series - np.exp(P)))

    fine, coarse = 5, 2
    assert linf(coarse) >= 10 * linf(fine)
    cfg = dict(rank=6, hidden=(16, 16), adam_steps=300, lbfgs_steps=30, n_test=5000)
    errs = {fine: [], coarse: []}
    for seed in range(3):
        for terms in errs:
            problem = poisson_problem_from_grid(exp_prod_taylor_grid(rules, terms), DOM2)
            errs[terms].append(solve_poisson(problem, PoissonConfig(seed=seed, **cfg))[1].l2_relative)
    noise = np.std(errs[fine]) + np.std(errs[coarse])
    assert np.mean(errs[coarse]) >= np.mean(errs[fine]) - 2 * noise
