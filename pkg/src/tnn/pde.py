"""PDE losses on TNNs: the Laplace eigenproblem on the unit square and a Poisson solver.

Eigenproblem: ``-Lap u = lambda u`` on ``[0,1]^2`` with zero boundary values,
smallest eigenvalue ``2 pi^2``. Two losses are offered, each with a
tensor-Gauss and a Monte Carlo evaluation of the same integrals:

* Ritz: the Rayleigh quotient ``int |grad u|^2 / int u^2``;
* PINN: ``int (Lap u + lambda u)^2`` with ``lambda`` the current Rayleigh
  quotient. Training divides it by ``int u^2``, otherwise ``u -> 0`` is a
  trivial minimiser.

Poisson: ``-Lap u = f`` on a box with zero boundary values (the boundary
factor enforces them), ``f`` given as a separable grid. The loss
``||Lap u + f||^2`` is quadratic in the coefficients, so they are solved for
exactly at every step and only the subnetwork weights are optimised.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateTrialError, InvalidArgumentError, NumericError, SingularSystemError
from .grid import (
    FormEvaluation,
    InnerGradient,
    SeparableGrid,
    grid_from_separable,
    grid_from_tnn,
    grid_product,
    merge_cotangents,
    pullback_grid,
    scale_cotangents,
)
from .interp import evaluate_fit
from .linalg import RidgePolicy, solve_spd
from .model import PointEvaluation, TnnModel, flatten_gradients, init_tnn, install_theta, pullback_norms
from .optim import AdamState, LbfgsState, adam_step, lbfgs_step
from .quad import BoxDomain, QuadratureRule1D, sample_uniform, tensor_rules

log = logging.getLogger(__name__)

EIG_EXACT = 2.0 * math.pi**2
UNIT_SQUARE = BoxDomain.cube(0.0, 1.0, 2)
EIG_QUADRATURE = (20, 8)
EIG_EVAL_QUADRATURE = (40, 16)
MC_SAMPLES = 25600
POISSON_TEST_SEED_OFFSET = 104729


@dataclass(frozen=True)
class EigProblem2D:
    domain: BoxDomain = UNIT_SQUARE
    exact: float = EIG_EXACT


# --- eigenvalue losses -----------------------------------------------------


def _mc_points(u: TnnModel, n: int, rng) -> np.ndarray:
    if rng is None:
        raise InvalidArgumentError("Monte Carlo evaluation needs an rng")
    return sample_uniform(u.domain, n, rng)


def _gauss_grid(u: TnnModel, rules, order: int) -> SeparableGrid:
    if rules is None:
        rules = tensor_rules(u.domain, *EIG_QUADRATURE)
    return grid_from_tnn(u, rules, order)


def _check_denominator(m: float):
    if not m > 0.0:
        raise DegenerateTrialError("int u^2 vanishes; Rayleigh quotient undefined")


def rayleigh_quotient_grid(grid: SeparableGrid) -> float:
    """``int |grad u|^2 / int u^2`` from a grid with first derivatives."""
    m = FormEvaluation("mass", grid, grid).value()
    _check_denominator(m)
    return FormEvaluation("stiffness", grid, grid).value() / m


def rayleigh_quotient(
    u: TnnModel,
    method: str = "gauss",
    mc_samples: int = MC_SAMPLES,
    rng: np.random.Generator | None = None,
    rules: Sequence[QuadratureRule1D] | None = None,
) -> float:
    """Rayleigh quotient of ``u`` by tensor Gauss quadrature or Monte Carlo.

    The Gauss default is the composite (20, 8) rule per dimension.
    """
    if method == "gauss":
        return rayleigh_quotient_grid(_gauss_grid(u, rules, 1))
    if method == "monte_carlo":
        pe = PointEvaluation(u, _mc_points(u, mc_samples, rng), 1, check=False)
        v, g = pe.value(), pe.gradient()
        _check_denominator(float(v @ v))
        return float(np.sum(g * g) / (v @ v))
    raise InvalidArgumentError(f"unknown integration method {method!r}")


def pinn_eig_loss_grid(grid: SeparableGrid, normalize: bool = False) -> float:
    """``int (Lap u + lambda u)^2`` with ``lambda`` the Rayleigh quotient of the grid."""
    m = FormEvaluation("mass", grid, grid).value()
    _check_denominator(m)
    s = FormEvaluation("stiffness", grid, grid).value()
    lam = s / m
    lap = FormEvaluation("laplacian", grid, grid).value()
    cross = FormEvaluation("cross", grid, grid).value()
    out = max(lap + 2.0 * lam * cross + lam * lam * m, 0.0)
    return out / m if normalize else out


def pinn_eig_loss(
    u: TnnModel,
    method: str = "gauss",
    mc_samples: int = MC_SAMPLES,
    rng: np.random.Generator | None = None,
    rules: Sequence[QuadratureRule1D] | None = None,
    normalize: bool = False,
) -> float:
    if method == "gauss":
        return pinn_eig_loss_grid(_gauss_grid(u, rules, 2), normalize)
    if method == "monte_carlo":
        vol = u.domain.volume
        pe = PointEvaluation(u, _mc_points(u, mc_samples, rng), 2, check=False)
        v, g, lap = pe.value(), pe.gradient(), pe.laplacian()
        _check_denominator(float(v @ v))
        lam = float(np.sum(g * g) / (v @ v))
        r = lap + lam * v
        out = vol * float(np.mean(r * r))
        return out / (vol * float(np.mean(v * v))) if normalize else out
    raise InvalidArgumentError(f"unknown integration method {method!r}")


def _combined_forms(grid: SeparableGrid, weighted_forms: list[tuple[FormEvaluation, float]]):
    """Gradient of ``sum_k w_k * c^T F_k c`` for symmetric-use forms of one grid."""
    c = grid.coefficients
    dc = np.zeros_like(c)
    cots = []
    dF = np.outer(c, c)
    for form, w in weighted_forms:
        if w == 0.0:
            continue
        dc += w * ((form.matrix + form.matrix.T) @ c)
        f_cots, g_cots = form.field_cotangents(dF)
        cots.append(scale_cotangents(merge_cotangents(f_cots, g_cots), w))
    return dc, pullback_grid(grid, merge_cotangents(*cots))


def eig_loss_and_gradient(
    u: TnnModel,
    loss: str = "ritz",
    method: str = "gauss",
    *,
    rules: Sequence[QuadratureRule1D] | None = None,
    mc_samples: int = MC_SAMPLES,
    rng: np.random.Generator | None = None,
) -> InnerGradient:
    """Training loss (Rayleigh quotient or mass-normalised PINN loss) and its gradient."""
    if loss not in ("ritz", "pinn"):
        raise InvalidArgumentError(f"unknown eigenvalue loss {loss!r}")
    if method == "gauss":
        return _eig_gauss(u, loss, rules)
    if method == "monte_carlo":
        return _eig_mc(u, loss, _mc_points(u, mc_samples, rng))
    raise InvalidArgumentError(f"unknown integration method {method!r}")


def _eig_gauss(u, loss, rules) -> InnerGradient:
    grid = _gauss_grid(u, rules, 1 if loss == "ritz" else 2)
    Fm = FormEvaluation("mass", grid, grid)
    Fs = FormEvaluation("stiffness", grid, grid)
    M, S = Fm.value(), Fs.value()
    _check_denominator(M)
    lam = S / M
    if loss == "ritz":
        dc, dtheta = _combined_forms(grid, [(Fs, 1.0 / M), (Fm, -lam / M)])
        return InnerGradient(lam, dc, dtheta)
    Fl = FormEvaluation("laplacian", grid, grid)
    Fx = FormEvaluation("cross", grid, grid)
    Lp, X = Fl.value(), Fx.value()
    N = Lp + 2.0 * lam * X + lam * lam * M
    dN_dlam = 2.0 * X + 2.0 * lam * M
    # L = N / M, lambda = S / M
    weights = [
        (Fl, 1.0 / M),
        (Fx, 2.0 * lam / M),
        (Fs, dN_dlam / M**2),
        (Fm, lam * lam / M - dN_dlam * lam / M**2 - N / M**2),
    ]
    dc, dtheta = _combined_forms(grid, weights)
    return InnerGradient(max(N, 0.0) / M, dc, dtheta)


# points per PointEvaluation in the MC path; small blocks keep the jet arrays in cache
MC_CHUNK = 2048


def _eig_mc(u, loss, X) -> InnerGradient:
    n = X.shape[0]
    order = 1 if loss == "ritz" else 2
    blocks = [PointEvaluation(u, X[k : k + MC_CHUNK], order, check=False) for k in range(0, n, MC_CHUNK)]
    v = np.concatenate([pe.value() for pe in blocks])
    g = np.concatenate([pe.gradient() for pe in blocks])
    B = float(v @ v) / n
    _check_denominator(B)
    lam = float(np.sum(g * g)) / n / B
    dlam_dv = -2.0 * lam * v / (n * B)
    dlam_dg = 2.0 * g / (n * B)
    if loss == "ritz":
        dc, grads = _mc_pullback(blocks, dlam_dv, dlam_dg, None)
        return InnerGradient(lam, dc, grads)
    lap = np.concatenate([pe.laplacian() for pe in blocks])
    r = lap + lam * v
    N = float(r @ r) / n
    dL_dlam = 2.0 * float(r @ v) / n / B
    value_bar = 2.0 * lam * r / (n * B) - 2.0 * N * v / (n * B * B) + dL_dlam * dlam_dv
    dc, grads = _mc_pullback(blocks, value_bar, dL_dlam * dlam_dg, 2.0 * r / (n * B))
    return InnerGradient(N / B, dc, grads)


def _mc_pullback(blocks, value_bar, grad_bar, lap_bar):
    dc, grads, dnorms, k = 0.0, None, None, 0
    for pe in blocks:
        sl = slice(k, k + pe.X.shape[0])
        k = sl.stop
        dc_b, g_b, dn_b = pe.pullback(value_bar[sl], grad_bar[sl], None if lap_bar is None else lap_bar[sl], defer_norms=True)
        dc = dc + dc_b
        grads = g_b if grads is None else [a + b for a, b in zip(grads, g_b)]
        dnorms = dn_b if dnorms is None else [a + b for a, b in zip(dnorms, dn_b)]
    model = blocks[0].model
    return dc, [g + pullback_norms(model, i, dn) for i, (g, dn) in enumerate(zip(grads, dnorms))]


@dataclass
class Eig2dConfig:
    loss: str = "ritz"
    integration: str = "gauss"
    rank: int = 10
    hidden: tuple[int, ...] = (10, 10)
    activation: str = "sin"
    steps: int = 5000
    lr: float = 0.02
    # exponential decay from lr to lr_final over the run; None keeps lr constant
    lr_final: float | None = None
    quadrature: tuple[int, int] = EIG_QUADRATURE
    mc_samples: int = MC_SAMPLES
    eval_quadrature: tuple[int, int] = EIG_EVAL_QUADRATURE
    record_every: int = 100
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.quadrature = tuple(int(n) for n in self.quadrature)
        self.eval_quadrature = tuple(int(n) for n in self.eval_quadrature)
        if self.loss not in ("ritz", "pinn"):
            raise ValueError(f"loss must be 'ritz' or 'pinn', got {self.loss!r}")
        if self.integration not in ("gauss", "monte_carlo"):
            raise ValueError(f"integration must be 'gauss' or 'monte_carlo', got {self.integration!r}")
        if self.steps < 1 or self.record_every < 1 or self.rank < 1:
            raise ValueError("steps, record_every and rank must be positive")
        if not self.lr > 0 or (self.lr_final is not None and not self.lr_final > 0):
            raise ValueError("learning rates must be positive")

    def lr_at(self, step: int) -> float:
        """Adam learning rate for 1-based ``step``."""
        if self.lr_final is None or self.steps == 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** ((step - 1) / (self.steps - 1))


@dataclass
class SolveReport:
    config: dict
    loss_history: list[float] = field(default_factory=list)
    eigenvalue: float | None = None
    e_lambda: float | None = None
    e_lambda_trajectory: list[float] = field(default_factory=list)
    rmse: float | None = None
    l2_relative: float | None = None
    n_test: int = 0
    solve_paths: dict = field(default_factory=dict)
    channel_reinits: int = 0
    lbfgs_rejections: int = 0
    optimizer: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def eigenvalue_error(u: TnnModel, rules=None) -> tuple[float, float]:
    """Rayleigh quotient on an accurate tensor rule and its relative error to ``2 pi^2``."""
    if rules is None:
        rules = tensor_rules(u.domain, *EIG_EVAL_QUADRATURE)
    lam = rayleigh_quotient(u, "gauss", rules=rules)
    return lam, abs(lam - EIG_EXACT) / EIG_EXACT


def train_eig2d(config: Eig2dConfig) -> tuple[TnnModel, SolveReport]:
    """Train a boundary-factored TNN for the smallest Laplace eigenpair of the unit square.

    Coefficients and weights are all optimised by Adam. The relative eigenvalue
    error is recorded every ``record_every`` steps, always measured with the
    accurate ``eval_quadrature`` rule so the variants are compared on equal terms.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    rules = tensor_rules(UNIT_SQUARE, *config.quadrature)
    eval_rules = tensor_rules(UNIT_SQUARE, *config.eval_quadrature)
    u = init_tnn(
        UNIT_SQUARE,
        config.rank,
        config.hidden,
        activation=config.activation,
        boundary_factor=True,
        norm_quadrature=config.quadrature,
        rng=rng,
    )
    report = SolveReport(config=asdict(config))
    adam = AdamState(lr=config.lr)
    report.optimizer = {"adam": {"lr": adam.lr, "lr_final": config.lr_final, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}}
    p = u.rank
    params = np.concatenate([u.coefficients, u.theta()])
    for step in range(1, config.steps + 1):
        res = eig_loss_and_gradient(
            u, config.loss, config.integration, rules=rules, mc_samples=config.mc_samples, rng=rng
        )
        if not np.isfinite(res.value):
            report.aborted, report.abort_reason = True, f"non-finite loss at step {step}"
            break
        report.loss_history.append(res.value)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d loss %.6e", step, res.value)
        grad = np.concatenate([res.coefficients, flatten_gradients(res.theta)])
        adam.lr = config.lr_at(step)
        params = adam_step(adam, params, grad)
        u.set_coefficients(params[:p])
        theta, reinits = install_theta(u, params[p:], rng)
        params[p:] = theta
        report.channel_reinits += reinits
        if step % config.record_every == 0:
            report.e_lambda_trajectory.append(eigenvalue_error(u, eval_rules)[1])
    report.eigenvalue, report.e_lambda = eigenvalue_error(u, eval_rules)
    report.wall_time = time.perf_counter() - t0
    return u, report


# --- Poisson ---------------------------------------------------------------


@dataclass
class PoissonProblem:
    """``-Lap u = f`` with zero Dirichlet data; ``source`` tabulates ``f``."""

    domain: BoxDomain
    source: SeparableGrid
    exact_solution: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.source.dim != self.domain.dim:
            raise InvalidArgumentError("source grid dimension does not match the domain")
        for rule, iv in zip(self.source.rules, self.domain.intervals):
            if rule.interval != iv:
                raise InvalidArgumentError("source grid rules do not match the domain")


@dataclass
class PoissonConfig:
    rank: int = 20
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "sin"
    adam_steps: int = 5000
    adam_lr: float = 0.003
    lbfgs_steps: int = 200
    lbfgs_lr: float = 0.1
    lbfgs_memory: int = 10
    n_test: int = 50000
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.rank < 1 or self.n_test < 1:
            raise ValueError("rank and n_test must be positive")
        if self.adam_steps < 0 or self.lbfgs_steps < 0:
            raise ValueError("step counts must be non-negative")


def poisson_residual_loss(u: TnnModel, problem: PoissonProblem, grid: SeparableGrid | None = None) -> InnerGradient:
    """``||Lap u + f||^2`` at the model's current coefficients, with its gradient."""
    f = problem.source
    if grid is None:
        grid = grid_from_tnn(u, f.rules, 2)
    c, cf = u.coefficients, f.coefficients
    lap = FormEvaluation("laplacian", grid, grid)
    cross = FormEvaluation("cross", grid, f)
    mass_ff = FormEvaluation("mass", f, f).value()
    value = lap.value(c, c) + 2.0 * cross.value(c, cf) + mass_ff
    dc = (lap.matrix + lap.matrix.T) @ c + 2.0 * cross.matrix @ cf
    cots = merge_cotangents(*lap.field_cotangents(np.outer(c, c)))
    cots = merge_cotangents(cots, scale_cotangents(cross.field_cotangents(np.outer(c, cf))[0], 2.0))
    return InnerGradient(max(value, 0.0), dc, pullback_grid(grid, cots))


class _Projected:
    """Reduced Poisson loss ``min_c ||Lap u + f||^2`` as a function of the weights."""

    def __init__(self, u: TnnModel, problem: PoissonProblem, policy: RidgePolicy, rng, report: SolveReport):
        self.u, self.problem, self.policy, self.rng, self.report = u, problem, policy, rng, report
        f = problem.source
        self.mass_ff = FormEvaluation("mass", f, f).value()
        self.paths = Counter()

    def set_theta(self, theta):
        theta, reinits = install_theta(self.u, theta, self.rng)
        self.report.channel_reinits += reinits
        return theta

    def evaluate(self) -> tuple[float, np.ndarray]:
        u, f = self.u, self.problem.source
        grid = grid_from_tnn(u, f.rules, 2)
        lap = FormEvaluation("laplacian", grid, grid)
        cross = FormEvaluation("cross", grid, f)
        A = 0.5 * (lap.matrix + lap.matrix.T)
        b = cross.matrix @ f.coefficients
        sol = solve_spd(A, -b, self.policy)
        self.paths[sol.path] += 1
        c = sol.x
        u.set_coefficients(c)
        value = max(float(c @ A @ c + 2.0 * c @ b + self.mass_ff), 0.0)
        cots = merge_cotangents(*lap.field_cotangents(np.outer(c, c)))
        cots = merge_cotangents(cots, scale_cotangents(cross.field_cotangents(np.outer(c, f.coefficients))[0], 2.0))
        return value, flatten_gradients(pullback_grid(grid, cots))

    def loss_fn(self, theta):
        try:
            self.set_theta(theta)
        except NumericError:
            return float("inf"), np.full_like(theta, np.nan)
        return self.evaluate()


def solve_poisson(
    problem: PoissonProblem,
    config: PoissonConfig,
    policy: RidgePolicy = RidgePolicy(),
) -> tuple[TnnModel, SolveReport]:
    """Minimise ``||Lap u + f||^2`` over boundary-factored TNNs.

    Quadrature is the source grid's rules. Each step solves the coefficients
    from the normal equations ``F_lap c = -F_cross c_f`` and updates the
    weights (Adam, then L-BFGS on the reduced loss).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    rules = problem.source.rules
    n_sub, n_per = rules[0].n_sub, rules[0].n_per
    u = init_tnn(
        problem.domain,
        config.rank,
        config.hidden,
        activation=config.activation,
        boundary_factor=True,
        norm_quadrature=(n_sub, n_per),
        rng=rng,
    )
    report = SolveReport(config=asdict(config))
    adam = AdamState(lr=config.adam_lr)
    lbfgs = LbfgsState(lr=config.lbfgs_lr, memory=config.lbfgs_memory)
    report.optimizer = {
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "lbfgs": {"lr": lbfgs.lr, "memory": lbfgs.memory, "c1": lbfgs.c1},
        "ridge": asdict(policy),
    }
    obj = _Projected(u, problem, policy, rng, report)
    best_loss, best = np.inf, u.copy()
    n_total = config.adam_steps + config.lbfgs_steps
    try:
        theta = obj.set_theta(u.theta())
        loss, grad = obj.evaluate()
        for t in range(n_total + 1):
            report.loss_history.append(loss)
            if loss < best_loss:
                best_loss, best = loss, u.copy()
            if config.log_every and t % config.log_every == 0:
                log.info("step %d residual %.6e", t, loss)
            if t == n_total:
                break
            if t < config.adam_steps:
                theta = obj.set_theta(adam_step(adam, theta, grad))
            else:
                try:
                    res = lbfgs_step(lbfgs, theta, grad, obj.loss_fn, loss)
                    accepted = res.accepted
                except NumericError:
                    accepted = False
                if accepted:
                    theta = res.params
                else:
                    report.lbfgs_rejections += 1
                theta = obj.set_theta(theta)
            loss, grad = obj.evaluate()
    except SingularSystemError as err:
        report.aborted, report.abort_reason = True, str(err)
        log.error("solve aborted: %s", err)
    report.solve_paths = dict(sorted(obj.paths.items()))
    if problem.exact_solution is not None:
        test_rng = np.random.default_rng(config.seed + POISSON_TEST_SEED_OFFSET)
        report.rmse, report.l2_relative = evaluate_fit(best, problem.exact_solution, config.n_test, test_rng)
        report.n_test = config.n_test
    report.wall_time = time.perf_counter() - t0
    return best, report


# --- the exp(prod(1 - x_i^2)) example ----------------------------------------


def _poly(coeffs):
    p = np.polynomial.Polynomial(coeffs)
    return (p, p.deriv(1), p.deriv(2))


def bump_factor_grid(rules: Sequence[QuadratureRule1D]) -> SeparableGrid:
    """``h`` with ``-Lap(g - 1) = g h`` for ``g = exp(prod(1 - x_i^2))``, as a rank-``2d`` grid.

    ``h = sum_k [-4 x_k^2 prod_{i!=k} (1-x_i^2)^2 + 2 prod_{i!=k} (1-x_i^2)]``.
    """
    d = len(rules)
    sq = _poly([1.0, 0.0, -2.0, 0.0, 1.0])  # (1 - x^2)^2
    lin = _poly([1.0, 0.0, -1.0])
    quad = _poly([0.0, 0.0, -4.0])
    const = _poly([2.0])
    rows, coefs = [], []
    for k in range(d):
        rows.append([quad if i == k else sq for i in range(d)])
        rows.append([const if i == k else lin for i in range(d)])
        coefs += [1.0, 1.0]
    return grid_from_separable(d, coefs, rows, rules)


def exp_prod_exact(X: np.ndarray) -> np.ndarray:
    return np.exp(np.prod(1.0 - np.asarray(X) ** 2, axis=1))


def exp_prod_solution(X: np.ndarray) -> np.ndarray:
    return exp_prod_exact(X) - 1.0


def exp_prod_source(X: np.ndarray) -> np.ndarray:
    """Exact right-hand side ``-Lap u`` for ``u = exp(prod(1 - x_i^2)) - 1``."""
    X = np.asarray(X, dtype=float)
    q = 1.0 - X**2
    total = np.zeros(X.shape[0])
    for k in range(X.shape[1]):
        rest = np.prod(np.delete(q, k, axis=1), axis=1)
        total += -4.0 * X[:, k] ** 2 * rest**2 + 2.0 * rest
    return exp_prod_exact(X) * total


def exp_prod_taylor_grid(rules: Sequence[QuadratureRule1D], terms: int) -> SeparableGrid:
    """Truncated series ``sum_{n<terms} P^n / n!`` for ``P = prod(1 - x_i^2)`` (rank ``terms``)."""
    d = len(rules)
    rows, coefs = [], []
    for n in range(terms):
        p = np.polynomial.Polynomial([1.0, 0.0, -1.0]) ** n
        rows.append([(p, p.deriv(1), p.deriv(2))] * d)
        coefs.append(1.0 / math.factorial(n))
    return grid_from_separable(d, coefs, rows, rules)


def poisson_problem_from_grid(g_grid: SeparableGrid, domain: BoxDomain) -> PoissonProblem:
    """Problem with source ``g h`` where ``g_grid`` approximates ``exp(prod(1 - x_i^2))``."""
    source = grid_product(g_grid, bump_factor_grid(g_grid.rules))
    return PoissonProblem(domain, source, exact_prod_solution_for(domain))


def exact_prod_solution_for(domain: BoxDomain):
    if not (np.allclose(domain.lows, -1.0) and np.allclose(domain.highs, 1.0)):
        return None
    return exp_prod_solution


def poisson_problem_from_model(g_model: TnnModel, n_sub: int = 100, n_per: int = 16) -> PoissonProblem:
    """Poisson problem whose source uses an interpolated ``g`` (values only, no gradient flows back)."""
    rules = tensor_rules(g_model.domain, n_sub, n_per)
    g_grid = grid_from_tnn(g_model, rules, 0)
    g_grid.source = None
    return poisson_problem_from_grid(g_grid, g_model.domain)
