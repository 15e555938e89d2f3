"""TNN interpolation: fit a tensor neural network to a black-box target.

Parameters split into the linear coefficients ``c`` and the subnetwork
weights ``theta``. On every inner step the coefficients are the exact
least-squares solution on the current batch, then ``theta`` takes one
optimizer step on the batch loss with ``c`` held at that solution. Because
``c`` is optimal, that gradient is also the gradient of the reduced loss
``min_c L(c, theta)``, which is what the L-BFGS line search evaluates.

Two optimizer schedules are available. ``per_batch`` (default) runs
``adam_steps`` Adam steps then ``lbfgs_steps`` L-BFGS steps on every batch.
``global`` spreads ``adam_steps + lbfgs_steps`` steps over all batches
(``steps_per_batch`` each) and switches to L-BFGS once ``adam_steps`` steps
have been taken in total.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateTargetError, NumericError, SingularSystemError
from .linalg import RidgePolicy, solve_spd
from .model import PointEvaluation, TnnModel, flatten_gradients, init_tnn, install_theta, tnn_eval
from .optim import AdamState, LbfgsState, adam_step, lbfgs_step
from .quad import BoxDomain, sample_uniform

log = logging.getLogger(__name__)

Target = Callable[[np.ndarray], np.ndarray]

TEST_SEED_OFFSET = 7919


@dataclass
class InterpConfig:
    outer_iterations: int = 20
    batch_size: int = 8000
    adam_steps: int = 50000
    adam_lr: float = 0.003
    lbfgs_steps: int = 200
    lbfgs_lr: float = 0.1
    lbfgs_memory: int = 10
    rank: int = 50
    hidden: tuple[int, ...] = (50, 50)
    activation: str = "sin"
    norm_quadrature: tuple[int, int] = (16, 16)
    validation_size: int = 2000
    n_test: int = 10000
    seed: int = 0
    log_every: int = 0
    schedule: str = "per_batch"
    # global schedule only; defaults to an even split of the total over the batches
    steps_per_batch: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.norm_quadrature = tuple(int(n) for n in self.norm_quadrature)
        for name in ("outer_iterations", "batch_size", "rank", "validation_size", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.adam_steps < 0 or self.lbfgs_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.schedule not in ("per_batch", "global"):
            raise ValueError(f"schedule must be 'per_batch' or 'global', got {self.schedule!r}")
        if self.steps_per_batch is not None and self.steps_per_batch < 1:
            raise ValueError("steps_per_batch must be >= 1")
        if self.inner_steps < 1:
            raise ValueError("need at least one optimisation step per batch")

    @property
    def inner_steps(self) -> int:
        """Optimizer steps taken on each batch."""
        total = self.adam_steps + self.lbfgs_steps
        if self.schedule == "per_batch":
            return total
        if self.steps_per_batch is not None:
            return self.steps_per_batch
        return -(-total // self.outer_iterations)

    def uses_adam(self, t: int, global_step: int) -> bool:
        if self.schedule == "per_batch":
            return t < self.adam_steps
        return global_step < self.adam_steps

    @property
    def total_steps(self) -> int:
        if self.schedule == "per_batch":
            return self.outer_iterations * self.inner_steps
        return min(self.adam_steps + self.lbfgs_steps, self.outer_iterations * self.inner_steps)


@dataclass
class FitReport:
    config: dict
    loss_history: list[float] = field(default_factory=list)
    validation_history: list[float] = field(default_factory=list)
    rmse: float | None = None
    l2_relative: float | None = None
    n_test: int = 0
    best_outer_iteration: int = -1
    solve_paths: dict = field(default_factory=dict)
    monotone_violations: int = 0
    channel_reinits: int = 0
    lbfgs_rejections: int = 0
    optimizer: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def sample_batch(domain: BoxDomain, K: int, rng: np.random.Generator) -> np.ndarray:
    return sample_uniform(domain, K, rng)


def assemble_system(model: TnnModel, batch: np.ndarray, target_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normal equations ``A = G^T G``, ``B = G^T y`` for the design matrix of basis products."""
    G = PointEvaluation(model, batch).basis
    y = _finite_targets(target_values)
    return _normal_equations(G, y)


def _normal_equations(G, y):
    bad = np.flatnonzero(~np.isfinite(G).all(axis=1))
    if bad.size:
        raise NumericError("non-finite basis value", location=int(bad[0]))
    A = G.T @ G
    A = 0.5 * (A + A.T)
    return A, G.T @ y


def _finite_targets(values) -> np.ndarray:
    y = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise NumericError("non-finite target value", location=int(bad[0]))
    return y


def squared_loss(model: TnnModel, batch: np.ndarray, target_values: np.ndarray) -> float:
    r = tnn_eval(model, np.atleast_2d(batch)) - np.asarray(target_values, dtype=float)
    return float(r @ r)


def evaluate_fit(model: TnnModel, target: Target, n_test: int, rng: np.random.Generator) -> tuple[float, float]:
    """RMSE and l2-relative error on ``n_test`` uniform points."""
    Z = sample_uniform(model.domain, n_test, rng)
    g = np.asarray(target(Z), dtype=float)
    err = g - tnn_eval(model, Z)
    denom = float(g @ g)
    if denom == 0.0:
        raise DegenerateTargetError("target vanishes on every test point; relative error undefined")
    return float(np.sqrt(err @ err / n_test)), float(np.sqrt(err @ err / denom))


class _Batch:
    """Variable-projection objective on a fixed batch."""

    def __init__(self, model: TnnModel, X: np.ndarray, y: np.ndarray, policy: RidgePolicy, rng, report: FitReport):
        self.model, self.X, self.y = model, X, y
        self.policy, self.rng, self.report = policy, rng, report
        self.paths = Counter()

    def set_theta(self, theta: np.ndarray) -> np.ndarray:
        theta, reinits = install_theta(self.model, theta, self.rng)
        self.report.channel_reinits += reinits
        return theta

    def evaluate(self, check_monotone: bool = False) -> tuple[float, np.ndarray]:
        model = self.model
        pe = PointEvaluation(model, self.X, 0, check=False)
        G = pe.basis
        A, B = _normal_equations(G, self.y)
        sol = solve_spd(A, B, self.policy)
        self.paths[sol.path] += 1
        r = G @ sol.x - self.y
        loss = float(r @ r)
        if check_monotone:
            r_prev = G @ model.coefficients - self.y
            prev = float(r_prev @ r_prev)
            if loss > prev * (1.0 + 1e-10) + 1e-14 * float(self.y @ self.y):
                self.report.monotone_violations += 1
                log.warning("coefficient solve increased the batch loss: %.6e -> %.6e", prev, loss)
        model.set_coefficients(sol.x)
        _, grads = pe.pullback(value_bar=2.0 * r)
        return loss, flatten_gradients(grads)

    def loss_fn(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            self.set_theta(theta)
        except NumericError:
            return float("inf"), np.full_like(theta, np.nan)
        return self.evaluate()


def train_interpolation(
    target: Target,
    domain: BoxDomain,
    config: InterpConfig,
    model: TnnModel | None = None,
    policy: RidgePolicy = RidgePolicy(),
) -> tuple[TnnModel, FitReport]:
    """Fit a TNN to ``target`` on ``domain``; returns the best model by validation error.

    ``target`` maps an ``(n, d)`` array of points to ``n`` values. A model may be
    passed in to warm-start; otherwise one is initialised from ``config.seed``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = init_tnn(
            domain,
            config.rank,
            config.hidden,
            activation=config.activation,
            norm_quadrature=config.norm_quadrature,
            rng=rng,
        )
    report = FitReport(config=asdict(config))
    adam = AdamState(lr=config.adam_lr)
    report.optimizer = {
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "lbfgs": {"lr": config.lbfgs_lr, "memory": config.lbfgs_memory, "c1": LbfgsState.c1},
        "ridge": asdict(policy),
    }
    best_err, best = np.inf, model.copy()
    paths = Counter()
    step = 0
    try:
        for outer in range(config.outer_iterations):
            X = sample_batch(domain, config.batch_size, rng)
            batch = _Batch(model, X, _finite_targets(target(X)), policy, rng, report)
            lbfgs = LbfgsState(lr=config.lbfgs_lr, memory=config.lbfgs_memory)
            theta = batch.set_theta(model.theta())
            loss, grad = batch.evaluate(check_monotone=True)
            n_inner = min(config.inner_steps, config.total_steps - step)
            for t in range(n_inner):
                report.loss_history.append(loss)
                if config.log_every and step % config.log_every == 0:
                    log.info("outer %d step %d loss %.6e", outer, t, loss)
                use_adam = config.uses_adam(t, step)
                step += 1
                if use_adam:
                    theta = batch.set_theta(adam_step(adam, theta, grad))
                else:
                    try:
                        res = lbfgs_step(lbfgs, theta, grad, batch.loss_fn, loss)
                        accepted = res.accepted
                    except NumericError:
                        accepted = False
                    if not accepted:
                        report.lbfgs_rejections += 1
                    else:
                        theta = res.params
                    theta = batch.set_theta(theta)
                if t + 1 < n_inner:
                    loss, grad = batch.evaluate(check_monotone=True)
                else:
                    # final coefficient solve for this batch
                    batch.evaluate(check_monotone=True)
            paths.update(batch.paths)
            Xv = sample_batch(domain, config.validation_size, rng)
            yv = np.asarray(target(Xv), dtype=float)
            ev = tnn_eval(model, Xv) - yv
            val = float(np.sqrt(ev @ ev / max(yv @ yv, 1e-300)))
            report.validation_history.append(val)
            log.info("outer iteration %d: validation l2-relative error %.3e", outer, val)
            if val < best_err:
                best_err, best = val, model.copy()
                report.best_outer_iteration = outer
    except SingularSystemError as err:
        report.aborted = True
        report.abort_reason = str(err)
        log.error("training aborted: %s", err)
    report.solve_paths = dict(sorted(paths.items()))
    if report.best_outer_iteration < 0:
        best = model.copy()
    test_rng = np.random.default_rng(config.seed + TEST_SEED_OFFSET)
    report.rmse, report.l2_relative = evaluate_fit(best, target, config.n_test, test_rng)
    report.n_test = config.n_test
    report.wall_time = time.perf_counter() - t0
    return best, report
