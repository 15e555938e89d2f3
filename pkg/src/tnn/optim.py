"""Adam and L-BFGS over flat parameter vectors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidArgumentError, NumericError

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns new parameters and advances ``state``.

    A non-finite gradient raises before the state is touched.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient", location=int(np.flatnonzero(~np.isfinite(grad))[0]))
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise InvalidArgumentError("Adam state does not match the parameter shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class LbfgsState:
    lr: float = 1.0
    memory: int = 10
    c1: float = 1e-4
    max_halvings: int = 30
    history: deque = field(default_factory=deque)
    rejected: int = 0


class LbfgsResult(NamedTuple):
    params: np.ndarray
    loss: float
    grad: np.ndarray
    accepted: bool
    step: float


def _two_loop(history, grad: np.ndarray) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_step(
    state: LbfgsState,
    params: np.ndarray,
    grad: np.ndarray,
    loss_fn: LossFn,
    loss: float | None = None,
) -> LbfgsResult:
    """Quasi-Newton step with Armijo backtracking from ``state.lr``.

    With an empty history the direction is ``-grad``. If no trial step
    decreases the loss enough, the parameters are returned unchanged and the
    history is cleared.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if loss is None:
        loss, _ = loss_fn(params)
    direction = _two_loop(state.history, grad)
    slope = float(grad @ direction)
    if not slope < 0.0:
        state.history.clear()
        direction = -grad
        slope = -float(grad @ grad)
    if slope == 0.0:
        return LbfgsResult(params, loss, grad, False, 0.0)
    alpha = state.lr
    for _ in range(state.max_halvings + 1):
        trial = params + alpha * direction
        new_loss, new_grad = loss_fn(trial)
        if not np.isfinite(new_loss):
            state.history.clear()
            state.rejected += 1
            raise NumericError("non-finite loss during line search")
        if new_loss <= loss + state.c1 * alpha * slope:
            s = trial - params
            y = new_grad - grad
            sy = float(s @ y)
            if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                state.history.append((s, y, 1.0 / sy))
                while len(state.history) > state.memory:
                    state.history.popleft()
            return LbfgsResult(trial, float(new_loss), new_grad, True, alpha)
        alpha *= 0.5
    state.history.clear()
    state.rejected += 1
    return LbfgsResult(params, loss, grad, False, 0.0)
