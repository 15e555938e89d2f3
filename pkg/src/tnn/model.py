"""The tensor neural network model and its per-dimension factor evaluation.

``Psi(x) = sum_j c_j prod_i phi_hat_{i,j}(x_i)`` where ``phi_hat_{i,j}`` is output
channel ``j`` of subnetwork ``i`` divided by its L2 norm on the i-th interval
(norms are computed with the model's normalisation rules), optionally times the
boundary factor ``(x_i - a_i)(b_i - x_i)``.

Everything that turns raw subnetwork jets into the *factors* of the product
(normalisation, boundary factor) and back again lives here, so grids and
pointwise evaluations share one adjoint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateChannelError, DomainError, InvalidArgumentError, NumericError
from .quad import BoxDomain, QuadratureRule1D, tensor_rules
from .subnet import (
    Jet2,
    NormalizationState,
    ParamGradient,
    SubNetwork,
    backward,
    boundary_factor_jet,
    compute_norms,
    forward_with_tape,
    init_subnetwork,
    reinit_channel,
)

log = logging.getLogger(__name__)

DEFAULT_NORM_QUADRATURE = (16, 16)


@dataclass
class TnnModel:
    domain: BoxDomain
    subnets: list[SubNetwork]
    coefficients: np.ndarray
    norm_rules: list[QuadratureRule1D]
    boundary_factor: bool = False
    norm_states: list[NormalizationState] = field(default=None, repr=False)
    # bumped whenever subnetwork weights change; grids record it to detect staleness
    version: int = 0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).copy()
        p = self.coefficients.shape[0]
        if len(self.subnets) != self.domain.dim or len(self.norm_rules) != self.domain.dim:
            raise InvalidArgumentError("need one subnetwork and one normalisation rule per dimension")
        if any(net.output_dim != p for net in self.subnets):
            raise InvalidArgumentError("every subnetwork must have as many outputs as there are coefficients")
        for iv, rule in zip(self.domain.intervals, self.norm_rules):
            if rule.interval != iv:
                raise InvalidArgumentError("normalisation rule does not cover its interval")
        if self.norm_states is None:
            self.refresh_norms()

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def rank(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_theta(self) -> int:
        return sum(net.n_params for net in self.subnets)

    def refresh_norms(self):
        states = []
        for i, (net, rule) in enumerate(zip(self.subnets, self.norm_rules)):
            try:
                states.append(compute_norms(net, rule))
            except DegenerateChannelError as err:
                err.dim = i
                raise
        self.norm_states = states

    def theta(self) -> np.ndarray:
        return np.concatenate([net.flat() for net in self.subnets])

    def set_theta(self, theta: np.ndarray):
        """Replace all subnetwork parameters and refresh the norms."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_theta,):
            raise InvalidArgumentError(f"expected {self.n_theta} parameters, got {theta.shape}")
        subnets, pos = [], 0
        for net in self.subnets:
            subnets.append(net.with_flat(theta[pos : pos + net.n_params]))
            pos += net.n_params
        old = self.subnets
        self.subnets = subnets
        try:
            self.refresh_norms()
        except Exception:
            self.subnets = old
            raise
        self.version += 1

    def set_subnet(self, i: int, net: SubNetwork):
        self.subnets[i] = net
        self.norm_states[i] = compute_norms(net, self.norm_rules[i])
        self.version += 1

    def set_coefficients(self, c: np.ndarray):
        c = np.asarray(c, dtype=float)
        if c.shape != self.coefficients.shape:
            raise InvalidArgumentError(f"expected {self.rank} coefficients, got {c.shape}")
        self.coefficients = c.copy()

    def copy(self) -> "TnnModel":
        return TnnModel(
            self.domain,
            [net.copy() for net in self.subnets],
            self.coefficients.copy(),
            list(self.norm_rules),
            self.boundary_factor,
            list(self.norm_states),
            self.version,
        )


def init_tnn(
    domain: BoxDomain,
    rank: int,
    hidden: Sequence[int] = (50, 50),
    *,
    activation: str = "sin",
    boundary_factor: bool = False,
    norm_quadrature: tuple[int, int] = DEFAULT_NORM_QUADRATURE,
    rng: np.random.Generator | None = None,
    coefficients: np.ndarray | None = None,
    first_bias_range: float = math.pi,
) -> TnnModel:
    """Fresh model with Glorot subnetworks.

    First-layer biases are then redrawn uniformly from
    ``[-first_bias_range, first_bias_range]``: with all biases zero a sine
    network is an odd function, and on an interval symmetric about 0 the
    whole model would stay odd in every variable throughout training.
    """
    rng = np.random.default_rng() if rng is None else rng
    sizes = [1, *hidden, rank]
    subnets = []
    for _ in range(domain.dim):
        net = init_subnetwork(sizes, activation, rng)
        if first_bias_range and len(sizes) > 2:
            net.biases[0][:] = rng.uniform(-first_bias_range, first_bias_range, size=net.biases[0].shape)
        subnets.append(net)
    c = np.ones(rank) if coefficients is None else coefficients
    return TnnModel(domain, subnets, c, tensor_rules(domain, *norm_quadrature), boundary_factor)


def install_theta(model: TnnModel, theta: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """``model.set_theta`` that redraws any channel whose norm collapses.

    Returns the parameters actually installed and the number of redrawn channels.
    """
    theta = np.array(theta, dtype=float)
    reinits = 0
    for _ in range(10 * model.rank * model.dim + 1):
        try:
            model.set_theta(theta)
            return theta, reinits
        except DegenerateChannelError as err:
            i = err.dim
            lo = sum(net.n_params for net in model.subnets[:i])
            net = model.subnets[i]
            fresh = reinit_channel(net.with_flat(theta[lo : lo + net.n_params]), err.channel, rng)
            theta[lo : lo + net.n_params] = fresh.flat()
            reinits += 1
            log.info("re-initialised channel %d of dimension %d", err.channel, i)
    raise NumericError("could not recover from degenerate channels")


class FactorEval(NamedTuple):
    """Factors of dimension ``i`` at points ``xs``: arrays of shape ``(n, p)``."""

    dim: int
    xs: np.ndarray
    factors: Jet2
    raw: Jet2
    bf: Jet2 | None
    tape: object


def eval_factors(model: TnnModel, i: int, xs: np.ndarray, order: int) -> FactorEval:
    xs = np.asarray(xs, dtype=float)
    raw, tape = forward_with_tape(model.subnets[i], xs, order)
    inv = 1.0 / model.norm_states[i].norms
    r0 = raw.value * inv
    r1 = raw.d1 * inv if order >= 1 else None
    r2 = raw.d2 * inv if order >= 2 else None
    bf = None
    if model.boundary_factor:
        bf = boundary_factor_jet(model.domain.intervals[i], xs)
        b0, b1, b2 = (a[:, None] for a in bf)
        e0 = b0 * r0
        e1 = b1 * r0 + b0 * r1 if order >= 1 else None
        e2 = b2 * r0 + 2.0 * b1 * r1 + b0 * r2 if order >= 2 else None
    else:
        e0, e1, e2 = r0, r1, r2
    return FactorEval(i, xs, Jet2(e0, e1, e2), raw, bf, tape)


def pullback_factors(model: TnnModel, ev: FactorEval, cot: Jet2) -> ParamGradient:
    """Map cotangents on the factors of ``ev`` to a gradient of subnetwork ``ev.dim``.

    The chain runs through the boundary factor and through the channel norms,
    which are themselves functions of the weights.
    """
    grad, dnorm = pullback_points(model, ev, cot)
    return grad + pullback_norms(model, ev.dim, dnorm)


def pullback_points(model: TnnModel, ev: FactorEval, cot: Jet2) -> tuple[ParamGradient, np.ndarray]:
    """Point part of :func:`pullback_factors`; also returns the cotangent on the channel norms."""
    i = ev.dim
    norms = model.norm_states[i].norms
    e0, e1, e2 = (None if c is None else np.asarray(c, dtype=float) for c in (list(cot) + [None] * 3)[:3])
    if ev.bf is not None:
        b0, b1, b2 = (a[:, None] for a in ev.bf)
        h0 = (e0 * b0 if e0 is not None else 0.0) + (e1 * b1 if e1 is not None else 0.0) + (e2 * b2 if e2 is not None else 0.0)
        h1 = None
        if e1 is not None or e2 is not None:
            h1 = (e1 * b0 if e1 is not None else 0.0) + (2.0 * e2 * b1 if e2 is not None else 0.0)
        h2 = e2 * b0 if e2 is not None else None
    else:
        h0, h1, h2 = e0, e1, e2
    if h0 is None or np.isscalar(h0):
        h0 = np.zeros_like(ev.raw.value)
    inv = 1.0 / norms
    # d(factor)/d(norm) = -normalised raw / norm
    dnorm = -np.einsum("nj,nj->j", h0, ev.raw.value)
    if h1 is not None:
        dnorm -= np.einsum("nj,nj->j", h1, ev.raw.d1)
    if h2 is not None:
        dnorm -= np.einsum("nj,nj->j", h2, ev.raw.d2)
    dnorm *= inv * inv
    grad = backward(
        model.subnets[i],
        ev.xs,
        Jet2(h0 * inv, None if h1 is None else h1 * inv, None if h2 is None else h2 * inv),
        ev.tape,
    )
    return grad, dnorm


def pullback_norms(model: TnnModel, i: int, dnorm: np.ndarray) -> ParamGradient:
    """Gradient of subnetwork ``i`` from a cotangent on its channel norms."""
    state = model.norm_states[i]
    # norm_j^2 = sum_q w_q phi_j(y_q)^2
    node_cot = state.rule.weights[:, None] * state.node_values * (dnorm / state.norms)[None, :]
    return backward(model.subnets[i], state.rule.nodes, Jet2(node_cot))


def _check_points(model: TnnModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise InvalidArgumentError(f"points must have {model.dim} coordinates, got shape {X.shape}")
    inside = model.domain.contains(X)
    if not inside.all():
        k = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"point {k} {X[k].tolist()} lies outside the model domain")
    return X


def _leave_one_out(arrs: list[np.ndarray]) -> list[np.ndarray]:
    d = len(arrs)
    prefix = [np.ones_like(arrs[0])]
    for a in arrs[:-1]:
        prefix.append(prefix[-1] * a)
    out = [None] * d
    suffix = np.ones_like(arrs[0])
    for i in range(d - 1, -1, -1):
        out[i] = prefix[i] * suffix
        suffix = suffix * arrs[i]
    return out


class PointEvaluation:
    """Model value, gradient and Laplacian at a batch of points, with an adjoint."""

    def __init__(self, model: TnnModel, X: np.ndarray, order: int = 0, check: bool = True):
        self.model = model
        self.X = _check_points(model, X) if check else np.asarray(X, dtype=float)
        self.order = order
        self.evals = [eval_factors(model, i, self.X[:, i], order) for i in range(model.dim)]
        self._e0 = [ev.factors.value for ev in self.evals]
        self._loo = _leave_one_out(self._e0)
        self.basis = self._loo[0] * self._e0[0]  # (n, p): prod_i factor_i

    def value(self) -> np.ndarray:
        return self.basis @ self.model.coefficients

    def gradient(self) -> np.ndarray:
        c = self.model.coefficients
        return np.stack([(ev.factors.d1 * loo) @ c for ev, loo in zip(self.evals, self._loo)], axis=1)

    def laplacian(self) -> np.ndarray:
        c = self.model.coefficients
        return sum((ev.factors.d2 * loo) @ c for ev, loo in zip(self.evals, self._loo))

    def pullback(self, value_bar=None, grad_bar=None, lap_bar=None, defer_norms=False):
        """Gradient w.r.t. (coefficients, subnetwork weights) of
        ``sum(value_bar*Psi + grad_bar . grad Psi + lap_bar*Lap Psi)``.

        With ``defer_norms`` the channel-norm contribution is left out and the
        norm cotangents are returned as a third item, so callers that split a
        batch can apply :func:`pullback_norms` once.
        """
        c = self.model.coefficients
        d = self.model.dim
        n, p = self.basis.shape
        # Z_k = grad_bar_k * factor'_k + lap_bar * factor''_k  (per point, channel)
        Z = [None] * d
        for k, ev in enumerate(self.evals):
            z = None
            if grad_bar is not None:
                z = grad_bar[:, k, None] * ev.factors.d1
            if lap_bar is not None:
                t = lap_bar[:, None] * ev.factors.d2
                z = t if z is None else z + t
            Z[k] = z
        has_z = any(z is not None for z in Z)

        dc = np.zeros(p)
        if value_bar is not None:
            dc += value_bar @ self.basis
        if has_z:
            for k in range(d):
                if Z[k] is not None:
                    dc += np.einsum("nj,nj->j", Z[k], self._loo[k])

        grads = []
        for m, ev in enumerate(self.evals):
            d0 = np.zeros((n, p)) if value_bar is None else value_bar[:, None] * self._loo[m]
            if has_z:
                # sum_{k != m} Z_k * prod_{i != k, m} factor_i
                A = np.ones((n, p))
                B = np.zeros((n, p))
                for i in range(d):
                    if i == m:
                        continue
                    if Z[i] is not None:
                        B = B * self._e0[i] + A * Z[i]
                    else:
                        B = B * self._e0[i]
                    A = A * self._e0[i]
                d0 = d0 + B
            d1 = grad_bar[:, m, None] * self._loo[m] if grad_bar is not None else None
            d2 = lap_bar[:, None] * self._loo[m] if lap_bar is not None else None
            cot = Jet2(d0 * c, None if d1 is None else d1 * c, None if d2 is None else d2 * c)
            grads.append(pullback_points(self.model, ev, cot))
        if defer_norms:
            return dc, [g for g, _ in grads], [dn for _, dn in grads]
        return dc, [g + pullback_norms(self.model, m, dn) for m, (g, dn) in enumerate(grads)]


def tnn_eval(model: TnnModel, x) -> float | np.ndarray:
    """Evaluate the model at one point ``(d,)`` or a batch ``(n, d)``."""
    x_arr = np.asarray(x, dtype=float)
    X = _check_points(model, x_arr)
    vals = np.ones((X.shape[0], model.rank))
    for i in range(model.dim):
        vals *= eval_factors(model, i, X[:, i], 0).factors.value
    out = vals @ model.coefficients
    return float(out[0]) if x_arr.ndim == 1 else out


def flatten_gradients(grads: list[ParamGradient]) -> np.ndarray:
    return np.concatenate([g.flat() for g in grads])


def default_rules(model: TnnModel, n_sub: int | None = None, n_per: int | None = None) -> list[QuadratureRule1D]:
    if n_sub is None:
        return list(model.norm_rules)
    return tensor_rules(model.domain, n_sub, n_per)
