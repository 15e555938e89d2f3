"""Scalar-input multilayer perceptrons with second-order forward jets.

A subnetwork maps one coordinate ``x`` to ``p`` output channels. Besides the
plain forward pass we propagate *jets* ``(value, d/dx, d^2/dx^2)`` through the
layers (forward mode is cheap because the input is a scalar), and the reverse
sweep differentiates that jet recurrence with respect to the weights, so
losses that touch first or second derivatives at quadrature nodes can be
trained.

All functions here are vectorised over a batch of points ``xs`` of shape
``(n,)``; channel arrays have shape ``(n, p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateChannelError, InvalidArgumentError, NumericError
from .quad import Interval, QuadratureRule1D

try:  # vectorised trig from torch is ~10x faster than numpy's on this hardware
    import torch as _torch

    _torch.set_num_threads(1)

    def _sin(u: np.ndarray) -> np.ndarray:
        return _torch.sin(_torch.from_numpy(np.ascontiguousarray(u))).numpy()

    def _cos(u: np.ndarray) -> np.ndarray:
        return _torch.cos(_torch.from_numpy(np.ascontiguousarray(u))).numpy()

    def _tanh(u: np.ndarray) -> np.ndarray:
        return _torch.tanh(_torch.from_numpy(np.ascontiguousarray(u))).numpy()

except ImportError:  # pragma: no cover - exercised only without torch
    _sin, _cos, _tanh = np.sin, np.cos, np.tanh


class Activation(NamedTuple):
    """An activation together with a function returning its first derivatives.

    ``derivatives(u, k)`` returns ``[sigma(u), sigma'(u), ..., sigma^(k)(u)]``.
    The reverse sweep through second-order jets needs ``k = 3``.
    """

    name: str
    derivatives: Callable[[np.ndarray, int], list]


def _sin_derivatives(u, k):
    s = _sin(u)
    if k == 0:
        return [s]
    c = _cos(u)
    out = [s, c]
    if k >= 2:
        out.append(-s)
    if k >= 3:
        out.append(-c)
    return out


def _tanh_derivatives(u, k):
    t = _tanh(u)
    out = [t]
    if k >= 1:
        s = 1.0 - t * t
        out.append(s)
    if k >= 2:
        out.append(-2.0 * t * s)
    if k >= 3:
        out.append(s * (6.0 * t * t - 2.0))
    return out


def _identity_derivatives(u, k):
    out = [u, np.ones_like(u), np.zeros_like(u), np.zeros_like(u)]
    return out[: k + 1]


ACTIVATIONS = {
    "sin": Activation("sin", _sin_derivatives),
    "tanh": Activation("tanh", _tanh_derivatives),
    "identity": Activation("identity", _identity_derivatives),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


class Jet2(NamedTuple):
    """Value and first/second derivatives; ``d1``/``d2`` may be ``None`` (treated as zero)."""

    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


@dataclass
class SubNetwork:
    """Weights ``W_l`` have shape ``(out, in)``; hidden layers use the activation, the last is affine."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "sin"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidArgumentError("need one bias vector per weight matrix")
        if self.weights[0].shape[1] != 1:
            raise InvalidArgumentError("first layer must take a scalar input")
        for W, b, W_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InvalidArgumentError("inconsistent layer shapes")
            if W_next is not None and W_next.shape[1] != W.shape[0]:
                raise InvalidArgumentError("inconsistent layer shapes")
        get_activation(self.activation)

    @property
    def layer_sizes(self) -> list[int]:
        return [1] + [W.shape[0] for W in self.weights]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def with_flat(self, theta: np.ndarray) -> "SubNetwork":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(theta[pos : pos + W.size].reshape(W.shape).copy())
            pos += W.size
            biases.append(theta[pos : pos + b.size].copy())
            pos += b.size
        return SubNetwork(weights, biases, self.activation)

    def copy(self) -> "SubNetwork":
        return SubNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)


@dataclass
class ParamGradient:
    """Gradient with the same layout as a :class:`SubNetwork`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: SubNetwork) -> "ParamGradient":
        return cls([np.zeros_like(W) for W in net.weights], [np.zeros_like(b) for b in net.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass
class NormalizationState:
    norms: np.ndarray
    rule: QuadratureRule1D
    # raw channel values at the rule's nodes, shape (N, p); used by the reverse sweep
    node_values: np.ndarray = field(repr=False, default=None)


def init_subnetwork(
    layer_sizes: Sequence[int], activation: str = "sin", rng: np.random.Generator | None = None
) -> SubNetwork:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or sizes[0] != 1 or any(s < 1 for s in sizes) or any(s != t for s, t in zip(sizes, layer_sizes)):
        raise InvalidArgumentError(f"layer sizes must be [1, h1, ..., p] with positive entries, got {layer_sizes!r}")
    rng = np.random.default_rng() if rng is None else rng
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return SubNetwork(weights, biases, activation)


def reinit_channel(net: SubNetwork, channel: int, rng: np.random.Generator) -> SubNetwork:
    """Redraw the output row of ``channel`` from the initialisation distribution."""
    out = net.copy()
    W = out.weights[-1]
    bound = math.sqrt(6.0 / (W.shape[1] + W.shape[0]))
    W[channel] = rng.uniform(-bound, bound, size=W.shape[1])
    out.biases[-1][channel] = 0.0
    return out


class _Tape(NamedTuple):
    inputs: list  # per layer: input jets (h0, h1, h2)
    pre: list  # per hidden layer: (u1, u2)
    sigma: list  # per hidden layer: [sigma, sigma', ...]
    order: int


def _forward_tape(net: SubNetwork, xs: np.ndarray, order: int, for_backward: bool) -> tuple[Jet2, _Tape]:
    if order not in (0, 1, 2):
        raise InvalidArgumentError(f"jet order must be 0, 1 or 2, got {order!r}")
    act = get_activation(net.activation)
    n = xs.shape[0]
    h0 = xs[:, None]
    h1 = np.ones((n, 1)) if order >= 1 else None
    h2 = None
    inputs, pre, sig = [], [], []
    n_hidden = len(net.weights) - 1
    for layer, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append((h0, h1, h2))
        u0 = h0 @ W.T + b
        u1 = h1 @ W.T if h1 is not None else None
        u2 = h2 @ W.T if h2 is not None else None
        if layer == n_hidden:
            h0, h1, h2 = u0, u1, u2
            break
        s = act.derivatives(u0, order + 1 if for_backward else order)
        pre.append((u1, u2))
        sig.append(s)
        h0 = s[0]
        h1 = s[1] * u1 if u1 is not None else None
        if order >= 2:
            h2 = s[2] * (u1 * u1)
            if u2 is not None:
                h2 += s[1] * u2
    if not np.all(np.isfinite(h0)):
        raise NumericError("non-finite subnetwork output", location=int(np.flatnonzero(~np.isfinite(h0).all(axis=1))[0]))
    return Jet2(h0, h1, h2), _Tape(inputs, pre, sig, order)


def forward(net: SubNetwork, x) -> np.ndarray:
    """Channel values at ``x``; scalar ``x`` gives shape ``(p,)``, an array gives ``(n, p)``."""
    xs = np.asarray(x, dtype=float)
    jet, _ = _forward_tape(net, np.atleast_1d(xs), 0, for_backward=False)
    return jet.value[0] if xs.ndim == 0 else jet.value


def forward_jet(net: SubNetwork, x, order: int = 2) -> Jet2:
    """Values and exact first/second x-derivatives (up to ``order``) of every channel."""
    xs = np.asarray(x, dtype=float)
    jet, _ = _forward_tape(net, np.atleast_1d(xs), order, for_backward=False)
    if xs.ndim == 0:
        return Jet2(*(None if a is None else a[0] for a in jet))
    return jet


def forward_with_tape(net: SubNetwork, xs: np.ndarray, order: int) -> tuple[Jet2, _Tape]:
    return _forward_tape(net, np.asarray(xs, dtype=float), order, for_backward=True)


def backward(net: SubNetwork, xs, cotangents: Jet2, tape: _Tape | None = None) -> ParamGradient:
    """Gradient of ``sum(v_bar*value + d1_bar*d1 + d2_bar*d2)`` over points and channels.

    ``cotangents`` holds ``(n, p)`` arrays; ``d1``/``d2`` entries may be ``None``.
    Pass the tape from :func:`forward_with_tape` to skip recomputing the forward pass.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n, p = xs.shape[0], net.output_dim
    bars = list(cotangents) + [None] * (3 - len(cotangents))
    for bar in bars:
        if bar is not None and np.shape(bar) != (n, p):
            raise InvalidArgumentError(f"cotangent shape {np.shape(bar)} does not match ({n}, {p})")
    order = 2 if bars[2] is not None else 1 if bars[1] is not None else 0
    if tape is None or tape.order < order:
        _, tape = _forward_tape(net, xs, order, for_backward=True)

    grad = ParamGradient.zeros_like(net)
    a0, a1, a2 = (np.asarray(b, dtype=float) if b is not None else None for b in bars)
    if a0 is None:
        a0 = np.zeros((n, p))
    n_layers = len(net.weights)
    for layer in range(n_layers - 1, -1, -1):
        W = net.weights[layer]
        if layer < n_layers - 1:
            s = tape.sigma[layer]
            u1, u2 = tape.pre[layer]
            # reverse of (s0, s1*u1, s2*u1^2 + s1*u2)
            g0 = a0 * s[1]
            g1 = a1 * s[1] if a1 is not None else None
            g2 = None
            if a1 is not None:
                g0 += a1 * s[2] * u1
            if a2 is not None:
                g0 += a2 * (s[3] * u1 * u1 + (s[2] * u2 if u2 is not None else 0.0))
                g1 = (g1 if g1 is not None else 0.0) + 2.0 * a2 * s[2] * u1
                g2 = a2 * s[1]
            a0, a1, a2 = g0, g1, g2
        h0, h1, h2 = tape.inputs[layer]
        dW = a0.T @ h0
        if a1 is not None and h1 is not None:
            dW += a1.T @ h1
        if a2 is not None and h2 is not None:
            dW += a2.T @ h2
        grad.weights[layer] = dW
        grad.biases[layer] = a0.sum(axis=0)
        if layer > 0:
            a0 = a0 @ W
            a1 = a1 @ W if a1 is not None else None
            a2 = a2 @ W if a2 is not None else None
    return grad


def compute_norms(net: SubNetwork, rule: QuadratureRule1D) -> NormalizationState:
    """L2 norm of every channel over the rule's interval, by quadrature."""
    values = forward(net, rule.nodes)
    norms = np.sqrt(rule.weights @ (values * values))
    for j, nj in enumerate(norms):
        if not nj >= 1e-12:
            raise DegenerateChannelError(j, float(nj))
    return NormalizationState(norms, rule, values)


def boundary_factor_jet(interval: Interval, x) -> Jet2:
    """``(x-a)(b-x)`` with its exact first and second derivatives."""
    x = np.asarray(x, dtype=float)
    a, b = interval.lo, interval.hi
    return Jet2((x - a) * (b - x), (a + b) - 2.0 * x, np.full_like(x, -2.0))
