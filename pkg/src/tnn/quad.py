"""One-dimensional Gauss-Legendre rules, composite rules and a Monte Carlo baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericError

MAX_GAUSS_POINTS = 64


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise InvalidArgumentError(f"interval bounds must be finite, got ({lo}, {hi})")
        if not lo < hi:
            raise InvalidArgumentError(f"interval needs lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True, eq=False)
class QuadratureRule1D:
    """Composite Gauss-Legendre rule: ``n_sub`` equal pieces, ``n_per`` points each."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: Interval
    n_sub: int
    n_per: int

    def __len__(self):
        return len(self.nodes)

    @property
    def spec(self) -> tuple[float, float, int, int]:
        return (self.interval.lo, self.interval.hi, self.n_sub, self.n_per)

    def same_as(self, other: "QuadratureRule1D") -> bool:
        return self is other or self.spec == other.spec


@dataclass(frozen=True)
class BoxDomain:
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if len(ivs) < 1:
            raise InvalidArgumentError("a box domain needs at least one interval")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "BoxDomain":
        return cls(tuple(Interval(lo, hi) for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.intervals)

    @property
    def lows(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.intervals])

    @property
    def highs(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.intervals])

    @property
    def volume(self) -> float:
        return float(np.prod(self.highs - self.lows))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lows) & (pts <= self.highs), axis=1)


def _legendre_with_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


@lru_cache(maxsize=None)
def _gauss_legendre_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    if n == 1:
        x = np.zeros(1)
    else:
        for _ in range(100):
            p, dp = _legendre_with_derivative(n, x)
            dx = p / dp
            x = x - dx
            if np.max(np.abs(dx)) < 1e-15:
                break
    p, dp = _legendre_with_derivative(n, x) if n > 1 else (x, np.ones(1))
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # enforce exact reflection symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (ascending) and weights of the ``n``-point Gauss-Legendre rule on [-1, 1].

    Nodes are found by Newton iteration on the three-term recurrence, started
    from Chebyshev-like guesses. Results are cached and returned read-only.
    """
    if isinstance(n, bool) or int(n) != n or not 1 <= n <= MAX_GAUSS_POINTS:
        raise InvalidArgumentError(f"gauss_legendre needs 1 <= n <= {MAX_GAUSS_POINTS}, got {n!r}")
    return _gauss_legendre_cached(int(n))


def composite_rule(interval: Interval, n_sub: int, n_per: int) -> QuadratureRule1D:
    if isinstance(n_sub, bool) or int(n_sub) != n_sub or n_sub < 1:
        raise InvalidArgumentError(f"n_sub must be a positive integer, got {n_sub!r}")
    x, w = gauss_legendre(n_per)
    edges = np.linspace(interval.lo, interval.hi, int(n_sub) + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule1D(nodes, weights, interval, int(n_sub), int(n_per))


def _check_finite(values: np.ndarray, what: str):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericError(f"non-finite {what}", location=int(bad[0]))


def integrate_1d(rule: QuadratureRule1D, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Apply ``rule`` to a vectorised ``f``; non-finite values raise with the node index."""
    values = np.broadcast_to(np.asarray(f(rule.nodes), dtype=float), rule.nodes.shape)
    _check_finite(values, "integrand value at quadrature node")
    return float(rule.weights @ values)


def sample_uniform(domain: BoxDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform points in ``domain`` as an ``(n, d)`` array."""
    if n < 1:
        raise InvalidArgumentError(f"need at least one sample, got {n}")
    lo, hi = domain.lows, domain.highs
    return lo + (hi - lo) * rng.random((int(n), domain.dim))


def monte_carlo_integral(
    domain: BoxDomain,
    f: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Plain Monte Carlo estimate ``volume * mean(f)`` over uniform samples.

    ``f`` receives an ``(n, d)`` array of points and returns ``n`` values.
    """
    pts = sample_uniform(domain, n_samples, rng)
    values = np.broadcast_to(np.asarray(f(pts), dtype=float), (pts.shape[0],))
    _check_finite(values, "integrand value at sample")
    return domain.volume * float(np.mean(values))


def tensor_rules(domain: BoxDomain, n_sub: int, n_per: int) -> list[QuadratureRule1D]:
    return [composite_rule(iv, n_sub, n_per) for iv in domain.intervals]


def as_domain(spec: BoxDomain | Sequence[Sequence[float]]) -> BoxDomain:
    if isinstance(spec, BoxDomain):
        return spec
    return BoxDomain(tuple(Interval(lo, hi) for lo, hi in spec))
