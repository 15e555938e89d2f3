"""Separable grids and exact tensor-structured inner products.

A :class:`SeparableGrid` tabulates a function ``f(x) = sum_r c_r prod_i f_{r,i}(x_i)``
at the nodes of one quadrature rule per dimension: ``values[i]`` has shape
``(R, N_i)`` and ``d1``/``d2`` hold first/second derivatives of the same
factors. Every integral below reduces to per-dimension Gram matrices
``X_f diag(w_i) X_g^T`` combined by Hadamard products across dimensions, so
the cost is ``O(d R_f R_g N)`` instead of ``N^d``.

Bilinear forms are evaluated by a small "transfer" recurrence over
dimensions. Each form is a set of states (``R_f x R_g`` matrices) and
transitions ``state[to] += Gram_kind * state[from]`` applied once per
dimension; e.g. the stiffness form keeps "no derivative used yet" and
"derivative used in exactly one dimension". The recurrence is linear in the
number of dimensions and is reversed for gradients.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError, NumericError
from .model import TnnModel, eval_factors, pullback_factors
from .quad import QuadratureRule1D
from .subnet import Jet2, ParamGradient

log = logging.getLogger(__name__)

FIELDS = ("values", "d1", "d2")


class ClampWarning(RuntimeWarning):
    """A quadratic form came out slightly negative from round-off and was clamped to zero."""


@dataclass(eq=False)
class SeparableGrid:
    coefficients: np.ndarray
    values: list[np.ndarray]
    rules: list[QuadratureRule1D]
    d1: list[np.ndarray] | None = None
    d2: list[np.ndarray] | None = None
    # set when tabulated from a model: (model, model.version, factor evaluations)
    source: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        R = self.coefficients.shape[0]
        if len(self.values) != len(self.rules):
            raise InvalidArgumentError("need one value matrix per quadrature rule")
        for name in FIELDS:
            mats = getattr(self, name)
            if mats is None:
                continue
            if len(mats) != len(self.rules):
                raise InvalidArgumentError(f"{name}: need one matrix per dimension")
            for m, rule in zip(mats, self.rules):
                if m.shape != (R, len(rule)):
                    raise InvalidArgumentError(f"{name}: expected shape {(R, len(rule))}, got {m.shape}")

    @property
    def dim(self) -> int:
        return len(self.rules)

    @property
    def rank(self) -> int:
        return self.coefficients.shape[0]

    @property
    def deriv_order(self) -> int:
        return 2 if self.d2 is not None and self.d1 is not None else 1 if self.d1 is not None else 0

    def field(self, name: str) -> list[np.ndarray]:
        mats = getattr(self, name)
        if mats is None:
            raise InvalidArgumentError(f"grid has no {name} tabulated")
        return mats


def grid_from_tnn(model: TnnModel, rules: Sequence[QuadratureRule1D] | None = None, deriv_order: int = 0) -> SeparableGrid:
    """Tabulate the normalised (and boundary-factored) channels of ``model``."""
    rules = list(model.norm_rules if rules is None else rules)
    if len(rules) != model.dim:
        raise InvalidArgumentError("need one rule per model dimension")
    for rule, iv in zip(rules, model.domain.intervals):
        if rule.interval != iv:
            raise InvalidArgumentError("quadrature rule does not match the model's interval")
    evals = [eval_factors(model, i, rule.nodes, deriv_order) for i, rule in enumerate(rules)]
    values = [ev.factors.value.T.copy() for ev in evals]
    d1 = [ev.factors.d1.T.copy() for ev in evals] if deriv_order >= 1 else None
    d2 = [ev.factors.d2.T.copy() for ev in evals] if deriv_order >= 2 else None
    return SeparableGrid(model.coefficients.copy(), values, rules, d1, d2, source=(model, model.version, evals))


def _tabulate(fn, nodes, loc):
    vals = np.broadcast_to(np.asarray(fn(nodes), dtype=float), nodes.shape).copy()
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NumericError("non-finite factor value", location=(*loc, int(bad[0])))
    return vals


def grid_from_separable(
    dim: int,
    coefficients: Sequence[float],
    factors: Sequence[Sequence[Callable | tuple]],
    rules: Sequence[QuadratureRule1D],
) -> SeparableGrid:
    """Tabulate closed-form factors ``factors[r][i]``.

    Each factor is a vectorised callable, or a tuple ``(f, f', f'')`` /
    ``(f, f')``; derivatives are tabulated only if every factor supplies them.
    Non-finite values raise with location ``(rank, dim, node)``.
    """
    rules = list(rules)
    coefficients = np.asarray(coefficients, dtype=float)
    R = coefficients.shape[0]
    if len(rules) != dim or len(factors) != R or any(len(row) != dim for row in factors):
        raise InvalidArgumentError("factors must be an R x d table matching the coefficients and rules")
    as_tuples = [[f if isinstance(f, tuple) else (f,) for f in row] for row in factors]
    order = min((len(f) for row in as_tuples for f in row), default=3) - 1
    order = max(0, min(order, 2))
    mats = {name: [np.zeros((R, len(rule))) for rule in rules] for name in FIELDS[: order + 1]}
    for r, row in enumerate(as_tuples):
        for i, fs in enumerate(row):
            for k in range(order + 1):
                mats[FIELDS[k]][i][r] = _tabulate(fs[k], rules[i].nodes, (r, i))
    return SeparableGrid(coefficients, mats["values"], rules, mats.get("d1"), mats.get("d2"))


def constant_grid(rules: Sequence[QuadratureRule1D], value: float = 1.0) -> SeparableGrid:
    rules = list(rules)
    return SeparableGrid(
        np.array([float(value)]),
        [np.ones((1, len(r))) for r in rules],
        rules,
        [np.zeros((1, len(r))) for r in rules],
        [np.zeros((1, len(r))) for r in rules],
    )


def _check_compatible(f: SeparableGrid, g: SeparableGrid):
    if f.dim != g.dim:
        raise InvalidArgumentError(f"grid dimensions differ: {f.dim} vs {g.dim}")
    for i, (rf, rg) in enumerate(zip(f.rules, g.rules)):
        if not rf.same_as(rg):
            raise InvalidArgumentError(f"quadrature rules differ in dimension {i}")


def grid_product(a: SeparableGrid, b: SeparableGrid) -> SeparableGrid:
    """Pointwise product ``a*b`` as a rank ``R_a*R_b`` grid (derivatives by the product rule)."""
    _check_compatible(a, b)
    Ra, Rb = a.rank, b.rank
    order = min(a.deriv_order, b.deriv_order)

    def outer(x, y):
        return (x[:, None, :] * y[None, :, :]).reshape(Ra * Rb, -1)

    values, d1, d2 = [], [] if order >= 1 else None, [] if order >= 2 else None
    for i in range(a.dim):
        values.append(outer(a.values[i], b.values[i]))
        if order >= 1:
            d1.append(outer(a.d1[i], b.values[i]) + outer(a.values[i], b.d1[i]))
        if order >= 2:
            d2.append(outer(a.d2[i], b.values[i]) + 2.0 * outer(a.d1[i], b.d1[i]) + outer(a.values[i], b.d2[i]))
    coef = np.outer(a.coefficients, b.coefficients).ravel()
    return SeparableGrid(coef, values, list(a.rules), d1, d2)


def weighted(a: SeparableGrid, u: SeparableGrid) -> SeparableGrid:
    """Multiply ``a``'s values into every jet component of ``u`` (no product rule).

    ``stiffness_inner(weighted(a, u), v)`` is ``int a grad(u) . grad(v)``.
    """
    _check_compatible(a, u)
    Ra, Ru = a.rank, u.rank

    def outer(x, y):
        return (x[:, None, :] * y[None, :, :]).reshape(Ra * Ru, -1)

    out = {}
    for name in FIELDS:
        mats = getattr(u, name)
        out[name] = None if mats is None else [outer(a.values[i], mats[i]) for i in range(u.dim)]
    coef = np.outer(a.coefficients, u.coefficients).ravel()
    return SeparableGrid(coef, out["values"], list(u.rules), out["d1"], out["d2"])


def grid_sum(grids: Sequence[SeparableGrid], scales: Sequence[float] | None = None) -> SeparableGrid:
    """``sum_k scales[k] * grids[k]`` by concatenating ranks."""
    grids = list(grids)
    scales = [1.0] * len(grids) if scales is None else list(scales)
    for g in grids[1:]:
        _check_compatible(grids[0], g)
    order = min(g.deriv_order for g in grids)
    coef = np.concatenate([s * g.coefficients for g, s in zip(grids, scales)])
    out = {}
    for k, name in enumerate(FIELDS):
        out[name] = None if k > order else [np.vstack([getattr(g, name)[i] for g in grids]) for i in range(grids[0].dim)]
    return SeparableGrid(coef, out["values"], list(grids[0].rules), out["d1"], out["d2"])


# --- bilinear forms --------------------------------------------------------

# Gram kinds: (field of f, field of g)
_GRAMS = {
    "M": ("values", "values"),
    "S": ("d1", "d1"),
    "L": ("d2", "d2"),
    "P": ("d2", "values"),
    "Q": ("values", "d2"),
}

# (number of states, transitions (to, from, gram), target states)
_FORMS = {
    "mass": (1, [(0, 0, "M")], (0,)),
    "stiffness": (2, [(0, 0, "M"), (1, 1, "M"), (1, 0, "S")], (1,)),
    # states: 0 plain, 1 f'' used, 2 g'' used, 3 both in different dims, 4 both in the same dim
    "laplacian": (
        5,
        [
            (0, 0, "M"),
            (1, 1, "M"), (1, 0, "P"),
            (2, 2, "M"), (2, 0, "Q"),
            (3, 3, "M"), (3, 1, "Q"), (3, 2, "P"),
            (4, 4, "M"), (4, 0, "L"),
        ],
        (3, 4),
    ),
    # int Lap(f) * g
    "cross": (2, [(0, 0, "M"), (1, 1, "M"), (1, 0, "P")], (1,)),
}


class FormEvaluation:
    """``F[r, s]`` such that ``form(f, g) = c_f^T F c_g``, plus the reverse sweep."""

    def __init__(self, kind: str, f: SeparableGrid, g: SeparableGrid):
        if kind not in _FORMS:
            raise InvalidArgumentError(f"unknown form {kind!r}")
        _check_compatible(f, g)
        self.kind, self.f, self.g = kind, f, g
        n_states, self.transitions, self.targets = _FORMS[kind]
        kinds = sorted({t[2] for t in self.transitions})
        for k in kinds:
            for side, name in zip((f, g), _GRAMS[k]):
                if getattr(side, name) is None:
                    raise InvalidArgumentError(f"{kind} form needs {name} tabulated on both grids")
        self.grams = []
        for i, rule in enumerate(f.rules):
            w = rule.weights
            self.grams.append({k: (getattr(f, _GRAMS[k][0])[i] * w) @ getattr(g, _GRAMS[k][1])[i].T for k in kinds})
        shape = (f.rank, g.rank)
        state = [np.ones(shape)] + [np.zeros(shape) for _ in range(n_states - 1)]
        self.history = []
        for grams in self.grams:
            self.history.append(state)
            new = [np.zeros(shape) for _ in range(n_states)]
            for to, frm, k in self.transitions:
                new[to] += grams[k] * state[frm]
            state = new
        self.matrix = sum(state[t] for t in self.targets)

    def value(self, cf=None, cg=None) -> float:
        cf = self.f.coefficients if cf is None else cf
        cg = self.g.coefficients if cg is None else cg
        return float(cf @ self.matrix @ cg)

    def field_cotangents(self, dF: np.ndarray) -> tuple[list[dict], list[dict]]:
        """Cotangents on the tabulated fields of ``f`` and ``g`` given ``dvalue/dF``."""
        n_states = len(self.history[0])
        adj = [np.zeros_like(dF) for _ in range(n_states)]
        for t in self.targets:
            adj[t] = dF
        f_cots = [dict() for _ in range(self.f.dim)]
        g_cots = [dict() for _ in range(self.g.dim)]
        for i in range(self.f.dim - 1, -1, -1):
            state, grams = self.history[i], self.grams[i]
            prev = [np.zeros_like(dF) for _ in range(n_states)]
            dG = {}
            for to, frm, k in self.transitions:
                dG[k] = dG.get(k, 0.0) + adj[to] * state[frm]
                prev[frm] += adj[to] * grams[k]
            adj = prev
            w = self.f.rules[i].weights
            for k, dgram in dG.items():
                fname, gname = _GRAMS[k]
                Xf = getattr(self.f, fname)[i]
                Xg = getattr(self.g, gname)[i]
                _acc(f_cots[i], fname, dgram @ (Xg * w))
                _acc(g_cots[i], gname, dgram.T @ (Xf * w))
        return f_cots, g_cots


def _acc(d: dict, name: str, value: np.ndarray):
    d[name] = d[name] + value if name in d else value


def merge_cotangents(*cot_lists: list[dict]) -> list[dict]:
    out = [dict() for _ in cot_lists[0]]
    for cots in cot_lists:
        for acc, c in zip(out, cots):
            for name, v in c.items():
                _acc(acc, name, v)
    return out


def scale_cotangents(cots: list[dict], s: float) -> list[dict]:
    return [{k: s * v for k, v in c.items()} for c in cots]


def _clamped(q: float, scale: float, what: str) -> float:
    if q >= 0.0:
        return q
    tol = 1e-10 * max(1.0, scale)
    if q >= -tol:
        if q < -1e-13 * max(1.0, scale):
            warnings.warn(f"{what} = {q:.3e} clamped to 0", ClampWarning, stacklevel=3)
        return 0.0
    raise NumericError(f"{what} is negative ({q:.3e})")


def _form(kind: str, f: SeparableGrid, g: SeparableGrid) -> float:
    value = FormEvaluation(kind, f, g).value()
    if f is g and kind in ("mass", "stiffness", "laplacian"):
        return _clamped(value, abs(value), f"{kind}_inner(f, f)")
    return value


def integral(grid: SeparableGrid) -> float:
    """``int f`` = ``sum_r c_r prod_i (w_i . V_i[r])``."""
    prods = np.ones(grid.rank)
    for V, rule in zip(grid.values, grid.rules):
        prods *= V @ rule.weights
    return float(grid.coefficients @ prods)


def mass_inner(f: SeparableGrid, g: SeparableGrid) -> float:
    return _form("mass", f, g)


def stiffness_inner(f: SeparableGrid, g: SeparableGrid) -> float:
    """``int grad f . grad g``."""
    return _form("stiffness", f, g)


def laplacian_inner(f: SeparableGrid, g: SeparableGrid) -> float:
    """``int Lap f * Lap g``."""
    return _form("laplacian", f, g)


def laplacian_cross(u: SeparableGrid, f: SeparableGrid) -> float:
    """``int Lap u * f``."""
    return _form("cross", u, f)


def residual_norm_sq(u: SeparableGrid, f: SeparableGrid) -> float:
    """``||Lap u + f||^2`` expanded into three separable forms."""
    lap = FormEvaluation("laplacian", u, u).value()
    cross = FormEvaluation("cross", u, f).value()
    mass = FormEvaluation("mass", f, f).value()
    return _clamped(lap + 2.0 * cross + mass, abs(lap) + abs(2.0 * cross) + abs(mass), "residual_norm_sq")


def energy_inner(u: SeparableGrid, v: SeparableGrid, a: SeparableGrid | None = None, b: SeparableGrid | None = None) -> float:
    """``(a grad u, grad v) + (b u, v)`` with ``a = 1`` and ``b = 0`` by default."""
    out = stiffness_inner(u if a is None else weighted(a, u), v)
    if b is not None:
        out += mass_inner(weighted(b, u), v)
    return out


# --- gradients -------------------------------------------------------------


def check_fresh(grid: SeparableGrid) -> TnnModel:
    if grid.source is None:
        raise ConsistencyError("grid was not tabulated from a model")
    model, version, _ = grid.source
    if model.version != version:
        raise ConsistencyError(f"grid is stale: tabulated at model version {version}, model is at {model.version}")
    return model


def pullback_grid(grid: SeparableGrid, cots: list[dict]) -> list[ParamGradient]:
    """Push cotangents on a model grid's fields into per-dimension weight gradients."""
    model = check_fresh(grid)
    _, _, evals = grid.source
    grads = []
    for ev, c in zip(evals, cots):
        jet = Jet2(*(c[name].T if name in c else None for name in FIELDS))
        if jet.value is None and jet.d1 is None and jet.d2 is None:
            grads.append(ParamGradient.zeros_like(model.subnets[ev.dim]))
        else:
            grads.append(pullback_factors(model, ev, jet))
    return grads


class InnerGradient(NamedTuple):
    value: float
    coefficients: np.ndarray
    theta: list[ParamGradient]


_KIND_ORDER = {"integral": 0, "mass": 0, "stiffness": 1, "laplacian": 2, "cross": 2}


def gradient_of_inner(
    kind: str,
    model: TnnModel,
    fixed: SeparableGrid | None = None,
    *,
    grid: SeparableGrid | None = None,
    rules: Sequence[QuadratureRule1D] | None = None,
) -> InnerGradient:
    """Value and exact gradient (w.r.t. coefficients and weights) of a form of ``model``.

    ``kind`` is one of ``integral``, ``mass``, ``stiffness``, ``laplacian`` or
    ``cross`` (``int Lap Psi * fixed``). Without ``fixed`` the quadratic form
    ``form(Psi, Psi)`` is differentiated; with ``fixed`` the linear map
    ``form(Psi, fixed)``.
    """
    if kind not in _KIND_ORDER:
        raise InvalidArgumentError(f"unknown inner product kind {kind!r}")
    if grid is None:
        grid = grid_from_tnn(model, rules, _KIND_ORDER[kind])
    elif grid.source is None or grid.source[0] is not model:
        raise ConsistencyError("grid was not tabulated from this model")
    check_fresh(grid)
    c = model.coefficients
    if kind == "integral":
        kind, fixed = "mass", constant_grid(grid.rules)
    if kind == "cross" and fixed is None:
        raise InvalidArgumentError("the cross form needs a fixed grid")
    if fixed is None:
        form = FormEvaluation(kind, grid, grid)
        value = form.value(c, c)
        f_cots, g_cots = form.field_cotangents(np.outer(c, c))
        cots = merge_cotangents(f_cots, g_cots)
        dc = (form.matrix + form.matrix.T) @ c
    else:
        form = FormEvaluation(kind, grid, fixed)
        value = form.value(c, fixed.coefficients)
        cots, _ = form.field_cotangents(np.outer(c, fixed.coefficients))
        dc = form.matrix @ fixed.coefficients
    return InnerGradient(value, dc, pullback_grid(grid, cots))
