"""Polynomials of measures on a finite grid.

A measure on ``E = {x_1, ..., x_m}`` is the weight vector ``c`` of
``c_1 delta_1 + ... + c_m delta_m``. A degree-``k`` monomial is the pairing
of a symmetric coefficient tensor ``g`` over ``{1..m}^k`` with ``nu^k``::

    <g, nu^k> = sum_{i_1..i_k} g(i_1, ..., i_k) c_{i_1} ... c_{i_k}

and a polynomial is a finite sum of such monomials. Coefficients are stored
densely and symmetrized on construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from numbers import Real
from typing import Sequence

import numpy as np

DEFAULT_MAX_DEGREE = 6


class GridMismatchError(ValueError):
    """Raised when objects defined on different grids are combined."""


class DegreeError(ValueError):
    """Raised when a degree exceeds the configured cap."""


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Ordered points of the underlying space.

    Points may be numeric (then strictly increasing) or abstract labels.
    """

    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if len(pts) < 1:
            raise ValueError("a grid needs at least one point")
        object.__setattr__(self, "points", pts)
        if all(isinstance(p, Real) for p in pts):
            arr = np.asarray(pts, dtype=float)
            if np.any(np.diff(arr) <= 0):
                raise ValueError("numeric grid points must be strictly increasing")

    @classmethod
    def of_size(cls, m: int) -> "Grid":
        """Grid labelled ``1, ..., m``."""
        return cls(tuple(float(i) for i in range(1, m + 1)))

    @classmethod
    def uniform(cls, a: float, b: float, m: int) -> "Grid":
        return cls(tuple(np.linspace(a, b, m).tolist()))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def is_numeric(self) -> bool:
        return all(isinstance(p, Real) for p in self.points)

    def as_array(self) -> np.ndarray:
        if not self.is_numeric:
            raise TypeError("grid has non-numeric labels")
        return np.asarray(self.points, dtype=float)

    def spacing(self, rtol: float = 1e-9) -> float:
        """Common spacing of a uniform numeric grid."""
        x = self.as_array()
        if x.size < 2:
            raise ValueError("spacing needs at least two points")
        d = np.diff(x)
        if np.max(np.abs(d - d[0])) > rtol * max(abs(d[0]), 1.0):
            raise ValueError("grid is not uniform")
        return float(d[0])

    def __len__(self):
        return self.size


def _check_grid(a: Grid, b: Grid):
    if a is b:
        return
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a.size} points vs {b.size} points")


@dataclass(frozen=True, eq=False)
class MeasureVec:
    """Non-negative measure on a grid, stored as its weight vector."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("a measure in M+(E) has non-negative weights")
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def zero(cls, grid: Grid) -> "MeasureVec":
        return cls(grid, np.zeros(grid.size))


def symmetrize(arr: np.ndarray, start: int = 1) -> np.ndarray:
    """Average ``arr`` over all permutations of its axes.

    ``arr`` must already be symmetric in its first ``start`` axes. Builds the
    symmetrization one axis at a time, using transpositions as coset
    representatives, so the cost is quadratic rather than factorial in the
    number of axes.
    """
    arr = np.asarray(arr, dtype=float)
    k = arr.ndim
    for j in range(max(start, 1) + 1, k + 1):
        acc = arr.copy()
        for s in range(j - 1):
            acc += np.swapaxes(arr, s, j - 1)
        arr = acc / j
    return arr


class SymCoeff:
    """Symmetric coefficient tensor of a degree-``k`` monomial.

    ``values`` is a dense array of shape ``(m,) * k`` (a 0-d array for
    ``k = 0``), symmetrized on construction unless ``assume_symmetric``.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values, *, assume_symmetric: bool = False,
                 max_degree: int = DEFAULT_MAX_DEGREE):
        arr = np.asarray(values, dtype=float)
        k = arr.ndim
        if k > max_degree:
            raise DegreeError(f"degree {k} exceeds cap {max_degree}")
        if arr.shape != (grid.size,) * k:
            raise ValueError(f"coefficient shape {arr.shape} does not match grid size {grid.size}")
        if not assume_symmetric and k > 1:
            arr = symmetrize(arr)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _frozen(arr))

    def __setattr__(self, name, value):
        raise AttributeError("SymCoeff is immutable")

    @property
    def degree(self) -> int:
        return self.values.ndim

    @classmethod
    def scalar(cls, grid: Grid, value: float) -> "SymCoeff":
        return cls(grid, np.asarray(float(value)))

    @classmethod
    def indicator(cls, grid: Grid, i: int) -> "SymCoeff":
        """Degree-1 indicator of the ``i``-th grid point (0-based)."""
        e = np.zeros(grid.size)
        e[i] = 1.0
        return cls(grid, e)

    def __repr__(self):
        return f"SymCoeff(degree={self.degree}, m={self.grid.size})"


def _contract_all(arr: np.ndarray, c: np.ndarray) -> float:
    out = arr
    for _ in range(arr.ndim):
        out = out @ c
    return float(out)


def _contract_trailing(arr: np.ndarray, c: np.ndarray, n: int) -> np.ndarray:
    out = arr
    for _ in range(n):
        out = out @ c
    return out


def pair(g: SymCoeff, nu: MeasureVec) -> float:
    """Monomial value ``<g, nu^k>``."""
    _check_grid(g.grid, nu.grid)
    return _contract_all(g.values, nu.weights)


def sym_tensor(g: SymCoeff, h: SymCoeff, max_degree: int = DEFAULT_MAX_DEGREE) -> SymCoeff:
    """Symmetric tensor product, so that ``<g x h, nu^(k+l)> = <g, nu^k> <h, nu^l>``."""
    _check_grid(g.grid, h.grid)
    k, l = g.degree, h.degree
    if k + l > max_degree:
        raise DegreeError(f"degree {k + l} exceeds cap {max_degree}")
    outer = np.multiply.outer(g.values, h.values)
    return SymCoeff(g.grid, symmetrize(outer, start=max(k, 1)),
                    assume_symmetric=True, max_degree=max_degree)


class PolyRep:
    """Polynomial ``p(nu) = sum_k <g_k, nu^k>`` as its coefficient tensors.

    ``terms[k]`` is the dense degree-``k`` coefficient array. Trailing zero
    terms are dropped, so ``degree`` is -1 for the zero polynomial.
    """

    __slots__ = ("grid", "terms")

    def __init__(self, grid: Grid, terms: Sequence, *, assume_symmetric: bool = False,
                 max_degree: int = DEFAULT_MAX_DEGREE):
        arrs = []
        for k, t in enumerate(terms):
            if isinstance(t, SymCoeff):
                _check_grid(grid, t.grid)
                if t.degree != k:
                    raise ValueError(f"term {k} has degree {t.degree}")
                arrs.append(t.values)
                continue
            a = np.asarray(t, dtype=float)
            if a.ndim == 0 and k > 0 and a == 0:
                a = np.zeros((grid.size,) * k)
            arrs.append(SymCoeff(grid, a, assume_symmetric=assume_symmetric,
                                 max_degree=max_degree).values)
        while len(arrs) > 1 and not np.any(arrs[-1]):
            arrs.pop()
        if not arrs:
            arrs = [_frozen(0.0)]
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "terms", tuple(arrs))

    def __setattr__(self, name, value):
        raise AttributeError("PolyRep is immutable")

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "PolyRep":
        return cls(grid, [float(value)])

    @classmethod
    def linear(cls, grid: Grid, g, const: float = 0.0) -> "PolyRep":
        """``const + <g, nu>``."""
        return cls(grid, [const, np.asarray(g, dtype=float)])

    @classmethod
    def power(cls, grid: Grid, g, n: int, max_degree: int = DEFAULT_MAX_DEGREE) -> "PolyRep":
        """Rank-one monomial ``<g, nu>^n`` with coefficient ``g^(x n)``."""
        if n > max_degree:
            raise DegreeError(f"degree {n} exceeds cap {max_degree}")
        g = np.asarray(g, dtype=float)
        t = np.asarray(1.0)
        for _ in range(n):
            t = np.multiply.outer(t, g)
        terms = [np.zeros((grid.size,) * k) for k in range(n)] + [t]
        return cls(grid, terms, assume_symmetric=True, max_degree=max_degree)

    @classmethod
    def zero(cls, grid: Grid) -> "PolyRep":
        return cls(grid, [0.0])

    @property
    def degree(self) -> int:
        if len(self.terms) == 1 and not np.any(self.terms[0]):
            return -1
        return len(self.terms) - 1

    @property
    def m(self) -> int:
        return self.grid.size

    def coeff(self, k: int) -> SymCoeff:
        if k < len(self.terms):
            return SymCoeff(self.grid, self.terms[k], assume_symmetric=True, max_degree=max(k, 0))
        return SymCoeff(self.grid, np.zeros((self.grid.size,) * k), assume_symmetric=True,
                        max_degree=k)

    def padded(self, n: int) -> list:
        """Coefficient arrays for degrees ``0..n`` (zeros beyond ``degree``)."""
        out = list(self.terms[: n + 1])
        for k in range(len(out), n + 1):
            out.append(np.zeros((self.grid.size,) * k))
        return out

    def __call__(self, nu: MeasureVec) -> float:
        return poly_eval(self, nu)

    def __add__(self, other):
        if isinstance(other, Real):
            other = PolyRep.constant(self.grid, other)
        if not isinstance(other, PolyRep):
            return NotImplemented
        _check_grid(self.grid, other.grid)
        n = max(len(self.terms), len(other.terms)) - 1
        a, b = self.padded(n), other.padded(n)
        return PolyRep(self.grid, [x + y for x, y in zip(a, b)], assume_symmetric=True,
                       max_degree=max(n, 0))

    __radd__ = __add__

    def __neg__(self):
        return PolyRep(self.grid, [-t for t in self.terms], assume_symmetric=True,
                       max_degree=len(self.terms))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Real):
            return PolyRep(self.grid, [float(other) * t for t in self.terms],
                           assume_symmetric=True, max_degree=len(self.terms))
        if not isinstance(other, PolyRep):
            return NotImplemented
        return poly_mul(self, other)

    __rmul__ = __mul__

    def allclose(self, other: "PolyRep", rtol=1e-10, atol=1e-12) -> bool:
        n = max(len(self.terms), len(other.terms)) - 1
        return all(np.allclose(x, y, rtol=rtol, atol=atol)
                   for x, y in zip(self.padded(n), other.padded(n)))

    def __repr__(self):
        return f"PolyRep(degree={self.degree}, m={self.grid.size})"


def poly_mul(p: PolyRep, q: PolyRep, max_degree: int = DEFAULT_MAX_DEGREE) -> PolyRep:
    """Product of two polynomials via symmetric tensor products."""
    _check_grid(p.grid, q.grid)
    if p.degree < 0 or q.degree < 0:
        return PolyRep.zero(p.grid)
    n = p.degree + q.degree
    if n > max_degree:
        raise DegreeError(f"degree {n} exceeds cap {max_degree}")
    out = [np.zeros((p.m,) * k) for k in range(n + 1)]
    for k, g in enumerate(p.terms):
        if not np.any(g):
            continue
        for l, h in enumerate(q.terms):
            if not np.any(h):
                continue
            outer = np.multiply.outer(g, h)
            out[k + l] = out[k + l] + symmetrize(outer, start=max(k, 1))
    return PolyRep(p.grid, out, assume_symmetric=True, max_degree=max_degree)


def poly_eval(p: PolyRep, nu: MeasureVec) -> float:
    """``p(nu) = sum_k <g_k, nu^k>``."""
    _check_grid(p.grid, nu.grid)
    return float(sum(_contract_all(t, nu.weights) for t in p.terms))


def poly_eval_batch(p: PolyRep, weights: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Evaluate ``p`` at every row of ``weights`` (shape ``(N, m)``)."""
    C = np.atleast_2d(np.asarray(weights, dtype=float))
    if C.shape[1] != p.m:
        raise GridMismatchError(f"weights have {C.shape[1]} columns, polynomial has m={p.m}")
    out = np.zeros(C.shape[0])
    for lo in range(0, C.shape[0], chunk):
        Cb = C[lo:lo + chunk]
        acc = np.zeros(Cb.shape[0])
        for t in p.terms:
            if t.ndim == 0:
                acc += float(t)
                continue
            # leading axis indexes paths, contract the trailing tensor axis each pass
            cur = np.tensordot(Cb, t, axes=([1], [t.ndim - 1]))
            while cur.ndim > 1:
                cur = np.einsum("n...i,ni->n...", cur, Cb)
            acc += cur
        out[lo:lo + chunk] = acc
    return out


def partial(p: PolyRep, nu: MeasureVec) -> np.ndarray:
    """Directional derivative ``x -> d_x p(nu)`` as a vector over the grid."""
    _check_grid(p.grid, nu.grid)
    c = nu.weights
    out = np.zeros(p.m)
    for k, t in enumerate(p.terms):
        if k == 0:
            continue
        out += k * _contract_trailing(t, c, k - 1)
    return out


def partial2(p: PolyRep, nu: MeasureVec) -> SymCoeff:
    """Second derivative ``(x, y) -> d_x d_y p(nu)`` as a degree-2 tensor."""
    _check_grid(p.grid, nu.grid)
    c = nu.weights
    out = np.zeros((p.m, p.m))
    for k, t in enumerate(p.terms):
        if k < 2:
            continue
        out += k * (k - 1) * _contract_trailing(t, c, k - 2)
    return SymCoeff(p.grid, out, assume_symmetric=True)
