"""Dual moment formula.

``E[p_g(X_T) | X_0 = nu]`` equals ``p_{g_T}(nu)``, where the coefficient
vector solves the linear ODE ``d/dt g_t = L_n g_t`` with ``g_0 = g`` and
``L_n`` is the dual operator (``generator.apply_dual``).

The ODE lives on symmetric tensors of degree ``<= n``. ``CoeffSpace`` gives
them reduced coordinates (one value per sorted multi-index, dimension
``C(m + n, n)``), in which the dual operator is a block upper-bidiagonal
matrix.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import expm
from scipy.special import comb

from .generator import OperatorSpec, apply_dual
from .measures import DEFAULT_MAX_DEGREE, DegreeError, MeasureVec, PolyRep, poly_eval

ASSEMBLE_MAX_DIM = 2000
DEFAULT_STEPS = 1000


def _colex_rank(sorted_idx: np.ndarray) -> np.ndarray:
    """Rank of non-decreasing multi-indices (rows) among multisets of the same size."""
    k = sorted_idx.shape[-1]
    rank = np.zeros(sorted_idx.shape[:-1], dtype=np.int64)
    for t in range(k):
        rank += comb(sorted_idx[..., t] + t, t + 1, exact=False).round().astype(np.int64)
    return rank


class CoeffSpace:
    """Reduced coordinates for symmetric coefficient vectors ``(g_0, ..., g_n)``."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.reps = []         # per degree: (count, k) sorted multi-indices in rank order
        self.rep_flat = []     # per degree: flat index of each representative
        self.full_index = []   # per degree: reduced index of every full entry
        self.offsets = [0]
        for k in range(n + 1):
            if k == 0:
                reps = np.zeros((1, 0), dtype=np.int64)
                self.reps.append(reps)
                self.rep_flat.append(np.zeros(1, dtype=np.int64))
                self.full_index.append(np.zeros((), dtype=np.int64))
                self.offsets.append(self.offsets[-1] + 1)
                continue
            reps = np.array(list(combinations_with_replacement(range(m), k)), dtype=np.int64)
            order = np.argsort(_colex_rank(reps))
            reps = reps[order]
            self.reps.append(reps)
            self.rep_flat.append(np.ravel_multi_index(reps.T, (m,) * k))
            allidx = np.indices((m,) * k).reshape(k, -1).T
            self.full_index.append(_colex_rank(np.sort(allidx, axis=1)).reshape((m,) * k))
            self.offsets.append(self.offsets[-1] + len(reps))

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    def block(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def to_vector(self, p: PolyRep) -> np.ndarray:
        if p.degree > self.n:
            raise DegreeError(f"polynomial degree {p.degree} exceeds space degree {self.n}")
        v = np.zeros(self.dim)
        for k, t in enumerate(p.terms):
            v[self.block(k)] = np.asarray(t).ravel()[self.rep_flat[k]]
        return v

    def tensors(self, v: np.ndarray) -> list:
        return [np.asarray(v[self.block(k)][self.full_index[k]], dtype=float)
                for k in range(self.n + 1)]

    def to_poly(self, v: np.ndarray, grid) -> PolyRep:
        return PolyRep(grid, self.tensors(v), assume_symmetric=True,
                       max_degree=max(self.n, DEFAULT_MAX_DEGREE))

    def labels(self):
        """``(degree, multi-index string)`` per reduced coordinate; indices are 0-based."""
        out = []
        for k in range(self.n + 1):
            for r in self.reps[k]:
                out.append((k, "-".join(str(int(i)) for i in r)))
        return out


@lru_cache(maxsize=32)
def coeff_space(m: int, n: int) -> CoeffSpace:
    return CoeffSpace(m, n)


def dual_matrix(spec: OperatorSpec, n: int, grid=None) -> np.ndarray:
    """The dual operator on degree ``<= n`` coefficients, in ``CoeffSpace`` coordinates."""
    from .measures import Grid

    grid = grid or Grid.of_size(spec.m)
    space = coeff_space(spec.m, n)
    M = np.zeros((space.dim, space.dim))
    for j in range(space.dim):
        e = np.zeros(space.dim)
        e[j] = 1.0
        img = apply_dual(spec, space.to_poly(e, grid), max_degree=max(n, DEFAULT_MAX_DEGREE))
        M[:, j] = space.to_vector(img)
    return M


def _rk4_propagator(M: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for ``y' = M y`` as a matrix, ``sum_{j<=4} (hM)^j / j!``."""
    A = h * M
    P = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for j in range(1, 5):
        term = term @ A / j
        P = P + term
    return P


@dataclass
class MomentSolution:
    """Coefficient trajectory of the moment ODE on a time grid."""

    times: np.ndarray
    coeffs: np.ndarray          # (len(times), space.dim)
    space: CoeffSpace
    grid: object
    step: float
    method: str

    def poly_at(self, i: int) -> PolyRep:
        return self.space.to_poly(self.coeffs[i], self.grid)

    @property
    def final(self) -> PolyRep:
        return self.poly_at(-1)

    def evaluate(self, nu: MeasureVec) -> np.ndarray:
        """``p_{g_t}(nu)`` at every stored time."""
        return np.array([poly_eval(self.poly_at(i), nu) for i in range(len(self.times))])

    def to_csv(self, path, stride: int = 1):
        labels = self.space.labels()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "degree", "multi_index", "value"])
            for i in range(0, len(self.times), stride):
                for (k, lab), v in zip(labels, self.coeffs[i]):
                    w.writerow([repr(float(self.times[i])), k, lab, repr(float(v))])


def _resolve_operator(operator: str, dim: int) -> str:
    if operator == "auto":
        return "assembled" if dim <= ASSEMBLE_MAX_DIM else "matrix_free"
    if operator not in ("assembled", "matrix_free"):
        raise ValueError(f"unknown operator mode {operator!r}")
    return operator


def _integrate(spec, space, grid, y0, segments, h_default, operator, max_degree):
    """RK4 over consecutive segment lengths; returns states at segment ends."""
    out = [y0.copy()]
    y = y0.copy()
    cache = {}
    if operator == "assembled":
        M = dual_matrix(spec, space.n, grid)
    for length in segments:
        if length == 0:
            out.append(y.copy())
            continue
        nsteps = max(1, int(math.ceil(length / h_default - 1e-9)))
        h = length / nsteps
        if operator == "assembled":
            key = round(h, 15)
            if key not in cache:
                cache[key] = _rk4_propagator(M, h)
            P = cache[key]
            for _ in range(nsteps):
                y = P @ y
        else:
            def f(v):
                img = apply_dual(spec, space.to_poly(v, grid), max_degree=max_degree)
                return space.to_vector(img)
            for _ in range(nsteps):
                k1 = f(y)
                k2 = f(y + 0.5 * h * k1)
                k3 = f(y + 0.5 * h * k2)
                k4 = f(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("moment ODE produced non-finite values; use a smaller step")
        out.append(y.copy())
    return out


def solve_moment_ode(spec: OperatorSpec, g: PolyRep, T: float, n_steps: int = DEFAULT_STEPS,
                     operator: str = "auto", record: bool = True,
                     max_degree: int = DEFAULT_MAX_DEGREE) -> MomentSolution:
    """Integrate ``d/dt g_t = L g_t`` from ``g_0 = g`` to ``T`` with fixed-step RK4.

    ``operator="assembled"`` builds the dual operator as a matrix (used
    automatically when the reduced dimension is at most 2000);
    ``"matrix_free"`` applies ``apply_dual`` at every stage.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if g.degree > max_degree:
        raise DegreeError(f"degree {g.degree} exceeds cap {max_degree}")
    if g.m != spec.m:
        raise ValueError(f"polynomial has m={g.m}, spec has m={spec.m}")
    n = max(g.degree, 0)
    space = coeff_space(spec.m, n)
    mode = _resolve_operator(operator, space.dim)
    y0 = space.to_vector(g)
    if T == 0:
        return MomentSolution(np.array([0.0]), y0[None, :], space, g.grid, 0.0, f"rk4/{mode}")
    h = T / n_steps
    segments = [h] * n_steps if record else [T]
    states = _integrate(spec, space, g.grid, y0, segments, h, mode, max_degree)
    times = np.linspace(0.0, T, n_steps + 1) if record else np.array([0.0, T])
    return MomentSolution(times, np.array(states), space, g.grid, h, f"rk4/{mode}")


def moment(spec: OperatorSpec, g: PolyRep, nu0: MeasureVec, T: float, **kw) -> float:
    """``E[p_g(X_T) | X_0 = nu0]``."""
    sol = solve_moment_ode(spec, g, T, record=False, **kw)
    return poly_eval(sol.final, nu0)


def moment_surface(spec: OperatorSpec, g: PolyRep, nu0: MeasureVec, times,
                   n_steps: int = DEFAULT_STEPS, operator: str = "auto",
                   max_degree: int = DEFAULT_MAX_DEGREE) -> list:
    """Moments at several horizons from one integration (step ``max(times) / n_steps``)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    order = np.argsort(times, kind="stable")
    ts = times[order]
    n = max(g.degree, 0)
    space = coeff_space(spec.m, n)
    mode = _resolve_operator(operator, space.dim)
    tmax = float(ts[-1]) if ts.size else 0.0
    h = tmax / n_steps if tmax > 0 else 1.0
    segments = np.diff(np.concatenate([[0.0], ts]))
    states = _integrate(spec, space, g.grid, space.to_vector(g), segments, h, mode, max_degree)
    vals = np.empty(len(ts))
    for i, y in enumerate(states[1:]):
        vals[i] = poly_eval(space.to_poly(y, g.grid), nu0)
    out = np.empty(len(ts))
    out[order] = vals
    return out.tolist()


def moment_expm(spec: OperatorSpec, g: PolyRep, nu0: MeasureVec, T: float) -> float:
    """Cross-check: exact flow ``exp(T M) g`` of the assembled dual matrix."""
    n = max(g.degree, 0)
    space = coeff_space(spec.m, n)
    if space.dim > ASSEMBLE_MAX_DIM:
        raise ValueError(f"reduced dimension {space.dim} too large for the dense path")
    M = dual_matrix(spec, n, g.grid)
    y = expm(T * M) @ space.to_vector(g)
    return poly_eval(space.to_poly(y, g.grid), nu0)


def check_against_mc(spec: OperatorSpec, g: PolyRep, nu0: MeasureVec, T: float, ensemble,
                     **kw):
    """Compare the moment engine with the Monte Carlo mean of ``p_g(X_T)``."""
    from .simulate import ComparisonReport, terminal_values

    engine = moment(spec, g, nu0, T, **kw)
    return ComparisonReport.from_samples(engine, terminal_values(ensemble, g))
