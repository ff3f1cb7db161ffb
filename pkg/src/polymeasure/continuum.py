"""From operators on an interval to parameters on a finite grid.

``discretize_levy`` turns a Levy-type operator
``A g = gamma g' + 1/2 sigma2 g'' + sum_z rate_z (g(x + z) - g(x) - chi(z) g') + m g``
into a matrix ``B1`` with non-negative off-diagonal entries.
``group_action`` evaluates the positive group ``T_t g = k_t * g(Phi_t)``
generated by ``tau g' + h g`` through its flow and cocycle. ``preset``
returns ready-made specs.

Coefficients may be given as callables, arrays sampled on the grid, numbers,
or named built-ins ``{"kind": "constant" | "linear" | "quadratic", "coeffs": [...]}``
(polynomial coefficients in increasing order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .generator import OperatorSpec, pi_beta_coupling
from .measures import Grid, MeasureVec

BUILTIN_DEGREES = {"constant": 0, "linear": 1, "quadratic": 2}


def chi(z: float) -> float:
    """Truncation function: identity on ``[-1, 1]``, zero outside."""
    return z if abs(z) <= 1.0 else 0.0


def _builtin(desc: dict) -> Callable:
    kind = desc.get("kind")
    if kind not in BUILTIN_DEGREES:
        raise ValueError(f"unknown built-in coefficient {kind!r}")
    coeffs = np.atleast_1d(np.asarray(desc.get("coeffs", [0.0]), dtype=float))
    if coeffs.size > BUILTIN_DEGREES[kind] + 1:
        raise ValueError(f"{kind} coefficient takes at most {BUILTIN_DEGREES[kind] + 1} numbers")
    return lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coeffs)


def as_function(coef, grid: Grid | None = None) -> Callable:
    """Turn a coefficient description into a vectorized function of ``x``."""
    if coef is None:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if isinstance(coef, dict):
        return _builtin(coef)
    if callable(coef):
        def f(x, _c=coef):
            x = np.asarray(x, dtype=float)
            out = np.asarray(_c(x), dtype=float)
            if out.shape != x.shape:
                out = np.broadcast_to(out, x.shape) if out.ndim == 0 else \
                    np.array([float(_c(v)) for v in x.ravel()]).reshape(x.shape)
            return out
        return f
    arr = np.asarray(coef, dtype=float)
    if arr.ndim == 0:
        return lambda x: np.full(np.shape(x), float(arr))
    if grid is None or arr.shape != (grid.size,):
        raise ValueError("sampled coefficients need a matching grid")
    xs = grid.as_array()
    return lambda x: np.interp(x, xs, arr)


def sample(coef, grid: Grid) -> np.ndarray:
    return np.asarray(as_function(coef, grid)(grid.as_array()), dtype=float)


@dataclass
class LevySpec:
    """Coefficients of a Levy-type operator on an interval.

    ``jumps`` is a list of ``(size, rate)`` pairs, where ``rate`` is any
    coefficient description. ``killing`` is added on the diagonal.
    """

    gamma: object = None
    sigma2: object = None
    jumps: list = field(default_factory=list)
    killing: object = None


def discretize_levy(spec: LevySpec, grid: Grid, boundary: str = "kill") -> np.ndarray:
    """Upwind/central finite-difference matrix ``B1`` on a uniform grid.

    Jump compensators are folded into the drift and jumps land on the
    nearest node. With ``boundary="kill"`` anything leaving the grid is
    dropped; ``"reflect"`` keeps it at the boundary node instead, so the
    rows of the local part sum to zero.
    """
    if boundary not in ("kill", "reflect"):
        raise ValueError("boundary must be 'kill' or 'reflect'")
    kill = boundary == "kill"
    h = grid.spacing()
    x = grid.as_array()
    m = grid.size
    gamma = sample(spec.gamma, grid)
    sigma2 = sample(spec.sigma2, grid)
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 must be non-negative")
    jumps = []
    for z, rate in spec.jumps:
        r = sample(rate, grid)
        if np.any(r < 0):
            raise ValueError("jump rates must be non-negative")
        jumps.append((float(z), r))
        gamma = gamma - r * chi(float(z))
    B1 = np.zeros((m, m))
    for i in range(m):
        g = gamma[i]
        d = 0.5 * sigma2[i] / h**2
        # (neighbour, rate) pairs; a neighbour off the grid is killed or reflected
        moves = [(i + 1, g / h) if g > 0 else (i - 1, -g / h), (i - 1, d), (i + 1, d)]
        moves += [(int(round((x[i] + z - x[0]) / h)), r[i]) for z, r in jumps]
        for j, rate in moves:
            if rate == 0 or j == i:
                continue
            if not 0 <= j < m:
                if not kill:
                    continue
                B1[i, i] -= rate
                continue
            B1[i, j] += rate
            B1[i, i] -= rate
    B1 += np.diag(sample(spec.killing, grid))
    off = B1 - np.diag(np.diag(B1))
    assert np.all(off >= 0), "discretization produced a negative off-diagonal entry"
    return B1


# ------------------------------------------------------------------ tau groups

@dataclass
class TauGroupSpec:
    """Flow speed ``tau`` and potential ``h`` on ``[a, b]`` (``b`` may be ``inf``)."""

    tau: object
    h: object = None
    a: float = 0.0
    b: float = 1.0

    def functions(self):
        return as_function(self.tau), as_function(self.h)


@dataclass
class AdmissibilityReport:
    status: str                 # "pass" | "fail" | "inconclusive"
    lipschitz: float
    reasons: list

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def check_admissible_tau(spec: TauGroupSpec, n: int = 4001, window: float = 100.0,
                         growth: float = 1.25) -> AdmissibilityReport:
    """Sufficient check via the Lipschitz property.

    Finite endpoints must be zeros of ``tau``. The Lipschitz constant is
    estimated by difference quotients on ``n`` and ``4n - 3`` points; if the
    estimate keeps growing under refinement the result is ``inconclusive``.
    Infinite endpoints are replaced by a window of length ``window``.
    """
    tau, _ = spec.functions()
    a, b = float(spec.a), float(spec.b)
    if not a < b:
        raise ValueError("need a < b")
    lo = a if math.isfinite(a) else (b if math.isfinite(b) else 0.0) - window
    hi = b if math.isfinite(b) else lo + window
    reasons = []
    for e in (a, b):
        if math.isfinite(e):
            v = float(tau(np.array([e]))[0])
            if abs(v) > 1e-12:
                reasons.append(f"tau({e:g}) = {v:g} does not vanish at a finite endpoint")

    def lip(k):
        xs = np.linspace(lo, hi, k)
        return float(np.max(np.abs(np.diff(tau(xs))) / np.diff(xs)))

    L1, L2 = lip(n), lip(4 * n - 3)
    if not (math.isfinite(L1) and math.isfinite(L2)):
        reasons.append("tau is not finite on the sampling grid")
        return AdmissibilityReport("fail" if reasons[:-1] else "inconclusive", math.inf, reasons)
    if reasons:
        return AdmissibilityReport("fail", L2, reasons)
    if L2 > growth * max(L1, 1e-300) and L2 > 1e-12:
        reasons.append("difference quotients grow under refinement; Lipschitz bound not certified")
        return AdmissibilityReport("inconclusive", L2, reasons)
    return AdmissibilityReport("pass", L2, reasons)


def _flow(tau, x0: np.ndarray, t: float, n_steps: int):
    """RK4 trajectory of ``dPhi/ds = tau(Phi)`` for every start point; shape (n+1, len(x0))."""
    h = t / n_steps
    out = np.empty((n_steps + 1, x0.size))
    out[0] = x0
    y = x0.astype(float)
    for k in range(n_steps):
        k1 = tau(y)
        k2 = tau(y + 0.5 * h * k1)
        k3 = tau(y + 0.5 * h * k2)
        k4 = tau(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return out


def group_action(spec: TauGroupSpec, g, grid: Grid, t: float, n_steps: int | None = None,
                 exit_tol: float = 1e-9) -> np.ndarray:
    """``(T_t g)(x) = exp(int_0^t h(Phi_s x) ds) * g(Phi_t x)`` at the grid nodes.

    ``g`` is sampled on ``grid`` and interpolated linearly; nodes whose image
    lands outside the grid range get ``NaN``.
    """
    tau, hfun = spec.functions()
    x = grid.as_array()
    g = np.asarray(g, dtype=float)
    if g.shape != x.shape:
        raise ValueError("g must be sampled on the grid")
    if t == 0:
        return g.copy()
    if n_steps is None:
        n_steps = max(64, 2 * int(math.ceil(abs(t) / 0.002)))
    n_steps += n_steps % 2
    path = _flow(tau, x, t, n_steps)
    a, b = float(spec.a), float(spec.b)
    if (math.isfinite(a) and np.min(path) < a - exit_tol) or \
            (math.isfinite(b) and np.max(path) > b + exit_tol):
        raise ValueError("flow leaves the interval; tau is not admissible in practice")
    hv = hfun(path)
    dt = t / n_steps
    w = np.ones(n_steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    logk = (dt / 3.0) * (w @ hv)
    end = path[-1]
    inside = (end >= x[0] - 1e-12) & (end <= x[-1] + 1e-12)
    vals = np.interp(np.clip(end, x[0], x[-1]), x, g)
    return np.where(inside, np.exp(logk) * vals, np.nan)


# --------------------------------------------------------------------- presets

PRESETS = ("super_brownian", "cir_field", "fisher_snedecor", "black_scholes_field")


def _trapezoid_weights(grid: Grid) -> np.ndarray:
    h = grid.spacing()
    w = np.full(grid.size, h)
    w[[0, -1]] *= 0.5
    return w


def preset(name: str, m: int | None = None, **params):
    """Named model on a uniform grid of ``[0, 1]``; returns ``(spec, grid, nu0)``.

    ``super_brownian``
        ``B1`` a discrete Laplacian (``diffusion``, default 1) with
        reflecting ends unless ``boundary="kill"``, constant
        branching rate ``alpha`` (default 1), no immigration; ``nu0`` the
        trapezoid weights of the Lebesgue measure.
    ``cir_field``
        Independent nodes: ``b = theta`` (0.1), ``B1 = -kappa I`` (0.5),
        ``alpha`` (1); ``nu0`` all ones.
    ``fisher_snedecor``
        As ``cir_field`` plus ``beta = beta_diag I - ahat`` and ``pi = ahat``
        with ``ahat`` constant ``coupling`` (0.1) off the diagonal.
    ``black_scholes_field``
        ``alpha = pi = 0``; one loading of constant height ``sigma`` (0.2),
        so ``m = 1`` gives the lift of geometric Brownian motion.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if name == "super_brownian":
        m = m or 11
        grid = Grid.uniform(0.0, 1.0, m)
        B1 = discretize_levy(LevySpec(sigma2=params.get("diffusion", 1.0)), grid,
                             boundary=params.get("boundary", "reflect"))
        spec = OperatorSpec.from_arrays(m, B1=B1, alpha=params.get("alpha", 1.0),
                                        b=params.get("immigration", 0.0))
        return spec, grid, MeasureVec(grid, _trapezoid_weights(grid))
    m = m or (1 if name == "black_scholes_field" else 5)
    grid = Grid.uniform(0.0, 1.0, m) if m > 1 else Grid((0.0,))
    ones = MeasureVec(grid, np.ones(m))
    if name == "black_scholes_field":
        sigma = np.broadcast_to(np.asarray(params.get("sigma", 0.2), dtype=float), (m,))
        spec = OperatorSpec.from_arrays(m, B1=params.get("B1"), loadings=[sigma])
        return spec, grid, ones
    kappa = params.get("kappa", 0.5)
    base = dict(b=params.get("theta", 0.1), B1=-kappa * np.eye(m), alpha=params.get("alpha", 1.0))
    if name == "cir_field":
        return OperatorSpec.from_arrays(m, **base), grid, ones
    ahat = params.get("coupling", 0.1) * (np.ones((m, m)) - np.eye(m))
    beta, pi = pi_beta_coupling(ahat)
    beta = beta + params.get("beta_diag", 0.2) * np.eye(m)
    return OperatorSpec.from_arrays(m, beta=beta, pi=pi, **base), grid, ones
