"""Affine subclass: ``Q2 = 0``.

For these specs the Laplace transform is exponential-affine,
``E[exp(<g, X_T>)] = exp(phi_T + <psi_T, X_0>)`` with::

    d/dt psi = B1 psi + 1/2 alpha psi^2,   psi_0 = g <= 0
    phi_t    = int_0^t <psi_s, b> ds

``solve_riccati`` integrates this directly with RK4; ``solve_riccati_mild``
solves the variation-of-constants form
``psi_t = Q_t g + 1/2 int_0^t Q_{t-s} (alpha psi_s^2) ds`` (``Q_t = exp(t B1)``)
by Picard iteration and serves as an independent cross-check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.linalg import expm

from .generator import OperatorSpec
from .measures import MeasureVec

SIGN_TOL = 1e-12
BLOWUP_NORM = 1e8
DEFAULT_STEPS = 1000


class NotAffineError(ValueError):
    """The spec has a non-zero quadratic part Q2."""


class BlowupError(ArithmeticError):
    """The Riccati solution left the admissible region or exploded."""


def is_affine(spec: OperatorSpec) -> bool:
    """True when ``Q2`` vanishes: ``beta``, ``pi`` and the loadings are all zero."""
    return bool(not np.any(spec.beta_eff) and not np.any(spec.pi) and not np.any(spec.beta))


def _require_affine(spec: OperatorSpec):
    if not is_affine(spec):
        raise NotAffineError("spec is not of affine type: Q2 != 0 (beta, pi or loadings non-zero)")


def _check_g(spec: OperatorSpec, g, check_sign: bool) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (spec.m,):
        raise ValueError(f"g has shape {g.shape}, expected ({spec.m},)")
    if check_sign and np.any(g > 0):
        raise ValueError("g must be non-positive componentwise")
    return g


@dataclass
class RiccatiSolution:
    """``psi`` (rows indexed by time) and ``phi`` on a uniform time grid."""

    times: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    blowup: bool = False
    method: str = "rk4"
    info: dict = field(default_factory=dict)

    def laplace(self, nu0: MeasureVec, index: int = -1) -> float:
        return math.exp(self.phi[index] + float(self.psi[index] @ np.asarray(nu0.weights)))

    def to_csv(self, path):
        m = self.psi.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"psi_{i}" for i in range(m)] + ["phi"])
            for t, row, ph in zip(self.times, self.psi, self.phi):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(ph))])


def _phi(times: np.ndarray, psi: np.ndarray, b: np.ndarray) -> np.ndarray:
    integrand = psi @ b
    if len(times) < 3:
        # fewer than three nodes: trapezoid
        return np.concatenate([[0.0], np.cumsum(np.diff(times) * 0.5 * (integrand[1:] + integrand[:-1]))])
    return np.concatenate([[0.0], cumulative_simpson(integrand, x=times)])


def solve_riccati(spec: OperatorSpec, g, T: float, n_steps: int = DEFAULT_STEPS,
                  check_sign: bool = True) -> RiccatiSolution:
    """RK4 for ``psi' = B1 psi + alpha psi^2 / 2``.

    Integration stops early, with ``blowup=True``, once a component becomes
    positive beyond ``SIGN_TOL`` (only when ``check_sign``) or the norm
    exceeds ``BLOWUP_NORM``. ``check_sign=False`` also admits positive
    ``g``, which is only meaningful over horizons without explosion.
    """
    _require_affine(spec)
    g = _check_g(spec, g, check_sign)
    if T < 0:
        raise ValueError("T must be non-negative")
    B1 = np.asarray(spec.B1)
    half_alpha = 0.5 * np.asarray(spec.alpha)

    def rhs(p):
        return B1 @ p + half_alpha * p * p

    n = n_steps if T > 0 else 0
    h = T / n_steps if T > 0 else 0.0
    psi = np.empty((n + 1, spec.m))
    psi[0] = g
    blowup = False
    last = n
    for k in range(n):
        y = psi[k]
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        nxt = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        psi[k + 1] = nxt
        if (not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > BLOWUP_NORM
                or (check_sign and np.any(nxt > SIGN_TOL))):
            blowup = True
            last = k + 1
            break
    times = np.arange(last + 1) * h
    psi = psi[:last + 1]
    phi = _phi(times, psi, np.asarray(spec.b)) if np.all(np.isfinite(psi)) else np.full(last + 1, np.nan)
    return RiccatiSolution(times, psi, phi, blowup, "rk4", {"step": h})


def laplace(spec: OperatorSpec, g, nu0: MeasureVec, T: float, n_steps: int = DEFAULT_STEPS,
            check_sign: bool = True) -> float:
    """``E[exp(<g, X_T>) | X_0 = nu0] = exp(phi_T + <psi_T, nu0>)``."""
    sol = solve_riccati(spec, g, T, n_steps=n_steps, check_sign=check_sign)
    if sol.blowup:
        raise BlowupError("finite-time explosion (numerical)")
    return sol.laplace(nu0)


def _quadrature_rows(n: int, h: float) -> np.ndarray:
    """``W[k, j]``: weights of node ``j`` in a fourth-order rule for ``int_0^{t_k}``.

    Composite Simpson for even ``k``; Simpson plus a closing 3/8 panel for odd
    ``k >= 3``; for ``k = 1`` the quadratic through nodes 0, 1, 2.
    """
    W = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        if k == 1:
            if n >= 2:
                W[1, :3] = h * np.array([5.0, 8.0, -1.0]) / 12.0
            else:
                W[1, :2] = 0.5 * h
            continue
        simp_end = k if k % 2 == 0 else k - 3
        if simp_end > 0:
            W[k, 0:simp_end + 1:2] += 2 * h / 3
            W[k, 1:simp_end:2] += 4 * h / 3
            W[k, 0] -= h / 3
            W[k, simp_end] -= h / 3
        if k % 2 == 1:
            W[k, k - 3:k + 1] += 3 * h / 8 * np.array([1.0, 3.0, 3.0, 1.0])
    return W


def _convolve(Qh: np.ndarray, Qh_inv: np.ndarray, F: np.ndarray, h: float) -> np.ndarray:
    """``S_k = sum_j W[k, j] Q_{t_k - t_j} F_j`` for the rows of ``_quadrature_rows``.

    Runs in O(n m^2) using the running sums over even and odd nodes,
    ``E_k = Q_h E_{k-1} + [k even] F_k`` and likewise ``O_k``.
    """
    n = F.shape[0] - 1
    m = F.shape[1]
    S = np.zeros_like(F)
    if n == 0:
        return S
    if n == 1:
        S[1] = 0.5 * h * (Qh @ F[0] + F[1])
        return S
    Q3 = Qh @ Qh @ Qh
    E = F[0].copy()
    O = np.zeros(m)
    QkF0 = F[0].copy()                    # Q_{t_k} F_0
    for k in range(1, n + 1):
        E = Qh @ E
        O = Qh @ O
        QkF0 = Qh @ QkF0
        if k % 2 == 0:
            E += F[k]
            S[k] = h / 3 * (2 * E + 4 * O - QkF0 - F[k])
        else:
            O += F[k]
            if k == 1:
                S[1] = h / 12 * (5 * (Qh @ F[0]) + 8 * F[1] - Qh_inv @ F[2])
                continue
            tail = Qh @ (Qh @ (Qh @ F[k - 3] + 3 * F[k - 2]) + 3 * F[k - 1]) + F[k]
            S[k] = 3 * h / 8 * tail
            if k > 3:
                S[k] += Q3 @ S[k - 3]
    return S


def solve_riccati_mild(spec: OperatorSpec, g, T: float, n_steps: int = DEFAULT_STEPS,
                       iters: int = 50, tol: float = 1e-10,
                       check_sign: bool = True) -> RiccatiSolution:
    """Picard iteration on the mild form with ``Q_{kh} = expm(h B1)^k``."""
    _require_affine(spec)
    g = _check_g(spec, g, check_sign)
    m = spec.m
    if T == 0:
        return RiccatiSolution(np.array([0.0]), g[None, :].copy(), np.zeros(1), False,
                               "mild-picard", {"iterations": 0})
    n = n_steps
    h = T / n
    Qh = expm(h * np.asarray(spec.B1))
    Qh_inv = expm(-h * np.asarray(spec.B1))
    free = np.empty((n + 1, m))           # Q_{t_k} g
    free[0] = g
    for k in range(1, n + 1):
        free[k] = Qh @ free[k - 1]
    half_alpha = 0.5 * np.asarray(spec.alpha)
    psi = free.copy()
    converged = False
    for it in range(1, iters + 1):
        F = half_alpha * psi * psi        # (n+1, m)
        new = free + _convolve(Qh, Qh_inv, F, h)
        if not np.all(np.isfinite(new)):
            raise BlowupError("finite-time explosion (numerical)")
        diff = float(np.max(np.abs(new - psi)))
        psi = new
        if diff <= tol:
            converged = True
            break
    if not converged:
        raise RuntimeError(f"mild-form Picard iteration did not converge in {iters} iterations "
                           f"(last sup change {diff:.3e})")
    times = np.arange(n + 1) * h
    blowup = bool(check_sign and np.any(psi > SIGN_TOL))
    return RiccatiSolution(times, psi, _phi(times, psi, np.asarray(spec.b)), blowup,
                           "mild-picard", {"iterations": it, "step": h})


def laplace_vs_mc(spec: OperatorSpec, g, nu0: MeasureVec, T: float, ensemble, **kw):
    """Affine Laplace transform against the Monte Carlo mean of ``exp(<g, X_T>)``."""
    from .simulate import ComparisonReport

    value = laplace(spec, g, nu0, T, **kw)
    samples = np.exp(ensemble.terminal @ np.asarray(g, dtype=float))
    return ComparisonReport.from_samples(value, samples)
