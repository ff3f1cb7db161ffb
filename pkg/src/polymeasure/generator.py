"""Generator of a measure-valued polynomial diffusion on a finite grid.

For a function ``f`` of the weight vector ``c`` the generator reads::

    Lf(c) = <df, b> + <B1 df, c>
            + 1/2 ( sum_i alpha_i c_i d2f_ii + c^T Q2(d2f) c )

    Q2(G)_ij = 1/2 (pi_ij G_ii + pi_ji G_jj) + (beta_ij + sum_k a_k(i) a_k(j)) G_ij

``B1`` acts on functions, ``(B1 g)(i) = sum_j B1[i, j] g(j)``, so the drift
of the weights is ``b + B1^T c``. The loadings ``a_k`` are the diagonal
generators of positive groups and enter only through ``beta + sum a_k a_k^T``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    DEFAULT_MAX_DEGREE,
    DegreeError,
    GridMismatchError,
    MeasureVec,
    PolyRep,
    partial,
    partial2,
    poly_mul,
    symmetrize,
)

PSD_TOL = 1e-10


def _ro(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """Parameters ``(b, B1, alpha, beta, pi, loadings)`` of the generator."""

    b: np.ndarray
    B1: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pi: np.ndarray
    loadings: np.ndarray = None

    def __post_init__(self):
        b = _ro(self.b)
        if b.ndim != 1:
            raise ValueError("b must be a vector")
        m = b.size
        shapes = {"B1": (m, m), "alpha": (m,), "beta": (m, m), "pi": (m, m)}
        for name, shape in shapes.items():
            arr = _ro(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        load = np.zeros((0, m)) if self.loadings is None else np.array(self.loadings, dtype=float)
        if load.size == 0:
            load = np.zeros((0, m))
        load = np.atleast_2d(load)
        if load.shape[1] != m:
            raise ValueError(f"loadings must have {m} columns, got shape {load.shape}")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "loadings", _ro(load))
        for name in ("b", "B1", "alpha", "beta", "pi", "loadings"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def beta_eff(self) -> np.ndarray:
        """``beta + sum_k a_k a_k^T``: the loadings folded into the symmetric kernel."""
        return self.beta + self.loadings.T @ self.loadings

    @classmethod
    def zeros(cls, m: int) -> "OperatorSpec":
        z = np.zeros(m)
        Z = np.zeros((m, m))
        return cls(b=z, B1=Z, alpha=z, beta=Z, pi=Z)

    @classmethod
    def from_arrays(cls, m: int, b=None, B1=None, alpha=None, beta=None, pi=None,
                    loadings=None) -> "OperatorSpec":
        """Build a spec, filling unspecified parameters with zeros."""
        def vec(x):
            return np.zeros(m) if x is None else np.broadcast_to(np.asarray(x, float), (m,))

        def mat(x):
            return np.zeros((m, m)) if x is None else np.asarray(x, float).reshape(m, m)

        return cls(b=vec(b), B1=mat(B1), alpha=vec(alpha), beta=mat(beta), pi=mat(pi),
                   loadings=loadings)

    @classmethod
    def gbm_lift(cls, m: int, sigma: float) -> "OperatorSpec":
        """Generator of ``S_t mu`` with ``dS = sigma S dW``: one constant loading."""
        return cls.from_arrays(m, loadings=[np.full(m, float(sigma))])

    def to_dict(self) -> dict:
        return {
            "b": self.b.tolist(),
            "B1": self.B1.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "pi": self.pi.tolist(),
            "loadings": self.loadings.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, m: int | None = None) -> "OperatorSpec":
        if m is None:
            for key in ("b", "alpha"):
                if key in d:
                    m = len(d[key])
                    break
            else:
                for key in ("B1", "beta", "pi"):
                    if key in d:
                        m = len(d[key])
                        break
        if m is None:
            raise ValueError("cannot infer grid size from spec")
        return cls.from_arrays(m, d.get("b"), d.get("B1"), d.get("alpha"), d.get("beta"),
                               d.get("pi"), d.get("loadings"))


def drift(spec: OperatorSpec, c: np.ndarray) -> np.ndarray:
    """Drift of the weight vector, ``b + B1^T c``."""
    return spec.b + spec.B1.T @ c


def diffusion_matrix(spec: OperatorSpec, c: np.ndarray) -> np.ndarray:
    """Diffusion matrix ``a(c)`` matched to the second-order part of the generator."""
    c = np.asarray(c, dtype=float)
    a = spec.beta_eff * np.outer(c, c)
    a[np.diag_indices_from(a)] += spec.alpha * c + c * (spec.pi @ c)
    return a


def _q2(spec: OperatorSpec, H: np.ndarray, beta_eff=None) -> np.ndarray:
    be = spec.beta_eff if beta_eff is None else beta_eff
    d = np.diag(H)
    return 0.5 * (spec.pi * d[:, None] + spec.pi.T * d[None, :]) + be * H


def generator_value(spec: OperatorSpec, c, grad, hess) -> float:
    """Generator applied to any ``f`` with ``df(c) = grad`` and ``d2f(c) = hess``."""
    c = np.asarray(c, dtype=float)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    first = grad @ spec.b + c @ (spec.B1 @ grad)
    q1 = np.sum(spec.alpha * np.diag(hess) * c)
    q2 = c @ _q2(spec, hess) @ c
    return float(first + 0.5 * (q1 + q2))


def apply_generator(spec: OperatorSpec, p: PolyRep, nu: MeasureVec,
                    max_degree: int = DEFAULT_MAX_DEGREE) -> float:
    """``Lp(nu)`` evaluated from the first and second directional derivatives."""
    if p.m != spec.m:
        raise GridMismatchError(f"polynomial has m={p.m}, spec has m={spec.m}")
    if p.degree > max_degree:
        raise DegreeError(f"degree {p.degree} exceeds cap {max_degree}")
    if p.degree <= 0:
        return 0.0
    return generator_value(spec, nu.weights, partial(p, nu), partial2(p, nu).values)


def _dual_term(spec: OperatorSpec, g: np.ndarray, beta_eff: np.ndarray):
    """Image of one degree-k coefficient: returns (degree-k part, degree-(k-1) part)."""
    k = g.ndim
    if k == 0:
        return None, None
    # B1 on each slot: k * Sym(B1 on slot 0)
    u = np.moveaxis(np.tensordot(spec.B1, g, axes=([1], [0])), 0, -1)
    top = k * symmetrize(u, start=k - 1)
    # b contracted into one slot; already symmetric
    low = k * np.tensordot(spec.b, g, axes=([0], [0]))
    if k >= 2:
        diag = np.diagonal(g, axis1=0, axis2=1)          # shape rest + (m,)
        h = diag * spec.alpha                             # alpha(x) g(x, x, rest)
        low = low + 0.5 * k * (k - 1) * symmetrize(h, start=k - 2)
        dfront = np.moveaxis(diag, -1, 0)                 # d(x, rest) = g(x, x, rest)
        pad = (slice(None), slice(None)) + (None,) * (k - 2)
        t = (0.5 * spec.pi[pad] * dfront[:, None]
             + 0.5 * spec.pi.T[pad] * dfront[None, :]
             + beta_eff[pad] * g)
        top = top + 0.5 * k * (k - 1) * symmetrize(t, start=2)
    return top, low


def apply_dual(spec: OperatorSpec, p: PolyRep, max_degree: int = DEFAULT_MAX_DEGREE) -> PolyRep:
    """Coefficients of ``Lp``: the dual operator acting on ``p``'s coefficient vector.

    The result never has larger degree than ``p``.
    """
    if p.m != spec.m:
        raise GridMismatchError(f"polynomial has m={p.m}, spec has m={spec.m}")
    if p.degree > max_degree:
        raise DegreeError(f"degree {p.degree} exceeds cap {max_degree}")
    n = max(p.degree, 0)
    out = [np.zeros((p.m,) * k) for k in range(n + 1)]
    be = spec.beta_eff
    for k, g in enumerate(p.terms):
        if k == 0 or not np.any(g):
            continue
        top, low = _dual_term(spec, g, be)
        out[k] = out[k] + top
        out[k - 1] = out[k - 1] + low
    return PolyRep(p.grid, out, assume_symmetric=True, max_degree=max_degree)


def carre_du_champ(spec: OperatorSpec, p: PolyRep, q: PolyRep, nu: MeasureVec,
                   max_degree: int = DEFAULT_MAX_DEGREE) -> float:
    """``Gamma(p, q)(nu) = L(pq) - p Lq - q Lp`` at ``nu``."""
    pq = poly_mul(p, q, max_degree=max_degree)
    return (apply_generator(spec, pq, nu, max_degree)
            - p(nu) * apply_generator(spec, q, nu, max_degree)
            - q(nu) * apply_generator(spec, p, nu, max_degree))


# ---------------------------------------------------------------- validation

@dataclass
class ConditionResult:
    name: str
    description: str
    passed: bool
    witness: object = None

    def to_dict(self):
        return {"name": self.name, "description": self.description, "passed": bool(self.passed),
                "witness": self.witness}


@dataclass
class ValidationReport:
    conditions: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failed(self) -> list:
        return [c.name for c in self.conditions if not c.passed]

    def __getitem__(self, name) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"ok": self.ok, "conditions": [c.to_dict() for c in self.conditions]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def min_eig(A: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])


def _psd_ok(A, tol):
    scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
    lam = min_eig(A)
    return lam >= -tol * scale, lam


def _first_index(mask):
    idx = np.argwhere(mask)
    return [int(i) for i in idx[0]] if idx.size else None


def validate(spec: OperatorSpec, n_samples: int = 256, seed: int = 0,
             tol: float = PSD_TOL) -> ValidationReport:
    """Check the admissibility conditions of ``spec``.

    The ``(beta, pi)`` matrix condition is checked on ``beta + sum a_k a_k^T``:
    first by the sufficient test (that kernel PSD and ``pi >= 0``), and if
    that fails by sampling ``n_samples`` weight vectors log-uniform in
    ``[1e-3, 1e3]``. The sampled test is necessary only.
    """
    m = spec.m
    rep = ValidationReport()
    off = ~np.eye(m, dtype=bool)

    bad = spec.b < 0
    rep.conditions.append(ConditionResult(
        "immigration_nonnegative", "immigration measure b >= 0", not bad.any(),
        None if not bad.any() else {"index": _first_index(bad), "value": float(spec.b[bad][0])}))

    bad = (spec.B1 < 0) & off
    rep.conditions.append(ConditionResult(
        "positive_minimum_principle",
        "positive minimum principle: B1 has non-negative off-diagonal entries",
        not bad.any(),
        None if not bad.any() else {"index": _first_index(bad),
                                    "value": float(spec.B1[bad][0])}))

    bad = spec.alpha < 0
    rep.conditions.append(ConditionResult(
        "alpha_nonnegative", "Q1 coefficient alpha >= 0", not bad.any(),
        None if not bad.any() else {"index": _first_index(bad),
                                    "value": float(spec.alpha[bad][0])}))

    asym = np.abs(spec.beta - spec.beta.T)
    sym_ok = bool(np.all(asym <= 1e-12 * max(1.0, float(np.max(np.abs(spec.beta))))))
    rep.conditions.append(ConditionResult(
        "beta_symmetric", "beta is symmetric", sym_ok,
        None if sym_ok else {"index": _first_index(asym == asym.max())}))

    be = spec.beta_eff
    bad = np.diag(be) < 0
    rep.conditions.append(ConditionResult(
        "beta_diagonal_nonnegative", "beta(x, x) >= 0", not bad.any(),
        None if not bad.any() else {"index": _first_index(bad)}))

    bad_pi = (spec.pi < 0) | (~off & (spec.pi != 0))
    rep.conditions.append(ConditionResult(
        "pi_nonnegative", "pi >= 0 with zero diagonal", not bad_pi.any(),
        None if not bad_pi.any() else {"index": _first_index(bad_pi)}))

    sym_be = 0.5 * (be + be.T)
    det_ok, lam = _psd_ok(sym_be, tol)
    if det_ok and not bad_pi.any():
        rep.conditions.append(ConditionResult(
            "beta_pi_psd", "beta + Diag(pi c) Diag(c)^-1 is PSD for all c > 0 "
            "(certified: beta PSD and pi >= 0)", True))
    else:
        rng = np.random.default_rng(seed)
        witness = None
        for _ in range(n_samples):
            c = 10.0 ** rng.uniform(-3.0, 3.0, size=m)
            A = sym_be + np.diag((spec.pi @ c) / c)
            ok, lam = _psd_ok(A, tol)
            if not ok:
                witness = {"c": c.tolist(), "min_eigenvalue": lam}
                break
        rep.conditions.append(ConditionResult(
            "beta_pi_psd", "beta + Diag(pi c) Diag(c)^-1 is PSD for all c > 0 "
            f"(sampled, {n_samples} draws; necessary only)", witness is None, witness))
    return rep


def pi_beta_coupling(ahat) -> tuple:
    """``(beta, pi)`` with ``pi = ahat`` and ``beta = -ahat`` off the diagonal.

    For a symmetric non-negative ``ahat`` this pair always satisfies the
    (beta, pi) matrix condition: the matrix is a weighted graph Laplacian.
    """
    ahat = np.array(ahat, dtype=float)
    if ahat.ndim != 2 or ahat.shape[0] != ahat.shape[1]:
        raise ValueError("ahat must be square")
    if not np.allclose(ahat, ahat.T) or np.any(ahat < 0):
        raise ValueError("ahat must be symmetric and non-negative")
    np.fill_diagonal(ahat, 0.0)
    return -ahat, ahat.copy()


def random_spec(m: int, rng: np.random.Generator, n_loadings: int = 1,
                affine: bool = False) -> OperatorSpec:
    """Random admissible spec: a PSD kernel plus a coupled ``pi = -beta`` part."""
    b = rng.uniform(0.0, 1.0, m)
    B1 = rng.uniform(0.0, 1.0, (m, m))
    np.fill_diagonal(B1, -rng.uniform(0.5, 2.0, m) - B1.sum(axis=1) + np.diag(B1))
    alpha = rng.uniform(0.0, 1.0, m)
    if affine:
        return OperatorSpec.from_arrays(m, b=b, B1=B1, alpha=alpha)
    L = rng.normal(size=(m, m)) * 0.3
    ahat = rng.uniform(0.0, 0.5, (m, m))
    ahat = 0.5 * (ahat + ahat.T)
    np.fill_diagonal(ahat, 0.0)
    beta = L @ L.T - ahat
    pi = ahat.copy()
    loadings = rng.normal(size=(n_loadings, m)) * 0.3
    return OperatorSpec.from_arrays(m, b=b, B1=B1, alpha=alpha, beta=beta, pi=pi,
                                    loadings=loadings)


# -------------------------------------------------------- maximum principle

class ProbeFunction:
    """Cylindrical test function ``f(c) = phi(G c)``.

    ``phi(y) = P(y) * exp(-damping * |y|^2)`` with ``P`` a quadratic
    polynomial ``p0 + p1.y + y^T P2 y``; ``damping = 0`` leaves ``P`` itself.
    """

    def __init__(self, inner, p0=0.0, p1=None, P2=None, damping: float = 1.0):
        G = np.atleast_2d(np.asarray(inner, dtype=float))
        r = G.shape[0]
        self.G = G
        self.p0 = float(p0)
        self.p1 = np.zeros(r) if p1 is None else np.asarray(p1, float).reshape(r)
        P2 = np.zeros((r, r)) if P2 is None else np.asarray(P2, float).reshape(r, r)
        self.P2 = 0.5 * (P2 + P2.T)
        self.damping = float(damping)

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @classmethod
    def constant(cls, m: int, value: float = 1.0) -> "ProbeFunction":
        return cls(np.zeros((1, m)), p0=value, damping=0.0)

    @classmethod
    def linear(cls, g, scale: float = 1.0) -> "ProbeFunction":
        """``scale * <g, nu>``."""
        return cls(np.atleast_2d(g), p1=[scale], damping=0.0)

    @classmethod
    def random(cls, m: int, rng: np.random.Generator, r: int = 2,
               scale: float = 1.0 / 30.0) -> "ProbeFunction":
        """Random bump: ``P(0) > 0`` so the supremum over ``R^m_+`` is attained."""
        G = rng.uniform(-1.0, 1.0, (r, m)) * scale
        p0 = rng.uniform(0.5, 1.5)
        p1 = rng.normal(size=r)
        P2 = rng.normal(size=(r, r))
        return cls(G, p0, p1, P2, damping=1.0)

    def _phi(self, y):
        P = self.p0 + self.p1 @ y + y @ self.P2 @ y
        dP = self.p1 + 2.0 * self.P2 @ y
        d2P = 2.0 * self.P2
        if self.damping == 0.0:
            return P, dP, d2P
        k = self.damping
        e = np.exp(-k * (y @ y))
        de = -2.0 * k * y * e
        d2e = (4.0 * k * k * np.outer(y, y) - 2.0 * k * np.eye(y.size)) * e
        val = P * e
        grad = dP * e + P * de
        hess = d2P * e + np.outer(dP, de) + np.outer(de, dP) + P * d2e
        return val, grad, hess

    def value(self, c) -> float:
        y = self.G @ np.asarray(c, float)
        P = self.p0 + self.p1 @ y + y @ self.P2 @ y
        if self.damping == 0.0:
            return float(P)
        return float(P * np.exp(-self.damping * (y @ y)))

    def value_grad(self, c):
        y = self.G @ np.asarray(c, float)
        P = self.p0 + self.p1 @ y + y @ self.P2 @ y
        dP = self.p1 + 2.0 * self.P2 @ y
        if self.damping == 0.0:
            return float(P), self.G.T @ dP
        e = np.exp(-self.damping * (y @ y))
        return float(P * e), self.G.T @ ((dP - 2.0 * self.damping * P * y) * e)

    def value_grad_hess(self, c):
        v, g, h = self._phi(self.G @ np.asarray(c, float))
        return float(v), self.G.T @ g, self.G.T @ h @ self.G


@dataclass
class ProbeReport:
    maximizer: np.ndarray
    value: float
    gradient: np.ndarray
    first_order_ok: bool
    second_order_ok: bool
    generator_value: float
    generator_ok: bool
    converged: bool
    restarts: int
    tol: float

    @property
    def violation(self) -> bool:
        """Any failed check at the located maximizer."""
        return not (self.first_order_ok and self.second_order_ok and self.generator_ok)


def _project_ascent(f: ProbeFunction, x, max_iter=300, gtol=1e-10):
    val, g = f.value_grad(x)
    step = 1.0
    for _ in range(max_iter):
        pg = np.where(x > 0, g, np.maximum(g, 0.0))
        if np.max(np.abs(pg)) < gtol:
            break
        while True:
            xn = np.maximum(x + step * g, 0.0)
            vn = f.value(xn)
            if vn >= val + 1e-4 * (g @ (xn - x)) and vn >= val:
                break
            step *= 0.5
            if step < 1e-14:
                return x
        moved = np.max(np.abs(xn - x))
        x, val = xn, vn
        _, g = f.value_grad(x)
        step = min(step * 2.0, 1e6)
        if moved < 1e-15:
            break
    return x


def _newton_polish(f: ProbeFunction, x, iters=60, zero_tol=1e-12):
    """Active-set Newton refinement so the KKT residual reaches round-off."""
    for _ in range(iters):
        val, g, H = f.value_grad_hess(x)
        free = (x > zero_tol) | (g > 0)
        if not free.any():
            break
        gf = g[free]
        if np.max(np.abs(gf)) < 1e-14:
            break
        Hf = H[np.ix_(free, free)]
        d = np.zeros_like(x)
        try:
            lam = np.linalg.eigvalsh(Hf)
            if lam[-1] < 0:
                d[free] = -np.linalg.solve(Hf, gf)
            else:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            d[free] = -np.linalg.lstsq(Hf, gf, rcond=1e-12)[0]
            if d @ g <= 0:
                d[free] = gf
        t = 1.0
        improved = False
        for _ in range(40):
            xn = np.maximum(x + t * d, 0.0)
            if f.value(xn) >= val - 1e-15 * max(1.0, abs(val)):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        x = xn
    return x


def pmp_probe(spec: OperatorSpec, f: ProbeFunction, restarts: int = 20, seed: int = 0,
              tol: float = 1e-6, start_box: float = 100.0, polish: int = 3) -> ProbeReport:
    """Maximize ``f`` over ``R^m_+`` and check optimality conditions and ``Lf <= 0`` there.

    Multi-start projected gradient ascent (origin plus ``restarts`` uniform
    starts in ``[0, start_box]^m``, each capped at a few hundred iterations),
    then active-set Newton polishing of the ``polish`` best candidates.
    """
    if f.m != spec.m:
        raise GridMismatchError(f"probe has m={f.m}, spec has m={spec.m}")
    rng = np.random.default_rng(seed)
    starts = [np.zeros(spec.m)] + [rng.uniform(0.0, start_box, spec.m) for _ in range(restarts)]
    cands = []
    for x0 in starts:
        x = _project_ascent(f, x0)
        cands.append((f.value(x), x))
    cands.sort(key=lambda t: -t[0])
    best, best_val = None, -np.inf
    for _, x in cands[:polish]:
        x = _newton_polish(f, x)
        v = f.value(x)
        if v > best_val:
            best, best_val = x, v
    x = best
    val, g, H = f.value_grad_hess(x)
    support = x > tol
    first_ok = bool(np.all(g <= tol) and np.all(np.abs(g[support]) <= tol))
    if support.any():
        second_ok = bool(np.linalg.eigvalsh(H[np.ix_(support, support)])[-1] <= tol)
    else:
        second_ok = True
    lf = generator_value(spec, x, g, H)
    return ProbeReport(maximizer=x, value=val, gradient=g, first_order_ok=first_ok,
                       second_order_ok=second_ok, generator_value=lf, generator_ok=lf <= tol,
                       converged=first_ok and second_ok, restarts=restarts, tol=tol)
