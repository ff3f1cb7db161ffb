"""Monte Carlo simulation of the weight process on a finite grid.

The generic scheme is full-truncation Euler for the SDE with drift
``b + B1^T c`` and diffusion matrix ``a(c)`` (see ``generator``). Paths are
processed in blocks of ``BLOCK`` paths; block ``k`` draws its normals from
``SeedSequence([seed, k])``, so results do not depend on the backend or on
how many steps are generated at once.

Binary path layout (``write_binary`` / ``read_binary``), little-endian::

    int64 m, int64 n_steps, int64 n_paths, float64 dt,
    float64 paths[n_paths, n_steps + 1, m]   (C order)

``n_steps`` and ``dt`` describe the stored time slices, which are
``k * dt`` for ``k = 0..n_steps``.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._accel import resolve_backend
from .generator import PSD_TOL, OperatorSpec
from .measures import MeasureVec, PolyRep, poly_eval_batch

BLOCK = 1024
STEP_CHUNK = 256
MAX_STORED = 20_000_000     # floats kept in memory before falling back to terminal-only
_HEADER = struct.Struct("<qqqd")


class NonPSDError(RuntimeError):
    """The diffusion matrix left the PSD cone during simulation."""


@dataclass
class PathEnsemble:
    """Simulated weights ``paths[path, slice, node]`` at ``times``."""

    paths: np.ndarray
    times: np.ndarray
    dt: float
    seed: int | None
    scheme: str

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def m(self) -> int:
        return self.paths.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1, :]


@dataclass
class ComparisonReport:
    """Engine value against a Monte Carlo mean."""

    engine_value: float
    mc_mean: float
    mc_se: float
    z: float
    n_paths: int

    @classmethod
    def from_samples(cls, engine_value: float, samples: np.ndarray) -> "ComparisonReport":
        mean, se = _mean_se(samples)
        diff = mean - engine_value
        if se > 0:
            z = diff / se
        else:
            z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(engine_value)) else math.copysign(math.inf, diff)
        return cls(float(engine_value), mean, se, float(z), int(np.size(samples)))

    def consistent(self, k: float = 3.0) -> bool:
        return abs(self.z) <= k

    def to_dict(self) -> dict:
        return {"engine_value": self.engine_value, "mc_mean": self.mc_mean,
                "mc_se": self.mc_se, "z": self.z, "n_paths": self.n_paths}


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    n = x.size
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for path block ``block``; the pair ``(seed, block)`` defines the stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(block)])))


def brownian_normals(seed: int, n_paths: int, n_steps: int, m: int) -> np.ndarray:
    """Standard normals ``[n_steps, n_paths, m]`` in the layout used by ``simulate``."""
    out = np.empty((n_steps, n_paths, m))
    for blk, start in enumerate(range(0, n_paths, BLOCK)):
        stop = min(start + BLOCK, n_paths)
        out[:, start:stop, :] = block_rng(seed, blk).standard_normal((n_steps, stop - start, m))
    return out


def _record_slices(n_steps: int, record_every: int | None, n_paths: int, m: int) -> int:
    if record_every is None:
        return 1 if n_paths * (n_steps + 1) * m <= MAX_STORED else n_steps
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    return int(record_every)


def simulate(spec: OperatorSpec, nu0: MeasureVec, T: float, n_steps: int, n_paths: int,
             seed: int = 0, *, record_every: int | None = None, normals: np.ndarray | None = None,
             backend: str = "auto", tol: float = PSD_TOL) -> PathEnsemble:
    """Full-truncation Euler paths of the weight process.

    Parameters
    ----------
    record_every
        Keep every ``record_every``-th slice (the terminal slice is always
        kept when ``n_steps`` is a multiple). ``None`` keeps all slices
        unless that would exceed ``MAX_STORED`` floats, then only ``0`` and ``T``.
    normals
        Optional standard normals ``[n_steps, n_paths, m]`` replacing the
        seeded streams, e.g. for common random numbers across step sizes.
    backend
        ``"numba"``, ``"numpy"`` or ``"auto"``.
    """
    if T < 0 or n_steps < 1 or n_paths < 1:
        raise ValueError("need T >= 0, n_steps >= 1, n_paths >= 1")
    c0 = np.asarray(nu0.weights, dtype=float)
    m = spec.m
    if c0.shape != (m,):
        raise ValueError(f"initial weights have shape {c0.shape}, spec has m={m}")
    if normals is not None and normals.shape != (n_steps, n_paths, m):
        raise ValueError(f"normals must have shape {(n_steps, n_paths, m)}")
    every = _record_slices(n_steps, record_every, n_paths, m)
    if n_steps % every:
        raise ValueError("n_steps must be a multiple of record_every")
    n_rec = n_steps // every
    backend = resolve_backend(backend)
    kernel = _kernels.euler_chunk_nb if backend == "numba" else _kernels.euler_chunk_np

    dt = T / n_steps
    args = (float(dt), np.ascontiguousarray(spec.b), np.ascontiguousarray(spec.B1.T),
            np.ascontiguousarray(spec.alpha), np.ascontiguousarray(spec.beta_eff),
            np.ascontiguousarray(spec.pi))
    paths = np.empty((n_paths, n_rec + 1, m))
    paths[:, 0, :] = c0
    for blk, start in enumerate(range(0, n_paths, BLOCK)):
        stop = min(start + BLOCK, n_paths)
        state = np.tile(c0, (stop - start, 1))
        rng = block_rng(seed, blk) if normals is None else None
        done = 0
        while done < n_steps:
            k = min(STEP_CHUNK, n_steps - done)
            if normals is None:
                Z = rng.standard_normal((k, stop - start, m))
            else:
                Z = np.ascontiguousarray(normals[done:done + k, start:stop, :])
            rec = np.empty((k, stop - start, m))
            p, s, wmin = kernel(state, Z, *args, rec, True, tol)
            if p >= 0:
                raise NonPSDError(
                    f"diffusion matrix not PSD (min eigenvalue {wmin:.3e}) on path {start + p} "
                    f"at step {done + s}; the operator spec is probably not admissible")
            for j in range(k):
                step = done + j + 1
                if step % every == 0:
                    paths[start:stop, step // every, :] = rec[j]
            done += k
    if np.any(paths < 0):  # pragma: no cover - guaranteed by truncation
        raise AssertionError("negative weights in ensemble")
    times = np.arange(n_rec + 1) * (dt * every)
    return PathEnsemble(paths, times, dt, seed, f"full-truncation-euler/{backend}")


def simulate_gbm_lift(mu: MeasureVec, sigma: float, T: float, n_paths: int, seed: int = 0,
                      n_steps: int = 1) -> PathEnsemble:
    """Exact paths ``S_t mu`` with ``S`` a driftless geometric Brownian motion, ``S_0 = 1``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    dt = T / n_steps
    W = np.zeros((n_paths, n_steps + 1))
    for blk, start in enumerate(range(0, n_paths, BLOCK)):
        stop = min(start + BLOCK, n_paths)
        dW = block_rng(seed, blk).standard_normal((stop - start, n_steps)) * math.sqrt(dt)
        W[start:stop, 1:] = np.cumsum(dW, axis=1)
    t = np.arange(n_steps + 1) * dt
    S = np.exp(sigma * W - 0.5 * sigma**2 * t[None, :])
    paths = S[:, :, None] * np.asarray(mu.weights)[None, None, :]
    return PathEnsemble(paths, t, dt, seed, "exact-gbm")


def terminal_values(ensemble: PathEnsemble, p: PolyRep, index: int = -1) -> np.ndarray:
    return poly_eval_batch(p, ensemble.paths[:, index, :])


def estimate(ensemble: PathEnsemble, p: PolyRep, index: int = -1) -> tuple:
    """Sample mean and standard error of ``p(X_t)`` at slice ``index`` (default terminal)."""
    return _mean_se(terminal_values(ensemble, p, index))


def qv_estimate(ensemble: PathEnsemble, p: PolyRep, q: PolyRep) -> float:
    """Path-averaged realized covariation ``sum_k dp_k dq_k`` of two linear functionals."""
    for r in (p, q):
        if r.degree > 1:
            raise ValueError("qv_estimate takes polynomials of degree <= 1")
    if ensemble.paths.shape[1] < 3:
        raise ValueError("ensemble stores no intermediate slices; simulate with record_every")
    gp = np.asarray(p.coeff(1).values) if p.degree == 1 else np.zeros(ensemble.m)
    gq = np.asarray(q.coeff(1).values) if q.degree == 1 else np.zeros(ensemble.m)
    d = np.diff(ensemble.paths, axis=1)
    return float(np.mean(np.sum((d @ gp) * (d @ gq), axis=1)))


def summary_csv(ensemble: PathEnsemble, polys: dict, path) -> None:
    """Per-slice mean and standard error of named polynomials."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "name", "mean", "se"])
        for k, t in enumerate(ensemble.times):
            for name, p in polys.items():
                mean, se = estimate(ensemble, p, k)
                w.writerow([repr(float(t)), name, repr(mean), repr(se)])


def write_binary(ensemble: PathEnsemble, path) -> None:
    n_paths, n_rec, m = ensemble.paths.shape
    step = float(ensemble.times[1] - ensemble.times[0]) if n_rec > 1 else 0.0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(m, n_rec - 1, n_paths, step))
        fh.write(np.ascontiguousarray(ensemble.paths, dtype="<f8").tobytes())


def read_binary(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        m, n_steps, n_paths, dt = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    paths = data.reshape(n_paths, n_steps + 1, m).astype(float)
    return PathEnsemble(paths, np.arange(n_steps + 1) * dt, dt, None, "binary")
