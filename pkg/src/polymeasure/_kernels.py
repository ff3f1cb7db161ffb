"""Euler step kernels: one numba version (per path) and one numpy version (per batch).

Both follow the same arithmetic:

* ``a(c)`` from ``(alpha, beta_eff, pi)``;
* a square root ``L L^T = a`` by semidefinite Cholesky, falling back to a
  symmetric eigendecomposition with eigenvalues clipped at zero when a pivot
  is negative or a zero pivot leaves a non-zero column;
* ``c <- max(c + (b + B1^T c) dt + L z sqrt(dt), 0)``.

A negative eigenvalue below ``-tol * max(1, max|a|)`` aborts the run.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit

PIVOT_RTOL = 1e-12
COLUMN_RTOL = 1e-8


@njit(cache=True, inline="always")
def _sqrt_psd_nb(a, L, tol):
    m = a.shape[0]
    amax = 0.0
    dmax = 0.0
    for i in range(m):
        if a[i, i] > dmax:
            dmax = a[i, i]
        for j in range(m):
            if abs(a[i, j]) > amax:
                amax = abs(a[i, j])
    for i in range(m):
        for j in range(m):
            L[i, j] = 0.0
    if amax == 0.0:
        return 0.0
    eps = PIVOT_RTOL * dmax
    ceps = COLUMN_RTOL * amax
    chol_ok = True
    for j in range(m):
        d = a[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if d > eps:
            r = math.sqrt(d)
            L[j, j] = r
            for i in range(j + 1, m):
                s = a[i, j]
                for k in range(j):
                    s -= L[i, k] * L[j, k]
                L[i, j] = s / r
        elif d >= -eps:
            for i in range(j + 1, m):
                s = a[i, j]
                for k in range(j):
                    s -= L[i, k] * L[j, k]
                if abs(s) > ceps:
                    chol_ok = False
                    break
            if not chol_ok:
                break
        else:
            chol_ok = False
            break
    if chol_ok:
        return 0.0
    w, V = np.linalg.eigh(a)
    wmin = w[0]
    if wmin < -tol * max(1.0, amax):
        return wmin
    for i in range(m):
        for j in range(m):
            L[i, j] = V[i, j] * math.sqrt(max(w[j], 0.0))
    return 0.0


@njit(cache=True)
def _euler_diag_nb(state, Z, dt, b, B1T, alpha, beta_eff, pi, rec, record, tol):
    # a(c) is diagonal: the semidefinite Cholesky reduces to per-node square roots
    n_paths, m = state.shape
    sq = math.sqrt(dt)
    c = np.empty(m)
    for s in range(Z.shape[0]):
        for p in range(n_paths):
            dmax = 0.0
            for i in range(m):
                c[i] = state[p, i]
            for i in range(m):
                pc = 0.0
                for j in range(m):
                    pc += pi[i, j] * c[j]
                d = beta_eff[i, i] * c[i] * c[i] + (alpha[i] * c[i] + c[i] * pc)
                if d > dmax:
                    dmax = d
            for i in range(m):
                pc = 0.0
                for j in range(m):
                    pc += pi[i, j] * c[j]
                d = beta_eff[i, i] * c[i] * c[i] + (alpha[i] * c[i] + c[i] * pc)
                if d > PIVOT_RTOL * dmax:
                    r = math.sqrt(d)
                elif d >= -tol * max(1.0, dmax, -d):
                    r = 0.0
                else:
                    return p, s, d
                x = b[i]
                for j in range(m):
                    x += B1T[i, j] * c[j]
                x = c[i] + x * dt + r * Z[s, p, i] * sq
                state[p, i] = x if x > 0.0 else 0.0
            if record:
                for i in range(m):
                    rec[s, p, i] = state[p, i]
    return -1, -1, 0.0


@njit(cache=True)
def euler_chunk_nb(state, Z, dt, b, B1T, alpha, beta_eff, pi, rec, record, tol):
    """Advance ``state`` (paths x m) through ``Z.shape[0]`` steps in place.

    Returns ``(path, step, min_eig)``; ``path == -1`` means success.
    """
    n_paths, m = state.shape
    n_steps = Z.shape[0]
    sq = math.sqrt(dt)
    diagonal = True
    for i in range(m):
        for j in range(m):
            if i != j and beta_eff[i, j] != 0.0:
                diagonal = False
    if diagonal:
        return _euler_diag_nb(state, Z, dt, b, B1T, alpha, beta_eff, pi, rec, record, tol)
    a = np.empty((m, m))
    L = np.empty((m, m))
    c = np.empty(m)
    for s in range(n_steps):
        for p in range(n_paths):
            for i in range(m):
                c[i] = state[p, i]
            for i in range(m):
                for j in range(m):
                    a[i, j] = beta_eff[i, j] * c[i] * c[j]
                pc = 0.0
                for j in range(m):
                    pc += pi[i, j] * c[j]
                a[i, i] += alpha[i] * c[i] + c[i] * pc
            bad = _sqrt_psd_nb(a, L, tol)
            if bad < 0.0:
                return p, s, bad
            for i in range(m):
                x = b[i]
                for j in range(m):
                    x += B1T[i, j] * c[j]
                noise = 0.0
                for j in range(m):
                    noise += L[i, j] * Z[s, p, j]
                x = c[i] + x * dt + noise * sq
                state[p, i] = x if x > 0.0 else 0.0
            if record:
                for i in range(m):
                    rec[s, p, i] = state[p, i]
    return -1, -1, 0.0


def _sqrt_psd_np(a, tol):
    """Batched version of ``_sqrt_psd_nb``; returns ``(L, bad_index, min_eig)``."""
    n, m, _ = a.shape
    L = np.zeros_like(a)
    amax = np.abs(a).reshape(n, -1).max(axis=1)
    dmax = np.maximum(np.diagonal(a, axis1=1, axis2=2).max(axis=1), 0.0)
    eps = PIVOT_RTOL * dmax
    ceps = COLUMN_RTOL * amax
    ok = amax > 0.0          # all-zero matrices keep L = 0
    chol = ok.copy()
    for j in range(m):
        d = a[:, j, j].copy()
        for k in range(j):
            d -= L[:, j, k] * L[:, j, k]
        pos = chol & (d > eps)
        zero = chol & ~pos & (d >= -eps)
        chol &= pos | zero
        r = np.sqrt(np.where(pos, d, 1.0))
        L[:, j, j] = np.where(pos, r, 0.0)
        for i in range(j + 1, m):
            s = a[:, i, j].copy()
            for k in range(j):
                s -= L[:, i, k] * L[:, j, k]
            L[:, i, j] = np.where(pos, s / r, 0.0)
            chol &= ~(zero & (np.abs(s) > ceps))
    fall = ok & ~chol
    if np.any(fall):
        idx = np.flatnonzero(fall)
        w, V = np.linalg.eigh(a[idx])
        thr = -tol * np.maximum(1.0, amax[idx])
        badm = w[:, 0] < thr
        if np.any(badm):
            first = int(np.argmax(badm))
            return L, int(idx[first]), float(w[first, 0])
        L[idx] = V * np.sqrt(np.maximum(w, 0.0))[:, None, :]
    return L, -1, 0.0


def euler_chunk_np(state, Z, dt, b, B1T, alpha, beta_eff, pi, rec, record, tol):
    """Vectorized counterpart of ``euler_chunk_nb`` with the same return contract."""
    n_paths, m = state.shape
    sq = math.sqrt(dt)
    for s in range(Z.shape[0]):
        c = state
        a = beta_eff[None, :, :] * c[:, :, None] * c[:, None, :]
        pc = np.zeros_like(c)
        for j in range(m):
            pc += pi[None, :, j] * c[:, j:j + 1]
        diag = np.arange(m)
        a[:, diag, diag] += alpha[None, :] * c + c * pc
        L, bad, wmin = _sqrt_psd_np(a, tol)
        if bad >= 0:
            return bad, s, wmin
        x = np.broadcast_to(b, c.shape).copy()
        for j in range(m):
            x += B1T[None, :, j] * c[:, j:j + 1]
        noise = np.zeros_like(c)
        for j in range(m):
            noise += L[:, :, j] * Z[s, :, j:j + 1]
        x = c + x * dt + noise * sq
        state[:] = np.maximum(x, 0.0)
        if record:
            rec[s] = state
    return -1, -1, 0.0
