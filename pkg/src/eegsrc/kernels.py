"""Greedy-pursuit hot kernels with a numba fast path and a numpy fallback.

The pursuit inner loop dominates runtime for both dictionary training and
classification, so it is compiled with numba when available.  Backend
selection: the ``EEGSRC_BACKEND`` environment variable may be set to
``"numba"`` or ``"numpy"``; unset means numba if importable, else numpy.
``set_backend`` switches at runtime (used by the benchmark suite to compare
both paths on identical inputs).

Both implementations run the same algorithm: greedy atom selection by
maximum absolute correlation with the residual (ties resolved to the lowest
atom index), an incrementally maintained Cholesky factor of the selected
Gram for the least-squares re-solve, and one iterative-refinement step on
the final coefficients so the returned residual is orthogonal to the
selected atoms to near machine precision.

Kernels take the dictionary transposed (rows = atoms, C-contiguous) and
return ``(support, coefficients, n_selected, degenerate)`` where
``degenerate`` signals that a numerically collinear atom was dropped and
the pursuit stopped early.
"""

from __future__ import annotations

import math
import os

import numpy as np

# Pivot tolerance for declaring a selected atom collinear with the
# already-selected set; relative floors below which the residual (or the
# best atom correlation) counts as numerically zero and the pursuit stops.
# Both floors scale with the residual, so supports are stable under y -> c*y.
_COLLINEAR_TOL = 1e-12
_RESIDUAL_REL_FLOOR = 1e-12
_CORR_REL_FLOOR = 1e-13

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _omp_numpy(dt, y, max_k, stop_norm):
    """Pure-numpy pursuit. dt is (n_atoms, signal_len), rows unit-norm."""
    m, n = dt.shape
    support = np.empty(max_k, dtype=np.int64)
    sub = np.empty((max_k, n))
    lmat = np.zeros((max_k, max_k))
    dty = np.empty(max_k)
    w = np.empty(max_k)
    x = np.empty(max_k)
    r = y.copy()
    k = 0
    degenerate = False
    while k < max_k:
        rnorm = math.sqrt(float(r @ r))
        if rnorm <= stop_norm:
            break
        corr = dt @ r
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= _CORR_REL_FLOOR * rnorm:
            break
        atom = dt[j]
        g = sub[:k] @ atom
        for i in range(k):
            w[i] = (g[i] - lmat[i, :i] @ w[:i]) / lmat[i, i]
        d = float(atom @ atom) - float(w[:k] @ w[:k])
        if d <= _COLLINEAR_TOL:
            degenerate = True
            break
        support[k] = j
        sub[k] = atom
        lmat[k, :k] = w[:k]
        lmat[k, k] = math.sqrt(d)
        dty[k] = atom @ y
        k += 1
        _chol_solve(lmat, dty, x, k)
        r = y - x[:k] @ sub[:k]
    if k > 0:
        # one refinement step keeps the residual orthogonal to the
        # selected atoms even when it is tiny relative to the signal
        dx = np.empty(max_k)
        _chol_solve(lmat, sub[:k] @ r, dx, k)
        x[:k] += dx[:k]
    return support[:k].copy(), x[:k].copy(), k, degenerate


def _chol_solve(lmat, b, out, k):
    # solves (L L^T) out = b for the leading k-by-k block
    for i in range(k):
        out[i] = (b[i] - lmat[i, :i] @ out[:i]) / lmat[i, i]
    for i in range(k - 1, -1, -1):
        out[i] = (out[i] - lmat[i + 1 : k, i] @ out[i + 1 : k]) / lmat[i, i]


@njit(cache=True)
def _omp_numba(dt, y, max_k, stop_norm):  # pragma: no cover - compiled
    m, n = dt.shape
    support = np.empty(max_k, dtype=np.int64)
    sub = np.empty((max_k, n))
    lmat = np.zeros((max_k, max_k))
    dty = np.empty(max_k)
    w = np.empty(max_k)
    x = np.empty(max_k)
    r = y.copy()
    k = 0
    degenerate = False
    while k < max_k:
        rn = 0.0
        for t in range(n):
            rn += r[t] * r[t]
        rnorm = math.sqrt(rn)
        if rnorm <= stop_norm:
            break
        corr = np.dot(dt, r)
        best = -1
        best_val = -1.0
        for t in range(m):
            ac = abs(corr[t])
            if ac > best_val:
                best_val = ac
                best = t
        if best_val <= _CORR_REL_FLOOR * rnorm:
            break
        atom = dt[best]
        d = 0.0
        for i in range(k):
            acc = 0.0
            for t in range(n):
                acc += sub[i, t] * atom[t]
            for p in range(i):
                acc -= lmat[i, p] * w[p]
            w[i] = acc / lmat[i, i]
            d += w[i] * w[i]
        ajj = 0.0
        for t in range(n):
            ajj += atom[t] * atom[t]
        d = ajj - d
        if d <= _COLLINEAR_TOL:
            degenerate = True
            break
        support[k] = best
        for t in range(n):
            sub[k, t] = atom[t]
        for p in range(k):
            lmat[k, p] = w[p]
        lmat[k, k] = math.sqrt(d)
        acc = 0.0
        for t in range(n):
            acc += atom[t] * y[t]
        dty[k] = acc
        k += 1
        _solve_spd(lmat, dty, x, k)
        for t in range(n):
            acc = y[t]
            for i in range(k):
                acc -= x[i] * sub[i, t]
            r[t] = acc
    if k > 0:
        resid_corr = np.empty(max_k)
        for i in range(k):
            acc = 0.0
            for t in range(n):
                acc += sub[i, t] * r[t]
            resid_corr[i] = acc
        dx = np.empty(max_k)
        _solve_spd(lmat, resid_corr, dx, k)
        for i in range(k):
            x[i] += dx[i]
    return support[:k].copy(), x[:k].copy(), k, degenerate


@njit(cache=True)
def _solve_spd(lmat, b, out, k):  # pragma: no cover - compiled
    for i in range(k):
        acc = b[i]
        for p in range(i):
            acc -= lmat[i, p] * out[p]
        out[i] = acc / lmat[i, i]
    for i in range(k - 1, -1, -1):
        acc = out[i]
        for p in range(i + 1, k):
            acc -= lmat[p, i] * out[p]
        out[i] = acc / lmat[i, i]


_env = os.environ.get("EEGSRC_BACKEND", "").strip().lower()
if _env == "numpy":
    _BACKEND = "numpy"
elif _env == "numba":
    if not _HAVE_NUMBA:
        raise ImportError("EEGSRC_BACKEND=numba but numba is not importable")
    _BACKEND = "numba"
else:
    _BACKEND = "numba" if _HAVE_NUMBA else "numpy"


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return _BACKEND


def set_backend(name: str) -> None:
    """Force the kernel backend at runtime; raises if numba is unavailable."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


def omp_kernel(dt, y, max_k, stop_norm):
    """Run the pursuit on transposed-dictionary input via the active backend."""
    if _BACKEND == "numba":
        return _omp_numba(dt, y, max_k, stop_norm)
    return _omp_numpy(dt, y, max_k, stop_norm)
