"""Hot loops for similarity and agglomerative merging.

Two interchangeable backends with identical semantics:

* ``numba``: ``@njit`` loops (default when numba imports).
* ``numpy``: vectorised fallback, selected with ``ALERTPILOT_DISABLE_NUMBA=1``
  or ``set_backend("numpy")``.
"""

from __future__ import annotations

import os

import numpy as np

LINKAGES = {"average": 0, "single": 1, "complete": 2}
# linkage values within this distance of the best count as tied
TIE_EPS = 1e-12

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_BACKEND = "numba" if HAVE_NUMBA and os.environ.get("ALERTPILOT_DISABLE_NUMBA", "") in ("", "0") else "numpy"


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _BACKEND = name


# --------------------------------------------------------------------------
# numpy


def _unit_rows_np(counts: np.ndarray) -> np.ndarray:
    scaled = np.log1p(counts.astype(np.float64))
    norms = np.sqrt((scaled * scaled).sum(axis=1))
    norms[norms == 0.0] = 1.0
    return scaled / norms[:, None]


def _cosine_matrix_np(counts: np.ndarray) -> np.ndarray:
    unit = _unit_rows_np(counts)
    sim = unit @ unit.T
    np.clip(sim, 0.0, 1.0, out=sim)
    return sim


def _hac_np(sim: np.ndarray, theta: float, linkage: int, eps: float) -> np.ndarray:
    n = sim.shape[0]
    parent = np.arange(n)
    if n < 2:
        return parent
    idx = np.arange(n)
    L = sim.astype(np.float64, copy=True)
    np.fill_diagonal(L, -np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    upper = idx[None, :] > idx[:, None]
    best = np.where(upper, L, -np.inf).max(axis=1)
    del upper

    while True:
        m = best[active].max() if active.any() else -np.inf
        if not np.isfinite(m) or m < theta:
            break
        target = m - eps
        i = int(np.flatnonzero(active & (best >= target))[0])
        row = np.where(active & (idx > i), L[i], -np.inf)
        j = int(np.flatnonzero(row >= target)[0])

        old_i = L[:, i].copy()
        old_j = L[:, j].copy()
        others = active.copy()
        others[i] = others[j] = False
        if linkage == 0:
            new = (size[i] * old_i + size[j] * old_j) / (size[i] + size[j])
        elif linkage == 1:
            new = np.maximum(old_i, old_j)
        else:
            new = np.minimum(old_i, old_j)
        new = np.where(others, new, -np.inf)
        L[i, :] = new
        L[:, i] = new
        L[j, :] = -np.inf
        L[:, j] = -np.inf
        size[i] += size[j]
        active[j] = False
        parent[parent == j] = i
        best[j] = -np.inf

        # rows below i may now see a better pair in column i
        below_i = others & (idx < i)
        best[below_i] = np.maximum(best[below_i], new[below_i])
        # rows whose best pair involved i or j must be rescanned
        stale = others & (idx < j) & ((best == old_i) | (best == old_j))
        stale[i] = True
        rows = np.flatnonzero(stale)
        if rows.size:
            mask = (idx[None, :] > rows[:, None]) & active[None, :]
            best[rows] = np.where(mask, L[rows], -np.inf).max(axis=1)
    return parent


# --------------------------------------------------------------------------
# numba

if HAVE_NUMBA:

    @njit(cache=True)
    def _cosine_matrix_nb(counts):
        n, d = counts.shape
        unit = np.empty((n, d))
        for a in range(n):
            norm = 0.0
            for k in range(d):
                v = np.log1p(counts[a, k])
                unit[a, k] = v
                norm += v * v
            norm = np.sqrt(norm)
            if norm == 0.0:
                norm = 1.0
            for k in range(d):
                unit[a, k] /= norm
        sim = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                s = 0.0
                for k in range(d):
                    s += unit[a, k] * unit[b, k]
                if s > 1.0:
                    s = 1.0
                elif s < 0.0:
                    s = 0.0
                sim[a, b] = s
                sim[b, a] = s
        return sim

    @njit(cache=True)
    def _row_best_nb(L, active, k, n):
        b = -np.inf
        for c in range(k + 1, n):
            if active[c] and L[k, c] > b:
                b = L[k, c]
        return b

    @njit(cache=True)
    def _hac_nb(sim, theta, linkage, eps):
        n = sim.shape[0]
        parent = np.arange(n)
        if n < 2:
            return parent
        L = sim.copy()
        for a in range(n):
            L[a, a] = -np.inf
        size = np.ones(n)
        active = np.ones(n, dtype=np.bool_)
        best = np.empty(n)
        for a in range(n):
            best[a] = _row_best_nb(L, active, a, n)

        while True:
            m = -np.inf
            for a in range(n):
                if active[a] and best[a] > m:
                    m = best[a]
            if m == -np.inf or m < theta:
                break
            target = m - eps
            i = -1
            for a in range(n):
                if active[a] and best[a] >= target:
                    i = a
                    break
            j = -1
            for c in range(i + 1, n):
                if active[c] and L[i, c] >= target:
                    j = c
                    break

            si = size[i]
            sj = size[j]
            for k in range(n):
                if not active[k] or k == i or k == j:
                    continue
                a_ki = L[k, i]
                a_kj = L[k, j]
                if linkage == 0:
                    v = (si * a_ki + sj * a_kj) / (si + sj)
                elif linkage == 1:
                    v = a_ki if a_ki > a_kj else a_kj
                else:
                    v = a_ki if a_ki < a_kj else a_kj
                L[k, i] = v
                L[i, k] = v
                if k < j:
                    if best[k] == a_ki or best[k] == a_kj:
                        best[k] = np.nan  # mark stale
                    elif k < i and v > best[k]:
                        best[k] = v
            for k in range(n):
                L[j, k] = -np.inf
                L[k, j] = -np.inf
            size[i] = si + sj
            active[j] = False
            best[j] = -np.inf
            for k in range(n):
                if parent[k] == j:
                    parent[k] = i
            best[i] = _row_best_nb(L, active, i, n)
            for k in range(n):
                if active[k] and np.isnan(best[k]):
                    best[k] = _row_best_nb(L, active, k, n)
        return parent


# --------------------------------------------------------------------------
# dispatch


def cosine_matrix(counts: np.ndarray) -> np.ndarray:
    """Pairwise log-scaled cosine similarity of the rows of ``counts``."""
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    if _BACKEND == "numba":
        return _cosine_matrix_nb(counts)
    return _cosine_matrix_np(counts)


def hac_labels(sim: np.ndarray, theta: float, linkage: str = "average", eps: float = TIE_EPS) -> np.ndarray:
    """Agglomerate while the best linkage is >= theta.

    Returns, for every point, the index of its cluster's lowest-index member.
    Ties (within ``eps`` of the best value) go to the lowest (i, j) index pair.
    """
    code = LINKAGES[linkage]
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    if _BACKEND == "numba":
        return _hac_nb(sim, float(theta), code, float(eps))
    return _hac_np(sim, float(theta), code, float(eps))
