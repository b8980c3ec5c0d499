"""Concept scoring and ranking kernels.

Two interchangeable implementations: numba-compiled loops and plain numpy.
Set ``EMOCUE_DISABLE_NUMBA=1`` to force the numpy path; it is also used when
numba cannot be imported. Both rank by fused score descending with ties
broken by row index (rows are stored in concept-id order).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("EMOCUE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def score_numpy(matrix: np.ndarray, text: np.ndarray, image: np.ndarray, alpha: float):
    # einsum rather than BLAS gemv: every row is reduced the same way, so identical
    # rows get bit-identical scores and ties stay exact
    row_norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    tn = float(np.sqrt(text @ text))
    vn = float(np.sqrt(image @ image))
    if tn > 0:
        lt = np.clip(np.einsum("ij,j->i", matrix, text) / (row_norms * tn), -1.0, 1.0)
    else:
        lt = np.zeros(matrix.shape[0])
    if vn > 0:
        lv = np.clip(np.einsum("ij,j->i", matrix, image) / (row_norms * vn), -1.0, 1.0)
    else:
        lv = np.zeros(matrix.shape[0])
    lm = alpha * lt + (1.0 - alpha) * lv
    return lt, lv, lm


def rank_numpy(scores: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-scores, kind="stable")[:k]


if HAVE_NUMBA:

    @njit(cache=True)
    def score_numba(matrix, text, image, alpha):
        n, d = matrix.shape
        tn = 0.0
        vn = 0.0
        for j in range(d):
            tn += text[j] * text[j]
            vn += image[j] * image[j]
        tn = np.sqrt(tn)
        vn = np.sqrt(vn)
        lt = np.zeros(n)
        lv = np.zeros(n)
        lm = np.empty(n)
        for i in range(n):
            dt = 0.0
            dv = 0.0
            rr = 0.0
            for j in range(d):
                x = matrix[i, j]
                dt += x * text[j]
                dv += x * image[j]
                rr += x * x
            r = np.sqrt(rr)
            if tn > 0.0:
                lt[i] = min(1.0, max(-1.0, dt / (r * tn)))
            if vn > 0.0:
                lv[i] = min(1.0, max(-1.0, dv / (r * vn)))
            lm[i] = alpha * lt[i] + (1.0 - alpha) * lv[i]
        return lt, lv, lm

    @njit(cache=True)
    def rank_numba(scores, k):
        order = np.argsort(-scores, kind="mergesort")
        return order[:k]

else:  # pragma: no cover
    score_numba = score_numpy
    rank_numba = rank_numpy


def score(matrix: np.ndarray, text: np.ndarray, image: np.ndarray, alpha: float, backend: str | None = None):
    """Cosine of every row against ``text`` and ``image`` plus their alpha-weighted fusion.

    A zero query vector contributes zero similarity for its side.
    """
    backend = backend or BACKEND
    m = np.ascontiguousarray(matrix, dtype=np.float64)
    t = np.ascontiguousarray(text, dtype=np.float64)
    v = np.ascontiguousarray(image, dtype=np.float64)
    if backend == "numba":
        return score_numba(m, t, v, float(alpha))
    return score_numpy(m, t, v, float(alpha))


def rank(scores: np.ndarray, k: int, backend: str | None = None) -> np.ndarray:
    backend = backend or BACKEND
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if backend == "numba":
        return rank_numba(s, int(k))
    return rank_numpy(s, int(k))
