"""Pointwise evaluation of monomial sums, the hot loop of the right-hand side.

A monomial list is compiled into flat integer/float arrays that index rows
of a stacked field buffer of shape ``(n_fields, n_points)``.  The numba
kernel is used when numba imports and ``TWL_NO_NUMBA`` is unset (or "0");
otherwise a pure-numpy fallback evaluates the same arrays.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("TWL_NO_NUMBA", "0").strip().lower()
    return HAVE_NUMBA and flag in ("", "0", "false", "no")


@dataclass(frozen=True)
class CompiledTerms:
    out_index: np.ndarray  # (n_terms,) equation index
    coef: np.ndarray  # (n_terms,)
    start: np.ndarray  # (n_terms + 1,) offsets into ``factor``
    factor: np.ndarray  # flat list of field rows
    n_out: int

    @property
    def n_terms(self) -> int:
        return len(self.coef)


def compile_terms(terms, field_rows: dict, n_out: int) -> CompiledTerms:
    """Flatten monomials; ``field_rows`` maps (component, derivs) -> buffer row."""
    out_index, coef, start, factor = [], [], [0], []
    for t in terms:
        out_index.append(t.i)
        coef.append(t.coef)
        for f in t.factors:
            factor.append(field_rows[f])
        start.append(len(factor))
    return CompiledTerms(
        np.asarray(out_index, dtype=np.int64),
        np.asarray(coef, dtype=np.float64),
        np.asarray(start, dtype=np.int64),
        np.asarray(factor, dtype=np.int64),
        int(n_out),
    )


def _eval_numpy(out_index, coef, start, factor, fields, out):
    for t in range(len(coef)):
        rows = factor[start[t] : start[t + 1]]
        prod = coef[t] * fields[rows[0]]
        for r in rows[1:]:
            prod = prod * fields[r]
        out[out_index[t]] += prod
    return out


_BLOCK = 2048

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _eval_numba(out_index, coef, start, factor, fields, out):  # pragma: no cover - compiled
        # blocked over points so that each term's inner loop is a streaming,
        # vectorizable product over a cache-resident slab of the fields
        n_terms = coef.shape[0]
        n_pts = fields.shape[1]
        acc = np.empty(_BLOCK)
        for p0 in range(0, n_pts, _BLOCK):
            p1 = min(p0 + _BLOCK, n_pts)
            nb = p1 - p0
            for t in range(n_terms):
                s0 = start[t]
                d = start[t + 1] - s0
                c = coef[t]
                o = out_index[t]
                f0 = factor[s0]
                if d == 1:
                    for p in range(nb):
                        out[o, p0 + p] += c * fields[f0, p0 + p]
                elif d == 2:
                    f1 = factor[s0 + 1]
                    for p in range(nb):
                        out[o, p0 + p] += c * fields[f0, p0 + p] * fields[f1, p0 + p]
                elif d == 3:
                    f1 = factor[s0 + 1]
                    f2 = factor[s0 + 2]
                    for p in range(nb):
                        out[o, p0 + p] += c * fields[f0, p0 + p] * fields[f1, p0 + p] * fields[f2, p0 + p]
                else:
                    for p in range(nb):
                        acc[p] = c * fields[f0, p0 + p]
                    for r in range(s0 + 1, s0 + d):
                        fr = factor[r]
                        for p in range(nb):
                            acc[p] *= fields[fr, p0 + p]
                    for p in range(nb):
                        out[o, p0 + p] += acc[p]
        return out

else:  # pragma: no cover
    _eval_numba = None


def evaluate(ct: CompiledTerms, fields: np.ndarray, out: np.ndarray | None = None, use_numba=None) -> np.ndarray:
    """Accumulate ``sum_t coef_t prod fields[rows_t]`` into ``out[n_out, n_points]``.

    ``fields`` must be a C-contiguous float64 array of shape (n_fields, n_points).
    """
    n_pts = fields.shape[1]
    if out is None:
        out = np.zeros((ct.n_out, n_pts))
    if ct.n_terms == 0:
        return out
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba and _eval_numba is not None:
        _eval_numba(ct.out_index, ct.coef, ct.start, ct.factor, np.ascontiguousarray(fields), out)
    else:
        _eval_numpy(ct.out_index, ct.coef, ct.start, ct.factor, fields, out)
    return out
