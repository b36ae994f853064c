"""Coefficient tensors of the quasilinear system, presets, null-condition checks.

Derivative indices run over 0..3 = (t, x1, x2, y) with the Minkowski signature
``ETA = (1, -1, -1, -1)``, so that ``Q0(f, g) = sum_a ETA[a] d_a f d_a g``.

Tensor layouts (component indices first, derivative indices last):

==================  ===========================  ===========================================
name                shape                        term
==================  ===========================  ===========================================
q0_quadratic        (m, m, m, 5, 5)              C^{ab}_{ijk} Q0(d^a u^j, d^b u^k), |a|+|b|<=1
quad_semilinear     (m, m, m, 4, 4)              Q^{ab}_{ijk} d_a u^j d_b u^k
quad_quasilinear    (m, m, m, 4, 4, 4)           Q^{abc}_{ijk} d_ab u^j d_c u^k
cubic_wavemap       (m, m, m, m)                 C_{ijkl} Q0(u^j, u^k) u^l
cubic_quasilinear   (m,)*4 + (4,)*4              Q^{abcd}_{ijkl} d_ab u^j d_c u^k d_d u^l
higher[d], d >= 4   (m,)*(d+1) + (4,)*(d+1)      d_ab u^j times (d-1) first derivatives
==================  ===========================  ===========================================

In ``q0_quadratic`` the multi-index slot 0 means "no derivative" and slot
``1 + g`` means a single derivative ``d_g``.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError

ETA = np.array([1.0, -1.0, -1.0, -1.0])
NULL_SAMPLES = 16
NULL_RTOL = 1e-12
SYM_RTOL = 1e-14

# multi-indices with |a| <= 2, stored as sorted tuples of derivative indices
MULTI1 = [()] + [(g,) for g in range(4)]
MULTI2 = MULTI1 + [(g, d) for g in range(4) for d in range(g, 4)]
_M2_POS = {a: n for n, a in enumerate(MULTI2)}

TENSOR_NAMES = (
    "q0_quadratic",
    "quad_semilinear",
    "quad_quasilinear",
    "cubic_wavemap",
    "cubic_quasilinear",
)


def multi_index_slot(a) -> int:
    """Position of a multi-index (any order of entries) in ``MULTI2``."""
    return _M2_POS[tuple(sorted(a))]


def _add(a: tuple, b: tuple) -> tuple:
    return tuple(sorted(a + b))


def _higher_name(d: int) -> str:
    return "quartic" if d == 4 else f"degree_{d}"


def _higher_degree(name: str) -> int:
    return 4 if name == "quartic" else int(name.split("_")[1])


# ---------------------------------------------------------------------- types
@dataclass
class NonlinearitySpec:
    """Dense coefficient tensors of F^i(u, du, d^2u)."""

    m: int
    q0_quadratic: np.ndarray
    quad_semilinear: np.ndarray
    quad_quasilinear: np.ndarray
    cubic_wavemap: np.ndarray
    cubic_quasilinear: np.ndarray
    higher: dict = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        m = int(self.m)
        if m < 1:
            raise ParameterError("m must be >= 1")
        self.m = m
        expected = {
            "q0_quadratic": (m, m, m, 5, 5),
            "quad_semilinear": (m, m, m, 4, 4),
            "quad_quasilinear": (m, m, m, 4, 4, 4),
            "cubic_wavemap": (m, m, m, m),
            "cubic_quasilinear": (m,) * 4 + (4,) * 4,
        }
        for key, shp in expected.items():
            arr = np.asarray(getattr(self, key), dtype=float)
            if arr.shape != shp:
                raise ParameterError(f"{key} has shape {arr.shape}, expected {shp}")
            setattr(self, key, arr)
        q0 = self.q0_quadratic
        if np.any(q0[..., 1:, 1:] != 0):
            raise ParameterError("q0_quadratic requires |a| + |b| <= 1")
        higher = {}
        for d, arr in dict(self.higher).items():
            d = int(d)
            arr = np.asarray(arr, dtype=float)
            if d < 4 or arr.shape != (m,) * (d + 1) + (4,) * (d + 1):
                raise ParameterError(f"higher[{d}] has invalid shape {arr.shape}")
            higher[d] = arr
        self.higher = higher
        for key in TENSOR_NAMES:
            if not np.all(np.isfinite(getattr(self, key))):
                raise ParameterError(f"{key} contains non-finite entries")

    @classmethod
    def zeros(cls, m: int = 1, name: str = "zero") -> "NonlinearitySpec":
        return cls(
            m=m,
            q0_quadratic=np.zeros((m, m, m, 5, 5)),
            quad_semilinear=np.zeros((m, m, m, 4, 4)),
            quad_quasilinear=np.zeros((m, m, m, 4, 4, 4)),
            cubic_wavemap=np.zeros((m,) * 4),
            cubic_quasilinear=np.zeros((m,) * 4 + (4,) * 4),
            name=name,
        )

    @property
    def quartic(self) -> Optional[np.ndarray]:
        return self.higher.get(4)

    def tensors(self) -> dict:
        out = {k: getattr(self, k) for k in TENSOR_NAMES}
        for d, arr in sorted(self.higher.items()):
            out[_higher_name(d)] = arr
        return out

    def is_zero(self) -> bool:
        return all(not np.any(t) for t in self.tensors().values())

    def scaled(self, c: float) -> "NonlinearitySpec":
        return NonlinearitySpec(
            m=self.m,
            **{k: c * getattr(self, k) for k in TENSOR_NAMES},
            higher={d: c * a for d, a in self.higher.items()},
            name=self.name,
        )

    def copy(self) -> "NonlinearitySpec":
        return self.scaled(1.0)

    def max_degree(self) -> int:
        degs = [1]
        if np.any(self.q0_quadratic) or np.any(self.quad_semilinear) or np.any(self.quad_quasilinear):
            degs.append(2)
        if np.any(self.cubic_wavemap) or np.any(self.cubic_quasilinear):
            degs.append(3)
        degs += [d for d, a in self.higher.items() if np.any(a)]
        return max(degs)

    # ------------------------------------------------------------------ JSON
    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "name": self.name,
            "tensors": {k: v.tolist() for k, v in self.tensors().items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "NonlinearitySpec":
        m = int(data["m"])
        base = cls.zeros(m)
        tensors = data.get("tensors", {})
        kwargs = {}
        higher = {}
        for key, val in tensors.items():
            if key in TENSOR_NAMES:
                kwargs[key] = np.asarray(val, dtype=float)
            elif key == "quartic" or key.startswith("degree_"):
                higher[_higher_degree(key)] = np.asarray(val, dtype=float)
            else:
                raise ParameterError(f"unknown tensor name {key!r}")
        for key in TENSOR_NAMES:
            kwargs.setdefault(key, getattr(base, key))
        return cls(m=m, higher=higher, name=data.get("name", "custom"), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "NonlinearitySpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GTerm:
    """One remainder descriptor of the transformed equation.

    kind ``"dF"``: ``coef * d^a X^j * d^b Y^k`` where the factor at position
    ``slot`` (0 or 1) is the cubic-and-higher part of F and the other is u.

    kind ``"proj"``: ``coef * Pn d^a X^j * Pn d^b Y^k * P0 Z^l`` where the
    factor at position ``slot`` (0, 1, 2) is F (i.e. box u) and the others are u.

    kind ``"F"``: the part of F^i of degree >= 4.
    """

    kind: str
    coef: float
    i: int
    j: int = 0
    k: int = 0
    l: int = 0
    a: tuple = ()
    b: tuple = ()
    slot: int = 0


@dataclass
class TransformedSpec:
    """Tensors of the normal-form reformulation."""

    base: NonlinearitySpec
    tilde_quartic: np.ndarray  # (m,)*4 + (4,)*4: d_ab u^j d_c u^k d_d u^l
    tilde_cubic: np.ndarray  # (m,)*4 + (4,)*3: d_a u^j d_b u^k d_c u^l
    q0_extended: np.ndarray  # (m,)*4 + (15, 15): C^{ab}_{ijkl}, slots of MULTI2
    g_terms: list

    @property
    def m(self) -> int:
        return self.base.m

    def as_null_spec(self) -> NonlinearitySpec:
        """Package the tilde tensors so that the partial-null checker applies."""
        m = self.m
        spec = NonlinearitySpec.zeros(m, name=f"tilde({self.base.name})")
        spec.cubic_quasilinear = self.tilde_quartic.copy()
        return spec


# ------------------------------------------------------------------ reports
@dataclass
class SymmetryReport:
    passed: bool
    violations: list

    @property
    def pass_(self) -> bool:
        return self.passed


@dataclass
class NullReport:
    passed: bool
    max_residual: float
    failing_tensor: Optional[str]
    residuals: dict


# ------------------------------------------------------------- symmetry check
def _sym_violations(name, arr, comp_axes, deriv_axes, tol):
    out = []
    for axes, label in ((deriv_axes, "deriv"), (comp_axes, "comp")):
        perm = list(range(arr.ndim))
        perm[axes[0]], perm[axes[1]] = perm[axes[1]], perm[axes[0]]
        other = np.transpose(arr, perm)
        bad = np.argwhere(np.abs(arr - other) > tol)
        for idx in bad:
            idx = tuple(int(v) for v in idx)
            swapped = list(idx)
            swapped[axes[0]], swapped[axes[1]] = swapped[axes[1]], swapped[axes[0]]
            if tuple(swapped) < idx:
                continue  # report each unordered pair once
            out.append(
                {
                    "tensor": name,
                    "swap": label,
                    "index": idx,
                    "value": float(arr[idx]),
                    "partner": tuple(swapped),
                    "partner_value": float(arr[tuple(swapped)]),
                }
            )
    return out


def check_symmetry(spec: NonlinearitySpec) -> SymmetryReport:
    """Symmetry of the quasilinear tensors in the derivative pair and in (i, j)."""
    violations = []
    q4 = spec.cubic_quasilinear
    tol4 = SYM_RTOL * max(1.0, float(np.abs(q4).max(initial=0.0)))
    violations += _sym_violations("cubic_quasilinear", q4, (0, 1), (4, 5), tol4)
    q3 = spec.quad_quasilinear
    tol3 = SYM_RTOL * max(1.0, float(np.abs(q3).max(initial=0.0)))
    violations += _sym_violations("quad_quasilinear", q3, (0, 1), (3, 4), tol3)
    return SymmetryReport(passed=not violations, violations=violations)


# ------------------------------------------------------------------ null check
def null_covectors(n_theta: int = NULL_SAMPLES) -> np.ndarray:
    """Samples (s, cos th, sin th, 0) for s = +-1 and n_theta equispaced angles."""
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    out = []
    for s in (1.0, -1.0):
        out.append(np.stack([np.full_like(th, s), np.cos(th), np.sin(th), np.zeros_like(th)], axis=1))
    return np.concatenate(out, axis=0)


def symbol_contraction(tensor: np.ndarray, n_deriv: int, xis: np.ndarray) -> np.ndarray:
    """Contract the trailing ``n_deriv`` derivative slots with each covector.

    The fourth covector entry is zero, which restricts the sum to indices 0..2.
    Returns an array of shape ``(len(xis),) + component_shape``.
    """
    out = []
    for xi in xis:
        t = tensor
        for _ in range(n_deriv):
            t = t @ xi
        out.append(t)
    return np.array(out)


def quadratic_rewrite(spec: NonlinearitySpec) -> tuple[np.ndarray, np.ndarray]:
    """Express the Q0-form quadratics as (Q^{ab}_{ijk}, Q^{abc}_{ijk}).

    The quasilinear part is symmetrized in its second-derivative pair.
    """
    m = spec.m
    q2 = np.zeros((m, m, m, 4, 4))
    q3 = np.zeros((m, m, m, 4, 4, 4))
    C = spec.q0_quadratic
    for i, j, k in itertools.product(range(m), repeat=3):
        for sa in range(5):
            for sb in range(5):
                c = C[i, j, k, sa, sb]
                if c == 0.0:
                    continue
                for al in range(4):
                    e = c * ETA[al]
                    if sa == 0 and sb == 0:
                        q2[i, j, k, al, al] += e
                    elif sb == 0:  # d_al d_g u^j  d_al u^k
                        g = sa - 1
                        q3[i, j, k, g, al, al] += 0.5 * e
                        q3[i, j, k, al, g, al] += 0.5 * e
                    else:  # d_al u^j d_al d_g u^k -> second derivative on k
                        g = sb - 1
                        q3[i, k, j, g, al, al] += 0.5 * e
                        q3[i, k, j, al, g, al] += 0.5 * e
    return q2, q3


def _null_residual(tensor: np.ndarray, n_deriv: int, xis: np.ndarray) -> float:
    scale = float(np.abs(tensor).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    vals = symbol_contraction(tensor, n_deriv, xis)
    return float(np.abs(vals).max() / scale)


def check_partial_null(spec: NonlinearitySpec, n_theta: int = NULL_SAMPLES) -> NullReport:
    """Partial null condition on {+-1} x S^1 for the quadratic and cubic tensors.

    Residuals are relative to the sup-norm of each tensor.  Tensors of degree
    >= 4 are reported in ``residuals`` but do not enter the verdict.
    """
    xis = null_covectors(n_theta)
    m = spec.m
    required = {}
    q2r, q3r = quadratic_rewrite(spec)
    required["q0_quadratic:rewrite_semilinear"] = _null_residual(q2r, 2, xis)
    required["q0_quadratic:rewrite_quasilinear"] = _null_residual(q3r, 3, xis)
    required["quad_semilinear"] = _null_residual(spec.quad_semilinear, 2, xis)
    required["quad_quasilinear"] = _null_residual(spec.quad_quasilinear, 3, xis)
    # C_ijkl Q0(u^j, u^k) u^l has symbol C_ijkl eta(xi, xi)
    wm = np.zeros((m,) * 4 + (4, 4))
    for al in range(4):
        wm[..., al, al] = spec.cubic_wavemap * ETA[al]
    required["cubic_wavemap"] = _null_residual(wm, 2, xis)
    required["cubic_quasilinear"] = _null_residual(spec.cubic_quasilinear, 4, xis)
    residuals = dict(required)
    for d, arr in sorted(spec.higher.items()):
        residuals[_higher_name(d)] = _null_residual(arr, d + 1, xis)
    worst = max(required, key=required.get)
    max_res = required[worst]
    passed = max_res <= NULL_RTOL
    return NullReport(
        passed=passed,
        max_residual=max_res,
        failing_tensor=None if passed else worst.split(":")[0],
        residuals=residuals,
    )


# --------------------------------------------------------------- term algebra
# A scalar polynomial term: (coef, second-derivative pair or None, first-derivative tuple)


def _poly_mul(p: dict, q: dict) -> dict:
    out = defaultdict(float)
    for a, ca in p.items():
        for b, cb in q.items():
            out[_add(a, b)] += ca * cb
    return dict(out)


def _poly_pow(p: dict, k: int) -> dict:
    out = {(): 1.0}
    for _ in range(k):
        out = _poly_mul(out, p)
    return out


def _scalar_tensor(terms, degree: int) -> np.ndarray:
    """Symmetrized dense tensor (m = 1) from quasilinear scalar terms.

    Each term ``(c, (a, b), (n1, ..., n_{d-1}))`` stands for
    ``c d_ab phi d_n1 phi ... d_n{d-1} phi``.
    """
    nd = degree + 1
    T = np.zeros((4,) * nd)
    for c, pair, firsts in terms:
        if len(firsts) != degree - 1:
            raise ParameterError("term degree mismatch")
        pairs = {pair, pair[::-1]}
        perms = set(itertools.permutations(firsts))
        w = c / (len(pairs) * len(perms))
        for p in pairs:
            for f in perms:
                T[p + f] += w
    return T.reshape((1,) * nd + (4,) * nd)


_SPACE = (1, 2, 3)


def _membrane_terms():
    t = []
    for i in _SPACE:
        t.append((-1.0, (0, 0), (i, i)))  # -|grad phi|^2 phi_tt
        t.append((-1.0, (i, i), (0, 0)))  # -phi_t^2 Lap phi
        t.append((2.0, (0, i), (0, i)))  # 2 phi_t grad phi . grad phi_t
        for j in _SPACE:
            t.append((1.0, (i, i), (j, j)))  # |grad phi|^2 Lap phi
            t.append((-1.0, (i, j), (i, j)))  # -(1/2) grad phi . grad |grad phi|^2
    return t


def _chaplygin_terms():
    cubic, quartic = [], []
    for i in _SPACE:
        cubic.append((-4.0, (i, i), (0, 0)))
        cubic.append((4.0, (0, i), (0, i)))
        for j in _SPACE:
            cubic.append((1.0, (i, i), (j, j)))
            cubic.append((-1.0, (i, j), (i, j)))
            quartic.append((-2.0, (i, i), (0, j, j)))
            quartic.append((2.0, (i, j), (0, i, j)))
    return cubic, quartic


def _lagrangian_terms(k: int):
    """F = -l^k (phi_tt - Lap phi) + k l^{k-1} (phi_t^2 phi_tt - 2 phi_t phi_i phi_ti + phi_i phi_j phi_ij)."""
    ell = {(0, 0): -0.5}
    for i in _SPACE:
        ell[(i, i)] = 0.5
    lk = _poly_pow(ell, k)
    lk1 = _poly_pow(ell, k - 1)
    terms = []
    for mono, c in lk.items():
        terms.append((-c, (0, 0), mono))
        for i in _SPACE:
            terms.append((c, (i, i), mono))
    for mono, c in lk1.items():
        terms.append((k * c, (0, 0), _add(mono, (0, 0))))
        for i in _SPACE:
            terms.append((-2.0 * k * c, (0, i), _add(mono, (0, i))))
            for j in _SPACE:
                terms.append((k * c, (i, j), _add(mono, (i, j))))
    return terms


def preset(name: str, params: Optional[dict] = None) -> NonlinearitySpec:
    """Expanded tensor form of a named model.

    ``chaplygin``, ``membrane`` and ``lagrangian_k`` (param ``k``) are scalar;
    ``wave_maps`` takes ``m`` and ``C`` (a scalar or an (m, m, m, m) array of
    the constants C^i_{jkl}).
    """
    params = dict(params or {})
    if name == "membrane":
        spec = NonlinearitySpec.zeros(1, name=name)
        spec.cubic_quasilinear = _scalar_tensor(_membrane_terms(), 3)
    elif name == "chaplygin":
        spec = NonlinearitySpec.zeros(1, name=name)
        spec.q0_quadratic[0, 0, 0, 1, 0] = 2.0  # 2 Q0(d_t phi, phi)
        cubic, quartic = _chaplygin_terms()
        spec.cubic_quasilinear = _scalar_tensor(cubic, 3)
        spec.higher = {4: _scalar_tensor(quartic, 4)}
    elif name == "lagrangian_k":
        k = params.get("k", 1)
        if int(k) != k or k < 1:
            raise ParameterError(f"lagrangian_k needs an integer k >= 1, got {k!r}")
        k = int(k)
        if k > 3:
            raise ParameterError("lagrangian_k supports k <= 3 (dense tensor size grows as 4^(2k+2))")
        degree = 2 * k + 1
        spec = NonlinearitySpec.zeros(1, name=f"lagrangian_k{k}")
        T = _scalar_tensor(_lagrangian_terms(k), degree)
        if degree == 3:
            spec.cubic_quasilinear = T
        else:
            spec.higher = {degree: T}
    elif name == "wave_maps":
        m = int(params.get("m", 1))
        C = np.asarray(params.get("C", 1.0), dtype=float)
        if C.ndim == 0:
            C = np.full((m,) * 4, float(C))
        if C.shape != (m,) * 4:
            raise ParameterError(f"wave_maps constants must have shape {(m,) * 4}")
        spec = NonlinearitySpec.zeros(m, name=name)
        spec.cubic_wavemap = C.copy()
    else:
        raise ParameterError(f"unknown preset {name!r}")
    spec.__post_init__()
    return spec


PRESETS = ("chaplygin", "membrane", "lagrangian_k", "wave_maps")


# ----------------------------------------------------------- monomial terms
@dataclass(frozen=True)
class Monomial:
    """``coef * prod_r d^{derivs_r} u^{comps_r}`` contributing to equation ``i``."""

    i: int
    coef: float
    factors: tuple  # ((component, sorted derivative tuple), ...)

    @property
    def degree(self) -> int:
        return len(self.factors)


def _collect(raw) -> list:
    acc = defaultdict(float)
    for i, c, factors in raw:
        if c != 0.0:
            acc[(i, tuple(sorted(factors)))] += c
    return [Monomial(i, c, f) for (i, f), c in sorted(acc.items()) if c != 0.0]


def monomials(spec: NonlinearitySpec, min_degree: int = 2, max_degree: int = 99) -> list:
    """Flatten the tensors into a merged list of monomials.

    Degree ranges select parts of F, e.g. ``min_degree=3`` gives F minus its
    quadratic part.
    """
    raw = []

    def want(d):
        return min_degree <= d <= max_degree

    if want(2):
        C = spec.q0_quadratic
        for idx in zip(*np.nonzero(C)):
            i, j, k, sa, sb = (int(v) for v in idx)
            a = MULTI1[sa]
            b = MULTI1[sb]
            for al in range(4):
                raw.append((i, C[idx] * ETA[al], ((j, _add(a, (al,))), (k, _add(b, (al,))))))
        Q = spec.quad_semilinear
        for idx in zip(*np.nonzero(Q)):
            i, j, k, al, be = (int(v) for v in idx)
            raw.append((i, Q[idx], ((j, (al,)), (k, (be,)))))
        Q = spec.quad_quasilinear
        for idx in zip(*np.nonzero(Q)):
            i, j, k, al, be, mu = (int(v) for v in idx)
            raw.append((i, Q[idx], ((j, _add((al,), (be,))), (k, (mu,)))))
    if want(3):
        C = spec.cubic_wavemap
        for idx in zip(*np.nonzero(C)):
            i, j, k, l = (int(v) for v in idx)
            for al in range(4):
                raw.append((i, C[idx] * ETA[al], ((j, (al,)), (k, (al,)), (l, ()))))
        Q = spec.cubic_quasilinear
        for idx in zip(*np.nonzero(Q)):
            i, j, k, l, al, be, mu, nu = (int(v) for v in idx)
            raw.append((i, Q[idx], ((j, _add((al,), (be,))), (k, (mu,)), (l, (nu,)))))
    for d, T in spec.higher.items():
        if not want(d):
            continue
        for idx in zip(*np.nonzero(T)):
            idx = tuple(int(v) for v in idx)
            comps = idx[: d + 1]
            ders = idx[d + 1 :]
            factors = [(comps[1], _add((ders[0],), (ders[1],)))]
            for r in range(2, d + 1):
                factors.append((comps[r], (ders[r],)))
            raw.append((comps[0], T[idx], tuple(factors)))
    return _collect(raw)


def required_derivatives(terms) -> set:
    """Set of (component, derivative tuple) appearing in a monomial list."""
    return {f for t in terms for f in t.factors}


# ------------------------------------------------------------ normal form
def derive_transformed(spec: NonlinearitySpec) -> TransformedSpec:
    """Tensors of the equation satisfied by V (see module docs of analysis).

    Only Q0-form quadratics admit the normal form, so ``quad_semilinear`` and
    ``quad_quasilinear`` must vanish.
    """
    sym = check_symmetry(spec)
    if not sym.passed:
        raise ParameterError(f"spec fails the symmetry condition: {sym.violations[:3]}")
    if np.any(spec.quad_semilinear) or np.any(spec.quad_quasilinear):
        raise ParameterError("derive_transformed needs quadratics in Q0 form (q0_quadratic only)")
    m = spec.m
    tq4 = np.array(spec.cubic_quasilinear, copy=True)
    tq3 = np.zeros((m,) * 4 + (4,) * 3)
    cext = np.zeros((m,) * 4 + (15, 15))
    cext[..., 0, 0] += spec.cubic_wavemap
    C = spec.q0_quadratic

    def q0_times_factor(coef, i, A, a1, B, b1, Cc, g):
        """coef * Q0(d^a1 u^A, d^b1 u^B) * d_g u^Cc with |a1| + |b1| <= 1."""
        for al in range(4):
            e = coef * ETA[al]
            if not a1 and not b1:
                tq3[i, A, B, Cc, al, al, g] += e
            elif not b1:
                (dl,) = a1
                tq4[i, A, B, Cc, al, dl, al, g] += 0.5 * e
                tq4[i, A, B, Cc, dl, al, al, g] += 0.5 * e
            else:
                (dl,) = b1
                tq4[i, B, A, Cc, al, dl, al, g] += 0.5 * e
                tq4[i, B, A, Cc, dl, al, al, g] += 0.5 * e

    nz = [tuple(int(v) for v in idx) for idx in zip(*np.nonzero(C))]
    for i, j, k, sa, sb in nz:
        c = C[i, j, k, sa, sb]
        a, b = MULTI1[sa], MULTI1[sb]
        # -1/2 C^{ab}_{ijk} [d^a F2^j d^b u^k + d^a u^j d^b F2^k]
        for (X, dx_, Y, dy_) in ((j, a, k, b), (k, b, j, a)):
            # X carries the derivative of F2, Y is the plain factor d^{dy} u^Y
            for jj, j2, k2, sa2, sb2 in nz:
                if jj != X:
                    continue
                c2 = C[jj, j2, k2, sa2, sb2]
                a2, b2 = MULTI1[sa2], MULTI1[sb2]
                coef = -0.5 * c * c2
                if not dy_:
                    # bad term: d^{dx} Q0(d^a2 u^j2, d^b2 u^k2) * u^Y
                    if not dx_:
                        cext[i, j2, k2, Y, multi_index_slot(a2), multi_index_slot(b2)] += coef
                    else:
                        cext[i, j2, k2, Y, multi_index_slot(dx_ + a2), multi_index_slot(b2)] += coef
                        cext[i, j2, k2, Y, multi_index_slot(a2), multi_index_slot(dx_ + b2)] += coef
                else:
                    # |dy| = 1 forces dx = 0: Q0(...) * d_g u^Y is a tilde term
                    q0_times_factor(coef, i, j2, a2, k2, b2, Y, dy_[0])

    g_terms = []
    if any(np.any(a) for a in spec.higher.values()):
        for i in range(m):
            g_terms.append(GTerm("F", 1.0, i))
    if spec.max_degree() >= 3:
        for i, j, k, sa, sb in nz:
            c = C[i, j, k, sa, sb]
            g_terms.append(GTerm("dF", -0.5 * c, i, j, k, 0, MULTI1[sa], MULTI1[sb], 0))
            g_terms.append(GTerm("dF", -0.5 * c, i, j, k, 0, MULTI1[sa], MULTI1[sb], 1))
    for idx in zip(*np.nonzero(cext)):
        i, j, k, l, sa, sb = (int(v) for v in idx)
        c = cext[idx]
        for slot in range(3):
            g_terms.append(GTerm("proj", -0.5 * c, i, j, k, l, MULTI2[sa], MULTI2[sb], slot))
    return TransformedSpec(base=spec, tilde_quartic=tq4, tilde_cubic=tq3, q0_extended=cext, g_terms=g_terms)


def check_transformed_null(ts: TransformedSpec, n_theta: int = NULL_SAMPLES) -> NullReport:
    """Partial null condition for the tilde tensors."""
    xis = null_covectors(n_theta)
    res = {
        "tilde_quartic": _null_residual(ts.tilde_quartic, 4, xis),
        "tilde_cubic": _null_residual(ts.tilde_cubic, 3, xis),
    }
    worst = max(res, key=res.get)
    passed = res[worst] <= NULL_RTOL
    return NullReport(passed, res[worst], None if passed else worst, res)


def transformed_monomials(ts: TransformedSpec) -> list:
    """Monomials of C1 (the tilde contractions)."""
    raw = []
    T = ts.tilde_quartic
    for idx in zip(*np.nonzero(T)):
        i, j, k, l, al, be, mu, nu = (int(v) for v in idx)
        raw.append((i, T[idx], ((j, _add((al,), (be,))), (k, (mu,)), (l, (nu,)))))
    T = ts.tilde_cubic
    for idx in zip(*np.nonzero(T)):
        i, j, k, l, al, be, mu = (int(v) for v in idx)
        raw.append((i, T[idx], ((j, (al,)), (k, (be,)), (l, (mu,)))))
    return _collect(raw)


def load_spec(path) -> NonlinearitySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return NonlinearitySpec.from_json(fh.read())


def save_spec(spec: NonlinearitySpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(spec.to_json())


def tensor_norm(spec: NonlinearitySpec) -> float:
    return max((float(np.abs(t).max(initial=0.0)) for t in spec.tensors().values()), default=0.0)


__all__ = [
    "ETA",
    "MULTI1",
    "MULTI2",
    "GTerm",
    "Monomial",
    "NonlinearitySpec",
    "NullReport",
    "PRESETS",
    "SymmetryReport",
    "TransformedSpec",
    "check_partial_null",
    "check_symmetry",
    "check_transformed_null",
    "derive_transformed",
    "load_spec",
    "monomials",
    "multi_index_slot",
    "preset",
    "quadratic_rewrite",
    "required_derivatives",
    "save_spec",
    "symbol_contraction",
    "transformed_monomials",
]

