"""Pointwise evaluation of derivatives of u, including time derivatives.

Time derivatives are never obtained by differencing in time.  The time jets
d_t^s u are generated from the equation itself,
``d_t^{s+2} u = Lap_3 d_t^s u + P d_t^s F``, with d_t^s F expanded by the
Leibniz rule over the monomials of F.  Everything downstream (vector
fields, energies, normal forms) is built from the cached derivative fields
``D(comp, derivs)`` of one :class:`JetContext`.

Symbolic objects
----------------
* A *factor* is ``(comp, derivs, proj)``: a derivative d^{derivs} u^{comp}
  (derivs a sorted tuple over 0..3) optionally projected to the zero mode
  (``proj="0"``) or the non-zero modes (``proj="n"``).
* A *polynomial* is a dict mapping a sorted tuple of factors to a coefficient.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from typing import Optional

import numpy as np

from .coeffs import NonlinearitySpec, monomials
from .errors import ParameterError
from .modes import project_nonzero, project_zero


class CapabilityError(ParameterError):
    """Request beyond the supported vector-field order."""


# ------------------------------------------------------------ polynomials
def _factor(comp, derivs=(), proj=""):
    return (int(comp), tuple(sorted(derivs)), proj)


def poly_add(*polys) -> dict:
    out = defaultdict(float)
    for p in polys:
        for k, v in p.items():
            out[k] += v
    return {k: v for k, v in out.items() if v != 0.0}


def poly_scale(p: dict, c: float) -> dict:
    return {k: c * v for k, v in p.items()} if c != 0.0 else {}


def poly_from_factors(coef: float, factors) -> dict:
    return {tuple(sorted(_factor(*f) for f in factors)): float(coef)}


def poly_mul(p: dict, q: dict) -> dict:
    out = defaultdict(float)
    for kp, vp in p.items():
        for kq, vq in q.items():
            out[tuple(sorted(kp + kq))] += vp * vq
    return {k: v for k, v in out.items() if v != 0.0}


def poly_diff(p: dict, alpha: int) -> dict:
    """d_alpha of a polynomial (Leibniz rule; projections commute with d)."""
    out = defaultdict(float)
    for key, c in p.items():
        for r, (comp, ders, proj) in enumerate(key):
            if proj == "0" and alpha == 3:
                continue  # d_y P_0 = 0
            new = list(key)
            new[r] = (comp, tuple(sorted(ders + (alpha,))), proj)
            out[tuple(sorted(new))] += c
    return {k: v for k, v in out.items() if v != 0.0}


def poly_diff_multi(p: dict, derivs) -> dict:
    for a in derivs:
        p = poly_diff(p, a)
    return p


def poly_box(p: dict) -> dict:
    """Box = d_t^2 - Lap_3 applied symbolically."""
    return poly_add(
        poly_diff_multi(p, (0, 0)),
        *[poly_scale(poly_diff_multi(p, (a, a)), -1.0) for a in (1, 2, 3)],
    )


def poly_q0(p: dict, q: dict) -> dict:
    """Q0(p, q) = d_t p d_t q - sum_{j=1..3} d_j p d_j q."""
    parts = [poly_mul(poly_diff(p, 0), poly_diff(q, 0))]
    for a in (1, 2, 3):
        parts.append(poly_scale(poly_mul(poly_diff(p, a), poly_diff(q, a)), -1.0))
    return poly_add(*parts)


def factor_poly(comp, derivs=(), proj="") -> dict:
    return {(_factor(comp, derivs, proj),): 1.0}


def nonlinearity_polys(spec: NonlinearitySpec, min_degree: int = 2, max_degree: int = 99) -> list:
    """F^i as one polynomial per component."""
    polys = [dict() for _ in range(spec.m)]
    for t in monomials(spec, min_degree, max_degree):
        polys[t.i] = poly_add(polys[t.i], poly_from_factors(t.coef, [(c, d) for c, d in t.factors]))
    return polys


def max_time_order(p: dict) -> int:
    return max((f[1].count(0) for key in p for f in key), default=0)


# ------------------------------------------------------------- contexts
class JetContext:
    """Derivative fields of one snapshot, with time derivatives from the PDE.

    Parameters
    ----------
    engine : ModalEngine
        Provides transforms, the retained-mode projection and F.
    t : float
    uh, uth : modal arrays of u and d_t u.
    utth : optional modal d_t^2 u (e.g. the integrator's stage value).
    jet_sweeps : fixed-point sweeps for implicit jets of order >= 3.
    """

    def __init__(self, engine, t: float, uh, uth, utth=None, jet_sweeps: int = 3):
        self.engine = engine
        self.grid = engine.grid
        self.spec = engine.spec
        self.m = engine.m
        self.t = float(t)
        self.jet_sweeps = int(jet_sweeps)
        self._jets = {0: uh, 1: uth}
        if utth is not None:
            self._jets[2] = utth
        self._fields = {}
        self._fpolys = None
        self._dtF = {}

    # ------------------------------------------------------ constructors
    @classmethod
    def from_state(cls, state, spec: NonlinearitySpec, dealias: bool = True, sweeps: int = 1, **kw) -> "JetContext":
        from .dynamics import get_engine

        if spec.m != state.m:
            raise ParameterError(f"spec has m = {spec.m} but state has m = {state.m}")
        eng = get_engine(state.grid, spec, dealias, sweeps)
        return cls(eng, state.t, eng.to_modal(state.u), eng.to_modal(state.ut), **kw)

    @classmethod
    def from_step(cls, ctx, **kw) -> "JetContext":
        """From a :class:`~twlab.dynamics.StepContext` (reuses its d_t^2 u)."""
        return cls(ctx.engine, ctx.t, ctx.uh, ctx.uth, utth=ctx.accel, **kw)

    # ------------------------------------------------------------ jets
    def _F_polys(self) -> list:
        if self._fpolys is None:
            self._fpolys = nonlinearity_polys(self.spec)
        return self._fpolys

    def _dtF_polys(self, r: int) -> list:
        if r not in self._dtF:
            self._dtF[r] = [poly_diff_multi(p, (0,) * r) for p in self._F_polys()]
        return self._dtF[r]

    def _drop_fields(self, s: int):
        for key in [k for k in self._fields if k[1].count(0) == s]:
            del self._fields[key]

    def jet(self, s: int) -> np.ndarray:
        """Modal d_t^s u."""
        if s in self._jets:
            return self._jets[s]
        eng = self.engine
        if s == 2:
            self._jets[2] = eng.accel(self._jets[0], self._jets[1])
            return self._jets[2]
        base = eng.lap * self.jet(s - 2)
        polys = self._dtF_polys(s - 2)
        if not any(polys):
            self._jets[s] = base
            return base
        implicit = max(max_time_order(p) for p in polys) >= s
        self._jets[s] = base  # first guess for implicit dependence
        for _ in range(self.jet_sweeps if implicit else 1):
            self._drop_fields(s)
            vals = np.stack([self.eval_poly(p) for p in polys])
            self._jets[s] = base + eng.to_modal(vals)
        self._drop_fields(s)
        return self._jets[s]

    # ---------------------------------------------------------- fields
    def D(self, comp: int, derivs=(), proj: str = "") -> np.ndarray:
        """Physical field P d^{derivs} u^{comp} (shape (nx, nx, ny))."""
        derivs = tuple(sorted(derivs))
        key = (int(comp), derivs, proj)
        f = self._fields.get(key)
        if f is not None:
            return f
        if proj:
            base = self.D(comp, derivs)
            f = project_zero(base) if proj == "0" else project_nonzero(base)
        else:
            s = derivs.count(0)
            a, b, e = derivs.count(1), derivs.count(2), derivs.count(3)
            eng = self.engine
            modal = self.jet(s)[comp]
            if a or b:
                modal = modal * eng.x_multiplier(a, b)
            f = eng.from_modal(modal, yorder=e)
        self._fields[key] = f
        return f

    def eval_poly(self, p: dict) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        for key, c in p.items():
            prod = c * self.D(*key[0])
            for fct in key[1:]:
                prod = prod * self.D(*fct)
            out += prod
        return out

    def u(self) -> np.ndarray:
        return np.stack([self.D(c) for c in range(self.m)])

    def ut(self) -> np.ndarray:
        return np.stack([self.D(c, (0,)) for c in range(self.m)])

    def box(self, comp: int, derivs=()) -> np.ndarray:
        """d^{derivs} Box u^{comp} from the jets (equals d^{derivs} P F)."""
        derivs = tuple(derivs)
        out = self.D(comp, derivs + (0, 0)).copy()
        for a in (1, 2, 3):
            out -= self.D(comp, derivs + (a, a))
        return out

    def nonlinearity(self, comp: int, min_degree: int = 2, derivs=()) -> np.ndarray:
        """d^{derivs} of the degree >= min_degree part of F^comp, pointwise (no projection)."""
        p = nonlinearity_polys(self.spec, min_degree)[comp]
        return self.eval_poly(poly_diff_multi(p, derivs))


# ------------------------------------------------------- vector fields
Z_NAMES = ("t", "x1", "x2", "L1", "L2", "Omega", "y")
MAX_Z_ORDER = 2


def _check_word(word) -> tuple:
    word = tuple(word)
    for z in word:
        if z not in Z_NAMES:
            raise ParameterError(f"unknown vector field {z!r}; choose from {Z_NAMES}")
    if len(word) > MAX_Z_ORDER:
        raise CapabilityError(f"vector-field order {len(word)} exceeds the supported maximum {MAX_Z_ORDER}")
    return word


def z_words(k: int) -> list:
    """Canonical words Z^a = Z_1^{a_1} ... Z_7^{a_7} with |a| <= k."""
    if k > MAX_Z_ORDER:
        raise CapabilityError(f"vector-field order {k} exceeds the supported maximum {MAX_Z_ORDER}")
    words = []
    for n in range(k + 1):
        words.extend(itertools.combinations_with_replacement(Z_NAMES, n))
    return words


# A Z-expression maps (p, q, r, derivs) -> coef for coef t^p x1^q x2^r d^{derivs} u.
def _z_identity() -> dict:
    return {(0, 0, 0, ()): 1.0}


def _z_partial(expr: dict, alpha: int) -> dict:
    out = defaultdict(float)
    for (p, q, r, d), c in expr.items():
        if alpha == 0 and p:
            out[(p - 1, q, r, d)] += c * p
        if alpha == 1 and q:
            out[(p, q - 1, r, d)] += c * q
        if alpha == 2 and r:
            out[(p, q, r - 1, d)] += c * r
        out[(p, q, r, tuple(sorted(d + (alpha,))))] += c
    return dict(out)


def _z_times(expr: dict, var: int, c0: float = 1.0) -> dict:
    out = {}
    for (p, q, r, d), c in expr.items():
        key = (p + (var == 0), q + (var == 1), r + (var == 2), d)
        out[key] = out.get(key, 0.0) + c0 * c
    return out


def _z_sum(*exprs) -> dict:
    out = defaultdict(float)
    for e in exprs:
        for k, v in e.items():
            out[k] += v
    return {k: v for k, v in out.items() if v != 0.0}


def z_apply(expr: dict, name: str) -> dict:
    """Apply one vector field to a Z-expression."""
    if name == "t":
        return _z_partial(expr, 0)
    if name == "x1":
        return _z_partial(expr, 1)
    if name == "x2":
        return _z_partial(expr, 2)
    if name == "y":
        return _z_partial(expr, 3)
    if name in ("L1", "L2"):
        i = 1 if name == "L1" else 2
        return _z_sum(_z_times(_z_partial(expr, 0), i), _z_times(_z_partial(expr, i), 0))
    if name == "Omega":
        return _z_sum(_z_times(_z_partial(expr, 2), 1), _z_times(_z_partial(expr, 1), 2, -1.0))
    raise ParameterError(f"unknown vector field {name!r}")


def z_expr(word, then=()) -> dict:
    """Expression of d^{then} Z^word u; operators act right to left."""
    expr = _z_identity()
    for name in reversed(_check_word(word)):
        expr = z_apply(expr, name)
    for a in then:
        expr = _z_partial(expr, a)
    return expr


def z_eval(ctx: JetContext, comp: int, expr: dict, proj: str = "") -> np.ndarray:
    """Evaluate a Z-expression for component ``comp``."""
    x1, x2, _ = ctx.grid.mesh()
    out = np.zeros(ctx.grid.shape)
    for (p, q, r, d), c in expr.items():
        coef = c * ctx.t**p
        if coef == 0.0:
            continue
        f = ctx.D(comp, d, proj)
        if q or r:
            out += coef * (x1**q * x2**r) * f
        else:
            out += coef * f
    return out


def apply_Z(ctx: JetContext, word, comp: Optional[int] = None, proj: str = ""):
    """(Z^a u, d_t Z^a u) for one component (or stacked over all)."""
    comps = range(ctx.m) if comp is None else [comp]
    e0 = z_expr(word)
    e1 = z_expr(word, then=(0,))
    zu = np.stack([z_eval(ctx, c, e0, proj) for c in comps])
    zut = np.stack([z_eval(ctx, c, e1, proj) for c in comps])
    if comp is not None:
        return zu[0], zut[0]
    return zu, zut
