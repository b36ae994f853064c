"""Diagnostics that turn trajectories into measured decay, energy and identity checks.

All evaluators take a :class:`~twlab.jets.JetContext` (one snapshot with
its equation-derived time jets) and are pure.  Weights use the box-native
|x| = sqrt(x1^2 + x2^2), valid while no wave wraps around the box.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy import special

from .coeffs import MULTI1, MULTI2, NonlinearitySpec, TransformedSpec, transformed_monomials
from .errors import ParameterError
from .grid import Grid
from .jets import (
    CapabilityError,
    JetContext,
    apply_Z,
    factor_poly,
    nonlinearity_polys,
    poly_add,
    poly_box,
    poly_diff_multi,
    poly_from_factors,
    poly_mul,
    poly_q0,
    poly_scale,
    z_eval,
    z_expr,
    z_words,
)
from .modes import japanese, project_nonzero, project_zero

__all__ = [
    "CapabilityError",
    "EnergyReport",
    "GhostAccumulator",
    "JetContext",
    "VectorFieldIndex",
    "WeightSpec",
    "apply_Z",
    "energy",
    "fit_decay",
    "ghost_q",
    "good_derivative",
    "klainerman_sobolev_check",
    "linear_weighted_estimate_probe",
    "normalform_identity_residual",
    "normalform_residual",
    "null_bound_check",
    "q0",
    "transform_V",
    "transform_Vtilde",
    "weighted_sup",
]


# ------------------------------------------------------------ elementary
def q0(grid: Grid, f_pair, g_pair) -> np.ndarray:
    """Q0(f, g) = f_t g_t - sum_{j=1..3} d_j f d_j g from (value, d_t value) pairs."""
    f, ft = (np.asarray(a, dtype=float) for a in f_pair)
    g, gt = (np.asarray(a, dtype=float) for a in g_pair)
    out = ft * gt
    fh, gh = grid.fft(f), grid.fft(g)
    for ax in ("x1", "x2", "y"):
        mult = grid.derivative_multiplier(ax, 1)
        out = out - grid.ifft(fh * mult) * grid.ifft(gh * mult)
    return out


def radial_unit(grid: Grid):
    """(omega_1, omega_2) = x/|x| on the x-plane, set to 0 where |x| < dx/2."""
    x1, x2, _ = grid.mesh()
    r = np.sqrt(x1 * x1 + x2 * x2)
    safe = np.where(r < 0.5 * grid.dx, np.inf, r)
    return x1 / safe, x2 / safe


def good_derivative(grid: Grid, f_pair) -> tuple:
    """(dbar_1 f, dbar_2 f) with dbar_i = d_i + (x_i/|x|) d_t (dbar = d_x at the origin)."""
    f, ft = (np.asarray(a, dtype=float) for a in f_pair)
    w1, w2 = radial_unit(grid)
    fh = grid.fft(f)
    d1 = grid.ifft(fh * grid.derivative_multiplier("x1", 1))
    d2 = grid.ifft(fh * grid.derivative_multiplier("x2", 1))
    return d1 + w1 * ft, d2 + w2 * ft


# --------------------------------------------------------- vector fields
@dataclass(frozen=True)
class VectorFieldIndex:
    """A word over {t, x1, x2, L1, L2, Omega, y}; operators act right to left."""

    word: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(self.word))
        z_expr(self.word)  # validates names and the order cap

    @property
    def order(self) -> int:
        return len(self.word)


def _grad_of_word(ctx: JetContext, comp: int, word, proj: str = "") -> list:
    """[d_alpha Z^a u^comp for alpha = t, x1, x2, y]."""
    return [z_eval(ctx, comp, z_expr(word, then=(a,)), proj) for a in range(4)]


def _dbar_dy(ctx: JetContext, comp: int, word) -> tuple:
    """|dbar Z^a u|^2 and |d_y Z^a u|^2 pointwise."""
    g = _grad_of_word(ctx, comp, word)
    w1, w2 = radial_unit(ctx.grid)
    b1 = g[1] + w1 * g[0]
    b2 = g[2] + w2 * g[0]
    return b1 * b1 + b2 * b2, g[3] * g[3]


# --------------------------------------------------------------- energies
@dataclass
class EnergyReport:
    t: float
    E: dict  # k -> E_k
    X: dict = field(default_factory=dict)  # k -> X_k
    ghost_integral: float = 0.0


def _l2(grid: Grid, f) -> float:
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def _l2_plane(grid: Grid, f) -> float:
    """L^2(R^2) norm of a y-independent field (first y-slice)."""
    g = f[..., 0]
    return float(np.sqrt(np.sum(g * g) * grid.dx * grid.dx))


def energy(ctx: JetContext, k: int = 0, with_X: bool = False) -> EnergyReport:
    """E_j = sum_i sum_{|a| <= j} ||d Z^a u^i||_{L^2}, j = 0..k (and X_j on request).

    X_j = sum_i sum_{|a| <= j-1} ||<t-|x|> P_0 d^2 Z^a u^i||_{L^2(R^2)} with
    |d^2 f|^2 summed over second-order multi-indices.
    """
    if k < 0:
        raise ParameterError("k must be >= 0")
    words = z_words(k)
    grid = ctx.grid
    per_order = np.zeros(k + 1)
    for w in words:
        for c in range(ctx.m):
            g = _grad_of_word(ctx, c, w)
            per_order[len(w)] += math.sqrt(sum(_l2(grid, gi) ** 2 for gi in g))
    E = {j: float(per_order[: j + 1].sum()) for j in range(k + 1)}
    X = {}
    if with_X:
        x1, x2, _ = grid.mesh()
        wt = japanese(ctx.t - np.sqrt(x1 * x1 + x2 * x2))
        per = np.zeros(k + 1)
        for w in z_words(max(k - 1, 0)) if k >= 1 else []:
            for c in range(ctx.m):
                sq = 0.0
                for al in range(3):
                    for be in range(al, 3):
                        d = z_eval(ctx, c, z_expr(w, then=(al, be)), proj="0")
                        sq = sq + _l2_plane(grid, wt * d) ** 2
                per[len(w)] += math.sqrt(sq)
        X = {j: float(per[:j].sum()) for j in range(1, k + 1)}
    return EnergyReport(ctx.t, E, X)


# ------------------------------------------------------------ ghost weight
GHOST_EXPONENT = 1.1
_A = GHOST_EXPONENT / 2.0
Q_TOTAL = math.sqrt(math.pi) * math.gamma(_A - 0.5) / math.gamma(_A)  # int_R <s>^{-1.1} ds


def ghost_q(s):
    """q(s) = int_{-inf}^s <tau>^{-1.1} d tau, in [0, Q_TOTAL)."""
    s = np.asarray(s, dtype=float)
    return 0.5 * Q_TOTAL + s * special.hyp2f1(0.5, _A, 1.5, -s * s)


def ghost_density(ctx: JetContext, k: int = 1) -> float:
    """sum_{|a| <= k} int e^q (|dbar Z^a u|^2 + |d_y Z^a u|^2) / (2 <t-|x|>^{1.1}) dx dy."""
    grid = ctx.grid
    x1, x2, _ = grid.mesh()
    r = np.sqrt(x1 * x1 + x2 * x2)
    weight = np.exp(ghost_q(r - ctx.t)) / (2.0 * japanese(ctx.t - r) ** GHOST_EXPONENT)
    acc = np.zeros(grid.shape)
    for w in z_words(k):
        for c in range(ctx.m):
            b, y = _dbar_dy(ctx, c, w)
            acc += b + y
    return float(np.sum(weight * acc) * grid.cell_volume)


class GhostAccumulator:
    """Running space-time ghost integral (trapezoid rule in time).

    ``add(ctx)`` returns the updated :class:`EnergyReport`-style value; the
    integral is nondecreasing because the density is nonnegative.
    """

    def __init__(self, k: int = 1):
        self.k = int(k)
        self.value = 0.0
        self._last: Optional[tuple] = None
        self.history: list = []

    def add(self, ctx: JetContext) -> float:
        dens = ghost_density(ctx, self.k)
        if self._last is not None:
            t0, d0 = self._last
            self.value += 0.5 * (ctx.t - t0) * (d0 + dens)
        self._last = (ctx.t, dens)
        self.history.append((ctx.t, self.value))
        return self.value

    def value_at(self, t: float) -> float:
        ts = np.array([h[0] for h in self.history])
        vs = np.array([h[1] for h in self.history])
        return float(np.interp(t, ts, vs))


# -------------------------------------------------------- weighted sups
_PROJECTIONS = ("full", "zero", "nonzero")
_DERIVATIVES = ("none", "d", "dy", "dbar")


@dataclass(frozen=True)
class WeightSpec:
    """<t+|x|>^a_plus <t-|x|>^a_minus <x>^a_x |selected quantity of u|."""

    a_plus: float = 0.0
    a_minus: float = 0.0
    a_x: float = 0.0
    projection: str = "full"
    derivative: str = "none"

    def __post_init__(self):
        for v in (self.a_plus, self.a_minus, self.a_x):
            if not np.isfinite(v):
                raise ParameterError("weight exponents must be finite")
        if self.projection not in _PROJECTIONS:
            raise ParameterError(f"projection must be one of {_PROJECTIONS}")
        if self.derivative not in _DERIVATIVES:
            raise ParameterError(f"derivative must be one of {_DERIVATIVES}")


def weight_field(grid: Grid, t: float, w: WeightSpec) -> np.ndarray:
    x1, x2, _ = grid.mesh()
    r = np.sqrt(x1 * x1 + x2 * x2)
    return japanese(t + r) ** w.a_plus * japanese(t - r) ** w.a_minus * japanese(r) ** w.a_x


def selected_quantity(ctx: JetContext, w: WeightSpec) -> np.ndarray:
    """|P D u| pointwise (components combined in l^2)."""
    proj = {"full": "", "zero": "0", "nonzero": "n"}[w.projection]
    sq = np.zeros(ctx.grid.shape)
    w1, w2 = radial_unit(ctx.grid) if w.derivative == "dbar" else (None, None)
    for c in range(ctx.m):
        if w.derivative == "none":
            f = ctx.D(c, (), proj)
            sq += f * f
        elif w.derivative == "d":
            for a in range(4):
                f = ctx.D(c, (a,), proj)
                sq += f * f
        elif w.derivative == "dy":
            f = ctx.D(c, (3,), proj)
            sq += f * f
        else:
            ft = ctx.D(c, (0,), proj)
            for a, wa in ((1, w1), (2, w2)):
                f = ctx.D(c, (a,), proj) + wa * ft
                sq += f * f
    return np.sqrt(sq)


def weighted_sup(ctx: JetContext, w: WeightSpec) -> float:
    return float(np.max(weight_field(ctx.grid, ctx.t, w) * selected_quantity(ctx, w)))


# ----------------------------------------------------------------- fits
@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r2: float
    n: int


def fit_decay(t, values, window: Optional[tuple] = None) -> DecayFit:
    """Least squares of log(value) against log(t) over an optional window."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, v = t[sel], v[sel]
    if len(t) < 5:
        raise ParameterError(f"fit_decay needs at least 5 points, got {len(t)}")
    if np.any(v <= 0) or np.any(t <= 0):
        raise ParameterError("fit_decay needs positive times and values")
    lx, ly = np.log(t), np.log(v)
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(slope), float(icpt), r2, len(t))


# ----------------------------------------------------------- null bound
NULL_BOUND = 3.0
NULL_DENOM_FLOOR = 1e-14


def null_bound_ratio(grid: Grid, f_ctx: JetContext, g_ctx: JetContext, fc: int = 0, gc: int = 0) -> np.ndarray:
    """|Q0(P_0 f, g)| / (|P_0 dbar f||d g| + |P_0 d f||dbar g|) pointwise (NaN where excluded).

    Points with |x| < dx/2 are excluded: the bound rests on |x/|x|| = 1.
    """
    fd = [f_ctx.D(fc, (a,), "0") for a in range(3)]
    gd = [g_ctx.D(gc, (a,)) for a in range(4)]
    num = np.abs(fd[0] * gd[0] - fd[1] * gd[1] - fd[2] * gd[2])
    w1, w2 = radial_unit(grid)
    fbar = np.sqrt((fd[1] + w1 * fd[0]) ** 2 + (fd[2] + w2 * fd[0]) ** 2)
    gbar = np.sqrt((gd[1] + w1 * gd[0]) ** 2 + (gd[2] + w2 * gd[0]) ** 2)
    fdn = np.sqrt(sum(d * d for d in fd))
    gdn = np.sqrt(sum(d * d for d in gd))
    den = fbar * gdn + fdn * gbar
    x1, x2, _ = grid.mesh()
    keep = (np.sqrt(x1 * x1 + x2 * x2) >= 0.5 * grid.dx) & (den > NULL_DENOM_FLOOR)
    return np.where(keep, num / np.where(keep, den, 1.0), np.nan)


def null_bound_check(f_ctx: JetContext, g_ctx: JetContext, fc: int = 0, gc: int = 0) -> float:
    """Largest pointwise ratio of the first null-form bound (0 if nothing qualifies)."""
    r = null_bound_ratio(f_ctx.grid, f_ctx, g_ctx, fc, gc)
    return float(np.nanmax(r)) if np.any(np.isfinite(r)) else 0.0


# ------------------------------------------------------------ normal form
def _vtilde_polys(spec: NonlinearitySpec) -> list:
    polys = [factor_poly(i) for i in range(spec.m)]
    C = spec.q0_quadratic
    for idx in zip(*np.nonzero(C)):
        i, j, k, sa, sb = (int(v) for v in idx)
        term = poly_from_factors(-0.5 * C[idx], [(j, MULTI1[sa]), (k, MULTI1[sb])])
        polys[i] = poly_add(polys[i], term)
    return polys


def _v_correction_polys(ts: TransformedSpec) -> list:
    polys = [dict() for _ in range(ts.m)]
    C = ts.q0_extended
    for idx in zip(*np.nonzero(C)):
        i, j, k, l, sa, sb = (int(v) for v in idx)
        term = poly_from_factors(-0.5 * C[idx], [(j, MULTI2[sa], "n"), (k, MULTI2[sb], "n"), (l, (), "0")])
        polys[i] = poly_add(polys[i], term)
    return polys


def _as_ts(spec_or_ts) -> TransformedSpec:
    from .coeffs import derive_transformed

    return spec_or_ts if isinstance(spec_or_ts, TransformedSpec) else derive_transformed(spec_or_ts)


def transform_Vtilde(ctx: JetContext, spec: Optional[NonlinearitySpec] = None) -> np.ndarray:
    """Vtilde^i = u^i - 1/2 sum C^{ab}_{ijk} d^a u^j d^b u^k, shape (m, nx, nx, ny)."""
    spec = spec or ctx.spec
    return np.stack([ctx.eval_poly(p) for p in _vtilde_polys(spec)])


def transform_V(ctx: JetContext, spec_or_ts=None) -> np.ndarray:
    """V^i = Vtilde^i - 1/2 sum C^{ab}_{ijkl} P_n d^a u^j P_n d^b u^k P_0 u^l."""
    ts = _as_ts(spec_or_ts or ctx.spec)
    vt = [poly_add(a, b) for a, b in zip(_vtilde_polys(ts.base), _v_correction_polys(ts))]
    return np.stack([ctx.eval_poly(p) for p in vt])


def v_polys(ts: TransformedSpec) -> list:
    return [poly_add(a, b) for a, b in zip(_vtilde_polys(ts.base), _v_correction_polys(ts))]


def c1_polys(ts: TransformedSpec) -> list:
    polys = [dict() for _ in range(ts.m)]
    for t in transformed_monomials(ts):
        polys[t.i] = poly_add(polys[t.i], poly_from_factors(t.coef, list(t.factors)))
    return polys


def c2_polys(ts: TransformedSpec) -> list:
    """The projected wave-map-type terms left after the V transformation."""
    polys = [dict() for _ in range(ts.m)]
    C = ts.q0_extended
    for idx in zip(*np.nonzero(C)):
        i, j, k, l, sa, sb = (int(v) for v in idx)
        c = float(C[idx])
        a, b = MULTI2[sa], MULTI2[sb]
        X0, Xn, X = factor_poly(j, a, "0"), factor_poly(j, a, "n"), factor_poly(j, a)
        Y0, Yn, Y = factor_poly(k, b, "0"), factor_poly(k, b, "n"), factor_poly(k, b)
        U0, Un = factor_poly(l, (), "0"), factor_poly(l, (), "n")
        parts = [
            poly_mul(U0, poly_add(poly_q0(Xn, Y0), poly_q0(X0, Yn), poly_q0(X0, Y0))),
            poly_mul(poly_q0(X, Y), Un),
            poly_scale(poly_mul(poly_q0(Xn, U0), Yn), -1.0),
            poly_scale(poly_mul(poly_q0(U0, Yn), Xn), -1.0),
        ]
        polys[i] = poly_add(polys[i], poly_scale(poly_add(*parts), c))
    return polys


def g_remainder(ctx: JetContext, ts: TransformedSpec) -> np.ndarray:
    """G = G_4 + Gtilde from the descriptors, with Box u replaced by F."""
    m = ts.m
    out = np.zeros((m,) + ctx.grid.shape)
    F_all = nonlinearity_polys(ts.base)
    F3 = nonlinearity_polys(ts.base, min_degree=3)
    F4 = nonlinearity_polys(ts.base, min_degree=4)
    cache = {}

    def dF(which, comp, derivs):
        key = (which, comp, tuple(sorted(derivs)))
        if key not in cache:
            src = {"all": F_all, "3": F3}[which]
            cache[key] = ctx.eval_poly(poly_diff_multi(src[comp], derivs))
        return cache[key]

    for g in ts.g_terms:
        if g.kind == "F":
            out[g.i] += ctx.eval_poly(F4[g.i])
        elif g.kind == "dF":
            if g.slot == 0:
                out[g.i] += g.coef * dF("3", g.j, g.a) * ctx.D(g.k, g.b)
            else:
                out[g.i] += g.coef * ctx.D(g.j, g.a) * dF("3", g.k, g.b)
        elif g.kind == "proj":
            fX = dF("all", g.j, g.a) if g.slot == 0 else ctx.D(g.j, g.a)
            fY = dF("all", g.k, g.b) if g.slot == 1 else ctx.D(g.k, g.b)
            fZ = dF("all", g.l, ()) if g.slot == 2 else ctx.D(g.l)
            out[g.i] += g.coef * project_nonzero(fX) * project_nonzero(fY) * project_zero(fZ)
        else:
            raise ParameterError(f"unknown G descriptor kind {g.kind!r}")
    return out


def normalform_rhs(ctx: JetContext, ts: TransformedSpec) -> np.ndarray:
    """C_1 + C_2 + G at one snapshot."""
    c1 = np.stack([ctx.eval_poly(p) for p in c1_polys(ts)])
    c2 = np.stack([ctx.eval_poly(p) for p in c2_polys(ts)])
    return c1 + c2 + g_remainder(ctx, ts)


def _lap3(grid: Grid, f: np.ndarray) -> np.ndarray:
    return grid.laplacian3(f)


def normalform_residual(contexts: Sequence[JetContext], ts: TransformedSpec) -> np.ndarray:
    """(t, ||D_tt V - Lap_3 V - (C_1 + C_2 + G)||_{L^2}) at every interior snapshot.

    ``contexts`` are equally spaced in time; D_tt is the centred second
    difference.
    """
    ctxs = list(contexts)
    if len(ctxs) < 3:
        raise ParameterError("normalform_residual needs at least three snapshots")
    ts_ = np.array([c.t for c in ctxs])
    h = np.diff(ts_)
    if np.any(h <= 0) or np.ptp(h) > 1e-9 * max(1.0, abs(h[0])):
        raise ParameterError("snapshots must be equally spaced in time")
    h = float(h[0])
    grid = ctxs[0].grid
    V = [transform_V(c, ts) for c in ctxs]
    out = []
    for n in range(1, len(ctxs) - 1):
        res = (V[n + 1] - 2.0 * V[n] + V[n - 1]) / (h * h) - _lap3(grid, V[n]) - normalform_rhs(ctxs[n], ts)
        out.append((ctxs[n].t, math.sqrt(sum(_l2(grid, r) ** 2 for r in res))))
    return np.array(out)


def normalform_identity_residual(ctx: JetContext, ts: TransformedSpec) -> float:
    """||Box V - (C_1 + C_2 + G)||_{L^2} with Box V expanded pointwise from the jets.

    No time differencing is involved, so on a resolved, non-dealiased
    snapshot this vanishes to rounding error and certifies the algebra of
    the transformed tensors.
    """
    boxV = np.stack([ctx.eval_poly(poly_box(p)) for p in v_polys(ts)])
    res = boxV - normalform_rhs(ctx, ts)
    return math.sqrt(sum(_l2(ctx.grid, r) ** 2 for r in res))


# ---------------------------------------------------- pointwise lemmas
def _plane_derivs(grid: Grid):
    k = grid.kx.copy()
    k[grid.nx // 2] = 0.0
    return 1j * k[:, None], 1j * k[None, :]


def klainerman_sobolev_check(grid: Grid, f: np.ndarray) -> float:
    """max <x>^{1/2}|f| / sum_{|a|+|b|<=2} ||grad_x^a Omega^b f||_{L^2(R^2)} for f on the x-plane."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.nx, grid.nx):
        raise ParameterError(f"f must have shape {(grid.nx, grid.nx)}")
    m1, m2 = _plane_derivs(grid)
    x = grid.x
    X1, X2 = x[:, None], x[None, :]
    area = grid.dx * grid.dx

    def d(g, mult):
        return sfft.ifft2(sfft.fft2(g) * mult).real

    def omega(g):
        gh = sfft.fft2(g)
        return X1 * sfft.ifft2(gh * m2).real - X2 * sfft.ifft2(gh * m1).real

    total = 0.0
    g = f
    for b in range(3):
        if b:
            g = omega(g)
        for n in range(3 - b):
            for p in range(n + 1):
                h = d(g, m1**p * m2 ** (n - p))
                total += math.sqrt(float(np.sum(h * h)) * area)
    if total == 0.0:
        return 0.0
    r = np.sqrt(X1 * X1 + X2 * X2)
    return float(np.max(japanese(r) ** 0.5 * np.abs(f)) / total)


def _W(t, r, sigma, lam):
    return japanese(t + r) ** sigma * np.minimum(japanese(r), japanese(t - r)) ** lam


def linear_weighted_estimate_probe(
    grid: Grid,
    source: Callable,
    rho: float,
    kappa: float,
    t_final: float,
    dt: float,
    sample_every: int = 1,
) -> dict:
    """Ratios of the two weighted bounds for Box_{t,x} w = f with zero data.

    ``source(t, X1, X2)`` returns f on the x-plane; d_t f for the Gamma^a
    terms is taken from a fourth-order centred difference of the callable.
    The solve uses the exact 2D propagator over each step with the source
    treated by Simpson's rule.  Returns sup-ratios for the value bound and
    the derivative bound, each the left side sup over sampled (t, x)
    divided by the right side sup over the same samples.
    """
    if not (0.0 < rho < 0.5):
        raise ParameterError(f"rho must lie in (0, 1/2), got {rho!r}")
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa!r}")
    x = grid.x
    X1, X2 = x[:, None], x[None, :]
    r = np.sqrt(X1 * X1 + X2 * X2)
    m1, m2 = _plane_derivs(grid)
    kk = np.sqrt(-(m1 * m1 + m2 * m2).real)
    n_steps = int(round(t_final / dt))
    wh = np.zeros((grid.nx, grid.nx), dtype=complex)
    wth = np.zeros_like(wh)

    def prop(a, b, tau):
        c = np.cos(kk * tau)
        s = np.where(kk > 0, np.sin(kk * tau) / np.where(kk > 0, kk, 1.0), tau)
        return c * a + s * b, -kk * kk * s * a + c * b

    lhs_w = lhs_dw = rhs_w = rhs_dw = 0.0
    h_fd = 1e-3

    def sample_rhs(t):
        f = source(t, X1, X2)
        ft = (8 * (source(t + h_fd, X1, X2) - source(t - h_fd, X1, X2)) - (source(t + 2 * h_fd, X1, X2) - source(t - 2 * h_fd, X1, X2))) / (12 * h_fd)
        fh = sfft.fft2(f)
        f1 = sfft.ifft2(fh * m1).real
        f2 = sfft.ifft2(fh * m2).real
        gams = [f, ft, f1, f2, X1 * ft + t * f1, X2 * ft + t * f2, X1 * f2 - X2 * f1]
        base = japanese(r) ** 0.5
        a = float(np.max(base * _W(t, r, 1 + rho, 1 + kappa) * np.abs(f)))
        b = sum(float(np.max(base * _W(t, r, 1 + rho + kappa, 1) * np.abs(g))) for g in gams)
        return a, b

    for n in range(n_steps + 1):
        t = n * dt
        if n % sample_every == 0 or n == n_steps:
            w = sfft.ifft2(wh).real
            wt = sfft.ifft2(wth).real
            w1 = sfft.ifft2(wh * m1).real
            w2 = sfft.ifft2(wh * m2).real
            dw = np.sqrt(wt * wt + w1 * w1 + w2 * w2)
            lhs_w = max(lhs_w, float(np.max(japanese(t + r) ** 0.5 * japanese(t - r) ** rho * np.abs(w))))
            lhs_dw = max(lhs_dw, float(np.max(japanese(r) ** 0.5 * japanese(t - r) ** (1 + rho) * dw)))
            a, b = sample_rhs(t)
            rhs_w, rhs_dw = max(rhs_w, a), max(rhs_dw, b)
        if n == n_steps:
            break
        # Duhamel over one step: w(t+dt) = S(dt) w(t) + int_0^dt S(dt-s)(0, f(t+s)) ds
        wh, wth = prop(wh, wth, dt)
        for tau, wgt in ((0.0, 1.0), (0.5 * dt, 4.0), (dt, 1.0)):
            fh = sfft.fft2(source(t + tau, X1, X2))
            a, b = prop(np.zeros_like(fh), fh, dt - tau)
            wh = wh + (dt / 6.0) * wgt * a
            wth = wth + (dt / 6.0) * wgt * b
    return {
        "w": lhs_w / rhs_w if rhs_w > 0 else 0.0,
        "dw": lhs_dw / rhs_dw if rhs_dw > 0 else 0.0,
    }


# --------------------------------------------------------------- output
def records_to_csv(records) -> str:
    """Long-format CSV ``t,name,value`` (repr-exact floats)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "name", "value"])
    for t, name, value in records:
        w.writerow([repr(float(t)), name, repr(float(value))])
    return buf.getvalue()


def csv_to_records(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["t", "name", "value"]:
        raise ParameterError("not a t,name,value CSV")
    return [(float(t), n, float(v)) for t, n, v in rows[1:]]


def series(records, name: str):
    """(t array, value array) of one diagnostic."""
    pts = [(t, v) for t, n, v in records if n == name]
    if not pts:
        return np.array([]), np.array([])
    a = np.array(pts)
    return a[:, 0], a[:, 1]


def summary_json(summary: dict) -> str:
    def conv(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(f"not serializable: {type(o)}")

    return json.dumps(summary, indent=2, sort_keys=True, default=conv)
