"""Slow, independent oracles used by the tests.

``reference_F`` loops over every tensor index (zeros included) and never
touches the package's monomial flattening.  ``sympy_*`` build the model
nonlinearities symbolically from their defining equations.
"""

import itertools

import numpy as np
import sympy as sp

ETA = (1.0, -1.0, -1.0, -1.0)
MULTI1 = [()] + [(g,) for g in range(4)]


def d(J, c, *idx):
    return J[c][tuple(sorted(idx))]


def q0_ref(J, j, a, k, b):
    return sum(ETA[al] * d(J, j, *a, al) * d(J, k, *b, al) for al in range(4))


def reference_F(spec, J):
    """F^i from the dense tensors by direct loops; J[c][sorted derivs] -> value."""
    m = spec.m
    out = []
    for i in range(m):
        acc = 0.0
        for j, k in itertools.product(range(m), repeat=2):
            for sa, sb in itertools.product(range(5), repeat=2):
                c = spec.q0_quadratic[i, j, k, sa, sb]
                if c:
                    acc = acc + c * q0_ref(J, j, MULTI1[sa], k, MULTI1[sb])
            for al, be in itertools.product(range(4), repeat=2):
                c = spec.quad_semilinear[i, j, k, al, be]
                if c:
                    acc = acc + c * d(J, j, al) * d(J, k, be)
                for mu in range(4):
                    c = spec.quad_quasilinear[i, j, k, al, be, mu]
                    if c:
                        acc = acc + c * d(J, j, al, be) * d(J, k, mu)
        for j, k, l in itertools.product(range(m), repeat=3):
            c = spec.cubic_wavemap[i, j, k, l]
            if c:
                acc = acc + c * q0_ref(J, j, (), k, ()) * d(J, l)
            for al, be, mu, nu in itertools.product(range(4), repeat=4):
                c = spec.cubic_quasilinear[i, j, k, l, al, be, mu, nu]
                if c:
                    acc = acc + c * d(J, j, al, be) * d(J, k, mu) * d(J, l, nu)
        for deg, T in spec.higher.items():
            for comps in itertools.product(range(m), repeat=deg):
                for ders in itertools.product(range(4), repeat=deg + 1):
                    c = T[(i,) + comps + ders]
                    if c:
                        term = c * d(J, comps[0], ders[0], ders[1])
                        for r in range(1, deg):
                            term = term * d(J, comps[r], ders[r + 1])
                        acc = acc + term
        out.append(acc)
    return out


def random_jets(rng, m=1, order=2, shape=()):
    """J[c][sorted multi-index] for all multi-indices up to ``order``."""
    J = []
    for _ in range(m):
        Jc = {}
        for n in range(order + 1):
            for idx in itertools.combinations_with_replacement(range(4), n):
                Jc[idx] = rng.standard_normal(shape) if shape else float(rng.standard_normal())
        J.append(Jc)
    return J


# ---------------------------------------------------------------- sympy
T, X1, X2, Y = sp.symbols("t x1 x2 y")
COORDS = (T, X1, X2, Y)


def phi_function(name="phi"):
    return sp.Function(name)(*COORDS)


def substitute_jets(expr, funcs, J):
    """Replace derivatives of each function in ``funcs`` by jet values."""
    reps = {}
    for c, f in enumerate(funcs):
        for idx, val in J[c].items():
            if idx:
                key = sp.Derivative(f, *[COORDS[g] for g in idx])
            else:
                key = f
            reps[key] = val
    # substitute highest derivatives first so sub-expressions are not clobbered
    keys = sorted(reps, key=lambda k: -len(k.variables) if isinstance(k, sp.Derivative) else 0)
    e = expr
    for k in keys:
        e = e.subs(k, reps[k])
    return float(e)


def sympy_membrane_cubic():
    """Exact polynomial form of the membrane equation.

    The Euler-Lagrange equation d_t(phi_t / s) - div(grad phi / s) = 0 with
    s = sqrt(1 - phi_t^2 + |grad phi|^2) is multiplied by s^3, which makes it
    polynomial: s^2 Box phi + R = 0.  Hence Box phi = Box phi - s^3 E, a cubic.
    """
    phi = phi_function()
    pt = sp.diff(phi, T)
    grad = [sp.diff(phi, v) for v in (X1, X2, Y)]
    s = sp.sqrt(1 - pt**2 + sum(g**2 for g in grad))
    E = sp.diff(pt / s, T) - sum(sp.diff(g / s, v) for g, v in zip(grad, (X1, X2, Y)))
    box = sp.diff(phi, T, 2) - sum(sp.diff(phi, v, 2) for v in (X1, X2, Y))
    return sp.expand(sp.simplify(box - sp.expand(E * s**3))), phi


def sympy_chaplygin():
    """F from the potential-flow equation with Box phi substituted once."""
    phi = phi_function()
    pt = sp.diff(phi, T)
    grad = [sp.diff(phi, v) for v in (X1, X2, Y)]
    lap = sum(sp.diff(phi, v, 2) for v in (X1, X2, Y))
    rhs = (
        2 * pt * lap
        - 2 * sum(g * sp.diff(g, T) for g in grad)
        + sum(g**2 for g in grad) * lap
        - sum(gi * gj * sp.diff(phi, vi, vj) for gi, vi in zip(grad, (X1, X2, Y)) for gj, vj in zip(grad, (X1, X2, Y)))
    )
    q0 = sp.diff(pt, T) * pt - sum(sp.diff(pt, v) * g for v, g in zip((X1, X2, Y), grad))
    cubic_orig = rhs - (2 * pt * lap - 2 * sum(g * sp.diff(g, T) for g in grad))
    # quadratic part = 2 Q0(phi_t, phi) - 2 phi_t Box phi, and Box phi -> rhs
    return sp.expand(2 * q0 - 2 * pt * rhs + cubic_orig), phi


def sympy_lagrangian(k):
    phi = phi_function()
    pt = sp.diff(phi, T)
    grad = [sp.diff(phi, v) for v in (X1, X2, Y)]
    ell = -sp.Rational(1, 2) * pt**2 + sp.Rational(1, 2) * sum(g**2 for g in grad)
    expr = -sp.diff(ell**k * pt, T) + sum(sp.diff(ell**k * g, v) for g, v in zip(grad, (X1, X2, Y)))
    return sp.expand(expr), phi
