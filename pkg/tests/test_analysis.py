import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import band_limited, gaussian
from twlab.analysis import (
    NULL_BOUND,
    Q_TOTAL,
    GhostAccumulator,
    VectorFieldIndex,
    WeightSpec,
    csv_to_records,
    energy,
    fit_decay,
    ghost_density,
    ghost_q,
    good_derivative,
    klainerman_sobolev_check,
    linear_weighted_estimate_probe,
    normalform_identity_residual,
    null_bound_check,
    q0,
    records_to_csv,
    series,
    summary_json,
    transform_V,
    transform_Vtilde,
    weight_field,
    weighted_sup,
)
from twlab.coeffs import NonlinearitySpec, derive_transformed, preset
from twlab.dynamics import SimState
from twlab.errors import ParameterError
from twlab.grid import Grid
from twlab.jets import CapabilityError, JetContext, z_eval, z_expr
from twlab.modes import japanese, project_nonzero, project_zero


def bump(grid, center=(0.0, 0.0), sigma=1.5, amp=1.0, ymod=0.5):
    return amp * gaussian(grid, center, sigma, y_mod=lambda y: 1 + ymod * np.cos(y))


def ctx_for(grid, u, ut, spec=None, dealias=True, t=0.0):
    spec = spec or NonlinearitySpec.zeros(1)
    return JetContext.from_state(SimState(t, u, ut, grid), spec, dealias=dealias)


class TestQ0:
    def test_time_only(self, small_grid):
        one = np.ones(small_grid.shape)
        assert np.allclose(q0(small_grid, (one, one), (one, one)), 1.0)

    def test_orthogonal_directions(self, small_grid):
        x1, _, _ = small_grid.mesh()
        one = np.ones(small_grid.shape)
        s = np.broadcast_to(np.sin(np.pi * x1 / small_grid.L), small_grid.shape)
        assert np.max(np.abs(q0(small_grid, (one, one), (s, 0 * s)))) < 1e-14

    def test_spatial_sign(self, small_grid):
        x1, _, _ = small_grid.mesh()
        k = np.pi / small_grid.L
        s = np.broadcast_to(np.sin(k * x1), small_grid.shape)
        expected = -(k * np.cos(k * x1)) ** 2
        assert np.allclose(q0(small_grid, (s, 0 * s), (s, 0 * s)), expected, atol=1e-14)


class TestGoodDerivative:
    def test_of_time(self, small_grid):
        one = np.ones(small_grid.shape)
        d1, d2 = good_derivative(small_grid, (0 * one, one))
        x1, x2, _ = small_grid.mesh()
        r = np.hypot(x1, x2)
        mask = np.broadcast_to(r >= small_grid.dx / 2, small_grid.shape)
        assert np.allclose(d1[mask], np.broadcast_to(x1 / np.where(r > 0, r, 1), small_grid.shape)[mask])
        # at the origin dbar is d_x
        assert np.all(d1[~mask] == 0) and np.all(d2[~mask] == 0)

    def test_radial_outgoing_vanishes(self):
        g = Grid(128, 16.0, 4)
        x1, x2, _ = g.mesh()
        r = np.broadcast_to(np.hypot(x1, x2), g.shape)
        t = 6.0
        f = np.exp(-((r - t) ** 2))
        ft = 2 * (r - t) * f  # d_t g(r - t) = -g'(r - t)
        d1, d2 = good_derivative(g, (f, ft))
        assert max(np.abs(d1).max(), np.abs(d2).max()) < 1e-8

    def test_identity(self, small_grid, rng):
        f, ft = band_limited(small_grid, rng), band_limited(small_grid, rng)
        t = 2.5
        x1, x2, _ = small_grid.mesh()
        r = np.broadcast_to(np.hypot(x1, x2), small_grid.shape)
        dbar = good_derivative(small_grid, (f, ft))
        for i, (xi, ax) in enumerate(((x1, "x1"), (x2, "x2"))):
            di = small_grid.spectral_derivative(f, ax)
            Li = xi * ft + t * di
            lhs = r * dbar[i]
            rhs = Li + (r - t) * di
            assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1.0, np.abs(rhs).max())


class TestQ0Commutation:
    @pytest.mark.parametrize("word", ["L1", "L2", "Omega"])
    def test_lorentz_invariance(self, word):
        g = Grid(64, 16.0, 4)
        u = bump(g, (1.0, -0.5), 1.5) + bump(g, (-2.0, 1.0), 1.2, 0.5)
        ut = bump(g, (0.5, 0.5), 1.3, 0.7)
        ctx = ctx_for(g, u, ut, t=1.7)

        def dZ(word, a):
            return z_eval(ctx, 0, z_expr(word, then=(a,)))

        # Z Q0(u, u) against 2 Q0(Z u, u); d Q0 expanded by hand
        D = ctx.D
        dQ = {a: 2 * (D(0, (0,)) * D(0, (0, a)) - sum(D(0, (b,)) * D(0, (a, b)) for b in (1, 2, 3))) for a in range(3)}
        x1, x2, _ = g.mesh()
        lhs = {"L1": x1 * dQ[0] + ctx.t * dQ[1], "L2": x2 * dQ[0] + ctx.t * dQ[2], "Omega": x1 * dQ[2] - x2 * dQ[1]}[word]
        w = (word,)
        rhs = 2 * (dZ(w, 0) * D(0, (0,)) - sum(dZ(w, a) * D(0, (a,)) for a in (1, 2, 3)))
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.abs(lhs).max()


class TestEnergy:
    def test_zero(self, small_grid):
        z = np.zeros(small_grid.shape)
        rep = energy(ctx_for(small_grid, z, z), 2, with_X=True)
        assert all(v == 0 for v in rep.E.values()) and all(v == 0 for v in rep.X.values())

    def test_nesting(self, small_grid):
        u = bump(small_grid, sigma=2.0)
        rep = energy(ctx_for(small_grid, u, 0.3 * u, t=1.0), 2, with_X=True)
        assert rep.E[0] <= rep.E[1] <= rep.E[2]
        assert 0 <= rep.X[1] <= rep.X[2]

    def test_e0_matches_dynamics(self, small_grid):
        from twlab.dynamics import energy0, initial_data

        s = initial_data(small_grid, 1e-3, sigma=1.5)
        ctx = JetContext.from_state(s, NonlinearitySpec.zeros(1))
        assert energy(ctx, 0).E[0] == pytest.approx(energy0(small_grid, s.u, s.ut), rel=1e-12)

    def test_bad_order(self, small_grid):
        z = np.zeros(small_grid.shape)
        with pytest.raises(ParameterError):
            energy(ctx_for(small_grid, z, z), -1)
        with pytest.raises(CapabilityError):
            energy(ctx_for(small_grid, z, z), 3)


class TestGhost:
    def test_q_total(self):
        val, _ = integrate.quad(lambda s: (1 + s * s) ** -0.55, -np.inf, np.inf)
        assert Q_TOTAL == pytest.approx(val, rel=1e-10)

    @given(st.floats(-1e6, 1e6))
    def test_q_bounds(self, s):
        q = float(ghost_q(s))
        assert 0.0 <= q <= Q_TOTAL
        assert 1.0 <= math.exp(q) <= math.exp(Q_TOTAL)

    def test_q_derivative(self):
        s = np.linspace(-30, 30, 61)
        h = 1e-5
        d = (ghost_q(s + h) - ghost_q(s - h)) / (2 * h)
        assert np.allclose(d, japanese(s) ** -1.1, rtol=1e-7)

    def test_zero_field_no_change(self, small_grid):
        z = np.zeros(small_grid.shape)
        acc = GhostAccumulator(1)
        for t in (0.0, 1.0, 2.0):
            acc.add(ctx_for(small_grid, z, z, t=t))
        assert acc.value == 0.0

    def test_nondecreasing(self, small_grid):
        acc = GhostAccumulator(0)
        for t in np.arange(0, 3, 0.5):
            u = bump(small_grid, (t, 0.0))
            acc.add(ctx_for(small_grid, u, -u, t=t))
        vals = [v for _, v in acc.history]
        assert np.all(np.diff(vals) >= 0) and vals[-1] > 0
        assert acc.value_at(1.25) == pytest.approx(0.5 * (vals[2] + vals[3]))

    def test_density_nonnegative(self, small_grid, rng):
        u, ut = band_limited(small_grid, rng), band_limited(small_grid, rng)
        assert ghost_density(ctx_for(small_grid, u, ut, t=0.5), 1) > 0


class TestWeightedSup:
    def test_saturation(self):
        g = Grid(64, 20.0, 4)
        t = 5.0
        w = WeightSpec(0.5, 0.4)
        x1, x2, _ = g.mesh()
        r = np.broadcast_to(np.hypot(x1, x2), g.shape)
        u = japanese(t + r) ** -0.5 * japanese(t - r) ** -0.4
        ctx = ctx_for(g, u, 0 * u, dealias=False, t=t)
        assert weighted_sup(ctx, w) == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(weight_field(g, t, w) * u, 1.0)

    def test_zero(self, small_grid):
        z = np.zeros(small_grid.shape)
        for d in ("none", "d", "dy", "dbar"):
            for p in ("full", "zero", "nonzero"):
                assert weighted_sup(ctx_for(small_grid, z, z), WeightSpec(1, 1, 1, p, d)) == 0.0

    def test_projection_selection(self, small_grid):
        u = gaussian(small_grid, y_mod=lambda y: np.cos(y))
        ctx = ctx_for(small_grid, u, 0 * u, dealias=False)
        assert weighted_sup(ctx, WeightSpec(projection="zero")) < 1e-14
        assert weighted_sup(ctx, WeightSpec(projection="nonzero")) == pytest.approx(np.abs(u).max(), rel=1e-6)

    @pytest.mark.parametrize("kw", [{"a_plus": np.inf}, {"projection": "half"}, {"derivative": "dt"}])
    def test_errors(self, kw):
        with pytest.raises(ParameterError):
            WeightSpec(**kw)


class TestFitDecay:
    def test_inverse(self):
        t = np.linspace(1, 50, 30)
        assert fit_decay(t, 1 / t).slope == pytest.approx(-1.0, abs=1e-6)

    def test_intercept(self):
        t = np.linspace(10, 80, 15)
        f = fit_decay(t, 7 * t**-0.5)
        assert f.slope == pytest.approx(-0.5, abs=1e-12)
        assert f.intercept == pytest.approx(math.log(7), abs=1e-12)
        assert f.r2 == pytest.approx(1.0)

    def test_window(self):
        t = np.arange(1.0, 100.0)
        v = np.where(t < 10, 1.0, 1 / t)
        assert fit_decay(t, v, (10, 80)).n == 71

    @pytest.mark.parametrize("v", [[1, 2, 0, 3, 4], [1, 2, 3, 4]])
    def test_errors(self, v):
        with pytest.raises(ParameterError):
            fit_decay(np.arange(1.0, len(v) + 1), np.array(v, dtype=float))


class TestNullBound:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_pairs(self, seed):
        g = Grid(32, 8.0, 4)
        rng = np.random.default_rng(seed)
        f = ctx_for(g, band_limited(g, rng, kmax=6), band_limited(g, rng, kmax=6), t=rng.uniform(0, 5))
        h = ctx_for(g, band_limited(g, rng, kmax=6), band_limited(g, rng, kmax=6), t=f.t)
        r = null_bound_check(f, h)
        assert 0 < r <= NULL_BOUND

    def test_outgoing_pair_has_small_q0(self):
        g = Grid(128, 16.0, 4)
        x1, x2, _ = g.mesh()
        r = np.broadcast_to(np.hypot(x1, x2), g.shape)
        f = np.exp(-((r - 6.0) ** 2))
        ctx = ctx_for(g, f, 2 * (r - 6.0) * f, dealias=False, t=6.0)
        fd = [ctx.D(0, (a,), "0") for a in range(3)]
        q = fd[0] ** 2 - fd[1] ** 2 - fd[2] ** 2
        assert np.abs(q).max() < 1e-8 * (fd[0] ** 2).max()
        assert null_bound_check(ctx, ctx) <= NULL_BOUND

    def test_static_field(self, small_grid):
        x1, _, _ = small_grid.mesh()
        s = np.broadcast_to(np.sin(np.pi * x1 / small_grid.L), small_grid.shape)
        ctx = ctx_for(small_grid, s, 0 * s, dealias=False)
        assert null_bound_check(ctx, ctx) <= NULL_BOUND


def _wave_maps_ctx(grid, C, rng, y_indep=False, dealias=True):
    spec = preset("wave_maps", {"m": 2, "C": C})
    kym = 0 if y_indep else 1
    u = 0.1 * band_limited(grid, rng, m=2, kmax=3, kymax=kym)
    ut = 0.1 * band_limited(grid, rng, m=2, kmax=3, kymax=kym)
    return JetContext.from_state(SimState(0.3, u, ut, grid), spec, dealias=dealias), spec


class TestTransforms:
    def test_zero_spec(self, small_grid, rng):
        u = band_limited(small_grid, rng)
        ctx = ctx_for(small_grid, u, 0 * u)
        spec = NonlinearitySpec.zeros(1)
        assert np.allclose(transform_Vtilde(ctx, spec)[0], ctx.D(0))
        assert np.allclose(transform_V(ctx, spec)[0], ctx.D(0))

    @pytest.mark.parametrize("name", ["chaplygin", "wave_maps"])
    def test_y_independent(self, small_grid, rng, name):
        spec = preset(name)
        u = 0.1 * band_limited(small_grid, rng, kmax=3, kymax=0)
        ctx = JetContext.from_state(SimState(0.0, u, 0.5 * u, small_grid), spec)
        assert np.array_equal(transform_V(ctx), transform_Vtilde(ctx))

    def test_wave_maps_correction(self, small_grid, rng):
        C = rng.standard_normal((2,) * 4)
        ctx, spec = _wave_maps_ctx(small_grid, C, rng)
        diff = transform_V(ctx) - transform_Vtilde(ctx)
        u = ctx.u()
        Pn = [project_nonzero(u[c]) for c in range(2)]
        P0 = [project_zero(u[c]) for c in range(2)]
        for i in range(2):
            expected = 0.0
            for j, k, l in itertools.product(range(2), repeat=3):
                expected = expected - 0.5 * C[i, j, k, l] * Pn[j] * Pn[k] * P0[l]
            assert np.max(np.abs(diff[i] - expected)) < 1e-12

    @staticmethod
    def _identity_residual(name, amp):
        g = Grid(32, 8.0, 8)
        rng = np.random.default_rng(1)
        spec = preset(name)
        u = amp * band_limited(g, rng, kmax=2, kymax=1)
        ut = amp * band_limited(g, rng, kmax=2, kymax=1)
        # converged d_t^2 u, resolved products: only quintic terms remain
        ctx = JetContext.from_state(SimState(0.0, u, ut, g), spec, dealias=False, sweeps=8)
        return normalform_identity_residual(ctx, derive_transformed(spec))

    def test_identity_exact_for_wave_maps(self):
        assert self._identity_residual("wave_maps", 0.02) < 1e-15

    @pytest.mark.parametrize("name", ["chaplygin", "membrane", "lagrangian_k"])
    def test_identity_residual_is_quintic(self, name):
        r1, r2 = self._identity_residual(name, 0.02), self._identity_residual(name, 0.01)
        assert r1 / r2 > 2**4.5


class TestVectorFieldIndex:
    def test_order(self):
        assert VectorFieldIndex(("L1", "y")).order == 2
        assert VectorFieldIndex().order == 0

    def test_cap(self):
        with pytest.raises(CapabilityError):
            VectorFieldIndex(("t", "t", "t"))


class TestKlainermanSobolev:
    def test_zero(self):
        g = Grid(32, 8.0, 4)
        assert klainerman_sobolev_check(g, np.zeros((32, 32))) == 0.0

    def _gauss(self, g, c=(0.0, 0.0)):
        x = g.x
        return np.exp(-((x[:, None] - c[0]) ** 2 + (x[None, :] - c[1]) ** 2) / 2.0)

    def test_refinement_stable(self):
        vals = [klainerman_sobolev_check(Grid(n, 16.0, 4), self._gauss(Grid(n, 16.0, 4))) for n in (64, 128)]
        assert 0.9 <= vals[1] / vals[0] <= 1.1
        assert vals[1] <= 10

    def test_translation(self):
        g = Grid(256, 64.0, 4)
        c0 = klainerman_sobolev_check(g, self._gauss(g))
        c1 = klainerman_sobolev_check(g, self._gauss(g, (30.0, 0.0)))
        # far from the origin the rotation terms dominate the right side,
        # so the constant can only get smaller
        assert 0 < c1 <= 2.0 * c0

    def test_shape_error(self):
        with pytest.raises(ParameterError):
            klainerman_sobolev_check(Grid(32, 8.0, 4), np.zeros((16, 16)))


def _source(t, X1, X2):
    return np.exp(-((t - 2.0) ** 2) - (X1 * X1 + X2 * X2))


class TestLinearProbe:
    def test_zero_source(self):
        g = Grid(32, 16.0, 4)
        out = linear_weighted_estimate_probe(g, lambda t, a, b: 0 * a * b, 0.4, 0.01, 2.0, 0.1)
        assert out == {"w": 0.0, "dw": 0.0}

    def test_homogeneous(self):
        g = Grid(64, 24.0, 4)
        a = linear_weighted_estimate_probe(g, _source, 0.4, 0.01, 6.0, 0.1)
        b = linear_weighted_estimate_probe(g, lambda t, x, y: 10 * _source(t, x, y), 0.4, 0.01, 6.0, 0.1)
        assert b["w"] == pytest.approx(a["w"], rel=1e-10)
        assert b["dw"] == pytest.approx(a["dw"], rel=1e-10)
        assert 0 < a["w"] < np.inf and 0 < a["dw"] < np.inf

    @pytest.mark.parametrize("rho, kappa", [(0.0, 0.1), (0.5, 0.1), (0.3, 0.0)])
    def test_errors(self, rho, kappa):
        with pytest.raises(ParameterError):
            linear_weighted_estimate_probe(Grid(16, 8.0, 4), _source, rho, kappa, 1.0, 0.1)


class TestOutput:
    def test_csv_round_trip(self):
        recs = [(0.1, "E0", 1 / 3), (0.2, "E0", 2e-300), (0.2, "w", -1.5)]
        assert csv_to_records(records_to_csv(recs)) == recs

    def test_series(self):
        recs = [(0.0, "a", 1.0), (0.0, "b", 5.0), (1.0, "a", 2.0)]
        t, v = series(recs, "a")
        assert list(t) == [0.0, 1.0] and list(v) == [1.0, 2.0]
        assert series(recs, "c")[0].size == 0

    def test_bad_csv(self):
        with pytest.raises(ParameterError):
            csv_to_records("x,y\n1,2\n")

    def test_summary_json(self):
        import json

        text = summary_json({"slope": np.float64(-1.0), "arr": np.arange(2), "n": np.int64(3)})
        assert json.loads(text) == {"arr": [0, 1], "n": 3, "slope": -1.0}
