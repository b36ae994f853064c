"""Free evolution, the Duhamel scattering profile and the scattering error.

With Lambda = (-Lap_3)^{1/2} and the complex field (d_t + i Lambda) V, the
free-wave data are

    u1_inf = V_t(0) + int_0^T cos(s Lambda) Box V(s) ds,
    u0_inf = V(0)   - int_0^T Lambda^{-1} sin(s Lambda) Box V(s) ds,

where the k = 0 Fourier mode uses the limits cos -> 1 and
Lambda^{-1} sin(s Lambda) -> s (so it evolves as value + t * velocity
without inverting Lambda).  Box V is sampled at the integrator steps and
interpolated linearly in s; each segment is integrated exactly against the
oscillatory kernels (a Filon-type rule that stays accurate when |k| dt is
not small).

All accumulation happens on the integrator's modal arrays, which are the
unnormalized Fourier coefficients of the retained modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coeffs import NonlinearitySpec, TransformedSpec, derive_transformed
from .dynamics import SimState, _pack, _unpack, get_engine
from .errors import ParameterError
from .grid import Grid

TAIL_LIMIT = 0.10


# ------------------------------------------------------------ propagators
def rk4_factor(z):
    """Stability polynomial of classical RK4."""
    return 1.0 + z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)))


def _propagate(k: np.ndarray, a, b, t: float, dt: Optional[float] = None):
    """Apply f(A) to (a, b) with A = [[0, 1], [-k^2, 0]].

    f(A) = exp(tA) when ``dt`` is None, else R(dt A)^n with n = t/dt and R
    the RK4 stability polynomial.  Uses f(A) = p I + q A with
    p = (f(ik) + f(-ik))/2 and q = (f(ik) - f(-ik))/(2ik) (q -> t or n dt at k = 0).
    """
    if dt is None:
        p = np.cos(k * t)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(k > 0, np.sin(k * t) / np.where(k > 0, k, 1.0), t)
    else:
        n = int(round(t / dt))
        if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ParameterError("t must be an integer multiple of dt for the RK4 propagator")
        Rp = rk4_factor(1j * k * dt) ** n
        Rm = rk4_factor(-1j * k * dt) ** n
        p = 0.5 * (Rp + Rm).real
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(k > 0, ((Rp - Rm) / (2j * np.where(k > 0, k, 1.0))).real, n * dt)
    return p * a + q * b, -(k * k) * q * a + p * b


def free_evolve(grid: Grid, u0: np.ndarray, u1: np.ndarray, t: float) -> SimState:
    """Exact solution of Box u = 0 at time t from data (u0, u1) at time 0."""
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    k = grid.k_abs()
    a, b = _propagate(k, grid.fft(u0), grid.fft(u1), float(t))
    return SimState(float(t), grid.ifft(a), grid.ifft(b), grid)


def modal_free_evolve(engine, a, b, t: float, dt: Optional[float] = None):
    """Free evolution of modal data; ``dt`` selects the RK4 discrete propagator."""
    k = np.sqrt(-engine.lap)
    return _propagate(k, a, b, float(t), dt)


def modal_energy0(engine, uh, uth) -> float:
    """E_0 = sum_i ||d u^i||_{L^2} from modal arrays (Parseval over retained modes)."""
    g = engine.grid
    w = np.where(np.arange(engine.nky) == 0, 1.0, 2.0)
    scale = g.cell_volume / g.size
    dens = np.abs(uth) ** 2 + (-engine.lap) * np.abs(uh) ** 2
    per = (dens * w).reshape(uh.shape[0], -1, engine.nky).sum(axis=(1, 2)) * scale
    return float(np.sum(np.sqrt(per)))


def modal_l2(engine, fh) -> float:
    g = engine.grid
    w = np.where(np.arange(engine.nky) == 0, 1.0, 2.0)
    return float(np.sqrt(np.sum(np.abs(fh) ** 2 * w) * g.cell_volume / g.size))


# ------------------------------------------------------ Filon quadrature
def _segment_moments(phi: np.ndarray):
    """int_0^1 w(tau) (cos, sin)(phi tau) d tau for w = 1 - tau and w = tau."""
    small = np.abs(phi) < 0.25
    ph = np.where(small, 1.0, phi)
    c, s = np.cos(ph), np.sin(ph)
    # closed forms
    c1 = (c + ph * s - 1.0) / ph**2  # int tau cos
    s1 = (s - ph * c) / ph**2  # int tau sin
    c0 = s / ph  # int cos
    s0 = (1.0 - c) / ph  # int sin
    # series for small |phi|
    if np.any(small):
        p = np.where(small, phi, 0.0)
        p2 = p * p
        c0s = 1 - p2 / 6 + p2 * p2 / 120 - p2**3 / 5040 + p2**4 / 362880
        s0s = p * (0.5 - p2 / 24 + p2 * p2 / 720 - p2**3 / 40320 + p2**4 / 3628800)
        c1s = 0.5 - p2 / 8 + p2 * p2 / 144 - p2**3 / 5760 + p2**4 / 403200
        s1s = p * (1 / 3 - p2 / 30 + p2 * p2 / 840 - p2**3 / 45360 + p2**4 / 3991680)
        c0 = np.where(small, c0s, c0)
        s0 = np.where(small, s0s, s0)
        c1 = np.where(small, c1s, c1)
        s1 = np.where(small, s1s, s1)
    return (c0 - c1, s0 - s1), (c1, s1)


class DuhamelIntegral:
    """Accumulates int cos(s|k|) G(s) ds and int sin(s|k|)/|k| G(s) ds on modal arrays."""

    def __init__(self, engine):
        self.engine = engine
        self.k = np.sqrt(-engine.lap)
        shape = engine.modal_shape
        self.cos_int = np.zeros(shape, dtype=complex)
        self.sin_int = np.zeros(shape, dtype=complex)
        self._last: Optional[tuple] = None
        self.times: list = []
        self.norms: list = []
        with np.errstate(invalid="ignore", divide="ignore"):
            self._kinv = np.where(self.k > 0, 1.0 / np.where(self.k > 0, self.k, 1.0), 0.0)
        self._zero = self.k == 0
        self._moments: dict = {}

    def _segment(self, h: float):
        # steps are usually uniform, so the moments are cached per step size
        if h not in self._moments:
            if len(self._moments) > 4:
                self._moments.clear()
            self._moments[h] = _segment_moments(self.k * h)
        return self._moments[h]

    def add(self, t: float, G: np.ndarray):
        self.times.append(float(t))
        self.norms.append(modal_l2(self.engine, G))
        if self._last is not None:
            t0, G0 = self._last
            h = t - t0
            if h <= 0:
                raise ParameterError("Duhamel samples must be increasing in time")
            if not (G.any() or G0.any()):
                self._last = (float(t), G0)
                return
            k = self.k
            (a0c, a0s), (a1c, a1s) = self._segment(h)
            ck, sk = np.cos(k * t0), np.sin(k * t0)
            # int cos(k s) g ds and int sin(k s) g ds over the segment
            wc0 = h * (ck * a0c - sk * a0s)
            wc1 = h * (ck * a1c - sk * a1s)
            ws0 = h * (sk * a0c + ck * a0s)
            ws1 = h * (sk * a1c + ck * a1s)
            self.cos_int += wc0 * G0 + wc1 * G
            kinv, zero = self._kinv, self._zero
            # k = 0: kernel s, exact for linear g
            z0 = h * (0.5 * t0 + h / 6.0)
            z1 = h * (0.5 * t0 + h / 3.0)
            sin0 = np.where(zero, z0, ws0 * kinv)
            sin1 = np.where(zero, z1, ws1 * kinv)
            self.sin_int += sin0 * G0 + sin1 * G
        self._last = (float(t), np.array(G, copy=True))


# ----------------------------------------------------------------- profile
@dataclass
class ScatteringProfile:
    u0_inf: np.ndarray
    u1_inf: np.ndarray
    T_used: float
    grid: Grid
    tail_indicator: float = 0.0
    warning: bool = False
    norm_U: float = 0.0
    box_norms: list = field(default_factory=list)

    @property
    def tail_ok(self) -> bool:
        return self.tail_indicator < TAIL_LIMIT


def _is_trivial(ts: TransformedSpec) -> bool:
    return not (np.any(ts.base.q0_quadratic) or np.any(ts.q0_extended))


class DuhamelSink:
    """Run sink accumulating the profile on the fly (call every step).

    For specs without a normal-form correction V = u and Box V = F comes
    directly from the integrator; otherwise Box V = C_1 + C_2 + G is
    evaluated from the equation-derived jets.  With ``store_every`` > 0 the
    modal state is kept every that many steps for the scattering error.
    """

    def __init__(self, spec_or_ts, store_every: int = 0):
        self.ts = spec_or_ts if isinstance(spec_or_ts, TransformedSpec) else derive_transformed(spec_or_ts)
        self.trivial = _is_trivial(self.ts)
        self.every = 1
        self.store_every = int(store_every)
        self.integral: Optional[DuhamelIntegral] = None
        self.V0 = None
        self.stored: list = []
        self.engine = None

    def box_v_modal(self, ctx) -> np.ndarray:
        if self.trivial:
            return ctx.box_u_modal()
        from .analysis import normalform_rhs
        from .jets import JetContext

        jc = JetContext.from_step(ctx)
        return ctx.engine.to_modal(normalform_rhs(jc, self.ts))

    def v_modal(self, ctx):
        if self.trivial:
            return ctx.uh, ctx.uth
        from .analysis import v_polys
        from .jets import JetContext, poly_diff

        jc = JetContext.from_step(ctx)
        polys = v_polys(self.ts)
        V = np.stack([jc.eval_poly(p) for p in polys])
        Vt = np.stack([jc.eval_poly(poly_diff(p, 0)) for p in polys])
        return ctx.engine.to_modal(V), ctx.engine.to_modal(Vt)

    def __call__(self, ctx):
        if self.integral is None:
            self.engine = ctx.engine
            self.integral = DuhamelIntegral(ctx.engine)
            self.V0 = tuple(np.array(a, copy=True) for a in self.v_modal(ctx))
        G = self.box_v_modal(ctx)
        self.integral.add(ctx.t, G)
        if self.store_every and ctx.step % self.store_every == 0:
            self.stored.append((ctx.t, ctx.uh.copy(), ctx.uth.copy()))
        return [(ctx.t, "box_V_L2", self.integral.norms[-1])]

    def profile(self) -> ScatteringProfile:
        if self.integral is None:
            raise ParameterError("no samples accumulated")
        return _finish_profile(self.engine, self.V0, self.integral)

    def profile_modal(self):
        V0, V0t = self.V0
        return V0 - self.integral.sin_int, V0t + self.integral.cos_int


def _finish_profile(engine, V0, integral: DuhamelIntegral) -> ScatteringProfile:
    a = V0[0] - integral.sin_int
    b = V0[1] + integral.cos_int
    norm_U = math.sqrt(modal_l2(engine, b) ** 2 + modal_l2(engine, np.sqrt(-engine.lap) * a) ** 2)
    T = integral.times[-1]
    norms = np.array(integral.norms)
    tail = norms[-1] * T / norm_U if norm_U > 0 else 0.0
    q = max(2, len(norms) // 4)
    last = norms[-q:]
    warning = bool(len(norms) >= 8 and last[0] > 0 and not (last[-1] < last[0]))
    return ScatteringProfile(
        engine.from_modal(a),
        engine.from_modal(b),
        T,
        engine.grid,
        float(tail),
        warning,
        norm_U,
        list(zip(integral.times, integral.norms)),
    )


def construct_profile(snapshots: Sequence[SimState], spec_or_ts, dealias: bool = True, sweeps: int = 1) -> ScatteringProfile:
    """Profile from stored snapshots (increasing times starting at 0)."""
    from .dynamics import StepContext

    snaps = list(snapshots)
    if not snaps:
        raise ParameterError("construct_profile needs at least one snapshot")
    ts = spec_or_ts if isinstance(spec_or_ts, TransformedSpec) else derive_transformed(spec_or_ts)
    eng = get_engine(snaps[0].grid, ts.base, dealias, sweeps)
    sink = DuhamelSink(ts)
    for n, s in enumerate(snaps):
        uh, uth = eng.to_modal(s.u), eng.to_modal(s.ut)
        ctx = StepContext(n, s.t, uh, uth, eng.accel(uh, uth), eng)
        sink(ctx)
    return sink.profile()


# ------------------------------------------------------------------- error
def scattering_error(
    snapshots: Sequence[SimState],
    profile: ScatteringProfile,
    spec: Optional[NonlinearitySpec] = None,
    dealias: bool = True,
    propagator: str = "exact",
    dt: Optional[float] = None,
) -> np.ndarray:
    """(t, E_0[u - u_inf](t)) for each snapshot.

    ``propagator="rk4"`` evolves the profile with the integrator's discrete
    linear propagator (requires ``dt``) instead of the exact one, which
    removes the time-discretization error of the free part.
    """
    snaps = list(snapshots)
    if not snaps:
        return np.zeros((0, 2))
    grid = snaps[0].grid
    m = snaps[0].m
    eng = get_engine(grid, spec if spec is not None else NonlinearitySpec.zeros(m), dealias)
    a0, b0 = eng.to_modal(profile.u0_inf), eng.to_modal(profile.u1_inf)
    out = []
    for s in snaps:
        out.append((s.t, modal_scattering_error(eng, eng.to_modal(s.u), eng.to_modal(s.ut), a0, b0, s.t, propagator, dt)))
    return np.array(out)


def modal_scattering_error(engine, uh, uth, a0, b0, t, propagator="exact", dt=None) -> float:
    if propagator not in ("exact", "rk4"):
        raise ParameterError("propagator must be 'exact' or 'rk4'")
    if propagator == "rk4" and dt is None:
        raise ParameterError("the rk4 propagator needs dt")
    a, b = modal_free_evolve(engine, a0, b0, t, dt if propagator == "rk4" else None)
    return modal_energy0(engine, uh - a, uth - b)


# ---------------------------------------------------------------------- I/O
def profile_save(profile: ScatteringProfile) -> bytes:
    """b"TWSP" + checkpoint header (t = T_used) + u0_inf, u1_inf."""
    return _pack(b"TWSP", profile.grid, profile.T_used, [profile.u0_inf, profile.u1_inf])


def profile_load(data: bytes, grid: Optional[Grid] = None) -> ScatteringProfile:
    g, T, (u0, u1) = _unpack(data, b"TWSP", 2, grid)
    return ScatteringProfile(u0, u1, T, g)
