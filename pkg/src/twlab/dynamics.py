"""Right-hand side assembly, RK4 time stepping, initial data and checkpoints.

The integrator works on a truncated spectral ("modal") representation:
arrays of shape ``(m, nx, nx, nky)`` holding the unnormalized 3D Fourier
coefficients for all x-wavenumbers (FFT order) and the retained torus modes
n = 0..nky-1 (real half spectrum along y).  With dealiasing on,
only |n| <= ny//3 and |k_x index| <= nx//3 are retained (2/3 rule); with it
off the y-Nyquist mode is still dropped.  Physical fields use the
``(m, nx, nx, ny)`` layout of :mod:`twlab.grid`.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from . import kernels
from .coeffs import NonlinearitySpec, monomials, required_derivatives
from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    IntegrationError,
    ParameterError,
)
from .grid import Grid, dealias_cutoff

CFL_FACTOR = 0.5
SUPPORT_TAIL = math.sqrt(2.0 * math.log(1e16))  # Gaussian support radius in units of sigma


# ----------------------------------------------------------------- types
@dataclass
class SimState:
    """Cauchy data (u, du/dt) at time t; arrays of shape (m, nx, nx, ny)."""

    t: float
    u: np.ndarray
    ut: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.ut = np.asarray(self.ut, dtype=float)
        if self.u.ndim == 3:
            self.u = self.u[None]
        if self.ut.ndim == 3:
            self.ut = self.ut[None]
        if self.u.shape != self.ut.shape or self.u.shape[1:] != self.grid.shape:
            raise ParameterError(f"state arrays {self.u.shape}/{self.ut.shape} do not match grid {self.grid.shape}")

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.ut)))

    def copy(self) -> "SimState":
        return SimState(self.t, self.u.copy(), self.ut.copy(), self.grid)


@dataclass
class SimConfig:
    grid: Grid
    spec: NonlinearitySpec
    dt: float
    t_final: float
    epsilon: float = 1e-3
    profile: str = "gaussian"
    dealias: bool = True
    checkpoint_every: int = 0
    output_every: int = 1
    sweeps: int = 1
    sigma: float = 2.0
    support: Optional[float] = None

    @property
    def support_radius(self) -> float:
        if self.support is not None:
            return float(self.support)
        return profile_support(self.profile, self.sigma)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt)) if self.t_final > 0 else 0

    def validate(self) -> None:
        g = self.grid
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}", key="dt")
        limit = CFL_FACTOR * min(g.dx, g.dy)
        if self.dt > limit * (1 + 1e-12):
            raise ConfigError(f"dt = {self.dt} violates CFL bound {limit:.6g} = 0.5*min(dx, dy)", key="dt")
        if self.t_final < 0:
            raise ConfigError("t_final must be >= 0", key="t_final")
        if self.t_final > 0 and abs(self.n_steps * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ConfigError("t_final must be an integer multiple of dt", key="t_final")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0", key="epsilon")
        if not g.L > self.support_radius + self.t_final:
            raise ConfigError(
                f"wrap-around: L = {g.L} must exceed support + t_final = {self.support_radius} + {self.t_final}",
                key="L",
            )
        if self.output_every < 1:
            raise ConfigError("output_every must be >= 1", key="output_every")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0", key="checkpoint_every")
        if self.sweeps < 1:
            raise ConfigError("sweeps must be >= 1", key="sweeps")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}", key="profile")


# ------------------------------------------------------------- the engine
def _spec_fingerprint(spec: NonlinearitySpec) -> str:
    h = hashlib.sha1()
    h.update(str(spec.m).encode())
    for name, arr in spec.tensors().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class ModalEngine:
    """Evaluates d_t^2 u = Lap_3 u + F on the retained modes.

    Modal arrays have shape ``(m, nx, nx, nky)``: x-wavenumbers in FFT order
    and the retained torus modes last, so that the torus synthesis is a
    single real matrix product on a zero-copy view.

    Only derivative fields referenced by nonzero tensor entries are
    synthesized.  Time derivatives of order two inside F are resolved by the
    fixed-point sweep: start from Lap_3 u, then ``utt <- Lap_3 u + P F(utt)``
    ``sweeps`` times (P is the dealiasing projection).
    """

    def __init__(self, grid: Grid, spec: NonlinearitySpec, dealias: bool = True, sweeps: int = 1):
        self.grid = grid
        self.spec = spec
        self.m = spec.m
        self.dealias = bool(dealias)
        self.sweeps = int(sweeps)
        nx, ny = grid.nx, grid.ny
        self.nky = dealias_cutoff(ny) + 1 if dealias else ny // 2
        kz = grid.kx.copy()
        kz[nx // 2] = 0.0
        self.k1 = kz[:, None, None]
        self.k2 = kz[None, :, None]
        n = np.arange(self.nky, dtype=float)
        self.n = n[None, None, :]
        self.lap = -(self.k1**2 + self.k2**2) - self.n**2
        if dealias:
            mx = np.abs(grid.kx_index) <= dealias_cutoff(nx)
            self.xmask = (mx[:, None] & mx[None, :])[:, :, None]
        else:
            self.xmask = np.ones((nx, nx, 1), dtype=bool)
        self._synth = {}
        self._xmult = {}
        ang = np.outer(grid.y, n)  # (ny, nky)
        ana = np.empty((ny, 2 * self.nky))
        ana[:, 0::2] = np.cos(ang)
        ana[:, 1::2] = -np.sin(ang)
        self._ana = ana
        self.terms = monomials(spec)
        self._plan_fields()

    @property
    def modal_shape(self) -> tuple:
        return (self.m, self.grid.nx, self.grid.nx, self.nky)

    # ---------------------------------------------------------- transforms
    def _synthesis_matrix(self, yorder: int) -> np.ndarray:
        if yorder not in self._synth:
            ny = self.grid.ny
            n = np.arange(self.nky)
            w = np.where(n == 0, 1.0, 2.0) / ny
            c = (1j * n[:, None]) ** yorder * np.exp(1j * np.outer(n, self.grid.y))  # (nky, ny)
            M = np.empty((2 * self.nky, ny))
            M[0::2] = w[:, None] * c.real
            M[1::2] = -w[:, None] * c.imag
            self._synth[yorder] = M
        return self._synth[yorder]

    def _xphys(self, modal_one: np.ndarray) -> np.ndarray:
        """Inverse x-transform of one component: (nx, nx, nky) -> (nx*nx, 2 nky) real view."""
        g = sfft.ifft2(modal_one, axes=(0, 1))
        return g.view(float).reshape(-1, 2 * self.nky)

    def _ysynth(self, G: np.ndarray, yorder: int, out: Optional[np.ndarray] = None) -> np.ndarray:
        M = self._synthesis_matrix(yorder)
        if out is None:
            return G @ M
        np.matmul(G, M, out=out)
        return out

    def to_modal(self, phys: np.ndarray) -> np.ndarray:
        """(..., nx, nx, ny) real -> (..., nx, nx, nky) complex (masked)."""
        phys = np.asarray(phys, dtype=float)
        lead = phys.shape[:-3]
        nx, ny = self.grid.nx, self.grid.ny
        flat = phys.reshape(-1, nx * nx, ny)
        out = np.empty((flat.shape[0], nx, nx, self.nky), dtype=complex)
        for c in range(flat.shape[0]):
            H = flat[c] @ self._ana  # (nx*nx, 2 nky), interleaved re/im
            h = H.view(complex).reshape(nx, nx, self.nky)
            out[c] = sfft.fft2(h, axes=(0, 1), overwrite_x=True)
        out *= self.xmask
        return out.reshape(lead + (nx, nx, self.nky))

    def from_modal(self, modal: np.ndarray, yorder: int = 0) -> np.ndarray:
        """(..., nx, nx, nky) -> (..., nx, nx, ny) real."""
        lead = modal.shape[:-3]
        nx, ny = self.grid.nx, self.grid.ny
        flat = modal.reshape((-1, nx, nx, self.nky))
        out = np.empty((flat.shape[0], nx * nx, ny))
        for c in range(flat.shape[0]):
            self._ysynth(self._xphys(flat[c]), yorder, out=out[c])
        return out.reshape(lead + (nx, nx, ny))

    def project(self, phys: np.ndarray) -> np.ndarray:
        return self.from_modal(self.to_modal(phys))

    # --------------------------------------------------------- field plan
    def _plan_fields(self):
        req = sorted(required_derivatives(self.terms))
        groups = {}
        rows = {}
        self.utt_rows = {}
        for f in req:
            comp, ders = f
            s = ders.count(0)
            a, b, e = ders.count(1), ders.count(2), ders.count(3)
            rows[f] = len(rows)
            if s >= 2:
                if ders != (0, 0):
                    raise ValueError(f"unsupported derivative {ders}")
                self.utt_rows[comp] = rows[f]
                continue
            groups.setdefault((comp, s, a, b), []).append((e, rows[f]))
        self.rows = rows
        self.groups = groups
        self.n_fields = len(rows)
        # Lap_3 u from already-synthesized second derivatives when available
        self.lap_rows = {}
        for comp in self.utt_rows:
            trip = [rows.get((comp, (d, d))) for d in (1, 2, 3)]
            if all(r is not None for r in trip):
                self.lap_rows[comp] = trip
        self.compiled = kernels.compile_terms(self.terms, rows, self.m)

    def x_multiplier(self, a: int, b: int) -> np.ndarray:
        key = (a, b)
        if key not in self._xmult:
            self._xmult[key] = (1j * self.k1) ** a * (1j * self.k2) ** b
        return self._xmult[key]

    # ------------------------------------------------------------ physics
    def _fill_fields(self, uh: np.ndarray, uth: np.ndarray) -> np.ndarray:
        nx, ny = self.grid.nx, self.grid.ny
        buf = np.empty((max(self.n_fields, 1), nx * nx * ny))
        for (comp, s, a, b), items in self.groups.items():
            base = uh[comp] if s == 0 else uth[comp]
            if a or b:
                base = base * self.x_multiplier(a, b)
            G = self._xphys(base)
            for e, r in items:
                self._ysynth(G, e, out=buf[r].reshape(nx * nx, ny))
        return buf

    def nonlinearity(self, uh: np.ndarray, uth: np.ndarray, utt_phys: Optional[np.ndarray] = None):
        """F evaluated pointwise; returns (m, nx*nx*ny) physical values.

        ``utt_phys`` supplies d_t^2 u (m, nx, nx, ny) for quasilinear terms.
        """
        buf = self._fill_fields(uh, uth)
        for comp, r in self.utt_rows.items():
            if utt_phys is None:
                raise ValueError("quasilinear terms need d_t^2 u")
            buf[r] = utt_phys[comp].reshape(-1)
        return kernels.evaluate(self.compiled, buf)

    def accel(self, uh: np.ndarray, uth: np.ndarray, return_F: bool = False):
        """Modal d_t^2 u = Lap_3 u + P F (and optionally the modal P F)."""
        lin = self.lap * uh
        if not self.terms:
            Fh = np.zeros_like(uh)
            return (lin, Fh) if return_F else lin
        shape = self.grid.shape
        buf = self._fill_fields(uh, uth)
        if self.utt_rows:
            for comp, r in self.utt_rows.items():
                if comp in self.lap_rows:
                    r1, r2, r3 = self.lap_rows[comp]
                    np.add(buf[r1], buf[r2], out=buf[r])
                    buf[r] += buf[r3]
                else:
                    buf[r] = self.from_modal(lin[comp]).reshape(-1)
        for sweep in range(self.sweeps):
            F = kernels.evaluate(self.compiled, buf)
            Fh = self.to_modal(F.reshape((self.m,) + shape))
            if not np.all(np.isfinite(Fh)):
                raise IntegrationError("non-finite nonlinearity")
            if self.utt_rows and sweep + 1 < self.sweeps:
                utt = self.from_modal(lin + Fh)
                for comp, r in self.utt_rows.items():
                    buf[r] = utt[comp].reshape(-1)
            else:
                break
        out = lin + Fh
        return (out, Fh) if return_F else out


_ENGINES: dict = {}


def get_engine(grid: Grid, spec: NonlinearitySpec, dealias: bool = True, sweeps: int = 1) -> ModalEngine:
    key = (grid.descriptor(), _spec_fingerprint(spec), bool(dealias), int(sweeps))
    eng = _ENGINES.get(key)
    if eng is None:
        if len(_ENGINES) > 16:
            _ENGINES.clear()
        eng = _ENGINES[key] = ModalEngine(grid, spec, dealias, sweeps)
    return eng


# -------------------------------------------------------------- operations
def rhs(state: SimState, spec: NonlinearitySpec, dealias: bool = True, sweeps: int = 1) -> np.ndarray:
    """d_t^2 u candidate Lap_3 u + F(u, du, d^2u), physical layout.

    Inputs are projected onto the retained modes first.
    """
    if spec.m != state.m:
        raise ParameterError(f"spec has m = {spec.m} but state has m = {state.m}")
    eng = get_engine(state.grid, spec, dealias, sweeps)
    uh = eng.to_modal(state.u)
    uth = eng.to_modal(state.ut)
    return eng.from_modal(eng.accel(uh, uth))


def rk4_modal(eng: ModalEngine, uh, uth, dt: float, k1=None):
    """One classical RK4 step of (u, ut)' = (ut, accel(u, ut)) on modal arrays."""
    a1 = eng.accel(uh, uth) if k1 is None else k1
    h = 0.5 * dt
    u2, v2 = uh + h * uth, uth + h * a1
    a2 = eng.accel(u2, v2)
    u3, v3 = uh + h * v2, uth + h * a2
    a3 = eng.accel(u3, v3)
    u4, v4 = uh + dt * v3, uth + dt * a3
    a4 = eng.accel(u4, v4)
    w = dt / 6.0
    un = uh + w * (uth + 2.0 * v2 + 2.0 * v3 + v4)
    vn = uth + w * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return un, vn


def _check_finite(uh, uth, t, step):
    if not (np.all(np.isfinite(uh)) and np.all(np.isfinite(uth))):
        raise IntegrationError(f"non-finite state after step {step} (t = {t:.6g})")


def step_rk4(state: SimState, config: SimConfig) -> SimState:
    """Advance by config.dt; the returned state lies in the retained modes."""
    g = state.grid
    if config.dt > CFL_FACTOR * min(g.dx, g.dy) * (1 + 1e-12):
        raise ConfigError("dt violates the CFL bound", key="dt")
    eng = get_engine(g, config.spec, config.dealias, config.sweeps)
    uh, uth = eng.to_modal(state.u), eng.to_modal(state.ut)
    try:
        un, vn = rk4_modal(eng, uh, uth, config.dt)
    except IntegrationError as exc:
        raise IntegrationError(f"{exc} at t = {state.t:.6g}") from exc
    _check_finite(un, vn, state.t + config.dt, 1)
    return SimState(state.t + config.dt, eng.from_modal(un), eng.from_modal(vn), g)


# ------------------------------------------------------------- initial data
PROFILES = ("gaussian", "zero_mode_only", "velocity")


def profile_support(profile: str, sigma: float) -> float:
    """Radius beyond which the profile is below 1e-16 of its peak."""
    return SUPPORT_TAIL * sigma


def _weighted_norm_terms(grid: Grid, f: np.ndarray, max_order: int) -> float:
    """sum_{i+j <= max_order} || <x>^{4+i+j} grad_x^i d_y^j f ||_{L^2}."""
    fh = grid.fft(f)
    r = grid.radius()
    jap = np.sqrt(1.0 + r * r)
    m1 = grid.derivative_multiplier("x1", 1)
    m2 = grid.derivative_multiplier("x2", 1)
    my = grid.derivative_multiplier("y", 1)
    total = 0.0
    for i in range(max_order + 1):
        for j in range(max_order + 1 - i):
            sq = 0.0
            for p in range(i + 1):
                d = grid.ifft(fh * m1**p * m2 ** (i - p) * my**j)
                sq = sq + math.comb(i, p) * d * d
            w = jap ** (4 + i + j)
            total += float(np.sqrt(grid.integrate(w * w * sq)))
    return total


def data_norm(grid: Grid, u0: np.ndarray, u1: np.ndarray, order: int = 3) -> float:
    """Initial-data smallness norm truncated at derivative order ``order``.

    u0 enters with derivatives up to ``order`` and u1 up to ``order - 1``;
    multi-component data sum over components.
    """
    u0 = np.asarray(u0, dtype=float).reshape((-1,) + grid.shape)
    u1 = np.asarray(u1, dtype=float).reshape((-1,) + grid.shape)
    s = 0.0
    for c in range(u0.shape[0]):
        if np.any(u0[c]):
            s += _weighted_norm_terms(grid, u0[c], order)
        if np.any(u1[c]):
            s += _weighted_norm_terms(grid, u1[c], order - 1)
    return s


def profile_shape(grid: Grid, profile: str, m: int = 1, sigma: float = 2.0):
    """Unnormalized (u0, u1) for a named profile."""
    if profile not in PROFILES:
        raise ParameterError(f"unknown profile {profile!r}; choose from {PROFILES}")
    x1, x2, y = grid.mesh()
    gauss = np.exp(-(x1 * x1 + x2 * x2) / (2.0 * sigma * sigma))
    if profile == "zero_mode_only":
        base = gauss * np.ones_like(y)
    else:
        base = gauss * (1.0 + np.cos(y))
    base = np.broadcast_to(base, grid.shape)
    zeros = np.zeros(grid.shape)
    u0 = np.stack([base * (1.0 + 0.25 * c) for c in range(m)])
    u1 = np.stack([zeros] * m)
    if profile == "velocity":
        u0, u1 = u1, u0
    return u0, u1


def initial_data(grid: Grid, epsilon: float, profile: str = "gaussian", m: int = 1, sigma: float = 2.0) -> SimState:
    """Smooth localized data rescaled so the truncated data norm equals epsilon.

    Data are projected onto the 2/3-rule band before normalization, so the
    integrator sees exactly the normalized data.
    """
    if not (epsilon >= 0 and np.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be >= 0, got {epsilon!r}")
    u0, u1 = profile_shape(grid, profile, m, sigma)
    mask = grid.dealias_mask()
    u0 = grid.ifft(grid.fft(u0) * mask)
    u1 = grid.ifft(grid.fft(u1) * mask)
    if profile == "zero_mode_only":
        # exact y-independence: replace by the y-average
        u0 = np.broadcast_to(u0.mean(axis=-1, keepdims=True), u0.shape).copy()
        u1 = np.broadcast_to(u1.mean(axis=-1, keepdims=True), u1.shape).copy()
    if epsilon == 0:
        return SimState(0.0, np.zeros_like(u0), np.zeros_like(u1), grid)
    nrm = data_norm(grid, u0, u1)
    scale = epsilon / nrm
    return SimState(0.0, u0 * scale, u1 * scale, grid)


# ------------------------------------------------------------------ running
@dataclass
class StepContext:
    """What a sink sees at an output step (modal arrays must not be mutated)."""

    step: int
    t: float
    uh: np.ndarray
    uth: np.ndarray
    accel: np.ndarray  # modal d_t^2 u at this state
    engine: ModalEngine
    _cache: dict = field(default_factory=dict)

    def state(self) -> SimState:
        if "state" not in self._cache:
            eng = self.engine
            self._cache["state"] = SimState(self.t, eng.from_modal(self.uh), eng.from_modal(self.uth), eng.grid)
        return self._cache["state"]

    def utt(self) -> np.ndarray:
        if "utt" not in self._cache:
            self._cache["utt"] = self.engine.from_modal(self.accel)
        return self._cache["utt"]

    def box_u_modal(self) -> np.ndarray:
        """Modal F = d_t^2 u - Lap_3 u."""
        return self.accel - self.engine.lap * self.uh


@dataclass
class RunResult:
    state: SimState
    records: list
    n_steps: int
    checkpoints: list


def run(
    config: SimConfig,
    sinks=(),
    state: Optional[SimState] = None,
    checkpoint_writer: Optional[Callable] = None,
    progress: Optional[Callable] = None,
) -> RunResult:
    """Integrate to ``t_final``.

    Each sink is a callable ``sink(ctx) -> iterable of (t, name, value)`` or
    None; a sink's optional ``every`` attribute overrides ``output_every``.
    Sinks run at step 0 and every ``every`` steps, including the final step.
    ``checkpoint_writer(step, state)`` is called every ``checkpoint_every``
    steps when given.
    """
    config.validate()
    g = config.grid
    if state is None:
        state = initial_data(g, config.epsilon, config.profile, config.spec.m, config.sigma)
    eng = get_engine(g, config.spec, config.dealias, config.sweeps)
    uh, uth = eng.to_modal(state.u), eng.to_modal(state.ut)
    n_steps = config.n_steps
    dt = config.dt
    records = []
    ckpts = []
    everys = [int(getattr(s, "every", config.output_every) or config.output_every) for s in sinks]

    def emit(step, t, a):
        ctx = None
        for s, ev in zip(sinks, everys):
            if step % ev == 0 or step == n_steps:
                if ctx is None:
                    ctx = StepContext(step, t, uh, uth, a, eng)
                out = s(ctx)
                if out:
                    records.extend(out)

    t0 = state.t
    for step in range(n_steps + 1):
        t = t0 + step * dt
        need_out = any(step % ev == 0 or step == n_steps for ev in everys)
        a1 = eng.accel(uh, uth) if (need_out or step < n_steps) else None
        if need_out:
            emit(step, t, a1)
        if config.checkpoint_every and step % config.checkpoint_every == 0 and checkpoint_writer is not None:
            ck = SimState(t, eng.from_modal(uh), eng.from_modal(uth), g)
            ckpts.append(checkpoint_writer(step, ck))
        if step == n_steps:
            break
        try:
            uh, uth = rk4_modal(eng, uh, uth, dt, k1=a1)
        except IntegrationError as exc:
            raise IntegrationError(f"{exc} during step {step + 1} (t = {t:.6g})") from exc
        _check_finite(uh, uth, t + dt, step + 1)
        if progress is not None:
            progress(step + 1, t + dt)
    final = SimState(t0 + n_steps * dt, eng.from_modal(uh), eng.from_modal(uth), g)
    return RunResult(final, records, n_steps, ckpts)


# -------------------------------------------------------------- checkpoints
_HEADER = struct.Struct("<iidid")


def _pack(magic: bytes, grid: Grid, t: float, arrays) -> bytes:
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in arrays]
    m = arrays[0].shape[0]
    for a in arrays:
        if a.shape != (m,) + grid.shape:
            raise ParameterError("array shape does not match grid")
    head = magic + _HEADER.pack(grid.nx, grid.ny, grid.L, m, float(t))
    return head + b"".join(a.tobytes() for a in arrays)


def _unpack(data: bytes, magic: bytes, n_arrays: int, grid: Optional[Grid]):
    data = bytes(data)
    if len(data) < 4 + _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    if data[:4] != magic:
        if data[:3] == magic[:3]:
            raise CheckpointVersionError(f"unsupported version {data[:4]!r}, expected {magic!r}")
        raise CheckpointError(f"bad magic {data[:4]!r}")
    nx, ny, L, m, t = _HEADER.unpack_from(data, 4)
    if nx < 4 or ny < 4 or m < 1:
        raise CheckpointError("corrupt header")
    if grid is not None and (grid.nx, grid.ny) != (nx, ny):
        raise CheckpointShapeError(f"checkpoint grid ({nx}, {ny}) does not match expected ({grid.nx}, {grid.ny})")
    if grid is not None and grid.L != L:
        raise CheckpointShapeError(f"checkpoint L = {L} does not match expected {grid.L}")
    g = grid or Grid(nx, L, ny)
    count = m * nx * nx * ny
    need = 4 + _HEADER.size + n_arrays * count * 8
    if len(data) != need:
        raise CheckpointError(f"checkpoint has {len(data)} bytes, expected {need}")
    off = 4 + _HEADER.size
    arrs = []
    for _ in range(n_arrays):
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape((m,) + g.shape)
        arrs.append(a.astype(float))
        off += count * 8
    return g, t, arrs


def checkpoint_save(state: SimState) -> bytes:
    """Binary layout: b"TWL1", <i nx, <i ny, <d L, <i m, <d t, then u and ut (<f8)."""
    return _pack(b"TWL1", state.grid, state.t, [state.u, state.ut])


def checkpoint_load(data: bytes, grid: Optional[Grid] = None) -> SimState:
    g, t, (u, ut) = _unpack(data, b"TWL1", 2, grid)
    return SimState(t, u, ut, g)


def energy0(grid: Grid, u: np.ndarray, ut: np.ndarray) -> float:
    """E_0 = sum_i ||d u^i||_{L^2} (t, x1, x2, y derivatives)."""
    u = u.reshape((-1,) + grid.shape)
    ut = ut.reshape((-1,) + grid.shape)
    total = 0.0
    for c in range(u.shape[0]):
        d = grid.gradient(u[c])
        sq = ut[c] ** 2 + d[0] ** 2 + d[1] ** 2 + d[2] ** 2
        total += float(np.sqrt(grid.integrate(sq)))
    return total
