"""Torus mode projections, Fourier-mode extraction and mode-level checks.

Fields are plain arrays whose last three axes are (x1, x2, y) on a
:class:`~twlab.grid.Grid`.  The torus Fourier coefficient of f is
f_n(x) = (1/2pi) int_T e^{-iny} f(x, y) dy, evaluated exactly on the grid by
the discrete transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ParameterError
from .grid import Grid


class AliasingError(ParameterError):
    """Requested torus mode is not resolved by the grid."""


# ------------------------------------------------------------- projections
def project_zero(f: np.ndarray) -> np.ndarray:
    """y-average broadcast back along y."""
    f = np.asarray(f, dtype=float)
    return np.broadcast_to(f.mean(axis=-1, keepdims=True), f.shape).copy()


def project_nonzero(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f - f.mean(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ModeField:
    """Torus Fourier coefficient u_n(x) on the x-grid."""

    n: int
    data: np.ndarray

    def conj(self) -> "ModeField":
        return ModeField(-self.n, np.conj(self.data))


def mode_extract(f: np.ndarray, n: int) -> ModeField:
    """f_n(x) for |n| < ny/2; leading axes of ``f`` are kept."""
    f = np.asarray(f, dtype=float)
    ny = f.shape[-1]
    n = int(n)
    if abs(n) >= ny // 2:
        raise AliasingError(f"mode n = {n} not resolved with ny = {ny} (need |n| < {ny // 2})")
    c = sfft.rfft(f, axis=-1)[..., abs(n)] / ny
    return ModeField(n, np.conj(c) if n < 0 else c)


def mode_synthesize(modes: Sequence[ModeField], ny: int) -> np.ndarray:
    """Real field sum_n f_n e^{iny} from a list of nonnegative modes (negative mirrored)."""
    y = 2.0 * np.pi * np.arange(ny) / ny
    out = 0.0
    for md in modes:
        if md.n < 0:
            continue
        w = 1.0 if md.n == 0 else 2.0
        out = out + w * np.real(md.data[..., None] * np.exp(1j * md.n * y))
    return np.asarray(out)


# --------------------------------------------------------------- residuals
def kg_residual(snapshots, spec, n: int, dealias: bool = True, sweeps: int = 1) -> np.ndarray:
    """Residual of the mode-n Klein-Gordon equation along a trajectory.

    ``snapshots`` is a sequence of SimState at equal time spacing h.  For
    each interior snapshot the function returns the pair
    (t, ||(D_tt - Lap_x + n^2) u_n - F_n||_{L^2_x}) with D_tt the centred
    second difference and F the (dealiased) nonlinearity used by the
    integrator.  Components are combined in the l^2 sense.
    """
    from .dynamics import get_engine

    snaps = list(snapshots)
    if len(snaps) < 3:
        raise ParameterError("kg_residual needs at least three snapshots")
    grid = snaps[0].grid
    ts = np.array([s.t for s in snaps])
    h = np.diff(ts)
    if np.any(h <= 0) or np.ptp(h) > 1e-9 * max(1.0, abs(h[0])):
        raise ParameterError("snapshots must be equally spaced in time")
    h = float(h[0])
    eng = get_engine(grid, spec, dealias, sweeps)
    modes = [mode_extract(s.u, n).data for s in snaps]
    k2 = _x_k_squared(grid)
    out = []
    for i in range(1, len(snaps) - 1):
        s = snaps[i]
        uh, uth = eng.to_modal(s.u), eng.to_modal(s.ut)
        F = eng.from_modal(eng.accel(uh, uth) - eng.lap * uh)
        Fn = mode_extract(F, n).data
        un = modes[i]
        lap_x = sfft.ifft2(-k2 * sfft.fft2(un, axes=(-2, -1)), axes=(-2, -1))
        r = (modes[i + 1] - 2.0 * un + modes[i - 1]) / (h * h) - lap_x + n * n * un - Fn
        out.append((s.t, float(np.sqrt(np.sum(np.abs(r) ** 2) * grid.dx**2))))
    return np.array(out)


def _x_k_squared(grid: Grid) -> np.ndarray:
    k = grid.kx.copy()
    k[grid.nx // 2] = 0.0
    return k[:, None] ** 2 + k[None, :] ** 2


# ------------------------------------------------------------ inequalities
def poincare_check(grid: Grid, f: np.ndarray) -> float:
    """||P_{!=0} f|| / ||d_y f|| (0 when both vanish)."""
    num = float(np.sqrt(np.sum(grid.l2_norm(project_nonzero(f)) ** 2)))
    den = float(np.sqrt(np.sum(grid.l2_norm(grid.spectral_derivative(f, "y", 1)) ** 2)))
    if den == 0.0:
        if num > 1e-14:
            raise ParameterError("nonzero P_{!=0} f with vanishing d_y f: field is not band-limited")
        return 0.0
    return num / den


def smoothstep5(s):
    """Quintic smoothstep: 0 for s <= 0, 1 for s >= 1, C^2 in between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def cutoff_chi(s):
    """Bump equal to 1 on [1/2, 2] and 0 outside [1/3, 3] (quintic transitions)."""
    s = np.asarray(s, dtype=float)
    rise = smoothstep5((s - 1.0 / 3.0) / (0.5 - 1.0 / 3.0))
    fall = 1.0 - smoothstep5(s - 2.0)
    return rise * fall


def japanese(z):
    """<z> = sqrt(1 + z^2)."""
    return np.sqrt(1.0 + np.asarray(z, dtype=float) ** 2)


@dataclass(frozen=True)
class HardyReport:
    hardy: float  # ||g / (|x| ln|x|)||_{|x|>=2} / ||grad g||
    modified: float  # modified-Hardy left side over its right side
    grad_norm: float


HARDY_INNER_RADIUS = 2.0


def hardy_checks(grid: Grid, g: np.ndarray, t: float, lam: float) -> HardyReport:
    """Hardy and modified-Hardy ratios for a 2D field g on the x-grid.

    The Hardy quotient integrates only over |x| >= 2, away from the zero of
    ln|x|.  The modified quotient compares
    ||g chi(|x|/<t>) / <|x|-t>^{1/2+lam}|| with <t>^{1/2} ln(2+t) lam^{-1/2} ||grad g||.
    """
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam!r}")
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.nx, grid.nx):
        raise ParameterError(f"g must have shape {(grid.nx, grid.nx)}")
    k = grid.kx.copy()
    k[grid.nx // 2] = 0.0
    gh = sfft.fft2(g)
    g1 = sfft.ifft2(1j * k[:, None] * gh).real
    g2 = sfft.ifft2(1j * k[None, :] * gh).real
    area = grid.dx * grid.dx
    grad = float(np.sqrt(np.sum(g1 * g1 + g2 * g2) * area))
    r = grid.radius()[:, :, 0]
    outer = r >= HARDY_INNER_RADIUS
    w = np.zeros_like(r)
    w[outer] = 1.0 / (r[outer] * np.log(r[outer]))
    hardy_num = float(np.sqrt(np.sum((g * w) ** 2) * area))
    chi = cutoff_chi(r / japanese(t))
    mod_num = float(np.sqrt(np.sum((g * chi / japanese(r - t) ** (0.5 + lam)) ** 2) * area))
    scale = float(japanese(t)) ** 0.5 * np.log(2.0 + t) / np.sqrt(lam)
    if grad == 0.0:
        return HardyReport(0.0, 0.0, 0.0)
    return HardyReport(hardy_num / grad, mod_num / (scale * grad), grad)
