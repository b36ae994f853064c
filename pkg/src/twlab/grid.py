"""Periodic box [-L, L)^2 x [0, 2pi) with spectral operators.

Fields are real arrays whose last three axes are (x1, x2, y); any leading
axes (components, stacks of fields) are carried along untouched.

Transform convention: the forward transform is unnormalized and the inverse
carries the 1/N factor (``scipy.fft`` "backward" norm).  Nyquist wavenumbers
are zeroed in every derivative multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

AXES = {"x1": -3, "x2": -2, "y": -1}
_SPATIAL = (-3, -2, -1)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def dealias_cutoff(n: int) -> int:
    """Largest retained |index| under the 2/3 rule (two thirds of n/2)."""
    return n // 3


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [-L, L)^2 x [0, 2pi).

    Parameters
    ----------
    nx : int
        Points per x-axis, a power of two (>= 4).
    L : float
        Half-width of the x-box.
    ny : int
        Points along the torus direction, a power of two (>= 4).
    """

    nx: int
    L: float
    ny: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not (isinstance(self.nx, (int, np.integer)) and self.nx >= 4 and _is_pow2(int(self.nx))):
            raise ValueError(f"nx must be a power of two >= 4, got {self.nx!r}")
        if not (isinstance(self.ny, (int, np.integer)) and self.ny >= 4 and _is_pow2(int(self.ny))):
            raise ValueError(f"ny must be a power of two >= 4, got {self.ny!r}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be positive and finite, got {self.L!r}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "L", float(self.L))

    # ------------------------------------------------------------------ geometry
    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.nx

    @property
    def dy(self) -> float:
        return 2.0 * np.pi / self.ny

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        """1D x-coordinates, -L + i*dx."""
        return -self.L + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.dy * np.arange(self.ny)

    def mesh(self):
        """Broadcastable coordinate arrays (X1, X2, Y) of shapes (nx,1,1), (1,nx,1), (1,1,ny)."""
        x = self.x
        return x[:, None, None], x[None, :, None], self.y[None, None, :]

    def radius(self) -> np.ndarray:
        """|x| on the (nx, nx, 1) x-plane, broadcastable against fields."""
        x1, x2, _ = self.mesh()
        return np.sqrt(x1 * x1 + x2 * x2)

    def descriptor(self) -> tuple:
        return (self.nx, self.L, self.ny)

    # --------------------------------------------------------------- wavenumbers
    @property
    def kx_index(self) -> np.ndarray:
        """Integer x-wavenumber indices in FFT order."""
        return np.fft.fftfreq(self.nx, 1.0 / self.nx).astype(np.int64)

    @property
    def ky_index(self) -> np.ndarray:
        """Integer y-wavenumbers on the real (half) spectrum: 0..ny/2."""
        return np.arange(self.ny // 2 + 1)

    @property
    def kx(self) -> np.ndarray:
        """Angular x-wavenumbers, multiples of pi/L (FFT order, Nyquist kept)."""
        return (np.pi / self.L) * self.kx_index

    @property
    def ky(self) -> np.ndarray:
        return self.ky_index.astype(float)

    def _kz(self, axis: str) -> np.ndarray:
        """Wavenumbers with the Nyquist entry zeroed, broadcast to spectral shape."""
        key = ("kz", axis)
        if key not in self._cache:
            if axis == "y":
                k = self.ky.copy()
                k[-1] = 0.0
                out = k[None, None, :]
            else:
                k = self.kx.copy()
                k[self.nx // 2] = 0.0
                out = k[:, None, None] if axis == "x1" else k[None, :, None]
            self._cache[key] = out
        return self._cache[key]

    def k_squared(self) -> np.ndarray:
        """kx1^2 + kx2^2 + ky^2 on the spectral grid (Nyquist zeroed)."""
        if "k2" not in self._cache:
            self._cache["k2"] = self._kz("x1") ** 2 + self._kz("x2") ** 2 + self._kz("y") ** 2
        return self._cache["k2"]

    def k_abs(self) -> np.ndarray:
        if "kabs" not in self._cache:
            self._cache["kabs"] = np.sqrt(self.k_squared())
        return self._cache["kabs"]

    def dealias_mask(self) -> np.ndarray:
        if "mask" not in self._cache:
            cx = dealias_cutoff(self.nx)
            cy = dealias_cutoff(self.ny)
            kx = np.abs(self.kx_index)
            mx = kx <= cx
            my = self.ky_index <= cy
            self._cache["mask"] = mx[:, None, None] & mx[None, :, None] & my[None, None, :]
        return self._cache["mask"]

    # ---------------------------------------------------------------- transforms
    def fft(self, f: np.ndarray) -> np.ndarray:
        """Unnormalized forward transform over the spatial axes (real half along y)."""
        self._check(f)
        return sfft.rfftn(f, axes=_SPATIAL)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`fft` (carries the 1/N factor)."""
        return sfft.irfftn(fh, s=self.shape, axes=_SPATIAL)

    def _check(self, f: np.ndarray):
        if f.shape[-3:] != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")

    # ------------------------------------------------------------ spectral calculus
    def derivative_multiplier(self, axis: str, order: int) -> np.ndarray:
        if axis not in AXES:
            raise ValueError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
        if order < 0 or int(order) != order:
            raise ValueError(f"order must be a non-negative integer, got {order!r}")
        return (1j * self._kz(axis)) ** int(order)

    def spectral_derivative(self, f: np.ndarray, axis: str, order: int = 1) -> np.ndarray:
        """Exact derivative of the trigonometric interpolant along ``axis``."""
        mult = self.derivative_multiplier(axis, order)
        if order == 0:
            self._check(f)
            return np.array(f, dtype=float, copy=True)
        return self.ifft(self.fft(f) * mult)

    def gradient(self, f: np.ndarray) -> list[np.ndarray]:
        """(d1 f, d2 f, dy f) sharing one forward transform."""
        fh = self.fft(f)
        return [self.ifft(fh * (1j * self._kz(a))) for a in ("x1", "x2", "y")]

    def laplacian3(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(-self.k_squared() * self.fft(f))

    def half_laplacian(self, f: np.ndarray) -> np.ndarray:
        """Lambda = (-Delta_3)^{1/2}; the zero mode maps to zero."""
        return self.ifft(self.k_abs() * self.fft(f))

    def dealias(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(self.fft(f) * self.dealias_mask())

    # ---------------------------------------------------------------- quadrature
    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Rectangle-rule integral over the box (exact for trigonometric data)."""
        return f.sum(axis=_SPATIAL) * self.cell_volume

    def l2_norm(self, f: np.ndarray) -> np.ndarray:
        return np.sqrt(self.integrate(f * f))

    def spectral_l2_norm(self, fh: np.ndarray) -> np.ndarray:
        """L2 norm from the half spectrum of :meth:`fft` (Parseval)."""
        w = np.full(self.ny // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        s = (np.abs(fh) ** 2 * w).sum(axis=_SPATIAL)
        return np.sqrt(s * self.cell_volume / self.size)
