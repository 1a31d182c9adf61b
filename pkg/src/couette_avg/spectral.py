"""Fourier x Dirichlet-sine basis on the channel T x [-1, 1].

A field is stored as complex coefficients ``c[k, j]`` of the basis

    e_{k,j}(x, y) = exp(i k x) sin(j pi (y + 1) / 2),   |k| <= nx, 1 <= j <= ny,

with row ``k + nx`` and column ``j - 1``. Each sine factor has unit L2 norm on
[-1, 1] and the x direction uses the normalized measure dx / 2pi, so the
coefficient l2 norm is the L2 norm used throughout the package. Derivatives in
y map sine series to cosine series; the result carries ``basis="cosine"`` so the
two are never mixed by accident.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

SINE = "sine"
COSINE = "cosine"


class ConfigurationError(ValueError):
    """Raised when array shapes or truncation sizes are inconsistent."""


class DomainError(ValueError):
    """Raised when an operator is applied outside its domain."""


def y_wavenumbers(ny: int) -> np.ndarray:
    """Return the sine wavenumbers j pi / 2 for j = 1..ny."""
    return np.arange(1, ny + 1) * (np.pi / 2)


def x_wavenumbers(nx: int) -> np.ndarray:
    return np.arange(-nx, nx + 1, dtype=float)


def laplacian_symbol(nx: int, ny: int) -> np.ndarray:
    """k^2 + (j pi / 2)^2 on the (2nx+1, ny) coefficient grid (always > 0)."""
    k = x_wavenumbers(nx)[:, None]
    eta = y_wavenumbers(ny)[None, :]
    return k**2 + eta**2


class SpectralField:
    """Coefficients of a field in the Fourier x sine (or cosine) basis.

    Parameters
    ----------
    coeffs : array_like, shape (2*nx + 1, ny)
        Complex coefficients. Row ``k + nx`` holds x-frequency ``k``.
    basis : {"sine", "cosine"}
        Which y-family the columns refer to. Cosine fields only arise as
        y-derivatives of sine fields and have no j = 0 column.
    """

    __slots__ = ("coeffs", "basis")
    __array_priority__ = 1000

    def __init__(self, coeffs, basis: str = SINE):
        arr = np.array(coeffs, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] % 2 != 1 or arr.shape[1] < 1:
            raise ConfigurationError(
                f"coefficient array must have shape (2*nx+1, ny); got {arr.shape}")
        if basis not in (SINE, COSINE):
            raise ConfigurationError(f"unknown basis {basis!r}")
        self.coeffs = arr
        self.basis = basis

    @property
    def nx(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def ny(self) -> int:
        return self.coeffs.shape[1]

    @classmethod
    def zeros(cls, nx: int, ny: int, basis: str = SINE) -> "SpectralField":
        return cls(np.zeros((2 * nx + 1, ny), dtype=complex), basis)

    @classmethod
    def mode(cls, k: int, j: int, nx: int, ny: int, amplitude: complex = 1.0,
             real: bool = False) -> "SpectralField":
        """Single basis function e_{k,j}; with ``real=True`` add the conjugate e_{-k,j}."""
        if abs(k) > nx or not 1 <= j <= ny:
            raise DomainError(f"mode ({k}, {j}) outside truncation ({nx}, {ny})")
        f = cls.zeros(nx, ny)
        f.coeffs[k + nx, j - 1] += amplitude
        if real:
            if k == 0:
                f.coeffs[nx, j - 1] = 2 * np.real(amplitude)
            else:
                f.coeffs[-k + nx, j - 1] += np.conj(amplitude)
        return f

    def copy(self) -> "SpectralField":
        return SpectralField(self.coeffs.copy(), self.basis)

    def row(self, k: int) -> np.ndarray:
        return self.coeffs[k + self.nx]

    def _check_compatible(self, other: "SpectralField") -> None:
        if self.coeffs.shape != other.coeffs.shape:
            raise ConfigurationError(
                f"truncation mismatch {self.coeffs.shape} vs {other.coeffs.shape}")
        if self.basis != other.basis:
            raise DomainError(f"cannot combine {self.basis} and {other.basis} fields")

    def __add__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        self._check_compatible(other)
        return SpectralField(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        self._check_compatible(other)
        return SpectralField(self.coeffs - other.coeffs, self.basis)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.basis)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.coeffs * scalar, self.basis)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.coeffs / scalar, self.basis)

    def __repr__(self) -> str:
        return f"SpectralField(nx={self.nx}, ny={self.ny}, basis={self.basis!r})"

    def norm(self) -> float:
        """Coefficient l2 norm (the L2 norm with normalized x-measure)."""
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
        return bool(np.max(np.abs(c - np.conj(c[::-1])), initial=0.0) <= tol * scale)

    def enforce_reality(self) -> "SpectralField":
        """Symmetrize so that c(-k, j) = conj(c(k, j)) exactly."""
        c = 0.5 * (self.coeffs + np.conj(self.coeffs[::-1]))
        return SpectralField(c, self.basis)

    def zero_mode(self) -> "SpectralField":
        """Projection P_0 onto x-independent modes."""
        out = SpectralField.zeros(self.nx, self.ny, self.basis)
        out.coeffs[self.nx] = self.coeffs[self.nx]
        return out

    def nonzero_modes(self) -> "SpectralField":
        """Projection P_neq onto modes with k != 0."""
        out = self.copy()
        out.coeffs[self.nx] = 0.0
        return out

    def has_only_zero_mode(self) -> bool:
        c = self.coeffs.copy()
        c[self.nx] = 0.0
        return not np.any(c)

    def has_no_zero_mode(self) -> bool:
        return not np.any(self.coeffs[self.nx])


def require_zero_mode(f: SpectralField, name: str = "field") -> None:
    if not f.has_only_zero_mode():
        raise DomainError(f"{name} must contain only k=0 modes")


def require_nonzero_modes(f: SpectralField, name: str = "field") -> None:
    if not f.has_no_zero_mode():
        raise DomainError(f"{name} must not contain k=0 modes")


def require_sine(f: SpectralField, name: str = "field") -> None:
    if f.basis != SINE:
        raise DomainError(f"{name} must be a sine-basis field, got {f.basis}")


# ---------------------------------------------------------------------------
# diagonal operators


def dx(f: SpectralField) -> SpectralField:
    k = x_wavenumbers(f.nx)[:, None]
    return SpectralField(1j * k * f.coeffs, f.basis)


def dy(f: SpectralField) -> SpectralField:
    """y-derivative: sine -> cosine with factor j pi/2, cosine -> sine with -j pi/2."""
    eta = y_wavenumbers(f.ny)[None, :]
    if f.basis == SINE:
        return SpectralField(eta * f.coeffs, COSINE)
    return SpectralField(-eta * f.coeffs, SINE)


def dy_to_cosine(f: SpectralField) -> SpectralField:
    require_sine(f)
    return dy(f)


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(-laplacian_symbol(f.nx, f.ny) * f.coeffs, f.basis)


def inv_laplacian(f: SpectralField) -> SpectralField:
    """Dirichlet inverse Laplacian Delta_k^{-1}, diagonal on the sine basis."""
    require_sine(f)
    return SpectralField(-f.coeffs / laplacian_symbol(f.nx, f.ny), SINE)


def biot_savart(f: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Velocity (u1, u2) = (dy Delta^{-1} f, -dx Delta^{-1} f); u1 is cosine-type."""
    stream = inv_laplacian(f)
    return dy(stream), -dx(stream)


def frac_dy(f: SpectralField, s: float) -> SpectralField:
    """Spectral fractional derivative |dy|^s on zero-mode fields."""
    require_sine(f)
    require_zero_mode(f)
    mult = y_wavenumbers(f.ny) ** float(s)
    out = SpectralField.zeros(f.nx, f.ny)
    out.coeffs[f.nx] = f.coeffs[f.nx] * mult
    return out


def heat_semigroup(f: SpectralField, t: float, kappa: float = 1.0,
                   y_only: bool = False) -> SpectralField:
    """Apply exp(kappa t Delta) (or exp(kappa t dy^2) with ``y_only``) mode by mode."""
    if t < 0:
        raise DomainError(f"heat semigroup needs t >= 0, got {t}")
    if y_only:
        sym = np.broadcast_to(y_wavenumbers(f.ny)[None, :] ** 2, f.coeffs.shape)
    else:
        sym = laplacian_symbol(f.nx, f.ny)
    return SpectralField(np.exp(-kappa * t * sym) * f.coeffs, f.basis)


# ---------------------------------------------------------------------------
# collocation grid and transforms


@dataclass(frozen=True)
class Grid:
    """Dealiased collocation grid for a truncation (nx, ny).

    ``mx`` points in x and ``my`` intervals in y; the sine nodes are the
    ``my - 1`` interior points y_i = -1 + 2 i / my.
    """

    nx: int
    ny: int
    mx: int
    my: int

    @classmethod
    def for_truncation(cls, nx: int, ny: int) -> "Grid":
        return _grid_cached(int(nx), int(ny))

    @property
    def x(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.mx) / self.mx

    @property
    def y(self) -> np.ndarray:
        return -1 + 2 * np.arange(1, self.my) / self.my

    @property
    def y_with_walls(self) -> np.ndarray:
        return -1 + 2 * np.arange(self.my + 1) / self.my


@lru_cache(maxsize=None)
def _grid_cached(nx: int, ny: int) -> Grid:
    if nx < 0 or ny < 1:
        raise ConfigurationError(f"invalid truncation nx={nx}, ny={ny}")
    mx = sfft.next_fast_len(3 * nx + 1) if nx > 0 else 1
    return Grid(nx, ny, mx, 2 * ny)


@dataclass
class GridField:
    """Real point values on the interior collocation nodes, shape (mx, my - 1)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        expected = (self.grid.mx, self.grid.my - 1)
        if self.values.shape != expected:
            raise ConfigurationError(
                f"grid values have shape {self.values.shape}, expected {expected}")

    def __mul__(self, other):
        if isinstance(other, GridField):
            return GridField(self.values * other.values, self.grid)
        return GridField(self.values * other, self.grid)

    __rmul__ = __mul__

    def __add__(self, other: "GridField"):
        return GridField(self.values + other.values, self.grid)

    def __sub__(self, other: "GridField"):
        return GridField(self.values - other.values, self.grid)

    def x_mean(self) -> np.ndarray:
        return self.values.mean(axis=0)


def _y_synthesis(coeffs: np.ndarray, basis: str, my: int) -> np.ndarray:
    """Evaluate y-series along the last axis at the interior nodes."""
    rows, ny = coeffs.shape
    if basis == SINE:
        padded = np.zeros((rows, my - 1), dtype=complex)
        padded[:, :ny] = coeffs
        return sfft.dst(padded, type=1, axis=1) / 2
    padded = np.zeros((rows, my + 1), dtype=complex)
    padded[:, 1:ny + 1] = coeffs
    full = sfft.dct(padded, type=1, axis=1) / 2
    return full[:, 1:my]


def _x_synthesis(rows: np.ndarray, nx: int, mx: int) -> np.ndarray:
    full = np.zeros((mx, rows.shape[1]), dtype=complex)
    k = np.arange(-nx, nx + 1)
    full[k % mx] = rows
    return sfft.ifft(full, axis=0) * mx


def to_grid(f: SpectralField, grid: Grid | None = None) -> GridField:
    """Point values of a (real) field on the dealiased grid."""
    grid = grid or Grid.for_truncation(f.nx, f.ny)
    if grid.nx < f.nx or grid.my < 2 * f.ny:
        raise ConfigurationError(
            f"grid ({grid.mx}, {grid.my}) too small for truncation ({f.nx}, {f.ny})")
    vals = _x_synthesis(_y_synthesis(f.coeffs, f.basis, grid.my), f.nx, grid.mx)
    return GridField(np.ascontiguousarray(vals.real), grid)


def to_spectral(g: GridField, nx: int | None = None, ny: int | None = None) -> SpectralField:
    """Sine-basis projection of grid values, truncated to (nx, ny).

    Exact for sine polynomials of y-degree < my and x-degree <= mx - nx - 1,
    which covers every quadratic product of retained modes.
    """
    grid = g.grid
    nx = grid.nx if nx is None else nx
    ny = grid.ny if ny is None else ny
    if ny > grid.my - 1 or 2 * nx + 1 > grid.mx:
        raise ConfigurationError(f"cannot truncate grid {grid} to ({nx}, {ny})")
    xhat = sfft.fft(g.values, axis=0) / grid.mx
    k = np.arange(-nx, nx + 1)
    rows = xhat[k % grid.mx]
    coeffs = sfft.dst(rows, type=1, axis=1)[:, :ny] / grid.my
    return SpectralField(coeffs, SINE)


def grid_l2_norm(g: GridField) -> float:
    """sqrt of the trapezoid quadrature of int int |g|^2 dx dy (un-normalized in x)."""
    grid = g.grid
    w = (2 * np.pi / grid.mx) * (2.0 / grid.my)
    return float(np.sqrt(w * np.sum(g.values**2)))


def cosine_poly_from_walls(values_with_walls: np.ndarray) -> np.ndarray:
    """Cosine coefficients a_0..a_my from y-values at all my + 1 nodes (walls included).

    Exact for cosine polynomials of degree <= my.
    """
    my = values_with_walls.shape[-1] - 1
    a = sfft.dct(values_with_walls, type=1, axis=-1) / my
    a[..., 0] /= 2
    a[..., -1] /= 2
    return a


# ---------------------------------------------------------------------------
# closed-form Galerkin matrices on the sine basis


@lru_cache(maxsize=64)
def multiply_by_y_matrix(ny: int) -> np.ndarray:
    """M[j, l] = int_{-1}^{1} y s_j s_l dy, the sine-basis matrix of multiplication by y."""
    j = np.arange(1, ny + 1)[:, None]
    l = np.arange(1, ny + 1)[None, :]
    odd = (j - l) % 2 == 1
    with np.errstate(divide="ignore"):
        vals = (4 / np.pi**2) * (1.0 / (j + l) ** 2 - 1.0 / np.where(odd, (j - l), 1) ** 2)
    out = np.where(odd, vals, 0.0)
    out.setflags(write=False)
    return out


def cosine_multiplier_matrix(a: np.ndarray, ny: int) -> np.ndarray:
    """Sine-basis matrix of multiplication by sum_n a[n-1] cos(n theta), n = 1..len(a).

    From cos(n t) sin(l t) = (sin((l+n) t) + sin((l-n) t)) / 2 the entry (j, l)
    is (a_{j-l} + a_{l-j} - a_{j+l}) / 2 with a_n = 0 outside 1..len(a), so the
    matrix is exact.
    """
    a = np.asarray(a)
    padded = np.zeros(2 * ny + 1, dtype=a.dtype)
    n = min(len(a), 2 * ny)
    padded[1:n + 1] = a[:n]
    j = np.arange(1, ny + 1)[:, None]
    l = np.arange(1, ny + 1)[None, :]
    lookup = lambda idx: np.where(idx > 0, padded[np.clip(idx, 0, 2 * ny)], 0)
    return 0.5 * (lookup(j - l) + lookup(l - j) - lookup(j + l))


@lru_cache(maxsize=64)
def cosine_to_sine_matrix(n_cos: int, ny: int) -> np.ndarray:
    """S[j-1, n] = int_{-1}^{1} s_j cos(n theta) dy for n = 0..n_cos, j = 1..ny."""
    j = np.arange(1, ny + 1)[:, None]
    n = np.arange(0, n_cos + 1)[None, :]
    odd = (j + n) % 2 == 1
    denom = np.where(odd, j**2 - n**2, 1)
    out = np.where(odd, (4 / np.pi) * j / denom, 0.0)
    out.setflags(write=False)
    return out


def sine_cosine_gram(ny: int) -> np.ndarray:
    """G[j-1, l-1] = int s_j cos(l theta) dy for j, l = 1..ny."""
    return np.asarray(cosine_to_sine_matrix(ny, ny))[:, 1:]


def evaluate(f: SpectralField, x, y) -> np.ndarray:
    """Direct basis summation at arbitrary points (slow; used by oracles and plots)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = x_wavenumbers(f.nx)
    theta = (np.pi / 2) * (y + 1)
    j = np.arange(1, f.ny + 1)
    fam = np.sin if f.basis == SINE else np.cos
    ybasis = fam(np.multiply.outer(theta, j))
    xbasis = np.exp(1j * np.multiply.outer(x, k))
    return np.einsum("...k,kj,...j->...", xbasis, f.coeffs, ybasis)
