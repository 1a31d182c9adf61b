"""Diagonal trace-class noise and reproducible Wiener increments."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .spectral import ConfigurationError, SpectralField


@dataclass(frozen=True)
class NoiseSpec:
    """Amplitudes of the non-zero-mode noise Psi and the zero-mode noise Phi.

    Parameters
    ----------
    psi : ndarray, shape (2*nx + 1, ny)
        psi[k + nx, j - 1] = psi_{k,j}; the k = 0 row must vanish and the
        array must be symmetric under k -> -k so forced fields stay real.
    phi : ndarray, shape (ny,)
        phi[j - 1] = phi_j for the background shear forcing.
    m : float
        Regularity exponent in (2/3, 1) used by the weighted trace norm.
    nu : float
        Viscosity entering the weight of ||Psi||.
    """

    psi: np.ndarray
    phi: np.ndarray
    m: float = 0.75
    nu: float = 1e-3

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if psi.ndim != 2 or psi.shape[0] % 2 != 1:
            raise ConfigurationError(f"psi must have shape (2*nx+1, ny), got {psi.shape}")
        if phi.shape != (psi.shape[1],):
            raise ConfigurationError(f"phi must have shape ({psi.shape[1]},), got {phi.shape}")
        nx = (psi.shape[0] - 1) // 2
        if np.any(psi[nx] != 0):
            raise ConfigurationError("psi must vanish on the k=0 row")
        if not np.array_equal(psi, psi[::-1]):
            raise ConfigurationError("psi must be symmetric under k -> -k")
        if not 2 / 3 < self.m < 1:
            raise ConfigurationError(f"m must lie in (2/3, 1), got {self.m}")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi", phi)

    @property
    def nx(self) -> int:
        return (self.psi.shape[0] - 1) // 2

    @property
    def ny(self) -> int:
        return self.psi.shape[1]

    @classmethod
    def default(cls, nx: int, ny: int, *, nu: float, m: float = 0.75,
                amp_psi: float = 1.0, amp_phi: float = 1.0) -> "NoiseSpec":
        """psi_{k,j} = A |k|^{-(m+1)} j^{-2} and phi_j = A j^{-9/2}."""
        k = np.abs(np.arange(-nx, nx + 1, dtype=float))[:, None]
        j = np.arange(1, ny + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(k > 0, amp_psi * k ** (-(m + 1)) * j[None, :] ** -2.0, 0.0)
        phi = amp_phi * j ** -4.5
        return cls(psi, phi, m=m, nu=nu)

    @classmethod
    def from_table(cls, nx: int, ny: int, *, nu: float, m: float = 0.75,
                   psi: dict | None = None, phi: dict | None = None) -> "NoiseSpec":
        """Build from explicit {(k, j): value} and {j: value} tables.

        Each psi entry is mirrored to -k.
        """
        psi_arr = np.zeros((2 * nx + 1, ny))
        for (k, j), v in (psi or {}).items():
            if k == 0 or abs(k) > nx or not 1 <= j <= ny:
                raise ConfigurationError(f"psi entry ({k}, {j}) outside the non-zero-mode range")
            psi_arr[k + nx, j - 1] = v
            psi_arr[-k + nx, j - 1] = v
        phi_arr = np.zeros(ny)
        for j, v in (phi or {}).items():
            if not 1 <= j <= ny:
                raise ConfigurationError(f"phi entry {j} outside 1..{ny}")
            phi_arr[j - 1] = v
        return cls(psi_arr, phi_arr, m=m, nu=nu)

    def scaled(self, psi_factor: float = 1.0, phi_factor: float = 1.0) -> "NoiseSpec":
        return NoiseSpec(self.psi * psi_factor, self.phi * phi_factor, self.m, self.nu)


def trace_norms(spec: NoiseSpec) -> tuple[float, float]:
    """Return (||Psi||^2, ||Phi||^2) over the truncated index set."""
    nx, ny = spec.nx, spec.ny
    k = np.abs(np.arange(-nx, nx + 1, dtype=float))[:, None]
    j = np.arange(1, ny + 1, dtype=float)[None, :]
    kk = np.where(k > 0, k, 1.0)
    weight = kk ** (2 * spec.m) * (1 + (np.pi**2 / 4) * spec.nu ** (2 / 3) * kk ** (-2 / 3) * j**2)
    psi_sq = float(np.sum(np.where(k > 0, weight * spec.psi**2, 0.0)))
    jj = np.arange(1, ny + 1, dtype=float)
    phi_sq = float(np.sum(jj**6 * (np.pi**6 / 64) * spec.phi**2))
    return psi_sq, phi_sq


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass
class RngStream:
    """Counter-based Gaussian stream identified by (seed, path, tag).

    Draw number ``n`` is generated by a Philox generator whose key comes from
    (seed, path, tag) and whose counter starts at ``[0, n, 0, 0]``, so it does
    not depend on what other streams or threads have done.
    """

    seed: int
    path: int = 0
    tag: str = "W"
    counter: int = 0
    _key: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence([int(self.seed) & (2**64 - 1), int(self.path), _tag_code(self.tag)])
        self._key = ss.generate_state(2, dtype=np.uint64)

    def generator_at(self, counter: int) -> np.random.Generator:
        ctr = np.array([0, counter, 0, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=ctr))

    def next_generator(self) -> np.random.Generator:
        gen = self.generator_at(self.counter)
        self.counter += 1
        return gen

    def normal(self, shape) -> np.ndarray:
        return self.next_generator().standard_normal(shape)

    def spawn(self, tag: str) -> "RngStream":
        return RngStream(self.seed, self.path, f"{self.tag}/{tag}")


def complex_increments(amplitude: np.ndarray, dt: float, rng: RngStream) -> np.ndarray:
    """Reality-symmetric complex Gaussian array with E|c_{k,j}|^2 = amplitude^2 dt."""
    rows, ny = amplitude.shape
    nx = (rows - 1) // 2
    z = rng.normal((2, nx, ny))
    half = (z[0] + 1j * z[1]) / np.sqrt(2)
    out = np.zeros((rows, ny), dtype=complex)
    out[nx + 1:] = amplitude[nx + 1:] * np.sqrt(dt) * half
    out[:nx] = np.conj(out[nx + 1:][::-1])
    return out


def sample_dW(spec: NoiseSpec, dt: float, rng: RngStream) -> SpectralField:
    """Increment Psi dW over a step dt (non-zero modes only)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return SpectralField(complex_increments(spec.psi, dt, rng))


def sample_dV(spec: NoiseSpec, dt: float, rng: RngStream) -> SpectralField:
    """Increment Phi dV over a step dt (zero mode only, real)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    xi = rng.normal(spec.ny)
    f = SpectralField.zeros(spec.nx, spec.ny)
    f.coeffs[spec.nx] = spec.phi * np.sqrt(dt) * xi
    return f
