"""Background shear and the time steppers of the fast-slow, pseudo-linearized
and auxiliary systems.

Every Y-type process is advanced with an exponential integrator built from the
full per-k linear operator

    L_k = c_diff Delta_k - c_adv ik M_U + c_adv ik M_{U''} Delta_k^{-1},

where M_U and M_{U''} are exact Galerkin multiplication matrices. The linear
part (diffusion, shear transport and the U'' term) is therefore integrated
exactly for the shear frozen over one step; b_m and b_neq are explicit
(exponential Euler) and the additive noise enters through exp(dt L / 2).
X-type processes have a diagonal linear part and use the same scheme with the
exact heat factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .config import Coefficients, SimConfig
from .noise import NoiseSpec, RngStream, sample_dW
from .nonlinear import all_terms
from .spectral import (
    SpectralField,
    cosine_multiplier_matrix,
    evaluate,
    laplacian_symbol,
    multiply_by_y_matrix,
    require_zero_mode,
    y_wavenumbers,
)


class BlowUpError(FloatingPointError):
    """A path produced non-finite coefficients."""

    def __init__(self, t: float, variant: str):
        self.t = t
        self.variant = variant
        super().__init__(f"non-finite state in {variant} at t={t:.6g}")


# ---------------------------------------------------------------------------
# background shear


class ShearState:
    """Background vorticity W (zero-mode sine field) and the derived profile U.

    U = y + dy (dyy^{-1} W) so that U' = 1 + W, U'' = dy W and U''' = dy^2 W.
    In coefficients: U - y = sum_j -W_j / (j pi / 2) cos(j theta).
    """

    def __init__(self, W: SpectralField):
        require_zero_mode(W, "W")
        self.W = SpectralField(W.coeffs.real.astype(complex))
        self._matrices = None

    @classmethod
    def couette(cls, nx: int, ny: int) -> "ShearState":
        return cls(SpectralField.zeros(nx, ny))

    @property
    def nx(self) -> int:
        return self.W.nx

    @property
    def ny(self) -> int:
        return self.W.ny

    @property
    def w(self) -> np.ndarray:
        """Real sine coefficients W_j, j = 1..ny."""
        return self.W.coeffs[self.W.nx].real

    @property
    def is_couette(self) -> bool:
        return not np.any(self.w)

    def key(self) -> bytes:
        return self.w.tobytes()

    def u_minus_y_cosine(self) -> np.ndarray:
        return -self.w / y_wavenumbers(self.ny)

    def u2_cosine(self) -> np.ndarray:
        """Cosine coefficients of U'' = dy W."""
        return self.w * y_wavenumbers(self.ny)

    def u3_sine(self) -> np.ndarray:
        """Sine coefficients of U''' = dy^2 W."""
        return -self.w * y_wavenumbers(self.ny) ** 2

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Galerkin matrices of multiplication by U and by U''."""
        if self._matrices is None:
            M_U = multiply_by_y_matrix(self.ny) + cosine_multiplier_matrix(self.u_minus_y_cosine(), self.ny)
            M_U2 = cosine_multiplier_matrix(self.u2_cosine(), self.ny)
            self._matrices = (M_U, M_U2)
        return self._matrices

    def profiles(self, y) -> dict[str, np.ndarray]:
        """U, U', U'', U''' evaluated at the points ``y`` by direct summation."""
        y = np.asarray(y, dtype=float)
        theta = (np.pi / 2) * (y + 1)
        j = np.arange(1, self.ny + 1)
        eta = y_wavenumbers(self.ny)
        s = np.sin(np.multiply.outer(theta, j))
        c = np.cos(np.multiply.outer(theta, j))
        return {
            "U": y + c @ self.u_minus_y_cosine(),
            "U1": 1 + s @ self.w,
            "U2": c @ self.u2_cosine(),
            "U3": s @ self.u3_sine(),
            "W": s @ self.w,
            "dU1": c @ (self.w * eta),
        }

    def h3_norm(self) -> float:
        return float(np.sqrt(np.sum(y_wavenumbers(self.ny) ** 6 * self.w**2)))

    def max_abs_u(self) -> float:
        y = np.linspace(-1, 1, 4 * self.ny + 1)
        return float(np.max(np.abs(self.profiles(y)["U"])))


@lru_cache(maxsize=16)
def _c2_basis(ny: int, points: int) -> tuple[np.ndarray, np.ndarray]:
    theta = (np.pi / 2) * (np.linspace(-1, 1, points) + 1)
    j = np.arange(1, ny + 1)
    return np.sin(np.multiply.outer(theta, j)), np.cos(np.multiply.outer(theta, j))


def shear_c2_distance(a: ShearState, b: ShearState, points: int | None = None) -> float:
    """sup|U_a - U_b| + sup|U_a' - U_b'| + sup|U_a'' - U_b''| sampled on a uniform grid.

    The grid has ``points`` nodes, 8 N_y + 1 by default, walls included. The
    distance depends on the vorticity difference only: U' - 1 = W, U'' = dy W.
    """
    dw = a.w - b.w
    eta = y_wavenumbers(a.ny)
    sines, cosines = _c2_basis(a.ny, points or 8 * a.ny + 1)
    return float(np.max(np.abs(cosines @ (dw / eta))) + np.max(np.abs(sines @ dw))
                 + np.max(np.abs(cosines @ (dw * eta))))


def step_background(state: ShearState, dt: float, rng: RngStream | None, spec: NoiseSpec,
                    coeffs: Coefficients) -> ShearState:
    """Exact Ornstein-Uhlenbeck update of each sine mode of W.

    dW = c_diff dy^2 W dt + c_noise Phi dV with c_diff = nu^gamma and
    c_noise = nu^{1/3 + gamma/2} in slow time.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rate = coeffs.shear_diffusion * y_wavenumbers(state.ny) ** 2
    w = np.exp(-rate * dt) * state.w
    if rng is not None:
        var = -np.expm1(-2 * rate * dt) / (2 * rate)
        w = w + coeffs.shear_noise * spec.phi * np.sqrt(var) * rng.normal(state.ny)
    W = SpectralField.zeros(state.nx, state.ny)
    W.coeffs[state.nx] = w
    return ShearState(W)


def exact_background_variance(nu: float, gamma: float, phi: np.ndarray, dt: float) -> np.ndarray:
    """Per-mode variance nu^{2/3+gamma} phi_j^2 (1 - e^{-2 nu^gamma lam dt}) / (2 nu^gamma lam)."""
    lam = y_wavenumbers(len(phi)) ** 2
    rate = nu**gamma * lam
    return nu ** (2 / 3 + gamma) * phi**2 * (-np.expm1(-2 * rate * dt)) / (2 * rate)


# ---------------------------------------------------------------------------
# linear propagators


def linear_operator(shear: ShearState, coeffs: Coefficients, nx: int | None = None) -> np.ndarray:
    """Stack of the per-k matrices L_k for k = 1..nx, shape (nx, ny, ny)."""
    nx = shear.nx if nx is None else nx
    ny = shear.ny
    M_U, M_U2 = shear.matrices()
    sym = laplacian_symbol(nx, ny)[nx + 1:]
    out = np.empty((nx, ny, ny), dtype=complex)
    for i, k in enumerate(range(1, nx + 1)):
        L = -coeffs.advection * 1j * k * M_U
        if not shear.is_couette:
            L = L - coeffs.advection * 1j * k * M_U2 / sym[i][None, :]
        L[np.diag_indices(ny)] += -coeffs.diffusion * sym[i]
        out[i] = L
    return out


@dataclass
class LinearPropagator:
    """exp(dt L_k), exp(dt L_k / 2) and dt phi_1(dt L_k) for k = 1..nx plus the
    diagonal zero-mode heat factors."""

    dt: float
    full: np.ndarray
    half: np.ndarray
    phi: np.ndarray
    x_decay: np.ndarray
    x_phi: np.ndarray

    @classmethod
    def build(cls, shear: ShearState, coeffs: Coefficients, dt: float) -> "LinearPropagator":
        L = linear_operator(shear, coeffs)
        nx, ny, _ = L.shape
        aug = np.zeros((nx, 2 * ny, 2 * ny), dtype=complex)
        aug[:, :ny, :ny] = 0.5 * dt * L
        aug[:, :ny, ny:] = 0.5 * dt * np.eye(ny)
        ex = sla.expm(aug)
        half = ex[:, :ny, :ny]
        half_phi = ex[:, :ny, ny:]
        full = half @ half
        phi = (np.eye(ny)[None] + half) @ half_phi
        rate = coeffs.diffusion * y_wavenumbers(ny) ** 2
        x_decay = np.exp(-rate * dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_phi = np.where(rate > 0, -np.expm1(-rate * dt) / rate, dt)
        return cls(dt, full, half, phi, x_decay, x_phi)


class PropagatorCache:
    """Memoizes propagators by (shear coefficients, dt); shear changes every step
    when Phi != 0, so the cache mostly helps deterministic shear."""

    def __init__(self, coeffs: Coefficients, maxsize: int = 4):
        self.coeffs = coeffs
        self.maxsize = maxsize
        self._store: dict[tuple[bytes, float], LinearPropagator] = {}

    def get(self, shear: ShearState, dt: float) -> LinearPropagator:
        key = (shear.key(), float(dt))
        prop = self._store.get(key)
        if prop is None:
            prop = LinearPropagator.build(shear, self.coeffs, dt)
            if len(self._store) >= self.maxsize:
                self._store.pop(next(iter(self._store)))
            self._store[key] = prop
        return prop


# ---------------------------------------------------------------------------
# steppers


def _noise_field(noise, spec: NoiseSpec | None, dt: float) -> np.ndarray | None:
    if noise is None:
        return None
    if isinstance(noise, SpectralField):
        return noise.coeffs
    if isinstance(noise, RngStream):
        if spec is None:
            raise ValueError("a NoiseSpec is required to draw increments from an RngStream")
        return sample_dW(spec, dt, noise).coeffs
    raise TypeError(f"unsupported noise argument {type(noise).__name__}")


def _exp_step(X: SpectralField, Y: SpectralField, X_coupling: SpectralField,
              prop: LinearPropagator, coeffs: Coefficients, noise: np.ndarray | None,
              with_bneq: bool, t: float, variant: str) -> tuple[SpectralField, SpectralField]:
    nx = Y.nx
    use_bneq = with_bneq and coeffs.bneq != 0
    terms = all_terms(X_coupling, Y, with_bm=coeffs.bm != 0, with_bneq=use_bneq)
    drift = np.zeros((nx, Y.ny), dtype=complex)
    if terms.bm is not None:
        drift -= coeffs.bm * terms.bm.coeffs[nx + 1:]
    if use_bneq:
        drift -= coeffs.bneq * terms.bneq.coeffs[nx + 1:]
    pos = Y.coeffs[nx + 1:]
    new_pos = np.einsum("kij,kj->ki", prop.full, pos) + np.einsum("kij,kj->ki", prop.phi, drift)
    if noise is not None and coeffs.noise != 0:
        new_pos += coeffs.noise * np.einsum("kij,kj->ki", prop.half, noise[nx + 1:])
    Ynew = np.zeros_like(Y.coeffs)
    Ynew[nx + 1:] = new_pos
    Ynew[:nx] = np.conj(new_pos[::-1])
    Xnew = np.zeros_like(X.coeffs)
    Xnew[nx] = prop.x_decay * X.coeffs[nx] - coeffs.b0 * prop.x_phi * terms.b0.coeffs[nx].real
    if not (np.all(np.isfinite(Ynew)) and np.all(np.isfinite(Xnew))):
        raise BlowUpError(t + prop.dt, variant)
    return SpectralField(Xnew), SpectralField(Ynew)


def _coefficients(cfg) -> Coefficients:
    return cfg if isinstance(cfg, Coefficients) else cfg.coefficients


def step_fast_slow(X: SpectralField, Y: SpectralField, shear: ShearState, cfg: SimConfig | Coefficients,
                   dt: float, noise=None, *, spec: NoiseSpec | None = None,
                   propagator: LinearPropagator | None = None, t: float = 0.0):
    """One step of the full fast-slow system.

    ``noise`` is an RngStream (an increment Psi dW is drawn), a pre-drawn
    increment SpectralField, or None for the noise-free system.
    """
    coeffs = _coefficients(cfg)
    prop = propagator or LinearPropagator.build(shear, coeffs, dt)
    if spec is None and isinstance(cfg, SimConfig):
        spec = cfg.noise_spec()
    return _exp_step(X, Y, X, prop, coeffs, _noise_field(noise, spec, dt), True, t, "fast_slow")


def step_pseudo_linearized(X: SpectralField, Y: SpectralField, shear: ShearState,
                           cfg: SimConfig | Coefficients, dt: float, noise=None, *,
                           spec: NoiseSpec | None = None,
                           propagator: LinearPropagator | None = None, t: float = 0.0):
    """Fast-slow step without the b_neq self-interaction."""
    coeffs = _coefficients(cfg)
    prop = propagator or LinearPropagator.build(shear, coeffs, dt)
    if spec is None and isinstance(cfg, SimConfig):
        spec = cfg.noise_spec()
    return _exp_step(X, Y, X, prop, coeffs, _noise_field(noise, spec, dt), False, t, "pseudo_lin")


@dataclass
class FrozenInputs:
    """Slow inputs snapshotted at a block boundary k delta."""

    shear: ShearState
    X_tilde: SpectralField
    t_block: float


def step_auxiliary(X_hat: SpectralField, Y_hat: SpectralField, frozen: FrozenInputs,
                   cfg: SimConfig | Coefficients, dt: float, noise=None, *,
                   spec: NoiseSpec | None = None,
                   propagator: LinearPropagator | None = None, t: float = 0.0):
    """Auxiliary step: Y_hat sees U and X_tilde frozen at the block start, and
    X_hat is driven by b0(Y_hat)."""
    coeffs = _coefficients(cfg)
    prop = propagator or LinearPropagator.build(frozen.shear, coeffs, dt)
    if spec is None and isinstance(cfg, SimConfig):
        spec = cfg.noise_spec()
    return _exp_step(X_hat, Y_hat, frozen.X_tilde, prop, coeffs, _noise_field(noise, spec, dt),
                     False, t, "auxiliary")


def enstrophy(X: SpectralField, Y: SpectralField) -> float:
    """||omega||_{L2}^2 for omega = X + Y (coefficient norm)."""
    return float(np.sum(np.abs(X.coeffs) ** 2) + np.sum(np.abs(Y.coeffs) ** 2))


def vorticity_profile(f: SpectralField, x, y) -> np.ndarray:
    return evaluate(f, x, y).real
