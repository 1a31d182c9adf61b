"""Simulation parameters, derived exponents and the coefficient sets of each system."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .noise import NoiseSpec
from .spectral import ConfigurationError


class ValidationError(ConfigurationError):
    """Configuration rejected; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class Coefficients:
    """Prefactors of every term in the (possibly rescaled) vorticity system.

    For the rescaled fast-slow system these are powers of nu; with
    ``Coefficients.unscaled`` every nonlinear prefactor is 1 and the system is
    the original perturbation equation for omega = X + Y.
    """

    diffusion: float
    advection: float
    b0: float
    bm: float
    bneq: float
    noise: float
    shear_diffusion: float
    shear_noise: float

    @classmethod
    def unscaled(cls, nu: float, noise: float = 0.0) -> "Coefficients":
        return cls(diffusion=nu, advection=1.0, b0=1.0, bm=1.0, bneq=1.0, noise=noise,
                   shear_diffusion=nu, shear_noise=nu ** (5 / 6))


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation at a single viscosity.

    ``beta`` defaults to the value fixed by the scaling constraint
    2 alpha - beta + gamma/2 = 1/3, ``delta`` to nu^{q*} and ``c_star`` to
    4 delta_star^2 / C_star^2.
    """

    nu: float = 1e-3
    alpha: float = 0.25
    beta: float | None = None
    gamma: float = 0.0
    a: float = 0.5
    theta: float = 0.5
    delta: float | None = None
    dt: float = 1e-3
    T: float = 1.0
    nx: int = 8
    ny: int = 32
    m: float = 0.75
    c_t: float = 0.0
    c_a: float = 0.01
    c_b: float = 0.005
    c0: float = 1.0
    delta_star: float = 0.5
    C_star: float = 1.0
    c_star: float | None = None
    amp_psi: float = 1.0
    amp_phi: float = 0.5
    bneq_scale: float = 1.0
    cfl: float = 0.5
    enforce_cfl: bool = False
    macro_factor: int = 10
    snapshot_stride: int = 10
    seed: int = 0
    continue_after_stop: bool = True
    auxiliary: bool = True

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 2 * self.alpha + self.gamma / 2 - 1 / 3)
        if self.delta is None:
            object.__setattr__(self, "delta", self.nu ** self.q_star)
        if self.c_star is None:
            object.__setattr__(self, "c_star", 4 * self.delta_star**2 / self.C_star**2)

    def replace(self, **changes) -> "SimConfig":
        explicit = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        # re-derive dependent defaults unless they were set explicitly
        for key in ("beta", "delta", "c_star"):
            if key not in changes and _was_derived(self, key):
                explicit[key] = None
        explicit.update(changes)
        return SimConfig(**explicit)

    # -- derived quantities -------------------------------------------------

    @property
    def alpha_prime(self) -> float:
        return min(self.theta / 6 * self.a / (1 + 2 * self.a), self.beta, self.alpha) / 36

    @property
    def q_star(self) -> float:
        return (2 / 3) * (1 + self.a) / (1 + 2 * self.a)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def block_steps(self) -> int:
        """Integrator steps per Khasminskii block (delta rounded to the dt grid)."""
        return max(1, int(round(self.delta / self.dt)))

    @property
    def n_blocks(self) -> int:
        return int(math.floor(self.T / self.delta))

    def block_start(self, t: float) -> float:
        return math.floor(t / self.delta + 1e-12) * self.delta

    @property
    def coefficients(self) -> Coefficients:
        nu, g = self.nu, self.gamma
        return Coefficients(
            diffusion=nu**g,
            advection=nu ** (g - 1),
            b0=nu ** (g / 2 - 1 / 6),
            bm=nu ** (self.beta + g - 0.5),
            bneq=self.bneq_scale * nu ** (self.alpha + g - 0.5),
            noise=nu ** (-1 / 3 + g / 2),
            shear_diffusion=nu**g,
            shear_noise=nu ** (1 / 3 + g / 2),
        )

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec.default(self.nx, self.ny, nu=self.nu, m=self.m,
                                 amp_psi=self.amp_psi, amp_phi=self.amp_phi)

    # -- validation ---------------------------------------------------------

    def problems(self) -> list[str]:
        out = []
        if not self.nu > 0:
            out.append(f"nu: must be positive (got {self.nu})")
        if abs(2 * self.alpha - self.beta + self.gamma / 2 - 1 / 3) > 1e-12:
            out.append("alpha/beta/gamma: scaling constraint 2 alpha - beta + gamma/2 = 1/3 violated "
                       f"(residual {2 * self.alpha - self.beta + self.gamma / 2 - 1 / 3:.3e})")
        if not 0 <= self.gamma < 1 / 3:
            out.append(f"gamma: must lie in [0, 1/3) (got {self.gamma})")
        if not self.alpha > 1 / 12:
            out.append(f"alpha: must exceed 1/12 (got {self.alpha})")
        if not self.beta > 0:
            out.append(f"beta: must be positive (got {self.beta})")
        if not 0 < self.a < 1:
            out.append(f"a: must lie in (0, 1) (got {self.a})")
        if not 0 < self.theta <= 1:
            out.append(f"theta: must lie in (0, 1] (got {self.theta})")
        if not 2 / 3 < self.m < 1:
            out.append(f"m: must lie in (2/3, 1) (got {self.m})")
        if not self.dt > 0:
            out.append(f"dt: must be positive (got {self.dt})")
        if not self.T > 0:
            out.append(f"T: must be positive (got {self.T})")
        if self.nx < 1 or self.ny < 1:
            out.append(f"nx/ny: must be at least 1 (got {self.nx}, {self.ny})")
        if self.c_t != 0:
            out.append("c_t: must be 0 (the J_k operator is not implemented here)")
        if not (self.c_a > 0 and self.c_b > 0):
            out.append(f"c_a/c_b: must be positive (got {self.c_a}, {self.c_b})")
        elif 2 * self.c_b / math.sqrt(self.c_a) >= 1:
            out.append(f"c_b: positivity guard 1 - 2 c_b / sqrt(c_a) > 0 fails "
                       f"({1 - 2 * self.c_b / math.sqrt(self.c_a):.3f})")
        for key in ("c0", "delta_star", "C_star", "c_star"):
            if not getattr(self, key) > 0:
                out.append(f"{key}: must be positive (got {getattr(self, key)})")
        for key in ("amp_psi", "amp_phi", "bneq_scale"):
            if getattr(self, key) < 0:
                out.append(f"{key}: must be non-negative (got {getattr(self, key)})")
        if self.macro_factor < 1 or self.snapshot_stride < 1:
            out.append("macro_factor/snapshot_stride: must be at least 1")
        if self.nu > 0 and self.auxiliary:
            lo, hi = self.nu ** (2 / 3 - self.gamma), self.nu ** (1 / 3 - self.gamma)
            if not lo < self.delta < hi:
                out.append(f"delta: must satisfy nu^(2/3-gamma) < delta < nu^(1/3-gamma), "
                           f"i.e. {lo:.4g} < delta < {hi:.4g} (got {self.delta:.4g})")
            if self.delta < self.dt:
                out.append(f"delta: must be at least dt ({self.dt})")
        if self.enforce_cfl and self.dt > self.stability_limit():
            out.append(f"dt: exceeds the advective limit {self.stability_limit():.3e}")
        return out

    def validate(self) -> "SimConfig":
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self

    def stability_limit(self, max_abs_u: float = 1.0) -> float:
        """Advective CFL bound C_cfl nu^{1-gamma} / max|U|."""
        return self.cfl * self.nu ** (1 - self.gamma) / max_abs_u

    def violates_time_horizon(self) -> bool:
        """Whether nu^{1/3} T exceeds 1 (recorded, never enforced)."""
        return self.nu ** (1 / 3) * self.T > 1

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def _was_derived(cfg: SimConfig, key: str) -> bool:
    probe = dataclasses.replace(cfg, **{key: None})
    return math.isclose(getattr(probe, key), getattr(cfg, key), rel_tol=0, abs_tol=0) or \
        getattr(probe, key) == getattr(cfg, key)


DEFAULT_NUS = (1e-2, 3e-3, 1e-3)
