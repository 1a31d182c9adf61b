"""The frozen fast process, its Gaussian invariant measure and the averaged drift.

With the background shear U and the slow field X held fixed, the fast variable
obeys (in fast time s = t / nu^{2/3 - gamma})

    dZ = nu^{2/3} Delta Z - nu^{-1/3} U dx Z + nu^{-1/3} U'' dx Delta^{-1} Z
         - nu^{beta + 1/6} b_m(X, Z) + Psi dW,

a linear SDE that decouples over the x-frequency k. Each block is a complex
Ornstein-Uhlenbeck process dZ_k = A_k Z_k ds + B_k dW_k whose stationary
covariance solves A_k Q_k + Q_k A_k^H + B_k B_k^H = 0.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .checkpoint import covariance_from_bytes, covariance_to_bytes
from .config import Coefficients, SimConfig
from .dynamics import ShearState, linear_operator
from .noise import NoiseSpec, RngStream
from .nonlinear import bm_matrix, nonlin_B0, nonlin_b0
from .spectral import (
    ConfigurationError,
    DomainError,
    SpectralField,
    cosine_to_sine_matrix,
    require_zero_mode,
    y_wavenumbers,
)

MAX_DENSE_NY = 256


class FrozenOperatorUnstable(DomainError):
    """Some block A_k has a spectral abscissa >= 0."""

    def __init__(self, k: int, abscissa: float):
        self.k = k
        self.abscissa = abscissa
        super().__init__(f"frozen operator block k={k} is not stable (spectral abscissa {abscissa:.4e} >= 0)")


@dataclass
class FrozenOperator:
    """Dense blocks A_k, B_k for k = 1..nx (negative k are complex conjugates).

    Parameters
    ----------
    A : ndarray, shape (nx, ny, ny)
        Fast-time drift matrices on the sine coefficients of Z_k.
    B : ndarray, shape (nx, ny)
        Diagonal noise amplitudes psi_{k,j}; a complex increment of the
        coefficient has E|dW|^2 = ds.
    nu : float
        Viscosity the operator was assembled at.
    """

    A: np.ndarray
    B: np.ndarray
    nu: float

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def ny(self) -> int:
        return self.A.shape[1]

    def abscissae(self) -> np.ndarray:
        """max Re(eig A_k) for each k."""
        return np.array([np.linalg.eigvals(a).real.max() for a in self.A])

    def check_stable(self) -> None:
        ab = self.abscissae()
        worst = int(np.argmax(ab))
        if ab[worst] >= 0:
            raise FrozenOperatorUnstable(worst + 1, float(ab[worst]))

    def decay_rate(self) -> float:
        """Asymptotic decay rate of ||Z_s||^2 for the noise-free flow: -2 max abscissa."""
        return float(-2 * self.abscissae().max())

    def apply(self, Z: SpectralField) -> SpectralField:
        """Drift A Z on the full field (rows k < 0 by conjugate symmetry)."""
        nx = Z.nx
        out = np.zeros_like(Z.coeffs)
        out[nx + 1:] = np.einsum("kij,kj->ki", self.A, Z.coeffs[nx + 1:])
        out[:nx] = np.einsum("kij,kj->ki", self.A.conj(), Z.coeffs[:nx][::-1])[::-1]
        return SpectralField(out)


def frozen_coefficients(cfg: SimConfig) -> Coefficients:
    """Prefactors of the frozen system in fast time."""
    nu = cfg.nu
    return Coefficients(diffusion=nu ** (2 / 3), advection=nu ** (-1 / 3), b0=0.0,
                        bm=nu ** (cfg.beta + 1 / 6), bneq=0.0, noise=1.0,
                        shear_diffusion=0.0, shear_noise=0.0)


def assemble_frozen(shear: ShearState, X: SpectralField | None, spec: NoiseSpec,
                    cfg: SimConfig) -> FrozenOperator:
    """Dense per-k matrices of the frozen fast operator."""
    ny = shear.ny
    if ny > MAX_DENSE_NY:
        raise ConfigurationError(f"dense frozen assembly limited to ny <= {MAX_DENSE_NY} (got {ny})")
    coeffs = frozen_coefficients(cfg)
    A = linear_operator(shear, coeffs)
    if X is not None:
        require_zero_mode(X, "X")
        if np.any(X.coeffs):
            for i in range(A.shape[0]):
                A[i] -= coeffs.bm * bm_matrix(X, i + 1)
    nx = shear.nx
    return FrozenOperator(A, spec.psi[nx + 1:].astype(float).copy(), cfg.nu)


# ---------------------------------------------------------------------------
# stationary Gaussian


@dataclass(frozen=True)
class StationaryGaussian:
    """Per-k stationary covariances Q_k = E[Z_k Z_k^H] for k = 1..nx."""

    Q: np.ndarray
    provenance: str = "lyapunov"
    residual: float = 0.0

    @property
    def nx(self) -> int:
        return self.Q.shape[0]

    @property
    def ny(self) -> int:
        return self.Q.shape[1]

    def mean_energy_terms(self, H: np.ndarray) -> float:
        """E[c^H H c] summed over k and -k, for a stack of forms H_k (k = 1..nx)."""
        return float(2 * np.real(np.einsum("kij,kji->", H, self.Q)))

    def to_bytes(self) -> bytes:
        return covariance_to_bytes(self.Q)

    @classmethod
    def from_bytes(cls, blob: bytes, provenance: str = "lyapunov") -> "StationaryGaussian":
        return cls(covariance_from_bytes(blob), provenance)


def lyapunov_residual(A: np.ndarray, Q: np.ndarray, BB: np.ndarray) -> float:
    """||A Q + Q A^H + BB|| / ||BB|| (Frobenius); 0 if BB = 0 and Q = 0."""
    R = A @ Q + Q @ A.conj().T + BB
    nb = np.linalg.norm(BB)
    if nb == 0:
        return float(np.linalg.norm(R))
    return float(np.linalg.norm(R) / nb)


def lyapunov_covariance(op: FrozenOperator, tol: float = 1e-10) -> StationaryGaussian:
    """Stationary covariance from per-k continuous Lyapunov solves."""
    op.check_stable()
    Q = np.zeros_like(op.A)
    worst = 0.0
    for i, (A, b) in enumerate(zip(op.A, op.B)):
        BB = np.diag(b.astype(complex) ** 2)
        if not np.any(b):
            continue
        q = sla.solve_continuous_lyapunov(A, -BB)
        q = 0.5 * (q + q.conj().T)
        worst = max(worst, lyapunov_residual(A, q, BB))
        Q[i] = q
    if worst > tol:
        raise FloatingPointError(f"Lyapunov residual {worst:.3e} exceeds {tol:.1e}")
    return StationaryGaussian(Q, "lyapunov", worst)


def empirical_covariance(samples: np.ndarray) -> StationaryGaussian:
    """Covariance blocks from samples of shape (n, 2 nx + 1, ny) (positive k rows used)."""
    nx = (samples.shape[1] - 1) // 2
    pos = samples[:, nx + 1:, :]
    Q = np.einsum("nki,nkj->kij", pos, pos.conj()) / samples.shape[0]
    return StationaryGaussian(Q, "empirical")


def _sqrt_factor(q: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(q)
    return V * np.sqrt(np.clip(w, 0, None))[None, :]


def sample_stationary(g: StationaryGaussian, rng: RngStream, n: int | None = None):
    """Draw from the stationary law.

    Returns a SpectralField when ``n`` is None, otherwise an array of shape
    (n, 2 nx + 1, ny) of coefficient samples.
    """
    nx, ny = g.nx, g.ny
    count = 1 if n is None else n
    z = rng.normal((2, count, nx, ny))
    xi = (z[0] + 1j * z[1]) / np.sqrt(2)
    out = np.zeros((count, 2 * nx + 1, ny), dtype=complex)
    for i in range(nx):
        out[:, nx + 1 + i] = xi[:, i] @ _sqrt_factor(g.Q[i]).T
    out[:, :nx] = np.conj(out[:, nx + 1:][:, ::-1])
    return SpectralField(out[0]) if n is None else out


@dataclass
class DiscreteFrozenStep:
    """Exact one-step transition Z' = F Z + eta, eta ~ CN(0, Qd), per k."""

    h: float
    F: np.ndarray
    root: np.ndarray

    @classmethod
    def build(cls, op: FrozenOperator, h: float) -> "DiscreteFrozenStep":
        nx, ny = op.nx, op.ny
        F = np.empty_like(op.A)
        root = np.empty_like(op.A)
        for i, (A, b) in enumerate(zip(op.A, op.B)):
            # Van Loan: expm([[-A, BB], [0, A^H]] h) = [[., G12], [0, G22]],
            # exp(A h) = G22^H and Qd = exp(A h) G12.
            M = np.zeros((2 * ny, 2 * ny), dtype=complex)
            M[:ny, :ny] = -A
            M[:ny, ny:] = np.diag(b.astype(complex) ** 2)
            M[ny:, ny:] = A.conj().T
            E = sla.expm(M * h)
            Fi = E[ny:, ny:].conj().T
            Qd = Fi @ E[:ny, ny:]
            F[i] = Fi
            root[i] = _sqrt_factor(0.5 * (Qd + Qd.conj().T))
        return cls(h, F, root)

    def advance(self, Z: np.ndarray, rng: RngStream | None) -> np.ndarray:
        """Advance positive-k rows ``Z`` of shape (..., nx, ny)."""
        out = np.einsum("kij,...kj->...ki", self.F, Z)
        if rng is not None:
            z = rng.normal((2,) + Z.shape)
            xi = (z[0] + 1j * z[1]) / np.sqrt(2)
            out += np.einsum("kij,...kj->...ki", self.root, xi)
        return out


def _full_rows(pos: np.ndarray) -> np.ndarray:
    nx = pos.shape[-2]
    shape = pos.shape[:-2] + (2 * nx + 1, pos.shape[-1])
    out = np.zeros(shape, dtype=complex)
    out[..., nx + 1:, :] = pos
    out[..., :nx, :] = np.conj(pos[..., ::-1, :])
    return out


def simulate_frozen(op: FrozenOperator, Y0: SpectralField, t: float, rng: RngStream | None,
                    h: float | None = None, record_every: float | None = None):
    """Evolve the frozen process exactly (matrix exponential + exact Gaussian
    increments) for fast time ``t``.

    Returns the final field, or ``(times, fields)`` when ``record_every`` is set.
    """
    h = t if h is None else h
    n = max(1, int(round(t / h)))
    step = DiscreteFrozenStep.build(op, t / n)
    nx = op.nx
    Z = Y0.coeffs[nx + 1:].copy()
    stride = None if record_every is None else max(1, int(round(record_every / step.h)))
    times, frames = [], []
    for i in range(n):
        Z = step.advance(Z, rng)
        if stride is not None and (i + 1) % stride == 0:
            times.append((i + 1) * step.h)
            frames.append(SpectralField(_full_rows(Z)))
    if stride is not None:
        return np.array(times), frames
    return SpectralField(_full_rows(Z))


def simulate_frozen_ensemble(op: FrozenOperator, n_paths: int, burn_in: float, duration: float,
                             h: float, rng: RngStream) -> np.ndarray:
    """Stationary samples from ``n_paths`` paths started at 0: after ``burn_in``
    every step over ``duration`` is recorded. Returns (n_samples, 2 nx + 1, ny)."""
    step = DiscreteFrozenStep.build(op, h)
    Z = np.zeros((n_paths, op.nx, op.ny), dtype=complex)
    for _ in range(int(math.ceil(burn_in / h))):
        Z = step.advance(Z, rng)
    out = []
    for _ in range(max(1, int(round(duration / h)))):
        Z = step.advance(Z, rng)
        out.append(Z.copy())
    return _full_rows(np.concatenate(out, axis=0))


def measured_decay_rate(op: FrozenOperator, t_max: float | None = None, n_points: int = 40,
                        seed: int = 0) -> float:
    """Fitted exponential rate of ||exp(A s) Z0||^2 for a random Z0 (noise off).

    The fit uses the second half of [0, t_max] so the transient is excluded;
    t_max defaults to 20 / (decay rate from the abscissa).
    """
    rate = op.decay_rate()
    if t_max is None:
        t_max = 20 / rate
    g = np.random.default_rng(seed)
    Z0 = g.standard_normal((op.nx, op.ny)) + 1j * g.standard_normal((op.nx, op.ny))
    ts = np.linspace(t_max / 2, t_max, n_points)
    logs = []
    for s in ts:
        Zs = np.einsum("kij,kj->ki", np.stack([sla.expm(a * s) for a in op.A]), Z0)
        logs.append(math.log(np.sum(np.abs(Zs) ** 2)))
    slope = np.polyfit(ts, logs, 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# averaged drift


@dataclass
class Bbar0Estimate:
    """Averaged drift b0_bar (zero-mode sine field) with its uncertainty."""

    bbar0: SpectralField
    stderr: np.ndarray
    nsamples: int
    method: str
    Bbar0: SpectralField | None = None

    def to_json(self) -> str:
        c = self.bbar0.coeffs[self.bbar0.nx].real
        return json.dumps({"coeffs": c.tolist(), "stderr": np.asarray(self.stderr).tolist(),
                           "nsamples": self.nsamples, "method": self.method}, indent=2)

    @classmethod
    def from_json(cls, text: str, nx: int) -> "Bbar0Estimate":
        d = json.loads(text)
        f = SpectralField.zeros(nx, len(d["coeffs"]))
        f.coeffs[nx] = d["coeffs"]
        return cls(f, np.asarray(d["stderr"]), d["nsamples"], d["method"])


def _jackknife_mean(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and delete-one jackknife standard error along axis 0."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n < 2:
        return mean, np.full(mean.shape, np.inf)
    leave_one = (n * mean[None] - values) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((leave_one - mean[None]) ** 2, axis=0))
    return mean, se


def exact_Bbar0_cosine(g: StationaryGaussian) -> np.ndarray:
    """Cosine coefficients a_0..a_{2ny} of E[B0(Y)] under the Gaussian law.

    E[B0](y) = sum_{k>0} 2k sum_{l,l'} Im Q_k[l,l'] / (k^2 + lam_l) s_l(y) s_l'(y)
    and s_l s_l' = (cos((l-l') theta) - cos((l+l') theta)) / 2.
    """
    nx, ny = g.nx, g.ny
    lam = y_wavenumbers(ny) ** 2
    C = np.zeros((ny, ny))
    for i in range(nx):
        k = i + 1
        C += 2 * k * np.imag(g.Q[i]) / (k**2 + lam)[:, None]
    a = np.zeros(2 * ny + 1)
    l = np.arange(1, ny + 1)
    diff = np.abs(l[:, None] - l[None, :])
    summ = l[:, None] + l[None, :]
    np.add.at(a, diff.ravel(), 0.5 * C.ravel())
    np.add.at(a, summ.ravel(), -0.5 * C.ravel())
    return a


def exact_bbar0(g: StationaryGaussian) -> tuple[SpectralField, SpectralField]:
    """(b0_bar, B0_bar) computed in closed form from the covariance blocks."""
    nx, ny = g.nx, g.ny
    a = exact_Bbar0_cosine(g)
    b = SpectralField.zeros(nx, ny)
    b.coeffs[nx] = y_wavenumbers(ny) * a[1:ny + 1]
    B = SpectralField.zeros(nx, ny)
    B.coeffs[nx] = cosine_to_sine_matrix(len(a) - 1, ny) @ a
    return b, B


def _b0_samples(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nx = (samples.shape[1] - 1) // 2
    b = np.empty((samples.shape[0], samples.shape[2]))
    B = np.empty_like(b)
    for i, s in enumerate(samples):
        Y = SpectralField(s)
        b[i] = nonlin_b0(Y).coeffs[nx].real
        B[i] = nonlin_B0(Y).coeffs[nx].real
    return b, B


def estimate_bbar0(shear: ShearState, X: SpectralField | None, spec: NoiseSpec, cfg: SimConfig,
                   rng: RngStream | None = None, nsamples: int = 1000, method: str = "lyapunov",
                   *, burn_in: float | None = None, h: float | None = None) -> Bbar0Estimate:
    """Average of b0 over the invariant measure of the frozen process.

    Parameters
    ----------
    method : {"lyapunov", "empirical", "exact"}
        ``lyapunov`` samples the Gaussian with the Lyapunov covariance,
        ``empirical`` time-averages one long frozen trajectory (batch-means
        jackknife error), ``exact`` evaluates the Gaussian expectation of the
        quadratic form in closed form (zero standard error).
    """
    nx, ny = shear.nx, shear.ny
    if not np.any(spec.psi):
        z = SpectralField.zeros(nx, ny)
        return Bbar0Estimate(z, np.zeros(ny), 0, method, SpectralField.zeros(nx, ny))
    op = assemble_frozen(shear, X, spec, cfg)
    if method == "exact":
        g = lyapunov_covariance(op)
        b, B = exact_bbar0(g)
        return Bbar0Estimate(b, np.zeros(ny), 0, method, B)
    if rng is None:
        raise ValueError(f"method {method!r} needs an RngStream")
    if method == "lyapunov":
        g = lyapunov_covariance(op)
        samples = sample_stationary(g, rng, nsamples)
        b, B = _b0_samples(samples)
        mean, se = _jackknife_mean(b)
    elif method == "empirical":
        op.check_stable()
        rate = op.decay_rate()
        burn = 10 / rate if burn_in is None else burn_in
        h = 1 / rate if h is None else h
        # one long path; consecutive samples 1/rate apart, batch means over 20 batches
        traj = simulate_frozen_ensemble(op, 1, burn, nsamples * h, h, rng)
        b, B = _b0_samples(traj)
        n_batch = min(20, len(b))
        usable = len(b) // n_batch * n_batch
        batches = b[:usable].reshape(n_batch, -1, ny).mean(axis=1)
        mean, se = _jackknife_mean(batches)
        mean = b.mean(axis=0)
    else:
        raise ValueError(f"unknown method {method!r}")
    bf = SpectralField.zeros(nx, ny)
    bf.coeffs[nx] = mean
    Bf = SpectralField.zeros(nx, ny)
    Bf.coeffs[nx] = B.mean(axis=0)
    return Bbar0Estimate(bf, se, int(len(b)), method, Bf)


def field_hash(*fields: SpectralField | ShearState | None, extra: str = "") -> str:
    """Stable hex digest identifying a set of inputs."""
    h = hashlib.sha256()
    for f in fields:
        if f is None:
            h.update(b"none")
        elif isinstance(f, ShearState):
            h.update(f.key())
        else:
            h.update(np.ascontiguousarray(f.coeffs).tobytes())
    h.update(extra.encode())
    return h.hexdigest()


@dataclass
class Bbar0Cache:
    """In-memory cache of b0_bar evaluations, persistable as JSON."""

    store: dict[str, list[float]] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    def get(self, key: str):
        v = self.store.get(key)
        if v is None:
            self.misses += 1
        else:
            self.hits += 1
        return v

    def put(self, key: str, coeffs: np.ndarray) -> None:
        self.store[key] = [float(c) for c in coeffs]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.store, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Bbar0Cache":
        with open(path) as fh:
            return cls(json.load(fh))
