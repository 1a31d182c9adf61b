"""Hypocoercive energies, dissipations, Sobolev norms, stopping-time monitors
and inequality audits.

Per x-frequency k != 0 the non-zero-mode energy is a Hermitian form
E_k(f) = c_k^H H_k c_k on the sine coefficients, with

    H_k = |k|^{2m} [ diag(1 + c_a nu^{2/3} |k|^{-2/3} (j pi/2)^2)
                     - c_b |k|^{-4/3} nu^{1/3} (K_k + K_k^H) ],
    K_k = ik diag(j pi / 2) G^T,

where G[j, l] = int s_j cos(l theta) dy couples the sine field with its
cosine-type y-derivative in the cross term Re<ik f_k, dy f_k>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .config import SimConfig
from .spectral import (
    DomainError,
    SpectralField,
    frac_dy,
    laplacian_symbol,
    sine_cosine_gram,
    x_wavenumbers,
    y_wavenumbers,
)


@dataclass(frozen=True)
class EnergyConstants:
    """Constants of the hypocoercive energy; c_t must stay 0 without a J_k operator."""

    c_t: float = 0.0
    c_a: float = 0.01
    c_b: float = 0.005
    m: float = 0.75
    j_operator: object = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.c_t != 0 and self.j_operator is None:
            raise DomainError("c_t != 0 requires a J_k implementation")
        if self.c_a < 0 or self.c_b < 0:
            raise DomainError("c_a and c_b must be non-negative")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "EnergyConstants":
        return cls(cfg.c_t, cfg.c_a, cfg.c_b, cfg.m)

    def positivity_margin(self) -> float:
        """1 - 2 c_b / sqrt(c_a), the lower norm-equivalence factor."""
        if self.c_a == 0:
            return 1.0 if self.c_b == 0 else -math.inf
        return 1 - 2 * self.c_b / math.sqrt(self.c_a)


@lru_cache(maxsize=128)
def _energy_forms(nx: int, ny: int, nu: float, c_a: float, c_b: float, m: float) -> np.ndarray:
    eta = y_wavenumbers(ny)
    G = sine_cosine_gram(ny)
    out = np.zeros((2 * nx + 1, ny, ny), dtype=complex)
    for row, k in enumerate(range(-nx, nx + 1)):
        if k == 0:
            continue
        ak = abs(k)
        K = 1j * k * eta[:, None] * G.T
        H = np.diag(1 + c_a * nu ** (2 / 3) * ak ** (-2 / 3) * eta**2).astype(complex)
        H -= c_b * ak ** (-4 / 3) * nu ** (1 / 3) * (K + K.conj().T)
        out[row] = ak ** (2 * m) * H
    out.setflags(write=False)
    return out


def energy_forms(nx: int, ny: int, nu: float, consts: EnergyConstants) -> np.ndarray:
    """Stack of H_k for rows k = -nx..nx (zero matrix on the k = 0 row)."""
    return _energy_forms(nx, ny, float(nu), consts.c_a, consts.c_b, consts.m)


def _consts(cfg_or_consts) -> EnergyConstants:
    if isinstance(cfg_or_consts, SimConfig):
        return EnergyConstants.from_config(cfg_or_consts)
    return cfg_or_consts or EnergyConstants()


def riesz_neq(f: SpectralField, nu: float, consts: EnergyConstants | None = None) -> np.ndarray:
    """Coefficients r with <g, f>_{H_neq} = Re sum conj(g) r."""
    H = energy_forms(f.nx, f.ny, nu, _consts(consts))
    return np.einsum("kij,kj->ki", H, f.coeffs)


def inner_neq(g: SpectralField, f: SpectralField, nu: float, consts: EnergyConstants | None = None) -> float:
    return float(np.real(np.vdot(g.coeffs, riesz_neq(f, nu, consts))))


def energy_neq(f: SpectralField, nu: float, consts: EnergyConstants | None = None) -> float:
    """Hypocoercive energy E_neq(f) over the k != 0 modes of f."""
    if f.basis != "sine":
        raise DomainError("energy_neq expects a sine-basis field")
    return inner_neq(f, f, nu, consts)


def energy_neq_plain(f: SpectralField, nu: float, consts: EnergyConstants | None = None) -> float:
    """The unweighted part sum |k|^{2m}(||f_k||^2 + c_a nu^{2/3}|k|^{-2/3}||dy f_k||^2)."""
    consts = _consts(consts)
    k = np.abs(x_wavenumbers(f.nx))[:, None]
    eta2 = y_wavenumbers(f.ny)[None, :] ** 2
    kk = np.where(k > 0, k, 1.0)
    w = np.where(k > 0, kk ** (2 * consts.m) * (1 + consts.c_a * nu ** (2 / 3) * kk ** (-2 / 3) * eta2), 0.0)
    return float(np.sum(w * np.abs(f.coeffs) ** 2))


def _zero_row(f: SpectralField) -> np.ndarray:
    return f.coeffs[f.nx]


def inner_zero(g: SpectralField, f: SpectralField, nu: float, c_a: float = 0.01) -> float:
    w = 1 + c_a * nu ** (2 / 3) * y_wavenumbers(f.ny) ** 2
    return float(np.real(np.vdot(_zero_row(g), w * _zero_row(f))))


def energy_zero(f: SpectralField, nu: float, c_a: float = 0.01) -> float:
    """E_0(f) = ||f||^2 + c_a nu^{2/3} ||dy f||^2 on the k = 0 modes of f."""
    return inner_zero(f, f, nu, c_a)


def h0_norm(f: SpectralField, nu: float, c_a: float = 0.01) -> float:
    return math.sqrt(energy_zero(f, nu, c_a))


def h0_fractional_norm(f: SpectralField, s: float, nu: float, c_a: float = 0.01) -> float:
    """||f||_{H_0^s} := || |dy|^s f ||_{H_0} (s = +-1/2 in the averaging estimates)."""
    return h0_norm(frac_dy(f.zero_mode(), s), nu, c_a)


def sobolev_norm(f: SpectralField, s: float) -> float:
    """Isotropic H^s norm sqrt(sum (k^2 + (j pi/2)^2)^s |c_{k,j}|^2)."""
    sym = laplacian_symbol(f.nx, f.ny)
    return float(np.sqrt(np.sum(sym**s * np.abs(f.coeffs) ** 2)))


# ---------------------------------------------------------------------------
# dissipation


@lru_cache(maxsize=256)
def _dirichlet_cosine_kernel(k: float, n_cos: int, nodes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    y, w = leggauss(nodes)
    theta = (np.pi / 2) * (y + 1)
    l = np.arange(1, n_cos + 1)
    lam = (l * np.pi / 2) ** 2
    cos = np.cos(np.multiply.outer(theta, l))
    h1 = np.sinh(k * (1 - y)) / np.sinh(2 * k)
    h2 = np.sinh(k * (1 + y)) / np.sinh(2 * k)
    green = (-cos + h1[:, None] + np.multiply.outer(h2, (-1.0) ** l)) / (k**2 + lam)
    for arr in (w, cos, green):
        arr.setflags(write=False)
    return w, cos, green


def _dirichlet_cosine_energy(k: float, a: np.ndarray, nodes: int) -> float:
    """int |g'|^2 + k^2 |g|^2 for g = Delta_k^{-1} h with Dirichlet walls,
    h = sum_l a_l cos(l theta).

    g is known in closed form: particular part -cos(l theta)/(k^2 + lam_l) plus
    the homogeneous correction that cancels its wall values. The integral
    equals -int conj(g) h dy, evaluated by Gauss-Legendre quadrature.
    """
    if not np.any(a):
        return 0.0
    w, cos, green = _dirichlet_cosine_kernel(float(k), len(a), nodes)
    return float(-np.real(np.sum(w * np.conj(green @ a) * (cos @ a))))


@dataclass
class Dissipation:
    """Weighted sums sum_k |k|^{2m} D_{k,.}; ``total_neq`` applies the constants."""

    D_g: float
    D_t: float
    D_a: float
    D_ta: float
    D_b: float
    D_0: float
    total_neq: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def dissipation(f: SpectralField, nu: float, gamma: float = 0.0,
                consts: EnergyConstants | None = None) -> Dissipation:
    consts = _consts(consts)
    nx, ny = f.nx, f.ny
    eta = y_wavenumbers(ny)
    lam = eta**2
    D = dict(D_g=0.0, D_t=0.0, D_a=0.0, D_ta=0.0, D_b=0.0)
    for k in range(-nx, nx + 1):
        if k == 0:
            continue
        c = f.coeffs[k + nx]
        p = np.abs(c) ** 2
        if not np.any(p):
            continue
        ak = abs(k)
        w = ak ** (2 * consts.m)
        sym = k**2 + lam
        D["D_g"] += w * nu**gamma * np.sum(sym * p)
        D["D_t"] += w * nu ** (-1 + gamma) * k**2 * np.sum(p / sym)
        D["D_a"] += w * nu ** (2 / 3 + gamma) * ak ** (-2 / 3) * np.sum(sym * lam * p)
        D["D_ta"] += w * nu ** (-1 / 3 + gamma) * ak ** (-2 / 3) * k**2 * \
            _dirichlet_cosine_energy(ak, eta * c, 2 * ny + 64)
        D["D_b"] += w * nu ** (-2 / 3 + gamma) * ak ** (2 / 3) * np.sum(p)
    p0 = np.abs(f.coeffs[nx]) ** 2
    D0 = float(nu**gamma * np.sum(lam * p0) + nu ** (2 / 3 + gamma) * np.sum(lam**2 * p0))
    total = (D["D_g"] + consts.c_t * D["D_t"] + consts.c_a * D["D_a"]
             + consts.c_t * consts.c_a * D["D_ta"] + consts.c_b * D["D_b"])
    return Dissipation(**{k: float(v) for k, v in D.items()}, D_0=D0, total_neq=float(total))


def norm_equivalence_constant(nx: int, ny: int, nu: float, consts: EnergyConstants | None = None) -> float:
    """Smallest c with c^{-1} P(f) <= E_neq(f) <= c P(f), P the unweighted part."""
    consts = _consts(consts)
    H = energy_forms(nx, ny, nu, consts)
    eta2 = y_wavenumbers(ny) ** 2
    worst = 1.0
    for k in range(1, nx + 1):
        Pk = k ** (2 * consts.m) * (1 + consts.c_a * nu ** (2 / 3) * k ** (-2 / 3) * eta2)
        s = 1 / np.sqrt(Pk)
        ev = np.linalg.eigvalsh(s[:, None] * H[k + nx] * s[None, :])
        worst = max(worst, ev.max(), 1 / ev.min())
    return float(worst)


# ---------------------------------------------------------------------------
# stopping-time monitors


@dataclass
class _Martingale:
    value: float = 0.0
    qv: float = 0.0
    frozen: bool = False


def martingale_increment(dW: SpectralField, Y: SpectralField, psi: np.ndarray, dt: float,
                         nu: float, consts: EnergyConstants) -> tuple[float, float]:
    """(dM, d<M>) for M = int <Psi dW, Y>_{H_neq}; ``dW`` is the increment Psi dW."""
    r = riesz_neq(Y, nu, consts)
    dM = float(np.real(np.vdot(dW.coeffs, r)))
    dQ = float(np.sum(psi**2 * np.abs(r) ** 2) * dt)
    return dM, dQ


@dataclass
class EnergyReport:
    """Per-time records and stopping flags of one path."""

    records: list[dict] = field(default_factory=list)
    flags: dict[str, bool] = field(default_factory=dict)
    first_hit: dict[str, float | None] = field(default_factory=dict)


FLAG_NAMES = ("sigma", "tau_X", "tau_Y", "tau_M", "tau_M_tilde", "tau_M_hat", "tau_block", "tau")


class Monitor:
    """Accumulates martingales and evaluates every stopping criterion for one path."""

    def __init__(self, cfg: SimConfig, psi: np.ndarray, psi_sq: float):
        self.cfg = cfg
        self.consts = EnergyConstants.from_config(cfg)
        self.psi = psi
        self.psi_sq = psi_sq
        self.M = {name: _Martingale() for name in ("M", "M_tilde", "M_hat")}
        self.block = _Martingale()
        self.block_index = 0
        self.report = EnergyReport(flags={n: False for n in FLAG_NAMES},
                                   first_hit={n: None for n in FLAG_NAMES})

    # thresholds -----------------------------------------------------------

    @property
    def tau_y_level(self) -> float:
        return self.cfg.c_star * self.cfg.nu ** (-2 * self.cfg.alpha_prime)

    @property
    def tau_x_level(self) -> float:
        return self.cfg.c_star * self.cfg.nu ** (-2 * self.cfg.beta)

    def martingale_functional(self, m: _Martingale) -> float:
        cfg = self.cfg
        if self.psi_sq == 0:
            return 0.0
        return (cfg.nu ** (-1 / 3 + cfg.gamma / 2) * m.value
                - cfg.delta_star / self.psi_sq * 0.5 * cfg.nu ** (-2 / 3 + cfg.gamma) * m.qv)

    @property
    def martingale_level(self) -> float:
        if self.psi_sq == 0:
            return math.inf
        return self.psi_sq / self.cfg.delta_star * self.cfg.nu ** (-self.cfg.alpha_prime / 2)

    def _raise(self, name: str, t: float) -> None:
        if not self.report.flags[name]:
            self.report.flags[name] = True
            self.report.first_hit[name] = t

    # update ---------------------------------------------------------------

    def check_sigma(self, t: float, shear_h3: float) -> None:
        if shear_h3 >= 2 * self.cfg.c0:
            self._raise("sigma", t)

    def step(self, t: float, snapshot: dict) -> dict:
        """Record diagnostics at time t.

        ``snapshot`` holds ``X``, ``Y`` and optionally ``Y_tilde``, ``Y_hat``,
        ``shear_h3``. Martingale increments are added separately by
        ``accumulate``.
        """
        cfg, consts = self.cfg, self.consts
        Y, X = snapshot["Y"], snapshot["X"]
        E_neq = energy_neq(Y, cfg.nu, consts)
        E_0 = energy_zero(X, cfg.nu, cfg.c_a)
        diss = dissipation(Y, cfg.nu, cfg.gamma, consts)
        D0 = dissipation(X, cfg.nu, cfg.gamma, consts).D_0
        if "shear_h3" in snapshot:
            self.check_sigma(t, snapshot["shear_h3"])
        if E_neq >= self.tau_y_level:
            self._raise("tau_Y", t)
            self.M["M"].frozen = True
        if E_0 >= self.tau_x_level:
            self._raise("tau_X", t)
        for name, m in self.M.items():
            if self.martingale_functional(m) >= self.martingale_level:
                self._raise("tau_" + name, t)
        if self.martingale_functional(self.block) >= self.martingale_level:
            self._raise("tau_block", t)
        if any(self.report.flags[n] for n in ("tau_M", "tau_M_tilde", "tau_M_hat", "tau_block")):
            self._raise("tau", t)

        rec = {"t": t, "E_neq": E_neq, "E_0": E_0, "D_0": D0, "M_t": self.M["M"].value,
               "QV_t": self.M["M"].qv, "flags": [n for n in FLAG_NAMES if self.report.flags[n]]}
        rec.update({k: v for k, v in diss.as_dict().items() if k != "D_0"})
        self.report.records.append(rec)
        return rec

    def accumulate(self, snapshot: dict) -> None:
        """Add the martingale increments over [t, t + dt] (uses ``dW`` and the states at t)."""
        dW = snapshot.get("dW")
        if dW is None:
            return
        dt = snapshot["dt"]
        block = int(math.floor(snapshot.get("t_next", 0.0) / self.cfg.delta + 1e-9)) if "t_next" in snapshot else None
        for name, key in (("M", "Y"), ("M_tilde", "Y_tilde"), ("M_hat", "Y_hat")):
            m = self.M[name]
            if m.frozen or snapshot.get(key) is None:
                continue
            dM, dQ = martingale_increment(dW, snapshot[key], self.psi, dt, self.cfg.nu, self.consts)
            m.value += dM
            m.qv += dQ
            if name == "M_tilde":
                self.block.value += dM
                self.block.qv += dQ
        if block is not None and block != self.block_index:
            self.block_index = block
            self.block = _Martingale()


def monitor_step(report_or_monitor: Monitor, snapshot: dict, cfg: SimConfig | None = None) -> EnergyReport:
    """Functional wrapper: advance ``monitor`` with ``snapshot`` and return its report."""
    monitor = report_or_monitor
    monitor.step(snapshot["t"], snapshot)
    monitor.accumulate(snapshot)
    return monitor.report


def survival_lower_bound(cfg: SimConfig) -> float:
    """1 - (T/delta + 6) exp(-nu^{-alpha'/2})."""
    return 1 - (cfg.T / cfg.delta + 6) * math.exp(-cfg.nu ** (-cfg.alpha_prime / 2))


# ---------------------------------------------------------------------------
# inequality audit


def _ratio(num: float, den: float) -> float | None:
    if den == 0:
        return None if num == 0 else math.inf
    return abs(num) / den


def inequality_ratios(X: SpectralField, Y: SpectralField, cfg: SimConfig) -> dict[str, float | None]:
    """LHS / RHS-structure for the nonlinear and B0 bounds at one state."""
    from .nonlinear import all_terms, nonlin_B0

    consts = EnergyConstants.from_config(cfg)
    nu, g = cfg.nu, cfg.gamma
    out: dict[str, float | None] = {}
    if not np.any(Y.coeffs):
        return {"b0": None, "bm": None, "bneq": None, "B0_appendix": None, "B0_interp": None}
    terms = all_terms(X, Y)
    d = dissipation(Y, nu, g, consts)
    E_neq = energy_neq(Y, nu, consts)
    E0X = energy_zero(X, nu, cfg.c_a)
    B0 = nonlin_B0(Y)
    E0B = energy_zero(B0, nu, cfg.c_a)
    D0X = dissipation(X, nu, g, consts).D_0
    out["b0"] = _ratio(inner_zero(terms.b0, X, nu, cfg.c_a),
                       nu ** (-g / 2) * math.sqrt(E0B) * math.sqrt(D0X))
    out["bm"] = _ratio(inner_neq(terms.bm, Y, nu, consts),
                       nu ** (-g + 0.5) * math.sqrt(E0X) * d.total_neq)
    out["bneq"] = _ratio(inner_neq(terms.bneq, Y, nu, consts),
                         nu ** (-g + 0.5) * math.sqrt(E_neq) * d.total_neq)
    out["B0_appendix"] = _ratio(math.sqrt(E0B), math.sqrt(E_neq) * (
        nu ** (0.5 - g / 2) * math.sqrt(d.D_t) + nu ** (2 / 3 - g / 2) * math.sqrt(d.D_b)))
    out["B0_interp"] = _ratio(math.sqrt(E0B), nu ** (0.5 * (1 - g / 2)) * math.sqrt(E_neq * d.total_neq))
    return out


def fitted_decay_rate(times, energies, cfg: SimConfig, dissipations, transient: float = 0.1) -> dict:
    """Fit delta_* from d/dt E + 8 delta_* (D + nu^{2/3-gamma} E) <= 0 on a noise-free run."""
    t = np.asarray(times, dtype=float)
    E = np.asarray(energies, dtype=float)
    D = np.asarray(dissipations, dtype=float)
    dE = np.gradient(E, t)
    keep = t >= t[0] + transient * (t[-1] - t[0])
    denom = 8 * (D + cfg.nu ** (2 / 3 - cfg.gamma) * E)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = -dE / denom
    ratio = ratio[keep & (denom > 0)]
    monotone = bool(np.all(np.diff(E[keep]) <= 1e-14 * max(E[0], 1e-300)))
    return {"delta_star": float(np.min(ratio)) if ratio.size else None,
            "monotone_after_transient": monotone}


def inequality_audit(records, cfg: SimConfig, growth_factor: float = 2.0) -> dict:
    """Measure every audited inequality over ``records``.

    Each record is a dict with ``X`` and ``Y`` fields (and optional ``ny`` /
    resolution tag). Ratios of the form 0/0 are skipped. An inequality FAILS
    only when its maximal ratio keeps growing by more than ``growth_factor``
    at every refinement of the resolution (no saturation) or is non-finite.
    """
    by_res: dict[int, dict[str, list[float]]] = {}
    energy_sup: dict[int, float] = {}
    for rec in records:
        res = int(rec.get("ny", rec["Y"].ny))
        ratios = inequality_ratios(rec["X"], rec["Y"], cfg)
        bucket = by_res.setdefault(res, {})
        for name, val in ratios.items():
            if val is not None:
                bucket.setdefault(name, []).append(val)
        energy_sup[res] = max(energy_sup.get(res, 0.0),
                              energy_neq(rec["Y"], cfg.nu, EnergyConstants.from_config(cfg)))
    report: dict = {"inequalities": {}, "passed": True}
    names = sorted({n for b in by_res.values() for n in b})
    resolutions = sorted(by_res)
    for name in names:
        maxima = [max(by_res[r][name]) for r in resolutions if name in by_res[r]]
        finite = all(math.isfinite(v) for v in maxima)
        growing = len(maxima) >= 3 and all(b > growth_factor * a for a, b in zip(maxima, maxima[1:]))
        ok = finite and not growing
        report["inequalities"][name] = {
            "fitted_constant": max(maxima) if maxima else None,
            "max_ratio_by_resolution": dict(zip(map(str, resolutions), maxima)),
            "samples": sum(len(by_res[r].get(name, [])) for r in resolutions),
            "passed": ok,
        }
        report["passed"] &= ok
    report["sup_energy_neq"] = {str(r): v for r, v in energy_sup.items()}
    return report
