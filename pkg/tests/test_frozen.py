import numpy as np
import pytest
from scipy.stats import kurtosis

from couette_avg.config import SimConfig
from couette_avg.dynamics import ShearState
from couette_avg.energy import EnergyConstants, energy_forms, energy_neq
from couette_avg.frozen import (
    Bbar0Cache,
    Bbar0Estimate,
    FrozenOperator,
    FrozenOperatorUnstable,
    StationaryGaussian,
    assemble_frozen,
    empirical_covariance,
    estimate_bbar0,
    field_hash,
    lyapunov_covariance,
    measured_decay_rate,
    sample_stationary,
    simulate_frozen,
)
from couette_avg.noise import NoiseSpec, RngStream, trace_norms
from couette_avg.spectral import ConfigurationError, SpectralField, laplacian
from oracles import DenseGrid, bm_oracle, lyapunov_quadrature, random_field


def couette_matrix_oracle(nu, k, ny):
    dense = DenseGrid(0, ny)
    s = np.sin(np.multiply.outer(dense.theta, np.arange(1, ny + 1)))
    M_y = (dense.wy * dense.y * s.T) @ s
    lam = k**2 + (np.pi * np.arange(1, ny + 1) / 2) ** 2
    return -nu ** (2 / 3) * np.diag(lam) - nu ** (-1 / 3) * 1j * k * M_y


def operator_oracle(Z, X, cfg):
    """nu^{2/3} Delta Z - nu^{-1/3} y dx Z - nu^{beta+1/6} b_m(X, Z) by dense quadrature."""
    dense = DenseGrid(Z.nx, Z.ny)
    nu = cfg.nu
    dxZ = dense.values(SpectralField(1j * np.arange(-Z.nx, Z.nx + 1)[:, None] * Z.coeffs))
    out = nu ** (2 / 3) * laplacian(Z).coeffs - nu ** (-1 / 3) * dense.project(dense.Y * dxZ)
    if X is not None:
        out = out - nu ** (cfg.beta + 1 / 6) * bm_oracle(X, Z, dense)
    out[Z.nx] = 0
    return out


class TestAssembly:
    """Dense per-k blocks of the frozen drift."""

    def test_couette_block(self):
        cfg = SimConfig(nu=1e-3, nx=2, ny=8)
        op = assemble_frozen(ShearState.couette(2, 8), None, cfg.noise_spec(), cfg)
        assert np.max(np.abs(op.A[0] - couette_matrix_oracle(1e-3, 1, 8))) <= 1e-10 * np.max(np.abs(op.A[0]))

    @pytest.mark.parametrize("with_x", [False, True])
    def test_matrix_vs_operator_application(self, rng, with_x):
        cfg = SimConfig(nu=1e-3, nx=3, ny=8)
        X = random_field(rng, 3, 8, zero_mode=True) if with_x else None
        op = assemble_frozen(ShearState.couette(3, 8), X, cfg.noise_spec(), cfg)
        Z = random_field(rng, 3, 8)
        expected = operator_oracle(Z, X, cfg)
        assert np.max(np.abs(op.apply(Z).coeffs - expected)) <= 1e-10 * np.max(np.abs(expected))

    def test_zero_slow_field_removes_coupling(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=6)
        shear = ShearState.couette(2, 6)
        a = assemble_frozen(shear, None, cfg.noise_spec(), cfg).A
        b = assemble_frozen(shear, SpectralField.zeros(2, 6), cfg.noise_spec(), cfg).A
        assert np.array_equal(a, b)

    def test_hermitian_part_negative_definite(self):
        cfg = SimConfig(nu=1e-3, nx=4, ny=16)
        op = assemble_frozen(ShearState.couette(4, 16), None, cfg.noise_spec(), cfg)
        for A in op.A:
            assert np.max(np.linalg.eigvalsh(0.5 * (A + A.conj().T))) < 0

    def test_dense_guard(self):
        cfg = SimConfig(nu=1e-2, nx=1, ny=257)
        with pytest.raises(ConfigurationError):
            assemble_frozen(ShearState.couette(1, 257), None, cfg.noise_spec(), cfg)


class TestLyapunov:
    """Stationary covariance from the continuous Lyapunov equation."""

    def test_scalar_ou(self):
        op = FrozenOperator(np.array([[[-2.0 + 0j]]]), np.array([[1.0]]), 1.0)
        assert lyapunov_covariance(op).Q[0, 0, 0].real == pytest.approx(0.25, rel=1e-14)

    def test_against_time_integral_quadrature(self):
        nu, ny = 1e-2, 8
        cfg = SimConfig(nu=nu, nx=1, ny=ny)
        spec = NoiseSpec.from_table(1, ny, nu=nu, psi={(1, 1): 1.0})
        op = assemble_frozen(ShearState.couette(1, ny), None, spec, cfg)
        Q = lyapunov_covariance(op).Q[0]
        T_end = 40 / op.decay_rate()
        oracle = lyapunov_quadrature(op.A[0], np.diag(op.B[0] ** 2).astype(complex), T_end, n=8000)
        assert np.linalg.norm(Q - oracle) <= 1e-6 * np.linalg.norm(oracle)

    def test_residual_hermitian_psd(self, rng):
        cfg = SimConfig(nu=1e-2, nx=3, ny=8)
        op = assemble_frozen(ShearState(random_field(rng, 3, 8, zero_mode=True) * 0.1),
                             random_field(rng, 3, 8, zero_mode=True) * 0.3, cfg.noise_spec(), cfg)
        g = lyapunov_covariance(op)
        assert g.residual <= 1e-10
        for q in g.Q:
            assert np.max(np.abs(q - q.conj().T)) <= 1e-12 * np.max(np.abs(q))
            assert np.min(np.linalg.eigvalsh(q)) >= -1e-12 * np.trace(q).real

    def test_zero_noise(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=4)
        op = assemble_frozen(ShearState.couette(2, 4), None, NoiseSpec.from_table(2, 4, nu=1e-2), cfg)
        assert not np.any(lyapunov_covariance(op).Q)

    def test_unstable_operator_named(self):
        A = np.array([[[-1.0 + 0j]], [[0.5 + 0j]]])
        with pytest.raises(FrozenOperatorUnstable) as info:
            lyapunov_covariance(FrozenOperator(A, np.ones((2, 1)), 1.0))
        assert info.value.k == 2 and info.value.abscissa == pytest.approx(0.5)

    def test_covariance_bytes_round_trip(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=4)
        g = lyapunov_covariance(assemble_frozen(ShearState.couette(2, 4), None, cfg.noise_spec(), cfg))
        assert np.array_equal(StationaryGaussian.from_bytes(g.to_bytes()).Q, g.Q)


class TestSampling:
    """Draws from the stationary law and exact frozen trajectories."""

    def test_diagonal_covariance_variance_and_kurtosis(self):
        Q = np.zeros((2, 3, 3), dtype=complex)
        Q[0] = np.diag([1.0, 0.5, 0.1])
        Q[1] = np.diag([0.2, 2.0, 0.3])
        samples = sample_stationary(StationaryGaussian(Q), RngStream(8), 10_000)
        pos = samples[:, 3:]
        var = np.mean(np.abs(pos) ** 2, axis=0)
        assert np.allclose(var, np.stack([Q[0].diagonal(), Q[1].diagonal()]).real, rtol=0.05)
        k = kurtosis(pos.real.reshape(len(pos), -1), axis=0, fisher=False)
        assert np.all((2.7 <= k) & (k <= 3.3))
        cross = np.mean(pos[:, 0, 0] * np.conj(pos[:, 0, 1]))
        assert abs(cross) <= 4 * np.sqrt(0.5 / 10_000)

    def test_samples_are_real_fields(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=4)
        g = lyapunov_covariance(assemble_frozen(ShearState.couette(2, 4), None, cfg.noise_spec(), cfg))
        f = sample_stationary(g, RngStream(1))
        assert f.is_real() and f.has_no_zero_mode()

    def test_empirical_covariance_of_samples(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=4)
        g = lyapunov_covariance(assemble_frozen(ShearState.couette(2, 4), None, cfg.noise_spec(), cfg))
        emp = empirical_covariance(sample_stationary(g, RngStream(4), 20_000))
        assert np.linalg.norm(emp.Q - g.Q) <= 0.05 * np.linalg.norm(g.Q)

    def test_noise_free_decay(self, rng):
        cfg = SimConfig(nu=1e-2, nx=2, ny=8)
        op = assemble_frozen(ShearState.couette(2, 8), random_field(rng, 2, 8, zero_mode=True) * 0.2,
                             cfg.noise_spec(), cfg)
        Y0 = random_field(rng, 2, 8)
        rate = op.decay_rate()
        times, frames = simulate_frozen(op, Y0, 10 / rate, None, h=0.1 / rate, record_every=0.5 / rate)
        energies = np.array([energy_neq(f, cfg.nu, EnergyConstants.from_config(cfg)) for f in frames])
        late = energies[len(energies) // 4:]
        assert np.all(np.diff(late) <= 0)
        assert measured_decay_rate(op) > 0

    def test_stationary_energy_below_trace_norm(self):
        cfg = SimConfig(nu=1e-2, nx=4, ny=8)
        spec = cfg.noise_spec()
        g = lyapunov_covariance(assemble_frozen(ShearState.couette(4, 8), None, spec, cfg))
        samples = sample_stationary(g, RngStream(12), 4000)
        consts = EnergyConstants.from_config(cfg)
        sampled = np.mean([energy_neq(SpectralField(s), cfg.nu, consts) for s in samples])
        closed_form = g.mean_energy_terms(energy_forms(4, 8, cfg.nu, consts)[5:])
        assert sampled == pytest.approx(closed_form, rel=0.05)
        assert sampled <= 1.1 * trace_norms(spec)[0]


class TestAveragedDrift:
    """b0_bar by closed form, Gaussian sampling and trajectory averaging."""

    cfg = SimConfig(nu=1e-2, nx=2, ny=6)

    def test_zero_noise_gives_zero(self):
        spec = NoiseSpec.from_table(2, 6, nu=1e-2)
        est = estimate_bbar0(ShearState.couette(2, 6), None, spec, self.cfg, RngStream(1), 10)
        assert not np.any(est.bbar0.coeffs)

    @pytest.mark.parametrize("with_x", [False, True])
    def test_three_routes_agree(self, rng, with_x):
        shear = ShearState.couette(2, 6)
        X = random_field(rng, 2, 6, zero_mode=True) * 0.5 if with_x else None
        spec = self.cfg.noise_spec()
        exact = estimate_bbar0(shear, X, spec, self.cfg, method="exact").bbar0.coeffs[2].real
        lyap = estimate_bbar0(shear, X, spec, self.cfg, RngStream(1, 0, "lyap"), 2000, "lyapunov")
        traj = estimate_bbar0(shear, X, spec, self.cfg, RngStream(2, 0, "traj"), 2000, "empirical")
        a, b = lyap.bbar0.coeffs[2].real, traj.bbar0.coeffs[2].real
        assert np.all(np.abs(a - b) <= 2 * np.hypot(lyap.stderr, traj.stderr))
        assert np.all(np.abs(a - exact) <= 3 * lyap.stderr)

    def test_closed_form_B_matches_b(self):
        est = estimate_bbar0(ShearState.couette(2, 6), None, self.cfg.noise_spec(), self.cfg, method="exact")
        # b0_bar = -dy B0_bar: sine coefficients (j pi / 2) a_j of the cosine series
        from couette_avg.frozen import exact_Bbar0_cosine

        g = lyapunov_covariance(assemble_frozen(ShearState.couette(2, 6), None, self.cfg.noise_spec(), self.cfg))
        a = exact_Bbar0_cosine(g)
        assert np.allclose(est.bbar0.coeffs[2].real, np.pi * np.arange(1, 7) / 2 * a[1:7], rtol=1e-12)
        y = np.linspace(-1, 1, 5)[[0, -1]]
        walls = np.cos(np.multiply.outer(np.pi * (y + 1) / 2, np.arange(len(a)))) @ a
        assert np.allclose(walls, 0, atol=1e-14)

    def test_boundedness_under_doubling(self):
        shear = ShearState.couette(2, 6)
        spec = self.cfg.noise_spec()
        norms = []
        for n, seed in ((500, 1), (1000, 2)):
            est = estimate_bbar0(shear, None, spec, self.cfg, RngStream(seed), n, "lyapunov")
            norms.append(self.cfg.nu ** (-1 / 6) * est.Bbar0.norm())
        assert all(np.isfinite(norms))
        assert abs(norms[1] - norms[0]) <= 0.2 * norms[0]

    def test_lipschitz_trend(self, rng):
        shear = ShearState.couette(2, 6)
        spec = self.cfg.noise_spec()
        X = random_field(rng, 2, 6, zero_mode=True) * 0.3
        direction = random_field(rng, 2, 6, zero_mode=True)
        base = estimate_bbar0(shear, X, spec, self.cfg, method="exact").Bbar0
        diffs = [(estimate_bbar0(shear, X + direction * eps, spec, self.cfg, method="exact").Bbar0 - base).norm()
                 for eps in (0.01, 0.03, 0.1)]
        assert diffs[0] < diffs[1] < diffs[2]

    def test_json_round_trip(self):
        est = estimate_bbar0(ShearState.couette(2, 6), None, self.cfg.noise_spec(), self.cfg, method="exact")
        back = Bbar0Estimate.from_json(est.to_json(), 2)
        assert np.array_equal(back.bbar0.coeffs, est.bbar0.coeffs)
        assert back.method == "exact"

    def test_cache(self, tmp_path):
        cache = Bbar0Cache()
        key = field_hash(ShearState.couette(2, 6), None, extra="x")
        assert cache.get(key) is None
        cache.put(key, np.arange(3.0))
        assert cache.get(key) == [0.0, 1.0, 2.0]
        cache.save(tmp_path / "c.json")
        assert Bbar0Cache.load(tmp_path / "c.json").store == cache.store
        assert (cache.hits, cache.misses) == (1, 1)
