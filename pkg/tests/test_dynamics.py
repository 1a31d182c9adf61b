import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from couette_avg.config import Coefficients, SimConfig
from couette_avg.dynamics import (
    BlowUpError,
    FrozenInputs,
    LinearPropagator,
    PropagatorCache,
    ShearState,
    enstrophy,
    exact_background_variance,
    shear_c2_distance,
    step_auxiliary,
    step_background,
    step_fast_slow,
    step_pseudo_linearized,
)
from couette_avg.frozen import assemble_frozen
from couette_avg.noise import NoiseSpec, RngStream, sample_dW
from couette_avg.spectral import SpectralField
from oracles import DenseGrid, lyapunov_quadrature, random_field

LINEAR_ONLY = dict(b0=0.0, bm=0.0, bneq=0.0, noise=0.0, shear_diffusion=0.0, shear_noise=0.0)


def linear_coefficients(nu):
    return Coefficients(diffusion=nu, advection=1.0, **LINEAR_ONLY)


def couette_operator_oracle(nu, k, ny):
    """nu Delta_k - ik y by Gauss-Legendre quadrature of y sin(j theta) sin(l theta)."""
    dense = DenseGrid(0, ny)
    s = np.sin(np.multiply.outer(dense.theta, np.arange(1, ny + 1)))
    M_y = (dense.wy * dense.y * s.T) @ s
    lam = k**2 + (np.pi * np.arange(1, ny + 1) / 2) ** 2
    return -nu * np.diag(lam) - 1j * k * M_y


class TestBackgroundShear:
    """Exact Ornstein-Uhlenbeck update of the background vorticity."""

    def test_c2_distance_of_first_mode(self):
        """W = a sin(theta): U - y, U' - 1, U'' peak at 2a/pi, a, a pi/2."""
        a = 0.3
        shear = ShearState(SpectralField.mode(0, 1, 2, 6, a))
        expected = a * (2 / np.pi + 1 + np.pi / 2)
        assert shear_c2_distance(shear, ShearState.couette(2, 6)) == pytest.approx(expected, rel=1e-12)
        assert shear_c2_distance(shear, shear) == 0.0

    def test_pure_heat_decay(self):
        cfg = SimConfig(nu=1e-2, gamma=0.1, beta=None)
        W = SpectralField.mode(0, 1, 2, 4, 0.7)
        out = step_background(ShearState(W), 0.3, None, cfg.noise_spec(), cfg.coefficients)
        assert out.w[0] == pytest.approx(0.7 * np.exp(-(1e-2**0.1) * np.pi**2 / 4 * 0.3), rel=1e-14)

    def test_one_step_variance(self):
        nu, gamma, dt, n = 1e-2, 0.0, 0.5, 10_000
        cfg = SimConfig(nu=nu, gamma=gamma, nx=1, ny=3, amp_phi=1.0)
        spec = cfg.noise_spec()
        rng = RngStream(7, 0, "V")
        zero = ShearState.couette(1, 3)
        samples = np.array([step_background(zero, dt, rng, spec, cfg.coefficients).w for _ in range(n)])
        assert np.allclose(samples.mean(axis=0), 0, atol=4 * samples.std(axis=0) / np.sqrt(n))
        expected = exact_background_variance(nu, gamma, spec.phi, dt)
        assert np.allclose(samples.var(axis=0), expected, rtol=0.05)

    def test_walls_and_profile_relations(self, rng):
        shear = ShearState(random_field(rng, 2, 8, zero_mode=True))
        walls = shear.profiles(np.array([-1.0, 1.0]))
        assert np.allclose(walls["W"], 0, atol=1e-14)
        y = np.linspace(-0.95, 0.95, 39)
        p = shear.profiles(y)
        assert np.allclose(p["U1"], 1 + p["W"], atol=1e-12)
        h = 1e-5
        fd = (shear.profiles(y + h)["U"] - shear.profiles(y - h)["U"]) / (2 * h)
        assert np.allclose(fd, p["U1"], atol=1e-8)

    def test_nonpositive_dt(self):
        cfg = SimConfig()
        with pytest.raises(ValueError):
            step_background(ShearState.couette(1, 2), 0.0, None, cfg.noise_spec(), cfg.coefficients)


class TestLinearPropagation:
    """The per-k linear part against an independently assembled matrix exponential."""

    @pytest.mark.parametrize("k", [1, 3])
    def test_couette_matches_expm_oracle(self, rng, k):
        nu, nx, ny, dt = 1e-2, 3, 8, 1e-2
        coeffs = linear_coefficients(nu)
        shear = ShearState.couette(nx, ny)
        Y = random_field(rng, nx, ny)
        Y0 = Y.coeffs[nx + k].copy()
        X = SpectralField.zeros(nx, ny)
        prop = LinearPropagator.build(shear, coeffs, dt)
        for _ in range(100):
            X, Y = step_fast_slow(X, Y, shear, coeffs, dt, propagator=prop)
        expected = expm(couette_operator_oracle(nu, k, ny) * 1.0) @ Y0
        assert np.max(np.abs(Y.coeffs[nx + k] - expected)) <= 1e-6

    def test_equilibrium(self):
        cfg = SimConfig(nu=1e-2, nx=2, ny=4, dt=1e-3)
        X = Y = SpectralField.zeros(2, 4)
        shear = ShearState.couette(2, 4)
        for _ in range(10):
            X, Y = step_fast_slow(X, Y, shear, cfg, cfg.dt)
        assert not np.any(X.coeffs) and not np.any(Y.coeffs)

    def test_slow_variable_pure_heat_decay(self, rng):
        nu, dt = 1e-2, 0.05
        coeffs = linear_coefficients(nu)
        X0 = random_field(rng, 2, 6, zero_mode=True)
        X, Y = X0, SpectralField.zeros(2, 6)
        for _ in range(20):
            X, Y = step_pseudo_linearized(X, Y, ShearState.couette(2, 6), coeffs, dt)
        lam = (np.pi * np.arange(1, 7) / 2) ** 2
        assert np.allclose(X.coeffs[2], np.exp(-nu * lam * 1.0) * X0.coeffs[2], rtol=1e-12)

    def test_propagator_cache(self):
        cache = PropagatorCache(linear_coefficients(1e-2), maxsize=2)
        shear = ShearState.couette(1, 4)
        assert cache.get(shear, 0.1) is cache.get(shear, 0.1)
        cache.get(shear, 0.2)
        cache.get(shear, 0.3)
        assert len(cache._store) == 2


class TestEnstrophy:
    """Energy identities of the un-rescaled nonlinear system."""

    def test_viscous_decay_is_monotone(self, rng):
        nu, nx, ny, dt = 1e-2, 3, 12, 1e-3
        coeffs = Coefficients.unscaled(nu)
        shear = ShearState.couette(nx, ny)
        X = random_field(rng, nx, ny, jmax=4, zero_mode=True) * 0.5
        Y = random_field(rng, nx, ny, kmax=2, jmax=4) * 0.5
        prop = LinearPropagator.build(shear, coeffs, dt)
        e0 = enstrophy(X, Y)
        energies = [e0]
        for _ in range(500):
            X, Y = step_fast_slow(X, Y, shear, coeffs, dt, propagator=prop)
            energies.append(enstrophy(X, Y))
        increments = np.diff(energies)
        assert np.all(increments <= 1e-8 * dt * e0)
        assert energies[-1] < energies[0]


class TestVariantRelations:
    """Bit-level relations between the three steppers."""

    def test_fast_slow_without_bneq_is_pseudo_linearized(self, rng):
        cfg = SimConfig(nu=1e-2, nx=2, ny=6, dt=1e-3, bneq_scale=0.0)
        shear = ShearState.couette(2, 6)
        X1 = X2 = random_field(rng, 2, 6, zero_mode=True)
        Y1 = Y2 = random_field(rng, 2, 6)
        r1, r2 = RngStream(3, 0, "W"), RngStream(3, 0, "W")
        for i in range(20):
            X1, Y1 = step_fast_slow(X1, Y1, shear, cfg, cfg.dt, r1, t=i * cfg.dt)
            X2, Y2 = step_pseudo_linearized(X2, Y2, shear, cfg, cfg.dt, r2, t=i * cfg.dt)
        assert X1.coeffs.tobytes() == X2.coeffs.tobytes()
        assert Y1.coeffs.tobytes() == Y2.coeffs.tobytes()

    def test_auxiliary_equals_pseudo_linearized_for_constant_inputs(self, rng):
        """With b0 off and X_tilde = 0 both inputs stay constant, so freezing changes nothing."""
        cfg = SimConfig(nu=1e-2, nx=2, ny=6, dt=1e-3)
        coeffs = Coefficients(**{**cfg.coefficients.__dict__, "b0": 0.0})
        shear = ShearState(random_field(rng, 2, 6, zero_mode=True) * 0.2)
        spec = cfg.noise_spec()
        prop = LinearPropagator.build(shear, coeffs, cfg.dt)
        frozen = FrozenInputs(shear, SpectralField.zeros(2, 6), 0.0)
        Xp = Xa = SpectralField.zeros(2, 6)
        Yp = Ya = random_field(rng, 2, 6)
        r = RngStream(5, 0, "W")
        for _ in range(30):
            dW = sample_dW(spec, cfg.dt, r)
            Xp, Yp = step_pseudo_linearized(Xp, Yp, shear, coeffs, cfg.dt, dW, propagator=prop)
            Xa, Ya = step_auxiliary(Xa, Ya, frozen, coeffs, cfg.dt, dW, propagator=prop)
            assert not np.any(Xp.coeffs)
        assert Yp.coeffs.tobytes() == Ya.coeffs.tobytes()
        assert Xp.coeffs.tobytes() == Xa.coeffs.tobytes()

    def test_refrozen_every_step_is_pseudo_linearized(self, rng):
        """Blocks of one step: the frozen inputs are the current ones."""
        cfg = SimConfig(nu=1e-2, nx=2, ny=6, dt=1e-3)
        shear = ShearState(random_field(rng, 2, 6, zero_mode=True) * 0.2)
        prop = LinearPropagator.build(shear, cfg.coefficients, cfg.dt)
        Xp = Xa = random_field(rng, 2, 6, zero_mode=True)
        Yp = Ya = random_field(rng, 2, 6)
        r = RngStream(6, 0, "W")
        for i in range(30):
            dW = sample_dW(cfg.noise_spec(), cfg.dt, r)
            frozen = FrozenInputs(shear, Xp, i * cfg.dt)
            Xp, Yp = step_pseudo_linearized(Xp, Yp, shear, cfg, cfg.dt, dW, propagator=prop)
            Xa, Ya = step_auxiliary(Xa, Ya, frozen, cfg, cfg.dt, dW, propagator=prop)
        assert Yp.coeffs.tobytes() == Ya.coeffs.tobytes()
        assert Xp.coeffs.tobytes() == Xa.coeffs.tobytes()

    def test_deterministic_replay(self, rng):
        cfg = SimConfig(nu=1e-2, nx=2, ny=6, dt=1e-3)
        shear = ShearState.couette(2, 6)
        X0, Y0 = random_field(rng, 2, 6, zero_mode=True), random_field(rng, 2, 6)

        def run():
            X, Y, r = X0, Y0, RngStream(11, 2, "W")
            for i in range(15):
                X, Y = step_fast_slow(X, Y, shear, cfg, cfg.dt, r)
            return X.coeffs.tobytes() + Y.coeffs.tobytes()

        assert run() == run()

    def test_blow_up_carries_time(self):
        cfg = SimConfig(nu=1e-2, nx=1, ny=2, dt=1e-3)
        Y = SpectralField.mode(1, 1, 1, 2, np.inf, real=True)
        with pytest.raises(BlowUpError) as info, np.errstate(all="ignore"):
            step_fast_slow(SpectralField.zeros(1, 2), Y, ShearState.couette(1, 2), cfg, cfg.dt, t=0.25)
        assert info.value.t == pytest.approx(0.251)
        assert info.value.variant == "fast_slow"


class TestAuxiliaryDistribution:
    """Within one block the auxiliary fast variable is the frozen process in fast time."""

    def test_mode_variance_matches_frozen_covariance(self, rng):
        nu, nx, ny = 1e-2, 1, 4
        fast_time = 1.0
        t_block = fast_time * nu ** (2 / 3)
        n_steps, n_paths = 5, 2000
        cfg = SimConfig(nu=nu, nx=nx, ny=ny, dt=t_block / n_steps)
        shear = ShearState.couette(nx, ny)
        X = random_field(rng, nx, ny, zero_mode=True) * 0.3
        spec = cfg.noise_spec()
        prop = LinearPropagator.build(shear, cfg.coefficients, cfg.dt)
        frozen = FrozenInputs(shear, X, 0.0)
        finals = np.empty((n_paths, ny), dtype=complex)
        for p in range(n_paths):
            r = RngStream(2024, p, "W")
            Xh, Yh = X, SpectralField.zeros(nx, ny)
            for _ in range(n_steps):
                Xh, Yh = step_auxiliary(Xh, Yh, frozen, cfg, cfg.dt, r, spec=spec, propagator=prop)
            finals[p] = Yh.coeffs[nx + 1]
        op = assemble_frozen(shear, X, spec, cfg)
        Q = lyapunov_quadrature(op.A[0], np.diag(op.B[0] ** 2).astype(complex), fast_time)
        measured = np.mean(np.abs(finals) ** 2, axis=0)
        assert np.allclose(measured[:2], Q.diagonal().real[:2], rtol=0.05)


class TestInvariants:
    """Mode-content and reality invariants along random trajectories."""

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["fast_slow", "pseudo_lin", "auxiliary"]))
    def test_mode_content_and_reality(self, seed, variant):
        r = np.random.default_rng(seed)
        cfg = SimConfig(nu=1e-2, nx=2, ny=5, dt=1e-3)
        shear = ShearState(random_field(r, 2, 5, zero_mode=True) * 0.1)
        X, Y = random_field(r, 2, 5, zero_mode=True), random_field(r, 2, 5)
        frozen = FrozenInputs(shear, X, 0.0)
        stream = RngStream(seed, 0, "W")
        for _ in range(5):
            if variant == "fast_slow":
                X, Y = step_fast_slow(X, Y, shear, cfg, cfg.dt, stream)
            elif variant == "pseudo_lin":
                X, Y = step_pseudo_linearized(X, Y, shear, cfg, cfg.dt, stream)
            else:
                X, Y = step_auxiliary(X, Y, frozen, cfg, cfg.dt, stream)
        assert X.has_only_zero_mode() and Y.has_no_zero_mode()
        assert X.is_real(1e-12) and Y.is_real(1e-12)
        assert np.all(X.coeffs[2].imag == 0)
