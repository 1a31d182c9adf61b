import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couette_avg.nonlinear import (
    B0_cosine_coefficients,
    all_terms,
    bm_matrix,
    nonlin_B0,
    nonlin_b0,
    nonlin_bm,
    nonlin_bneq,
    transport,
)
from couette_avg.spectral import DomainError, SpectralField
from oracles import (
    B0_oracle,
    B0_profile_oracle,
    DenseGrid,
    b0_oracle,
    bm_oracle,
    bneq_oracle,
    derivative_fields,
    random_field,
)

NX, NY = 4, 8


def pair(k, j, nx=NX, ny=NY):
    return SpectralField.mode(k, j, nx, ny) + SpectralField.mode(-k, j, nx, ny)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


class TestZeroModeDrift:
    """b0 and B0 against dense quadrature of the defining x-averages."""

    def test_single_pair_cancels(self):
        Y = pair(1, 1)
        assert np.max(np.abs(nonlin_B0(Y).coeffs)) < 1e-15
        assert np.max(np.abs(nonlin_b0(Y).coeffs)) < 1e-15

    def test_zero(self):
        Y = SpectralField.zeros(NX, NY)
        assert not np.any(nonlin_B0(Y).coeffs) and not np.any(nonlin_b0(Y).coeffs)

    def test_two_pairs_in_phase(self):
        """Two in-phase cos(x) pairs: the x-average of sin(x)cos(x) kills B0 exactly."""
        Y = pair(1, 1) + pair(1, 2)
        dense = DenseGrid(NX, NY)
        assert np.max(np.abs(B0_oracle(Y, dense))) < 1e-14
        assert np.max(np.abs(nonlin_B0(Y).coeffs)) < 1e-14

    def test_two_pairs_in_quadrature(self):
        """cos(x) sin(theta) - 2 sin(x) sin(2 theta): a non-vanishing drift."""
        Y = pair(1, 1) + SpectralField.mode(1, 2, NX, NY, 1j, real=True)
        dense = DenseGrid(NX, NY)
        expected = B0_oracle(Y, dense)
        assert np.max(np.abs(expected)) > 1e-2
        assert rel_err(nonlin_B0(Y).coeffs[NX], expected) <= 1e-8
        assert rel_err(nonlin_b0(Y).coeffs[NX], b0_oracle(Y, dense)) <= 1e-8

    def test_random_against_dense_oracle(self, rng):
        Y = random_field(rng, NX, NY)
        dense = DenseGrid(NX, NY)
        assert rel_err(nonlin_B0(Y).coeffs[NX], B0_oracle(Y, dense)) <= 1e-8
        assert rel_err(nonlin_b0(Y).coeffs[NX], b0_oracle(Y, dense)) <= 1e-8

    def test_cosine_profile_is_exact(self, rng):
        Y = random_field(rng, 3, 6)
        a = B0_cosine_coefficients(Y)
        y = np.linspace(-1, 1, 41)
        theta = np.pi * (y + 1) / 2
        profile = np.cos(np.multiply.outer(theta, np.arange(len(a)))) @ a
        assert np.allclose(profile, B0_profile_oracle(Y, y).real, atol=1e-12)
        assert abs(profile[0]) < 1e-12 and abs(profile[-1]) < 1e-12

    def test_b0_is_minus_dy_B0(self, rng):
        """The sine coefficients of b0 are (j pi/2) a_j for the cosine coefficients a of B0."""
        Y = random_field(rng, NX, NY)
        a = B0_cosine_coefficients(Y)
        j = np.arange(1, NY + 1)
        assert np.allclose(nonlin_b0(Y).coeffs[NX], (j * np.pi / 2) * a[1:NY + 1], atol=1e-10)

    def test_rejects_zero_mode_content(self):
        with pytest.raises(DomainError):
            nonlin_b0(SpectralField.mode(0, 1, NX, NY))
        with pytest.raises(DomainError):
            nonlin_B0(SpectralField.mode(0, 1, NX, NY))


class TestMixedTerm:
    """b_m(X, Y) against the dense oracle and its matrix form."""

    def test_zero_slow_field(self, rng):
        Y = random_field(rng, NX, NY)
        assert not np.any(nonlin_bm(SpectralField.zeros(NX, NY), Y).coeffs)

    def test_basis_example(self):
        X = SpectralField.mode(0, 1, NX, NY)
        Y = pair(1, 1)
        dense = DenseGrid(NX, NY)
        assert rel_err(nonlin_bm(X, Y).coeffs, bm_oracle(X, Y, dense)) <= 1e-8

    def test_random(self, rng):
        X = random_field(rng, NX, NY, zero_mode=True)
        Y = random_field(rng, NX, NY)
        out = nonlin_bm(X, Y)
        assert out.has_no_zero_mode()
        assert rel_err(out.coeffs, bm_oracle(X, Y, DenseGrid(NX, NY))) <= 1e-8

    def test_adjointness_grid_vs_spectral(self, rng):
        X = random_field(rng, NX, NY, zero_mode=True)
        Y, Z = random_field(rng, NX, NY), random_field(rng, NX, NY)
        spectral = np.sum(nonlin_bm(X, Y).coeffs * np.conj(Z.coeffs))
        dense = DenseGrid(NX, NY)
        dX, dY = derivative_fields(X), derivative_fields(Y)
        raw = dense.values(dX["dy_psi"]) * dense.values(dY["dx_f"]) \
            - dense.values(dY["dx_psi"]) * dense.values(dX["dy_f"])
        grid = np.sum(raw * np.conj(dense.values(Z)) * dense.wy[None, :]) / dense.mx
        assert abs(spectral - grid) <= 1e-10 * max(1.0, abs(grid))

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_matrix_form_matches_collocation(self, rng, k):
        X = random_field(rng, NX, NY, zero_mode=True)
        Y = random_field(rng, NX, NY)
        via_matrix = bm_matrix(X, k) @ Y.coeffs[NX + k]
        assert np.allclose(via_matrix, nonlin_bm(X, Y).coeffs[NX + k], atol=1e-12)

    def test_mode_content_checks(self):
        with pytest.raises(DomainError):
            nonlin_bm(pair(1, 1), pair(1, 1))
        with pytest.raises(DomainError):
            nonlin_bm(SpectralField.mode(0, 1, NX, NY), SpectralField.mode(0, 1, NX, NY))


class TestSelfInteraction:
    """b_neq(Y) and energy neutrality of the transport term."""

    def test_zero(self):
        assert not np.any(nonlin_bneq(SpectralField.zeros(NX, NY)).coeffs)

    def test_dense_oracle(self, rng):
        Y = random_field(rng, NX, NY)
        out = nonlin_bneq(Y)
        assert out.has_no_zero_mode()
        assert rel_err(out.coeffs, bneq_oracle(Y, DenseGrid(NX, NY))) <= 1e-8

    def test_raw_average_matches_b0_path(self, rng):
        Y = pair(1, 1) + pair(2, 3) * 0.5j + pair(1, 2)
        Y = SpectralField(0.5 * (Y.coeffs + np.conj(Y.coeffs[::-1])))
        raw = transport(Y)
        assert np.allclose(raw.zero_mode().coeffs, nonlin_b0(Y).coeffs, atol=1e-10)
        assert np.allclose(raw.nonzero_modes().coeffs, nonlin_bneq(Y).coeffs, atol=1e-10)

    def test_shared_transforms_agree(self, rng):
        X = random_field(rng, NX, NY, zero_mode=True)
        Y = random_field(rng, NX, NY)
        terms = all_terms(X, Y)
        assert np.array_equal(terms.b0.coeffs, nonlin_b0(Y).coeffs)
        assert np.allclose(terms.bm.coeffs, nonlin_bm(X, Y).coeffs, atol=1e-14)
        assert np.array_equal(terms.bneq.coeffs, nonlin_bneq(Y).coeffs)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_energy_neutrality(self, nx, ny, seed):
        Y = random_field(np.random.default_rng(seed), nx, ny)
        inner = np.sum(transport(Y).coeffs * np.conj(Y.coeffs)).real
        assert abs(inner) <= 1e-10 * max(1.0, Y.norm() ** 3)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_mixed_term_exchanges_energy_with_slow_variable(self, nx, ny, seed):
        """Energy exchange: <b_m(X, Y), Y> = -<b0(Y), X>, so the quadratic terms
        conserve ||X||^2 + ||Y||^2 together."""
        r = np.random.default_rng(seed)
        X = random_field(r, nx, ny, zero_mode=True)
        Y = random_field(r, nx, ny)
        lhs = np.sum(nonlin_bm(X, Y).coeffs * np.conj(Y.coeffs)).real
        rhs = -np.sum(nonlin_b0(Y).coeffs * np.conj(X.coeffs)).real
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, X.norm() * Y.norm() ** 2)
