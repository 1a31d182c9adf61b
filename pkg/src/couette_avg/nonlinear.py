"""Quadratic nonlinearities b0, B0, b_m and b_neq via dealiased collocation.

With u(Y) = (dy Delta^{-1} Y, -dx Delta^{-1} Y) the three projections of the
transport term are

    b0(Y)     = P_0 (u(Y) . grad Y)            = -dy B0(Y),
    b_m(X, Y) = (dy Delta^{-1} X) dx Y - (dx Delta^{-1} Y) dy X,
    b_neq(Y)  = P_neq (u(Y) . grad Y),

and B0(Y) is the x-average of (dx Delta^{-1} Y) Y. Every product of a sine
and a cosine series is a sine polynomial of degree <= 2 ny, which the grid of
``Grid.for_truncation`` projects exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (
    Grid,
    GridField,
    SpectralField,
    biot_savart,
    cosine_poly_from_walls,
    cosine_to_sine_matrix,
    dx,
    dy,
    inv_laplacian,
    require_nonzero_modes,
    require_sine,
    require_zero_mode,
    to_grid,
    to_spectral,
)


@dataclass
class _FastGrids:
    u1: GridField
    u2: GridField
    grad_x: GridField
    grad_y: GridField


def _fast_grids(Y: SpectralField, grid: Grid) -> _FastGrids:
    u1, u2 = biot_savart(Y)
    return _FastGrids(to_grid(u1, grid), to_grid(u2, grid),
                      to_grid(dx(Y), grid), to_grid(dy(Y), grid))


def _check_fast(Y: SpectralField) -> None:
    require_sine(Y, "Y")
    require_nonzero_modes(Y, "Y")


def _check_slow(X: SpectralField) -> None:
    require_sine(X, "X")
    require_zero_mode(X, "X")


def transport(Y: SpectralField) -> SpectralField:
    """Sine projection of u(Y) . grad Y over all retained modes."""
    _check_fast(Y)
    g = _fast_grids(Y, Grid.for_truncation(Y.nx, Y.ny))
    return to_spectral(g.u1 * g.grad_x + g.u2 * g.grad_y, Y.nx, Y.ny)


def nonlin_b0(Y: SpectralField) -> SpectralField:
    return transport(Y).zero_mode()


def nonlin_bneq(Y: SpectralField) -> SpectralField:
    return transport(Y).nonzero_modes()


def nonlin_bm(X: SpectralField, Y: SpectralField) -> SpectralField:
    _check_slow(X)
    _check_fast(Y)
    grid = Grid.for_truncation(Y.nx, Y.ny)
    shear_u = to_grid(dy(inv_laplacian(X)), grid)
    _, u2 = biot_savart(Y)
    prod = shear_u * to_grid(dx(Y), grid) + to_grid(u2, grid) * to_grid(dy(X), grid)
    return to_spectral(prod, Y.nx, Y.ny).nonzero_modes()


def B0_cosine_coefficients(Y: SpectralField) -> np.ndarray:
    """Exact cosine coefficients a_0..a_{my} of the profile B0(Y)(y).

    B0 is a product of two sine series, hence a cosine polynomial of degree
    <= 2 ny that vanishes at both walls.
    """
    _check_fast(Y)
    grid = Grid.for_truncation(Y.nx, Y.ny)
    prod = to_grid(dx(inv_laplacian(Y)), grid) * to_grid(Y, grid)
    profile = np.zeros(grid.my + 1)
    profile[1:-1] = prod.x_mean()
    return cosine_poly_from_walls(profile)


def nonlin_B0(Y: SpectralField) -> SpectralField:
    """Sine-basis projection of B0(Y) as a zero-mode field."""
    a = B0_cosine_coefficients(Y)
    S = cosine_to_sine_matrix(len(a) - 1, Y.ny)
    out = SpectralField.zeros(Y.nx, Y.ny)
    out.coeffs[Y.nx] = S @ a
    return out


@dataclass
class NonlinearTerms:
    b0: SpectralField
    bm: SpectralField | None
    bneq: SpectralField | None


def all_terms(X: SpectralField | None, Y: SpectralField, *, with_bm: bool = True,
              with_bneq: bool = True) -> NonlinearTerms:
    """b0(Y), b_m(X, Y) and b_neq(Y) sharing one set of grid transforms."""
    _check_fast(Y)
    grid = Grid.for_truncation(Y.nx, Y.ny)
    g = _fast_grids(Y, grid)
    full = to_spectral(g.u1 * g.grad_x + g.u2 * g.grad_y, Y.nx, Y.ny)
    bm = None
    if with_bm and X is not None:
        _check_slow(X)
        if np.any(X.coeffs):
            shear_u = to_grid(dy(inv_laplacian(X)), grid)
            prod = shear_u * g.grad_x + g.u2 * to_grid(dy(X), grid)
            bm = to_spectral(prod, Y.nx, Y.ny).nonzero_modes()
        else:
            bm = SpectralField.zeros(Y.nx, Y.ny)
    return NonlinearTerms(full.zero_mode(), bm, full.nonzero_modes() if with_bneq else None)


def bm_matrix(X: SpectralField, k: int) -> np.ndarray:
    """Sine-basis matrix of Y_k -> (b_m(X, Y))_k for one x-frequency k.

    b_m(X, .)_k = ik C[dy Delta^{-1} X] - ik C[dy X] Delta_k^{-1}, where C[a]
    is the exact Galerkin multiplication matrix of the cosine series a.
    """
    from .spectral import cosine_multiplier_matrix, laplacian_symbol

    _check_slow(X)
    ny = X.ny
    shear_u = dy(inv_laplacian(X)).coeffs[X.nx]
    grad = dy(X).coeffs[X.nx]
    C_u = cosine_multiplier_matrix(shear_u.real, ny)
    C_g = cosine_multiplier_matrix(grad.real, ny)
    sym = laplacian_symbol(X.nx, ny)[X.nx + k]
    return 1j * k * C_u + 1j * k * C_g / sym[None, :]
