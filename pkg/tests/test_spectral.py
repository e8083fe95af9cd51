"""Inner product, eigenstructure, projections and cutoff on the cylinder grid.

Expected values were computed independently before freezing: closed-form
Gaussian moments E[y^2]=2, E[y^4]=12, E[y^6]=120, E[y^8]=1680 for the
variance-2 marginal, confirmed by a 64-node raw Gauss-Hermite x 256-node
trapezoid quadrature of the weighted integrals.
"""

import numpy as np
import pytest

from bubblesheet.grid import (
    WEIGHT_NORM,
    FieldSample,
    GridMismatchError,
    GridSpec,
    ops_for,
)
from bubblesheet.spectral import (
    TruncationInactiveWarning,
    apply_L,
    cutoff_profile,
    gradient_norm,
    inner_product,
    neutral_basis,
    norm,
    project_modes,
    psi_basis,
    psi_coefficients,
    remove_psi_span,
    spectral_coeff,
    truncate,
    unstable_basis,
)

GRID = GridSpec(hermite_order=12, fourier_modes=8)
C_H = WEIGHT_NORM  # sqrt(2 pi) e^{-1/2}


def field(fn, grid=GRID):
    return FieldSample.from_function(grid, fn)


def bandlimited(rng, grid, nmax, mmax):
    """Random field with Hermite degree < nmax and Fourier mode < mmax."""
    ops = ops_for(grid)
    c = np.zeros((grid.hermite_order, grid.hermite_order, grid.fourier_modes // 2 + 1), dtype=complex)
    c[:nmax, :nmax, 0] = rng.standard_normal((nmax, nmax))
    if mmax > 1:
        c[:nmax, :nmax, 1:mmax] = rng.standard_normal((nmax, nmax, mmax - 1)) + 1j * rng.standard_normal(
            (nmax, nmax, mmax - 1)
        )
    return FieldSample(grid, ops.to_values(c))


def brute_inner(fn_f, fn_g, n=64, m=256):
    """Independent oracle: raw 64-node rule on the unnormalized integral."""
    x, w = np.polynomial.hermite.hermgauss(n)
    y, wy = 2.0 * x, 2.0 * w
    th = 2 * np.pi * np.arange(m) / m
    Y1, Y2, T = np.meshgrid(y, y, th, indexing="ij")
    W = wy[:, None, None] * wy[None, :, None] * (2 * np.pi / m)
    pref = (4 * np.pi) ** (-1.5) * np.sqrt(2.0) * np.exp(-0.5)
    return pref * float(np.sum(fn_f(Y1, Y2, T) * fn_g(Y1, Y2, T) * W))


class TestInnerProduct:
    def test_constant(self):
        one = field(lambda a, b, t: np.ones_like(a))
        val = inner_product(one, one)
        assert val == pytest.approx(np.sqrt(2 * np.pi) * np.exp(-0.5), rel=1e-14)
        assert val == pytest.approx(1.5203469010662807, rel=1e-13)
        assert val == pytest.approx(brute_inner(lambda a, b, t: 1.0 + 0 * a, lambda a, b, t: 1.0 + 0 * a), rel=1e-12)

    def test_odd_symmetry(self):
        f = field(lambda a, b, t: a)
        g = field(lambda a, b, t: b)
        assert inner_product(f, g) == pytest.approx(0.0, abs=1e-14)

    def test_independent_quadratics_orthogonal(self):
        p1, p2, _ = psi_basis(GRID)
        assert inner_product(p1, p2) == pytest.approx(0.0, abs=1e-12)

    def test_psi1_norm(self):
        p1 = psi_basis(GRID)[0]
        assert inner_product(p1, p1) == pytest.approx(8 * C_H, rel=1e-13)
        assert inner_product(p1, p1) == pytest.approx(
            brute_inner(lambda a, b, t: a**2 - 2, lambda a, b, t: a**2 - 2), rel=1e-12
        )

    def test_symmetric_bilinear(self):
        rng = np.random.default_rng(0)
        f = field(lambda a, b, t: a + 0.3 * a * b + np.cos(t))
        g = field(lambda a, b, t: b**2 - 1 + np.sin(t) * a)
        h = field(lambda a, b, t: 1.0 + 0 * a)
        assert inner_product(f, g) == pytest.approx(inner_product(g, f), rel=1e-14)
        c = rng.standard_normal()
        lhs = inner_product(f + c * h, g)
        assert lhs == pytest.approx(inner_product(f, g) + c * inner_product(h, g), rel=1e-12)

    def test_grid_mismatch_rejected(self):
        f = field(lambda a, b, t: a)
        g = FieldSample.from_function(GridSpec(8, 8), lambda a, b, t: a)
        with pytest.raises(GridMismatchError):
            inner_product(f, g)


class TestApplyL:
    def test_constant_eigenvalue_one(self):
        one = field(lambda a, b, t: np.ones_like(a))
        assert norm(apply_L(one) - one) <= 1e-12

    def test_neutral_trig_mode(self):
        f = field(lambda a, b, t: a * np.cos(t))
        assert norm(apply_L(f)) <= 1e-12

    def test_linear_mode_half(self):
        f = field(lambda a, b, t: a)
        assert norm(apply_L(f) - 0.5 * f) <= 1e-12

    def test_psi3_neutral(self):
        f = psi_basis(GRID)[2]
        assert norm(apply_L(f)) <= 1e-12

    def test_full_eigenvalue_table(self):
        # residuals <= 1e-10 already at hermite_order 8
        grid = GridSpec(hermite_order=8, fourier_modes=8)
        modes = [(f, 1.0) for f in unstable_basis(grid)[:1]]
        modes += [(f, 0.5) for f in unstable_basis(grid)[1:]]
        modes += [(f, 0.0) for f in neutral_basis(grid)]
        assert len(modes) == 12
        for f, lam in modes:
            assert norm(apply_L(f) - lam * f) <= 1e-10

    def test_self_adjoint_on_random_bandlimited(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            f = bandlimited(rng, GRID, 6, 3)
            g = bandlimited(rng, GRID, 6, 3)
            lhs = inner_product(apply_L(f), g)
            rhs = inner_product(f, apply_L(g))
            scale = max(1.0, abs(lhs))
            assert abs(lhs - rhs) / scale <= 1e-10


class TestProjections:
    def test_psi1_is_pure_neutral(self):
        p1 = psi_basis(GRID)[0]
        split = project_modes(p1)
        up, u0, um = split.energies
        assert u0 == pytest.approx(inner_product(p1, p1), rel=1e-12)
        assert up <= 1e-20 and um <= 1e-18
        assert norm(split.neutral_part - p1) <= 1e-10

    def test_affine_is_unstable(self):
        f = field(lambda a, b, t: 3.0 + b)
        split = project_modes(f)
        up, u0, um = split.energies
        assert u0 <= 1e-18 and um <= 1e-18
        assert norm(split.plus_part - f) <= 1e-10

    def test_cubic_splits(self):
        # y1^3 = (y1^3 - 6 y1) + 6 y1; the first term is a stable Hermite mode
        f = field(lambda a, b, t: a**3)
        split = project_modes(f)
        up, u0, um = split.energies
        lin = field(lambda a, b, t: 6.0 * a)
        h3 = field(lambda a, b, t: a**3 - 6 * a)
        assert norm(split.plus_part - lin) <= 1e-10
        assert u0 <= 1e-16
        assert um == pytest.approx(48 * C_H, rel=1e-12)  # E[(y^3-6y)^2] = 48
        assert norm(split.minus_part - h3) <= 1e-10
        assert inner_product(h3, lin) == pytest.approx(0.0, abs=1e-10)

    def test_parts_orthogonal_and_pythagoras(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            f = bandlimited(rng, GRID, 5, 3)
            split = project_modes(f)
            total = inner_product(f, f)
            assert sum(split.energies) == pytest.approx(total, rel=1e-8)
            assert abs(inner_product(split.plus_part, split.neutral_part)) <= 1e-10 * max(total, 1)
            assert abs(inner_product(split.plus_part, split.minus_part)) <= 1e-10 * max(total, 1)
            assert abs(inner_product(split.neutral_part, split.minus_part)) <= 1e-10 * max(total, 1)
            recon = split.plus_part + split.neutral_part + split.minus_part
            assert norm(recon - f) <= 1e-8 * max(np.sqrt(total), 1)


class TestSpectralCoeff:
    def test_normalization(self):
        p2 = psi_basis(GRID)[1]
        assert spectral_coeff(p2, 2) == pytest.approx(1.0, rel=1e-13)
        assert spectral_coeff(p2, 1) == pytest.approx(0.0, abs=1e-13)
        assert spectral_coeff(p2, 3) == pytest.approx(0.0, abs=1e-13)

    def test_linearity(self):
        p3 = psi_basis(GRID)[2]
        assert spectral_coeff(-0.37 * p3, 3) == pytest.approx(-0.37, rel=1e-13)

    def test_trig_neutral_has_zero_coeffs(self):
        f = field(lambda a, b, t: a * np.cos(t))
        assert np.allclose(psi_coefficients(f), 0.0, atol=1e-13)

    def test_invalid_index(self):
        with pytest.raises(ValueError):
            spectral_coeff(psi_basis(GRID)[0], 4)

    def test_remove_psi_span(self):
        f = field(lambda a, b, t: 0.2 * (a**2 - 2) + 0.05 * (a**3 - 6 * a))
        w = remove_psi_span(f)
        assert np.allclose(psi_coefficients(w), 0.0, atol=1e-14)


class TestGradientNorm:
    def test_constant(self):
        one = field(lambda a, b, t: np.ones_like(a))
        assert gradient_norm(one) <= 1e-13

    def test_linear(self):
        f = field(lambda a, b, t: a)
        assert gradient_norm(f) == pytest.approx(np.sqrt(C_H), rel=1e-12)

    def test_angular_metric_factor(self):
        f = field(lambda a, b, t: np.cos(t))
        # |grad cos|^2 = sin^2/2, ||sin||^2 = <1,1>/2
        assert gradient_norm(f) ** 2 == pytest.approx(0.25 * C_H, rel=1e-12)


class TestPoincareProbe:
    def test_ratio_bounded_without_unstable_content(self):
        """For fields orthogonal to the unstable space and the psi span the
        ratio ||w|| / ||grad w|| never exceeds 1 (attained on neutral modes)."""
        rng = np.random.default_rng(202)
        worst = 0.0
        for k in range(100):
            # occasionally concentrate on the neutral band, where the bound saturates
            nmax = 3 if k % 10 == 0 else 7
            f = bandlimited(rng, GRID, nmax, 3)
            split = project_modes(f)
            w = remove_psi_span(f - split.plus_part)
            nw, gw = norm(w), gradient_norm(w)
            if nw < 1e-12:
                continue
            worst = max(worst, nw / gw)
        assert worst <= 1.0 + 1e-9
        assert worst > 0.6  # the probe explored fields near the neutral band


class TestTruncate:
    def test_profile_values(self):
        assert cutoff_profile(0.3) == 1.0
        assert cutoff_profile(1.0) == 1.0
        assert cutoff_profile(2.0) == 0.0
        assert cutoff_profile(2.7) == 0.0
        assert cutoff_profile(1.5) == pytest.approx(0.5, abs=1e-15)
        assert 0.0 < cutoff_profile(1.2) < 1.0

    def test_smoothness_c2(self):
        # quintic smoothstep: chi', chi'' vanish at s=1 and s=2
        h = 1e-4
        for s0 in (1.0, 2.0):
            d1 = (cutoff_profile(s0 + h) - cutoff_profile(s0 - h)) / (2 * h)
            d2 = (cutoff_profile(s0 + h) - 2 * cutoff_profile(s0) + cutoff_profile(s0 - h)) / h**2
            assert abs(d1) <= 1e-6
            assert abs(d2) <= 1e-3

    def test_identity_on_supported_field(self):
        # cutoff radius 10 at tau=-100, gamma=1/2; Gaussian bump well inside
        f = field(lambda a, b, t: np.exp(-(a**2 + b**2)))
        out = truncate(f, -100.0, 0.5)
        inside = np.sqrt(ops_for(GRID).Y1 ** 2 + ops_for(GRID).Y2 ** 2) <= 10.0
        assert np.array_equal(out.values[inside], f.values[inside])

    def test_vanishes_beyond_twice_radius(self):
        grid = GridSpec(hermite_order=24, fourier_modes=4)
        one = FieldSample.from_function(grid, lambda a, b, t: np.ones_like(a))
        out = truncate(one, -9.0, 0.5)  # radius 3, support dies at 6
        ops = ops_for(grid)
        r = np.sqrt(ops.Y1**2 + ops.Y2**2)
        assert np.all(out.values[r >= 6.0] == 0.0)
        mid = (r >= 4.4) & (r <= 5.6)
        assert np.all((out.values[mid] > 0.0) & (out.values[mid] < 1.0))

    def test_idempotent_once_inside(self):
        f = field(lambda a, b, t: np.exp(-(a**2 + b**2)) * np.cos(t))
        once = truncate(f, -100.0, 0.5)
        twice = truncate(once, -100.0, 0.5)
        assert np.max(np.abs(twice.values - once.values)) <= 1e-12

    def test_inactive_warning(self):
        with pytest.warns(TruncationInactiveWarning):
            truncate(field(lambda a, b, t: np.ones_like(a)), -1e6, 0.5)
