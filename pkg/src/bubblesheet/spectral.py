"""Gaussian spectral calculus on the cylinder.

The Hilbert space carries the inner product

    <f, g> = (4 pi)^{-3/2} int_Gamma f g e^{-|q|^2 / 4} dq,

which on the tensor grid reduces to WEIGHT_NORM times the expectation of
f*g under (variance-2 Gaussian) x (variance-2 Gaussian) x (uniform angle).
The generator of the linearized dynamics is the shifted drift Laplacian

    L = d^2/dy1^2 - (y1/2) d/dy1 + d^2/dy2^2 - (y2/2) d/dy2 + (1/2) d^2/dtheta^2 + 1,

self-adjoint in this space, with eigenvalue 1 - n1/2 - n2/2 - m^2/2 on
h_{n1}(y1) h_{n2}(y2) e^{i m theta}.  The unstable subspace (positive
eigenvalues) is spanned by {1, y1, y2, cos theta, sin theta} and the
neutral subspace (eigenvalue zero) by

    {y1^2 - 2, y2^2 - 2, y1 y2, y1 cos theta, y1 sin theta,
     y2 cos theta, y2 sin theta}.

Everything else is stable.  The three quadratic neutral directions are
tracked through the normalized coefficients against
psi1 = y1^2 - 2, psi2 = y2^2 - 2, psi3 = 2 y1 y2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    WEIGHT_NORM,
    FieldSample,
    GridSpec,
    NonFiniteFieldError,
    ops_for,
    warn_if_unresolved,
)


class SpectralError(RuntimeError):
    """Fatal inconsistency in the spectral setup (e.g. broken quadrature)."""


# ---------------------------------------------------------------------------
# basis catalogues


def unstable_basis(grid: GridSpec) -> list[FieldSample]:
    """The five positive modes: eigenvalues (1, 1/2, 1/2, 1/2, 1/2)."""
    return [
        FieldSample.from_function(grid, lambda a, b, t: np.ones_like(a)),
        FieldSample.from_function(grid, lambda a, b, t: a),
        FieldSample.from_function(grid, lambda a, b, t: b),
        FieldSample.from_function(grid, lambda a, b, t: np.cos(t)),
        FieldSample.from_function(grid, lambda a, b, t: np.sin(t)),
    ]


def neutral_basis(grid: GridSpec) -> list[FieldSample]:
    """The seven zero modes, quadratic ones first."""
    return [
        FieldSample.from_function(grid, lambda a, b, t: a**2 - 2),
        FieldSample.from_function(grid, lambda a, b, t: b**2 - 2),
        FieldSample.from_function(grid, lambda a, b, t: a * b),
        FieldSample.from_function(grid, lambda a, b, t: a * np.cos(t)),
        FieldSample.from_function(grid, lambda a, b, t: a * np.sin(t)),
        FieldSample.from_function(grid, lambda a, b, t: b * np.cos(t)),
        FieldSample.from_function(grid, lambda a, b, t: b * np.sin(t)),
    ]


def psi_basis(grid: GridSpec) -> list[FieldSample]:
    """psi1 = y1^2-2, psi2 = y2^2-2, psi3 = 2 y1 y2 (norms^2: 8, 8, 16 x <1,1>)."""
    return [
        FieldSample.from_function(grid, lambda a, b, t: a**2 - 2),
        FieldSample.from_function(grid, lambda a, b, t: b**2 - 2),
        FieldSample.from_function(grid, lambda a, b, t: 2 * a * b),
    ]


def circular_defect_basis(grid: GridSpec) -> list[FieldSample]:
    """The four neutral modes breaking rotational symmetry of the circle factor."""
    return neutral_basis(grid)[3:]


# ---------------------------------------------------------------------------
# inner products and norms


def inner_product(f: FieldSample, g: FieldSample) -> float:
    """Gaussian-weighted inner product by exact tensor quadrature."""
    f._check_same_grid(g)
    ops = ops_for(f.grid)
    val = WEIGHT_NORM * float(np.sum(f.values * g.values * ops.weight3))
    if not np.isfinite(val):
        raise NonFiniteFieldError("inner product is not finite")
    return val


def norm(f: FieldSample) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


def gradient_norm(f: FieldSample, warn: bool = True) -> float:
    """Norm of the intrinsic gradient, |grad f|^2 = f_y1^2 + f_y2^2 + f_theta^2 / 2.

    The 1/2 on the angular term is the metric of the radius-sqrt(2) circle,
    matching the (1/2) d^2/dtheta^2 term of the generator.  Derivatives are
    spectral, hence exact on resolved data.
    """
    if warn:
        warn_if_unresolved(f, "gradient_norm")
    ops = ops_for(f.grid)
    c = ops.to_coeff(f.values)
    d1 = ops.to_values(np.einsum("ab,bjk->ajk", ops.deriv_coeff, c))
    d2 = ops.to_values(np.einsum("ab,jbk->jak", ops.deriv_coeff, c))
    m = np.arange(f.grid.fourier_modes // 2 + 1)
    dth = ops.to_values(c * (1j * m)[None, None, :])
    sq = d1**2 + d2**2 + 0.5 * dth**2
    return float(np.sqrt(max(WEIGHT_NORM * np.sum(sq * ops.weight3), 0.0)))


def apply_L(f: FieldSample) -> FieldSample:
    """Apply the shifted drift Laplacian, diagonally in coefficient space."""
    warn_if_unresolved(f, "apply_L")
    ops = ops_for(f.grid)
    c = ops.to_coeff(f.values)
    return FieldSample(f.grid, ops.to_values(c * ops.eigenvalues))


# ---------------------------------------------------------------------------
# mode decomposition


@dataclass
class SpectralSplit:
    """Decomposition of a field into unstable / neutral / stable parts."""

    plus_part: FieldSample
    neutral_part: FieldSample
    minus_part: FieldSample
    energies: tuple[float, float, float]  # (U_plus, U_zero, U_minus)


class ModeProjector:
    """Cached Gram-solve projections onto the unstable and neutral spans.

    The basis need not be orthogonal or normalized; with exact quadrature
    the Gram matrices are well-conditioned, and a nearly singular one
    signals broken weights rather than a property of the data.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.plus_basis = unstable_basis(grid)
        self.neutral_basis = neutral_basis(grid)
        self.gram_plus = self._gram(self.plus_basis)
        self.gram_neutral = self._gram(self.neutral_basis)

    def _gram(self, basis):
        gram = np.array([[inner_product(a, b) for b in basis] for a in basis])
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e8:
            raise SpectralError(
                f"Gram matrix is near-singular (cond={cond:.3e}); quadrature is broken"
            )
        return gram

    def _project(self, f, basis, gram):
        rhs = np.array([inner_product(f, b) for b in basis])
        coeff = np.linalg.solve(gram, rhs)
        out = FieldSample.zero(f.grid)
        for c, b in zip(coeff, basis):
            out = out + c * b
        return out

    def split(self, f: FieldSample) -> SpectralSplit:
        plus = self._project(f, self.plus_basis, self.gram_plus)
        zero = self._project(f, self.neutral_basis, self.gram_neutral)
        minus = f - plus - zero
        energies = (
            inner_product(plus, plus),
            inner_product(zero, zero),
            inner_product(minus, minus),
        )
        return SpectralSplit(plus, zero, minus, energies)


_PROJECTOR_CACHE: dict[GridSpec, ModeProjector] = {}


def projector_for(grid: GridSpec) -> ModeProjector:
    proj = _PROJECTOR_CACHE.get(grid)
    if proj is None:
        proj = ModeProjector(grid)
        _PROJECTOR_CACHE[grid] = proj
    return proj


def project_modes(f: FieldSample) -> SpectralSplit:
    """Split f into unstable, neutral and stable parts with their energies."""
    return projector_for(f.grid).split(f)


_PSI_NORM2_FACTORS = (8.0, 8.0, 16.0)  # ||psi_j||^2 / <1,1>


def psi_norm2(grid: GridSpec, j: int) -> float:
    return _PSI_NORM2_FACTORS[j - 1] * WEIGHT_NORM


def spectral_coeff(f: FieldSample, j: int) -> float:
    """Normalized coefficient <f, psi_j> / ||psi_j||^2 for j in {1, 2, 3}."""
    if j not in (1, 2, 3):
        raise ValueError(f"j must be 1, 2 or 3, got {j}")
    psi = psi_basis(f.grid)[j - 1]
    return inner_product(f, psi) / psi_norm2(f.grid, j)


def psi_coefficients(f: FieldSample) -> np.ndarray:
    return np.array([spectral_coeff(f, j) for j in (1, 2, 3)])


def remove_psi_span(f: FieldSample) -> FieldSample:
    """Subtract the psi-projections; the remainder of the quadratic tracking."""
    out = f
    for j, psi in enumerate(psi_basis(f.grid), start=1):
        out = out - spectral_coeff(f, j) * psi
    return out


# ---------------------------------------------------------------------------
# cutoff


def cutoff_profile(s):
    """C^2 cutoff: 1 for s <= 1, 0 for s >= 2, quintic smoothstep between.

    chi(1.5) = 1/2; first and second derivatives vanish at both ends.
    """
    s = np.asarray(s, dtype=float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


class TruncationInactiveWarning(UserWarning):
    """The cutoff radius lies beyond the grid; truncation is a no-op."""


def truncate(f: FieldSample, tau: float, gamma: float, warn: bool = True) -> FieldSample:
    """Multiply by the radial cutoff at radius |tau|^gamma in the y-plane."""
    if tau > -1.0:
        raise ValueError(f"tau must be <= -1, got {tau}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    radius = abs(tau) ** gamma
    if radius > f.grid.domain_radius and warn:
        import warnings

        warnings.warn(
            f"cutoff radius {radius:.3g} exceeds domain radius "
            f"{f.grid.domain_radius:.3g}; truncation inactive on the grid",
            TruncationInactiveWarning,
            stacklevel=2,
        )
    ops = ops_for(f.grid)
    r = np.sqrt(ops.Y1**2 + ops.Y2**2)
    return FieldSample(f.grid, f.values * cutoff_profile(r / radius))
