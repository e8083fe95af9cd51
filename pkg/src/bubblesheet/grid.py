"""Discretization of the cylinder Gamma = R^2 x S^1(sqrt 2).

Points are parametrized by (y1, y2, theta) with the angular coordinate
theta in [0, 2pi); the circle factor has radius sqrt(2), so arc length is
sqrt(2) dtheta and the squared distance from the axis contributes a
constant 2 to |q|^2 = y1^2 + y2^2 + 2.

Fields are sampled on a tensor grid: Gauss-Hermite nodes matched to the
weight e^{-y^2/4} (a variance-2 Gaussian) on each y-axis, uniform nodes in
theta.  With that choice all Gaussian-weighted inner products of
polynomial-times-trigonometric functions up to the resolution cutoff are
computed exactly, and the drift Laplacian is diagonal in the matching
Hermite-Fourier coefficient basis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# Normalization constant of the Gaussian inner product: <1,1> = sqrt(2 pi) e^{-1/2}.
# It is (4 pi)^{-3/2} * (circle length 2 sqrt(2) pi) * (4 pi from the two
# Gaussian y-integrals) * e^{-2/4}.
WEIGHT_NORM = float(np.sqrt(2.0 * np.pi) * np.exp(-0.5))


class GridMismatchError(ValueError):
    """Two fields live on different grids and cannot be combined."""


class NonFiniteFieldError(FloatingPointError):
    """A field contains NaN or infinite samples."""


@dataclass(frozen=True)
class GridSpec:
    """Resolution parameters for the tensor grid on the cylinder.

    hermite_order: number of Gauss-Hermite nodes per y-axis.
    fourier_modes: number of uniform theta nodes.
    domain_radius: nominal radius in y covered by the grid; used only to
        warn when a cutoff radius exceeds what the grid can represent.
        If not given it defaults to the outermost Hermite node.
    """

    hermite_order: int = 24
    fourier_modes: int = 8
    domain_radius: float = field(default=0.0)

    def __post_init__(self):
        if self.hermite_order < 4:
            raise ValueError(f"hermite_order must be >= 4, got {self.hermite_order}")
        if self.fourier_modes < 2:
            raise ValueError(f"fourier_modes must be >= 2, got {self.fourier_modes}")
        if self.domain_radius < 0:
            raise ValueError("domain_radius must be positive")
        if self.domain_radius == 0.0:
            nodes, _ = _hermite_rule(self.hermite_order)
            object.__setattr__(self, "domain_radius", float(np.max(np.abs(nodes))))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.hermite_order, self.hermite_order, self.fourier_modes)


def _hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and normalized weights for the variance-2 Gaussian measure.

    Substituting y = 2x into int f(y) e^{-y^2/4} dy maps the rule onto the
    classical e^{-x^2} Gauss-Hermite rule; dividing by the total mass
    2 sqrt(pi) yields weights that sum to one, so sums against them are
    expectations under N(0, 2).
    """
    x, w = np.polynomial.hermite.hermgauss(n)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError(f"hermite_order={n} produced degenerate quadrature weights")
    return 2.0 * x, w / np.sqrt(np.pi)


class GridOps:
    """Cached node arrays, quadrature weights and spectral transforms."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n, m = spec.hermite_order, spec.fourier_modes
        self.y_nodes, self.y_weights = _hermite_rule(n)
        self.theta_nodes = 2.0 * np.pi * np.arange(m) / m

        # Orthonormal Hermite values H[k, i] = h_k(y_i) with E[h_j h_k] = delta_jk
        # under N(0,2).  Recurrence: h_{k+1} = (y h_k - sqrt(2k) h_{k-1}) / sqrt(2(k+1)).
        H = np.zeros((n, n))
        H[0] = 1.0
        if n > 1:
            H[1] = self.y_nodes / np.sqrt(2.0)
        for k in range(1, n - 1):
            H[k + 1] = (self.y_nodes * H[k] - np.sqrt(2.0 * k) * H[k - 1]) / np.sqrt(2.0 * (k + 1))
        self.hermite_values = H
        self.analysis = H * self.y_weights[None, :]  # coeffs = analysis @ samples
        self.synthesis = H.T

        # Tensor quadrature weight for the normalized expectation E[.].
        self.weight3 = (
            self.y_weights[:, None, None]
            * self.y_weights[None, :, None]
            * np.full((1, 1, m), 1.0 / m)
        )

        self.Y1, self.Y2, self.THETA = np.meshgrid(
            self.y_nodes, self.y_nodes, self.theta_nodes, indexing="ij"
        )

        # Eigenvalues of the drift Laplacian plus one on h_{n1} h_{n2} e^{i m theta}.
        n1 = np.arange(n)[:, None, None]
        n2 = np.arange(n)[None, :, None]
        mm = np.arange(m // 2 + 1)[None, None, :]
        self.eigenvalues = 1.0 - 0.5 * n1 - 0.5 * n2 - 0.5 * mm**2

        # First-derivative matrix in coefficient space: h_k' = sqrt(k/2) h_{k-1}.
        D = np.zeros((n, n))
        for k in range(1, n):
            D[k - 1, k] = np.sqrt(k / 2.0)
        self.deriv_coeff = D

    def to_coeff(self, values: np.ndarray) -> np.ndarray:
        """Hermite x Hermite x rFFT coefficient tensor of grid samples."""
        c = np.einsum("ni,ijk->njk", self.analysis, values)
        c = np.einsum("mj,njk->nmk", self.analysis, c)
        return np.fft.rfft(c, axis=2) / self.spec.fourier_modes

    def to_values(self, coeff: np.ndarray) -> np.ndarray:
        v = np.fft.irfft(coeff * self.spec.fourier_modes, n=self.spec.fourier_modes, axis=2)
        v = np.einsum("in,nmk->imk", self.synthesis, v)
        return np.einsum("jm,imk->ijk", self.synthesis, v)

    def top_band_energy(self, values: np.ndarray) -> float:
        """Relative weight of the outermost Hermite/Fourier band.

        A proxy for unresolved content: spectrally exact operations are
        trustworthy only when this is at round-off level.
        """
        c = self.to_coeff(values)
        power = np.abs(c) ** 2
        power[..., 1:] *= 2.0  # rfft halves every nonzero frequency
        total = float(power.sum())
        if total == 0.0:
            return 0.0
        edge = float(power[-1, :, :].sum() + power[:-1, -1, :].sum() + power[:-1, :-1, -1].sum())
        return edge / total


_OPS_CACHE: dict[GridSpec, GridOps] = {}


def ops_for(spec: GridSpec) -> GridOps:
    ops = _OPS_CACHE.get(spec)
    if ops is None:
        ops = GridOps(spec)
        _OPS_CACHE[spec] = ops
    return ops


@dataclass
class FieldSample:
    """A real function on the cylinder sampled on the tensor grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteFieldError("field contains non-finite samples")

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "FieldSample":
        ops = ops_for(grid)
        return cls(grid, np.asarray(fn(ops.Y1, ops.Y2, ops.THETA), dtype=float) * np.ones(grid.shape))

    @classmethod
    def zero(cls, grid: GridSpec) -> "FieldSample":
        return cls(grid, np.zeros(grid.shape))

    def _check_same_grid(self, other: "FieldSample"):
        if self.grid != other.grid:
            raise GridMismatchError(f"grids differ: {self.grid} vs {other.grid}")

    def __add__(self, other: "FieldSample") -> "FieldSample":
        self._check_same_grid(other)
        return FieldSample(self.grid, self.values + other.values)

    def __sub__(self, other: "FieldSample") -> "FieldSample":
        self._check_same_grid(other)
        return FieldSample(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "FieldSample":
        return FieldSample(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "FieldSample":
        return FieldSample(self.grid, -self.values)

    def pointwise(self, other: "FieldSample") -> "FieldSample":
        """Pointwise product, e.g. for quadratic nonlinearities."""
        self._check_same_grid(other)
        return FieldSample(self.grid, self.values * other.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


class ResolutionWarning(UserWarning):
    """A spectral operation was applied to under-resolved data."""


def warn_if_unresolved(f: FieldSample, where: str, threshold: float = 1e-8):
    frac = ops_for(f.grid).top_band_energy(f.values)
    if frac > threshold:
        warnings.warn(
            f"{where}: top spectral band carries {frac:.3e} of the energy; "
            "result may be truncated",
            ResolutionWarning,
            stacklevel=3,
        )
