"""The quadratic ODE system for the neutral coefficients and its reductions.

The symmetric matrix A(tau) = [[a1, a3], [a3, a2]] of the three tracked
coefficients obeys

    dA/dtau = -sqrt(8) A^2 + E(tau),

whose unperturbed flow has the closed form A(tau) = A0 (I + sqrt(8) (tau - tau0) A0)^{-1}.
Two substitutions flatten the asymptotics: with

    a = -sqrt(2) (a1 + a2),  b = 8 (a1 a2 - a3^2),  c = a3

one gets da/dtau = 2a^2 - b, db/dtau = 2ab, dc/dtau = 2ac plus transformed
errors, and with

    x = -tau a,  y = tau^2 b,  z = -tau c,  sigma = -log(-tau)

the autonomous planar part x' = 2x^2 - x - y, y' = 2xy - 2y appears, whose
fixed points (0,0), (1/2,0), (1,1) label the rank of the limiting matrix.
The scaled off-diagonal z obeys z' = (2x - 1) z + E_z and its decay after a
gauge rotation is the quantity of interest for ruling out rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

SQRT8 = float(np.sqrt(8.0))
QUANTIZED_VALUE = -1.0 / SQRT8  # -0.35355339059327373


class RiccatiBlowupError(RuntimeError):
    def __init__(self, message: str, critical_tau: float | None = None, last_state=None):
        super().__init__(message)
        self.critical_tau = critical_tau
        self.last_state = last_state


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class AlphaMatrix:
    """Symmetric 2x2 coefficient matrix at a single time tau < 0.

    The rotation angle is the diagonalizing angle, taken in (-pi/2, pi/2]
    (it is only defined modulo pi); trajectories lift it continuously.
    """

    alpha1: float
    alpha2: float
    alpha3: float
    tau: float

    def __post_init__(self):
        if not self.tau < 0:
            raise ValueError(f"tau must be negative, got {self.tau}")
        if not np.all(np.isfinite([self.alpha1, self.alpha2, self.alpha3])):
            raise ValueError("entries must be finite")

    @classmethod
    def from_matrix(cls, mat: np.ndarray, tau: float) -> "AlphaMatrix":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (2, 2) or abs(mat[0, 1] - mat[1, 0]) > 1e-12 * (1 + np.abs(mat).max()):
            raise ValueError("matrix must be symmetric 2x2")
        return cls(mat[0, 0], mat[1, 1], 0.5 * (mat[0, 1] + mat[1, 0]), tau)

    @classmethod
    def from_rank1(cls, tau: float, theta: float = 0.0, magnitude: float | None = None) -> "AlphaMatrix":
        """Rank-one data R^T diag(q, 0) R / |tau| with q = -1/sqrt(8) by default."""
        q = QUANTIZED_VALUE if magnitude is None else magnitude
        R = rotation_matrix(theta)
        return cls.from_matrix(R.T @ np.diag([q, 0.0]) @ R / abs(tau), tau)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.alpha1, self.alpha3], [self.alpha3, self.alpha2]])

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2, self.alpha3])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def rotation_angle(self) -> float:
        ang = 0.5 * np.arctan2(2.0 * self.alpha3, self.alpha1 - self.alpha2)
        if ang <= -np.pi / 2:
            ang += np.pi
        return float(ang)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))

    def within_apriori_band(self, big_c: float = 10.0) -> bool:
        """Whether 1/(C|tau|) <= |vec| <= C/|tau| for the given C."""
        r = self.norm() * abs(self.tau)
        return 1.0 / big_c <= r <= big_c


def rhs_alpha(alpha: np.ndarray) -> np.ndarray:
    a1, a2, a3 = alpha
    return np.array(
        [
            -SQRT8 * (a1**2 + a3**2),
            -SQRT8 * (a2**2 + a3**2),
            -SQRT8 * (a1 + a2) * a3,
        ]
    )


def exact_riccati(A0: AlphaMatrix, tau0: float, tau: float) -> AlphaMatrix:
    """Closed-form unperturbed flow A(tau) = A0 (I + sqrt(8)(tau - tau0) A0)^{-1}.

    The formula has a pole whenever 1 + sqrt(8)(tau - tau0) mu = 0 for an
    eigenvalue mu of A0; crossing it silently would land on the wrong branch,
    so any pole inside the requested interval raises.
    """
    if not (tau0 < 0 and tau < 0):
        raise ValueError("times must be negative")
    crit = _critical_tau(A0, tau0, tau)
    if crit is not None:
        raise RiccatiBlowupError(f"flow blows up at tau = {crit:.6g}", critical_tau=crit)
    M = np.eye(2) + SQRT8 * (tau - tau0) * A0.matrix
    out = A0.matrix @ np.linalg.inv(M)
    out = 0.5 * (out + out.T)  # symmetrize round-off
    return AlphaMatrix.from_matrix(out, tau)


def _critical_tau(A0: AlphaMatrix, tau0: float, tau: float) -> float | None:
    span = abs(tau - tau0)
    crits = []
    for mu in np.linalg.eigvalsh(A0.matrix):
        if mu != 0.0:
            t = tau0 - 1.0 / (SQRT8 * mu)
            if min(tau0, tau) - 1e-12 * span <= t <= max(tau0, tau) + 1e-12 * span:
                crits.append(t)
    if not crits:
        return None
    return float(min(crits, key=lambda t: abs(t - tau0)))


# ---------------------------------------------------------------------------
# perturbations


@dataclass
class PerturbationSpec:
    """Seeded error channels bounded by a power-law envelope.

    kind "zero" disables the channels; "bounded-power" realizes
    E_j(t) = amplitude * m_j(t) / |t|^exponent with a smooth modulation
    |m_j| <= 1 built from a short random Fourier series in log-time
    (worst_case replaces m_j by the constant 1); "user" wires explicit
    callables in.  In the (x, y, z) variables the same spec realizes
    channels whose absolute sum is bounded by amplitude * e^{exponent * sigma}.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    exponent: float = 2.25
    seed: int = 0
    worst_case: bool = False
    channels: tuple | None = None  # kind == "user": callables of the time variable

    def __post_init__(self):
        if self.kind not in ("zero", "bounded-power", "user"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")

    def _modulations(self, n_channels: int):
        rng = np.random.default_rng(self.seed)
        k = np.arange(1, 5)
        a = rng.standard_normal((n_channels, 4))
        b = rng.standard_normal((n_channels, 4))
        ph = rng.uniform(0, 2 * np.pi, n_channels)
        scale = np.sum(np.abs(a) + np.abs(b), axis=1)
        scale[scale == 0] = 1.0

        def mod(j, s):
            if self.worst_case:
                return 1.0
            return float(
                (np.sum(a[j] * np.cos(k * s + ph[j])) + np.sum(b[j] * np.sin(k * s + ph[j])))
                / scale[j]
            )

        return mod

    def alpha_channels(self):
        """Callables E_j(tau), j = 0..2, with |E_j| <= amplitude/|tau|^exponent."""
        if self.kind == "zero":
            return tuple((lambda tau: 0.0) for _ in range(3))
        if self.kind == "user":
            return self.channels
        mod = self._modulations(3)

        def make(j):
            def E(tau):
                sigma = -np.log(-tau)
                return self.amplitude * mod(j, sigma) / abs(tau) ** self.exponent

            return E

        return tuple(make(j) for j in range(3))

    def xyz_channels(self, delta: float):
        """Callables E_x, E_y, E_z of sigma with |E_x|+|E_y|+|E_z| <= amplitude e^{delta sigma}."""
        if self.kind == "zero":
            return tuple((lambda s: 0.0) for _ in range(3))
        if self.kind == "user":
            return self.channels
        mod = self._modulations(3)

        def make(j):
            def E(sigma):
                return (self.amplitude / 3.0) * mod(j, sigma) * np.exp(delta * sigma)

            return E

        return tuple(make(j) for j in range(3))


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class AlphaTrajectory:
    taus: np.ndarray
    alphas: np.ndarray  # (n, 3)

    def at(self, i: int) -> AlphaMatrix:
        return AlphaMatrix(*self.alphas[i], tau=self.taus[i])

    def __len__(self):
        return len(self.taus)

    def rotation_angles(self) -> np.ndarray:
        """Diagonalizing angle, lifted continuously along the trajectory."""
        raw = 0.5 * np.arctan2(2 * self.alphas[:, 2], self.alphas[:, 0] - self.alphas[:, 1])
        # the angle is defined modulo pi; unwrap with that period
        return raw + np.pi * np.cumsum(np.r_[0, np.round(-np.diff(raw) / np.pi)])


def integrate_alpha(
    A0: AlphaMatrix,
    pert: PerturbationSpec,
    tau_window: tuple[float, float],
    n_output: int = 200,
    rtol: float = 1e-11,
    atol: float = 1e-14,
) -> AlphaTrajectory:
    """Adaptive high-order integration of the coefficient system.

    The window is traversed from its first entry to its second; backward
    windows (toward -infinity) are the ancient-asymptotic direction.
    """
    tau_from, tau_to = tau_window
    if not (tau_from < 0 and tau_to < 0):
        raise ValueError("window must be strictly negative in tau")
    if A0.tau != tau_from:
        raise ValueError(f"A0 is anchored at tau={A0.tau}, window starts at {tau_from}")
    E = pert.alpha_channels()

    def rhs(t, y):
        return rhs_alpha(y) + np.array([E[0](t), E[1](t), E[2](t)])

    ts = _geom_times(tau_from, tau_to, n_output)
    sol = solve_ivp(rhs, (tau_from, tau_to), A0.vec, t_eval=ts, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success or sol.t.size < ts.size:
        last_t = sol.t[-1] if sol.t.size else tau_from
        last_y = sol.y[:, -1] if sol.t.size else A0.vec
        raise RiccatiBlowupError(
            f"integration stalled at tau = {last_t:.6g}: {sol.message}",
            critical_tau=float(last_t),
            last_state=np.asarray(last_y),
        )
    return AlphaTrajectory(sol.t.copy(), sol.y.T.copy())


def _geom_times(t_from: float, t_to: float, n: int) -> np.ndarray:
    # log-spaced in |tau|; covers decades evenly in sigma
    return -np.geomspace(abs(t_from), abs(t_to), n) * np.sign(1.0)


# ---------------------------------------------------------------------------
# substitutions


@dataclass
class RiccatiState:
    """Either (a, b, c) at time tau or (x, y, z) at sigma = -log(-tau)."""

    form: str  # "abc" | "xyz"
    values: tuple[float, float, float]
    time: float  # tau for abc, sigma for xyz

    def __post_init__(self):
        if self.form not in ("abc", "xyz"):
            raise ValueError(f"form must be 'abc' or 'xyz', got {self.form!r}")
        if self.form == "abc" and not self.time < 0:
            raise ValueError("tau must be negative")

    @property
    def p(self) -> float:
        if self.form != "xyz":
            raise ValueError("p is defined for the xyz form")
        return 1.0 - 2.0 * self.values[0]


def abc_from_alpha(alpha: np.ndarray, tau: float) -> RiccatiState:
    a1, a2, a3 = alpha
    return RiccatiState("abc", (-np.sqrt(2.0) * (a1 + a2), 8.0 * (a1 * a2 - a3**2), a3), tau)


def to_xyz(state: RiccatiState) -> RiccatiState:
    if state.form != "abc":
        raise ValueError("to_xyz expects the abc form")
    tau = state.time
    if tau >= 0:
        raise ValueError(f"tau must be negative, got {tau}")
    a, b, c = state.values
    return RiccatiState("xyz", (-tau * a, tau**2 * b, -tau * c), float(-np.log(-tau)))


def from_xyz(state: RiccatiState) -> RiccatiState:
    if state.form != "xyz":
        raise ValueError("from_xyz expects the xyz form")
    tau = -np.exp(-state.time)
    x, y, z = state.values
    return RiccatiState("abc", (-x / tau, y / tau**2, -z / tau), float(tau))


def rhs_xyz(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([2 * x**2 - x - y, 2 * x * y - 2 * y, 2 * x * z - z])


@dataclass
class XYZTrajectory:
    sigmas: np.ndarray
    states: np.ndarray  # (n, 3)
    p_condition_sigma: float | None = None  # largest sigma* with sup_{s<=s*} |p| <= delta/3

    @property
    def p(self) -> np.ndarray:
        return 1.0 - 2.0 * self.states[:, 0]


def integrate_xyz(
    init: tuple[float, float, float],
    pert: PerturbationSpec,
    sigma_window: tuple[float, float],
    delta: float = 0.25,
    n_output: int = 200,
    rtol: float = 1e-11,
    atol: float = 1e-14,
) -> XYZTrajectory:
    """Integrate the scaled system; direction is given by the window order."""
    s_from, s_to = sigma_window
    if not np.isfinite([s_from, s_to]).all():
        raise ValueError("window must be finite")
    E = pert.xyz_channels(delta)

    def rhs(s, v):
        return rhs_xyz(v) + np.array([E[0](s), E[1](s), E[2](s)])

    ts = np.linspace(s_from, s_to, n_output)
    sol = solve_ivp(rhs, (s_from, s_to), np.asarray(init, dtype=float), t_eval=ts, method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success or sol.t.size < ts.size:
        last_t = sol.t[-1] if sol.t.size else s_from
        last_y = sol.y[:, -1] if sol.t.size else np.asarray(init)
        raise RiccatiBlowupError(
            f"integration stalled at sigma = {last_t:.6g}: {sol.message}",
            critical_tau=float(-np.exp(-last_t)),
            last_state=np.asarray(last_y),
        )
    traj = XYZTrajectory(sol.t.copy(), sol.y.T.copy())
    p = np.abs(traj.p)
    order = np.argsort(traj.sigmas)
    running = np.maximum.accumulate(p[order])  # sup over sigma <= s
    ok = traj.sigmas[order][running <= delta / 3.0]
    traj.p_condition_sigma = float(ok.max()) if ok.size else None
    return traj


# ---------------------------------------------------------------------------
# fixed points of the planar system


@dataclass
class FixedPointInfo:
    xy: tuple[float, float]
    jacobian: np.ndarray
    eigenvalues: tuple[float, float]  # descending
    rank: int


def fixed_points() -> list[FixedPointInfo]:
    """Fixed points and Jacobian spectra of x' = 2x^2 - x - y, y' = 2xy - 2y.

    Solved symbolically so the table is computed, not transcribed.
    """
    import sympy as sp

    x, y = sp.symbols("x y", real=True)
    F = sp.Matrix([2 * x**2 - x - y, 2 * x * y - 2 * y])
    J = F.jacobian([x, y])
    sols = sp.solve(F, [x, y], dict=True)
    out = []
    for s in sols:
        xv, yv = s[x], s[y]
        Jnum = np.array(J.subs(s).evalf(), dtype=float)
        eigs = sorted((complex(e) for e in J.subs(s).eigenvals()), key=lambda e: -e.real)
        if any(abs(e.imag) > 1e-12 for e in eigs):
            raise RuntimeError("unexpected complex spectrum at a fixed point")
        xf = float(xv)
        rank = {0.0: 0, 0.5: 1, 1.0: 2}[round(xf, 12)]
        out.append(FixedPointInfo((xf, float(yv)), Jnum, tuple(float(e.real) for e in eigs), rank))
    out.sort(key=lambda fp: fp.xy[0])
    return out


# ---------------------------------------------------------------------------
# decay fitting


@dataclass
class DecayFit:
    exponent: float
    ci_halfwidth: float
    residual_rms: float
    n_used: int
    n_zero: int
    identically_zero: bool = False


def fit_decay(sigmas: np.ndarray, magnitudes: np.ndarray, min_span: float = 3.0) -> DecayFit:
    """Least-squares slope of log |z| against sigma.

    Zero samples are excluded and reported; an all-zero series counts as
    infinitely fast decay.  Requires >= 10 positive samples spanning at
    least min_span units of sigma.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    magnitudes = np.asarray(magnitudes, dtype=float)
    if sigmas.shape != magnitudes.shape:
        raise ValueError("series must have matching shapes")
    if np.any(magnitudes < 0):
        raise ValueError("magnitudes must be nonnegative")
    pos = magnitudes > 0
    n_zero = int(np.sum(~pos))
    if not pos.any():
        return DecayFit(np.inf, 0.0, 0.0, 0, n_zero, identically_zero=True)
    s, m = sigmas[pos], np.log(magnitudes[pos])
    if s.size < 10:
        raise ValueError(f"need at least 10 positive samples, got {s.size}")
    if s.max() - s.min() < min_span:
        raise ValueError(
            f"series spans {s.max() - s.min():.3g} units of sigma, need >= {min_span}"
        )
    A = np.vstack([s, np.ones_like(s)]).T
    coef, res, *_ = np.linalg.lstsq(A, m, rcond=None)
    fit = A @ coef
    rms = float(np.sqrt(np.mean((m - fit) ** 2)))
    # standard error of the slope
    sxx = float(np.sum((s - s.mean()) ** 2))
    dof = max(s.size - 2, 1)
    se = np.sqrt(np.sum((m - fit) ** 2) / dof / sxx) if sxx > 0 else np.inf
    return DecayFit(float(coef[0]), float(1.96 * se), rms, int(s.size), n_zero)


# ---------------------------------------------------------------------------
# gauge


def gauge_angle(A: AlphaMatrix) -> float:
    """Angle of the coordinate rotation that zeroes the off-diagonal entry."""
    return A.rotation_angle


def rotate_alpha(alpha: np.ndarray, theta: float) -> np.ndarray:
    """Entries of R(theta)^T A R(theta) for the 3-vector (a1, a2, a3)."""
    R = rotation_matrix(theta)
    a1, a2, a3 = alpha
    M = R.T @ np.array([[a1, a3], [a3, a2]]) @ R
    return np.array([M[0, 0], M[1, 1], M[0, 1]])
