"""Time stepping for the model evolution (d/dtau - L) u = -u^2 / sqrt(8).

Forward steps use the exact diagonal propagator e^{lam dtau} for the linear
part with a Heun (predictor-corrector) treatment of the quadratic term, so
with the nonlinearity disabled every eigenmode evolves exactly.

Ancient-asymptotic runs walk backward in tau on a log-spaced clock
(dtau = |tau| dsigma).  In that direction the equation is time-reversed and
its stable modes are the exponentially growing ones, so the linear part of
the reversed equation is treated implicitly: each step divides mode k by
(1 + ds lam_k).  Once ds |lam_k| > 2 for every negative eigenvalue, that
division damps all would-be growing modes onto their quasi-statically
enslaved values (the division's fixed point is exactly lam_k u_k = N_k),
which is what selects the solution branch that stays bounded toward
-infinity.  The neutral coefficients feel an explicit Heun step in the
log-clock, whose fixed points coincide with those of the exact reduced
flow to second order in dsigma.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import FieldSample, GridSpec, ops_for
from .records import COLUMNS, TrajectoryRecord
from .riccati import SQRT8, rotation_matrix
from .spectral import (
    circular_defect_basis,
    inner_product,
    norm,
    projector_for,
    psi_basis,
    psi_norm2,
    truncate,
)


class InstabilityError(RuntimeError):
    def __init__(self, message: str, tau: float | None = None, state=None):
        super().__init__(message)
        self.tau = tau
        self.state = state


@dataclass(frozen=True)
class SolverConfig:
    """Scheme parameters; sigma_step drives the log-spaced ancient clock.

    With sigma_step set, each step advances |tau| by the factor
    e^{sigma_step}; otherwise fixed steps of time_step are taken.  The
    explicit quadratic term obeys a CFL-type bound checked per step, and
    backward runs additionally require steps long enough that the implicit
    division damps every stable mode (ds >= stability_margin / |lam|_min).
    """

    grid: GridSpec
    time_step: float = 0.05
    gamma: float = 0.5
    scheme: str = "imex-spectral"
    direction: str = "backward"
    sigma_step: float | None = 0.05
    nonlinear: bool = True
    big_lambda: float = 1.0  # budget constant for the mode-energy monitors
    stability_margin: float = 2.1

    def __post_init__(self):
        if self.scheme != "imex-spectral":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")
        if self.sigma_step is not None and self.sigma_step <= 0:
            raise ValueError("sigma_step must be positive")

    @property
    def delta(self) -> float:
        return 0.5 * self.gamma


@dataclass
class EvolutionState:
    field: FieldSample
    tau: float
    config: SolverConfig

    def __post_init__(self):
        if self.tau >= 0:
            raise ValueError("tau must be negative")

    def rho(self) -> float:
        return abs(self.tau) ** self.config.gamma


@dataclass
class RemainderDiagnostics:
    """Functionals of w = u - sum_j alpha_j psi_j."""

    w_norm: float
    grad_w_norm: float
    cross_terms: np.ndarray  # (3, 3): <psi_i psi_k, w>
    quad_terms: np.ndarray  # (3,): <w^2, psi_k>
    circular_defect: float  # sum of squared couplings to the angular neutral modes


class Evolver:
    """Caches grid transforms and basis fields for one solver configuration."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.ops = ops_for(config.grid)
        self.psi = psi_basis(config.grid)
        self.psi_n2 = np.array([psi_norm2(config.grid, j) for j in (1, 2, 3)])
        self.circular = circular_defect_basis(config.grid)
        self.circular_n2 = np.array([inner_product(b, b) for b in self.circular])
        self.projector = projector_for(config.grid)
        self.r_plane = np.sqrt(self.ops.Y1**2 + self.ops.Y2**2)
        # values-space derivative matrix for one y-axis
        ops = self.ops
        self.dval = ops.synthesis @ ops.deriv_coeff @ ops.analysis

    # -- spectral helpers ---------------------------------------------------

    def psi_coeffs(self, f: FieldSample) -> np.ndarray:
        return np.array([inner_product(f, p) for p in self.psi]) / self.psi_n2

    def remainder(self, f: FieldSample) -> FieldSample:
        w = f
        for c, p in zip(self.psi_coeffs(f), self.psi):
            w = w - c * p
        return w

    def second_derivatives(self, values: np.ndarray):
        """(d11, d22, d12) of grid samples in the two planar directions."""
        D2 = self.dval @ self.dval
        d11 = np.einsum("ai,ijk->ajk", D2, values)
        d22 = np.einsum("bj,ijk->ibk", D2, values)
        d12 = np.einsum("ai,ijk->ajk", self.dval, np.einsum("bj,ijk->ibk", self.dval, values))
        return d11, d22, d12

    # -- stepping -----------------------------------------------------------

    def _nonlinear(self, values: np.ndarray, sign: float) -> np.ndarray:
        if not self.config.nonlinear:
            return np.zeros_like(values)
        return sign * values * values / SQRT8

    def _dtau(self, tau: float) -> tuple[float, float]:
        cfg = self.config
        if cfg.sigma_step is not None:
            tau_new = -abs(tau) * (np.exp(cfg.sigma_step) if cfg.direction == "backward" else np.exp(-cfg.sigma_step))
        else:
            tau_new = tau - cfg.time_step if cfg.direction == "backward" else tau + cfg.time_step
        if tau_new >= 0:
            raise InstabilityError("step crossed tau = 0", tau=tau)
        return tau_new, abs(abs(tau_new) - abs(tau))

    def _check_cfl(self, state: EvolutionState, ds: float):
        """Step bound for the explicit quadratic term, measured in the
        Gaussian bulk.  Values at far nodes carry negligible weight and their
        spectral content sits in strongly damped modes, so they do not set
        the stable step size."""
        if not self.config.nonlinear:
            return
        ball = self.r_plane <= min(2.0 * state.rho(), 6.0)
        sup = float(np.max(np.abs(state.field.values[ball]))) if ball.any() else 0.0
        rate = 2.0 * sup / SQRT8
        if ds * rate > 0.95:
            raise InstabilityError(
                f"explicit quadratic term violates the step bound: ds * rate = {ds * rate:.3g} > 0.95",
                tau=state.tau,
                state=state,
            )

    def step(self, state: EvolutionState) -> EvolutionState:
        return self.advance(state)[1]

    def advance(self, state: EvolutionState) -> tuple[FieldSample, EvolutionState]:
        """One step; returns (pre-truncation field, new state) so callers can
        measure the residual injected by the cutoff."""
        cfg = self.config
        tau_new, ds = self._dtau(state.tau)
        self._check_cfl(state, ds)
        lam = self.ops.eigenvalues
        u = state.field.values
        if cfg.direction == "backward":
            # reversed-time equation d_s u = -L u + u^2 / sqrt(8), implicit linear part
            if ds * 0.5 < cfg.stability_margin:  # least negative eigenvalue is -1/2
                raise InstabilityError(
                    f"backward step ds = {ds:.3g} too short to damp stable modes: "
                    f"needs ds |lam|_min >= {cfg.stability_margin}",
                    tau=state.tau,
                    state=state,
                )
            n0 = self._nonlinear(u, +1.0)
            pred = self.ops.to_values(self.ops.to_coeff(u + ds * n0) / (1.0 + ds * lam))
            n1 = self._nonlinear(pred, +1.0)
            new = self.ops.to_values(self.ops.to_coeff(u + 0.5 * ds * (n0 + n1)) / (1.0 + ds * lam))
        else:
            # exact linear propagator, Heun on the quadratic term
            prop = np.exp(lam * ds)
            n0 = self._nonlinear(u, -1.0)
            pred = self.ops.to_values(prop * self.ops.to_coeff(u + ds * n0))
            n1 = self._nonlinear(pred, -1.0)
            new = self.ops.to_values(prop * self.ops.to_coeff(u + 0.5 * ds * n0) + 0.5 * ds * self.ops.to_coeff(n1))
        pre = FieldSample(cfg.grid, new)
        # energy-growth guard: one step may not inflate the norm beyond the
        # largest linear rate plus margin
        n_old, n_new = norm(state.field), norm(pre)
        if n_new > (n_old + 1e-30) * np.exp(min(1.5 * ds, 500.0)) + 1e-12:
            raise InstabilityError(
                f"norm grew by {n_new / max(n_old, 1e-30):.3g} in one step",
                tau=state.tau,
                state=state,
            )
        out = truncate(pre, min(tau_new, -1.0), cfg.gamma, warn=False)
        return pre, EvolutionState(out, tau_new, cfg)

    # -- diagnostics ----------------------------------------------------------

    def diagnostics(self, state: EvolutionState) -> RemainderDiagnostics:
        f = state.field
        w = self.remainder(f)
        cross = np.zeros((3, 3))
        for i in range(3):
            for k in range(i, 3):
                val = inner_product(self.psi[i].pointwise(self.psi[k]), w)
                cross[i, k] = cross[k, i] = val
        w2 = w.pointwise(w)
        quad = np.array([inner_product(w2, p) for p in self.psi])
        circ = float(sum(inner_product(f, b) ** 2 for b in self.circular))
        from .spectral import gradient_norm

        return RemainderDiagnostics(norm(w), gradient_norm(w, warn=False), cross, quad, circ)

    def measured_errors(self, alpha: np.ndarray, diag: RemainderDiagnostics) -> np.ndarray:
        """Residual channels of the reduced system, measured directly:
        e_k = -(2 sum_i alpha_i <psi_i psi_k, w> + <w^2, psi_k>) / (sqrt8 ||psi_k||^2)."""
        coupling = 2.0 * (alpha @ diag.cross_terms) + diag.quad_terms
        return -coupling / (SQRT8 * self.psi_n2)


_EVOLVERS: dict[SolverConfig, Evolver] = {}


def evolver_for(config: SolverConfig) -> Evolver:
    ev = _EVOLVERS.get(config)
    if ev is None:
        ev = Evolver(config)
        _EVOLVERS[config] = ev
    return ev


def step(state: EvolutionState) -> EvolutionState:
    return evolver_for(state.config).step(state)


def diagnostics(state: EvolutionState) -> RemainderDiagnostics:
    return evolver_for(state.config).diagnostics(state)


# ---------------------------------------------------------------------------
# initial data


@dataclass
class FieldNoiseSpec:
    """Band-limited seeded field noise for ancient runs.

    Modes stay in Hermite degree < nmax and even angular frequencies, and
    the three tracked quadratic directions are projected out, so the noise
    perturbs the remainder sector without re-seeding the coefficients or
    the angular-defect modes.  The amplitude is capped in both the Gaussian
    norm (amplitude_h) and the sup norm (sup_cap), mirroring that initial
    data must stay graphical.
    """

    amplitude_h: float = 0.0
    seed: int = 0
    nmax: int = 5
    sup_cap: float = np.inf

    def build(self, grid: GridSpec) -> FieldSample:
        if self.amplitude_h == 0.0:
            return FieldSample.zero(grid)
        ops = ops_for(grid)
        rng = np.random.default_rng(self.seed)
        vals = np.zeros(grid.shape)
        H = ops.hermite_values
        for _ in range(12 * self.nmax):
            n1, n2 = rng.integers(0, self.nmax, 2)
            m = int(rng.choice([0, 2]))
            amp = rng.standard_normal() / (1.0 + n1 + n2)
            phase = rng.uniform(0, 2 * np.pi)
            vals += amp * np.cos(m * ops.THETA + phase) * H[n1][:, None, None] * H[n2][None, :, None]
        f = FieldSample(grid, vals)
        for j, p in enumerate(psi_basis(grid), start=1):
            f = f - (inner_product(f, p) / psi_norm2(grid, j)) * p
        h = norm(f)
        if h == 0.0:
            return FieldSample.zero(grid)
        scale = min(self.amplitude_h / h, self.sup_cap / max(f.sup_norm(), 1e-300))
        return scale * f


def rank_initial_field(
    grid: GridSpec, tau0: float, q_eigs: tuple[float, float], theta0: float = 0.0
) -> tuple[FieldSample, np.ndarray]:
    """Quadratic initial data with coefficient matrix R^T diag(q)/|tau0| R."""
    R = rotation_matrix(theta0)
    A = R.T @ np.diag(q_eigs) @ R / abs(tau0)
    alpha = np.array([A[0, 0], A[1, 1], A[0, 1]])
    f = FieldSample.zero(grid)
    for c, p in zip(alpha, psi_basis(grid)):
        f = f + c * p
    return f, alpha


# ---------------------------------------------------------------------------
# ancient runs


def run_ancient(
    config: SolverConfig,
    q_eigs: tuple[float, float],
    theta0: float,
    noise: FieldNoiseSpec | None,
    window: tuple[float, float],
    metadata: dict | None = None,
    keep_patches: bool = True,
    patch_radius: float = 4.0,
) -> TrajectoryRecord:
    """Backward run from rank data at tau0 = max(window) toward min(window).

    Records every diagnostic column per step; field patches for profile
    residuals ride along as in-memory attachments.
    """
    tau_a, tau_b = window
    tau_far, tau0 = (tau_a, tau_b) if abs(tau_a) > abs(tau_b) else (tau_b, tau_a)
    if config.direction != "backward":
        raise ValueError("ancient runs integrate backward")
    ev = evolver_for(config)
    grid = config.grid

    u0, _ = rank_initial_field(grid, tau0, q_eigs, theta0)
    if noise is not None:
        u0 = u0 + noise.build(grid)
    u0 = truncate(u0, tau0, config.gamma, warn=False)
    state = EvolutionState(u0, tau0, config)

    ops = ev.ops
    ball = ev.r_plane[:, :, 0] <= patch_radius
    by1, by2 = np.where(ball)

    rows = []
    flags = []
    patches = []
    trunc_rate = 0.0
    trunc_alpha_rate = np.zeros(3)
    aborted = None

    while True:
        tau = state.tau
        sigma = -np.log(-tau)
        alpha = ev.psi_coeffs(state.field)
        a1, a2, a3 = alpha
        a = -np.sqrt(2.0) * (a1 + a2)
        b = 8.0 * (a1 * a2 - a3**2)
        c = a3
        x, y, z = -tau * a, tau**2 * b, -tau * c
        p = 1.0 - 2.0 * x
        split = ev.projector.split(state.field)
        up, u0e, um = split.energies
        lam_budget = config.big_lambda * abs(tau) ** (-config.gamma)
        f_mon = um - 2.0 * lam_budget * (up + u0e)
        g_mon = 8.0 * lam_budget * u0e - up
        diag = ev.diagnostics(state)
        errs = ev.measured_errors(alpha, diag) + trunc_alpha_rate

        row_flags = []
        rho2 = abs(tau) ** (-2.0 * config.gamma)
        if state.field.sup_norm() > rho2:
            row_flags.append("c0_bound")
        d11, d22, d12 = ev.second_derivatives(state.field.values)
        sup_d2 = max(np.max(np.abs(d11)), np.max(np.abs(d22)), np.max(np.abs(d12)))
        if sup_d2 > rho2:
            row_flags.append("c2_bound")
        if float(alpha @ alpha) < 0.1 / tau**2:
            row_flags.append("apriori")

        gap = abs(np.diff(np.linalg.eigvalsh([[a1, a3], [a3, a2]]))[0])
        if gap * abs(tau) > 1e-8:
            angle = 0.5 * np.arctan2(2 * a3, a1 - a2)
        else:
            angle = np.nan
            row_flags.append("angle:eigengap")

        rows.append(
            [
                tau,
                sigma,
                a1,
                a2,
                a3,
                a,
                b,
                c,
                x,
                y,
                z,
                p,
                up,
                u0e,
                um,
                f_mon,
                g_mon,
                diag.w_norm,
                diag.grad_w_norm,
                diag.quad_terms[0],
                diag.quad_terms[1],
                diag.quad_terms[2],
                diag.circular_defect,
                errs[0],
                errs[1],
                errs[2],
                trunc_rate,
                abs(tau) * a1,
                abs(tau) * a2,
                abs(tau) * a3,
                angle,
            ]
        )
        flags.append(";".join(row_flags))

        if keep_patches:
            w = ev.remainder(state.field)
            w11, w22, w12 = ev.second_derivatives(w.values)
            patches.append(
                {
                    "tau": tau,
                    "w": w.values[by1, by2, :].copy(),
                    "w11": w11[by1, by2, :].copy(),
                    "w22": w22[by1, by2, :].copy(),
                    "w12": w12[by1, by2, :].copy(),
                }
            )

        if abs(tau) >= abs(tau_far) - 1e-9:
            break
        try:
            pre, new_state = ev.advance(state)
            # the re-truncation inside the step is the measured source residual
            dtau = new_state.tau - state.tau
            cut = new_state.field - pre
            trunc_rate = norm(cut) / abs(dtau)
            trunc_alpha_rate = ev.psi_coeffs(cut) / dtau
            state = new_state
        except InstabilityError as exc:
            aborted = exc
            break

    meta = dict(metadata or {})
    meta.setdefault("kind", "ancient-run")
    meta["tau0"] = tau0
    meta["tau_far"] = tau_far
    meta["gamma"] = config.gamma
    meta["delta"] = config.delta
    meta["q_eigs"] = list(q_eigs)
    meta["theta0"] = theta0
    if aborted is not None:
        meta["aborted"] = str(aborted)
    record = TrajectoryRecord(meta, np.array(rows), flags)
    if keep_patches:
        record.attachments["patches"] = patches
        record.attachments["patch_nodes"] = (ops.y_nodes[by1], ops.y_nodes[by2])
    return record


def mode_energy_series(record: TrajectoryRecord):
    """Extract (tau, U+, U0, U-) from a trajectory record."""
    if record.rows.shape[0] == 0:
        raise ValueError("record is empty")
    return (
        record.column("tau"),
        record.column("U_plus"),
        record.column("U_zero"),
        record.column("U_minus"),
    )


# ---------------------------------------------------------------------------
# energy-dissipation probe


def probe_energy_monotonicity(
    config: SolverConfig, state: EvolutionState, duration: float = 0.6, nsteps: int = 30
) -> dict:
    """Forward fine-step check of the dissipation inequality.

    Along the forward flow the functional
    (tau - tau_bar) ||grad w||^2 + (1/2) e^{tau_bar - tau} ||w||^2
    may only increase at rate ||g||^2, where g is the remainder's source.
    Valid on windows shorter than log 2 past tau_bar; the probe runs one
    such window and reports the worst discrete violation.
    """
    fwd = replace(config, direction="forward", sigma_step=None, time_step=duration / nsteps)
    ev = evolver_for(fwd)
    tau_bar = state.tau - 1e-6
    s = EvolutionState(state.field, state.tau, fwd)
    from .spectral import gradient_norm

    def functional(st):
        w = ev.remainder(st.field)
        return (st.tau - tau_bar) * gradient_norm(w) ** 2 + 0.5 * np.exp(tau_bar - st.tau) * norm(w) ** 2

    def source_sq(st):
        nl = FieldSample(fwd.grid, -st.field.values**2 / SQRT8)
        g = ev.remainder(nl)
        return norm(g) ** 2

    worst = -np.inf
    vals = [functional(s)]
    for _ in range(nsteps):
        g2 = source_sq(s)
        s = ev.step(s)
        vals.append(functional(s))
        dtau = fwd.time_step
        violation = (vals[-1] - vals[-2]) / dtau - g2
        worst = max(worst, violation)
    return {"worst_violation": worst, "functional": np.array(vals)}
