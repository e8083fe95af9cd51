"""Sandbox for the coupled mode-energy differential inequalities.

The three nonnegative energies (U_plus, U_zero, U_minus) are constrained by

    dU+/dtau >= U+ - lam(tau) (U+ + U0 + U-)
    |dU0/dtau| <= lam(tau) (U+ + U0 + U-)
    dU-/dtau <= -U- + lam(tau) (U+ + U0 + U-)

with lam(tau) = Lambda / |tau|^gamma.  The sandbox realizes them as linear
ODEs dU/dtau = M(tau) U where M = diag(1, 0, -1) plus the budget matrix
with slack coefficients s(tau) in [-1, 1] per channel, so every generated
trajectory satisfies the inequalities by construction.

Trajectories are anchored at the least negative time and continued toward
-infinity.  In that direction the stable channel is the exponentially
growing one, so generic numerical continuation would immediately leave the
class of trajectories that stay bounded toward -infinity (the ones the
dominance dichotomy speaks about).  The generator therefore propagates,
per logarithmically spaced step, with the frozen coefficient matrix and
drops its backward-growing spectral component; the retained zero-rate
eigendirection automatically carries the enslaved stable and unstable
energies of size lam * (total).  Magnitudes are kept as (simplex, log)
pairs so enormous admissible drifts of the overall scale cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LambdaParams:
    big_lambda: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.big_lambda <= 0 or not np.isfinite(self.big_lambda):
            raise ValueError("Lambda must be positive and finite")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    def lam(self, tau):
        return self.big_lambda * np.abs(tau) ** (-self.gamma)


class PreconditionError(ValueError):
    """The window violates the smallness assumptions on lam."""


def _check_window(params: LambdaParams, tau_end: float):
    lam_end = params.lam(tau_end)
    if lam_end > 0.1:
        raise PreconditionError(
            f"lam(tau_end) = {lam_end:.4g} violates the bound lam <= 1/10"
        )
    # d(lam)/dtau / lam = gamma / |tau|, largest at tau_end
    if params.gamma / abs(tau_end) > 0.1:
        raise PreconditionError(
            f"lam'/lam = {params.gamma / abs(tau_end):.4g} at tau_end violates lam' <= lam/10"
        )


def slack_functions(seed: int, preset: str = "generic"):
    """Per-channel smooth slack s(sigma) in [-1, 1], sigma = -log(-tau).

    Presets: "generic" seeded random Fourier series; "zero" all slack off;
    "adversarial-minus" pumps the stable channel at its full budget;
    "drain-plus" uses only nonnegative slack on the unstable channel, the
    one-sided realization under which the unstable energy stays enslaved.
    """
    if preset == "zero":
        return lambda sigma: np.zeros(3)
    if preset == "adversarial-minus":
        return lambda sigma: np.array([0.0, 0.0, 1.0])
    rng = np.random.default_rng(seed)
    k = np.arange(1, 5)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    ph = rng.uniform(0, 2 * np.pi, 3)
    scale = np.sum(np.abs(a) + np.abs(b), axis=1)
    scale[scale == 0] = 1.0

    def s(sigma):
        vals = (a * np.cos(np.outer(k, np.ones(3)).T * sigma + ph[:, None])).sum(axis=1)
        vals += (b * np.sin(np.outer(k, np.ones(3)).T * sigma + ph[:, None])).sum(axis=1)
        vals = vals / scale
        if preset == "drain-plus":
            vals[0] = abs(vals[0])
        return vals

    return s


@dataclass
class ModeTrajectory:
    """Samples of (tau, U+, U0, U-) plus the budget parameters.

    Energies are stored as a normalized simplex row times exp(log_scale),
    so admissible scale drifts of hundreds of e-folds stay representable.
    """

    taus: np.ndarray
    simplex: np.ndarray  # (n, 3), rows sum to 1 (or all-zero for trivial data)
    log_scale: np.ndarray  # (n,)
    params: LambdaParams
    seed: int = 0
    preset: str = "generic"
    init_projected: bool = False  # anchor energies adjusted to the admissible set

    def energies(self) -> np.ndarray:
        """Raw (n, 3) energy values; may overflow to inf for extreme drifts."""
        with np.errstate(over="ignore"):
            return self.simplex * np.exp(self.log_scale)[:, None]

    def lam(self) -> np.ndarray:
        return self.params.lam(self.taus)

    def fg_normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """The proof monitors f and g divided by the total energy."""
        lam = self.lam()
        v = self.simplex
        f = v[:, 2] - 2 * lam * (v[:, 0] + v[:, 1])
        g = 8 * lam * v[:, 1] - v[:, 0]
        return f, g

    def is_trivial(self) -> bool:
        return bool(np.all(self.simplex == 0.0))


def generate(
    slack_seed: int,
    init: tuple[float, float, float],
    params: LambdaParams,
    window: tuple[float, float],
    dsigma: float = 0.05,
    preset: str = "generic",
) -> ModeTrajectory:
    """Admissible trajectory anchored at the window's least negative time.

    init gives (U+, U0, U-) at tau_end = max(window).  If the stable entry
    exceeds what any trajectory bounded toward -infinity can carry at the
    anchor, it is projected down (flagged on the result).
    """
    tau_a, tau_b = window
    if not (tau_a < 0 and tau_b < 0):
        raise ValueError("window must be negative in tau")
    tau_far, tau_end = (tau_a, tau_b) if abs(tau_a) > abs(tau_b) else (tau_b, tau_a)
    _check_window(params, tau_end)
    if any(u < 0 for u in init):
        raise ValueError("mode energies must be nonnegative")

    s_fn = slack_functions(slack_seed, preset)

    taus = [tau_end]
    while abs(taus[-1]) < abs(tau_far):
        taus.append(-min(abs(taus[-1]) * np.exp(dsigma), abs(tau_far)))
    taus = np.array(taus)
    n = len(taus)

    total0 = float(sum(init))
    if total0 == 0.0:
        return ModeTrajectory(taus, np.zeros((n, 3)), np.zeros(n), params, slack_seed, preset)

    v = np.array(init, dtype=float) / total0
    log_scale = np.log(total0)
    projected = False

    simplex = np.zeros((n, 3))
    logs = np.zeros(n)

    pure_unstable = init[1] == 0.0 and init[2] == 0.0

    for i in range(n):
        if i > 0:
            tau0, tau1 = taus[i - 1], taus[i]
            ds = abs(tau1) - abs(tau0)
            sig_mid = -np.log(0.5 * (abs(tau0) + abs(tau1)))
            lam = params.lam(-np.exp(-sig_mid))
            sp, s0, sm = s_fn(sig_mid)
            M = np.array(
                [
                    [1.0 - sp * lam, -sp * lam, -sp * lam],
                    [s0 * lam, s0 * lam, s0 * lam],
                    [sm * lam, sm * lam, -1.0 + sm * lam],
                ]
            )
            v, shift = _step_admissible(M, v, ds, drop_growing=not pure_unstable)
            total = v.sum()
            if total <= 0.0:
                v = np.zeros(3)
            else:
                log_scale += np.log(total) + shift
                v = v / total
        elif not pure_unstable:
            # admissibility projection of the anchor: the stable entry of any
            # solution bounded toward -infinity sits at its enslaved scale
            lam = params.lam(taus[0])
            cap = 2.0 * lam * (v[0] + v[1])
            if v[2] > cap:
                projected = True
                v = np.array([v[0], v[1], cap])
                s = v.sum()
                log_scale += np.log(s)
                v = v / s
        simplex[i] = v
        logs[i] = log_scale

    return ModeTrajectory(taus, simplex, logs, params, slack_seed, preset, projected)


def _step_admissible(
    M: np.ndarray, v: np.ndarray, ds: float, drop_growing: bool
) -> tuple[np.ndarray, float]:
    """Propagate v backward by ds under dU/dtau = M U, dropping the spectral
    component of M that grows toward -infinity (eigenvalue near -1).

    Returns (unnormalized state scaled by e^{-shift}, shift) so that a step of
    thousands of time units cannot underflow or overflow.
    """
    g, V = np.linalg.eig(M)
    if np.abs(g.imag).max() > 1e-9:
        raise RuntimeError("budget matrix produced a complex spectrum; lam too large")
    g, V = g.real, V.real
    w = np.linalg.solve(V, v)
    w = np.where(np.abs(w) < 1e-280, 0.0, w)
    order = np.argsort(g)  # ascending, growing-backward mode first
    keep = np.abs(w) > 0.0
    if drop_growing and g[order[0]] <= -0.5:
        keep[order[0]] = False
    if not keep.any():
        return np.zeros(3), 0.0
    shift = float(np.max(-g[keep] * ds))
    factors = np.where(keep, np.exp(np.minimum(-g * ds - shift, 0.0)), 0.0)
    out = V @ (factors * w)
    return np.maximum(out, 0.0), shift


# ---------------------------------------------------------------------------
# classification


@dataclass
class Classification:
    label: str  # "NeutralDominant" | "UnstableDominant" | "Undetermined"
    reason: str = ""
    neutral_ratio_slope: float | None = None  # d log[(U+ + U-)/U0] / d log|tau|
    unstable_ratio_slope: float | None = None


def _ratio_slope(taus, num, den):
    ok = (den > 0) & (num > 0)
    if ok.sum() < 5:
        return None
    x = np.log(np.abs(taus[ok]))
    y = np.log(num[ok] / den[ok])
    return float(np.polyfit(x, y, 1)[0])


def _section_median(num, den, section):
    n, d = num[section], den[section]
    ok = d > 0
    if ok.sum() < 3:
        return None
    return float(np.median(n[ok] / d[ok]))


def classify(traj: ModeTrajectory, min_decades: float = 1.0) -> Classification:
    """Dominance verdict: a ratio counts as vanishing when its trailing-third
    median has dropped well below its leading-third median (or is zero)."""
    if traj.is_trivial():
        return Classification("Undetermined", reason="trivial")
    decades = np.log10(np.abs(traj.taus).max() / np.abs(traj.taus).min())
    if decades < min_decades:
        return Classification("Undetermined", reason=f"window spans {decades:.2f} decades")
    v = traj.simplex
    others0 = v[:, 0] + v[:, 2]
    othersP = v[:, 1] + v[:, 2]
    if np.all(othersP == 0.0) and np.any(v[:, 0] > 0):
        return Classification("UnstableDominant", reason="pure unstable data")
    if np.all(others0 == 0.0) and np.any(v[:, 1] > 0):
        return Classification("NeutralDominant", reason="pure neutral data")
    n = len(traj.taus)
    head, tail = slice(0, n // 3), slice(2 * n // 3, None)
    s0 = _ratio_slope(traj.taus, others0, v[:, 1])
    sP = _ratio_slope(traj.taus, othersP, v[:, 0])

    def vanishes(num, den, abs_floor=0.0):
        h = _section_median(num, den, head)
        t = _section_median(num, den, tail)
        if t is None:
            return False
        if t <= abs_floor:  # already at or below the enslaved budget scale
            return True
        return h is not None and h > 0 and t <= h / 3.0 and t < 1.0

    lam_tail = float(np.median(traj.lam()[tail]))
    if vanishes(others0, v[:, 1], abs_floor=4.0 * lam_tail):
        return Classification("NeutralDominant", neutral_ratio_slope=s0, unstable_ratio_slope=sP)
    if vanishes(othersP, v[:, 0]):
        return Classification("UnstableDominant", neutral_ratio_slope=s0, unstable_ratio_slope=sP)
    return Classification(
        "Undetermined", reason="no decaying ratio trend", neutral_ratio_slope=s0, unstable_ratio_slope=sP
    )


@dataclass
class QuantitativeBound:
    c0: float
    verdict: str  # "consistent" | "inconsistent"
    growth: float  # weighted-ratio max over the full window / over the leading half
    excluded: int  # samples with vanishing neutral energy


def quantitative_bound(traj: ModeTrajectory, growth_tol: float = 1.8) -> QuantitativeBound:
    """Smallest C0 with U+ + U- <= C0 |tau|^{-gamma} U0 on the trailing half.

    The verdict is "consistent" when the weighted ratio
    (U+ + U-)/U0 * |tau|^gamma has a stable running maximum: extending the
    window from its leading half to its full span must not grow the maximum
    by more than growth_tol, otherwise no finite constant can work as
    tau -> -infinity.
    """
    gamma = traj.params.gamma
    v = traj.simplex
    n = len(traj.taus)
    num = v[:, 0] + v[:, 2]
    den = v[:, 1]
    ok = den > 0
    excluded = int((~ok).sum())
    if not ok.any():
        return QuantitativeBound(np.inf, "inconsistent", np.inf, excluded)
    weighted = np.full(n, np.nan)
    weighted[ok] = num[ok] / den[ok] * np.abs(traj.taus[ok]) ** gamma
    tail_ok = ok & (np.arange(n) >= n // 2)
    c0 = float(np.max(weighted[tail_ok])) if tail_ok.any() else np.inf
    lead_ok = ok & (np.arange(n) < n // 2)
    lead_max = float(np.max(weighted[lead_ok])) if lead_ok.any() else 0.0
    full_max = float(np.max(weighted[ok]))
    if full_max == 0.0:
        return QuantitativeBound(0.0, "consistent", 1.0, excluded)
    if lead_max == 0.0:
        growth = np.inf if c0 > 4.0 * traj.params.big_lambda else 1.0
    else:
        growth = full_max / lead_max
    verdict = "consistent" if np.isfinite(c0) and growth <= growth_tol else "inconsistent"
    return QuantitativeBound(c0, verdict, float(growth), excluded)


@dataclass
class FGReport:
    f_over_total: np.ndarray
    g_over_total: np.ndarray
    f_violation: bool  # f > 0 persisting at the ancient end
    g_violation: bool  # g dips below zero somewhere behind its first positive time
    g_first_positive_tau: float | None


def monitor_fg(traj: ModeTrajectory, tol: float = 1e-12, persist: int = 5) -> FGReport:
    """The proof's internal monitors f = U- - 2 lam (U+ + U0), g = 8 lam U0 - U+."""
    f, g = traj.fg_normalized()
    n = len(f)
    k = min(persist, n)
    f_violation = bool(np.all(f[-k:] > tol))
    pos = np.where(g > tol)[0]
    if pos.size:
        first = pos.min()  # largest tau with g > 0 (rows ordered toward -infinity)
        g_violation = bool(np.any(g[first:] < -tol))
        g_tau = float(traj.taus[first])
    else:
        g_violation = False
        g_tau = None
    return FGReport(f, g, f_violation, g_violation, g_tau)


def minus_bound_holds_from(traj: ModeTrajectory, tol: float = 1e-9) -> float | None:
    """First tau (scanning toward -infinity) after which U- <= 2 lam (U0 + U+)
    holds and keeps holding; None if it never settles."""
    lam = traj.lam()
    v = traj.simplex
    ok = v[:, 2] <= 2 * lam * (v[:, 1] + v[:, 0]) + tol
    idx = None
    for i in range(len(ok) - 1, -1, -1):
        if ok[i]:
            idx = i
        else:
            break
    if idx is None:
        return None
    return float(traj.taus[idx])


# ---------------------------------------------------------------------------
# ensembles and serialization


def ensemble(
    n: int,
    params: LambdaParams,
    window: tuple[float, float],
    seed: int = 0,
    unstable_fraction: float = 0.1,
    dsigma: float = 0.05,
) -> list[ModeTrajectory]:
    """Seeded mix of generic, adversarial and pure-unstable members."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        r = rng.uniform()
        if r < unstable_fraction:
            init = (float(rng.uniform(0.1, 2.0)), 0.0, 0.0)
            preset = "zero"
        elif r < unstable_fraction + 0.1:
            init = tuple(rng.uniform(0.1, 2.0, 3))
            preset = "adversarial-minus"
        else:
            init = tuple(rng.uniform(0.1, 2.0, 3))
            preset = "generic"
        out.append(generate(int(rng.integers(0, 2**31)), init, params, window, dsigma, preset))
    return out


MODE_CSV_HEADER = "tau,U_plus,U_zero,U_minus,f,g"


def trajectory_rows(traj: ModeTrajectory) -> list[tuple]:
    """Rows (tau, U+, U0, U-, f, g); values beyond float range become inf."""
    U = traj.energies()
    fn, gn = traj.fg_normalized()
    with np.errstate(over="ignore"):
        scale = np.exp(traj.log_scale)
    return [
        (traj.taus[i], U[i, 0], U[i, 1], U[i, 2], fn[i] * scale[i], gn[i] * scale[i])
        for i in range(len(traj.taus))
    ]
