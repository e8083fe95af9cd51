"""Theorem-level post-processing: limit matrix, gauge fixing, rotation rates.

A converged backward run determines Q = lim |tau| A(tau).  The analysis
fits Q from the trailing window, checks that its eigenvalues sit on the
quantized menu {0, -1/sqrt(8)}, labels the rank, extracts the distinguished
direction in the rank-one case, measures profile residuals on centered
balls, and quantifies the decay of the off-diagonal coefficient in a fixed
(gauge) frame, which is what rules out asymptotic rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import COLUMNS, TrajectoryRecord
from .riccati import QUANTIZED_VALUE, DecayFit, fit_decay, rotation_matrix


class InsufficientWindowError(ValueError):
    pass


def rotate_sym_triple(v: np.ndarray, theta: float, off_scale: float = 1.0) -> np.ndarray:
    """Conjugate the symmetric matrix [[v1, v3/s], [v3/s, v2]] (s = off_scale)
    by the coordinate rotation R(theta) and return the transformed triple."""
    R = rotation_matrix(theta)
    M = np.array([[v[0], v[2] / off_scale], [v[2] / off_scale, v[1]]])
    M = R.T @ M @ R
    return np.array([M[0, 0], M[1, 1], M[0, 1] * off_scale])


@dataclass
class RotationRateReport:
    """Scaled angle rate |d theta / d sigma| = |tau| |d theta / d tau|."""

    sigmas: np.ndarray
    rates: np.ndarray
    masked: int  # samples dropped for eigenvalue-gap collapse
    label: str  # "zero" | "integrable" | "weak-only" | "none"
    fitted_exponent: float | None = None
    fitted_power: float | None = None


@dataclass
class QReport:
    taus: np.ndarray
    q_series: np.ndarray  # (n, 3): entries (Q11, Q22, Q12) of |tau| A(tau)
    q_limit: np.ndarray  # 2x2 symmetric
    q_confidence: np.ndarray  # per-entry max deviation over the trailing window
    eigenvalues: np.ndarray  # ascending
    rank: int
    quantized: bool
    drift_rate: float | None
    rotation_angle_series: np.ndarray
    gauge_frame: float
    rotation_decay: DecayFit | None
    distinguished_line: np.ndarray | None
    profile_residuals: dict = field(default_factory=dict)  # R -> {"c0": ..., "c2": ...}

    def to_json_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        rd = None
        if self.rotation_decay is not None:
            d = self.rotation_decay
            rd = {
                "exponent": d.exponent if np.isfinite(d.exponent) else "inf",
                "ci_halfwidth": d.ci_halfwidth,
                "residual_rms": d.residual_rms,
                "n_used": d.n_used,
                "n_zero": d.n_zero,
                "identically_zero": d.identically_zero,
            }
        return {
            "q_limit": arr(self.q_limit),
            "q_confidence": arr(self.q_confidence),
            "eigenvalues": arr(self.eigenvalues),
            "rank": self.rank,
            "quantized": self.quantized,
            "drift_rate": self.drift_rate,
            "gauge_frame": self.gauge_frame,
            "rotation_decay": rd,
            "distinguished_line": arr(self.distinguished_line),
            "profile_residuals": {
                str(R): {k: arr(v) for k, v in d.items()} for R, d in self.profile_residuals.items()
            },
        }


def _alpha_matrix_series(record: TrajectoryRecord) -> np.ndarray:
    al = record.alphas()
    out = np.empty((al.shape[0], 2, 2))
    out[:, 0, 0] = al[:, 0]
    out[:, 1, 1] = al[:, 1]
    out[:, 0, 1] = out[:, 1, 0] = al[:, 2]
    return out


def fit_Q(record: TrajectoryRecord, tolerance: float = 0.02 / np.sqrt(8.0)) -> QReport:
    """Fit the limiting matrix and judge quantization at the given tolerance.

    The limit is the average of |tau| A(tau) over the last few samples (the
    trailing 5 percent of the log-time window); a longer averaging window
    would bias the estimate whenever the series is still converging.
    Per-entry confidence is the maximal deviation from the limit over the
    trailing quarter, and a trailing drift larger than the tolerance marks
    the report unquantized, with the drift rate fitted.
    """
    if record.decades() < 2.0:
        raise InsufficientWindowError(
            f"record spans {record.decades():.2f} decades; need at least 2"
        )
    taus = record.taus
    q_series = np.abs(taus)[:, None] * record.alphas()
    n = len(taus)
    tail = slice(3 * n // 4, None)
    q_tail = q_series[tail]
    q_mean = q_series[max(n - max(5, n // 20), 0):].mean(axis=0)
    q_conf = np.max(np.abs(q_tail - q_mean), axis=0)
    q_limit = np.array([[q_mean[0], q_mean[2]], [q_mean[2], q_mean[1]]])

    dev = np.linalg.norm(q_tail - q_mean, axis=1)
    drift_rate = None
    drifting = bool(np.max(dev) > tolerance)
    if np.any(dev > 1e-15):
        sig = record.column("sigma")[tail]
        pos = dev > 1e-15
        if pos.sum() >= 3:
            drift_rate = float(np.polyfit(sig[pos], np.log(dev[pos]), 1)[0])

    eigenvalues, vecs = np.linalg.eigh(q_limit)
    near_zero = np.abs(eigenvalues) <= tolerance
    near_quant = np.abs(eigenvalues - QUANTIZED_VALUE) <= tolerance
    quantized = bool(np.all(near_zero | near_quant)) and not drifting
    rank = int(np.sum(near_quant))

    line = None
    if quantized and rank == 1:
        idx = int(np.argmax(near_quant))
        line = vecs[:, idx].copy()
        k = np.argmax(np.abs(line))
        if line[k] < 0:
            line = -line
    # gauge frame: the limit matrix's eigenframe; the off-diagonal measured
    # there is the rotation content of the whole trajectory
    theta_g = 0.5 * np.arctan2(2 * q_limit[0, 1], q_limit[0, 0] - q_limit[1, 1])
    gauged = np.array([rotate_sym_triple(q, theta_g) for q in q_series])
    z = np.abs(gauged[:, 2])
    sig = record.column("sigma")
    decay = None
    try:
        decay = fit_decay(sig, z, min_span=min(3.0, 0.8 * (sig.max() - sig.min())))
    except ValueError:
        decay = None

    angles = record.column("rotation_angle")

    report = QReport(
        taus=taus,
        q_series=q_series,
        q_limit=q_limit,
        q_confidence=q_conf,
        eigenvalues=eigenvalues,
        rank=rank if quantized else int(np.sum(~near_zero)),
        quantized=quantized,
        drift_rate=drift_rate,
        rotation_angle_series=angles,
        gauge_frame=float(theta_g),
        rotation_decay=decay,
        distinguished_line=line,
    )
    report.profile_residuals = _profile_residuals(record, q_limit)
    return report


def _profile_residuals(record: TrajectoryRecord, q_limit: np.ndarray, radii=(1.0, 2.0, 4.0)) -> dict:
    """Sup-norm residuals of |tau| u against the limiting quadratic profile.

    Exact identity: |tau| u - (y^T Q y - 2 tr Q)
      = y^T (|tau| A - Q) y - 2 tr(|tau| A - Q) + |tau| w,
    evaluated on the stored patch nodes.  The second-derivative residual is
    2 (|tau| A - Q)_{ij} + |tau| w_{ij}.
    """
    patches = record.attachments.get("patches")
    if not patches:
        return {}
    ny1, ny2 = record.attachments["patch_nodes"]
    r2 = ny1**2 + ny2**2
    out = {}
    for R in radii:
        sel = r2 <= R**2 + 1e-12
        if not sel.any():
            continue
        c0 = np.empty(len(patches))
        c2 = np.empty(len(patches))
        for i, pt in enumerate(patches):
            tau = pt["tau"]
            al = record.alphas()[i]
            D = abs(tau) * np.array([[al[0], al[2]], [al[2], al[1]]]) - q_limit
            quad = (
                D[0, 0] * ny1[sel] ** 2
                + D[1, 1] * ny2[sel] ** 2
                + 2 * D[0, 1] * ny1[sel] * ny2[sel]
                - 2 * np.trace(D)
            )
            resid = quad[:, None] + abs(tau) * pt["w"][sel, :]
            c0[i] = np.max(np.abs(resid))
            c2[i] = max(
                np.max(np.abs(2 * D[0, 0] + abs(tau) * pt["w11"][sel, :])),
                np.max(np.abs(2 * D[1, 1] + abs(tau) * pt["w22"][sel, :])),
                np.max(np.abs(2 * D[0, 1] + abs(tau) * pt["w12"][sel, :])),
            )
        out[R] = {"c0": c0, "c2": c2}
    return out


# ---------------------------------------------------------------------------
# gauge fixing


def gauge_fix(record: TrajectoryRecord, tau0: float) -> TrajectoryRecord:
    """Rotate coordinates by the constant angle diagonalizing A(tau0).

    The off-diagonal coefficient vanishes exactly at tau0 in the output.
    Norm-type columns are rotation invariant and pass through; the
    coefficient-matrix triples (alpha, reduced errors, quadratic couplings)
    transform by conjugation.
    """
    taus = record.taus
    i0 = int(np.argmin(np.abs(taus - tau0)))
    if abs(taus[i0] - tau0) > 0.05 * abs(tau0):
        raise ValueError(f"record has no sample near tau0 = {tau0}")
    al0 = record.alphas()[i0]
    theta = 0.5 * np.arctan2(2 * al0[2], al0[0] - al0[1])

    rows = record.rows.copy()
    n = rows.shape[0]
    idx = {name: COLUMNS.index(name) for name in COLUMNS}
    for i in range(n):
        al = rotate_sym_triple(rows[i, idx["alpha1"]:idx["alpha3"] + 1], theta)
        rows[i, idx["alpha1"]:idx["alpha3"] + 1] = al
        a1, a2, a3 = al
        tau = rows[i, idx["tau"]]
        a = -np.sqrt(2.0) * (a1 + a2)
        b = 8.0 * (a1 * a2 - a3**2)
        rows[i, idx["a"]] = a
        rows[i, idx["b"]] = b
        rows[i, idx["c"]] = a3
        rows[i, idx["x"]] = -tau * a
        rows[i, idx["y"]] = tau**2 * b
        rows[i, idx["z"]] = -tau * a3
        rows[i, idx["p"]] = 1.0 - 2.0 * rows[i, idx["x"]]
        rows[i, idx["Q11"]] = abs(tau) * a1
        rows[i, idx["Q22"]] = abs(tau) * a2
        rows[i, idx["Q12"]] = abs(tau) * a3
        for trip, scale in ((("e1", "e2", "e3"), 1.0), (("quad1", "quad2", "quad3"), 2.0)):
            cols = [idx[c] for c in trip]
            if np.all(np.isfinite(rows[i, cols])):
                rows[i, cols] = rotate_sym_triple(rows[i, cols], theta, off_scale=scale)
        gap = abs(a1 - a2) + abs(a3)
        rows[i, idx["rotation_angle"]] = (
            0.5 * np.arctan2(2 * a3, a1 - a2) if gap * abs(tau) > 1e-8 else np.nan
        )
    # pin the anchor exactly
    rows[i0, idx["alpha3"]] = 0.0
    rows[i0, idx["c"]] = 0.0
    rows[i0, idx["z"]] = 0.0
    rows[i0, idx["Q12"]] = 0.0
    meta = dict(record.metadata)
    meta["gauge_angle"] = float(theta)
    meta["gauge_tau0"] = float(taus[i0])
    out = TrajectoryRecord(meta, rows, list(record.flags))
    out.attachments = dict(record.attachments)  # patches stay in the original frame
    return out


# ---------------------------------------------------------------------------
# rotation rate


def rotation_rate(record: TrajectoryRecord, gap_tol: float = 0.03) -> RotationRateReport:
    """|d theta / d sigma| of the diagonalizing angle along the record.

    Rows whose scaled eigenvalue gap |tau| |mu1 - mu2| falls below gap_tol
    are masked (the angle is ill-defined there).  The rate series is then
    classified: exactly zero; decaying like e^{rho sigma} with rho > 0
    (integrable toward -infinity); or decaying only like a power of
    log|tau| = |sigma| (not integrable, the weak regime).
    """
    taus = record.taus
    sig = record.column("sigma")
    al = record.alphas()
    gap = np.abs(taus) * np.sqrt((al[:, 0] - al[:, 1]) ** 2 + 4 * al[:, 2] ** 2)
    ok = gap > gap_tol
    masked = int((~ok).sum())
    raw = 0.5 * np.arctan2(2 * al[:, 2], al[:, 0] - al[:, 1])
    theta = raw + np.pi * np.cumsum(np.r_[0, np.round(-np.diff(raw) / np.pi)])
    rate = np.abs(np.gradient(theta, sig))
    rate[~ok] = np.nan

    good = ok & np.isfinite(rate)
    if not good.any() or np.nanmax(rate[good]) <= 1e-10:
        return RotationRateReport(sig, rate, masked, "zero")
    pos = good & (rate > 0)
    if pos.sum() < 8:
        return RotationRateReport(sig, rate, masked, "none")
    s, r = sig[pos], np.log(rate[pos])
    fit_exp = np.polyfit(s, r, 1)
    res_exp = float(np.sqrt(np.mean((np.polyval(fit_exp, s) - r) ** 2)))
    ls = np.log(np.abs(s))
    fit_pow = np.polyfit(ls, r, 1)
    res_pow = float(np.sqrt(np.mean((np.polyval(fit_pow, ls) - r) ** 2)))
    rho = float(fit_exp[0])
    p = float(-fit_pow[0])
    if res_exp <= res_pow:
        label = "integrable" if rho >= 0.05 else "none"
        return RotationRateReport(sig, rate, masked, label, fitted_exponent=rho)
    # log-power decay: integrable only for powers above one
    label = "weak-only" if p <= 1.2 else "integrable"
    return RotationRateReport(sig, rate, masked, label, fitted_power=p)


# ---------------------------------------------------------------------------
# synthetic records (oracle paths and fixtures)


def record_from_alphas(
    taus: np.ndarray, alphas: np.ndarray, metadata: dict | None = None
) -> TrajectoryRecord:
    """Record carrying only the coefficient columns (reduced-system runs)."""
    taus = np.asarray(taus, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    a1, a2, a3 = alphas[:, 0], alphas[:, 1], alphas[:, 2]
    a = -np.sqrt(2.0) * (a1 + a2)
    b = 8.0 * (a1 * a2 - a3**2)
    x = -taus * a
    y = taus**2 * b
    z = -taus * a3
    gap = np.abs(taus) * np.sqrt((a1 - a2) ** 2 + 4 * a3**2)
    angle = np.where(gap > 1e-10, 0.5 * np.arctan2(2 * a3, a1 - a2), np.nan)
    data = {
        "tau": taus,
        "sigma": -np.log(-taus),
        "alpha1": a1,
        "alpha2": a2,
        "alpha3": a3,
        "a": a,
        "b": b,
        "c": a3,
        "x": x,
        "y": y,
        "z": z,
        "p": 1.0 - 2.0 * x,
        "Q11": np.abs(taus) * a1,
        "Q22": np.abs(taus) * a2,
        "Q12": np.abs(taus) * a3,
        "rotation_angle": angle,
    }
    flags = ["coefficients_only"] * len(taus)
    meta = dict(metadata or {})
    meta.setdefault("kind", "coefficient-record")
    return TrajectoryRecord.from_columns(meta, data, flags)
