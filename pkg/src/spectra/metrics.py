"""Convergence diagnostics over recorded traces.

Distance/alignment measurements against a reference matrix, least-squares
rate fits (geometric decay on a log scale, sublinear decay on a log-log
scale after removing a noise floor), and empirical estimation of the
condition parameter kappa = mu/L from loss, distance, and subgradient-norm
columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral_core import as_matrix
from .optimizers import Trace

__all__ = [
    "RateFit",
    "dist_to",
    "relative_error",
    "alignment",
    "fit_linear_rate",
    "fit_sublinear_rate",
    "estimate_kappa",
    "analyze_trace",
    "DIST_FLOOR",
]

# distances below this are indistinguishable from fp stagnation and are
# excluded from every fit window
DIST_FLOOR = 1e-13

_DEFAULT_SKIP = 10  # transient iterations excluded by the default window


def dist_to(x, x_ref) -> float:
    """Frobenius distance ||x - x_ref||_F."""
    a = as_matrix(x)
    b = as_matrix(x_ref, name="x_ref")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))

def relative_error(x, x_ref) -> float:
    """||x - x_ref||_F / ||x_ref||_F; the reference must be nonzero."""
    b = as_matrix(x_ref, name="x_ref")
    nref = float(np.linalg.norm(b))
    if nref == 0.0:
        raise ValueError("relative error needs a nonzero reference")
    return dist_to(x, x_ref) / nref


def alignment(x, x_ref, direction) -> float:
    """<x - x_ref, direction> / ||x - x_ref||_F.

    Positive alignment means the direction points away from the reference,
    i.e. a step x - eta*direction moves toward it.  Bounded by +-sqrt(r)
    when direction is a rank-r partial isometry.
    """
    a = as_matrix(x)
    b = as_matrix(x_ref, name="x_ref")
    d = as_matrix(direction, name="direction")
    diff = a - b
    nd = float(np.linalg.norm(diff))
    if nd == 0.0:
        raise ValueError("alignment is undefined at x == x_ref")
    return float(np.sum(diff * d) / nd)


@dataclass(frozen=True)
class RateFit:
    """Least-squares rate fit over a trace window.

    kind 'linear_log': log(dist) vs t, so exp(slope) estimates the geometric
    decay factor.  kind 'sublinear_sqrt': log(dist - floor) vs log(t), where
    a slope near -1/2 matches a 1/sqrt(t) tail.
    """

    kind: str
    slope: float
    intercept: float
    r_squared: float
    window: tuple[int, int]

    @property
    def gamma_hat(self) -> float:
        """Estimated per-iteration decay factor (meaningful for linear_log)."""
        return math.exp(self.slope)


def _line_fit(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot < 1e-300 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return float(slope), float(intercept), r2


def _window_rows(trace: Trace, window):
    t = trace.t
    if window is None:
        lo, hi = _DEFAULT_SKIP, None
    else:
        lo, hi = window
    mask = t >= lo
    if hi is not None:
        mask &= t < hi
    return mask


def fit_linear_rate(trace: Trace, window: tuple[int, int] | None = None) -> RateFit:
    """Fit log(dist) = slope*t + intercept over the window.

    The default window drops the first 10 iterations; rows with dist below
    the fp stagnation floor (or NaN) are always trimmed.  Raises ValueError
    when fewer than two usable rows remain.
    """
    mask = _window_rows(trace, window)
    d = trace.dist
    mask &= np.isfinite(d) & (d >= DIST_FLOOR)
    if mask.sum() < 2:
        raise ValueError("fit window is empty after trimming nonpositive distances")
    t = trace.t[mask]
    slope, intercept, r2 = _line_fit(t, np.log(d[mask]))
    return RateFit(
        kind="linear_log",
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        window=(int(t[0]), int(t[-1]) + 1),
    )


def fit_sublinear_rate(
    trace: Trace, window: tuple[int, int] | None = None, floor: float = 0.0
) -> RateFit:
    """Fit log(dist - floor) = slope*log(t) + intercept over the window.

    `floor` is the additive noise level the distance is expected to stall
    at; rows at or below it are trimmed, as are t = 0 rows (log t).
    """
    if floor < 0.0:
        raise ValueError(f"floor must be >= 0, got {floor}")
    mask = _window_rows(trace, window)
    d = trace.dist
    mask &= np.isfinite(d) & (d - floor >= DIST_FLOOR) & (trace.t >= 1)
    if mask.sum() < 2:
        raise ValueError("fit window is empty after trimming rows at or below the floor")
    t = trace.t[mask]
    slope, intercept, r2 = _line_fit(np.log(t), np.log(d[mask] - floor))
    return RateFit(
        kind="sublinear_sqrt",
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        window=(int(t[0]), int(t[-1]) + 1),
    )


def estimate_kappa(trace: Trace, f_star: float | None = None):
    """Empirical condition estimate from a trace:
    mu_hat = min_t (f_t - f*)/dist_t over rows with usable distance,
    L_hat = max_t ||G_t||_F, kappa_hat = mu_hat / L_hat.

    f_star defaults to the minimum loss seen in the trace (which makes
    mu_hat = 0 when the minimizing row also has usable distance -- pass the
    known optimal value for a meaningful estimate).
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    f = trace.f
    if f_star is None:
        f_star = float(np.min(f))
    d = trace.dist
    mask = np.isfinite(d) & (d >= DIST_FLOOR)
    if not mask.any():
        raise ValueError("no rows with usable distance")
    mu_hat = float(np.min((f[mask] - f_star) / d[mask]))
    L_hat = float(np.max(trace.grad_fro))
    if L_hat <= 0.0:
        raise ValueError("trace has no nonzero subgradient norms")
    return mu_hat, L_hat, mu_hat / L_hat


def analyze_trace(
    trace: Trace,
    f_star: float | None = None,
    floor: float = 0.0,
    window: tuple[int, int] | None = None,
) -> dict:
    """Full diagnostic report for one trace.

    Keys: gamma_hat and r_squared from the geometric (log-linear) fit,
    slope from the sublinear (log-log) fit at the given floor, mu_hat /
    L_hat / kappa_hat from estimate_kappa, and min_alignment over rows
    where both alignment and distance are usable.  Metrics that cannot be
    computed (e.g. no reference distances were recorded) come back None
    rather than raising, so the report is always emittable.
    """
    report: dict[str, float | None] = {}
    try:
        lin = fit_linear_rate(trace, window)
        report["gamma_hat"] = lin.gamma_hat
        report["r_squared"] = lin.r_squared
    except ValueError:
        report["gamma_hat"] = None
        report["r_squared"] = None
    try:
        report["slope"] = fit_sublinear_rate(trace, window, floor).slope
    except ValueError:
        report["slope"] = None
    try:
        mu_hat, L_hat, kappa_hat = estimate_kappa(trace, f_star)
        report["mu_hat"] = mu_hat
        report["L_hat"] = L_hat
        report["kappa_hat"] = kappa_hat
    except ValueError:
        report["mu_hat"] = None
        report["L_hat"] = None
        report["kappa_hat"] = None
    a, d = trace.alignment, trace.dist
    mask = np.isfinite(a) & np.isfinite(d) & (d >= DIST_FLOOR)
    report["min_alignment"] = float(np.min(a[mask])) if mask.any() else None
    return {
        key: report[key]
        for key in ("gamma_hat", "slope", "r_squared", "mu_hat", "L_hat", "kappa_hat", "min_alignment")
    }
