"""Closed-form rate constants, lower bounds, and certification oracles.

The descent analysis of the matrix-sign methods reduces to scalar quantities:
the condition parameter kappa = mu/L, the constants C (full-rank descent) and
C_tilde (rank-s truncated descent), their geometric decay rates gamma, and the
worst-case value of the descent inner product over the feasible set

    F_s = { (x, sigma) : ||x||_2 <= R, ||sigma||_2 <= L,
            sigma^T x >= mu*R, sigma_1 >= ... >= sigma_n >= 0 }.

`brute_force_descent_min` certifies the closed forms by searching F_s
directly: for fixed sigma the inner minimum over x is available in closed
form, so only the sigma direction is searched (grid + local refinement).
Everything here is exact arithmetic on floats; nothing samples.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

__all__ = [
    "ConditionData",
    "SdConstants",
    "TsdConstants",
    "RecoveryConstants",
    "sd_constants",
    "tsd_constants",
    "sd_lower_bound",
    "sd_worst_case",
    "tsd_lower_bound",
    "tsd_feasibility_threshold",
    "brute_force_descent_min",
    "curvature_bound",
    "lad_curvature_bound",
    "recovery_sharpness",
    "theorem_rate_bound",
]


@dataclass(frozen=True)
class ConditionData:
    """Problem conditioning: kappa = mu_sharp / lipschitz_L, rank cap rbar,
    truncation level s."""

    kappa: float
    mu_sharp: float
    lipschitz_L: float
    rbar: int
    s: int = 1

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0,1), got {self.kappa}")
        if self.mu_sharp <= 0 or self.lipschitz_L <= 0:
            raise ValueError("mu_sharp and lipschitz_L must be positive")
        if abs(self.kappa - self.mu_sharp / self.lipschitz_L) > 1e-9 * self.kappa:
            raise ValueError(
                f"kappa={self.kappa} inconsistent with mu/L="
                f"{self.mu_sharp / self.lipschitz_L}"
            )
        if self.rbar < 1 or self.s < 1:
            raise ValueError("rbar and s must be >= 1")

    @classmethod
    def from_mu_l(cls, mu, L, rbar, s=1):
        return cls(kappa=mu / L, mu_sharp=mu, lipschitz_L=L, rbar=rbar, s=s)


@dataclass(frozen=True)
class SdConstants:
    C: float
    gamma: float
    feasible: bool


@dataclass(frozen=True)
class TsdConstants:
    alpha_s: float
    C_tilde: float
    gamma: float
    feasible: bool


def sd_constants(cd: ConditionData) -> SdConstants:
    """Full-rank descent constant C = kappa - sqrt(rbar-1)*sqrt(1-kappa^2) and
    decay rate gamma = max{C/sqrt(rbar), sqrt(1-C^2/rbar)}.

    The linear rate needs C > 0, i.e. kappa > sqrt(1 - 1/rbar); below the
    threshold the constants are still returned with feasible=False (the
    experiments show convergence well outside the guaranteed regime).
    """
    k, r = cd.kappa, cd.rbar
    c = k - math.sqrt(r - 1) * math.sqrt(1.0 - k * k)
    gamma = max(c / math.sqrt(r), math.sqrt(max(1.0 - c * c / r, 0.0)))
    return SdConstants(C=c, gamma=gamma, feasible=k > math.sqrt(1.0 - 1.0 / r))


def tsd_constants(cd: ConditionData) -> TsdConstants:
    """Truncated descent constants: alpha_s = min{1, s/sqrt(rbar)},
    C_tilde = kappa*alpha_s - sqrt(s - alpha_s^2)*sqrt(1-kappa^2),
    gamma = max{C_tilde/sqrt(s), sqrt(1 - C_tilde^2/s)}; feasible iff
    kappa > sqrt(1 - alpha_s^2/s)."""
    k, r, s = cd.kappa, cd.rbar, cd.s
    if not 1 <= s <= r:
        raise ValueError(f"s must lie in [1, rbar={r}], got {s}")
    alpha = min(1.0, s / math.sqrt(r))
    c = k * alpha - math.sqrt(s - alpha * alpha) * math.sqrt(1.0 - k * k)
    gamma = max(c / math.sqrt(s), math.sqrt(max(1.0 - c * c / s, 0.0)))
    return TsdConstants(
        alpha_s=alpha,
        C_tilde=c,
        gamma=gamma,
        feasible=k > tsd_feasibility_threshold(s, r),
    )


def tsd_feasibility_threshold(s: int, rbar: int) -> float:
    """Smallest kappa admitting a positive truncated descent constant:
    sqrt(1 - alpha_s^2/s)."""
    alpha = min(1.0, s / math.sqrt(rbar))
    return math.sqrt(1.0 - alpha * alpha / s)


def sd_lower_bound(kappa: float, R: float, n: int) -> float:
    """Worst-case full descent inner product: (kappa - sqrt(n-1)sqrt(1-kappa^2))*R."""
    return (kappa - math.sqrt(n - 1) * math.sqrt(1.0 - kappa * kappa)) * R


def tsd_lower_bound(kappa: float, R: float, s: int, n: int) -> float:
    """Worst-case truncated descent inner product with alpha_s = min{1, s/sqrt(n)}:
    (kappa*alpha_s - sqrt(s - alpha_s^2)sqrt(1-kappa^2))*R."""
    if not 1 <= s <= n:
        raise ValueError(f"s must lie in [1, n={n}], got {s}")
    alpha = min(1.0, s / math.sqrt(n))
    return (kappa * alpha - math.sqrt(s - alpha * alpha) * math.sqrt(1.0 - kappa * kappa)) * R


def sd_worst_case(kappa: float, R: float, L: float, n: int):
    """Feasible pair (x_star, sigma_star) achieving sd_lower_bound:
    sigma_star = (L, 0, ..., 0), x_1 = kappa*R, x_j = -sqrt((1-kappa^2)/(n-1))*R.

    ||x_star||_2 = R and sigma_star^T x_star = kappa*L*R = mu*R exactly.
    """
    if n < 2:
        raise ValueError(f"worst case needs n >= 2 complement directions, got n={n}")
    x = np.full(n, -math.sqrt((1.0 - kappa * kappa) / (n - 1)) * R)
    x[0] = kappa * R
    sigma = np.zeros(n)
    sigma[0] = L
    return x, sigma


# --- brute-force oracle --------------------------------------------------------


def _inner_min(sigma: np.ndarray, mu: float, R: float, s: int) -> float:
    """Closed-form min of sum(x_1..x_s) over ||x||<=R, sigma^T x >= mu*R.

    Both constraints are active at the optimum (the unconstrained minimizer
    -R*c/||c|| always violates sigma^T x >= mu*R > 0), giving
        (R/||sigma||^2) * [mu*(c.sigma) - sqrt(s||sigma||^2 - (c.sigma)^2)
                                          * sqrt(||sigma||^2 - mu^2)].
    Requires ||sigma|| >= mu; returns +inf for infeasible sigma.
    """
    nrm2 = float(sigma @ sigma)
    if nrm2 <= mu * mu:
        if nrm2 == mu * mu:
            # only x = R*sigma/||sigma|| is feasible
            return R * float(sigma[:s].sum()) / math.sqrt(nrm2)
        return math.inf
    cs = float(sigma[:s].sum())
    disc = max(s * nrm2 - cs * cs, 0.0)
    return (R / nrm2) * (mu * cs - math.sqrt(disc) * math.sqrt(nrm2 - mu * mu))


def _ordered_partitions(total: int, parts: int):
    """Non-increasing tuples of `parts` non-negative ints summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        if first * parts < total:
            break
        for rest in _ordered_partitions_capped(total - first, parts - 1, first):
            yield (first,) + rest


def _ordered_partitions_capped(total: int, parts: int, cap: int):
    if parts == 1:
        if total <= cap:
            yield (total,)
        return
    for first in range(min(cap, total), -1, -1):
        if first * parts < total:
            break
        for rest in _ordered_partitions_capped(total - first, parts - 1, first):
            yield (first,) + rest


def brute_force_descent_min(
    kappa: float,
    R: float,
    L: float,
    n: int,
    s: int,
    grid_density: int = 60,
) -> float:
    """Certified minimum of sum(x_1..x_s) over the feasible set F_s.

    The value is monotone decreasing in ||sigma||, so the search restricts to
    the sphere ||sigma|| = L intersected with the ordered non-negative cone.
    Directions come from a squared-coordinate simplex grid (ordered integer
    compositions of grid_density), each evaluated by the closed-form inner
    minimum; the best grid points seed SLSQP refinements over sigma.
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0,1), got {kappa}")
    if R <= 0 or L <= 0:
        raise ValueError("R and L must be positive")
    if not 1 <= s <= n:
        raise ValueError(f"s must lie in [1, n={n}], got {s}")
    if n > 5:
        raise ValueError(f"oracle is desk-scale only (n <= 5), got n={n}")
    if grid_density < 50:
        raise ValueError(f"grid_density must be >= 50, got {grid_density}")

    mu = kappa * L
    best_val = math.inf
    best_sigmas: list[tuple[float, np.ndarray]] = []
    for part in _ordered_partitions(grid_density, n):
        lam = np.asarray(part, dtype=float)
        if lam[0] == 0.0:
            continue
        sigma = L * np.sqrt(lam / grid_density)
        val = _inner_min(sigma, mu, R, s)
        best_sigmas.append((val, sigma))
        if val < best_val:
            best_val = val
    best_sigmas.sort(key=lambda t: t[0])

    # local refinement from the leading grid candidates
    cons = [
        {"type": "ineq", "fun": lambda sig: L * L - float(sig @ sig)},
        {"type": "ineq", "fun": lambda sig: sig[-1]},
    ]
    for i in range(n - 1):
        cons.append({"type": "ineq", "fun": lambda sig, i=i: sig[i] - sig[i + 1]})

    def objective(sig):
        v = _inner_min(np.asarray(sig, dtype=float), mu, R, s)
        return v if math.isfinite(v) else 1e6

    for _, sigma0 in best_sigmas[:10]:
        res = optimize.minimize(
            objective,
            sigma0,
            method="SLSQP",
            constraints=cons,
            options={"maxiter": 200, "ftol": 1e-14},
        )
        if res.success and math.isfinite(res.fun):
            cand = np.asarray(res.x, dtype=float)
            ordered = np.all(np.diff(cand) <= 1e-9) and cand[-1] >= -1e-9
            if ordered and float(cand @ cand) <= L * L * (1 + 1e-9):
                best_val = min(best_val, float(res.fun))
    return best_val


# --- curvature and sublinear-rate envelopes -------------------------------------


def curvature_bound(L: float, dim: int, lam: float, eps: float) -> float:
    """Curvature envelope 16*L*dim/(lam^2 * eps) for the weight-decay ball;
    `dim` is the ambient min-dimension for the full-rank update or the
    truncation level s for the Ky Fan variant."""
    if min(L, dim, lam, eps) <= 0:
        raise ValueError("all arguments must be positive")
    return 16.0 * L * dim / (lam * lam * eps)


def lad_curvature_bound(m: int, L_star: float, a: float, eps: float) -> float:
    """Surrogate-set curvature envelope 16*m*L_star^2*a^2/eps for LAD sensing."""
    if min(m, L_star, a, eps) <= 0:
        raise ValueError("all arguments must be positive")
    return 16.0 * m * L_star * L_star * a * a / eps


SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class RecoveryConstants:
    """Sharpness and Lipschitz constants of the robust sensing objective."""

    p: float
    delta3: float
    delta5: float
    mu_recovery: float
    tau: float
    L_A: float
    xi: float = 0.0
    p_max: float = field(default=0.0)
    feasible: bool = field(default=False)


def recovery_sharpness(
    p: float,
    delta3: float,
    delta5: float,
    delta1: float | None = None,
    xi: float = 0.0,
) -> RecoveryConstants:
    """Sharpness margin of (1/m)||A(X)-b||_1 under a p-fraction of outliers.

        tau = [(1-2p)sqrt(2/pi) - delta5 - (sqrt(2/pi)+delta3)sqrt(2/3)] * sqrt(3/5)

    mu_recovery = tau; the recovery guarantee needs tau > 0, equivalently
    p < p_max = (1/2)[1 - sqrt(2/3) - (delta5 + sqrt(2/3)*delta3)/sqrt(2/pi)].
    L_A = sqrt(2/pi) + delta1, with delta1 defaulting to delta3 (RIP constants
    grow with rank, so this over-estimates conservatively).
    """
    if not 0.0 <= p < 0.5:
        raise ValueError(f"p must lie in [0, 0.5), got {p}")
    if delta3 < 0 or delta5 < 0:
        raise ValueError("RIP constants must be non-negative")
    if delta1 is None:
        delta1 = delta3
    c = SQRT_2_OVER_PI
    tau = ((1.0 - 2.0 * p) * c - delta5 - (c + delta3) * math.sqrt(2.0 / 3.0)) * math.sqrt(3.0 / 5.0)
    p_max = 0.5 * (1.0 - math.sqrt(2.0 / 3.0) - (delta5 + math.sqrt(2.0 / 3.0) * delta3) / c)
    return RecoveryConstants(
        p=p,
        delta3=delta3,
        delta5=delta5,
        mu_recovery=tau,
        tau=tau,
        L_A=c + delta1,
        xi=xi,
        p_max=p_max,
        feasible=tau > 0.0,
    )


def theorem_rate_bound(
    variant: str,
    T: int,
    delta_f0: float,
    L: float,
    dim_or_s: int,
    lam: float,
    mu: float,
) -> float:
    """Sublinear distance envelope for the weight-decay schedules:

        2*delta_f0/(mu(T+2)(T+1)) + (32L*sqrt(2d))/(3 mu lam) * (T+3)^{3/2}/((T+2)(T+1))

    with d the ambient dimension ("full") or the truncation level ("truncated").
    """
    if variant not in ("full", "truncated"):
        raise ValueError(f"variant must be 'full' or 'truncated', got {variant!r}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    denom = mu * (T + 2) * (T + 1)
    first = 2.0 * delta_f0 / denom
    second = (32.0 * L * math.sqrt(2.0 * dim_or_s)) / (3.0 * mu * lam) * (T + 3) ** 1.5 / ((T + 2) * (T + 1))
    return first + second
