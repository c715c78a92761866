"""Iteration engines for the matrix-sign optimizer family.

Algorithms: sd (x <- x - eta*msgn(g)), tsd (truncated sign), muon/muonw
(momentum buffer, optionally with decoupled weight decay), and the
regularized weight-decay variants rsd_wd/rtsd_wd whose update

    x <- x - eta*(D + lam*x)  ==  (1 - lam*eta)*x + lam*eta*(-D/lam)

is a Frank-Wolfe convex combination over the spectral-norm (or Ky Fan) ball
of radius 1/lam, with D the (truncated) sign of a surrogate subgradient
selected at tolerance eps_t.

`run` drives any of them against a problem oracle and records a Trace
(loss, distance/alignment to a reference when known, subgradient norm,
iterate norms, step size) serialized to CSV at 17 significant digits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_core import as_matrix, msgn, tmsgn
from .problems import direction_from_subgrad

__all__ = [
    "Schedule",
    "EpsSchedule",
    "OptimizerSpec",
    "Trace",
    "ScheduleError",
    "DivergedError",
    "sd_step",
    "tsd_step",
    "muon_step",
    "muonw_step",
    "regularized_step",
    "run",
    "ALGORITHMS",
]

ALGORITHMS = ("sd", "tsd", "muon", "muonw", "rsd_wd", "rtsd_wd")

_SCHEDULE_KINDS = ("constant", "geometric", "frank_wolfe", "theory_sd", "theory_tsd")
_EPS_KINDS = ("constant", "coupled_sqrt", "sensing_theory", "sensing_default")

DIVERGENCE_CAP = 1e12


class ScheduleError(ValueError):
    """Invalid step-size configuration (e.g. lam*eta outside [0, 1])."""


class DivergedError(RuntimeError):
    """Iterate or objective became non-finite / exceeded the divergence cap."""

    def __init__(self, iteration: int, detail: str):
        super().__init__(iteration, detail)  # keeps args picklable across processes
        self.iteration = iteration
        self.detail = detail

    def __str__(self) -> str:
        return f"diverged at iteration {self.iteration}: {self.detail}"


@dataclass(frozen=True)
class Schedule:
    """Step-size sequence.

    kinds: constant (eta0), geometric (eta0 * gamma^t), frank_wolfe
    (2/(lam*(t+3)), so lam*eta_t = 2/(t+3) <= 1), theory_sd and theory_tsd
    ((C/rbar)*gamma^t*dist0 with gamma = max{C/sqrt(rbar), sqrt(1-C^2/rbar)};
    for the truncated kind rbar is the truncation level s).
    """

    kind: str
    eta0: float | None = None
    gamma: float | None = None
    lam: float | None = None
    C: float | None = None
    rbar: int | None = None
    dist0: float | None = None

    def __post_init__(self):
        k = self.kind
        if k not in _SCHEDULE_KINDS:
            raise ScheduleError(f"unknown schedule kind {k!r}")
        if k in ("constant", "geometric"):
            if self.eta0 is None or self.eta0 <= 0:
                raise ScheduleError(f"{k} schedule needs eta0 > 0, got {self.eta0}")
        if k == "geometric":
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise ScheduleError(f"geometric schedule needs gamma in (0,1), got {self.gamma}")
        if k == "frank_wolfe":
            if self.lam is None or self.lam <= 0:
                raise ScheduleError(f"frank_wolfe schedule needs lam > 0, got {self.lam}")
        if k in ("theory_sd", "theory_tsd"):
            if self.rbar is None or self.rbar < 1:
                raise ScheduleError(f"{k} schedule needs rbar >= 1, got {self.rbar}")
            if self.C is None or not 0.0 < self.C < math.sqrt(self.rbar):
                raise ScheduleError(
                    f"{k} schedule needs descent constant C in (0, sqrt(rbar)), got {self.C}"
                )
            if self.dist0 is None or self.dist0 <= 0:
                raise ScheduleError(f"{k} schedule needs dist0 > 0, got {self.dist0}")

    def decay_rate(self) -> float | None:
        """Per-iteration geometric factor, when the schedule has one."""
        if self.kind == "geometric":
            return self.gamma
        if self.kind in ("theory_sd", "theory_tsd"):
            r = self.rbar
            return max(self.C / math.sqrt(r), math.sqrt(max(1.0 - self.C**2 / r, 0.0)))
        return None

    def eta(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta0
        if self.kind == "geometric":
            return self.eta0 * self.gamma**t
        if self.kind == "frank_wolfe":
            return 2.0 / (self.lam * (t + 3))
        return (self.C / self.rbar) * self.decay_rate() ** t * self.dist0

    def etas(self, T: int) -> np.ndarray:
        t = np.arange(T, dtype=float)
        if self.kind == "constant":
            return np.full(T, self.eta0)
        if self.kind == "geometric":
            return self.eta0 * self.gamma**t
        if self.kind == "frank_wolfe":
            return 2.0 / (self.lam * (t + 3))
        return (self.C / self.rbar) * self.decay_rate() ** t * self.dist0

    @classmethod
    def from_config(cls, block: dict) -> "Schedule":
        block = dict(block)
        if "lambda" in block:  # JSON-friendly alias for the keyword
            block["lam"] = block.pop("lambda")
        known = {"kind", "eta0", "gamma", "lam", "C", "rbar", "dist0"}
        extra = set(block) - known
        if extra:
            raise ScheduleError(f"schedule block has unknown keys {sorted(extra)}")
        return cls(**block)


@dataclass(frozen=True)
class EpsSchedule:
    """Tolerance sequence for the surrogate-subgradient selection.

    kinds: constant (value); coupled_sqrt (2*sqrt(dim)/sqrt(lam)*sqrt(eta_t),
    tied to the running step size); sensing_theory ((2*L_A/lam)*sqrt(2m/(t+3)));
    sensing_default ((0.08/lam)*sqrt(m/(pi*(t+3))), the experiment setting).
    """

    kind: str
    value: float | None = None
    dim: int | None = None
    lam: float | None = None
    m: int | None = None
    L_A: float | None = None

    def __post_init__(self):
        if self.kind not in _EPS_KINDS:
            raise ScheduleError(f"unknown eps schedule kind {self.kind!r}")
        if self.kind == "constant" and (self.value is None or self.value <= 0):
            raise ScheduleError(f"constant eps schedule needs value > 0, got {self.value}")
        if self.kind == "coupled_sqrt" and (self.dim is None or self.lam is None):
            raise ScheduleError("coupled_sqrt eps schedule needs dim and lam")
        if self.kind in ("sensing_theory", "sensing_default") and (self.m is None or self.lam is None):
            raise ScheduleError(f"{self.kind} eps schedule needs m and lam")
        if self.kind == "sensing_theory" and self.L_A is None:
            raise ScheduleError("sensing_theory eps schedule needs L_A")

    def eps(self, t: int, eta_t: float | None = None) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "coupled_sqrt":
            if eta_t is None:
                raise ScheduleError("coupled_sqrt eps schedule needs the current eta_t")
            return 2.0 * math.sqrt(self.dim) / math.sqrt(self.lam) * math.sqrt(eta_t)
        if self.kind == "sensing_theory":
            return (2.0 * self.L_A / self.lam) * math.sqrt(2.0 * self.m / (t + 3))
        return (0.08 / self.lam) * math.sqrt(self.m / (math.pi * (t + 3)))

    @classmethod
    def from_config(cls, block: dict) -> "EpsSchedule":
        known = {"kind", "value", "dim", "lam", "m", "L_A"}
        extra = set(block) - known
        if extra:
            raise ScheduleError(f"eps schedule block has unknown keys {sorted(extra)}")
        return cls(**block)


@dataclass(frozen=True)
class OptimizerSpec:
    """Algorithm + schedule + horizon bundle, validated at construction."""

    algorithm: str
    schedule: Schedule
    T: int
    s: int | None = None
    mu_momentum: float = 0.0
    lam: float | None = None
    eps_schedule: EpsSchedule | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.algorithm in ("tsd", "rtsd_wd") and (self.s is None or self.s < 1):
            raise ValueError(f"{self.algorithm} needs a truncation level s >= 1, got {self.s}")
        if self.algorithm in ("muon", "muonw") and not 0.0 <= self.mu_momentum < 1.0:
            raise ValueError(f"momentum must lie in [0,1), got {self.mu_momentum}")
        if self.algorithm in ("muonw", "rsd_wd", "rtsd_wd"):
            if self.lam is None or self.lam <= 0:
                raise ValueError(f"{self.algorithm} needs lam > 0, got {self.lam}")
        if self.algorithm in ("rsd_wd", "rtsd_wd"):
            if self.eps_schedule is None:
                raise ValueError(f"{self.algorithm} needs an eps_schedule")
            if self.schedule.kind == "frank_wolfe" and self.schedule.lam != self.lam:
                raise ScheduleError(
                    f"frank_wolfe schedule lam={self.schedule.lam} disagrees with "
                    f"optimizer lam={self.lam}"
                )
            if self.T > 0:
                lam_etas = self.lam * self.schedule.etas(self.T)
                bad = np.nonzero(lam_etas > 1.0)[0]
                if bad.size:
                    raise ScheduleError(
                        f"lam*eta_t must be <= 1 for all t < T; violated first at t={bad[0]}"
                        f" (lam*eta={lam_etas[bad[0]]})"
                    )


# --- step functions ---------------------------------------------------------------


def sd_step(x, g, eta: float, direction=None) -> np.ndarray:
    """x - eta*msgn(g); a zero subgradient leaves x unchanged."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    x = as_matrix(x)
    d = msgn(g) if direction is None else direction
    return x - eta * d


def tsd_step(x, g, eta: float, s: int, direction=None) -> np.ndarray:
    """x - eta*tmsgn(g, s); zero-subgradient convention as sd_step."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    x = as_matrix(x)
    g = as_matrix(g, name="subgradient")
    if direction is None:
        direction = tmsgn(g, s) if np.any(g) else np.zeros_like(g)
    return x - eta * direction


def muon_step(x, g, buffer, mu: float, eta: float, direction=None):
    """Momentum-buffered sign step: b <- mu*b + g, x <- x - eta*msgn(b).
    Returns (new_x, new_buffer)."""
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"mu must lie in [0,1), got {mu}")
    x = as_matrix(x)
    new_buffer = mu * as_matrix(buffer, name="buffer") + as_matrix(g, name="subgradient")
    if direction is None:
        direction = msgn(new_buffer)
    return x - eta * direction, new_buffer


def muonw_step(x, g, buffer, mu: float, eta: float, lam: float, direction=None):
    """Momentum sign step with decoupled weight decay:
    x <- x - eta*(msgn(b) + lam*x).  Returns (new_x, new_buffer)."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    x = as_matrix(x)
    new_buffer = mu * as_matrix(buffer, name="buffer") + as_matrix(g, name="subgradient")
    if direction is None:
        direction = msgn(new_buffer)
    return x - eta * (direction + lam * x), new_buffer


def regularized_step(x, direction, eta: float, lam: float) -> np.ndarray:
    """Weight-decay step x - eta*(direction + lam*x).

    With gamma = lam*eta in [0, 1] this is the Frank-Wolfe convex combination
    (1-gamma)*x + gamma*(-direction/lam); both forms agree to rounding.
    """
    le = lam * eta
    if not 0.0 <= le <= 1.0:
        raise ScheduleError(f"lam*eta must lie in [0, 1], got {le}")
    x = as_matrix(x)
    return x - eta * (as_matrix(direction, name="direction") + lam * x)


# --- trace -------------------------------------------------------------------------

_CSV_HEADER = "t,f,dist,grad_fro,alignment,spec_norm,nuc_norm,eta"


@dataclass
class Trace:
    """Per-iteration record of a run.  dist/alignment are NaN when no
    reference was supplied; CSV serialization writes those cells empty."""

    t: np.ndarray
    f: np.ndarray
    dist: np.ndarray
    grad_fro: np.ndarray
    alignment: np.ndarray
    spec_norm: np.ndarray
    nuc_norm: np.ndarray
    eta: np.ndarray

    COLUMNS = ("t", "f", "dist", "grad_fro", "alignment", "spec_norm", "nuc_norm", "eta")

    def __len__(self) -> int:
        return self.t.size

    def column(self, name: str) -> np.ndarray:
        if name not in self.COLUMNS:
            raise KeyError(f"unknown trace column {name!r}")
        return getattr(self, name)

    def to_csv(self, path) -> None:
        def cell(x: float) -> str:
            return "" if math.isnan(x) else format(x, ".17g")

        lines = [_CSV_HEADER]
        for i in range(len(self)):
            lines.append(
                f"{int(self.t[i])},{cell(self.f[i])},{cell(self.dist[i])},"
                f"{cell(self.grad_fro[i])},{cell(self.alignment[i])},"
                f"{cell(self.spec_norm[i])},{cell(self.nuc_norm[i])},{cell(self.eta[i])}"
            )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != _CSV_HEADER:
                raise ValueError(f"unexpected trace header in {path}: {header!r}")
            cols = {name: [] for name in cls.COLUMNS}
            for line in fh:
                parts = line.rstrip("\n").split(",")
                if len(parts) != len(cls.COLUMNS):
                    raise ValueError(f"malformed trace row in {path}: {line!r}")
                for name, raw in zip(cls.COLUMNS, parts):
                    cols[name].append(float(raw) if raw else math.nan)
        return cls(**{name: np.asarray(vals) for name, vals in cols.items()})


# --- engine ------------------------------------------------------------------------


def _eval_problem(problem, x, eps):
    """One (value, subgradient) evaluation, sharing the residual pass when the
    problem provides a fused path."""
    fused = getattr(problem, "eval_with_subgrad", None)
    if fused is not None:
        return fused(x, eps)
    if eps is None:
        return problem.value(x), problem.subgrad(x)
    return problem.value(x), problem.surrogate_subgrad(x, eps)


def run(problem, spec: OptimizerSpec, reference=None, seed: int = 0, x0=None, observer=None) -> Trace:
    """Drive `spec.algorithm` on `problem` for T iterations.

    Records T+1 rows (t = 0..T, the last without a step), or fewer when sd/tsd
    hit an exactly-zero subgradient (stationary by convention; the momentum
    and weight-decay variants keep moving while buffer/decay terms are live)
    or when the step size underflows to exactly zero (schedules are
    non-increasing, so the iterate is frozen from that point on).
    The engine itself draws no randomness -- `seed` is bookkeeping for callers.
    Raises DivergedError if the objective exceeds 1e12 or anything goes
    non-finite.  `observer(t, x, g, d, eta, x_next)` is invoked after each
    applied step.
    """
    alg = spec.algorithm
    n1, n2 = problem.shape
    x = np.zeros((n1, n2)) if x0 is None else as_matrix(x0).copy()
    ref = as_matrix(reference, name="reference") if reference is not None else None
    buffer = np.zeros((n1, n2))
    regularized = alg in ("rsd_wd", "rtsd_wd")
    trunc = spec.s if alg in ("tsd", "rtsd_wd") else None

    cols = {name: [] for name in Trace.COLUMNS}
    for t in range(spec.T + 1):
        eta_t = spec.schedule.eta(t)
        eps_t = spec.eps_schedule.eps(t, eta_t) if regularized else None
        f, g = _eval_problem(problem, x, eps_t)
        if not math.isfinite(f) or f > DIVERGENCE_CAP:
            raise DivergedError(t, f"objective value {f}")
        if not np.all(np.isfinite(x)):
            raise DivergedError(t, "non-finite entries in iterate")

        if alg in ("muon", "muonw"):
            buffer = spec.mu_momentum * buffer + g
            source = buffer
        else:
            source = g
        if regularized:
            d = direction_from_subgrad(source, trunc)
        elif np.any(source):
            d = tmsgn(source, trunc) if trunc is not None else msgn(source)
        else:
            d = np.zeros_like(source)

        sig = np.linalg.svd(x, compute_uv=False)
        cols["t"].append(float(t))
        cols["f"].append(f)
        cols["grad_fro"].append(float(np.linalg.norm(g)))
        cols["spec_norm"].append(float(sig[0]))
        cols["nuc_norm"].append(float(sig.sum()))
        cols["eta"].append(eta_t)
        if ref is not None:
            diff = x - ref
            dist = float(np.linalg.norm(diff))
            cols["dist"].append(dist)
            cols["alignment"].append(float(np.sum(diff * d) / dist) if dist > 0 else math.nan)
        else:
            cols["dist"].append(math.nan)
            cols["alignment"].append(math.nan)

        if t == spec.T:
            break
        if eta_t == 0.0:
            # geometric schedules underflow on long horizons; every schedule
            # kind is non-increasing, so no further motion is possible
            break
        stationary = not np.any(g)
        if stationary and alg in ("sd", "tsd"):
            break
        if stationary and alg in ("muon", "muonw") and not np.any(buffer):
            break

        if alg == "sd":
            x_next = sd_step(x, g, eta_t, direction=d)
        elif alg == "tsd":
            x_next = tsd_step(x, g, eta_t, spec.s, direction=d)
        elif alg == "muon":
            x_next = x - eta_t * d
        elif alg == "muonw":
            x_next = x - eta_t * (d + spec.lam * x)
        else:
            x_next = regularized_step(x, d, eta_t, spec.lam)
        if observer is not None:
            observer(t, x, g, d, eta_t, x_next)
        x = x_next

    return Trace(**{name: np.asarray(vals) for name, vals in cols.items()})
