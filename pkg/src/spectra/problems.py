"""Experiment objectives and their subgradient / surrogate-direction providers.

Three problem families back the experiment harness:

  * LAD matrix sensing      f(X) = (1/m) ||A(X) - b||_1   (robust recovery)
  * LAD matrix regression   f(W) = sum_i |y_i - <X_i, W>| (the LP instance)
  * hinge classification    f(W) = (1/m) sum_i max(0, 1 - y_i <W, X_i>)

All randomness flows through np.random.default_rng([tag, seed]) with one tag
per component, so e.g. the sparse-noise support is independent of the
operator's sensing matrices even when both use the same experiment seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .spectral_core import as_matrix, msgn, nuclear_norm, tmsgn

__all__ = [
    "MeasurementOperator",
    "LadSensingProblem",
    "LadRegressionProblem",
    "HingeProblem",
    "RipEstimate",
    "gaussian_operator",
    "synth_low_rank",
    "make_observations",
    "make_sensing_problem",
    "make_regression_problem",
    "make_hinge_problem",
    "make_init",
    "build_problem",
    "lad_value",
    "lad_subgrad",
    "regression_value",
    "regression_subgrad",
    "hinge_value",
    "hinge_subgrad",
    "surrogate_dual",
    "surrogate_direction",
    "direction_from_subgrad",
    "rip_estimate",
]

# seed-stream tags: default_rng([TAG, seed]) keeps every random component on
# its own independent stream for a shared experiment seed
TAG_OPERATOR = 1
TAG_TRUTH = 2
TAG_SUPPORT = 3
TAG_SPARSE = 4
TAG_DENSE = 5
TAG_INIT = 6
TAG_FLIPS = 8
TAG_SAMPLES = 9
TAG_RIP = 10

# fixed start vector seed for the s=1 power iteration (deterministic, not
# tied to any experiment seed)
_POWER_SEED = 1729
# below this size a dense eigendecomposition of the Gram matrix beats power
# iteration (whose sweep count blows up when the top spectral gap is small)
_POWER_MIN_DIM = 512

_STREAM_CHUNK = 256


@dataclass
class MeasurementOperator:
    """Linear map A: R^{n1 x n2} -> R^m from m dense sensing matrices.

    forward(X)_i = <A_i, X>, adjoint(v) = sum_i v_i A_i.  Dense storage keeps
    the stacked matrices as one (m, n1*n2) row-major block so both directions
    are single GEMVs; streaming mode stores nothing and regenerates the same
    Gaussian stream chunk-by-chunk for memory-constrained runs.
    """

    n1: int
    n2: int
    m: int
    seed: int | None = None
    storage: str = "dense"
    _flat: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.storage not in ("dense", "streaming"):
            raise ValueError(f"storage must be 'dense' or 'streaming', got {self.storage!r}")
        if self.storage == "streaming" and self.seed is None:
            raise ValueError("streaming storage needs a seed to regenerate from")

    @classmethod
    def from_matrices(cls, mats) -> "MeasurementOperator":
        stack = np.asarray([as_matrix(a) for a in mats], dtype=float)
        m, n1, n2 = stack.shape
        return cls(n1=n1, n2=n2, m=m, _flat=stack.reshape(m, n1 * n2).copy())

    def _chunks(self):
        rng = np.random.default_rng([TAG_OPERATOR, self.seed])
        width = self.n1 * self.n2
        for lo in range(0, self.m, _STREAM_CHUNK):
            hi = min(lo + _STREAM_CHUNK, self.m)
            yield lo, hi, rng.standard_normal((hi - lo, width))

    def matrix(self, i: int) -> np.ndarray:
        if not 0 <= i < self.m:
            raise IndexError(f"measurement index {i} out of range [0, {self.m})")
        if self._flat is not None:
            return self._flat[i].reshape(self.n1, self.n2).copy()
        for lo, hi, block in self._chunks():
            if lo <= i < hi:
                return block[i - lo].reshape(self.n1, self.n2)
        raise AssertionError("unreachable")

    def forward(self, x) -> np.ndarray:
        a = as_matrix(x)
        if a.shape != (self.n1, self.n2):
            raise ValueError(f"expected shape {(self.n1, self.n2)}, got {a.shape}")
        vec = a.reshape(-1)
        if self._flat is not None:
            return self._flat @ vec
        out = np.empty(self.m)
        for lo, hi, block in self._chunks():
            out[lo:hi] = block @ vec
        return out

    def adjoint(self, v) -> np.ndarray:
        w = np.asarray(v, dtype=float)
        if w.shape != (self.m,):
            raise ValueError(f"expected vector of length {self.m}, got shape {w.shape}")
        if self._flat is not None:
            return (w @ self._flat).reshape(self.n1, self.n2)
        acc = np.zeros(self.n1 * self.n2)
        for lo, hi, block in self._chunks():
            acc += w[lo:hi] @ block
        return acc.reshape(self.n1, self.n2)


def gaussian_operator(n1: int, n2: int, m: int, seed: int, storage: str = "dense") -> MeasurementOperator:
    """m sensing matrices with i.i.d. standard normal entries, seeded."""
    if min(n1, n2, m) < 1:
        raise ValueError("n1, n2, m must be positive")
    op = MeasurementOperator(n1=n1, n2=n2, m=m, seed=seed, storage=storage)
    if storage == "dense":
        rng = np.random.default_rng([TAG_OPERATOR, seed])
        op._flat = rng.standard_normal((m, n1 * n2))
    return op


def synth_low_rank(n1: int, n2: int, r: int, seed: int) -> np.ndarray:
    """Ground truth X* = U V^T with i.i.d. standard Gaussian factors (rank r a.s.)."""
    if not 1 <= r <= min(n1, n2):
        raise ValueError(f"r must lie in [1, {min(n1, n2)}], got {r}")
    rng = np.random.default_rng([TAG_TRUTH, seed])
    u = rng.standard_normal((n1, r))
    v = rng.standard_normal((n2, r))
    return u @ v.T


def make_observations(op: MeasurementOperator, x_true, p: float, sparse_std: float, dense_std: float, seed: int):
    """Observations b = A(X*) + e1 + e2.

    e1 is sparse: a uniformly random floor(p*m)-subset S of coordinates gets
    N(0, sparse_std^2) draws, zero elsewhere.  e2 is dense N(0, dense_std^2),
    exactly zero when dense_std == 0.  S is drawn from its own seed stream,
    independent of the operator.  Returns (b, e1, e2, support).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must lie in [0, 1), got {p}")
    m = op.m
    k = int(math.floor(p * m))
    support = np.sort(np.random.default_rng([TAG_SUPPORT, seed]).choice(m, size=k, replace=False))
    e1 = np.zeros(m)
    if k > 0:
        e1[support] = np.random.default_rng([TAG_SPARSE, seed]).normal(0.0, sparse_std, size=k)
    if dense_std > 0.0:
        e2 = np.random.default_rng([TAG_DENSE, seed]).normal(0.0, dense_std, size=m)
    else:
        e2 = np.zeros(m)
    b = op.forward(x_true) + e1 + e2
    return b, e1, e2, support


@dataclass
class LadSensingProblem:
    """Robust low-rank sensing: f(X) = (1/m)||A(X) - b||_1."""

    op: MeasurementOperator
    b: np.ndarray
    x_true: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    support: np.ndarray
    p: float
    R: float  # nuclear norm of x_true

    @property
    def shape(self):
        return (self.op.n1, self.op.n2)

    @property
    def m(self):
        return self.op.m

    @property
    def xi(self) -> float:
        """Dense noise level (2/m)||e2||_1."""
        return float(2.0 / self.m * np.abs(self.e2).sum())

    def residual(self, x) -> np.ndarray:
        return self.op.forward(x) - self.b

    def value(self, x) -> float:
        return float(np.abs(self.residual(x)).mean())

    def subgrad(self, x) -> np.ndarray:
        return self.op.adjoint(np.sign(self.residual(x)) / self.m)

    def surrogate_subgrad(self, x, eps: float) -> np.ndarray:
        return self.op.adjoint(surrogate_dual(self.residual(x), eps, self.m))

    def eval_with_subgrad(self, x, eps: float | None = None):
        """(value, subgradient) off a single residual pass; eps switches to
        the surrogate selection."""
        z = self.residual(x)
        f = float(np.abs(z).mean())
        v = np.sign(z) / self.m if eps is None else surrogate_dual(z, eps, self.m)
        return f, self.op.adjoint(v)


def make_sensing_problem(
    n1: int,
    n2: int,
    r: int,
    m: int,
    p: float,
    sparse_std: float,
    dense_std: float,
    seed: int,
    storage: str = "dense",
) -> LadSensingProblem:
    op = gaussian_operator(n1, n2, m, seed, storage=storage)
    x_true = synth_low_rank(n1, n2, r, seed)
    b, e1, e2, support = make_observations(op, x_true, p, sparse_std, dense_std, seed)
    return LadSensingProblem(
        op=op,
        b=b,
        x_true=x_true,
        e1=e1,
        e2=e2,
        support=support,
        p=p,
        R=nuclear_norm(x_true),
    )


def lad_value(prob: LadSensingProblem, x) -> float:
    return prob.value(x)


def lad_subgrad(prob: LadSensingProblem, x) -> np.ndarray:
    return prob.subgrad(x)


def surrogate_dual(z, eps: float, m: int) -> np.ndarray:
    """Component-wise dual variable of the LAD surrogate subdifferential:
    v_i = sgn(z_i)/m where |z_i| > eps, else z_i/(eps*m).  Continuous in z,
    every entry in [-1/m, 1/m]."""
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) > eps, np.sign(z) / m, z / (eps * m))


def _power_top_pair(g: np.ndarray, tol: float = 1e-10, max_sweeps: int = 1000):
    """Top singular pair of g by power iteration on g^T g.

    Deterministic seeded start; returns (u, v) or None when the iteration
    fails to converge within max_sweeps (caller falls back to exact SVD).
    """
    n2 = g.shape[1]
    b = g.T @ g
    v = np.random.default_rng(_POWER_SEED).standard_normal(n2)
    v /= np.linalg.norm(v)
    for _ in range(max_sweeps):
        w = b @ v
        nw = np.linalg.norm(w)
        if nw <= 1e-300:
            return None
        w /= nw
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    else:
        return None
    gv = g @ v
    sigma = np.linalg.norm(gv)
    if sigma <= 1e-300:
        return None
    return gv / sigma, v


def _top_pair_gram(g: np.ndarray):
    """Top singular pair of g via the smaller Gram matrix's leading eigenvector.

    Exact (LAPACK eigh) and roughly twice as cheap as a full SVD at the sizes
    the benchmarks use; returns None on a zero matrix.
    """
    n1, n2 = g.shape
    if n1 <= n2:
        vecs = np.linalg.eigh(g @ g.T)[1]
        u = vecs[:, -1]
        gv = g.T @ u
        sigma = np.linalg.norm(gv)
        if sigma <= 1e-300:
            return None
        return u, gv / sigma
    vecs = np.linalg.eigh(g.T @ g)[1]
    v = vecs[:, -1]
    gu = g @ v
    sigma = np.linalg.norm(gu)
    if sigma <= 1e-300:
        return None
    return gu / sigma, v


def direction_from_subgrad(g, s: int | None) -> np.ndarray:
    """Descent direction from a subgradient: msgn(g) when s is None, else
    tmsgn(g, s).  s=1 extracts only the top pair — through the Gram
    eigendecomposition at ordinary sizes, or seeded power iteration on large
    instances — with exact-SVD fallback.  A zero subgradient yields the zero
    direction (stationarity)."""
    a = as_matrix(g)
    if not np.any(a):
        return np.zeros_like(a)
    if s is None:
        return msgn(a)
    if s == 1:
        pair = _power_top_pair(a) if min(a.shape) >= _POWER_MIN_DIM else _top_pair_gram(a)
        if pair is not None:
            u, v = pair
            return np.outer(u, v)
    return tmsgn(a, s)


def surrogate_direction(prob: LadSensingProblem, x, eps: float, s: int) -> np.ndarray:
    """Rank-s truncated sign of the surrogate subgradient at x."""
    return direction_from_subgrad(prob.surrogate_subgrad(x, eps), s)


@dataclass
class LadRegressionProblem:
    """LAD matrix regression (the LP instance): f(W) = sum_i |y_i - <X_i, W>|."""

    flat: np.ndarray  # (N, n1*n2)
    y: np.ndarray
    n1: int
    n2: int
    w_true: np.ndarray | None = None

    @property
    def shape(self):
        return (self.n1, self.n2)

    def predictions(self, w) -> np.ndarray:
        a = as_matrix(w)
        if a.shape != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {a.shape}")
        return self.flat @ a.reshape(-1)

    def value(self, w) -> float:
        return float(np.abs(self.y - self.predictions(w)).sum())

    def subgrad(self, w) -> np.ndarray:
        r = self.y - self.predictions(w)
        return (-(np.sign(r) @ self.flat)).reshape(self.n1, self.n2)

    def eval_with_subgrad(self, w, eps: float | None = None):
        if eps is not None:
            raise ValueError("surrogate selection is only defined for the sensing objective")
        r = self.y - self.predictions(w)
        return float(np.abs(r).sum()), (-(np.sign(r) @ self.flat)).reshape(self.n1, self.n2)


def make_regression_problem(N: int, n1: int, n2: int, seed: int) -> LadRegressionProblem:
    """Noiseless targets y_i = <X_i, W*> with Gaussian samples and truth."""
    rng = np.random.default_rng([TAG_SAMPLES, seed])
    flat = rng.standard_normal((N, n1 * n2))
    w_true = np.random.default_rng([TAG_TRUTH, seed]).standard_normal((n1, n2))
    return LadRegressionProblem(flat=flat, y=flat @ w_true.reshape(-1), n1=n1, n2=n2, w_true=w_true)


def regression_value(prob: LadRegressionProblem, w) -> float:
    return prob.value(w)


def regression_subgrad(prob: LadRegressionProblem, w) -> np.ndarray:
    return prob.subgrad(w)


@dataclass
class HingeProblem:
    """Matrix classification: f(W) = (1/m) sum_i max(0, 1 - y_i <W, X_i>)."""

    flat: np.ndarray  # (N, n1*n2)
    labels: np.ndarray  # +-1
    n1: int
    n2: int
    flip_fraction: float
    w_true: np.ndarray | None = None

    @property
    def shape(self):
        return (self.n1, self.n2)

    def margins(self, w) -> np.ndarray:
        a = as_matrix(w)
        if a.shape != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {a.shape}")
        return 1.0 - self.labels * (self.flat @ a.reshape(-1))

    def value(self, w) -> float:
        return float(np.maximum(0.0, self.margins(w)).mean())

    def subgrad(self, w) -> np.ndarray:
        m = self.margins(w)
        n = self.flat.shape[0]
        # violated margins contribute -y_i X_i / N; exact zeros contribute nothing
        coeff = np.where(m > 0.0, -self.labels / n, 0.0)
        return (coeff @ self.flat).reshape(self.n1, self.n2)

    def eval_with_subgrad(self, w, eps: float | None = None):
        if eps is not None:
            raise ValueError("surrogate selection is only defined for the sensing objective")
        m = self.margins(w)
        n = self.flat.shape[0]
        coeff = np.where(m > 0.0, -self.labels / n, 0.0)
        return float(np.maximum(0.0, m).mean()), (coeff @ self.flat).reshape(self.n1, self.n2)


def make_hinge_problem(N: int, n1: int, n2: int, flip_fraction: float, seed: int) -> HingeProblem:
    """Labels sign(<W*, X_i>) with a seeded flip_fraction subset negated."""
    if not 0.0 <= flip_fraction < 1.0:
        raise ValueError(f"flip_fraction must lie in [0, 1), got {flip_fraction}")
    rng = np.random.default_rng([TAG_SAMPLES, seed])
    flat = rng.standard_normal((N, n1 * n2))
    w_true = np.random.default_rng([TAG_TRUTH, seed]).standard_normal((n1, n2))
    raw = flat @ w_true.reshape(-1)
    labels = np.where(raw >= 0.0, 1.0, -1.0)
    k = int(math.floor(flip_fraction * N))
    if k > 0:
        idx = np.random.default_rng([TAG_FLIPS, seed]).choice(N, size=k, replace=False)
        labels[idx] *= -1.0
    return HingeProblem(
        flat=flat, labels=labels, n1=n1, n2=n2, flip_fraction=flip_fraction, w_true=w_true
    )


def hinge_value(prob: HingeProblem, w) -> float:
    return prob.value(w)


def hinge_subgrad(prob: HingeProblem, w) -> np.ndarray:
    return prob.subgrad(w)


def make_init(n1: int, n2: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Standard Gaussian initial iterate times `scale`, on its own seed stream."""
    return scale * np.random.default_rng([TAG_INIT, seed]).standard_normal((n1, n2))


class RipEstimate(NamedTuple):
    ratio_min: float
    ratio_max: float
    delta_hat: float


def rip_estimate(op: MeasurementOperator, r: int, trials: int, seed: int) -> RipEstimate:
    """Monte Carlo l1/l2 restricted-isometry check at rank r.

    Samples unit-Frobenius rank-r matrices X and records the extremes of
    (1/m)||A(X)||_1, whose population mean is sqrt(2/pi) for Gaussian A;
    delta_hat is the larger deviation of the two extremes from that mean.
    """
    if not 1 <= r <= min(op.n1, op.n2):
        raise ValueError(f"r must lie in [1, {min(op.n1, op.n2)}], got {r}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng([TAG_RIP, seed])
    lo, hi = math.inf, -math.inf
    for _ in range(trials):
        x = rng.standard_normal((op.n1, r)) @ rng.standard_normal((r, op.n2))
        x /= np.linalg.norm(x)
        ratio = float(np.abs(op.forward(x)).mean())
        lo = min(lo, ratio)
        hi = max(hi, ratio)
    center = math.sqrt(2.0 / math.pi)
    return RipEstimate(ratio_min=lo, ratio_max=hi, delta_hat=max(abs(lo - center), abs(hi - center)))


def build_problem(block: dict):
    """Instantiate a problem from its JSON description.

    Shapes: {"kind": "lad_sensing", n1, n2, r, m, p, sparse_std, dense_std, seed}
            {"kind": "lad_regression", N, n1, n2, seed}
            {"kind": "hinge", N, n1, n2, seed, flip_fraction}
    """
    if "kind" not in block:
        raise ValueError("problem block missing required key 'kind'")
    kind = block["kind"]
    specs = {
        "lad_sensing": (("n1", "n2", "r", "m", "p", "sparse_std", "dense_std", "seed"), ("storage",)),
        "lad_regression": (("N", "n1", "n2", "seed"), ()),
        "hinge": (("N", "n1", "n2", "seed", "flip_fraction"), ()),
    }
    if kind not in specs:
        raise ValueError(f"unknown problem kind {kind!r}")
    required, optional = specs[kind]
    for key in required:
        if key not in block:
            raise ValueError(f"problem block ({kind}) missing required key {key!r}")
    extra = set(block) - set(required) - set(optional) - {"kind"}
    if extra:
        raise ValueError(f"problem block ({kind}) has unknown keys {sorted(extra)}")
    if kind == "lad_sensing":
        return make_sensing_problem(
            n1=block["n1"], n2=block["n2"], r=block["r"], m=block["m"],
            p=block["p"], sparse_std=block["sparse_std"], dense_std=block["dense_std"],
            seed=block["seed"], storage=block.get("storage", "dense"),
        )
    if kind == "lad_regression":
        return make_regression_problem(N=block["N"], n1=block["n1"], n2=block["n2"], seed=block["seed"])
    return make_hinge_problem(
        N=block["N"], n1=block["n1"], n2=block["n2"],
        flip_fraction=block["flip_fraction"], seed=block["seed"],
    )
