"""Dense spectral linear algebra.

Everything downstream (optimizer steps, descent-direction oracles, feasibility
checks) reduces to a handful of operations on the singular value decomposition:
the matrix sign msgn(G) = U_r V_r^T built from the compact SVD, its rank-s
truncation, Ky Fan norms, and projections onto the tangent space of the
rank-r manifold at a base point.  All matrices are plain float64 ndarrays;
`as_matrix` is the validation boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DecompositionError",
    "SvdFactors",
    "TangentSplit",
    "as_matrix",
    "svd",
    "msgn",
    "tmsgn",
    "newton_schulz_msgn",
    "numerical_rank",
    "spectral_norm",
    "nuclear_norm",
    "kyfan_norm",
    "tangent_split",
    "load_matrix_txt",
    "save_matrix_txt",
]


class DecompositionError(RuntimeError):
    """The underlying eigen-solver failed to converge."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and coerce input to a 2-D float64 array with finite entries."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass
class SvdFactors:
    """Economy SVD: u (n1×k) and v (n2×k) with orthonormal columns, sigma sorted
    non-increasing, k = min(n1, n2).  v holds right singular vectors as columns,
    so the input reconstructs as u @ diag(sigma) @ v.T."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


@dataclass
class TangentSplit:
    """Additive split m = on_tangent + off_tangent at a base point's rank-r
    tangent space."""

    on_tangent: np.ndarray
    off_tangent: np.ndarray


def svd(m) -> SvdFactors:
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD did not converge for shape {a.shape}") from exc
    return SvdFactors(u=u, sigma=s, v=vt.T)


def _default_rank_tol(shape: tuple[int, int]) -> float:
    return max(shape) * np.finfo(float).eps


def _rank_from_sigma(sigma: np.ndarray, rel_tol: float | None, shape) -> int:
    if rel_tol is None:
        rel_tol = _default_rank_tol(shape)
    elif not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must lie in (0,1), got {rel_tol}")
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))


def numerical_rank(g, rel_tol: float | None = None) -> int:
    """Count singular values above rel_tol * sigma_1 (0 for the zero matrix).

    rel_tol defaults to max(rows, cols) * machine epsilon.
    """
    a = as_matrix(g)
    sigma = np.linalg.svd(a, compute_uv=False)
    return _rank_from_sigma(sigma, rel_tol, a.shape)


def msgn(g, rel_tol: float | None = None) -> np.ndarray:
    """Matrix sign U_r V_r^T from the compact SVD at numerical rank r.

    msgn(0) is the zero matrix.  ||msgn(g)||_F^2 equals the numerical rank,
    and msgn is invariant to positive rescaling of g.
    """
    a = as_matrix(g)
    f = svd(a)
    r = _rank_from_sigma(f.sigma, rel_tol, a.shape)
    if r == 0:
        return np.zeros_like(a)
    return f.u[:, :r] @ f.v[:, :r].T


def tmsgn(g, s: int, rel_tol: float | None = None) -> np.ndarray:
    """Truncated matrix sign U_s V_s^T from the top-s singular directions.

    When rank(g) < s only the rank-many leading directions contribute, so
    ||tmsgn(g, s)||_F^2 = min(s, rank(g)).  Ties sigma_s = sigma_{s+1} resolve
    by the deterministic SVD ordering.
    """
    a = as_matrix(g)
    if not isinstance(s, (int, np.integer)) or isinstance(s, bool):
        raise ValueError(f"s must be an integer, got {s!r}")
    if not 1 <= s <= min(a.shape):
        raise ValueError(f"s must lie in [1, {min(a.shape)}], got {s}")
    f = svd(a)
    r = _rank_from_sigma(f.sigma, rel_tol, a.shape)
    k = min(int(s), r)
    if k == 0:
        return np.zeros_like(a)
    return f.u[:, :k] @ f.v[:, :k].T


def newton_schulz_msgn(g, iters: int) -> np.ndarray:
    """Approximate msgn(g) by the cubic Newton-Schulz polar iteration.

    Normalizes g by its Frobenius norm, then applies
    X <- 1.5*X - 0.5*X*(X^T X) for `iters` steps.  Converges to the polar
    factor when g has full numerical rank; near rank deficiency the small
    singular directions are driven toward zero instead of one.
    """
    a = as_matrix(g)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    fro = np.linalg.norm(a)
    if fro == 0.0:
        raise ValueError("newton_schulz_msgn requires a nonzero matrix")
    x = a / fro
    for _ in range(iters):
        x = 1.5 * x - 0.5 * (x @ (x.T @ x))
    return x


def spectral_norm(m) -> float:
    a = as_matrix(m)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def nuclear_norm(m) -> float:
    a = as_matrix(m)
    return float(np.linalg.svd(a, compute_uv=False).sum())


def kyfan_norm(m, s: int) -> float:
    """Sum of the s largest singular values."""
    a = as_matrix(m)
    if not 1 <= s <= min(a.shape):
        raise ValueError(f"s must lie in [1, {min(a.shape)}], got {s}")
    sigma = np.linalg.svd(a, compute_uv=False)
    return float(sigma[:s].sum())


def tangent_split(m, base, rel_tol: float | None = None) -> TangentSplit:
    """Split m into tangent and normal components at `base`'s rank-r manifold.

    With P_U, P_V the projectors onto base's top-r column/row spaces,
    on_tangent = P_U m + m P_V - P_U m P_V and off_tangent = m - on_tangent
    (algebraically (I-P_U) m (I-P_V)); the split reconstructs m exactly.
    """
    a = as_matrix(m)
    b = as_matrix(base, name="base")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs base {b.shape}")
    f = svd(b)
    r = _rank_from_sigma(f.sigma, rel_tol, b.shape)
    if r == 0:
        raise ValueError("tangent_split requires a nonzero base")
    u = f.u[:, :r]
    v = f.v[:, :r]
    pu_m = u @ (u.T @ a)
    m_pv = (a @ v) @ v.T
    on = pu_m + m_pv - (u @ (u.T @ m_pv))
    return TangentSplit(on_tangent=on, off_tangent=a - on)


# --- matrix text format ------------------------------------------------------
# First line "rows cols", then one line of space-separated floats per row.
# %.17g round-trips float64 exactly.


def save_matrix_txt(path, m) -> None:
    a = as_matrix(m)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(format(x, ".17g") for x in row) for row in a)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_matrix_txt(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise ValueError(f"malformed header in {path}: expected 'rows cols'")
        rows, cols = int(head[0]), int(head[1])
        data = np.loadtxt(fh, dtype=float, ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(
            f"{path}: header promises {rows}x{cols}, body has {data.shape}"
        )
    return as_matrix(data, name=str(path))
