"""Masked least-squares objective with a roughness penalty on the temporal basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .manifold import TangentVector, TuckerPoint, gram_inverse, project_tangent
from .tensor import fold, fnorm, mask_apply, matricize


def difference_matrices(L: int) -> tuple[np.ndarray, np.ndarray]:
    """First-difference matrix ``D`` of shape ``(L-1, L)`` and ``H = D^T D``."""
    if L < 2:
        raise ValueError(f"need at least two grid points, got L={L}")
    D = np.eye(L - 1, L) - np.eye(L - 1, L, k=1)
    return D, D.T @ D


@dataclass(frozen=True)
class Grid:
    """Equally spaced observation grid ``t_l = T_s + (l / L) (T_e - T_s)``, l = 1..L."""

    T_s: float
    T_e: float
    L: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("grid needs L >= 2")
        if not self.T_e > self.T_s:
            raise ValueError("grid needs T_e > T_s")

    @property
    def step(self) -> float:
        return (self.T_e - self.T_s) / self.L

    @property
    def points(self) -> np.ndarray:
        return self.T_s + np.arange(1, self.L + 1) * self.step

    def to_dict(self) -> dict:
        return {"T_s": self.T_s, "T_e": self.T_e, "L": self.L}


@dataclass(frozen=True)
class SmoothingPenalty:
    alpha: np.ndarray
    H: np.ndarray

    @classmethod
    def uniform(cls, alpha, K: int, L: int) -> "SmoothingPenalty":
        return cls(expand_alpha(alpha, K), difference_matrices(L)[1])

    def value(self, G: np.ndarray) -> float:
        """``1/2 sum_k alpha_k g_k^T H g_k``."""
        return 0.5 * float(np.sum(self.alpha * np.einsum("lk,lj,jk->k", G, self.H, G)))


def expand_alpha(alpha, K: int) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(K, float(a))
    if a.shape != (K,):
        raise DimensionError(f"alpha must be a scalar or a length-{K} vector")
    if np.any(a < 0):
        raise ValueError("alpha must be non-negative")
    return a


def diagonal_mask(m: int, L: int, N: int) -> np.ndarray:
    """True off the node diagonal (i != j)."""
    off = ~np.eye(m, dtype=bool)
    return np.broadcast_to(off[:, :, None, None], (m, m, L, N)).copy()


def fiber_means(Y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean over observed time points of each (i, j, n) fiber; 0 for empty fibers."""
    counts = mask.sum(axis=2)
    sums = np.where(mask, Y, 0.0).sum(axis=2)
    return np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)


@dataclass(frozen=True, eq=False)
class Problem:
    """Observed tensor, mask, smoothing weight and grid.

    Build instances with :meth:`build`, which applies the structural
    diagonal mask and optional centering.
    """

    Y: np.ndarray
    mask: np.ndarray
    alpha: float | np.ndarray
    grid: Grid
    centering_means: np.ndarray | None = None

    @classmethod
    def build(cls, Y, mask, alpha=0.0, grid: Grid | None = None, *,
              mask_diagonal: bool = True, center: bool = False) -> "Problem":
        Y = np.asarray(Y, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if Y.ndim != 4 or Y.shape[0] != Y.shape[1]:
            raise DimensionError(f"Y must have dims (m, m, L, N), got {Y.shape}")
        if mask.shape != Y.shape:
            raise DimensionError(f"mask dims {mask.shape} differ from Y dims {Y.shape}")
        m, _, L, N = Y.shape
        if grid is None:
            grid = Grid(-1.0, 1.0, L)
        if grid.L != L:
            raise DimensionError(f"grid has L={grid.L} but Y has {L} time points")
        if mask_diagonal:
            mask = mask & diagonal_mask(m, L, N)
        Y = np.where(mask, Y, 0.0)
        means = None
        if center:
            means = fiber_means(Y, mask)
            Y = np.where(mask, Y - means[:, :, None, :], 0.0)
        if not np.all(np.isfinite(Y)):
            raise ValueError("observations must be finite")
        return cls(Y, mask, alpha, grid, means)

    @property
    def shape(self):
        return self.Y.shape

    def penalty(self, K: int) -> SmoothingPenalty:
        return SmoothingPenalty.uniform(self.alpha, K, self.grid.L)

    def add_back(self, X: np.ndarray) -> np.ndarray:
        """Undo centering on a completed tensor."""
        if self.centering_means is None:
            return X
        return X + self.centering_means[:, :, None, :]


def data_residual(P: TuckerPoint, prob: Problem) -> np.ndarray:
    """``P_Omega(X - Y)``."""
    return mask_apply(P.value - prob.Y, prob.mask)


def loss(P: TuckerPoint, prob: Problem) -> float:
    r = data_residual(P, prob)
    return 0.5 * fnorm(r) ** 2 + prob.penalty(P.K).value(P.G)


def smoothing_gradient(P: TuckerPoint, alpha: np.ndarray, H: np.ndarray,
                       tangential: bool = True) -> np.ndarray:
    """Ambient gradient of the roughness penalty.

    ``fold_(3)(H G diag(alpha) S^T)`` with ``S = Q^T (Q Q^T)^{-1}`` and
    ``Q = (B x1 Phi x2 Phi)_(3)``. Since Phi has orthonormal columns,
    ``Q Q^T = B_(3) B_(3)^T``. With ``tangential=True`` the temporal factor
    ``H G diag(alpha)`` is first projected onto the complement of span(G);
    for uniform alpha the penalty depends on span(G) only, and the dropped
    component would otherwise push the core.
    """
    phi = P.phi
    Q = matricize(np.einsum("abkn,ia,jb->ijkn", P.core, phi, phi, optimize=True), 3)
    St = gram_inverse(P.core_grams[2]) @ Q
    HG = H @ P.G * alpha
    if tangential:
        HG = HG - P.G @ (P.G.T @ HG)
    return fold(HG @ St, 3, P.shape)


def euclidean_gradient(P: TuckerPoint, prob: Problem, tangential: bool = True) -> np.ndarray:
    """``P_Omega(X - Y)`` plus the smoothing term (see :func:`smoothing_gradient`)."""
    grad = data_residual(P, prob)
    pen = prob.penalty(P.K)
    if np.any(pen.alpha > 0):
        grad = grad + smoothing_gradient(P, pen.alpha, pen.H, tangential)
    return grad


def riemann_gradient(P: TuckerPoint, prob: Problem) -> TangentVector:
    return project_tangent(P, euclidean_gradient(P, prob))
