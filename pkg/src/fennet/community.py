"""Reading communities and continuous edge functions off a fitted point.

Node, community and sample indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import TuckerPoint
from .objective import Grid


@dataclass(frozen=True)
class CommunityProfile:
    """Soft memberships ``Phi_ia^2``, hard argmax assignment and loading signs."""

    membership: np.ndarray
    assignment: np.ndarray
    signs: np.ndarray

    def to_dict(self) -> dict:
        return {"assignment": self.assignment.tolist(),
                "membership": self.membership.tolist(),
                "signs": self.signs.astype(int).tolist()}


def extract_communities(P: TuckerPoint) -> CommunityProfile:
    membership = P.phi ** 2
    # np.argmax returns the first maximum, so ties go to the smallest index.
    return CommunityProfile(membership, np.argmax(membership, axis=1), np.sign(P.phi))


def community_strength(P: TuckerPoint, a: int, b: int, n: int) -> np.ndarray:
    """``C_ab(t_l) = sum_k B[a, b, k, n] G[l, k]`` on the grid."""
    if not (0 <= a < P.s and 0 <= b < P.s):
        raise IndexError(f"community indices ({a}, {b}) out of range for s={P.s}")
    if not 0 <= n < P.N:
        raise IndexError(f"sample index {n} out of range for N={P.N}")
    return P.G @ P.core[a, b, :, n]


def all_strengths(P: TuckerPoint) -> np.ndarray:
    """Every community-pair curve at once, shape ``(s, s, L, N)``."""
    return np.einsum("abkn,lk->abln", P.core, P.G)


def _check_time(t: float, grid: Grid) -> None:
    if not grid.T_s <= t <= grid.T_e:
        raise ValueError(f"t={t} outside [{grid.T_s}, {grid.T_e}]")


def _bracket(t: float, grid: Grid) -> tuple[int, int, float]:
    """Indices of the grid values bracketing ``t`` and the weight of the upper one.

    Times before the first grid point (the grid starts one step after T_s)
    take the first value.
    """
    pos = (t - grid.T_s) / grid.step - 1.0
    nearest = round(pos)
    if abs(pos - nearest) <= 1e-9:
        pos = float(nearest)  # grid hits return the stored value exactly
    if pos <= 0.0:
        return 0, 0, 0.0
    lo = min(int(np.floor(pos)), grid.L - 1)
    w = pos - lo
    if lo == grid.L - 1 or w == 0.0:
        return lo, lo, 0.0
    return lo, lo + 1, w


def complete_at(P: TuckerPoint, t: float, grid: Grid,
                means: np.ndarray | None = None) -> np.ndarray:
    """Linearly interpolated tensor at time ``t``, shape ``(m, m, N)``."""
    _check_time(t, grid)
    if grid.L != P.L:
        raise ValueError("grid does not match the fitted temporal dimension")
    lo, hi, w = _bracket(t, grid)
    X = P.value
    out = X[:, :, lo, :] if w == 0.0 else (1 - w) * X[:, :, lo, :] + w * X[:, :, hi, :]
    if means is not None:
        out = out + means
    return np.array(out)


def complete_edge(P: TuckerPoint, i: int, j: int, n: int, t: float, grid: Grid,
                  means: np.ndarray | None = None) -> float:
    """Value of edge ``i -> j`` in sample ``n`` at continuous time ``t``."""
    _check_time(t, grid)
    lo, hi, w = _bracket(t, grid)
    X = P.value
    v = X[i, j, lo, n] if w == 0.0 else (1 - w) * X[i, j, lo, n] + w * X[i, j, hi, n]
    if means is not None:
        v = v + means[i, j, n]
    return float(v)
