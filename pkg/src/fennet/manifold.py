"""Symmetric Tucker manifold of functional adjacency tensors.

A point is ``X = B x1 Phi x2 Phi x3 G`` with ``B`` of shape ``(s, s, K, N)``,
``Phi`` of shape ``(m, s)`` and ``G`` of shape ``(L, K)``, both with
orthonormal columns. The sample mode (mode 4) is never factored.

Tangent vectors are kept in factored form
``dB x1 Phi x2 Phi x3 G + B x1 dPhi1 x2 Phi x3 G + B x1 Phi x2 dPhi2 x3 G
+ B x1 Phi x2 Phi x3 dG`` with ``dPhi_i^T Phi = 0`` and ``dG^T G = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import fent
from .errors import DegenerateCoreError, DimensionError
from .tensor import fnorm, matricize

ORTHO_TOL = 1e-10
# Gram matrices with condition number above this are regularized.
COND_REGULARIZE = 1e12
POINT_FORMAT_VERSION = 1


def fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so the entry of largest magnitude (earliest on ties) is non-negative.

    Magnitudes within a relative 1e-12 of the column maximum are treated as
    tied, so round-off in the factorization cannot pick a different entry.
    """
    U = np.array(U, dtype=np.float64, copy=True)
    if U.size == 0:
        return U
    mag = np.abs(U)
    # Entries within round-off of the column maximum count as ties.
    rows = np.argmax(mag >= (1.0 - 1e-12) * mag.max(axis=0), axis=0)
    signs = np.where(U[rows, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return U * signs


def leading_left_singular_vectors(M: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` left singular vectors of ``M`` with the deterministic sign convention."""
    if k > min(M.shape):
        raise DimensionError(f"requested {k} singular vectors of a {M.shape} matrix")
    U, _, _ = np.linalg.svd(M, full_matrices=False)
    return fix_signs(U[:, :k])


def _orthonormality_defect(U: np.ndarray) -> float:
    return float(np.linalg.norm(U.T @ U - np.eye(U.shape[1])))


def _contract(T: np.ndarray, A: np.ndarray, axis: int) -> np.ndarray:
    """``T x_axis A^T`` for 0-based ``axis``: sums axis ``axis`` of T against the rows of A."""
    return np.moveaxis(np.tensordot(T, A, axes=(axis, 0)), -1, axis)


def _expand(T: np.ndarray, A: np.ndarray, axis: int) -> np.ndarray:
    """``T x_axis A`` for 0-based ``axis``."""
    return np.moveaxis(np.tensordot(T, A, axes=(axis, 1)), -1, axis)


@dataclass(frozen=True, eq=False)
class TuckerPoint:
    core: np.ndarray
    phi: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        core = np.ascontiguousarray(self.core, dtype=np.float64)
        phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        G = np.ascontiguousarray(self.G, dtype=np.float64)
        if core.ndim != 4 or phi.ndim != 2 or G.ndim != 2:
            raise DimensionError("core must be 4-way, phi and G must be matrices")
        s, s2, K, _ = core.shape
        m, L = phi.shape[0], G.shape[0]
        if s != s2 or phi.shape[1] != s or G.shape[1] != K:
            raise DimensionError(
                f"core {core.shape} incompatible with phi {phi.shape} and G {G.shape}")
        if s > m or K > L:
            raise DimensionError(f"ranks (s={s}, K={K}) exceed dims (m={m}, L={L})")
        if _orthonormality_defect(phi) > ORTHO_TOL or _orthonormality_defect(G) > ORTHO_TOL:
            raise ValueError("factor matrices must have orthonormal columns")
        for name, arr in (("core", core), ("phi", phi), ("G", G)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def s(self) -> int:
        return self.phi.shape[1]

    @property
    def L(self) -> int:
        return self.G.shape[0]

    @property
    def K(self) -> int:
        return self.G.shape[1]

    @property
    def N(self) -> int:
        return self.core.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.m, self.m, self.L, self.N)

    @cached_property
    def value(self) -> np.ndarray:
        X = _expand(_expand(_expand(self.core, self.phi, 0), self.phi, 1), self.G, 2)
        X = np.ascontiguousarray(X)
        X.flags.writeable = False
        return X

    @cached_property
    def core_grams(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``B_(j) B_(j)^T`` for modes 1, 2, 3."""
        return tuple(matricize(self.core, j) @ matricize(self.core, j).T for j in (1, 2, 3))


def evaluate(P: TuckerPoint) -> np.ndarray:
    """Full tensor ``B x1 Phi x2 Phi x3 G`` of shape ``(m, m, L, N)``."""
    return P.value


def project_core(T: np.ndarray, phi: np.ndarray, G: np.ndarray) -> np.ndarray:
    """``T x1 Phi^T x2 Phi^T x3 G^T``."""
    return _contract(_contract(_contract(T, phi, 0), phi, 1), G, 2)


def shosvd(T: np.ndarray, s: int, K: int) -> TuckerPoint:
    """Symmetric truncated HOSVD.

    Phi spans the leading left singular subspace of the average of the mode-1
    and mode-2 unfoldings, G that of the mode-3 unfolding; the core is the
    projection of T onto these bases.
    """
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 4 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"expected an (m, m, L, N) tensor, got {T.shape}")
    m, _, L, N = T.shape
    if not 1 <= s <= m:
        raise DimensionError(f"rank s={s} must lie in [1, {m}]")
    if not 1 <= K <= min(L, m * m * N):
        raise DimensionError(f"rank K={K} must lie in [1, {min(L, m * m * N)}]")
    phi = leading_left_singular_vectors(0.5 * (matricize(T, 1) + matricize(T, 2)), s)
    G = leading_left_singular_vectors(matricize(T, 3), K)
    return TuckerPoint(project_core(T, phi, G), phi, G)


def gram_inverse(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PSD Gram matrix, regularized when ill conditioned."""
    dim = M.shape[0]
    eig = np.linalg.eigvalsh(M)
    top = eig[-1]
    if top <= 0.0 or eig[0] <= dim * np.finfo(float).eps * top:
        raise DegenerateCoreError("core unfolding is rank deficient")
    if top / eig[0] > COND_REGULARIZE:
        eps = 1e-12 * np.trace(M) / dim
        return np.linalg.inv(M + eps * np.eye(dim))
    return np.linalg.inv(M)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector at ``base`` in factored form.

    ``phi1`` and ``phi2`` are the factor directions entering modes 1 and 2.
    """

    core: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    G: np.ndarray
    base: TuckerPoint = field(repr=False)

    def _check_base(self, other: "TangentVector") -> None:
        if other.base is not self.base:
            raise ValueError("tangent vectors live at different base points")

    def __add__(self, other: "TangentVector") -> "TangentVector":
        self._check_base(other)
        return TangentVector(self.core + other.core, self.phi1 + other.phi1,
                             self.phi2 + other.phi2, self.G + other.G, self.base)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        return self + (-other)

    def __mul__(self, c: float) -> "TangentVector":
        c = float(c)
        return TangentVector(c * self.core, c * self.phi1, c * self.phi2, c * self.G, self.base)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return self * -1.0

    @property
    def side_condition_defect(self) -> float:
        phi, G = self.base.phi, self.base.G
        return max(float(np.linalg.norm(self.phi1.T @ phi)),
                   float(np.linalg.norm(self.phi2.T @ phi)),
                   float(np.linalg.norm(self.G.T @ G)))


def zero_tangent(P: TuckerPoint) -> TangentVector:
    return TangentVector(np.zeros_like(P.core), np.zeros_like(P.phi), np.zeros_like(P.phi),
                         np.zeros_like(P.G), P)


def tangent_inner(xi: TangentVector, zeta: TangentVector) -> float:
    """Ambient inner product of two tangent vectors at the same base, from their factors.

    The four terms of a tangent vector are mutually orthogonal, so only
    like terms pair up.
    """
    xi._check_base(zeta)
    M1, M2, M3 = xi.base.core_grams
    return (float(np.sum(xi.core * zeta.core))
            + float(np.sum((xi.phi1.T @ zeta.phi1) * M1))
            + float(np.sum((xi.phi2.T @ zeta.phi2) * M2))
            + float(np.sum((xi.G.T @ zeta.G) * M3)))


def tangent_norm(xi: TangentVector) -> float:
    return float(np.sqrt(max(tangent_inner(xi, xi), 0.0)))


def project_tangent(P: TuckerPoint, A: np.ndarray, coupled: bool = True) -> TangentVector:
    """Orthogonal projection of an ambient tensor onto the tangent space at ``P``.

    With ``coupled=True`` (default) the mode-1 and mode-2 factor directions
    are constrained to be equal, which is the tangent space of the symmetric
    manifold itself. With ``coupled=False`` each middle term is projected on
    its own, giving the tangent space of the Tucker manifold with independent
    mode-1/mode-2 factors at the same point.

    Raises
    ------
    DegenerateCoreError
        If a core unfolding needed for the projection is rank deficient.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.shape != P.shape:
        raise DimensionError(f"expected a tensor of dims {P.shape}, got {A.shape}")
    phi, G, B = P.phi, P.G, P.core
    M1, M2, M3 = P.core_grams

    A_phi1 = _contract(A, phi, 0)            # A x1 Phi^T, (s, m, L, N)
    A_phi12 = _contract(A_phi1, phi, 1)      # (s, s, L, N)
    core = _contract(A_phi12, G, 2)

    # Mode-1 residual: A x2 Phi^T x3 G^T unfolded along mode 1, times B_(1)^T.
    A_1 = _contract(_contract(A, phi, 1), G, 2)
    R1 = matricize(A_1, 1) @ matricize(B, 1).T
    A_2 = _contract(A_phi1, G, 2)
    R2 = matricize(A_2, 2) @ matricize(B, 2).T
    if coupled:
        d = R1 + R2
        d = (d - phi @ (phi.T @ d)) @ gram_inverse(M1 + M2)
        phi1 = phi2 = d
    else:
        phi1 = (R1 - phi @ (phi.T @ R1)) @ gram_inverse(M1)
        phi2 = (R2 - phi @ (phi.T @ R2)) @ gram_inverse(M2)

    R3 = matricize(A_phi12, 3) @ matricize(B, 3).T
    dG = (R3 - G @ (G.T @ R3)) @ gram_inverse(M3)
    return TangentVector(core, phi1, phi2, dG, P)


def ambient(xi: TangentVector) -> np.ndarray:
    """Embed a tangent vector as a dense ``(m, m, L, N)`` tensor."""
    P = xi.base
    phi, G, B = P.phi, P.G, P.core
    B_phi = _expand(B, phi, 0)
    first_two = _expand(_expand(xi.core, phi, 0) + _expand(B, xi.phi1, 0), phi, 1)
    first_two += _expand(B_phi, xi.phi2, 1)
    out = _expand(first_two, G, 2) + _expand(_expand(B_phi, phi, 1), xi.G, 2)
    return np.ascontiguousarray(out)


def retract(P: TuckerPoint, xi: TangentVector, gamma: float) -> TuckerPoint:
    """Step along ``gamma * xi`` in the ambient space and map back with :func:`shosvd`."""
    if xi.base is not P:
        raise ValueError("tangent vector is not based at P")
    return shosvd(P.value + gamma * ambient(xi), P.s, P.K)


def transport(P_prev: TuckerPoint, P_curr: TuckerPoint, xi: TangentVector,
              coupled: bool = True) -> TangentVector:
    """Move ``xi`` from the tangent space at ``P_prev`` to that at ``P_curr`` by projection."""
    if xi.base is not P_prev:
        raise ValueError("tangent vector is not based at P_prev")
    return project_tangent(P_curr, ambient(xi), coupled=coupled)


def reconstruction_error(T: np.ndarray, s: int, K: int) -> float:
    return fnorm(shosvd(T, s, K).value - T)


def save_point(P: TuckerPoint, directory) -> None:
    directory = Path(directory)
    header = {"format_version": POINT_FORMAT_VERSION, "m": P.m, "s": P.s,
              "L": P.L, "K": P.K, "N": P.N}
    fent.write_tensor(directory / "core.fent", P.core)
    fent.write_tensor(directory / "phi.fent", P.phi)
    fent.write_tensor(directory / "G.fent", P.G)
    fent.atomic_write(directory / "point.json", json.dumps(header, indent=2) + "\n")


def load_point(directory) -> TuckerPoint:
    directory = Path(directory)
    header = json.loads((directory / "point.json").read_text())
    if header.get("format_version") != POINT_FORMAT_VERSION:
        raise ValueError(f"unsupported point format {header.get('format_version')}")
    P = TuckerPoint(fent.read_tensor(directory / "core.fent"),
                    fent.read_tensor(directory / "phi.fent"),
                    fent.read_tensor(directory / "G.fent"))
    expected = (header["m"], header["s"], header["L"], header["K"], header["N"])
    if (P.m, P.s, P.L, P.K, P.N) != tuple(expected):
        raise ValueError("point.json header disagrees with the stored factors")
    return P
