"""Riemannian conjugate gradient on the symmetric Tucker manifold."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import LineSearchError
from .manifold import (
    TangentVector,
    TuckerPoint,
    ambient,
    retract,
    shosvd,
    tangent_inner,
    tangent_norm,
    transport,
)
from .objective import Problem, loss, riemann_gradient
from .tensor import fnorm

logger = logging.getLogger(__name__)

INIT_MODES = ("interp_shosvd", "zero_fill_shosvd", "provided")
TERMINATION_REASONS = ("grad_tol", "obj_tol", "max_iter", "line_search_failure")
MAX_HALVINGS = 30


@dataclass
class FitConfig:
    s: int
    K: int
    alpha: float | list[float] | None = None
    max_iter: int = 500
    grad_tol: float = 1e-8
    obj_tol: float = 1e-12
    seed: int = 0
    init: str = "interp_shosvd"

    def __post_init__(self):
        if self.s < 1 or self.K < 1:
            raise ValueError("ranks s and K must be >= 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if not (self.grad_tol > 0 and self.obj_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)


@dataclass
class FitReport:
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list)
    grad_norm_trace: list[float] = field(default_factory=list)
    step_trace: list[float] = field(default_factory=list)
    beta_trace: list[float] = field(default_factory=list)
    converged: bool = False
    termination_reason: str = "max_iter"
    final_grad_norm: float = float("nan")
    restarts: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def interp_fill(Y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill unobserved entries by linear interpolation along the time mode.

    Ends are extended with the nearest observed value; fibers without any
    observation become zero.
    """
    Yt = np.moveaxis(np.where(mask, Y, 0.0), 2, -1)
    Mt = np.moveaxis(np.asarray(mask, dtype=bool), 2, -1)
    L = Yt.shape[-1]
    flat_y = Yt.reshape(-1, L)
    flat_m = Mt.reshape(-1, L)
    idx = np.arange(L)
    prev = np.maximum.accumulate(np.where(flat_m, idx, -1), axis=1)
    nxt = np.minimum.accumulate(np.where(flat_m, idx, L)[:, ::-1], axis=1)[:, ::-1]
    has_prev, has_next = prev >= 0, nxt < L
    rows = np.arange(flat_y.shape[0])[:, None]
    y_prev = flat_y[rows, np.clip(prev, 0, L - 1)]
    y_next = flat_y[rows, np.clip(nxt, 0, L - 1)]
    span = np.where(nxt > prev, nxt - prev, 1)
    w = (idx - prev) / span
    out = np.where(has_prev & has_next, (1 - w) * y_prev + w * y_next,
                   np.where(has_prev, y_prev, np.where(has_next, y_next, 0.0)))
    out = np.where(flat_m, flat_y, out)
    return np.ascontiguousarray(np.moveaxis(out.reshape(Yt.shape), -1, 2))


def initialize(prob: Problem, cfg: FitConfig, provided: TuckerPoint | None = None) -> TuckerPoint:
    if cfg.init == "provided":
        if provided is None:
            raise ValueError("init='provided' needs an initial point")
        return provided
    if cfg.init == "zero_fill_shosvd":
        filled = np.where(prob.mask, prob.Y, 0.0)
    else:
        filled = interp_fill(prob.Y, prob.mask)
    return shosvd(filled, cfg.s, cfg.K)


def closed_form_step(P: TuckerPoint, eta: TangentVector, prob: Problem,
                     slope: float | None = None) -> float:
    """Step length along the ambient ray ``X + gamma * eta``.

    Without ``slope`` this is the exact minimiser of the data term,
    ``<P_Omega eta, P_Omega(Y - X)> / ||P_Omega eta||^2``. Passing the
    directional derivative of the full objective as ``slope`` replaces the
    numerator by ``-slope`` (same curvature); the two agree when alpha = 0.
    """
    d = np.where(prob.mask, ambient(eta), 0.0)
    denom = float(np.sum(d * d))
    if denom == 0.0:
        raise LineSearchError("search direction vanishes on the observed entries")
    if slope is None:
        r = np.where(prob.mask, prob.Y - P.value, 0.0)
        return float(np.sum(d * r)) / denom
    return -slope / denom


@dataclass
class Step:
    gamma: float
    point: TuckerPoint
    value: float
    halvings: int


def step_size(P: TuckerPoint, eta: TangentVector, prob: Problem,
              current: float | None = None, slope: float | None = None) -> Step:
    """Closed-form step, halved until the retracted point lowers the full objective.

    Raises
    ------
    LineSearchError
        Zero masked direction, non-positive closed-form step, or no decrease
        after ``MAX_HALVINGS`` halvings.
    """
    f0 = loss(P, prob) if current is None else current
    gamma = closed_form_step(P, eta, prob, slope)
    if not np.isfinite(gamma) or gamma <= 0.0:
        raise LineSearchError(f"closed-form step {gamma!r} is not a positive number")
    for halvings in range(MAX_HALVINGS + 1):
        Q = retract(P, eta, gamma)
        f = loss(Q, prob)
        if f < f0:
            return Step(gamma, Q, f, halvings)
        gamma *= 0.5
    raise LineSearchError(f"no decrease after {MAX_HALVINGS} halvings")


def beta_pr_plus(grad_curr: TangentVector, grad_prev_transported: TangentVector,
                 grad_prev_norm: float) -> float:
    """Polak-Ribiere coefficient clamped at zero."""
    if grad_prev_norm == 0.0:
        return 0.0
    num = tangent_inner(grad_curr, grad_curr) - tangent_inner(grad_curr, grad_prev_transported)
    return max(0.0, num / grad_prev_norm ** 2)


def fit(prob: Problem, cfg: FitConfig, initial: TuckerPoint | None = None,
        callback: Callable[[int, TuckerPoint], None] | None = None
        ) -> tuple[TuckerPoint, FitReport]:
    """Run Riemannian conjugate gradient from :func:`initialize`.

    Directions follow PR+ with vector transport by projection; a direction
    that is not a descent direction is replaced by the negative gradient.
    Stops when the Riemannian gradient norm drops below
    ``grad_tol * max(1, ||Y||_F)``, when the relative objective decrease
    falls below ``obj_tol``, after ``max_iter`` steps, or when the line
    search fails.
    """
    if cfg.alpha is not None:
        prob = Problem(prob.Y, prob.mask, cfg.alpha, prob.grid, prob.centering_means)
    X = initialize(prob, cfg, initial)
    report = FitReport()
    f = loss(X, prob)
    report.objective_trace.append(f)
    if cfg.max_iter == 0:
        report.final_grad_norm = tangent_norm(riemann_gradient(X, prob))
        report.termination_reason = "max_iter"
        return X, report

    tol = cfg.grad_tol * max(1.0, fnorm(prob.Y))
    grad = riemann_gradient(X, prob)
    gnorm = tangent_norm(grad)
    prev = None  # (point, gradient, gradient norm, direction) of the last iterate
    reason = "max_iter"

    for k in range(cfg.max_iter):
        if callback is not None:
            callback(k, X)
        if gnorm <= tol:
            reason = "grad_tol"
            break
        beta = 0.0
        eta = -grad
        if prev is not None:
            X_prev, g_prev, gn_prev, eta_prev = prev
            beta = beta_pr_plus(grad, transport(X_prev, X, g_prev), gn_prev)
            if beta > 0.0:
                eta = eta + beta * transport(X_prev, X, eta_prev)
                if tangent_inner(eta, grad) >= 0.0:
                    eta, beta = -grad, 0.0
                    report.restarts += 1
        try:
            step = step_size(X, eta, prob, f, tangent_inner(grad, eta))
        except LineSearchError as exc:
            if beta == 0.0:
                logger.debug("line search failed at iteration %d: %s", k, exc)
                reason = "line_search_failure"
                break
            # Retry once along steepest descent before giving up.
            eta, beta = -grad, 0.0
            report.restarts += 1
            try:
                step = step_size(X, eta, prob, f, -gnorm ** 2)
            except LineSearchError as exc2:
                logger.debug("line search failed at iteration %d: %s", k, exc2)
                reason = "line_search_failure"
                break

        report.grad_norm_trace.append(gnorm)
        report.step_trace.append(step.gamma)
        report.beta_trace.append(beta)
        report.objective_trace.append(step.value)
        report.iterations += 1
        decrease = f - step.value
        prev = (X, grad, gnorm, eta)
        X, f = step.point, step.value
        grad = riemann_gradient(X, prob)
        gnorm = tangent_norm(grad)
        if decrease <= cfg.obj_tol * abs(report.objective_trace[-2]):
            reason = "obj_tol"
            break
    else:
        if gnorm <= tol:
            reason = "grad_tol"

    report.final_grad_norm = gnorm
    report.termination_reason = reason
    report.converged = reason in ("grad_tol", "obj_tol")
    return X, report
