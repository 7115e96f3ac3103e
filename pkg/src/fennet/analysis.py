"""Empirical checks of the error bounds and modelling assumptions.

All constants are estimated from samples, so every report is labelled
``"empirical"``; sampled extrema under-cover the true inf/sup.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .manifold import TuckerPoint
from .optimizer import FitConfig, fit
from .simulation import (
    SimConfig,
    generate_core,
    generate_instance,
    problem_for,
    random_orthonormal_factor,
    se_metrics,
)
from .tensor import fnorm, matricize

# Weights of the rank-deficit term, for modes 1, 2, 3.
RANK_DEFICIT_WEIGHTS = (4.0, 4.0, 1.0)


@dataclass
class BoundReport:
    c_hat: float
    C_hat: float
    lhs: float
    rhs: float
    holds: bool
    trial_count: int
    label: str = "empirical"
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _ranks3(r) -> tuple[int, int, int]:
    r = tuple(int(v) for v in r)
    if len(r) == 2:
        return (r[0], r[0], r[1])
    if len(r) in (3, 4):
        return r[:3]
    raise ValueError(f"ranks must be (s, K) or (s, s, K[, N]), got {r}")


def estimate_mask_constants(X: np.ndarray, mask: np.ndarray, ranks, trials: int,
                            seed=None) -> tuple[float, float]:
    """Smallest and largest ratio ``||P_Omega(X - Xt)|| / ||X - Xt||`` over random ``Xt``.

    Each ``Xt`` is a random point of the manifold with ranks ``(s, K)``,
    scaled to the norm of ``X``. The trial points depend only on ``seed``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty mask: lower constant is zero")
    s, _, K = _ranks3(ranks)
    m, _, L, N = X.shape
    rng = np.random.default_rng(seed)
    scale = fnorm(X) or 1.0
    ratios = []
    for _ in range(trials):
        Xt = TuckerPoint(generate_core(s, K, N, rng), random_orthonormal_factor(m, s, rng),
                         random_orthonormal_factor(L, K, rng)).value
        Xt = Xt * (scale / fnorm(Xt))
        diff = X - Xt
        ratios.append(fnorm(np.where(mask, diff, 0.0)) / fnorm(diff))
    return float(min(ratios)), float(max(ratios))


def error_bound_check(X, Xhat, E, mask, ranks, true_ranks, c_hat: float, C_hat: float) -> BoundReport:
    """Compare ``||Xhat - X||`` with the noise-plus-rank-deficit bound for an unsmoothed fit."""
    if c_hat <= 0:
        raise ValueError("lower mask constant must be positive")
    r, r0 = _ranks3(ranks), _ranks3(true_ranks)
    deficit = sum(d * (1.0 - ri / r0i) for d, ri, r0i in zip(RANK_DEFICIT_WEIGHTS, r, r0))
    lhs = fnorm(Xhat - X)
    noise = fnorm(np.where(mask, E, 0.0))
    rhs = 2.0 / c_hat * noise + C_hat / c_hat * math.sqrt(max(deficit, 0.0)) * fnorm(X)
    return BoundReport(c_hat, C_hat, lhs, rhs, bool(lhs <= rhs), 1,
                       details={"noise_term": 2.0 / c_hat * noise, "rank_deficit": deficit})


def error_bound_sweep(cfg: SimConfig, trials: int = 20) -> list[BoundReport]:
    """Run :func:`error_bound_check` on each replication of the first (sigma2, omega) cell."""
    sigma2, omega = cfg.sigma2[0], cfg.omega[0]
    fit_cfg = FitConfig(**{**asdict(cfg.fit), "alpha": 0.0})
    reports = []
    for rep in range(cfg.replications):
        inst = generate_instance(cfg, rep, sigma2, omega)
        prob = problem_for(inst, cfg, alpha=0.0)
        c_hat, C_hat = estimate_mask_constants(inst.X, prob.mask, (cfg.s_true, cfg.K_true),
                                               trials, seed=(cfg.seed, rep))
        point, _ = fit(prob, fit_cfg)
        rep_report = error_bound_check(inst.X, np.array(point.value), inst.Y - inst.X, prob.mask,
                                    (fit_cfg.s, fit_cfg.K), (cfg.s_true, cfg.K_true), c_hat, C_hat)
        rep_report.details["rep"] = rep
        reports.append(rep_report)
    return reports


def smoothing_benefit_check(cfg: SimConfig, min_win_fraction: float = 0.6) -> BoundReport:
    """Paired fits with and without smoothing on identical data.

    ``lhs``/``rhs`` are the mean unobserved-entry errors with and without
    smoothing; ``holds`` is whether smoothing wins in at least
    ``min_win_fraction`` of the replications.
    """
    sigma2, omega = cfg.sigma2[0], cfg.omega[0]
    smooth_cfg = FitConfig(**{**asdict(cfg.fit), "alpha": cfg.alpha})
    plain_cfg = FitConfig(**{**asdict(cfg.fit), "alpha": 0.0})
    miss = {"smoothed": [], "plain": []}
    full = {"smoothed": [], "plain": []}
    for rep in range(cfg.replications):
        inst = generate_instance(cfg, rep, sigma2, omega)
        for key, fc in (("smoothed", smooth_cfg), ("plain", plain_cfg)):
            prob = problem_for(inst, cfg, alpha=fc.alpha)
            point, _ = fit(prob, fc)
            se_full, se_miss = se_metrics(np.array(point.value), inst.X, prob.mask)
            miss[key].append(se_miss)
            full[key].append(se_full)
    wins = sum(a < b for a, b in zip(miss["smoothed"], miss["plain"]))
    frac = wins / cfg.replications
    return BoundReport(float("nan"), float("nan"), float(np.mean(miss["smoothed"])),
                       float(np.mean(miss["plain"])), frac >= min_win_fraction, cfg.replications,
                       details={"alpha": cfg.alpha, "wins": wins, "win_fraction": frac,
                                "se_miss": miss, "se_full": full})


def missingness_uniformity(mask: np.ndarray, exclude_diagonal: bool = True) -> dict:
    """Classify per-fiber observation counts into the two uniform-missingness scenarios.

    Scenario ``"i"``: every fiber has at most as many observed as missing
    points and ``ceil(missing / observed)`` is the same ``R`` everywhere.
    Scenario ``"ii"``: every fiber has at least as many observed as missing
    points and ``floor(observed / missing)`` is the same ``R`` everywhere.
    Diagonal (self-loop) fibers are skipped by default since they are never
    observed.
    """
    mask = np.asarray(mask, dtype=bool)
    m, _, L, N = mask.shape
    obs = mask.sum(axis=2)
    if exclude_diagonal:
        keep = ~np.eye(m, dtype=bool)
        obs = obs[keep]
    obs = obs.ravel()
    mis = L - obs
    report = {"fibers": int(obs.size), "L": L,
              "observed_counts": np.bincount(obs, minlength=L + 1).tolist(),
              "scenario": "neither", "R": None}
    if obs.size == 0:
        return report
    if np.all(mis == 0):
        report["scenario"] = "fully_observed"
        return report
    if np.all(obs <= mis) and np.all(obs > 0):
        ratios = np.ceil(mis / obs).astype(int)
        if np.all(ratios == ratios[0]):
            report.update(scenario="i", R=int(ratios[0]))
    elif np.all(obs >= mis) and np.all(mis > 0):
        ratios = np.floor(obs / mis).astype(int)
        if np.all(ratios == ratios[0]):
            report.update(scenario="ii", R=int(ratios[0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mis > 0, obs / np.maximum(mis, 1), np.inf)
    finite = ratio[np.isfinite(ratio)]
    report["observed_to_missing"] = {
        "min": float(finite.min()) if finite.size else None,
        "median": float(np.median(finite)) if finite.size else None,
        "max": float(finite.max()) if finite.size else None,
        "fully_observed_fibers": int(np.sum(mis == 0)),
        "fully_missing_fibers": int(np.sum(obs == 0)),
    }
    return report


def row_energy_bounds(P: TuckerPoint) -> np.ndarray:
    """Row sums of squares of ``B_(3) (Phi kron Phi kron I_N)^T``, one per temporal component.

    Orthonormal factors leave row norms unchanged, so these equal the row
    energies of the core's mode-3 unfolding.
    """
    M = matricize(P.core, 3)
    return np.sum(M * M, axis=1)
