"""Synthetic functional networks and the replicated completion experiment.

Seeding: every replication draws from ``SeedSequence(seed, spawn_key=(rep,))``
and its four children feed, in order, the core, the node factor, the noise and
the mask. The streams do not depend on the (sigma2, omega) cell. Cells
of one replication therefore share the same truth, the same standard-normal
noise draw (scaled by sqrt(sigma2)), and nested masks: the entries missing at
a lower omega are also missing at any higher omega.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError
from .fent import atomic_write
from .manifold import TuckerPoint, fix_signs, shosvd
from .objective import Grid, Problem
from .optimizer import FitConfig, FitReport, fit, interp_fill
from .tensor import fnorm, matricize

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
RANK_TOL = 1e-8
MAX_SLICE_ATTEMPTS = 1000


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_orthogonal(n: int, rng) -> np.ndarray:
    Q, R = np.linalg.qr(_rng(rng).standard_normal((n, n)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def random_orthonormal_factor(m: int, s: int, seed=None) -> np.ndarray:
    """First ``s`` columns of a random orthogonal ``m x m`` matrix."""
    if not 1 <= s <= m:
        raise ValueError(f"need 1 <= s <= m, got s={s}, m={m}")
    Q, _ = np.linalg.qr(_rng(seed).standard_normal((m, m)))
    return fix_signs(Q[:, :s])


def _full_rank(M: np.ndarray, rank: int) -> bool:
    sv = np.linalg.svd(M, compute_uv=False)
    return len(sv) >= rank and sv[rank - 1] > RANK_TOL * sv[0]


def generate_core(s: int, K: int, N: int, seed=None) -> np.ndarray:
    """Core of shape ``(s, s, K, N)`` built from orthogonal ``s x s`` slices.

    Each sample gets its own slices. A slice is kept only if the partial core
    stays full rank in modes 1-3.
    """
    if K > s * s:
        raise ValueError(f"K={K} exceeds s^2={s * s}; mode-3 rank unattainable")
    rng = _rng(seed)
    B = np.zeros((s, s, K, N))
    for n in range(N):
        for k in range(K):
            for _ in range(MAX_SLICE_ATTEMPTS):
                B[:, :, k, n] = random_orthogonal(s, rng)
                part = B[:, :, :k + 1, n]
                if (_full_rank(matricize(part, 1), s) and _full_rank(matricize(part, 2), s)
                        and _full_rank(matricize(part, 3), min(k + 1, s * s))):
                    break
            else:
                raise GenerationError(f"could not extend core slice {k} of sample {n}")
    return B


def _sine_samples(t: np.ndarray, K: int) -> np.ndarray:
    return np.sin(np.pi * np.outer(t, np.arange(1, K + 1)))


def fourier_basis(L: int, K: int, T_s: float = -1.0, T_e: float = 1.0) -> np.ndarray:
    """Orthonormalised samples of ``sin(k pi t)``, k = 1..K, on the grid."""
    if K > L:
        raise ValueError(f"K={K} exceeds L={L}")
    raw = _sine_samples(Grid(T_s, T_e, L).points, K)
    return _orthonormalize(raw)[0]


def _orthonormalize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """QR with the sign convention; returns (G, T) with ``G = raw @ T``."""
    Q, R = np.linalg.qr(raw)
    G = fix_signs(Q)
    signs = np.sign(np.sum(G * Q, axis=0))
    return G, np.linalg.inv(R) * signs


def fourier_basis_function(t, L: int, K: int, T_s: float = -1.0, T_e: float = 1.0) -> np.ndarray:
    """Continuous counterpart of :func:`fourier_basis`, evaluated at arbitrary ``t``.

    Applies to ``sin(k pi t)`` the same linear map that turns the grid samples
    into the orthonormal basis, so on grid points it reproduces the matrix.
    """
    raw = _sine_samples(Grid(T_s, T_e, L).points, K)
    _, T = _orthonormalize(raw)
    return _sine_samples(np.atleast_1d(np.asarray(t, dtype=float)), K) @ T


def add_noise(X: np.ndarray, sigma2: float, seed=None) -> np.ndarray:
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if sigma2 == 0:
        return np.array(X, dtype=np.float64, copy=True)
    return X + math.sqrt(sigma2) * _rng(seed).standard_normal(X.shape)


def generate_mask(dims, omega: float, seed=None) -> np.ndarray:
    """Mask with exactly ``round(omega * total)`` entries unobserved, chosen uniformly."""
    if not 0 <= omega < 1:
        raise ValueError("omega must lie in [0, 1)")
    dims = tuple(int(d) for d in dims)
    total = int(np.prod(dims))
    missing = int(round(omega * total))
    mask = np.ones(total, dtype=bool)
    mask[_rng(seed).permutation(total)[:missing]] = False
    return mask.reshape(dims)


def se_metrics(Xhat: np.ndarray, X: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """Squared error over all entries and over the unobserved ones."""
    if not Xhat.shape == X.shape == mask.shape:
        raise ValueError(f"dims mismatch: {Xhat.shape}, {X.shape}, {mask.shape}")
    diff = Xhat - X
    return fnorm(diff) ** 2, fnorm(np.where(mask, 0.0, diff)) ** 2


@dataclass
class SimConfig:
    m: int = 10
    L: int = 50
    N: int = 5
    s_true: int = 3
    K_true: int = 8
    T_s: float = -1.0
    T_e: float = 1.0
    sigma2: list[float] = field(default_factory=lambda: [0.01])
    omega: list[float] = field(default_factory=lambda: [0.1])
    alpha: float = 0.1
    fit: FitConfig | None = None
    replications: int = 10
    seed: int = 0
    baseline: bool = True
    plots: bool = False
    mask_diagonal: bool = True

    def __post_init__(self):
        if isinstance(self.sigma2, (int, float)):
            self.sigma2 = [float(self.sigma2)]
        if isinstance(self.omega, (int, float)):
            self.omega = [float(self.omega)]
        if isinstance(self.fit, dict):
            self.fit = FitConfig.from_dict(self.fit)
        if self.fit is None:
            self.fit = FitConfig(s=self.s_true, K=self.K_true, alpha=self.alpha)
        if self.K_true > min(self.L, self.s_true ** 2):
            raise ValueError("K_true must not exceed min(L, s_true^2)")
        if any(not 0 <= w < 1 for w in self.omega):
            raise ValueError("omega values must lie in [0, 1)")
        if any(v < 0 for v in self.sigma2):
            raise ValueError("sigma2 values must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = CONFIG_SCHEMA_VERSION
        return d

    @property
    def grid(self) -> Grid:
        return Grid(self.T_s, self.T_e, self.L)


@dataclass
class Instance:
    """One replication's ground truth and observations."""

    truth: TuckerPoint
    X: np.ndarray
    Y: np.ndarray
    mask: np.ndarray
    sigma2: float
    omega: float


def replication_streams(seed: int, rep: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed, spawn_key=(rep,))
    return [np.random.default_rng(child) for child in ss.spawn(4)]


def generate_truth(cfg: SimConfig, rep: int) -> TuckerPoint:
    core_rng, phi_rng, _, _ = replication_streams(cfg.seed, rep)
    B = generate_core(cfg.s_true, cfg.K_true, cfg.N, core_rng)
    phi = random_orthonormal_factor(cfg.m, cfg.s_true, phi_rng)
    G = fourier_basis(cfg.L, cfg.K_true, cfg.T_s, cfg.T_e)
    return TuckerPoint(B, phi, G)


def generate_instance(cfg: SimConfig, rep: int, sigma2: float, omega: float) -> Instance:
    truth = generate_truth(cfg, rep)
    _, _, noise_rng, mask_rng = replication_streams(cfg.seed, rep)
    X = np.array(truth.value)
    Y = add_noise(X, sigma2, noise_rng)
    mask = generate_mask(X.shape, omega, mask_rng)
    return Instance(truth, X, Y, mask, sigma2, omega)


def problem_for(inst: Instance, cfg: SimConfig, alpha: float | None = None) -> Problem:
    return Problem.build(inst.Y, inst.mask, cfg.alpha if alpha is None else alpha, cfg.grid,
                         mask_diagonal=cfg.mask_diagonal)


def baseline_estimate(prob: Problem, s: int, K: int) -> np.ndarray:
    """Per-edge linear interpolation followed by one SHOSVD truncation."""
    return np.array(shosvd(interp_fill(prob.Y, prob.mask), s, K).value)


@dataclass
class ReplicationResult:
    sigma2: float
    omega: float
    rep: int
    se_full: float
    se_miss: float
    iterations: int
    converged: bool
    se_baseline: float = float("nan")
    termination_reason: str = ""
    error: str = ""


@dataclass
class ExperimentRow:
    sigma2: float
    omega: float
    mse_mean: float
    mse_std: float
    se_values: list[float]
    entries: int
    mse_per_entry: float
    baseline_mse_mean: float = float("nan")
    baseline_mse_per_entry: float = float("nan")
    failed: int = 0


def run_replication(cfg: SimConfig, rep: int, sigma2: float, omega: float
                    ) -> tuple[ReplicationResult, FitReport | None]:
    inst = generate_instance(cfg, rep, sigma2, omega)
    prob = problem_for(inst, cfg)
    try:
        point, report = fit(prob, cfg.fit)
    except Exception as exc:  # a failed replication is recorded, not fatal
        logger.warning("replication %d (sigma2=%g, omega=%g) failed: %s", rep, sigma2, omega, exc)
        return ReplicationResult(sigma2, omega, rep, float("nan"), float("nan"), 0, False,
                                 error=f"{type(exc).__name__}: {exc}"), None
    se_full, se_miss = se_metrics(np.array(point.value), inst.X, prob.mask)
    result = ReplicationResult(sigma2, omega, rep, se_full, se_miss, report.iterations,
                               report.converged, termination_reason=report.termination_reason)
    if cfg.baseline:
        result.se_baseline = se_metrics(baseline_estimate(prob, cfg.fit.s, cfg.fit.K),
                                        inst.X, prob.mask)[0]
    return result, report


def summarize(results: list[ReplicationResult], entries: int) -> ExperimentRow:
    ok = [r for r in results if not r.error]
    se = np.array([r.se_full for r in ok])
    base = np.array([r.se_baseline for r in ok])
    mean = float(se.mean()) if len(se) else float("nan")
    std = float(se.std(ddof=1)) if len(se) > 1 else 0.0
    base_mean = float(base.mean()) if len(base) else float("nan")
    return ExperimentRow(results[0].sigma2, results[0].omega, mean, std, se.tolist(), entries,
                         mean / entries, base_mean, base_mean / entries,
                         failed=len(results) - len(ok))


def run_experiment(cfg: SimConfig, out_dir=None) -> tuple[list[ExperimentRow], list[ReplicationResult]]:
    """Run every (sigma2, omega) cell for ``cfg.replications`` replications.

    When ``out_dir`` is given, writes ``results.csv``, ``summary.json`` and,
    with ``cfg.plots``, one ``trace_<cell>_<rep>.svg`` per replication.
    """
    entries = cfg.m * cfg.m * cfg.L * cfg.N
    rows, all_results = [], []
    for ci, sigma2 in enumerate(cfg.sigma2):
        for wi, omega in enumerate(cfg.omega):
            cell = []
            for rep in range(cfg.replications):
                result, report = run_replication(cfg, rep, sigma2, omega)
                cell.append(result)
                if out_dir is not None and cfg.plots and report is not None:
                    from .plots import write_trace_svg
                    write_trace_svg(report, Path(out_dir) / f"trace_{ci}-{wi}_{rep}.svg",
                                    title=f"sigma2={sigma2:g} omega={omega:g} rep={rep}")
            rows.append(summarize(cell, entries))
            all_results.extend(cell)
    if out_dir is not None:
        write_results(out_dir, cfg, rows, all_results)
    return rows, all_results


RESULT_COLUMNS = ("sigma2", "omega", "rep", "se_full", "se_miss", "iterations", "converged",
                  "se_baseline", "termination_reason", "error")


def write_results(out_dir, cfg: SimConfig, rows: list[ExperimentRow],
                  results: list[ReplicationResult]) -> None:
    out_dir = Path(out_dir)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in results:
        d = asdict(r)
        writer.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in RESULT_COLUMNS])
    atomic_write(out_dir / "results.csv", buf.getvalue())
    summary = {"config": cfg.to_dict(), "rows": [asdict(r) for r in rows]}
    atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")
