"""Origin-destination ingestion, train/test core refits and rank selection."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import fent
from .errors import DegenerateCoreError, DimensionError, FormatError, UnderdeterminedError
from .manifold import TuckerPoint, project_core
from .objective import Grid, Problem, diagonal_mask, fiber_means
from .optimizer import FitConfig, FitReport, fit, interp_fill
from .tensor import fnorm

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("origin", "destination", "sample", "time", "value")
DATASET_SCHEMA_VERSION = 1
_INT_RE = re.compile(r"^[+-]?\d+$")
_CLOCK_RE = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2}(?:\.\d*)?))?$")


@dataclass(eq=False)
class Dataset:
    """Functional adjacency tensor built from O-D records.

    ``Y`` holds flows summed per (origin, destination, time bin, sample),
    centered when ``centering_means`` is set. ``record_mask`` marks bins
    with at least one record; ``mask`` additionally drops self-loops and
    edges below the flow threshold (a threshold <= 0 keeps every edge).
    """

    Y: np.ndarray
    mask: np.ndarray
    record_mask: np.ndarray
    nodes: list[str]
    samples: list[str]
    grid: Grid
    threshold: float = 0.0
    centering_means: np.ndarray | None = None
    node_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        if len(self.node_index) != len(self.nodes):
            raise ValueError("node ids must be unique")

    def raw_values(self) -> np.ndarray:
        if self.centering_means is None:
            return self.Y
        return np.where(self.record_mask, self.Y + self.centering_means[:, :, None, :], 0.0)

    def problem(self, alpha=0.0) -> Problem:
        # Centering already applied at ingestion, if requested.
        return Problem.build(self.Y, self.mask, alpha, self.grid)

    def same_as(self, other: "Dataset") -> bool:
        means_equal = (self.centering_means is None and other.centering_means is None) or (
            self.centering_means is not None and other.centering_means is not None
            and np.array_equal(self.centering_means, other.centering_means))
        return (self.nodes == other.nodes and self.samples == other.samples
                and self.grid == other.grid and self.threshold == other.threshold
                and np.array_equal(self.Y, other.Y) and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.record_mask, other.record_mask) and means_equal)


def time_to_bin(raw: str, grid: Grid) -> int:
    """Map a CSV time field to a 1-based bin.

    Integers are taken as bin numbers. Real numbers, ``HH:MM[:SS]`` clock
    times and ISO datetimes (time of day, in hours) are placed in the bin
    ``(t_{l-1}, t_l]``, with ``t_0 = T_s``.
    """
    raw = raw.strip()
    if _INT_RE.match(raw):
        b = int(raw)
        if not 1 <= b <= grid.L:
            raise FormatError(f"time bin {b} outside [1, {grid.L}]")
        return b
    try:
        t = float(raw)
    except ValueError:
        t = None
    if t is None:
        clock = _CLOCK_RE.match(raw)
        if clock:
            t = int(clock.group(1)) + int(clock.group(2)) / 60 + float(clock.group(3) or 0) / 3600
        else:
            try:
                dt = datetime.fromisoformat(raw)
            except ValueError:
                raise FormatError(f"unknown time format {raw!r}") from None
            t = dt.hour + dt.minute / 60 + (dt.second + dt.microsecond * 1e-6) / 3600
    if not math.isfinite(t) or not grid.T_s <= t <= grid.T_e:
        raise FormatError(f"time {raw!r} outside [{grid.T_s}, {grid.T_e}]")
    pos = (t - grid.T_s) / grid.step
    if abs(pos - round(pos)) <= 1e-9:
        pos = float(round(pos))
    return min(max(math.ceil(pos), 1), grid.L)


def _parse_rows(text: str, grid: Grid):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty CSV file") from None
    if tuple(header) != CSV_COLUMNS:
        raise FormatError(f"line 1: header must be {','.join(CSV_COLUMNS)}")
    rows, errors = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            errors.append(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            continue
        origin, dest, sample, time, value = (c.strip() for c in row)
        try:
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
        except ValueError:
            errors.append(f"line {lineno}: bad value {value!r}")
            continue
        try:
            b = time_to_bin(time, grid)
        except FormatError as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if not origin or not dest or not sample:
            errors.append(f"line {lineno}: empty identifier")
            continue
        rows.append((origin, dest, sample, b, v))
    if errors:
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        raise FormatError("; ".join(errors[:5]) + more)
    if not rows:
        raise FormatError("CSV file has no records")
    return rows


def ingest_od_csv(path, L: int, T_s: float, T_e: float, threshold: float = 0.0,
                  center: bool = False) -> Dataset:
    """Build a :class:`Dataset` from an ``origin,destination,sample,time,value`` CSV.

    A bin with at least one record is observed even if its flow sums to 0;
    a bin without records is unobserved. Edges whose flow per sample
    (summed over bins, averaged over samples) is below ``threshold`` are
    masked entirely; ``threshold <= 0`` disables this rule. Self-loop records
    are dropped.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    grid = Grid(float(T_s), float(T_e), int(L))
    rows = _parse_rows(Path(path).read_text(), grid)
    rows = [r for r in rows if r[0] != r[1]]
    if not rows:
        raise FormatError("CSV file has no records between distinct stations")
    nodes = sorted({r[0] for r in rows} | {r[1] for r in rows})
    samples = sorted({r[2] for r in rows})
    node_ix = {n: i for i, n in enumerate(nodes)}
    sample_ix = {n: i for i, n in enumerate(samples)}
    m, N = len(nodes), len(samples)
    Y = np.zeros((m, m, L, N))
    record_mask = np.zeros((m, m, L, N), dtype=bool)
    for origin, dest, sample, b, v in rows:
        key = (node_ix[origin], node_ix[dest], b - 1, sample_ix[sample])
        Y[key] += v
        record_mask[key] = True
    per_sample = Y.sum(axis=(2, 3)) / N
    # A non-positive threshold disables the rule (signed flows would otherwise be dropped).
    keep_edge = per_sample >= threshold if threshold > 0 else np.ones((m, m), dtype=bool)
    mask = record_mask & keep_edge[:, :, None, None] & diagonal_mask(m, L, N)
    means = None
    if center:
        means = fiber_means(Y, record_mask)
        Y = np.where(record_mask, Y - means[:, :, None, :], 0.0)
    return Dataset(Y, mask, record_mask, nodes, samples, grid, float(threshold), means)


def export_od_csv(ds: Dataset, path=None) -> str:
    """Write every recorded bin back out as one CSV row (integer time bins)."""
    raw = ds.raw_values()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, j, l, n in zip(*np.nonzero(ds.record_mask)):
        w.writerow([ds.nodes[i], ds.nodes[j], ds.samples[n], l + 1, repr(float(raw[i, j, l, n]))])
    text = buf.getvalue()
    if path is not None:
        fent.atomic_write(path, text)
    return text


def save_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    fent.write_tensor(directory / "Y.fent", ds.Y)
    fent.write_mask(directory / "mask.fent", ds.mask)
    fent.write_mask(directory / "record_mask.fent", ds.record_mask)
    if ds.centering_means is not None:
        fent.write_tensor(directory / "centering.fent", ds.centering_means)
    meta = {"schema_version": DATASET_SCHEMA_VERSION, "nodes": ds.nodes, "samples": ds.samples,
            "grid": ds.grid.to_dict(), "threshold": ds.threshold,
            "centered": ds.centering_means is not None}
    fent.atomic_write(directory / "dataset.json", json.dumps(meta, indent=2) + "\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "dataset.json").read_text())
    if meta.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise FormatError(f"unsupported dataset schema_version {meta.get('schema_version')}")
    means = fent.read_tensor(directory / "centering.fent") if meta.get("centered") else None
    return Dataset(fent.read_tensor(directory / "Y.fent"), fent.read_mask(directory / "mask.fent"),
                   fent.read_mask(directory / "record_mask.fent"), meta["nodes"], meta["samples"],
                   Grid(**meta["grid"]), meta["threshold"], means)


def _design_rows(phi: np.ndarray, G: np.ndarray, I, J, T) -> np.ndarray:
    """Rows of ``Phi kron Phi kron G`` for the (i, j, l) triples given."""
    s, K = phi.shape[1], G.shape[1]
    rows = phi[I][:, :, None, None] * phi[J][:, None, :, None] * G[T][:, None, None, :]
    return rows.reshape(len(I), s * s * K)


def train_test_refit(P_train: TuckerPoint, Y_test: np.ndarray, mask_test: np.ndarray | None = None,
                     mode: str = "projection") -> tuple[np.ndarray, np.ndarray]:
    """Refit only the core on new samples, keeping the trained node and temporal factors.

    ``mode="projection"`` (alias ``"paper"``) projects the interpolation-filled test tensor onto the
    trained factors. ``mode="masked_ls"`` solves, per sample, the least-squares
    problem restricted to observed entries.

    Returns
    -------
    (B_test, Xhat_test)
    """
    Y_test = np.asarray(Y_test, dtype=np.float64)
    phi, G = P_train.phi, P_train.G
    m, s, L, K = P_train.m, P_train.s, P_train.L, P_train.K
    if Y_test.ndim != 4 or Y_test.shape[:3] != (m, m, L):
        raise DimensionError(f"test tensor {Y_test.shape} does not match factors ({m}, {m}, {L}, N)")
    N = Y_test.shape[3]
    mask = np.ones(Y_test.shape, dtype=bool) if mask_test is None else np.asarray(mask_test, bool)
    if mask.shape != Y_test.shape:
        raise DimensionError("test mask dims differ from test tensor")
    if mode in ("projection", "paper"):
        filled = Y_test if mask.all() else interp_fill(Y_test, mask)
        B = project_core(filled, phi, G)
    elif mode in ("masked_ls", "masked-ls"):
        B = np.empty((s, s, K, N))
        for n in range(N):
            I, J, T = np.nonzero(mask[:, :, :, n])
            A = _design_rows(phi, G, I, J, T)
            normal = A.T @ A
            eig = np.linalg.eigvalsh(normal)
            if eig[-1] <= 0 or eig[0] <= 1e-12 * eig[-1]:
                raise UnderdeterminedError(
                    f"sample {n}: {len(I)} observations cannot determine {s * s * K} core entries")
            B[:, :, :, n] = np.linalg.solve(normal, A.T @ Y_test[I, J, T, n]).reshape(s, s, K)
    else:
        raise ValueError(f"unknown refit mode {mode!r}")
    Xhat = TuckerPoint(B, phi, G).value
    return B, np.array(Xhat)


def holdout_mask(mask: np.ndarray, fraction: float, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Split observed entries into (training mask, validation mask)."""
    if not 0 < fraction < 1:
        raise ValueError("holdout fraction must lie in (0, 1)")
    obs = np.flatnonzero(mask)
    count = int(round(fraction * obs.size))
    chosen = np.random.default_rng(seed).permutation(obs)[:count]
    val = np.zeros(mask.size, dtype=bool)
    val[chosen] = True
    val = val.reshape(mask.shape)
    return mask & ~val, val


@dataclass
class GridSearchResult:
    table: list[dict]
    best: tuple[int, int]
    point: TuckerPoint | None = None
    report: FitReport | None = None

    def to_dict(self) -> dict:
        return {"table": self.table, "selected": {"s": self.best[0], "K": self.best[1]}}


def gridsearch(prob: Problem, s_list, K_list, holdout: float = 0.1, seed: int = 0,
               base: FitConfig | None = None, refit: bool = True) -> GridSearchResult:
    """Select (s, K) by held-out masked squared error, then refit on all observations."""
    base = base or FitConfig(s=1, K=1)
    train, val = holdout_mask(prob.mask, holdout, seed)
    train_prob = Problem(prob.Y, train, prob.alpha, prob.grid, prob.centering_means)
    table = []
    for s in s_list:
        for K in K_list:
            row = {"s": int(s), "K": int(K), "heldout_se": math.inf, "error": ""}
            try:
                cfg = FitConfig(**{**base.__dict__, "s": int(s), "K": int(K)})
                point, report = fit(train_prob, cfg)
                row["heldout_se"] = fnorm(np.where(val, point.value - prob.Y, 0.0)) ** 2
                row["iterations"] = report.iterations
            except (DegenerateCoreError, DimensionError, ValueError) as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
                logger.info("gridsearch (s=%d, K=%d) failed: %s", s, K, exc)
            table.append(row)
    ok = [r for r in table if math.isfinite(r["heldout_se"])]
    if not ok:
        raise ValueError("every (s, K) candidate failed")
    # Errors indistinguishable at round-off level count as ties; prefer smaller ranks.
    tie = 1e-10 * fnorm(np.where(val, prob.Y, 0.0)) ** 2
    floor = min(r["heldout_se"] for r in ok)
    best_row = min((r for r in ok if r["heldout_se"] <= floor + tie), key=lambda r: (r["s"], r["K"]))
    best = (best_row["s"], best_row["K"])
    result = GridSearchResult(table, best)
    if refit:
        cfg = FitConfig(**{**base.__dict__, "s": best[0], "K": best[1]})
        result.point, result.report = fit(prob, cfg)
    return result
