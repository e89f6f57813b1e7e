"""
Deterministic optimizer over products of probability simplices.

Every "min over Q_{.|.}" / "max over Q_{.|.}" in the exponent formulas is a
SimplexProblem. The engine:
- evaluates a coarse lattice (step 1/16 per coordinate, coarser if the lattice
  would not fit `max_coarse_points`) plus any problem-supplied seed points,
- keeps the best `starts` feasible candidates per family member,
- refines each by pattern search that moves mass h between two coordinates of
  one simplex block, shrinking h by `shrink` per round down to the final step.

Problems are batched families: `batch` independent instances share one
callable, which receives (points[N, dim], rows[N]) and indexes its own
per-instance parameters with `rows`. Nested minimizations ride on this to
solve many inner problems in one vectorised pass.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.config import Config
from app.core.errors import CapExceededError, UsageError

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray, np.ndarray], np.ndarray]

_IMPROVE_EPS = 1e-15
_NEG_TOL = 1e-12


class Sense(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class OptimizerSettings(BaseModel):
    coarse_resolution: int = Field(default=16, ge=1)
    starts: int = Field(default=32, ge=1)
    rounds: int = Field(default=4, ge=0)
    shrink: int = Field(default=4, ge=2)
    max_moves: int = Field(default=48, ge=1)
    max_coarse_points: int = Field(default=20000, ge=1)
    chunk_points: int = Field(default=200000, ge=1)
    nested_starts: int = Field(default=4, ge=1)
    nested_max_coarse_points: int = Field(default=1500, ge=1)

    @classmethod
    def from_config(cls) -> "OptimizerSettings":
        return cls(
            coarse_resolution=Config.OPT_COARSE_RESOLUTION,
            starts=Config.OPT_STARTS,
            rounds=Config.OPT_ROUNDS,
            shrink=Config.OPT_SHRINK,
            max_moves=Config.OPT_MAX_MOVES,
            max_coarse_points=Config.OPT_MAX_COARSE_POINTS,
            chunk_points=Config.OPT_CHUNK_POINTS,
            nested_starts=Config.OPT_NESTED_STARTS,
            nested_max_coarse_points=Config.OPT_NESTED_MAX_COARSE_POINTS,
        )

    @property
    def final_step(self) -> float:
        return 1.0 / (self.coarse_resolution * self.shrink ** self.rounds)

    def nested(self) -> "OptimizerSettings":
        """Settings for minimizations that run inside another objective."""
        return self.model_copy(update={
            "starts": min(self.starts, self.nested_starts),
            "max_coarse_points": min(self.max_coarse_points, self.nested_max_coarse_points),
        })


@dataclass
class Constraint:
    """Feasible where fn(points, rows) <= tol."""

    fn: Objective
    tol: float = Config.CONSTRAINT_TOL
    name: str = ""

    def __post_init__(self):
        if not self.tol > 0:
            raise UsageError(f"Constraint tolerance must be positive, got {self.tol}")


@dataclass
class SimplexProblem:
    shape: Tuple[int, ...]
    objective: Objective
    constraints: List[Constraint] = field(default_factory=list)
    sense: Sense = Sense.MINIMIZE
    batch: int = 1
    seeds: Optional[np.ndarray] = None
    convex: bool = False

    def __post_init__(self):
        self.shape = tuple(int(k) for k in self.shape)
        if not self.shape or any(k < 1 for k in self.shape):
            raise UsageError(f"Invalid simplex shape {self.shape}")
        if self.free_params > Config.OPT_MAX_FREE_PARAMS:
            raise CapExceededError(
                f"{self.free_params} free parameters exceed the cap of {Config.OPT_MAX_FREE_PARAMS}"
            )
        if self.batch < 1:
            raise UsageError("Problem batch must be at least 1")
        if self.seeds is not None:
            seeds = np.asarray(self.seeds, dtype=float)
            if seeds.ndim == 2:
                seeds = np.broadcast_to(seeds, (self.batch,) + seeds.shape)
            if seeds.ndim != 3 or seeds.shape[0] != self.batch or seeds.shape[2] != self.dim:
                raise UsageError(f"Seeds must have shape (batch, s, {self.dim})")
            self.seeds = seeds

    @property
    def dim(self) -> int:
        return sum(self.shape)

    @property
    def free_params(self) -> int:
        return sum(k - 1 for k in self.shape)

    def split(self, points: np.ndarray) -> List[np.ndarray]:
        """Split (..., dim) points into their simplex blocks."""
        offsets = np.cumsum((0,) + self.shape)
        return [points[..., offsets[i]:offsets[i + 1]] for i in range(len(self.shape))]


@dataclass
class OptResult:
    value: float
    argpoint: Optional[np.ndarray]
    feasible: bool
    refinement_rounds: int
    est_error: float


@dataclass
class BatchResult:
    values: np.ndarray
    argpoints: np.ndarray
    feasible: np.ndarray
    est_error: np.ndarray
    refinement_rounds: int

    def item(self, i: int = 0) -> OptResult:
        feasible = bool(self.feasible[i])
        return OptResult(
            value=float(self.values[i]),
            argpoint=self.argpoints[i].copy() if feasible else None,
            feasible=feasible,
            refinement_rounds=self.refinement_rounds,
            est_error=float(self.est_error[i]),
        )


# ─── Lattices and moves ──────────────────────────────────────


def compositions_array(n: int, k: int) -> np.ndarray:
    """All compositions of n into k parts as an int array, lexicographic order."""
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    parts = []
    for first in range(n + 1):
        rest = compositions_array(n - first, k - 1)
        parts.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int64), rest]))
    return np.vstack(parts)


def lattice_size(shape: Sequence[int], resolution: int) -> int:
    return math.prod(math.comb(resolution + k - 1, k - 1) for k in shape)


def _lattice_chunks(shape: Sequence[int], resolution: int, chunk: int) -> Iterator[np.ndarray]:
    """Yield the product lattice in lexicographic order, `chunk` points at a time."""
    blocks = [compositions_array(resolution, k) / resolution for k in shape]
    sizes = tuple(b.shape[0] for b in blocks)
    total = math.prod(sizes)
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, sizes)
        yield np.hstack([blocks[i][idx[i]] for i in range(len(blocks))])


def _moves(shape: Sequence[int]) -> np.ndarray:
    """Unit moves e_j - e_i inside each block, in (block, i, j) order."""
    dim = sum(shape)
    moves = []
    offset = 0
    for k in shape:
        for i in range(k):
            for j in range(k):
                if i != j:
                    m = np.zeros(dim)
                    m[offset + i] = -1.0
                    m[offset + j] = 1.0
                    moves.append(m)
        offset += k
    return np.array(moves).reshape(-1, dim)


# ─── Evaluation ──────────────────────────────────────────────


def _evaluate(problem: SimplexProblem, points: np.ndarray, rows: np.ndarray, chunk: int) -> Tuple[np.ndarray, np.ndarray]:
    """Internal (minimization) values and feasibility for flat candidate arrays."""
    n = points.shape[0]
    values = np.full(n, np.inf)
    feasible = np.zeros(n, dtype=bool)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        pts, rws = points[sl], rows[sl]
        ok = np.ones(pts.shape[0], dtype=bool)
        for c in problem.constraints:
            if not ok.any():
                break
            idx = np.flatnonzero(ok)
            with np.errstate(all="ignore"):
                g = np.asarray(c.fn(pts[idx], rws[idx]), dtype=float)
            ok[idx] = g <= c.tol
        feasible[sl] = ok
        idx = np.flatnonzero(ok)
        if idx.size:
            with np.errstate(all="ignore"):
                raw = np.asarray(problem.objective(pts[idx], rws[idx]), dtype=float)
            internal = raw if problem.sense == Sense.MINIMIZE else -raw
            internal = np.where(np.isnan(internal), np.inf, internal)
            block = values[sl]
            block[idx] = internal
            values[sl] = block
    return values, feasible


def _rank(values: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Stable ordering: feasible first, then by value; earlier index wins ties."""
    return np.lexsort((values, ~feasible), axis=-1)


def _coarse_pool(problem: SimplexProblem, resolution: int, keep: int, chunk: int):
    """Best `keep` lattice/seed candidates per family member."""
    B, dim = problem.batch, problem.dim
    best_pts = np.empty((B, 0, dim))
    best_val = np.empty((B, 0))
    best_feas = np.empty((B, 0), dtype=bool)

    def merge(pts, val, feas):
        nonlocal best_pts, best_val, best_feas
        all_pts = np.concatenate([best_pts, pts], axis=1)
        all_val = np.concatenate([best_val, val], axis=1)
        all_feas = np.concatenate([best_feas, feas], axis=1)
        order = _rank(all_val, all_feas)[:, :keep]
        best_pts = np.take_along_axis(all_pts, order[:, :, None], axis=1)
        best_val = np.take_along_axis(all_val, order, axis=1)
        best_feas = np.take_along_axis(all_feas, order, axis=1)

    grid_chunk = max(1, min(chunk // B, lattice_size(problem.shape, resolution)))
    for grid in _lattice_chunks(problem.shape, resolution, grid_chunk):
        g = grid.shape[0]
        rows_per = max(1, chunk // g)
        vals = np.empty((B, g))
        feas = np.empty((B, g), dtype=bool)
        for b0 in range(0, B, rows_per):
            b1 = min(B, b0 + rows_per)
            pts = np.broadcast_to(grid, (b1 - b0, g, dim)).reshape(-1, dim)
            rows = np.repeat(np.arange(b0, b1), g)
            v, f = _evaluate(problem, pts, rows, chunk)
            vals[b0:b1] = v.reshape(b1 - b0, g)
            feas[b0:b1] = f.reshape(b1 - b0, g)
        merge(np.broadcast_to(grid, (B, g, dim)), vals, feas)

    if problem.seeds is not None and problem.seeds.shape[1]:
        s = problem.seeds.shape[1]
        pts = problem.seeds.reshape(-1, dim)
        rows = np.repeat(np.arange(B), s)
        v, f = _evaluate(problem, pts, rows, chunk)
        merge(problem.seeds, v.reshape(B, s), f.reshape(B, s))
    return best_pts, best_val, best_feas


def _neighbours(points: np.ndarray, moves: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    nbrs = points[:, None, :] + step * moves[None, :, :]
    valid = np.all(nbrs >= -_NEG_TOL, axis=-1)
    return np.maximum(nbrs, 0.0), valid


def _refine(problem, pts, vals, feas, rows, moves, step, settings):
    """One round of pattern search at a fixed step; returns updated arrays."""
    active = feas.copy()
    for _ in range(settings.max_moves):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        nbrs, valid = _neighbours(pts[idx], moves, step)
        m = moves.shape[0]
        flat_valid = valid.ravel()
        flat_pts = nbrs.reshape(-1, pts.shape[1])[flat_valid]
        flat_rows = np.repeat(rows[idx], m)[flat_valid]
        nv = np.full(idx.size * m, np.inf)
        nf = np.zeros(idx.size * m, dtype=bool)
        if flat_pts.shape[0]:
            v, f = _evaluate(problem, flat_pts, flat_rows, settings.chunk_points)
            nv[flat_valid] = v
            nf[flat_valid] = f
        nv = np.where(nf, nv, np.inf).reshape(idx.size, m)
        nf = nf.reshape(idx.size, m)
        better = nf & (nv < vals[idx, None] - _IMPROVE_EPS)
        masked = np.where(better, nv, np.inf)
        choice = np.argmin(masked, axis=1)
        improved = better[np.arange(idx.size), choice]
        moved = idx[improved]
        pts[moved] = nbrs[improved, choice[improved]]
        vals[moved] = nv[improved, choice[improved]]
        active[idx[~improved]] = False
    return pts, vals


def _pick_best(pts: np.ndarray, vals: np.ndarray, feas: np.ndarray):
    """Per member: lowest value among feasible starts, lexicographically smallest point on ties."""
    key = np.where(feas, vals, np.inf)
    best = key.min(axis=1)
    mask = feas & (key == best[:, None])
    none_feasible = ~feas.any(axis=1)
    for c in range(pts.shape[2]):
        col = np.where(mask, pts[:, :, c], np.inf)
        mask &= col == col.min(axis=1, keepdims=True)
    choice = np.argmax(mask, axis=1)
    choice[none_feasible] = 0
    return choice, none_feasible


def _spread(problem, points, values, rows, moves, step, chunk) -> np.ndarray:
    """Objective spread across the final-step neighbours of each winner."""
    B = points.shape[0]
    out = np.zeros(B)
    finite = np.isfinite(values)
    if not finite.any() or moves.shape[0] == 0:
        return out
    idx = np.flatnonzero(finite)
    nbrs, valid = _neighbours(points[idx], moves, step)
    m = moves.shape[0]
    flat_valid = valid.ravel()
    nv = np.full(idx.size * m, np.nan)
    if flat_valid.any():
        v, f = _evaluate(problem, nbrs.reshape(-1, points.shape[1])[flat_valid],
                         np.repeat(rows[idx], m)[flat_valid], chunk)
        nv[flat_valid] = np.where(f & np.isfinite(v), v, np.nan)
    diffs = np.abs(nv.reshape(idx.size, m) - values[idx, None])
    out[idx] = np.max(np.where(np.isnan(diffs), 0.0, diffs), axis=1)
    return out


def _finish(problem, pts, vals, feas, rounds, moves, step, chunk) -> BatchResult:
    choice, none_feasible = _pick_best(pts, vals, feas)
    B = problem.batch
    win_pts = pts[np.arange(B), choice].copy()
    win_vals = vals[np.arange(B), choice].copy()
    est = _spread(problem, win_pts, np.where(none_feasible, np.inf, win_vals), np.arange(B), moves, step, chunk)
    sign = 1.0 if problem.sense == Sense.MINIMIZE else -1.0
    values = np.where(none_feasible, np.inf, win_vals) * sign
    win_pts[none_feasible] = np.nan
    est[none_feasible] = 0.0
    return BatchResult(values=values, argpoints=win_pts, feasible=~none_feasible,
                       est_error=est, refinement_rounds=rounds)


# ─── Public entry points ─────────────────────────────────────


def solve_batch(problem: SimplexProblem, settings: Optional[OptimizerSettings] = None) -> BatchResult:
    settings = settings or OptimizerSettings.from_config()
    resolution = settings.coarse_resolution
    while resolution > 1 and lattice_size(problem.shape, resolution) > settings.max_coarse_points:
        resolution //= 2
    keep = 1 if problem.convex else settings.starts
    logger.debug(
        f"solve: shape={problem.shape} batch={problem.batch} resolution={resolution} "
        f"lattice={lattice_size(problem.shape, resolution)} starts={keep}"
    )
    pts, vals, feas = _coarse_pool(problem, resolution, keep, settings.chunk_points)
    B, K, dim = pts.shape
    pts = np.array(pts, copy=True).reshape(B * K, dim)
    vals = vals.reshape(B * K).copy()
    feas_flat = feas.reshape(B * K).copy()
    rows = np.repeat(np.arange(B), K)
    moves = _moves(problem.shape)

    step = 1.0 / resolution
    rounds = 0
    if moves.shape[0]:
        while step > settings.final_step * (1 + 1e-9):
            step /= settings.shrink
            rounds += 1
            pts, vals = _refine(problem, pts, vals, feas_flat, rows, moves, step, settings)
    return _finish(problem, pts.reshape(B, K, dim), vals.reshape(B, K), feas_flat.reshape(B, K),
                   rounds, moves, step, settings.chunk_points)


def solve(problem: SimplexProblem, settings: Optional[OptimizerSettings] = None) -> OptResult:
    if problem.batch != 1:
        raise UsageError("solve handles a single problem; use solve_batch for families")
    return solve_batch(problem, settings).item(0)


def solve_oracle(problem: SimplexProblem, step: float) -> OptResult:
    """Exhaustive lattice evaluation at `step` (must be 1/integer); test ground truth."""
    if problem.batch != 1:
        raise UsageError("solve_oracle handles a single problem")
    resolution = int(round(1.0 / step))
    if resolution < 1 or abs(resolution * step - 1.0) > 1e-9:
        raise UsageError(f"Oracle step must be 1/integer, got {step}")
    size = lattice_size(problem.shape, resolution)
    if size > Config.ORACLE_MAX_POINTS:
        raise CapExceededError(f"Oracle lattice of {size} points exceeds {Config.ORACLE_MAX_POINTS}")
    chunk = Config.OPT_CHUNK_POINTS
    pts, vals, feas = _coarse_pool(problem, resolution, 1, chunk)
    moves = _moves(problem.shape)
    return _finish(problem, pts, vals, feas, 0, moves, 1.0 / resolution, chunk).item(0)
