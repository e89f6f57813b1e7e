"""
Finite-alphabet probability objects and the method of types.

Handles:
- JointDist / CondDist / TypeDescriptor value objects (immutable, dense)
- Information measures in nats with 0 log 0 = 0 and +inf for absolute-continuity violations
- Type enumeration, exact type-class sizes, empirical joint distributions
- The `dist <name> ... end` text format shared by every command

The *_array helpers take batched numpy arrays whose trailing axes hold the
distribution. The optimizers call them on thousands of candidates at once.
"""
import itertools
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import entr, rel_entr

from app.config import Config
from app.core.errors import CapExceededError, ConfigError, UsageError

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if not isinstance(self.size, (int, np.integer)) or self.size < 1:
            raise UsageError(f"Alphabet size must be a positive integer, got {self.size}")
        if self.size > Config.MAX_ALPHABET:
            raise CapExceededError(f"Alphabet size {self.size} exceeds cap {Config.MAX_ALPHABET}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class JointDist:
    """Joint pmf over 1 to 3 finite axes."""

    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = _frozen(self.mass)
        if mass.ndim < 1 or mass.ndim > 3:
            raise UsageError(f"JointDist needs 1 to 3 axes, got {mass.ndim}")
        for size in mass.shape:
            Alphabet(int(size))
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise UsageError("JointDist entries must be finite and nonnegative")
        total = float(mass.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise UsageError(f"JointDist entries sum to {total!r}, not 1")
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_array(cls, arr, normalize: bool = False) -> "JointDist":
        arr = np.asarray(arr, dtype=float)
        if normalize:
            total = arr.sum()
            if total <= 0:
                raise UsageError("Cannot normalize an all-zero array")
            arr = arr / total
        return cls(arr)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(s) for s in self.mass.shape)

    @property
    def ndim(self) -> int:
        return self.mass.ndim

    def marginal(self, axes: Sequence[int]) -> "JointDist":
        return marginal(self, axes)

    def __eq__(self, other):
        return isinstance(other, JointDist) and self.dims == other.dims and np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash((self.dims, self.mass.tobytes()))


@dataclass(frozen=True)
class CondDist:
    """One probability row over `out_dim` per conditioning symbol."""

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = _frozen(self.rows)
        if rows.ndim != 2:
            raise UsageError("CondDist rows must be a 2-D array")
        Alphabet(rows.shape[0])
        Alphabet(rows.shape[1])
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > SUM_TOL):
            raise UsageError("Each CondDist row must be a probability vector")
        object.__setattr__(self, "rows", rows)

    @property
    def given_dim(self) -> int:
        return int(self.rows.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class TypeDescriptor:
    n: int
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts) or sum(counts) != self.n or self.n < 1:
            raise UsageError(f"Invalid type counts {counts} for n={self.n}")
        Alphabet(len(counts))
        object.__setattr__(self, "counts", counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    def distribution(self) -> JointDist:
        return JointDist(self.as_array())


# ─── Array helpers ───────────────────────────────────────────


def safe_log(p: np.ndarray) -> np.ndarray:
    """Elementwise log with log 0 = -inf and no floating-point warnings."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)


def entropy_array(p: np.ndarray, naxes: int = 1) -> np.ndarray:
    axes = tuple(range(-naxes, 0))
    return np.sum(entr(np.clip(p, 0.0, None)), axis=axes)


def cond_entropy_array(q: np.ndarray) -> np.ndarray:
    """H(first axis | last axis) for arrays shaped (..., a, b)."""
    return entropy_array(q, 2) - entropy_array(q.sum(axis=-2), 1)


def mutual_info_array(q: np.ndarray) -> np.ndarray:
    h_u = entropy_array(q.sum(axis=-1), 1)
    h_v = entropy_array(q.sum(axis=-2), 1)
    return np.maximum(h_u + h_v - entropy_array(q, 2), 0.0)


def kl_array(q: np.ndarray, p: np.ndarray, naxes: int = 1) -> np.ndarray:
    axes = tuple(range(-naxes, 0))
    return np.sum(rel_entr(np.clip(q, 0.0, None), p), axis=axes)


def expect_log_array(q: np.ndarray, log_p: np.ndarray, naxes: int = 1) -> np.ndarray:
    """E_q[log p] with 0 * log 0 = 0; -inf when q charges a zero of p."""
    axes = tuple(range(-naxes, 0))
    terms = np.where(q > 0, q * np.where(np.isfinite(log_p), log_p, 0.0), 0.0)
    total = np.sum(terms, axis=axes)
    violated = np.any((q > 0) & ~np.isfinite(log_p), axis=axes)
    return np.where(violated, -np.inf, total)


# ─── Information measures ────────────────────────────────────


def _check_axes(d: JointDist, axes: Sequence[int]) -> Tuple[int, ...]:
    axes = tuple(sorted(set(int(a) for a in axes)))
    if not axes:
        raise UsageError("Axis subset must be nonempty")
    for a in axes:
        if a < 0 or a >= d.ndim:
            raise UsageError(f"Invalid axis {a} for a {d.ndim}-axis distribution")
    return axes


def marginal(d: JointDist, axes: Sequence[int]) -> JointDist:
    keep = _check_axes(d, axes)
    drop = tuple(a for a in range(d.ndim) if a not in keep)
    return JointDist(d.mass.sum(axis=drop) if drop else d.mass)


def entropy(d: JointDist, axes: Sequence[int] = (0,)) -> float:
    m = marginal(d, axes).mass
    return float(entropy_array(m, m.ndim))


def cond_entropy(d: JointDist, target: Sequence[int], given: Sequence[int]) -> float:
    target = _check_axes(d, target)
    given = _check_axes(d, given)
    if set(target) & set(given):
        raise UsageError("Target and conditioning axes must be disjoint")
    value = entropy(d, target + given) - entropy(d, given)
    return max(value, 0.0)


def mutual_info(d: JointDist) -> float:
    if d.ndim != 2:
        raise UsageError(f"mutual_info needs a 2-axis distribution, got {d.ndim}")
    return float(mutual_info_array(d.mass))


def kl_divergence(q: JointDist, p: JointDist) -> float:
    if q.dims != p.dims:
        raise UsageError(f"Dimension mismatch: {q.dims} vs {p.dims}")
    return float(kl_array(q.mass, p.mass, q.ndim))


def conditional(d: JointDist) -> CondDist:
    """P_{V|U} of a 2-axis distribution; rows with zero mass become uniform."""
    if d.ndim != 2:
        raise UsageError("conditional needs a 2-axis distribution")
    return CondDist(conditional_rows(d.mass))


def conditional_rows(mass: np.ndarray) -> np.ndarray:
    row_mass = mass.sum(axis=-1, keepdims=True)
    uniform = np.full_like(mass, 1.0 / mass.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(row_mass > 0, mass / np.where(row_mass > 0, row_mass, 1.0), uniform)


def compose(q_u: np.ndarray, cond: CondDist) -> JointDist:
    q_u = np.asarray(q_u, dtype=float).ravel()
    if q_u.shape[0] != cond.given_dim:
        raise UsageError("Marginal and conditional alphabets differ")
    return JointDist(q_u[:, None] * cond.rows)


def product(q_u: np.ndarray, q_v: np.ndarray) -> JointDist:
    return JointDist(np.outer(np.asarray(q_u, dtype=float).ravel(), np.asarray(q_v, dtype=float).ravel()))


# ─── Method of types ─────────────────────────────────────────


def compositions(n: int, k: int) -> Iterator[Tuple[int, ...]]:
    """All ways to write n as k ordered nonnegative parts, lexicographic order."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in compositions(n - first, k - 1):
            yield (first,) + rest


def enumerate_types(n: int, alphabet: int) -> List[TypeDescriptor]:
    if n < 1:
        raise UsageError("Blocklength must be at least 1")
    Alphabet(alphabet)
    return [TypeDescriptor(n, c) for c in compositions(n, alphabet)]


def type_class_size(t: TypeDescriptor) -> int:
    size = math.factorial(t.n)
    for c in t.counts:
        size //= math.factorial(c)
    return size


def joint_type_counts(x: Sequence[int], y: Sequence[int], u_size: int, v_size: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    counts = np.zeros((u_size, v_size), dtype=np.int64)
    np.add.at(counts, (x, y), 1)
    return counts


def empirical_joint(
    x: Sequence[int],
    y: Sequence[int],
    u_size: Optional[int] = None,
    v_size: Optional[int] = None,
) -> JointDist:
    if len(x) != len(y):
        raise UsageError(f"Sequence lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 1:
        raise UsageError("Sequences must be nonempty")
    u_size = u_size or int(max(x)) + 1
    v_size = v_size or int(max(y)) + 1
    counts = joint_type_counts(x, y, u_size, v_size)
    return JointDist(counts / len(x))


# ─── Text format ─────────────────────────────────────────────

_HEADER = re.compile(r"^dist\s+(\S+)\s*$")


def _token_columns(line: str) -> Iterator[Tuple[int, str]]:
    for match in re.finditer(r"\S+", line):
        yield match.start() + 1, match.group(0)


def parse_distributions(text: str, first_line: int = 1) -> Dict[str, JointDist]:
    """
    Parse every `dist <name>` ... `end` block in text.

    Args:
        text: file contents; lines outside blocks are ignored here.
        first_line: line number of the first line, for error messages.

    Returns:
        Mapping from block name to a 2-axis JointDist (rows = U, columns = V).
    """
    dists: Dict[str, JointDist] = {}
    name = None
    rows: List[List[float]] = []
    start = 0
    for offset, raw in enumerate(text.splitlines()):
        lineno = first_line + offset
        line = raw.split("#")[0].rstrip()
        if not line.strip():
            continue
        if name is None:
            header = _HEADER.match(line.strip())
            if header:
                name, rows, start = header.group(1), [], lineno
            continue
        if line.strip() == "end":
            dists[name] = _block_to_dist(name, rows, start)
            name = None
            continue
        row = []
        for column, token in _token_columns(line):
            try:
                value = float(token)
            except ValueError:
                raise ConfigError(f"not a number: {token!r}", lineno, column)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"probability must be finite and nonnegative: {token!r}", lineno, column)
            row.append(value)
        if rows and len(row) != len(rows[0]):
            raise ConfigError(f"row has {len(row)} entries, expected {len(rows[0])}", lineno, 1)
        rows.append(row)
    if name is not None:
        raise ConfigError(f"block '{name}' is missing 'end'", start, 1)
    return dists


def _block_to_dist(name: str, rows: List[List[float]], lineno: int) -> JointDist:
    if not rows:
        raise ConfigError(f"block '{name}' has no rows", lineno, 1)
    try:
        return JointDist(np.asarray(rows, dtype=float))
    except CapExceededError:
        raise
    except UsageError as e:
        raise ConfigError(f"block '{name}': {e}", lineno, 1)


def format_distribution(name: str, d: JointDist) -> str:
    mass = np.atleast_2d(d.mass)
    lines = [f"dist {name}"]
    lines += [" ".join(format(float(x), ".17g") for x in row) for row in mass]
    lines.append("end")
    return "\n".join(lines) + "\n"


def all_sequences(n: int, alphabet: int) -> np.ndarray:
    """Every length-n sequence as rows of an int array, in lexicographic order."""
    return np.array(list(itertools.product(range(alphabet), repeat=n)), dtype=np.int64).reshape(-1, n)
