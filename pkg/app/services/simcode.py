"""
Exact small-blocklength simulator of the SD binning ensemble.

Handles:
- code planning (per-type mode and bin budget) and seeded code sampling
- exact per-code error probability under MAP, MCE, GLD and SCE decoding
- ensemble averages on a worker pool, exact excess-rate probability
- bin-pair and conditional enumerators, and the Z_u(v) concentration check

Sequences are enumerated exhaustively in lexicographic order, so every
quantity is an exact finite sum; only the bin assignment is random.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, xlogy

from app.config import Config
from app.core.errors import CapExceededError, UsageError
from app.core.probdist import (
    JointDist,
    TypeDescriptor,
    all_sequences,
    entropy_array,
    joint_type_counts,
    safe_log,
    type_class_size,
)
from app.core.simplexopt import OptimizerSettings, compositions_array
from app.services.exponents import SourceView, binned_margin, gamma_batch
from app.services.rates import RateEvaluator, metric_function
from app.services.schemas import (
    DecoderKind,
    DecoderSpec,
    EnsembleEstimate,
    MetricKind,
    MetricSpec,
    RateFunctionSpec,
    ZCheckReport,
)

logger = logging.getLogger(__name__)

_TIE_TOL = 1e-9


class BinMode(str, Enum):
    RANDOM_BINNING = "random_binning"
    ONE_TO_ONE = "one_to_one"


# ─── Sequence layout ─────────────────────────────────────────


@dataclass(frozen=True)
class SequenceLayout:
    """All a^n sequences in lexicographic order, with their type classes."""

    n: int
    a: int
    sequences: np.ndarray
    type_index: np.ndarray
    types: Tuple[TypeDescriptor, ...]
    type_sizes: Tuple[int, ...]
    rank: np.ndarray

    @property
    def size(self) -> int:
        return self.sequences.shape[0]

    def index_of(self, seq: Sequence[int]) -> int:
        idx = 0
        for s in seq:
            idx = idx * self.a + int(s)
        return idx


def _check_sequences(n: int, a: int) -> None:
    if n < 1:
        raise UsageError("Blocklength must be at least 1")
    if a ** n > Config.SIM_MAX_SEQUENCES:
        raise CapExceededError(f"{a}^{n} sequences exceed the simulator cap of {Config.SIM_MAX_SEQUENCES}")


@lru_cache(maxsize=8)
def sequence_layout(n: int, a: int) -> SequenceLayout:
    _check_sequences(n, a)
    seqs = all_sequences(n, a)
    counts = np.stack([np.count_nonzero(seqs == s, axis=1) for s in range(a)], axis=1)
    # np.unique sorts rows lexicographically, matching the order of enumerate_types
    unique, type_index = np.unique(counts, axis=0, return_inverse=True)
    type_index = np.asarray(type_index).ravel()
    types = tuple(TypeDescriptor(n, tuple(int(c) for c in row)) for row in unique)
    order = np.argsort(type_index, kind="stable")
    starts = np.searchsorted(type_index[order], np.arange(len(types)))
    rank = np.empty(seqs.shape[0], dtype=np.int64)
    rank[order] = np.arange(seqs.shape[0]) - starts[type_index[order]]
    for arr in (seqs, type_index, rank):
        arr.setflags(write=False)
    return SequenceLayout(
        n=n, a=a, sequences=seqs, type_index=type_index, types=types,
        type_sizes=tuple(type_class_size(t) for t in types), rank=rank,
    )


# ─── Codes ───────────────────────────────────────────────────


@dataclass(frozen=True)
class CodePlan:
    """Per-type rates, modes and bin budgets; everything but the random draw."""

    layout: SequenceLayout
    rates: np.ndarray
    modes: Tuple[BinMode, ...]
    bin_counts: Tuple[int, ...]
    rate_label: str


@dataclass(frozen=True)
class BinningCode:
    plan: CodePlan
    assignment: np.ndarray
    seed: int
    code_index: int

    @property
    def n(self) -> int:
        return self.plan.layout.n

    @property
    def layout(self) -> SequenceLayout:
        return self.plan.layout

    def bin_of(self, seq_index: int) -> Tuple[int, int]:
        """(type index, bin index) of a sequence."""
        return int(self.layout.type_index[seq_index]), int(self.assignment[seq_index])

    def group_keys(self) -> np.ndarray:
        """One integer per sequence, equal exactly for sequences sharing type and bin."""
        width = int(self.assignment.max()) + 1
        return self.layout.type_index.astype(np.int64) * width + self.assignment


def _bin_count(n: int, rate: float, class_size: int) -> int:
    if not math.isfinite(rate) or n * rate > 700:
        return class_size
    return max(1, math.ceil(math.exp(n * rate)))


def plan_code(n: int, P, R: RateFunctionSpec, settings: Optional[OptimizerSettings] = None) -> CodePlan:
    src = SourceView(P)
    layout = sequence_layout(n, src.a)
    q_u = np.array([t.as_array() for t in layout.types])
    rates = np.asarray(RateEvaluator(R, src.p, settings)(q_u), dtype=float)
    binned = binned_margin(rates, q_u) <= Config.CONSTRAINT_TOL
    counts, modes = [], []
    for size, is_binned, r in zip(layout.type_sizes, binned, rates):
        count = _bin_count(n, float(r), size)
        # |T| <= e^{nH} <= e^{nR} keeps the one-to-one map injective
        if not is_binned:
            modes.append(BinMode.ONE_TO_ONE)
            count = max(count, size)
        else:
            modes.append(BinMode.RANDOM_BINNING)
        counts.append(count)
    logger.debug(f"plan: n={n} types={len(modes)} random_binning={int(binned.sum())} rate={R.label()}")
    return CodePlan(layout=layout, rates=rates, modes=tuple(modes), bin_counts=tuple(counts),
                    rate_label=R.label())


def code_rng(seed: int, code_index: int) -> np.random.Generator:
    """Counter-based stream for one code; independent of how codes are scheduled."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, code_index], dtype=np.uint64)))


def assign_bins(plan: CodePlan, seed: int, code_index: int = 0) -> BinningCode:
    layout = plan.layout
    draws = code_rng(seed, code_index).random(layout.size)
    counts = np.array([c if m == BinMode.RANDOM_BINNING else 1 for c, m in zip(plan.bin_counts, plan.modes)],
                      dtype=np.int64)[layout.type_index]
    random_bins = np.minimum(np.floor(draws * counts).astype(np.int64), counts - 1)
    one_to_one = np.array([m == BinMode.ONE_TO_ONE for m in plan.modes])[layout.type_index]
    assignment = np.where(one_to_one, layout.rank, random_bins)
    assignment.setflags(write=False)
    return BinningCode(plan=plan, assignment=assignment, seed=seed, code_index=code_index)


def sample_code(n: int, P, R: RateFunctionSpec, seed: int, code_index: int = 0,
                settings: Optional[OptimizerSettings] = None) -> BinningCode:
    return assign_bins(plan_code(n, P, R, settings), seed, code_index)


# ─── Exact error probability ─────────────────────────────────


class PairTable:
    """
    log P^n(u, v) and decoder scores for every (u, v) pair at blocklength n.
    Shared by all codes of an ensemble.
    """

    def __init__(self, n: int, P, dec: DecoderSpec):
        src = SourceView(P)
        self.n, self.a, self.b = n, src.a, src.b
        self.decoder = dec
        _check_sequences(n, self.a)
        _check_sequences(n, self.b)
        N, M = self.a ** n, self.b ** n
        if N * M > Config.SIM_MAX_PAIRS:
            raise CapExceededError(f"{N}x{M} sequence pairs exceed the cap of {Config.SIM_MAX_PAIRS}")
        self.u_seqs = sequence_layout(n, self.a).sequences
        self.v_seqs = all_sequences(n, self.b)
        self.log_p = self._sum_letters(safe_log(src.p))
        self.score = self._scores(dec, src)

    def _sum_letters(self, table: np.ndarray) -> np.ndarray:
        out = np.zeros((self.u_seqs.shape[0], self.v_seqs.shape[0]))
        for i in range(self.n):
            out += table[np.ix_(self.u_seqs[:, i], self.v_seqs[:, i])]
        return out

    def _neg_cond_entropy(self) -> np.ndarray:
        """-n H(u|v) of every pair's joint type, in nats."""
        N, M = self.u_seqs.shape[0], self.v_seqs.shape[0]
        out = np.empty((N, M))
        chunk = max(1, (1 << 20) // (M * self.a * self.b))
        v_counts = np.stack([np.count_nonzero(self.v_seqs == y, axis=1) for y in range(self.b)], axis=1)
        v_term = xlogy(v_counts, v_counts).sum(axis=1)
        for lo in range(0, N, chunk):
            hi = min(N, lo + chunk)
            counts = np.zeros((hi - lo, M, self.a, self.b))
            rows, cols = np.arange(hi - lo)[:, None], np.arange(M)[None, :]
            for i in range(self.n):
                counts[rows, cols, self.u_seqs[lo:hi, i][:, None], self.v_seqs[:, i][None, :]] += 1
            out[lo:hi] = xlogy(counts, counts).sum(axis=(2, 3)) - v_term[None, :]
        return out

    def _scores(self, dec: DecoderSpec, src: SourceView) -> np.ndarray:
        if dec.kind == DecoderKind.MAP:
            return self.log_p
        if dec.kind in (DecoderKind.MCE, DecoderKind.SCE) or dec.metric.kind == MetricKind.NEG_COND_ENTROPY:
            return self._neg_cond_entropy()
        # n f(P_hat) = beta sum_i log P~(u_i, v_i) for the log-likelihood metrics
        tilde = src.p if dec.metric.tilde_p is None else np.asarray(dec.metric.tilde_p, dtype=float)
        return dec.metric.beta * self._sum_letters(safe_log(tilde))

    @property
    def stochastic(self) -> bool:
        return self.decoder.kind in (DecoderKind.GLD, DecoderKind.SCE)


def _group_reduce(keys: np.ndarray):
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    gid = np.cumsum(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]]) - 1
    return order, starts, gid


def exact_pe(code: BinningCode, P, dec: DecoderSpec, table: Optional[PairTable] = None) -> float:
    """Exact error probability of one code: sum of P(u, v) times the in-bin error ratio."""
    table = table or PairTable(code.n, P, dec)
    if table.n != code.n or table.a != code.layout.a:
        raise UsageError("Pair table and code disagree on blocklength or alphabet")
    order, starts, gid = _group_reduce(code.group_keys())
    scores = table.score[order]
    top = np.maximum.reduceat(scores, starts, axis=0)[gid]
    if table.stochastic:
        with np.errstate(invalid="ignore"):
            w = np.exp(scores - top)
        # A bin where every metric is -inf decodes uniformly
        w = np.where(np.isneginf(top), 1.0, w)
        ratio = 1.0 - w / np.add.reduceat(w, starts, axis=0)[gid]
    else:
        winners = scores >= top - _TIE_TOL
        m = np.add.reduceat(winners.astype(np.int64), starts, axis=0)[gid]
        ratio = np.where(winners, (m - 1) / m, 1.0)
    binned = np.array([mode == BinMode.RANDOM_BINNING for mode in code.plan.modes])[code.layout.type_index[order]]
    with np.errstate(under="ignore"):
        weights = np.exp(table.log_p[order])
    pe = float(np.sum(weights[binned] * ratio[binned]))
    return min(max(pe, 0.0), 1.0)


def ensemble_stats(n: int, P, R: RateFunctionSpec, dec: DecoderSpec, codes: int, seed: int,
                   workers: Optional[int] = None, settings: Optional[OptimizerSettings] = None) -> EnsembleEstimate:
    """Exact P_e for `codes` independent draws, with random-coding and TRC style averages."""
    if codes < 1:
        raise UsageError("Need at least one code")
    plan = plan_code(n, P, R, settings)
    table = PairTable(n, P, dec)

    def run(index: int) -> float:
        return exact_pe(assign_bins(plan, seed, index), P, dec, table)

    with ThreadPoolExecutor(max_workers=workers or Config.SIM_WORKERS) as pool:
        per_code = list(pool.map(run, range(codes)))

    pe = np.array(per_code)
    mean_pe = math.fsum(per_code) / codes
    se_pe = float(pe.std(ddof=1) / math.sqrt(codes)) if codes > 1 else 0.0
    zero = int(np.count_nonzero(pe == 0.0))
    if zero:
        mean_log_pe, se_log_pe = -math.inf, math.inf
        if zero == codes:
            logger.warning(f"ensemble: all {codes} codes have P_e = 0 at n={n}; TRC exponent reported as +inf")
    else:
        logs = np.log(pe)
        mean_log_pe = math.fsum(logs.tolist()) / codes
        se_log_pe = float(logs.std(ddof=1) / math.sqrt(codes)) if codes > 1 else 0.0
    logger.info(f"ensemble: n={n} codes={codes} decoder={dec.kind.value} mean_pe={mean_pe:.6g}")
    return EnsembleEstimate(
        n=n,
        codes=codes,
        seed=seed,
        decoder=dec.kind.value,
        rate_spec=plan.rate_label,
        mean_pe=mean_pe,
        mean_log_pe=mean_log_pe,
        se_pe=se_pe,
        se_log_pe=se_log_pe,
        per_code_pe=per_code,
        exponent_rc=-math.log(mean_pe) / n if mean_pe > 0 else math.inf,
        exponent_trc=-mean_log_pe / n,
        zero_pe_codes=zero,
        all_zero=zero == codes,
    )


# ─── Excess-rate probability ─────────────────────────────────


def exact_excess_rate_prob(n: int, P, R: RateFunctionSpec, delta: float,
                           settings: Optional[OptimizerSettings] = None) -> float:
    """P{ R(P_hat_u) >= H_hat(U|V) + delta }, summed exactly over joint types."""
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    src = SourceView(P)
    cells = src.a * src.b
    if math.comb(n + cells - 1, cells - 1) > Config.SIM_MAX_SEQUENCES:
        raise CapExceededError(f"Too many joint types at n={n} for a {src.a}x{src.b} source")
    counts = compositions_array(n, cells)
    # Types charging a zero of P have probability 0
    counts = counts[~np.any(counts[:, ~src.mask.ravel()] > 0, axis=1)]
    q = counts.reshape(-1, src.a, src.b) / n
    rates = RateEvaluator(R, src.p, settings)(q.sum(axis=2))
    h_cond = entropy_array(q, 2) - entropy_array(q.sum(axis=1))
    event = rates >= h_cond + delta - Config.CONSTRAINT_TOL
    log_p = np.where(src.mask, np.log(np.where(src.mask, src.p, 1.0)), 0.0).ravel()
    terms = []
    for row in counts[event]:
        multinomial = math.factorial(n)
        for c in row:
            multinomial //= math.factorial(int(c))
        terms.append(multinomial * math.exp(float(np.dot(row, log_p))))
    return min(math.fsum(terms), 1.0)


# ─── Enumerators ─────────────────────────────────────────────


def _pair_counts(x: np.ndarray, y: np.ndarray, a: int, b: int) -> np.ndarray:
    """Joint-type counts of every pair of rows of x (k, n) and y (l, n): (k, l, a, b)."""
    ox = (x[:, :, None] == np.arange(a)).astype(np.int64)
    oy = (y[:, :, None] == np.arange(b)).astype(np.int64)
    return np.einsum("ipx,jpy->ijxy", ox, oy)


def enumerator_stats(code: BinningCode, q_uu) -> int:
    """
    Number of ordered pairs (u, u') sharing a bin whose joint type is q_uu,
    given as integer counts summing to n or as a distribution.
    """
    arr = np.asarray(q_uu.mass if isinstance(q_uu, JointDist) else q_uu, dtype=float)
    if code.n > 1 and abs(arr.sum() - 1.0) < 1e-9:
        arr = arr * code.n
    target = np.rint(arr).astype(np.int64)
    layout = code.layout
    if target.shape != (layout.a, layout.a) or target.sum() != code.n:
        raise UsageError(f"q_uu must be an {layout.a}x{layout.a} joint type with n={code.n}")
    rows, cols = target.sum(axis=1), target.sum(axis=0)
    if not np.array_equal(rows, cols):
        # Different type classes never share a bin
        return 0
    t = layout.types.index(TypeDescriptor(code.n, tuple(int(c) for c in rows)))
    members = np.flatnonzero(layout.type_index == t)
    bins = code.assignment[members]
    order = np.argsort(bins, kind="stable")
    members, bins = members[order], bins[order]
    edges = np.flatnonzero(np.r_[True, bins[1:] != bins[:-1], True])
    if np.sum(np.diff(edges) ** 2) > Config.SIM_MAX_PAIRS:
        raise CapExceededError("Too many in-bin pairs to enumerate")
    total = 0
    for lo, hi in zip(edges[:-1], edges[1:]):
        seqs = layout.sequences[members[lo:hi]]
        counts = _pair_counts(seqs, seqs, layout.a, layout.a)
        total += int(np.count_nonzero(np.all(counts == target, axis=(2, 3))))
    return total


def _bin_mates(code: BinningCode, u_index: int) -> np.ndarray:
    t, b = code.bin_of(u_index)
    mates = np.flatnonzero((code.layout.type_index == t) & (code.assignment == b))
    return mates[mates != u_index]


def conditional_enumerator(code: BinningCode, u_index: int, v: Sequence[int], b: int) -> Dict[Tuple[int, ...], int]:
    """N_{u,v}(Q): for each joint type Q (as flattened counts), the number of u~ != u in u's bin with type Q against v."""
    v = np.asarray(v, dtype=np.int64)
    if v.shape != (code.n,):
        raise UsageError(f"v must have length {code.n}")
    mates = _bin_mates(code, u_index)
    result: Dict[Tuple[int, ...], int] = {}
    for idx in mates:
        key = tuple(int(c) for c in joint_type_counts(code.layout.sequences[idx], v, code.layout.a, b).ravel())
        result[key] = result.get(key, 0) + 1
    return result


# ─── Z_u(v) concentration ────────────────────────────────────


def z_concentration_check(code: BinningCode, P, f: MetricSpec, epsilon: float, draws: int = 50,
                          seed: Optional[int] = None, settings: Optional[OptimizerSettings] = None) -> ZCheckReport:
    """
    Draws (u, v) from P^n and compares log Z_u(v) = log sum over the bin mates of
    exp{n f(P_hat)} with n * alpha(R + epsilon, P_hat_u, P_hat_v).
    """
    if not epsilon > 0:
        raise UsageError(f"epsilon must be positive, got {epsilon}")
    src = SourceView(P)
    settings = settings or OptimizerSettings.from_config()
    n, a, b = code.n, src.a, src.b
    metric = metric_function(f, src.p)
    # Jumped so the draws do not reuse the bin-assignment stream
    rng = np.random.Generator(code_rng(code.seed if seed is None else seed, code.code_index).bit_generator.jumped())
    cells = rng.choice(a * b, size=(draws, n), p=src.p.ravel())
    us, vs = cells // b, cells % b

    q_u = np.stack([np.bincount(u, minlength=a) for u in us]) / n
    q_v = np.stack([np.bincount(v, minlength=b) for v in vs]) / n
    u_index = np.array([code.layout.index_of(u) for u in us], dtype=np.int64)
    u_types = code.layout.type_index[u_index]
    # One-to-one types have no bin mates and no partition sum to check
    binned = np.array([code.plan.modes[t] == BinMode.RANDOM_BINNING for t in u_types], dtype=bool)
    alpha = np.full(draws, np.nan)
    if binned.any():
        rates = code.plan.rates[u_types[binned]] + epsilon
        alpha[binned] = gamma_batch(q_u[binned], q_v[binned], rates, metric, settings.nested())

    skipped = violations = 0
    for i in range(draws):
        if not binned[i] or not np.isfinite(alpha[i]):
            skipped += 1
            continue
        mates = _bin_mates(code, u_index[i])
        if mates.size:
            counts = _pair_counts(code.layout.sequences[mates], vs[i][None, :], a, b)[:, 0]
            log_z = float(logsumexp(n * metric(counts / n)))
        else:
            log_z = -math.inf
        if log_z < n * alpha[i]:
            violations += 1
    evaluated = draws - skipped
    bound = math.exp(min(0.0, -math.exp(n * epsilon) + n * epsilon + 1))
    return ZCheckReport(
        n=n, epsilon=epsilon, trials=draws, skipped=skipped, violations=violations,
        violation_fraction=violations / evaluated if evaluated else 0.0, tail_bound=bound,
    )


def z_concentration_sweep(n: int, P, R: RateFunctionSpec, f: MetricSpec, epsilon: float, codes: int,
                          draws: int, seed: int, settings: Optional[OptimizerSettings] = None) -> ZCheckReport:
    plan = plan_code(n, P, R, settings)
    reports: List[ZCheckReport] = [
        z_concentration_check(assign_bins(plan, seed, i), P, f, epsilon, draws, settings=settings)
        for i in range(codes)
    ]
    trials = sum(r.trials for r in reports)
    skipped = sum(r.skipped for r in reports)
    violations = sum(r.violations for r in reports)
    evaluated = trials - skipped
    return ZCheckReport(
        n=n, epsilon=epsilon, trials=trials, skipped=skipped, violations=violations,
        violation_fraction=violations / evaluated if evaluated else 0.0, tail_bound=reports[0].tail_bound,
    )
