"""
Single-letter error and excess-rate exponents of the SD binning ensemble.

Handles:
- random-binning exponents under GLD and MAP decoding, and the ordinary VR exponent
- the typical-random-code exponent (gamma, psi, Lambda) under GLD decoding
- the excess-rate exponent of a rate function
- fixed-rate random-coding / expurgated exponents and their channel exponents

Every optimization is a SimplexProblem. Outer problems range over joint types
supported on supp(P); inner ones are solved as batched families, one member per
outer candidate.
"""
import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np

from app.config import Config
from app.core.errors import UsageError
from app.core.probdist import (
    CondDist,
    JointDist,
    cond_entropy_array,
    conditional_rows,
    entropy_array,
    expect_log_array,
    kl_array,
    mutual_info_array,
    safe_log,
)
from app.core.simplexopt import (
    Constraint,
    OptimizerSettings,
    OptResult,
    Sense,
    SimplexProblem,
    solve,
    solve_batch,
    solve_oracle,
)
from app.services.rates import MetricFn, RateEvaluator, metric_function
from app.services.schemas import ExponentResult, MetricKind, MetricSpec, RateFunctionSpec

logger = logging.getLogger(__name__)

RateLike = Union[RateFunctionSpec, float]

_ZERO = 1e-13


# ─── Extended-real helpers ───────────────────────────────────


def hinge(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def hinge_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """[x - y]+ with (-inf) - (-inf) = 0."""
    with np.errstate(invalid="ignore"):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.maximum(np.where(np.isnan(d), 0.0, d), 0.0)


def binned_margin(rates: np.ndarray, q_u: np.ndarray) -> np.ndarray:
    """At most CONSTRAINT_TOL exactly where H_Q(U) > R(Q_U); a type with H_Q(U) = R(Q_U) is coded one-to-one."""
    return rates - entropy_array(q_u) + 2 * Config.CONSTRAINT_TOL


def _clean(x: np.ndarray) -> np.ndarray:
    return np.where(x > _ZERO, x, 0.0)


# ─── Source and parameterizations ────────────────────────────


class SourceView:
    """A validated two-axis source with the derived arrays the formulas use."""

    def __init__(self, P: Union[JointDist, np.ndarray]):
        d = P if isinstance(P, JointDist) else JointDist.from_array(P)
        if d.ndim != 2:
            raise UsageError(f"Source must have two axes, got {d.ndim}")
        self.p = np.array(d.mass)
        self.a, self.b = self.p.shape
        self.mask = self.p > 0
        self.p_u = self.p.sum(axis=1)
        self.p_v = self.p.sum(axis=0)
        self.log_p_u = safe_log(self.p_u)
        self.cond = conditional_rows(self.p)


class JointParam:
    """Joint types supported inside `mask`, as one simplex block."""

    def __init__(self, mask: np.ndarray):
        self.dims = mask.shape
        self.cells = np.flatnonzero(mask.ravel())
        if self.cells.size == 0:
            raise UsageError("Empty support")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.cells.size,)

    def to_joint(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros((points.shape[0], int(np.prod(self.dims))))
        out[:, self.cells] = points
        return out.reshape((points.shape[0],) + self.dims)

    def point_of(self, q: np.ndarray) -> np.ndarray:
        pt = np.asarray(q, dtype=float).ravel()[self.cells]
        return pt / pt.sum()


class RowParam:
    """
    Conditional rows, each a simplex block over the cells allowed by `mask`.
    Rows with no allowed cell get a fixed dummy block and map to zeros.
    """

    def __init__(self, mask: np.ndarray):
        self.rows, self.out = mask.shape
        self.cells = [np.flatnonzero(m) for m in mask]
        self.shape = tuple(max(1, c.size) for c in self.cells)
        self.offsets = np.cumsum((0,) + self.shape)

    def to_rows(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros((points.shape[0], self.rows, self.out))
        for r, c in enumerate(self.cells):
            if c.size:
                out[:, r, c] = points[:, self.offsets[r]:self.offsets[r] + c.size]
        return out

    def point_of(self, rows: np.ndarray) -> np.ndarray:
        pt = np.zeros(self.offsets[-1])
        for r, c in enumerate(self.cells):
            lo = self.offsets[r]
            if not c.size:
                pt[lo] = 1.0
                continue
            vals = np.asarray(rows[r], dtype=float)[c]
            total = vals.sum()
            pt[lo:lo + c.size] = vals / total if total > 0 else 1.0 / c.size
        return pt


def coupling_from_blocks(blocks: np.ndarray, given: np.ndarray, other: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Joint (N, k+1, m) with row marginal `given` (N, k+1) and column marginal
    `other` (N, m). Rows 0..k-1 are given[:, i] * blocks[:, i]; the last row is
    the residual. Returns the joint (residual clipped at 0) and the residual's
    smallest entry, which must be >= 0 for a valid coupling.
    """
    top = given[:, :-1, None] * blocks
    last = other - top.sum(axis=1)
    joint = np.concatenate([top, _clean(last)[:, None, :]], axis=1)
    return joint, last.min(axis=-1)


def _heaviest_last(marg: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row permutation moving the heaviest symbol last, and its inverse."""
    n = marg.shape[1]
    idx = np.arange(n)[None, :]
    key = idx + n * (idx == np.argmax(marg, axis=1)[:, None])
    order = np.argsort(key, axis=1, kind="stable")
    return order, np.argsort(order, axis=1)


def _blocks(points: np.ndarray, k: int, m: int) -> np.ndarray:
    return points[:, : k * m].reshape(points.shape[0], k, m)


# ─── Shared plumbing ─────────────────────────────────────────


def _settings(settings: Optional[OptimizerSettings]) -> OptimizerSettings:
    return settings or OptimizerSettings.from_config()


def _run(problem: SimplexProblem, settings: OptimizerSettings, oracle_step: Optional[float]) -> OptResult:
    if oracle_step is not None:
        return solve_oracle(problem, oracle_step)
    return solve(problem, settings)


def _exponent_result(res: OptResult, witness: Optional[np.ndarray], label: str) -> ExponentResult:
    if not res.feasible:
        logger.debug(f"{label}: empty feasible set")
        return ExponentResult(value=float("inf"), witness=None, feasible=False,
                              refinement_rounds=res.refinement_rounds)
    value = max(res.value, 0.0)
    logger.debug(f"{label}: value={value:.6g} est_error={res.est_error:.2g}")
    return ExponentResult(
        value=value,
        witness=None if witness is None else witness.tolist(),
        feasible=True,
        est_error=res.est_error if np.isfinite(res.est_error) else 0.0,
        refinement_rounds=res.refinement_rounds,
    )


def minimize_joint_types(
    src: SourceView,
    objective: Callable[[np.ndarray], np.ndarray],
    constraint: Optional[Callable[[np.ndarray], np.ndarray]],
    settings: OptimizerSettings,
    oracle_step: Optional[float],
    label: str,
) -> ExponentResult:
    """min over joint types on supp(P) of objective(Q), subject to constraint(Q) <= tol."""
    param = JointParam(src.mask)
    constraints = []
    if constraint is not None:
        constraints.append(Constraint(lambda pts, rows: constraint(param.to_joint(pts)), name=label))
    problem = SimplexProblem(
        shape=param.shape,
        objective=lambda pts, rows: objective(param.to_joint(pts)),
        constraints=constraints,
        seeds=param.point_of(src.p)[None, :],
    )
    res = _run(problem, settings, oracle_step)
    witness = param.to_joint(res.argpoint[None, :])[0] if res.feasible else None
    return _exponent_result(res, witness, label)


def _metric_for(f: MetricSpec, source: Optional[np.ndarray], like: np.ndarray) -> MetricFn:
    if source is None:
        if f.kind == MetricKind.MATCHED_LL:
            raise UsageError("The matched metric needs the source distribution")
        source = np.asarray(f.tilde_p, dtype=float) if f.tilde_p is not None else like
    return metric_function(f, np.asarray(source, dtype=float))


def _rate_at(R: RateLike, q_u: np.ndarray, source: Optional[np.ndarray], settings: OptimizerSettings) -> float:
    if not isinstance(R, RateFunctionSpec):
        return float(R)
    return float(RateEvaluator(R, source, settings)(q_u))


def _mass(x) -> np.ndarray:
    if isinstance(x, JointDist):
        return np.array(x.mass)
    if isinstance(x, CondDist):
        return np.array(x.rows)
    return np.asarray(x, dtype=float)


# ─── Random binning: GLD, MAP, VR ────────────────────────────


def _inner_e_values(q: np.ndarray, rates: np.ndarray, metric: MetricFn, settings: OptimizerSettings) -> np.ndarray:
    """E(Q_UV, R) for a batch of joint types (B, a, b) and rates (B,)."""
    B, a, b = q.shape
    out = np.full(B, np.inf)
    idx = np.flatnonzero(np.isfinite(rates))
    if idx.size == 0:
        return out
    q_i, r_i = q[idx], rates[idx]
    f_i = metric(q_i)
    q_v = q_i.sum(axis=1)

    def objective(points, rows):
        x = points.reshape(-1, b, a)
        joint = (q_v[rows][:, :, None] * x).transpose(0, 2, 1)
        return hinge(r_i[rows] - cond_entropy_array(joint) + hinge_diff(f_i[rows], metric(joint)))

    # Q_{U'|V} = Q_{U|V} already gives [R - H(U|V)]+
    seeds = conditional_rows(q_i.transpose(0, 2, 1)).reshape(idx.size, 1, b * a)
    problem = SimplexProblem(shape=(a,) * b, objective=objective, batch=idx.size, seeds=seeds, convex=True)
    out[idx] = solve_batch(problem, settings).values
    return out


def gld_inner_E(
    q_uv: Union[JointDist, np.ndarray],
    rate: float,
    f: MetricSpec,
    source: Optional[Union[JointDist, np.ndarray]] = None,
    settings: Optional[OptimizerSettings] = None,
) -> float:
    """min over Q_{U'|V} of [R - H(U'|V) + [f(Q_UV) - f(Q_U'V)]+]+ (source needed for the matched metric)."""
    q = _mass(q_uv)
    if q.ndim != 2:
        raise UsageError("gld_inner_E needs a two-axis joint type")
    if rate < 0:
        raise UsageError(f"Rate must be nonnegative, got {rate}")
    metric = _metric_for(f, None if source is None else _mass(source), q)
    return float(_inner_e_values(q[None], np.array([float(rate)]), metric, _settings(settings))[0])


def e_r_gld(P, R: RateFunctionSpec, f: MetricSpec,
            settings: Optional[OptimizerSettings] = None, oracle_step: Optional[float] = None) -> ExponentResult:
    src = SourceView(P)
    settings = _settings(settings)
    rate = RateEvaluator(R, src.p, settings)
    metric = metric_function(f, src.p)
    nested = settings.nested()

    def binned(q):
        q_u = q.sum(axis=-1)
        return binned_margin(rate(q_u), q_u)

    def objective(q):
        return kl_array(q, src.p, 2) + _inner_e_values(q, rate(q.sum(axis=-1)), metric, nested)

    return minimize_joint_types(src, objective, binned, settings, oracle_step, "e_r_gld")


def e_r_map(P, R: RateFunctionSpec,
            settings: Optional[OptimizerSettings] = None, oracle_step: Optional[float] = None) -> ExponentResult:
    src = SourceView(P)
    settings = _settings(settings)
    rate = RateEvaluator(R, src.p, settings)

    def binned(q):
        q_u = q.sum(axis=-1)
        return binned_margin(rate(q_u), q_u)

    def objective(q):
        return kl_array(q, src.p, 2) + hinge(rate(q.sum(axis=-1)) - cond_entropy_array(q))

    return minimize_joint_types(src, objective, binned, settings, oracle_step, "e_r_map")


def e_r_vr_ordinary(P, R: RateFunctionSpec,
                    settings: Optional[OptimizerSettings] = None, oracle_step: Optional[float] = None) -> ExponentResult:
    """Ordinary variable-rate random binning: every type is binned."""
    src = SourceView(P)
    settings = _settings(settings)
    rate = RateEvaluator(R, src.p, settings)

    def objective(q):
        return kl_array(q, src.p, 2) + hinge(rate(q.sum(axis=-1)) - cond_entropy_array(q))

    return minimize_joint_types(src, objective, None, settings, oracle_step, "e_r_vr_ordinary")


def excess_rate_exponent(P, R: RateFunctionSpec, delta: float,
                         settings: Optional[OptimizerSettings] = None,
                         oracle_step: Optional[float] = None) -> ExponentResult:
    """min D(Q||P) over types whose rate exceeds H(U|V) by at least delta."""
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    src = SourceView(P)
    settings = _settings(settings)
    rate = RateEvaluator(R, src.p, settings)

    def excess(q):
        return cond_entropy_array(q) + delta - rate(q.sum(axis=-1))

    return minimize_joint_types(src, lambda q: kl_array(q, src.p, 2), excess, settings, oracle_step,
                           "excess_rate_exponent")


# ─── Typical random codes: gamma, psi, Lambda ────────────────


def gamma_batch(q_u: np.ndarray, q_v: np.ndarray, rates: np.ndarray, metric: MetricFn,
                  settings: OptimizerSettings) -> np.ndarray:
    """gamma(R, Q_U, Q_V) for batches q_u (B, a), q_v (B, b), rates (B,)."""
    B, a = q_u.shape
    b = q_v.shape[1]
    out = np.full(B, -np.inf)
    # H(U~|V) <= H(U~) = H_Q(U): nothing is feasible above it
    idx = np.flatnonzero(rates <= entropy_array(q_u) + Config.CONSTRAINT_TOL)
    if idx.size == 0:
        return out
    qu, r = q_u[idx], rates[idx]
    order, inverse = _heaviest_last(q_v[idx])
    qv = np.take_along_axis(q_v[idx], order, axis=1)
    k = b - 1

    def coupling(points, rows):
        joint, slack = coupling_from_blocks(_blocks(points, k, a), qv[rows], qu[rows])
        joint = np.take_along_axis(joint, inverse[rows][:, :, None], axis=1)
        return joint.transpose(0, 2, 1), slack

    def objective(points, rows):
        q, _ = coupling(points, rows)
        return metric(q) + cond_entropy_array(q) - r[rows]

    constraints = [
        Constraint(lambda pts, rows: -coupling(pts, rows)[1], name="marginal"),
        Constraint(lambda pts, rows: r[rows] - cond_entropy_array(coupling(pts, rows)[0]), name="rate"),
    ]
    # Independent coupling is always feasible here
    seeds = np.tile(qu, (1, k))[:, None, :] if k else np.ones((idx.size, 1, 1))
    problem = SimplexProblem(
        shape=(a,) * k if k else (1,),
        objective=objective,
        constraints=constraints,
        sense=Sense.MAXIMIZE,
        batch=idx.size,
        seeds=seeds,
        convex=True,
    )
    out[idx] = solve_batch(problem, settings).values
    return out


class GammaProvider:
    """
    gamma for the many (Q_U, R, Q_V) triples a Lambda evaluation needs.

    - neg_cond_entropy: closed form -R (or -inf above H_Q(U))
    - binary V: per-(Q_U, R) table over the V-marginal, linearly interpolated
    - otherwise: solved directly for every triple
    """

    def __init__(self, metric: MetricFn, closed_form: bool, settings: OptimizerSettings,
                 resolution: int = Config.GAMMA_TABLE_RESOLUTION):
        self.metric = metric
        self.closed_form = closed_form
        self.settings = settings
        self.resolution = resolution
        self._tables = {}

    def __call__(self, q_u: np.ndarray, rates: np.ndarray, q_v: np.ndarray) -> np.ndarray:
        if self.closed_form:
            ok = rates <= entropy_array(q_u) + Config.CONSTRAINT_TOL
            return np.where(ok, -rates, -np.inf)
        if q_v.shape[1] != 2:
            return gamma_batch(q_u, q_v, rates, self.metric, self.settings)
        return self._interpolate(q_u, rates, q_v[:, 0])

    def _interpolate(self, q_u: np.ndarray, rates: np.ndarray, x: np.ndarray) -> np.ndarray:
        keys = np.round(np.column_stack([q_u, rates]), 12) + 0.0
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        self._build([row for row in unique if row.tobytes() not in self._tables])
        T = self.resolution
        tables = np.stack([self._tables[row.tobytes()] for row in unique])
        pos = np.clip(x, 0.0, 1.0) * T
        lo = np.minimum(np.floor(pos).astype(int), T - 1)
        w = pos - lo
        t_lo, t_hi = tables[inverse, lo], tables[inverse, lo + 1]
        finite = np.isfinite(t_lo) & np.isfinite(t_hi)
        with np.errstate(invalid="ignore"):
            mixed = (1 - w) * t_lo + w * t_hi
        # An infeasible node on either side makes the whole cell infeasible
        return np.where(w <= 1e-12, t_lo, np.where(w >= 1 - 1e-12, t_hi, np.where(finite, mixed, -np.inf)))

    def _build(self, rows) -> None:
        if not rows:
            return
        T = self.resolution
        grid = np.linspace(0.0, 1.0, T + 1)
        q_v = np.column_stack([grid, 1.0 - grid])
        keys = np.array(rows)
        q_u = np.repeat(keys[:, :-1], T + 1, axis=0)
        rates = np.repeat(keys[:, -1], T + 1)
        logger.debug(f"gamma: tabulating {len(rows)} marginal/rate pairs at resolution {T}")
        values = gamma_batch(q_u, np.tile(q_v, (len(rows), 1)), rates, self.metric, self.settings)
        for i, row in enumerate(rows):
            self._tables[row.tobytes()] = values[i * (T + 1):(i + 1) * (T + 1)]


def gamma(R: RateLike, q_u, q_v, f: MetricSpec, source=None,
          settings: Optional[OptimizerSettings] = None) -> float:
    """max over couplings Q_{U~V} with Q_U~ = Q_U, H(U~|V) >= R of f + H(U~|V) - R."""
    settings = _settings(settings)
    q_u, q_v = _mass(q_u).ravel(), _mass(q_v).ravel()
    src = None if source is None else _mass(source)
    metric = _metric_for(f, src, np.outer(q_u, q_v))
    rate = _rate_at(R, q_u, src, settings)
    return float(gamma_batch(q_u[None], q_v[None], np.array([rate]), metric, settings)[0])


def psi(R: RateLike, q_uuv, f: MetricSpec, source=None, settings: Optional[OptimizerSettings] = None) -> float:
    """[max{f(Q_UV), gamma} - f(Q_U'V)]+ for a three-axis Q_UU'V."""
    settings = _settings(settings)
    q = _mass(q_uuv)
    if q.ndim != 3:
        raise UsageError("psi needs a three-axis joint type")
    q_uv, q_u2v = q.sum(axis=1), q.sum(axis=0)
    src = None if source is None else _mass(source)
    metric = _metric_for(f, src, q_uv)
    q_u = q_uv.sum(axis=1)
    g = gamma(R, q_u, q_uv.sum(axis=0), f, source, settings)
    return float(hinge_diff(max(float(metric(q_uv)), g), metric(q_u2v)))


def _lambda_values(q_uu: np.ndarray, rates: np.ndarray, src: SourceView, metric: MetricFn,
                   gammas: GammaProvider, settings: OptimizerSettings) -> np.ndarray:
    """Lambda(Q_UU', R) for a batch q_uu (B, a, a), rates (B,)."""
    B = q_uu.shape[0]
    a, b = src.a, src.b
    out = np.full(B, np.inf)
    # Mass on u outside supp(P_U) forces log 0
    idx = np.flatnonzero(~np.any(q_uu.sum(axis=2)[:, src.p_u == 0] > _ZERO, axis=1) & np.isfinite(rates))
    if idx.size == 0:
        return out
    w_all, r = q_uu[idx], rates[idx]
    param = RowParam(np.repeat(src.mask, a, axis=0))
    reference = np.repeat(src.cond, a, axis=0).reshape(a, a, b)

    def objective(points, rows):
        cond = param.to_rows(points).reshape(-1, a, a, b)
        w = w_all[rows][..., None]
        q = w * cond
        q_uv, q_u2v = q.sum(axis=2), q.sum(axis=1)
        g = gammas(q_uv.sum(axis=2), r[rows], q_uv.sum(axis=1))
        psi_values = hinge_diff(np.maximum(metric(q_uv), g), metric(q_u2v))
        return psi_values + kl_array(q, w * reference[None], 3)

    seeds = param.point_of(np.repeat(src.cond, a, axis=0))[None, :]
    problem = SimplexProblem(shape=param.shape, objective=objective, batch=idx.size, seeds=seeds)
    out[idx] = solve_batch(problem, settings).values
    return out


def lambda_fn(q_uu, rate: float, P, f: MetricSpec, settings: Optional[OptimizerSettings] = None) -> float:
    """min over Q_{V|UU'} of Psi - H(V|U,U') - E log P(V|U)."""
    settings = _settings(settings)
    src = SourceView(P)
    q = _mass(q_uu)
    if q.shape != (src.a, src.a):
        raise UsageError(f"q_uu must be {src.a}x{src.a}, got {q.shape}")
    if np.max(np.abs(q.sum(axis=0) - q.sum(axis=1))) > Config.MARGINAL_TOL:
        raise UsageError("q_uu must have equal marginals")
    metric = metric_function(f, src.p)
    gammas = GammaProvider(metric, f.kind == MetricKind.NEG_COND_ENTROPY, settings)
    return float(_lambda_values(q[None], np.array([float(rate)]), src, metric, gammas, settings)[0])


def e_trc_gld(P, R: RateFunctionSpec, f: MetricSpec,
              settings: Optional[OptimizerSettings] = None, oracle_step: Optional[float] = None) -> ExponentResult:
    """Typical-random-code exponent of the SD ensemble under GLD decoding."""
    src = SourceView(P)
    settings = _settings(settings)
    nested = settings.nested()
    rate = RateEvaluator(R, src.p, settings)
    metric = metric_function(f, src.p)
    gammas = GammaProvider(metric, f.kind == MetricKind.NEG_COND_ENTROPY, nested)
    support = np.flatnonzero(src.p_u > 0)
    s, a = support.size, src.a
    k = s - 1

    def coupling(points):
        q_s = points[:, :s]
        joint, slack = coupling_from_blocks(_blocks(points[:, s:], k, s), q_s, q_s)
        q_uu = np.zeros((points.shape[0], a, a))
        q_uu[:, support[:, None], support[None, :]] = joint
        return q_uu, slack

    def binned(points, rows):
        q_u = coupling(points)[0].sum(axis=2)
        return binned_margin(rate(q_u), q_u)

    def objective(points, rows):
        q_uu, _ = coupling(points)
        q_u = q_uu.sum(axis=2)
        r = rate(q_u)
        lam = _lambda_values(q_uu, r, src, metric, gammas, nested)
        return lam - expect_log_array(q_u, src.log_p_u) - entropy_array(q_uu, 2) + r

    p_s = src.p_u[support]
    independent = np.concatenate([p_s, np.tile(p_s, k)])
    diagonal = np.concatenate([p_s, np.eye(s)[:k].ravel()])
    problem = SimplexProblem(
        shape=(s,) * (k + 1),
        objective=objective,
        constraints=[
            Constraint(lambda pts, rows: -coupling(pts)[1], name="marginal"),
            Constraint(binned, name="binned"),
        ],
        seeds=np.stack([independent, diagonal]),
    )
    res = _run(problem, settings, oracle_step)
    witness = coupling(res.argpoint[None, :])[0][0] if res.feasible else None
    return _exponent_result(res, witness, "e_trc_gld")


# ─── Fixed-rate exponents ────────────────────────────────────


def bhattacharyya_distance(W) -> np.ndarray:
    """d_W(u, u') = -log sum_v sqrt(W(v|u) W(v|u')); +inf on disjoint rows."""
    w = np.sqrt(np.clip(_mass(W), 0.0, None))
    d = np.maximum(-safe_log(w @ w.T), 0.0)
    np.fill_diagonal(d, 0.0)
    return d


def _channel_rc_values(q_u: np.ndarray, W: np.ndarray, S: np.ndarray, settings: OptimizerSettings) -> np.ndarray:
    param = RowParam(W > 0)

    def objective(points, rows):
        cond = param.to_rows(points)
        qu = q_u[rows]
        div = np.sum(qu * kl_array(cond, W[None], 1), axis=1)
        return div + hinge(mutual_info_array(qu[:, :, None] * cond) - S[rows])

    problem = SimplexProblem(shape=param.shape, objective=objective, batch=q_u.shape[0],
                             seeds=param.point_of(W)[None, :], convex=True)
    return solve_batch(problem, settings).values


def _channel_ex_values(q_u: np.ndarray, W: np.ndarray, S: np.ndarray, settings: OptimizerSettings) -> np.ndarray:
    B, a = q_u.shape
    neg_d = -bhattacharyya_distance(W)
    order, inverse = _heaviest_last(q_u)
    q_perm = np.take_along_axis(q_u, order, axis=1)
    k = a - 1

    def coupling(points, rows):
        joint, slack = coupling_from_blocks(_blocks(points, k, a), q_perm[rows], q_u[rows])
        return np.take_along_axis(joint, inverse[rows][:, :, None], axis=1), slack

    def objective(points, rows):
        q, _ = coupling(points, rows)
        return -expect_log_array(q, neg_d, 2) + mutual_info_array(q) - S[rows]

    problem = SimplexProblem(
        shape=(a,) * k if k else (1,),
        objective=objective,
        constraints=[
            Constraint(lambda pts, rows: -coupling(pts, rows)[1], name="marginal"),
            Constraint(lambda pts, rows: mutual_info_array(coupling(pts, rows)[0]) - S[rows], name="rate"),
        ],
        batch=B,
        seeds=np.tile(q_u, (1, k))[:, None, :] if k else np.ones((B, 1, 1)),
        convex=True,
    )
    return solve_batch(problem, settings).values


def _channel_args(q_u, W, S: float) -> Tuple[np.ndarray, np.ndarray]:
    q = _mass(q_u).ravel()
    w = _mass(W)
    if w.ndim != 2 or w.shape[0] != q.shape[0]:
        raise UsageError(f"Channel with {w.shape} rows does not match input alphabet {q.shape[0]}")
    if S < 0:
        raise UsageError(f"Coding rate must be nonnegative, got {S}")
    return q, w


def channel_rc(q_u, W, S: float, settings: Optional[OptimizerSettings] = None) -> float:
    """Random-coding exponent of a constant-composition channel code."""
    q, w = _channel_args(q_u, W, S)
    return float(_channel_rc_values(q[None], w, np.array([float(S)]), _settings(settings))[0])


def channel_ex(q_u, W, S: float, settings: Optional[OptimizerSettings] = None) -> float:
    """Expurgated exponent; the raw formula, which may be negative at small S."""
    q, w = _channel_args(q_u, W, S)
    return float(_channel_ex_values(q[None], w, np.array([float(S)]), _settings(settings))[0])


def _fr_exponent(P, R: float, channel_values, settings: Optional[OptimizerSettings],
                 oracle_step: Optional[float], label: str) -> ExponentResult:
    if R < 0:
        raise UsageError(f"Rate must be nonnegative, got {R}")
    src = SourceView(P)
    settings = _settings(settings)
    nested = settings.nested()
    support = np.flatnonzero(src.p_u > 0)

    def marginal(points):
        q_u = np.zeros((points.shape[0], src.a))
        q_u[:, support] = points
        return q_u

    def objective(points, rows):
        q_u = marginal(points)
        # Fewer than one codeword per bin is clamped to a zero-rate channel code
        S = np.maximum(entropy_array(q_u) - R, 0.0)
        return kl_array(q_u, src.p_u) + channel_values(q_u, src.cond, S, nested)

    problem = SimplexProblem(shape=(support.size,), objective=objective,
                             seeds=src.p_u[support][None, :])
    res = _run(problem, settings, oracle_step)
    witness = marginal(res.argpoint[None, :])[0] if res.feasible else None
    return _exponent_result(res, witness, label)


def fr_random(P, R: float, settings: Optional[OptimizerSettings] = None,
              oracle_step: Optional[float] = None) -> ExponentResult:
    return _fr_exponent(P, R, _channel_rc_values, settings, oracle_step, "fr_random")


def fr_expurgated(P, R: float, settings: Optional[OptimizerSettings] = None,
                  oracle_step: Optional[float] = None) -> ExponentResult:
    return _fr_exponent(P, R, _channel_ex_values, settings, oracle_step, "fr_expurgated")
