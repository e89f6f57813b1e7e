"""
Optimal rate functions and the error-exponent / excess-rate-exponent trade-offs.

Handles:
- J(Q_U, E_r, Delta): the largest rate keeping the excess-rate exponent above E_r
- G(Q_U, E_e) and Omega = min{H_Q(U), G}: the smallest rate keeping the error exponent above E_e
- E_e(E_r, Delta) in random-binning and TRC forms, E_er(E_e, Delta), its plateau and e*(Delta)
"""
import logging
import math
from typing import Optional

import numpy as np

from app.config import Config
from app.core.errors import UsageError
from app.core.probdist import cond_entropy_array, entropy_array, kl_array, mutual_info_array
from app.core.simplexopt import (
    Constraint,
    OptimizerSettings,
    Sense,
    SimplexProblem,
    solve,
    solve_batch,
)
from app.services.exponents import (
    JointParam,
    RowParam,
    SourceView,
    e_r_map,
    e_trc_gld,
    minimize_joint_types,
)
from app.services.rates import MarginalCache
from app.services.schemas import MetricKind, MetricSpec, RateFunctionSpec, RateKind, TradeoffPoint

logger = logging.getLogger(__name__)

_ZERO = 1e-13


def _settings(settings: Optional[OptimizerSettings]) -> OptimizerSettings:
    return settings or OptimizerSettings.from_config()


def _marginals(q_u, a: int) -> np.ndarray:
    q = np.asarray(q_u, dtype=float)
    q = q.reshape(-1, q.shape[-1])
    if q.shape[1] != a:
        raise UsageError(f"Marginal over {q.shape[1]} symbols does not match the source's {a}")
    return q


def _conditional_family(q_u: np.ndarray, src: SourceView):
    """Members with mass only on supp(P_U), and the joint-type map Q_U x Q_{V|U} for them."""
    ok = ~np.any(q_u[:, src.p_u == 0] > _ZERO, axis=1)
    idx = np.flatnonzero(ok)
    param = RowParam(src.mask)
    qu = q_u[idx]

    def joint(points, rows):
        return qu[rows][:, :, None] * param.to_rows(points)

    return idx, param, joint


# ─── Rate functions ──────────────────────────────────────────


def min_divergence_given_marginal(q_u, P) -> float:
    """min over Q_{V|U} of D(Q_U x Q_{V|U} || P), attained at Q_{V|U} = P_{V|U}."""
    src = SourceView(P)
    return float(kl_array(_marginals(q_u, src.a)[0], src.p_u))


def j_rate_batch(q_u: np.ndarray, e_r: float, delta: float, P,
                 settings: Optional[OptimizerSettings] = None) -> np.ndarray:
    src = SourceView(P)
    q_u = _marginals(q_u, src.a)
    out = np.full(q_u.shape[0], np.inf)
    idx, param, joint = _conditional_family(q_u, src)
    if idx.size == 0:
        return out
    problem = SimplexProblem(
        shape=param.shape,
        objective=lambda pts, rows: cond_entropy_array(joint(pts, rows)) + delta,
        constraints=[Constraint(lambda pts, rows: kl_array(joint(pts, rows), src.p, 2) - e_r, name="ball")],
        batch=idx.size,
        seeds=param.point_of(src.cond)[None, :],
    )
    out[idx] = solve_batch(problem, _settings(settings)).values
    return out


def j_rate(q_u, e_r: float, delta: float, P, settings: Optional[OptimizerSettings] = None) -> float:
    """
    min over {Q_{V|U}: D(Q_U x Q_{V|U} || P) <= E_r} of H_Q(U|V) + Delta.
    +inf when the divergence ball misses the marginal (the type is coded one-to-one).
    """
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    if e_r < 0:
        raise UsageError(f"E_r must be nonnegative, got {e_r}")
    return float(j_rate_batch(q_u, e_r, delta, P, settings)[0])


def g_rate_batch(q_u: np.ndarray, e_e: float, P, settings: Optional[OptimizerSettings] = None) -> np.ndarray:
    src = SourceView(P)
    q_u = _marginals(q_u, src.a)
    out = np.full(q_u.shape[0], -np.inf)
    idx, param, joint = _conditional_family(q_u, src)
    if idx.size == 0:
        return out

    def objective(pts, rows):
        q = joint(pts, rows)
        return cond_entropy_array(q) + e_e - kl_array(q, src.p, 2)

    problem = SimplexProblem(
        shape=param.shape,
        objective=objective,
        constraints=[Constraint(lambda pts, rows: kl_array(joint(pts, rows), src.p, 2) - e_e, name="ball")],
        sense=Sense.MAXIMIZE,
        batch=idx.size,
        seeds=param.point_of(src.cond)[None, :],
        convex=True,
    )
    out[idx] = solve_batch(problem, _settings(settings)).values
    return out


def omega_rate_batch(q_u: np.ndarray, e_e: float, P, settings: Optional[OptimizerSettings] = None) -> np.ndarray:
    src = SourceView(P)
    q_u = _marginals(q_u, src.a)
    return np.minimum(entropy_array(q_u), g_rate_batch(q_u, e_e, P, settings))


def g_rate(q_u, e_e: float, P, settings: Optional[OptimizerSettings] = None) -> float:
    """max over {Q_{V|U}: D <= E_e} of H_Q(U|V) + E_e - D; -inf when the ball misses the marginal."""
    if e_e < 0:
        raise UsageError(f"E_e must be nonnegative, got {e_e}")
    return float(g_rate_batch(q_u, e_e, P, settings)[0])


def omega_rate(q_u, e_e: float, P, settings: Optional[OptimizerSettings] = None) -> float:
    if e_e < 0:
        raise UsageError(f"E_e must be nonnegative, got {e_e}")
    return float(omega_rate_batch(q_u, e_e, P, settings)[0])


def g_saturation_divergence(q_u, P, settings: Optional[OptimizerSettings] = None) -> float:
    """D(Q_U x Q*_{V|U} || P) at the maximiser of H(U|V) - D; above it G grows affinely in E_e."""
    src = SourceView(P)
    q_u = _marginals(q_u, src.a)[:1]
    idx, param, joint = _conditional_family(q_u, src)
    if idx.size == 0:
        return math.inf

    def objective(pts, rows):
        q = joint(pts, rows)
        return cond_entropy_array(q) - kl_array(q, src.p, 2)

    problem = SimplexProblem(shape=param.shape, objective=objective, sense=Sense.MAXIMIZE,
                             seeds=param.point_of(src.cond)[None, :], convex=True)
    res = solve(problem, _settings(settings))
    return float(kl_array(joint(res.argpoint[None, :], np.zeros(1, dtype=int))[0], src.p, 2))


# ─── Trade-off curves ────────────────────────────────────────


def _disagree(a: float, b: float, tol: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a != b
    return abs(a - b) > tol


def tradeoff_e_given_er(P, e_r: float, delta: float, cross_check: bool = True,
                        settings: Optional[OptimizerSettings] = None,
                        oracle_step: Optional[float] = None) -> TradeoffPoint:
    """
    Best error exponent among rate functions whose excess-rate exponent is at
    least E_r, i.e. the MAP exponent at R = J(., E_r, Delta). With cross_check,
    the same point is also evaluated in TRC form under the MCE metric.
    """
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    if e_r < 0:
        raise UsageError(f"E_r must be nonnegative, got {e_r}")
    settings = _settings(settings)
    spec = RateFunctionSpec(kind=RateKind.J_RATE, e_r=e_r, delta=delta)
    rc = e_r_map(P, spec, settings, oracle_step)
    y_trc = None
    if cross_check:
        y_trc = e_trc_gld(P, spec, MetricSpec(kind=MetricKind.NEG_COND_ENTROPY), settings).value
        if _disagree(rc.value, y_trc, Config.CROSS_CHECK_TOL):
            logger.warning(
                f"E_e cross-check mismatch at E_r={e_r:g}, delta={delta:g}: "
                f"random binning {rc.value:.6g} vs TRC {y_trc:.6g}"
            )
    return TradeoffPoint(x=e_r, y=rc.value, witness=rc.witness, y_trc=y_trc)


def _omega_cache(src: SourceView, e_e: float, settings: OptimizerSettings) -> MarginalCache:
    nested = settings.nested()
    return MarginalCache(lambda q: omega_rate_batch(q, e_e, src.p, nested), name=f"omega[{e_e:g}]")


def tradeoff_er_given_e(P, e_e: float, delta: float, with_plateau: bool = False,
                        settings: Optional[OptimizerSettings] = None,
                        oracle_step: Optional[float] = None) -> TradeoffPoint:
    """min D(Q||P) over types with Omega(Q_U, E_e) >= H_Q(U|V) + Delta."""
    if delta < 0:
        raise UsageError(f"delta must be nonnegative, got {delta}")
    if e_e < 0:
        raise UsageError(f"E_e must be nonnegative, got {e_e}")
    src = SourceView(P)
    settings = _settings(settings)
    omega = _omega_cache(src, e_e, settings)

    def shortfall(q):
        return cond_entropy_array(q) + delta - omega(q.sum(axis=-1))

    res = minimize_joint_types(src, lambda q: kl_array(q, src.p, 2), shortfall, settings, oracle_step,
                               "tradeoff_er_given_e")
    plateau = er_plateau(P, delta, settings) if with_plateau else None
    return TradeoffPoint(x=e_e, y=res.value, witness=res.witness, plateau=plateau)


def er_plateau(P, delta: float, settings: Optional[OptimizerSettings] = None,
               oracle_step: Optional[float] = None) -> float:
    """Large-E_e limit of E_er: min D(Q||P) over {I_Q(U;V) >= Delta}."""
    if delta < 0:
        raise UsageError(f"delta must be nonnegative, got {delta}")
    src = SourceView(P)
    res = minimize_joint_types(src, lambda q: kl_array(q, src.p, 2), lambda q: delta - mutual_info_array(q),
                               _settings(settings), oracle_step, "er_plateau")
    return res.value


def _omega_margin(src: SourceView, e_e: float, settings: OptimizerSettings) -> float:
    """max over joint types of Omega(Q_U, E_e) - H_Q(U|V)."""
    omega = _omega_cache(src, e_e, settings)
    param = JointParam(src.mask)

    def objective(pts, rows):
        q = param.to_joint(pts)
        return omega(q.sum(axis=-1)) - cond_entropy_array(q)

    problem = SimplexProblem(shape=param.shape, objective=objective, sense=Sense.MAXIMIZE,
                             seeds=param.point_of(src.p)[None, :])
    return solve(problem, settings).value


def e_star_of_delta(P, delta: float, settings: Optional[OptimizerSettings] = None) -> float:
    """Smallest E_e at which {Omega(Q_U, E_e) >= H_Q(U|V) + Delta} becomes nonempty, by bisection."""
    if not delta > 0:
        raise UsageError(f"delta must be positive, got {delta}")
    src = SourceView(P)
    settings = _settings(settings)

    def feasible(e_e: float) -> bool:
        return _omega_margin(src, e_e, settings) >= delta - Config.CONSTRAINT_TOL

    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, Config.BISECT_BRACKET
    expansions = 0
    while not feasible(hi):
        if expansions >= Config.BISECT_MAX_EXPANSIONS:
            logger.warning(f"e_star: no feasible E_e up to {hi:g} for delta={delta:g}")
            return math.inf
        lo, hi = hi, 2 * hi
        expansions += 1
    while hi - lo > Config.BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    logger.debug(f"e_star: delta={delta:g} -> {hi:.6g}")
    return hi
