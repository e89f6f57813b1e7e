"""
Vectorised evaluation of decoding metrics and type-dependent binning rates.

Handles:
- metric_function: f(Q) for batches of joint types (..., a, b)
- MarginalCache: memoised per-marginal evaluation for expensive rate functions
- RateEvaluator: R(Q_U) for every RateFunctionSpec kind
"""
import importlib
import logging
from typing import Callable, Dict, Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import QhullError

from app.core.errors import UsageError
from app.core.probdist import cond_entropy_array, entropy_array, expect_log_array, safe_log
from app.core.simplexopt import OptimizerSettings
from app.services.schemas import MetricKind, MetricSpec, RateFunctionSpec, RateKind

logger = logging.getLogger(__name__)

MetricFn = Callable[[np.ndarray], np.ndarray]

_KEY_DECIMALS = 12


def metric_function(metric: MetricSpec, source: np.ndarray) -> MetricFn:
    """f(Q) = beta E_Q log P~  or  -H_Q(U|V), for arrays shaped (..., a, b)."""
    if metric.kind == MetricKind.NEG_COND_ENTROPY:
        return lambda q: -cond_entropy_array(q)
    tilde = source if metric.kind == MetricKind.MATCHED_LL else np.asarray(metric.tilde_p, dtype=float)
    if tilde.shape != source.shape:
        raise UsageError(f"Metric distribution shape {tilde.shape} differs from source {source.shape}")
    log_tilde = safe_log(tilde)
    beta = metric.beta
    return lambda q: beta * expect_log_array(q, log_tilde, 2)


class MarginalCache:
    """Memoises a batched function of U-marginals, computing only unseen rows."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = ""):
        self.fn = fn
        self.name = name
        self._store: Dict[bytes, float] = {}

    def __len__(self):
        return len(self._store)

    def __call__(self, q_u: np.ndarray) -> np.ndarray:
        q_u = np.asarray(q_u, dtype=float)
        flat = np.round(q_u.reshape(-1, q_u.shape[-1]), _KEY_DECIMALS) + 0.0
        unique, inverse = np.unique(flat, axis=0, return_inverse=True)
        keys = [row.tobytes() for row in unique]
        missing = [i for i, k in enumerate(keys) if k not in self._store]
        if missing:
            logger.debug(f"{self.name}: evaluating {len(missing)} new marginals ({len(self._store)} cached)")
            values = np.asarray(self.fn(unique[missing]), dtype=float)
            for i, v in zip(missing, values):
                self._store[keys[i]] = float(v)
        out = np.array([self._store[k] for k in keys])
        return out[np.asarray(inverse).ravel()].reshape(q_u.shape[:-1])


class RateEvaluator:
    """
    R(Q_U) for a rate-function spec.

    j_rate and omega_rate run nested optimizations against `source`, so they
    go through a MarginalCache; the other kinds are evaluated directly.
    """

    def __init__(self, spec: RateFunctionSpec, source: Optional[np.ndarray] = None,
                 settings: Optional[OptimizerSettings] = None):
        self.spec = spec
        self.source = source
        self.settings = settings or OptimizerSettings.from_config()
        self._fn = self._build()

    def __call__(self, q_u: np.ndarray) -> np.ndarray:
        return self._fn(np.asarray(q_u, dtype=float))

    @property
    def uses_nested_solves(self) -> bool:
        return self.spec.kind in (RateKind.J_RATE, RateKind.OMEGA_RATE)

    def _build(self) -> Callable[[np.ndarray], np.ndarray]:
        spec = self.spec
        if spec.kind == RateKind.CONSTANT:
            return lambda q: np.full(q.shape[:-1], spec.value)
        if spec.kind == RateKind.ENTROPY:
            return lambda q: entropy_array(q, 1)
        if spec.kind == RateKind.TABLE:
            return _table_function(spec)
        if self.source is None:
            raise UsageError(f"{spec.kind.value} rate function needs the source distribution")
        # Late import: tradeoff itself builds RateEvaluators
        tradeoff = importlib.import_module("app.services.tradeoff")
        nested = self.settings.nested()
        source = self.source
        if spec.kind == RateKind.J_RATE:
            return MarginalCache(
                lambda q: tradeoff.j_rate_batch(q, spec.e_r, spec.delta, source, nested), name="j_rate"
            )
        return MarginalCache(
            lambda q: np.maximum(tradeoff.omega_rate_batch(q, spec.e_e, source, nested), 0.0),
            name="omega_rate",
        )


def _table_function(spec: RateFunctionSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Continuous interpolation of a tabulated rate over the U-simplex."""
    points = np.array([p for p, _ in spec.table], dtype=float)
    points = points / points.sum(axis=1, keepdims=True)
    rates = np.array([r for _, r in spec.table], dtype=float)
    a = points.shape[1]
    if a == 1:
        return lambda q: np.full(q.shape[:-1], rates[0])
    if a == 2:
        order = np.argsort(points[:, 0], kind="stable")
        xs, ys = points[order, 0], rates[order]
        return lambda q: np.interp(q[..., 0], xs, ys)
    coords = points[:, : a - 1]
    nearest = NearestNDInterpolator(coords, rates)
    try:
        linear = LinearNDInterpolator(coords, rates)
    except QhullError:
        logger.warning("rate table nodes admit no triangulation, using nearest-node rates")
        return lambda q: nearest(q.reshape(-1, a)[:, : a - 1]).reshape(q.shape[:-1])

    def interpolate(q: np.ndarray) -> np.ndarray:
        flat = q.reshape(-1, a)[:, : a - 1]
        out = linear(flat)
        gaps = np.isnan(out)
        if gaps.any():
            out[gaps] = nearest(flat[gaps])
        return out.reshape(q.shape[:-1])

    return interpolate
