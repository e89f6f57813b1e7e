"""
Exponent job.

Evaluates one exponent formula (random binning, TRC, excess-rate or
fixed-rate) at every point of the sweep and writes a CSV with one row per point.
"""
import logging
from typing import Callable, Dict, List, Optional, Tuple

from app.core.errors import ConfigError
from app.services import exponents
from app.services.job_config import job_source, oracle_step, output_path
from app.services.reports import flatten_witness, write_csv
from app.services.schemas import ExponentResult, JobConfig, MetricSpec, RateFunctionSpec, RateKind

logger = logging.getLogger(__name__)

HEADER = ["value", "feasible", "est_error", "refinement_rounds", "witness"]

# Axes each kind can be swept over
_SWEEPABLE: Dict[str, Tuple[str, ...]] = {
    "r_gld": ("R", "beta", "er", "ee"),
    "er_map": ("R", "er", "ee"),
    "trc_gld": ("R", "beta", "er", "ee"),
    "excess_rate": ("R", "delta", "er", "ee"),
    "vr_ordinary": ("R", "er", "ee"),
    "fr_random": ("R",),
    "fr_expurgated": ("R",),
}
EXPONENT_KINDS = tuple(_SWEEPABLE)


def _point(job: JobConfig, variable: Optional[str], value: float) -> Tuple[RateFunctionSpec, MetricSpec, float]:
    rate, metric, delta = job.rate, job.metric, job.delta
    if variable == "R":
        rate = RateFunctionSpec.constant(value)
    elif variable == "beta":
        metric = metric.model_copy(update={"beta": value})
    elif variable == "delta":
        delta = value
    elif variable == "er":
        if rate.kind != RateKind.J_RATE:
            raise ConfigError("sweeping 'er' needs a j rate function (--rate j:er=..,delta=..)")
        rate = rate.model_copy(update={"e_r": value})
    elif variable == "ee":
        if rate.kind != RateKind.OMEGA_RATE:
            raise ConfigError("sweeping 'ee' needs an omega rate function (--rate omega:ee=..)")
        rate = rate.model_copy(update={"e_e": value})
    return rate, metric, delta


def _fixed_rate(rate: RateFunctionSpec, kind: str) -> float:
    if rate.kind != RateKind.CONSTANT:
        raise ConfigError(f"{kind} is a fixed-rate exponent and needs a constant rate (--rate const:R)")
    return rate.value


def _evaluator(job: JobConfig) -> Callable[[RateFunctionSpec, MetricSpec, float], ExponentResult]:
    P = job_source(job)
    settings, step = job.settings, oracle_step(job)
    kinds: Dict[str, Callable[[RateFunctionSpec, MetricSpec, float], ExponentResult]] = {
        "r_gld": lambda r, f, d: exponents.e_r_gld(P, r, f, settings, step),
        "er_map": lambda r, f, d: exponents.e_r_map(P, r, settings, step),
        "trc_gld": lambda r, f, d: exponents.e_trc_gld(P, r, f, settings, step),
        "excess_rate": lambda r, f, d: exponents.excess_rate_exponent(P, r, d, settings, step),
        "vr_ordinary": lambda r, f, d: exponents.e_r_vr_ordinary(P, r, settings, step),
        "fr_random": lambda r, f, d: exponents.fr_random(P, _fixed_rate(r, "fr_random"), settings, step),
        "fr_expurgated": lambda r, f, d: exponents.fr_expurgated(P, _fixed_rate(r, "fr_expurgated"), settings, step),
    }
    return kinds[job.kind]


def run_exponent(job: JobConfig) -> List[str]:
    """Run an `exponent` job; returns the paths written."""
    if job.kind not in _SWEEPABLE:
        raise ConfigError(f"unknown exponent kind {job.kind!r}; expected one of {', '.join(EXPONENT_KINDS)}")
    variable = job.sweep.variable if job.sweep else None
    if variable is not None and variable not in _SWEEPABLE[job.kind]:
        raise ConfigError(f"{job.kind} cannot be swept over {variable!r}; "
                          f"allowed: {', '.join(_SWEEPABLE[job.kind])}")
    evaluate = _evaluator(job)
    points = job.sweep.values() if job.sweep else [None]

    logger.info(f"exponent {job.kind}: {len(points)} point(s), source '{job.source_name}'")
    rows = []
    for value in points:
        rate, metric, delta = _point(job, variable, value)
        res = evaluate(rate, metric, delta)
        x = value if value is not None else rate.label()
        logger.info(f"exponent {job.kind} at {x}: {res.value:.6g}")
        rows.append([x, res.value, res.feasible, res.est_error, res.refinement_rounds, flatten_witness(res.witness)])

    if all(not r[2] for r in rows):
        logger.warning(f"exponent {job.kind}: feasible set empty at every point, all values are +inf")
    header = [variable or "rate"] + HEADER
    return [write_csv(output_path(job, f"exponent_{job.kind}.csv"), header, rows)]
