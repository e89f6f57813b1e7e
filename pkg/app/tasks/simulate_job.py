"""
Simulation job.

For each sweep point, draws an ensemble of SD binning codes, computes their
exact error probabilities and the exact excess-rate probability, and puts the
matching formula-side exponents in the same row so the report stands alone.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple

from app.core.errors import ConfigError
from app.services import exponents, simcode
from app.services.job_config import job_source, output_path
from app.services.reports import write_csv
from app.services.schemas import DecoderKind, DecoderSpec, JobConfig, MetricKind, MetricSpec, RateFunctionSpec

logger = logging.getLogger(__name__)

HEADER = [
    "n", "codes", "seed", "decoder", "rate_spec",
    "mean_pe", "mean_log_pe", "se_pe", "se_log_pe", "exponent_rc", "exponent_trc", "zero_pe_codes",
    "formula_rc", "formula_trc",
    "delta", "excess_prob", "excess_exponent", "formula_excess",
]
Z_HEADER = ["z_epsilon", "z_violation_fraction", "z_tail_bound"]

Z_CHECK_CODES = 20
Z_CHECK_DRAWS = 50


def _formula_rc(P, rate: RateFunctionSpec, dec: DecoderSpec, job: JobConfig) -> float:
    if dec.kind == DecoderKind.MAP:
        return exponents.e_r_map(P, rate, job.settings).value
    return exponents.e_r_gld(P, rate, dec.metric, job.settings).value


def _formula_trc(P, rate: RateFunctionSpec, dec: DecoderSpec, job: JobConfig) -> Optional[float]:
    # MAP is the beta -> infinity limit of the GLD and has no finite-metric TRC form
    if not job.cross_check or dec.kind == DecoderKind.MAP:
        return None
    return exponents.e_trc_gld(P, rate, dec.metric, job.settings).value


def _empirical_exponent(prob: float, n: int) -> float:
    return -math.log(prob) / n if prob > 0 else math.inf


def run_simulate(job: JobConfig) -> List[str]:
    """Run a `simulate` job; returns the paths written."""
    variable = job.sweep.variable if job.sweep else None
    if variable not in (None, "n", "R"):
        raise ConfigError(f"simulate sweeps n or R, not {variable!r}")
    P = job_source(job)
    dec = DecoderSpec.parse(job.decoder, job.metric)
    z_metric = dec.metric if dec.kind != DecoderKind.MAP else MetricSpec(kind=MetricKind.MATCHED_LL)

    points: List[Tuple[int, RateFunctionSpec]] = []
    for value in job.sweep.values() if job.sweep else [None]:
        if variable == "n":
            if value < 1 or value != int(value):
                raise ConfigError(f"blocklength must be a positive integer, got {value:g}")
            points.append((int(value), job.rate))
        elif variable == "R":
            points.append((job.n, RateFunctionSpec.constant(value)))
        else:
            points.append((job.n, job.rate))

    formulas: Dict[str, Tuple[float, Optional[float], float]] = {}
    rows = []
    for n, rate in points:
        label = rate.label()
        logger.info(f"simulate: n={n} rate={label} decoder={dec.kind.value} codes={job.codes} seed={job.seed}")
        est = simcode.ensemble_stats(n, P, rate, dec, job.codes, job.seed, settings=job.settings)
        excess = simcode.exact_excess_rate_prob(n, P, rate, job.delta, job.settings)
        if label not in formulas:
            formulas[label] = (
                _formula_rc(P, rate, dec, job),
                _formula_trc(P, rate, dec, job),
                exponents.excess_rate_exponent(P, rate, job.delta, job.settings).value,
            )
        rc, trc, formula_excess = formulas[label]
        row = [
            n, est.codes, est.seed, dec.kind.value, label,
            est.mean_pe, est.mean_log_pe, est.se_pe, est.se_log_pe, est.exponent_rc, est.exponent_trc,
            est.zero_pe_codes, rc, trc,
            job.delta, excess, _empirical_exponent(excess, n), formula_excess,
        ]
        if job.epsilon is not None:
            z = simcode.z_concentration_sweep(n, P, rate, z_metric, job.epsilon, min(job.codes, Z_CHECK_CODES),
                                              Z_CHECK_DRAWS, job.seed, job.settings)
            if z.violation_fraction > z.tail_bound:
                logger.warning(f"simulate: Z concentration fraction {z.violation_fraction:.3g} "
                               f"above the bound {z.tail_bound:.3g} at n={n}")
            row += [job.epsilon, z.violation_fraction, z.tail_bound]
        rows.append(row)

    header = HEADER + (Z_HEADER if job.epsilon is not None else [])
    return [write_csv(output_path(job, f"simulate_{dec.kind.value}.csv"), header, rows)]
