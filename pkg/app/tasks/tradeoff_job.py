"""
Trade-off job.

Sweeps one of the trade-off curves between the error exponent and the
excess-rate exponent and writes it as a CSV table.
"""
import logging
from typing import List

from app.core.errors import ConfigError
from app.services import tradeoff
from app.services.job_config import job_source, oracle_step, output_path
from app.services.reports import flatten_witness, write_csv
from app.services.schemas import JobConfig

logger = logging.getLogger(__name__)

TRADEOFF_MODES = {
    "e_given_er": ("er", "delta"),
    "er_given_e": ("ee", "delta"),
    "e_star": ("delta",),
}


def run_tradeoff(job: JobConfig) -> List[str]:
    """Run a `tradeoff` job; returns the paths written."""
    if job.mode not in TRADEOFF_MODES:
        raise ConfigError(f"unknown tradeoff mode {job.mode!r}; expected one of {', '.join(TRADEOFF_MODES)}")
    axes = TRADEOFF_MODES[job.mode]
    variable = job.sweep.variable if job.sweep else axes[0]
    if variable not in axes:
        raise ConfigError(f"mode {job.mode} sweeps {' or '.join(axes)}, not {variable!r}")
    P = job_source(job)
    step = oracle_step(job)
    default = {"er": job.er, "ee": job.ee, "delta": job.delta}[variable]
    points = job.sweep.values() if job.sweep else [default]
    logger.info(f"tradeoff {job.mode}: {len(points)} point(s) over {variable}")

    rows = []
    if job.mode == "e_given_er":
        header = [variable, "E_e", "E_e_trc", "witness"]
        for x in points:
            e_r, delta = (x, job.delta) if variable == "er" else (job.er, x)
            pt = tradeoff.tradeoff_e_given_er(P, e_r, delta, job.cross_check, job.settings, step)
            rows.append([x, pt.y, pt.y_trc, flatten_witness(pt.witness)])
    elif job.mode == "er_given_e":
        header = [variable, "E_er", "plateau", "witness"]
        for x in points:
            e_e, delta = (x, job.delta) if variable == "ee" else (job.ee, x)
            pt = tradeoff.tradeoff_er_given_e(P, e_e, delta, True, job.settings, step)
            rows.append([x, pt.y, pt.plateau, flatten_witness(pt.witness)])
    else:
        header = ["delta", "e_star"]
        for x in points:
            rows.append([x, tradeoff.e_star_of_delta(P, x, job.settings)])

    for row in rows:
        logger.debug(f"tradeoff {job.mode}: {row[:3]}")
    return [write_csv(output_path(job, f"tradeoff_{job.mode}.csv"), header, rows)]
