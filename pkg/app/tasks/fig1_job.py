"""
Comparison figure job.

Plots the fixed-rate expurgated exponent against the variable-rate error
exponent with an unconstrained excess-rate exponent, both as functions of R,
for a binary source (built in, or --source).
"""
import logging
from typing import List

import numpy as np

from app.core.errors import ConfigError
from app.core.probdist import JointDist
from app.services.exponents import fr_expurgated
from app.services.job_config import oracle_step, output_path
from app.services.reports import write_csv, write_svg
from app.services.schemas import JobConfig
from app.services.tradeoff import tradeoff_e_given_er

logger = logging.getLogger(__name__)

FIG1_SOURCE = [[0.75, 0.1], [0.0, 0.15]]
FIG1_R_MIN = 0.05
FIG1_R_MAX = 0.68
FIG1_POINTS = 32
# Large enough that the divergence ball in J never binds
FIG1_UNCONSTRAINED_ER = 1e6

HEADER = ["R", "E_ex_fr", "E_e_inf"]


def fig1_grid(job: JobConfig) -> List[float]:
    if job.sweep is None:
        return np.linspace(FIG1_R_MIN, FIG1_R_MAX, FIG1_POINTS).tolist()
    if job.sweep.variable != "R":
        raise ConfigError(f"fig1 sweeps R, not {job.sweep.variable!r}")
    return job.sweep.values()


def run_fig1(job: JobConfig) -> List[str]:
    """Run the `fig1` job; writes fig1.csv and fig1.svg."""
    P = JointDist.from_array(job.source if job.source is not None else FIG1_SOURCE)
    step = oracle_step(job)
    grid = fig1_grid(job)
    logger.info(f"fig1: {len(grid)} rates on [{grid[0]:g}, {grid[-1]:g}], source '{job.source_name}'")

    rows = []
    for R in grid:
        ex = fr_expurgated(P, R, job.settings, step).value
        e_inf = tradeoff_e_given_er(P, FIG1_UNCONSTRAINED_ER, R, False, job.settings, step).y
        logger.debug(f"fig1: R={R:.4f} E_ex_fr={ex:.6g} E_e_inf={e_inf:.6g}")
        rows.append([R, ex, e_inf])

    csv_path = write_csv(output_path(job, "fig1.csv"), HEADER, rows)
    svg_path = write_svg(
        output_path(job, "fig1.svg"),
        grid,
        {"fixed-rate expurgated": [r[1] for r in rows], "variable-rate, E_r = inf": [r[2] for r in rows]},
        xlabel="R [nats]",
        ylabel="error exponent",
    )
    return [csv_path, svg_path]
