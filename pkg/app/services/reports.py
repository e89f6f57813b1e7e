"""
Report output: CSV tables and single-panel SVG charts.

Handles:
- Extended-real formatting with "inf" / "-inf" sentinels at 17 significant digits
- Atomic writes (temp file in the target directory, then os.replace)
- Reading CSV reports back for tests and follow-up jobs
"""
import contextlib
import csv
import io
import logging
import math
import os
import tempfile
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from app.config import Config  # noqa: E402

logger = logging.getLogger(__name__)

Cell = Union[float, int, str, None]


def format_value(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    x = float(value)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def parse_value(text: str) -> Cell:
    """Inverse of format_value; non-numeric cells come back as strings, empty ones as None."""
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        return text


@contextlib.contextmanager
def atomic_open(path: str, mode: str = "w") -> Iterator:
    """Open a temp file next to `path`; it replaces `path` only if the block completes."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        kwargs = {"newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        writer.writerow([format_value(c) for c in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> str:
    text = render_csv(header, rows)
    with atomic_open(path) as f:
        f.write(text)
    logger.info(f"Wrote {text.count(chr(10)) - 1} rows to {path}")
    return path


def read_csv(path: str) -> Tuple[List[str], List[List[Cell]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[parse_value(c) for c in row] for row in reader]
    return header, rows


def column(header: Sequence[str], rows: Sequence[Sequence[Cell]], name: str) -> List[Cell]:
    i = list(header).index(name)
    return [row[i] for row in rows]


def write_svg(path: str, x: Sequence[float], series: Dict[str, Sequence[float]],
              xlabel: str = "R", ylabel: str = "exponent", title: Optional[str] = None,
              y_clip: Optional[float] = None) -> str:
    """
    Line chart of each series against x.

    Finite values are clipped at y_clip (Config.PLOT_Y_CLIP by default);
    +inf points are drawn as markers on the clip line and NaN breaks a line.
    """
    y_clip = Config.PLOT_Y_CLIP if y_clip is None else y_clip
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    try:
        for label, ys in series.items():
            finite_x, finite_y, inf_x = [], [], []
            for xi, yi in zip(x, ys):
                if yi is None or math.isnan(yi):
                    finite_x.append(xi)
                    finite_y.append(math.nan)
                elif math.isinf(yi):
                    inf_x.append(xi)
                    finite_x.append(xi)
                    finite_y.append(math.nan)
                else:
                    finite_x.append(xi)
                    finite_y.append(min(yi, y_clip))
            line, = ax.plot(finite_x, finite_y, label=label)
            if inf_x:
                ax.plot(inf_x, [y_clip] * len(inf_x), linestyle="none", marker="^",
                        color=line.get_color(), label=f"{label} (+inf)")
        ax.set_ylim(bottom=0.0, top=y_clip * 1.05)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper left")
        buf = io.StringIO()
        # Fixed salt keeps element ids, and so the file bytes, stable across runs
        with matplotlib.rc_context({"svg.hashsalt": "sdbin"}):
            fig.savefig(buf, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    with atomic_open(path) as f:
        f.write(buf.getvalue())
    logger.info(f"Wrote chart to {path}")
    return path


def flatten_witness(witness) -> str:
    """A nested-list witness as one `;`-separated cell in row-major order."""
    if witness is None:
        return ""
    flat = np.asarray(witness, dtype=float).ravel()
    return ";".join(format(float(v), ".17g") for v in flat)
