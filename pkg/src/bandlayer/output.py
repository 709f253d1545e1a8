"""Atomic file outputs: CSV tables, plain-text summaries, gnuplot scripts.

All writers go through a temp-file-plus-rename so a crash mid-write never
leaves a truncated file behind.  Reals are rendered with 17 significant
digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from .errors import ConfigError


def _format_real(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def atomic_write_text(path: str, text: str) -> None:
    """Write text to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_csv(path: str, header, columns) -> None:
    """Write named columns as comma-separated text with LF endings.

    ``columns`` may mix float arrays and string sequences (labels); float
    entries get the lossless 17-digit rendering.
    """
    header = list(header)
    cols = [np.asarray(c) for c in columns]
    if len(header) != len(cols):
        raise ConfigError("write_csv: header and column counts differ")
    if not cols:
        raise ConfigError("write_csv: need at least one column")
    n = cols[0].shape[0]
    for c in cols:
        if c.ndim != 1 or c.shape[0] != n:
            raise ConfigError("write_csv: columns must be 1-d, equal length")
    lines = [",".join(header)]
    for i in range(n):
        cells = []
        for c in cols:
            v = c[i]
            if isinstance(v, (str, np.str_)):
                cells.append(str(v))
            elif isinstance(v, (bool, np.bool_)):
                cells.append("1" if v else "0")
            else:
                cells.append(_format_real(v))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_text_report(path: str, lines) -> None:
    atomic_write_text(path, "\n".join(str(l) for l in lines) + "\n")


# ----------------------------------------------------------------- gnuplot


def gnuplot_loglog_script(csv_basename: str, xcol: int, ycol: int,
                          xlabel: str, ylabel: str,
                          slope: float | None = None,
                          prefactor: float | None = None,
                          title: str = "") -> str:
    """Log-log scatter of one CSV column pair, with an optional power law.

    Column indices are 1-based as gnuplot counts them.  The script is
    self-contained next to its CSV; run `gnuplot <script>` to get a PNG
    beside it.
    """
    stem = os.path.splitext(csv_basename)[0]
    lines = [
        "set terminal pngcairo size 900,600",
        f"set output '{stem}.png'",
        "set datafile separator ','",
        "set datafile missing 'nan'",
        "set logscale xy",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set key left top",
    ]
    if title:
        lines.append(f"set title '{title}'")
    plot = (f"plot '{csv_basename}' every ::1 using {xcol}:{ycol} "
            f"with points pt 7 ps 1.4 title 'measured'")
    if slope is not None and prefactor is not None:
        plot += (f", {_format_real(prefactor)}*x**{_format_real(slope)} "
                 f"with lines lw 2 title 'fit slope {slope:.3f}'")
    lines.append(plot)
    return "\n".join(lines) + "\n"


def gnuplot_velocity_script(csv_basename: str, theta_col: int, v_col: int,
                            composite_col: int | None = None,
                            boundary: float | None = None,
                            title: str = "") -> str:
    """Trading-speed profile plot, optionally against the asymptotic curve."""
    stem = os.path.splitext(csv_basename)[0]
    lines = [
        "set terminal pngcairo size 900,600",
        f"set output '{stem}.png'",
        "set datafile separator ','",
        "set datafile missing 'nan'",
        "set xlabel 'position'",
        "set ylabel 'trading speed'",
        "set key left bottom",
    ]
    if title:
        lines.append(f"set title '{title}'")
    if boundary is not None and math.isfinite(boundary):
        lines.append(f"set arrow from {_format_real(boundary)}, "
                     "graph 0 to "
                     f"{_format_real(boundary)}, graph 1 nohead dt 2")
    plot = (f"plot '{csv_basename}' every ::1 using {theta_col}:{v_col} "
            "with lines lw 2 title 'solver'")
    if composite_col is not None:
        plot += (f", '{csv_basename}' every ::1 using "
                 f"{theta_col}:{composite_col} with lines lw 2 dt 3 "
                 "title 'matched expansion'")
    lines.append(plot)
    return "\n".join(lines) + "\n"
