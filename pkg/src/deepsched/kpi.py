"""Throughput KPIs: geomean with zero replacement, percentiles, UPT,
co-scheduling efficiency, gains over a baseline and CSV writers."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

ZERO_REPLACEMENT = 1.0    # bit/s
STATS = ("p5", "median", "geomean")


def geomean(values, floor: float = ZERO_REPLACEMENT) -> float:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("geomean of an empty set")
    if np.any(x < 0):
        raise ValueError("throughputs must be non-negative")
    x = np.where(x == 0, floor, x)
    return float(np.exp(np.log(x).mean()))


def percentile(values, q: float) -> float:
    """Linear interpolation between order statistics (numpy's default method)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("percentile of an empty set")
    if not 0 <= q <= 100:
        raise ValueError(f"q must lie in [0, 100], got {q}")
    return float(np.percentile(x, q))


def upt(busy_served_bits, busy_ttis, tti_duration: float) -> np.ndarray:
    """Per-UE user-perceived throughput; UEs that were never busy are dropped."""
    bits = np.asarray(busy_served_bits, dtype=np.float64).ravel()
    busy = np.asarray(busy_ttis, dtype=np.float64).ravel()
    keep = busy > 0
    return bits[keep] / (busy[keep] * tti_duration)


def cosched_efficiency(cosched_counts) -> float:
    """Mean occupied user layers per occupied RBG.

    `cosched_counts` holds per-RBG layer counts, any shape (e.g. TTI x cell x RBG).
    Returns nan when no RBG was ever occupied.
    """
    c = np.asarray(cosched_counts).ravel()
    occ = c[c > 0]
    return float(occ.mean()) if occ.size else float("nan")


def summarize(tput) -> dict:
    tput = np.asarray(tput, dtype=np.float64)
    return {"p5": percentile(tput, 5), "median": percentile(tput, 50),
            "geomean": geomean(tput), "mean": float(tput.mean())}


def gain_table(candidate: dict, baseline: dict, keys=STATS) -> dict:
    """Percentage gain per statistic; None where the baseline is 0."""
    out = {}
    for k in keys:
        b = baseline[k]
        out[k] = None if b == 0 else 100.0 * (candidate[k] / b - 1.0)
    return out


def cdf_points(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and their cumulative fractions i/n."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("cdf of an empty set")
    return x, np.arange(1, x.size + 1) / x.size


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "undefined"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows, comments=()) -> str:
    """CSV with leading '#' comment lines documenting the schema."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def per_ue_csv(tput, upt_values, traffic, cells) -> str:
    rows = zip(cells, range(len(tput)), traffic, tput, upt_values)
    return csv_text(["cell", "ue", "traffic", "throughput_bps", "upt_bps"], rows,
                    ["per-UE mean throughput and user-perceived throughput (bit/s)",
                     "upt is undefined for UEs never holding data"])


def cdf_csv(values) -> str:
    x, f = cdf_points(values)
    return csv_text(["value", "cum_fraction"], zip(x, f),
                    ["empirical CDF: sorted values, cumulative fraction i/n"])
