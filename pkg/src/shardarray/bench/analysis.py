"""Strong-scaling analysis: speedup, scaling quality and the two-term cost model.

The model charges a fixed communication cost per rank plus perfectly
divided numerical work, ``t(n) = a*n + b/n``.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Mapping, Sequence

import numpy as np


@dataclasses.dataclass(frozen=True)
class ScalingAnalysis:
    n: int
    t_n: float
    s_n: float
    q_n: float
    p_n_est: float
    p_n_meas: float


def model_time(n: float, a: float, b: float) -> float:
    return a * n + b / n


def estimated_performance(n: int, a: float, b: float) -> float:
    """Model runtime relative to linear scaling from one rank, ``(t(1)/n) / t(n)``."""
    return model_time(1, a, b) / n / model_time(n, a, b)


def relative_speedup(t2: float, tn: float) -> float:
    # two-rank run as the baseline
    return 2.0 * t2 / tn


def scaling_quality(n: int, s_n: float) -> float:
    """1 for linear scaling, above 1 for super-linear; log base 10."""
    return 1.0 / (1.0 + math.log10(n / s_n))


def analyze_strong(times: Mapping[int, float], a_fit: float, b_fit: float) -> list[ScalingAnalysis]:
    if 1 not in times or 2 not in times:
        raise ValueError("strong-scaling analysis needs timings for 1 and 2 ranks")
    t1, t2 = times[1], times[2]
    out = []
    for n in sorted(times):
        tn = times[n]
        s_n = relative_speedup(t2, tn)
        out.append(
            ScalingAnalysis(
                n=n,
                t_n=tn,
                s_n=s_n,
                q_n=scaling_quality(n, s_n),
                p_n_est=estimated_performance(n, a_fit, b_fit),
                p_n_meas=t1 / (n * tn),
            )
        )
    return out


def fit_strong(times: Mapping[int, float]) -> tuple[float, float]:
    """Least-squares ``(a, b)`` for ``t(n) = a*n + b/n``."""
    if len(times) < 2:
        raise ValueError("need at least two rank counts to fit")
    ns = np.array(sorted(times), dtype=float)
    ts = np.array([times[int(n)] for n in ns])
    design = np.column_stack([ns, 1.0 / ns])
    (a, b), *_ = np.linalg.lstsq(design, ts, rcond=None)
    return float(a), float(b)


def format_table(rows: Sequence[ScalingAnalysis]) -> str:
    lines = [f"{'n':>5} {'t_n [s]':>12} {'s_n':>8} {'q_n':>6} {'p_est %':>9} {'p_meas %':>9}"]
    for r in rows:
        lines.append(
            f"{r.n:>5d} {r.t_n:>12.6g} {r.s_n:>8.3g} {r.q_n:>6.2f} "
            f"{100 * r.p_n_est:>9.3g} {100 * r.p_n_meas:>9.3g}"
        )
    return "\n".join(lines)
