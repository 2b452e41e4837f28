"""Pure-Python reference implementations of the sequential hot loops.

Semantics must match ffrsim._kernels._core exactly (same float64 operation
order); the compiled module is just faster.
"""

from __future__ import annotations

import numpy as np


def rainflow_halves(extrema: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Four-point rainflow decomposition of a SoC turning-point sequence.

    Matched inner pairs are emitted as two half cycles (one per direction)
    flagged full=1; the residual stack contributes one half cycle per leg.
    Zero-depth legs are dropped.

    Returns (depths, directions, full) where direction 1 means the SoC fell
    over the half cycle (discharge) and 0 that it rose.
    """
    stack: list[float] = []
    depths: list[float] = []
    dirs: list[int] = []
    full: list[int] = []
    for a in extrema:
        stack.append(float(a))
        while len(stack) >= 4:
            r1 = abs(stack[-3] - stack[-4])
            r2 = abs(stack[-2] - stack[-3])
            r3 = abs(stack[-1] - stack[-2])
            if r2 <= r1 and r2 <= r3:
                lo, hi = stack[-3], stack[-2]
                if r2 > 0.0:
                    first_dir = 1 if hi < lo else 0
                    depths.extend((r2, r2))
                    dirs.extend((first_dir, 1 - first_dir))
                    full.extend((1, 1))
                del stack[-3:-1]
            else:
                break
    for m in range(len(stack) - 1):
        d = abs(stack[m + 1] - stack[m])
        if d > 0.0:
            depths.append(d)
            dirs.append(1 if stack[m + 1] < stack[m] else 0)
            full.append(0)
    return (
        np.asarray(depths, dtype=np.float64),
        np.asarray(dirs, dtype=np.int8),
        np.asarray(full, dtype=np.int8),
    )


def css_residuals(
    y: np.ndarray,
    ar: np.ndarray,
    ma: np.ndarray,
    intercept: float,
) -> np.ndarray:
    """One-step ARMA residuals with zero initialization (conditional scheme).

    e[t] = y[t] - intercept - sum_i ar[i]*y[t-1-i] - sum_j ma[j]*e[t-1-j],
    with unavailable lags treated as zero. Callers should discard the first
    max(p, q) warm-up values when summing squares.
    """
    yl = [float(v) for v in y]
    arl = [float(v) for v in ar]
    mal = [float(v) for v in ma]
    n = len(yl)
    p = len(arl)
    q = len(mal)
    e = [0.0] * n
    for t in range(n):
        pred = intercept
        for i in range(p):
            k = t - 1 - i
            if k >= 0:
                pred += arl[i] * yl[k]
        for j in range(q):
            k = t - 1 - j
            if k >= 0:
                pred += mal[j] * e[k]
        e[t] = yl[t] - pred
    return np.asarray(e, dtype=np.float64)


def reflect_walk(
    noise: np.ndarray,
    mean_reversion: float,
    x0: float,
    neutral_window: int,
    correction: float,
    momentum: float,
) -> np.ndarray:
    """Bounded mean-reverting walk with momentum, reflected at ±1.

    m[t] = momentum * m[t-1] - mean_reversion * x[t-1] + noise[t]
    x[t] = x[t-1] + m[t], minus `correction` times the trailing-window mean
    of the emitted series when neutral_window > 0, then reflected into
    [-1, 1]. The momentum term keeps per-step increments small relative to
    the excursion amplitude.
    """
    n = len(noise)
    out = [0.0] * n
    prev = float(x0)
    vel = 0.0
    window_sum = 0.0
    for t in range(n):
        vel = momentum * vel - mean_reversion * prev + float(noise[t])
        x = prev + vel
        if neutral_window > 0:
            count = t if t < neutral_window else neutral_window
            if count > 0:
                x -= correction * (window_sum / count)
        while x > 1.0 or x < -1.0:
            if x > 1.0:
                x = 2.0 - x
            else:
                x = -2.0 - x
        out[t] = x
        if neutral_window > 0:
            window_sum += x
            if t >= neutral_window:
                window_sum -= out[t - neutral_window]
        prev = x
    return np.asarray(out, dtype=np.float64)
