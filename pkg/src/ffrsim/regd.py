"""Regulation-signal handling: CSV traces, synthesis, ARIMA forecasting.

The regulation signal is a normalized value in [-1, 1] updated on a fixed
cadence (2 s in the PJM dynamic product). Forecasts come from an ARIMA model
fitted by conditional least squares on a rolling history window; when no
real trace is available a bounded mean-reverting walk stands in.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy.optimize import minimize

from ffrsim._kernels import css_residuals, reflect_walk


class SignalFormatError(ValueError):
    """A trace file or series failed validation."""


@dataclass(frozen=True)
class RegDSeries:
    """A regulation-signal trace on a fixed cadence."""

    start_time: datetime
    values: np.ndarray
    cadence: float = 2.0

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )
        if self.cadence <= 0:
            raise SignalFormatError("cadence must be positive")
        if self.values.size and (
            self.values.min() < -1.0 or self.values.max() > 1.0
        ):
            raise SignalFormatError("signal values must lie in [-1, 1]")

    def __len__(self) -> int:
        return int(self.values.size)

    def timestamp(self, idx: int) -> datetime:
        return self.start_time + timedelta(seconds=idx * self.cadence)


@dataclass(frozen=True)
class ArimaModel:
    """Fitted ARIMA(p, d, q) model of the signal."""

    order: tuple[int, int, int]
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    intercept: float
    residual_variance: float


def load_regd_csv(path) -> RegDSeries:
    """Parse a trace file with header ``timestamp,regd``.

    Timestamps are ISO-8601 on a uniform cadence; values must already lie in
    [-1, 1] (out-of-range input is rejected, not clamped).
    """
    times: list[datetime] = []
    vals: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header] != ["timestamp", "regd"]:
            raise SignalFormatError(f"{path}: expected header 'timestamp,regd'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise SignalFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
            except ValueError as exc:
                raise SignalFormatError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from exc
            try:
                v = float(row[1])
            except ValueError as exc:
                raise SignalFormatError(f"{path}:{lineno}: bad value {row[1]!r}") from exc
            if not -1.0 <= v <= 1.0:
                raise SignalFormatError(f"{path}:{lineno}: value {v} outside [-1, 1]")
            times.append(ts)
            vals.append(v)
    if not vals:
        raise SignalFormatError(f"{path}: no data rows")
    cadence = 2.0
    if len(times) >= 2:
        cadence = (times[1] - times[0]).total_seconds()
        if cadence <= 0:
            raise SignalFormatError(f"{path}:3: timestamps not increasing")
        for i in range(1, len(times)):
            dt = (times[i] - times[i - 1]).total_seconds()
            if abs(dt - cadence) > 1e-6:
                raise SignalFormatError(
                    f"{path}:{i + 2}: cadence {dt} s differs from {cadence} s"
                )
    return RegDSeries(start_time=times[0], values=np.array(vals), cadence=cadence)


def write_regd_csv(series: RegDSeries, path) -> None:
    """Emit a series in the ``timestamp,regd`` format (UTF-8, LF endings)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("timestamp,regd\n")
        for i, v in enumerate(series.values):
            fh.write(f"{series.timestamp(i).isoformat()},{v!r}\n")


_DEFAULT_START = datetime(2024, 6, 1, 18, 0, 0, tzinfo=timezone.utc)


_WALK_MOMENTUM = 0.95
_WALK_CORRECTION = 0.6


def synth_regd(
    seed: int,
    n_steps: int,
    mean_reversion: float = 0.012,
    volatility: float = 0.006,
    neutral_window: int = 450,
    start_time: datetime = _DEFAULT_START,
    cadence: float = 2.0,
) -> RegDSeries:
    """Reproducible stand-in for a real regulation trace.

    A mean-reverting Gaussian walk with momentum, started at 0 and reflected
    into [-1, 1]; with neutral_window > 0 a fraction of the trailing-window
    mean is subtracted before reflection, keeping the signal energy-neutral
    over that scale.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, volatility, n_steps) if volatility > 0 else np.zeros(n_steps)
    values = reflect_walk(
        noise, mean_reversion, 0.0, neutral_window, _WALK_CORRECTION, _WALK_MOMENTUM
    )
    return RegDSeries(start_time=start_time, values=values, cadence=cadence)


def regd_to_power(r: float, c_bid: float) -> tuple[float, int]:
    """Signed demand (kW) and direction flag for a signal value.

    P = c_bid * r; u = 1 (discharge) when P >= 0 else 0. r = 0 counts as
    discharge with zero demand.
    """
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"signal value {r} outside [-1, 1]")
    if c_bid <= 0:
        raise ValueError("bidding capacity must be positive")
    p = c_bid * r
    return p, 1 if p >= 0 else 0


def _spectral_radius(coeffs: np.ndarray) -> float:
    """Largest companion-matrix eigenvalue magnitude of a lag polynomial."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=np.float64), trim="b")
    if c.size == 0:
        return 0.0
    comp = np.zeros((c.size, c.size))
    comp[0, :] = c
    if c.size > 1:
        comp[np.arange(1, c.size), np.arange(c.size - 1)] = 1.0
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _shrink_to_stable(coeffs: np.ndarray, limit: float = 0.995) -> np.ndarray:
    out = np.asarray(coeffs, dtype=np.float64).copy()
    for _ in range(64):
        rho = _spectral_radius(out)
        if rho < limit:
            break
        out *= (limit - 1e-3) / rho
    return out


def _css_objective(w: np.ndarray, p: int, q: int, theta: np.ndarray) -> float:
    intercept = theta[0]
    ar = theta[1 : 1 + p]
    ma = theta[1 + p :]
    penalty = 0.0
    for coeffs in (ar, ma):
        rho = _spectral_radius(coeffs)
        if rho >= 0.995:
            penalty += 1e3 * (rho - 0.995) ** 2
    e = css_residuals(w, ar, ma, intercept)
    warmup = max(p, q)
    css = float(np.dot(e[warmup:], e[warmup:]))
    return css * (1.0 + penalty)


def _hannan_rissanen(w: np.ndarray, p: int, q: int) -> np.ndarray:
    """Two-stage least-squares initialization of (intercept, ar, ma)."""
    n = w.size
    if q == 0:
        m = 0
        e_hat = np.zeros(n)
    else:
        m = min(max(10, 2 * (p + q)), max(n // 4, p + q + 1))
        rows = n - m
        x = np.ones((rows, m + 1))
        for i in range(1, m + 1):
            x[:, i] = w[m - i : n - i]
        beta, *_ = np.linalg.lstsq(x, w[m:], rcond=None)
        e_hat = np.zeros(n)
        e_hat[m:] = w[m:] - x @ beta
    k = max(p, q, m)
    rows = n - k
    x = np.ones((rows, 1 + p + q))
    for i in range(1, p + 1):
        x[:, i] = w[k - i : n - i]
    for j in range(1, q + 1):
        x[:, p + j] = e_hat[k - j : n - j]
    beta, *_ = np.linalg.lstsq(x, w[k:], rcond=None)
    return beta


def arima_fit(history, order: tuple[int, int, int]) -> ArimaModel:
    """Fit ARIMA(p, d, q) by conditional least squares on the differenced tail.

    Hannan-Rissanen regression seeds the coefficients; models with a moving
    average part are polished by Nelder-Mead on the conditional sum of
    squares with a stationarity/invertibility penalty. A constant history
    falls back to a flat model that predicts the constant.
    """
    values = history.values if isinstance(history, RegDSeries) else np.asarray(history, float)
    p, d, q = order
    if p < 0 or d < 0 or q < 0 or (p == 0 and q == 0):
        raise ValueError("order must have nonnegative terms and p + q >= 1")
    if values.size < 10 * (p + d + q):
        raise ValueError(
            f"history of {values.size} too short for order {order}; "
            f"need >= {10 * (p + d + q)}"
        )
    w = np.diff(values, n=d) if d else values.astype(np.float64)

    if np.ptp(w) < 1e-12:
        const = float(w[0]) if w.size else 0.0
        return ArimaModel(
            order=order,
            ar_coeffs=np.zeros(p),
            ma_coeffs=np.zeros(q),
            intercept=const,
            residual_variance=0.0,
        )

    theta0 = _hannan_rissanen(w, p, q)
    theta0[1 : 1 + p] = _shrink_to_stable(theta0[1 : 1 + p])
    theta0[1 + p :] = _shrink_to_stable(theta0[1 + p :])

    theta = theta0
    if q > 0:
        res = minimize(
            lambda th: _css_objective(w, p, q, th),
            theta0,
            method="Nelder-Mead",
            options={"maxiter": 400 * (1 + p + q), "xatol": 1e-6, "fatol": 1e-10},
        )
        if res.fun <= _css_objective(w, p, q, theta0):
            theta = res.x

    intercept = float(theta[0])
    ar = _shrink_to_stable(theta[1 : 1 + p])
    ma = _shrink_to_stable(theta[1 + p :])
    e = css_residuals(w, ar, ma, intercept)
    warmup = max(p, q)
    used = max(e.size - warmup, 1)
    return ArimaModel(
        order=order,
        ar_coeffs=ar,
        ma_coeffs=ma,
        intercept=intercept,
        residual_variance=float(np.dot(e[warmup:], e[warmup:]) / used),
    )


def arima_forecast(model: ArimaModel, history, horizon: int) -> np.ndarray:
    """Iterated one-step forecasts, integrated back and clamped to [-1, 1]."""
    values = history.values if isinstance(history, RegDSeries) else np.asarray(history, float)
    p, d, q = model.order
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    levels = [values.astype(np.float64)]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    w = levels[-1]
    e = css_residuals(w, model.ar_coeffs, model.ma_coeffs, model.intercept)
    wx = list(w)
    ex = list(e)
    out = []
    for _ in range(horizon):
        pred = model.intercept
        for i in range(p):
            if len(wx) - 1 - i >= 0:
                pred += model.ar_coeffs[i] * wx[len(wx) - 1 - i]
        for j in range(q):
            if len(ex) - 1 - j >= 0:
                pred += model.ma_coeffs[j] * ex[len(ex) - 1 - j]
        out.append(pred)
        wx.append(pred)
        ex.append(0.0)
    fc = np.asarray(out, dtype=np.float64)
    for k in range(d - 1, -1, -1):
        fc = np.cumsum(fc) + levels[k][-1]
    return np.clip(fc, -1.0, 1.0)
