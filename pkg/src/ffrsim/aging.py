"""Cycle-based aging: extremum tracking, subgradients, rainflow cost.

The aging degree of one half cycle of depth v is a power law k1 * v**k2.
During a run each module keeps the sequence of SoC turning points (one per
regulation-signal zero crossing); the marginal aging cost of dispatching
power while a half cycle is open is the real-time subgradient, linearized
per horizon by a first-order Taylor expansion so it can enter a convex
objective. The authoritative accumulated cost is computed afterwards from
the full extremum history by rainflow half-cycle extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ffrsim._kernels import rainflow_halves

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class AgingParams:
    """Power-law aging constants of one module.

    Attributes:
        kappa1: aging degree of one full-depth half cycle pair; equals
            1 / (cycle life at 100% depth).
        kappa2: depth exponent (>= 1; > 1 penalizes deep cycles superlinearly).
        n_cycles_100: rated cycle count at 100% depth.
        unit_capacity_cost: replacement cost ($/kWh).
        half_cycle_weight: weight of each half cycle in the accumulated cost.
        xi: depth stand-in for a half cycle that just opened.
    """

    kappa1: float
    kappa2: float
    n_cycles_100: int
    unit_capacity_cost: float
    half_cycle_weight: float = 0.5
    xi: float = 1e-6

    def __post_init__(self):
        if self.kappa1 <= 0:
            raise ValueError("kappa1 must be positive")
        if self.kappa2 < 1:
            raise ValueError("kappa2 must be >= 1")
        if self.half_cycle_weight != 0.5:
            raise ValueError("half_cycle_weight is fixed at 0.5")
        if not (0 < self.xi < self.kappa1 * self.kappa2 * 0.01):
            raise ValueError("xi must be in (0, 0.01*kappa1*kappa2)")


@dataclass
class CycleTracker:
    """SoC turning-point history of one module.

    ``extrema[-1]`` is the anchor of the currently open half cycle (the SoC
    where the direction last flipped); the running SoC itself is not stored.
    ``taylor_point`` is the expansion depth refreshed at each horizon start.
    """

    extrema: list[float] = field(default_factory=list)
    direction_of_last_segment: int = 1
    taylor_point: float = 0.0

    @classmethod
    def seeded(cls, initial_soc: float) -> "CycleTracker":
        return cls(extrema=[float(initial_soc)])

    @property
    def anchor(self) -> float:
        return self.extrema[-1]


@dataclass(frozen=True)
class HalfCycle:
    """One extracted half cycle: SoC swing, direction, pairing flag."""

    depth: float
    direction: int  # 1 = SoC fell (discharge), 0 = SoC rose (charge)
    full: bool  # True when matched into a full cycle by the rainflow rule


def kappa1_from_cycle_life(upsilon_100: float, n_cycles: float) -> float:
    """k1 implied by a rated cycle count: k1 = 1 / (upsilon_100 * n_cycles)."""
    if upsilon_100 <= 0 or n_cycles <= 0:
        raise ValueError("cycle depth and cycle count must be positive")
    return 1.0 / (upsilon_100 * n_cycles)


def aging_degree(params: AgingParams, upsilon: float) -> float:
    """Aging degree of a half cycle of depth upsilon: k1 * upsilon**k2."""
    if upsilon < 0 or upsilon > 1:
        raise ValueError(f"cycle depth {upsilon} outside [0, 1]")
    return params.kappa1 * upsilon**params.kappa2


def aging_degree_derivative(params: AgingParams, upsilon: float) -> float:
    """Exact derivative of the aging power law: k1 * k2 * upsilon**(k2-1)."""
    if upsilon < 0:
        raise ValueError("cycle depth must be nonnegative")
    return params.kappa1 * params.kappa2 * upsilon ** (params.kappa2 - 1.0)


def update_extrema(
    tracker: CycleTracker,
    regd_sign_changed: bool,
    soc_now: float,
) -> CycleTracker:
    """New tracker after a step; appends soc_now as a turning point on a
    regulation-signal zero crossing, otherwise returns the tracker unchanged."""
    if not regd_sign_changed:
        return tracker
    return replace(
        tracker,
        extrema=tracker.extrema + [float(soc_now)],
        direction_of_last_segment=1 - tracker.direction_of_last_segment,
    )


def current_cycle_depth(
    tracker: CycleTracker,
    soc_prev: float,
    p_bat: float,
    dt: float,
    energy: float,
) -> float:
    """Depth of the open half cycle after moving p_bat (kW) for dt seconds.

    Only meaningful while the direction continues; a half cycle that opened
    this very step has no accumulated swing yet (use the xi branch of the
    subgradient instead).
    """
    return abs(soc_prev - tracker.anchor) + p_bat * (dt / SECONDS_PER_HOUR) / energy


def aging_subgradient(
    tracker: CycleTracker,
    soc_prev: float,
    params: AgingParams,
    energy: float,
    dt: float,
    fresh_half_cycle: bool,
) -> float:
    """Marginal aging cost ($/kW) of power dispatched during this interval.

    Derivative of the half-cycle-weighted accumulated cost with respect to
    the interval's power; the power's own contribution to the depth is
    dropped (it is O(P*dt/E) relative). A half cycle that opened this step
    uses the infinitesimal depth stand-in xi.
    """
    dt_h = dt / SECONDS_PER_HOUR
    if fresh_half_cycle:
        slope = params.xi
    else:
        omega = abs(soc_prev - tracker.anchor)
        slope = aging_degree_derivative(params, omega)
    return 0.5 * dt_h * params.unit_capacity_cost * slope


def taylor_omega_prime(params: AgingParams, upsilon0: float, omega: float) -> float:
    """First-order expansion of the aging-degree derivative around upsilon0.

    k1*k2*[u0**(k2-1) + (k2-1)*u0**(k2-2)*(omega - u0)]. The expansion point
    is floored at xi: below it the expansion is singular for k2 < 2 and
    degenerates to a zero slope for k2 > 2.
    """
    u0 = max(upsilon0, params.xi)
    k2 = params.kappa2
    base = u0 ** (k2 - 1.0)
    slope = (k2 - 1.0) * u0 ** (k2 - 2.0)
    return params.kappa1 * k2 * (base + slope * (omega - u0))


def extract_half_cycles(extrema: list[float] | np.ndarray) -> list[HalfCycle]:
    """Rainflow half-cycle decomposition of an extremum sequence.

    Four-point rule; matched pairs come back as two half cycles flagged
    full, the residual as unmatched half cycles. The summed depths equal
    the total SoC travel of the sequence.
    """
    arr = np.asarray(extrema, dtype=np.float64)
    if arr.size < 2:
        return []
    depths, dirs, full = rainflow_halves(arr)
    return [
        HalfCycle(depth=float(d), direction=int(u), full=bool(f))
        for d, u, f in zip(depths, dirs, full)
    ]


def accumulated_aging_cost(
    half_cycles: list[HalfCycle],
    params: AgingParams,
    energy: float,
) -> float:
    """Aging cost in $ over a set of half cycles.

    energy (kWh) * unit capacity cost * sum of weighted aging degrees; one
    full cycle at 100% depth costs exactly energy * cost / n_cycles_100.
    """
    total = sum(
        params.half_cycle_weight * aging_degree(params, hc.depth)
        for hc in half_cycles
    )
    return energy * params.unit_capacity_cost * total
