"""Per-module electrical model: OCV, conversion losses, power balance, SoC.

Each battery module is a pack behind a bidirectional half-bridge buck-boost
converter. Losses split into conduction (I²R through pack resistance, MOSFET
on-resistance and inductor DCR) and switching (overlap, dead-time, reverse
recovery, output capacitance, gate charge).

Sign convention: every power and current is a nonnegative magnitude; the
binary direction flag ``u`` (1 = discharge, 0 = charge) carries the sign.
Device-level losses are computed in watts, module-level powers in kW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ffrsim.aging import AgingParams, CycleTracker

_SOC_TOL = 1e-9

W_PER_KW = 1000.0
SECONDS_PER_HOUR = 3600.0


class InfeasibleStepError(ValueError):
    """A SoC update would leave the allowed operating band."""


@dataclass(frozen=True)
class ConverterParams:
    """DC-DC converter electrical constants.

    Attributes:
        r_on: MOSFET on-resistance (Ω).
        dcr: inductor equivalent series resistance (Ω).
        v_dc: DC bus side voltage (V).
        v_ds: drain-source voltage across the switch (V).
        v_gs: gate drive voltage (V).
        f_sw: switching frequency (Hz).
        t_r, t_f: rise/fall time of the switching transition (s).
        c_oss: MOSFET output capacitance (F).
        q_rr: diode reverse recovery charge (C).
        q_g1, q_g2: total gate charge of the two MOSFETs (C).
        vi_loss_current_scaled: sensitivity switch; when True the overlap
            term scales with |I| instead of the printed current-free form.
    """

    r_on: float
    dcr: float
    v_dc: float
    v_ds: float
    v_gs: float
    f_sw: float
    t_r: float
    t_f: float
    c_oss: float
    q_rr: float
    q_g1: float
    q_g2: float
    vi_loss_current_scaled: bool = False

    def __post_init__(self):
        numeric = (
            self.r_on, self.dcr, self.v_dc, self.v_ds, self.v_gs,
            self.f_sw, self.t_r, self.t_f, self.c_oss, self.q_rr,
            self.q_g1, self.q_g2,
        )
        if any(v <= 0 for v in numeric):
            raise ValueError("converter parameters must all be positive")
        if self.t_r + self.t_f >= 1.0 / self.f_sw:
            raise ValueError("transition times exceed the switching period")


@dataclass(frozen=True)
class PackParams:
    """Battery pack electrical constants.

    OCV is linear in SoC over the allowed band: ocv = k0 + k1 * soc, with
    k0/k1 at pack level (cell values times series cell count).

    Attributes:
        r_bat: pack internal resistance (Ω).
        energy_capacity: usable energy (kWh).
        k0: OCV intercept (V).
        k1: OCV slope per unit SoC (V).
        soc_min, soc_max: allowed SoC band, fractions of capacity.
        i_min, i_max: current magnitude bounds when active (A).
        p_max: nameplate power (kW).
    """

    r_bat: float
    energy_capacity: float
    k0: float
    k1: float
    soc_min: float
    soc_max: float
    i_min: float
    i_max: float
    p_max: float

    def __post_init__(self):
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if not (0.0 <= self.i_min < self.i_max):
            raise ValueError("need 0 <= i_min < i_max")
        if self.r_bat <= 0 or self.k0 <= 0 or self.energy_capacity <= 0:
            raise ValueError("r_bat, k0 and energy_capacity must be positive")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")


@dataclass(frozen=True)
class ModuleSpec:
    """Immutable parameter set of one battery module."""

    id: str
    pack: PackParams
    converter: ConverterParams
    aging: AgingParams

    @property
    def r_total(self) -> float:
        """Series resistance seen by the module current (Ω)."""
        return self.pack.r_bat + self.converter.r_on + self.converter.dcr


@dataclass
class ModuleState:
    """Evolving operating state of one module.

    ``tracker`` owns the SoC extremum history used by the aging model; it is
    seeded with the initial SoC.
    """

    soc: float
    active: bool = False
    direction: int = 1
    tracker: CycleTracker = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.tracker is None:
            self.tracker = CycleTracker.seeded(self.soc)


@dataclass(frozen=True)
class SwitchingLoss:
    """Switching loss breakdown (W)."""

    p_vi: float
    p_dt: float
    p_rr: float
    p_coss: float
    p_g: float

    @property
    def total(self) -> float:
        return self.p_vi + self.p_dt + self.p_rr + self.p_coss + self.p_g

    @property
    def fixed(self) -> float:
        """Current-independent part (everything except dead-time loss)."""
        return self.total - self.p_dt


@dataclass(frozen=True)
class PowerBalance:
    """Module power balance snapshot (kW)."""

    p_bat: float
    p_mod: float
    p_loss: float
    clamped: bool = False


def ocv(pack: PackParams, soc: float) -> float:
    """Open-circuit voltage (V) at the given SoC, linear fit k0 + k1*soc."""
    if soc < pack.soc_min - _SOC_TOL or soc > pack.soc_max + _SOC_TOL:
        raise ValueError(
            f"soc {soc:.6f} outside operating band "
            f"[{pack.soc_min}, {pack.soc_max}]"
        )
    return pack.k0 + pack.k1 * soc


def conduction_loss(spec: ModuleSpec, i_bat: float) -> float:
    """Conduction loss I²·(R_bat + R_on + DCR) in watts.

    Even and convex in the current; zero only at zero current.
    """
    if abs(i_bat) > spec.pack.i_max * (1.0 + 1e-9):
        raise ValueError(
            f"|i_bat|={abs(i_bat):.3f} A exceeds i_max={spec.pack.i_max} A "
            f"for module {spec.id}"
        )
    return i_bat * i_bat * spec.r_total


def switching_loss(spec: ModuleSpec, i_bat: float) -> SwitchingLoss:
    """Converter switching losses at current magnitude |i_bat| (W).

    Only the dead-time term depends on the current; overlap, reverse
    recovery, output capacitance and gate charge are fixed per cycle.
    """
    c = spec.converter
    transition = c.t_r + c.t_f
    p_vi = 0.5 * (c.v_dc + c.v_ds) * c.f_sw * transition
    if c.vi_loss_current_scaled:
        p_vi *= abs(i_bat)
    p_dt = c.v_ds * abs(i_bat) * c.f_sw * transition
    p_rr = c.q_rr * c.v_dc * c.f_sw
    p_coss = c.c_oss * c.v_dc * c.v_dc * c.f_sw
    p_g = (c.q_g1 + c.q_g2) * c.v_gs * c.f_sw
    return SwitchingLoss(p_vi=p_vi, p_dt=p_dt, p_rr=p_rr, p_coss=p_coss, p_g=p_g)


def total_loss(spec: ModuleSpec, i_bat: float, active: bool = True) -> float:
    """Conduction plus switching loss in watts; zero for an inactive module."""
    if not active:
        return 0.0
    return conduction_loss(spec, i_bat) + switching_loss(spec, i_bat).total


def module_power_balance(
    spec: ModuleSpec,
    i_bat: float,
    soc: float,
    u: int,
    active: bool = True,
) -> PowerBalance:
    """Internal/external power split at an operating point.

    p_bat = OCV·I is the internal pack power. Discharging (u=1) the module
    delivers p_mod = p_bat - losses to the bus; charging (u=0) it draws
    p_mod = p_bat + losses from the bus. All values in kW, magnitudes.

    If losses exceed the internal power while discharging (viable only at
    very small currents), p_mod is clamped to zero and flagged.
    """
    if not active:
        return PowerBalance(p_bat=0.0, p_mod=0.0, p_loss=0.0)
    p_bat_w = ocv(spec.pack, soc) * abs(i_bat)
    loss_w = total_loss(spec, i_bat, active=True)
    clamped = False
    if u == 1:
        p_mod_w = p_bat_w - loss_w
        if p_mod_w < 0.0:
            p_mod_w = 0.0
            clamped = True
    else:
        p_mod_w = p_bat_w + loss_w
    return PowerBalance(
        p_bat=p_bat_w / W_PER_KW,
        p_mod=p_mod_w / W_PER_KW,
        p_loss=loss_w / W_PER_KW,
        clamped=clamped,
    )


def step_soc(
    state: ModuleState,
    spec: ModuleSpec,
    p_bat: float,
    dt: float,
    u: int,
) -> float:
    """SoC after one interval of internal power p_bat (kW) for dt seconds.

    Discharge lowers SoC, charge raises it; the energy moved is accounted on
    the internal (p_bat) side, so a discharge/charge round trip at the same
    p_bat restores SoC exactly.

    Raises:
        InfeasibleStepError: if the update would leave the SoC band.
    """
    if p_bat < 0:
        raise ValueError("p_bat is a magnitude; direction is carried by u")
    delta = p_bat * (dt / SECONDS_PER_HOUR) / spec.pack.energy_capacity
    new_soc = state.soc - delta if u == 1 else state.soc + delta
    if new_soc < spec.pack.soc_min - _SOC_TOL or new_soc > spec.pack.soc_max + _SOC_TOL:
        direction = "discharge" if u == 1 else "charge"
        raise InfeasibleStepError(
            f"module {spec.id}: {direction} of {p_bat:.3f} kW for {dt:.1f} s "
            f"moves soc from {state.soc:.6f} to {new_soc:.6f}, outside "
            f"[{spec.pack.soc_min}, {spec.pack.soc_max}]"
        )
    return new_soc


def module_efficiency(p_mod: float, p_bat: float, u: int) -> float:
    """Operating efficiency: p_mod/p_bat when discharging, p_bat/p_mod when charging."""
    if u == 1:
        if p_bat <= 0:
            raise ValueError("efficiency undefined at zero internal power")
        return p_mod / p_bat
    if p_mod <= 0:
        raise ValueError("efficiency undefined at zero external power")
    return p_bat / p_mod


def max_module_output(spec: ModuleSpec, soc: float, u: int, dt: float) -> float:
    """Largest external power magnitude (kW) the module can sustain for dt seconds.

    Limited by the current bound, the nameplate power and the SoC headroom in
    the commanded direction.
    """
    v = ocv(spec.pack, soc)
    headroom = (soc - spec.pack.soc_min) if u == 1 else (spec.pack.soc_max - soc)
    if headroom <= 0:
        return 0.0
    # internal-power cap from SoC headroom over this interval
    p_bat_cap_kw = headroom * spec.pack.energy_capacity / (dt / SECONDS_PER_HOUR)
    i_cap = min(spec.pack.i_max, p_bat_cap_kw * W_PER_KW / v)
    i_cap = min(i_cap, spec.pack.p_max * W_PER_KW / v)
    if i_cap <= 0:
        return 0.0
    return module_power_balance(spec, i_cap, soc, u).p_mod


def current_for_output(
    spec: ModuleSpec,
    soc: float,
    p_mod_target: float,
    u: int,
    dt: float,
) -> float:
    """Current magnitude (A) that makes the module deliver p_mod_target (kW).

    Inverts the power balance including losses; the result is capped at the
    current, power and SoC-headroom limits, so the realized output can fall
    short of the target. Returns 0 when the target is not viable (e.g. a
    charge target below the fixed switching overhead).
    """
    if p_mod_target <= 0:
        return 0.0
    v = ocv(spec.pack, soc)
    sw = switching_loss(spec, 1.0)  # p_dt scales linearly: per-amp coefficient
    dt_coef = sw.p_dt
    fixed = switching_loss(spec, 0.0).total
    r = spec.r_total
    target_w = p_mod_target * W_PER_KW

    if u == 1:
        # v*i - r*i² - dt_coef*i - fixed = target  →  smaller root
        b = v - dt_coef
        disc = b * b - 4.0 * r * (fixed + target_w)
        if disc < 0:
            i = spec.pack.i_max  # target beyond deliverable peak
        else:
            i = (b - math.sqrt(disc)) / (2.0 * r)
    else:
        # v*i + r*i² + dt_coef*i + fixed = target  →  positive root
        if target_w <= fixed:
            return 0.0
        b = v + dt_coef
        disc = b * b + 4.0 * r * (target_w - fixed)
        i = (-b + math.sqrt(disc)) / (2.0 * r)

    if i <= 0:
        return 0.0
    headroom = (soc - spec.pack.soc_min) if u == 1 else (spec.pack.soc_max - soc)
    p_bat_cap_kw = max(headroom, 0.0) * spec.pack.energy_capacity / (dt / SECONDS_PER_HOUR)
    i_cap = min(
        spec.pack.i_max,
        p_bat_cap_kw * W_PER_KW / v,
        spec.pack.p_max * W_PER_KW / v,
    )
    return min(i, max(i_cap, 0.0))
