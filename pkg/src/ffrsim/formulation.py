"""Horizon optimization problem assembly in solver-neutral form.

One instance covers a fleet over H intervals. Per module and interval the
continuous variables are current, internal and external power, the four
direction-gated loss terms and the absolute-value substitute for the open
half-cycle depth; the only binaries are the activation flags. Direction is
data (fixed per interval from the sign of the predicted signal), the OCV is
frozen at the horizon-start SoC, and the aging derivative is Taylor-
linearized, so the continuous relaxation is a convex QCP: linear objective,
linear rows, plus one single-variable quadratic inequality per module and
interval (conduction loss).

Powers in kW, currents in A, energies in kWh throughout the instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ffrsim import aging as ag
from ffrsim import electrical as el
from ffrsim.regd import regd_to_power

SECONDS_PER_HOUR = 3600.0
W_PER_KW = 1000.0

VAR_KINDS = (
    "i_bat", "p_bat", "p_mod",
    "con_pos", "con_neg", "sw_pos", "sw_neg",
    "omega", "alpha",
)


@dataclass(frozen=True)
class Prices:
    """Cost coefficients of the objective ($/kWh for the two energy prices)."""

    pi_loss: float = 0.05
    pi_reg: float = 10.0
    pi_deg: float = 1.0

    def __post_init__(self):
        if self.pi_loss < 0 or self.pi_reg < 0 or self.pi_deg < 0:
            raise ValueError("prices must be nonnegative")


@dataclass(frozen=True)
class QuadConstraint:
    """quad_coef * x[var]**2 + sum(coef * x[idx]) <= rhs."""

    var: int
    quad_coef: float
    lin_idx: np.ndarray
    lin_coef: np.ndarray
    rhs: float


@dataclass
class ProblemInstance:
    """One horizon's variables, constraints and objective."""

    var_names: list[str]
    lb: np.ndarray
    ub: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    quads: list[QuadConstraint]
    c: np.ndarray
    obj_const: float
    binary_idx: list[int]
    # objective split for reporting: loss / penalty / aging
    c_loss: np.ndarray = None  # type: ignore[assignment]
    c_penalty: np.ndarray = None  # type: ignore[assignment]
    c_aging: np.ndarray = None  # type: ignore[assignment]
    penalty_const: float = 0.0
    aging_const: float = 0.0
    big_m: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def idx(self, kind: str, module: int, t: int) -> int:
        return self.meta["index"][(kind, module, t)]

    def value(self, x: np.ndarray, kind: str, module: int, t: int) -> float:
        return float(x[self.idx(kind, module, t)])

    def objective_terms(self, x: np.ndarray) -> dict:
        """Recompute the objective split from a variable assignment."""
        return {
            "loss": float(self.c_loss @ x),
            "penalty": float(self.c_penalty @ x) + self.penalty_const,
            "aging": float(self.c_aging @ x) + self.aging_const,
        }

    def to_json_dict(self) -> dict:
        """Structured dump for external cross-checks."""
        a_eq = self.a_eq.tocoo()
        a_ub = self.a_ub.tocoo()
        return {
            "variables": [
                {"name": n, "lb": float(l), "ub": float(u), "cost": float(ci)}
                for n, l, u, ci in zip(self.var_names, self.lb, self.ub, self.c)
            ],
            "objective_constant": self.obj_const,
            "binary": [self.var_names[j] for j in self.binary_idx],
            "equalities": _rows_to_json(a_eq, self.b_eq, self.var_names),
            "inequalities": _rows_to_json(a_ub, self.b_ub, self.var_names),
            "quadratics": [
                {
                    "var": self.var_names[q.var],
                    "quad_coef": q.quad_coef,
                    "linear": {
                        self.var_names[j]: float(cc)
                        for j, cc in zip(q.lin_idx, q.lin_coef)
                    },
                    "rhs": q.rhs,
                }
                for q in self.quads
            ],
            "big_m": self.big_m,
        }

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)


def _rows_to_json(coo, rhs, names) -> list[dict]:
    rows: list[dict] = [{"terms": {}, "rhs": float(r)} for r in rhs]
    for r, cidx, v in zip(coo.row, coo.col, coo.data):
        rows[r]["terms"][names[cidx]] = float(v)
    return rows


class _Builder:
    def __init__(self, n_vars_hint: int = 0):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.eq_rows: list[tuple[list[int], list[float], float]] = []
        self.ub_rows: list[tuple[list[int], list[float], float]] = []
        self.quads: list[QuadConstraint] = []

    def var(self, name: str, lb: float, ub: float) -> int:
        self.names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        return len(self.names) - 1

    def eq(self, idx: list[int], coef: list[float], rhs: float) -> None:
        self.eq_rows.append((idx, coef, rhs))

    def le(self, idx: list[int], coef: list[float], rhs: float) -> None:
        self.ub_rows.append((idx, coef, rhs))

    def quad(self, var: int, qc: float, idx: list[int], coef: list[float], rhs: float):
        self.quads.append(
            QuadConstraint(
                var=var,
                quad_coef=qc,
                lin_idx=np.asarray(idx, dtype=np.int64),
                lin_coef=np.asarray(coef, dtype=np.float64),
                rhs=rhs,
            )
        )

    def matrices(self) -> tuple:
        n = len(self.names)

        def pack(rows):
            data, ri, ci, rhs = [], [], [], []
            for r, (idx, coef, b) in enumerate(rows):
                ri.extend([r] * len(idx))
                ci.extend(idx)
                data.extend(coef)
                rhs.append(b)
            mat = sp.csr_matrix(
                (data, (ri, ci)), shape=(len(rows), n), dtype=np.float64
            )
            return mat, np.asarray(rhs, dtype=np.float64)

        a_eq, b_eq = pack(self.eq_rows)
        a_ub, b_ub = pack(self.ub_rows)
        return a_eq, b_eq, a_ub, b_ub


def build_realtime_problem(
    fleet: Sequence[el.ModuleSpec],
    states: Sequence[el.ModuleState],
    predicted_regd: Sequence[float],
    prices: Prices,
    c_bid: float,
    dt: float,
    prev_direction: int | None = None,
) -> ProblemInstance:
    """Assemble the horizon problem for the predicted signal values.

    Direction per interval comes from the sign of the predicted signal
    (zero counts as discharge with zero demand); delivered system power is
    capped at the demand magnitude so shortfall is the only mismatch. The
    aging term uses the open half cycle's anchor while the predicted
    direction continues it, and the flat fresh-half-cycle rate from the
    first predicted flip onward. prev_direction is the realized direction
    of the interval before the horizon (defaults to the first predicted one).
    """
    if len(fleet) == 0:
        raise ValueError("fleet must be non-empty")
    if len(predicted_regd) == 0:
        raise ValueError("horizon must cover at least one interval")
    if len(states) != len(fleet):
        raise ValueError("need one state per module")

    horizon = len(predicted_regd)
    dt_h = dt / SECONDS_PER_HOUR
    demand = np.zeros(horizon)
    u = np.zeros(horizon, dtype=np.int64)
    for t, r in enumerate(predicted_regd):
        p, ut = regd_to_power(float(r), c_bid)
        demand[t] = abs(p)
        u[t] = ut

    # intervals still on the open half cycle: direction unchanged since entry
    dir0 = prev_direction if prev_direction is not None else int(u[0])
    continuing = np.zeros(horizon, dtype=bool)
    for t in range(horizon):
        if int(u[t]) != dir0:
            break
        continuing[t] = True

    b = _Builder()
    index: dict[tuple, int] = {}
    binary_idx: list[int] = []
    big_m: dict = {}

    n_mod = len(fleet)
    per_module = []
    for m, (spec, state) in enumerate(zip(fleet, states)):
        v = el.ocv(spec.pack, state.soc)
        sw_fixed = el.switching_loss(spec, 0.0).total
        dt_coef = el.switching_loss(spec, 1.0).p_dt  # W per A
        r_tot = spec.r_total
        i_max = spec.pack.i_max
        i_min = spec.pack.i_min
        m_con = i_max * i_max * r_tot / W_PER_KW
        m_sw = (sw_fixed + dt_coef * i_max) / W_PER_KW
        p_bat_ub = v * i_max / W_PER_KW
        # physical bounds must not exceed their gate values
        assert i_max * i_max * r_tot / W_PER_KW <= m_con + 1e-9
        assert (sw_fixed + dt_coef * i_max) / W_PER_KW <= m_sw + 1e-9
        big_m[spec.id] = {"conduction_kw": m_con, "switching_kw": m_sw, "current_a": i_max}
        anchor = state.tracker.anchor if state.tracker is not None else state.soc
        per_module.append(
            dict(
                spec=spec, state=state, v=v, sw_fixed=sw_fixed, dt_coef=dt_coef,
                r_tot=r_tot, i_max=i_max, i_min=i_min, m_con=m_con, m_sw=m_sw,
                p_bat_ub=p_bat_ub, anchor=anchor,
                soc_coef=dt_h / spec.pack.energy_capacity,
            )
        )

    for m, pm in enumerate(per_module):
        spec = pm["spec"]
        soc0 = pm["state"].soc
        for t in range(horizon):
            ut = int(u[t])
            tag = f"[{spec.id},{t}]"
            loss_max = pm["m_con"] + pm["m_sw"]
            p_mod_ub = pm["p_bat_ub"] + (0.0 if ut == 1 else loss_max)
            omega_lb = abs(soc0 - pm["anchor"]) if t == 0 else 0.0
            index[("i_bat", m, t)] = b.var("i_bat" + tag, 0.0, pm["i_max"])
            index[("p_bat", m, t)] = b.var("p_bat" + tag, 0.0, pm["p_bat_ub"])
            index[("p_mod", m, t)] = b.var("p_mod" + tag, 0.0, p_mod_ub)
            index[("con_pos", m, t)] = b.var("con_pos" + tag, 0.0, pm["m_con"] * ut)
            index[("con_neg", m, t)] = b.var("con_neg" + tag, 0.0, pm["m_con"] * (1 - ut))
            index[("sw_pos", m, t)] = b.var("sw_pos" + tag, 0.0, pm["m_sw"] * ut)
            index[("sw_neg", m, t)] = b.var("sw_neg" + tag, 0.0, pm["m_sw"] * (1 - ut))
            index[("omega", m, t)] = b.var("omega" + tag, omega_lb, 2.0)
            ja = b.var("alpha" + tag, 0.0, 1.0)
            index[("alpha", m, t)] = ja
            binary_idx.append(ja)

    def jx(kind, m, t):
        return index[(kind, m, t)]

    n = len(b.names)
    c_loss = np.zeros(n)
    c_penalty = np.zeros(n)
    c_aging = np.zeros(n)
    penalty_const = 0.0
    aging_const = 0.0

    for m, pm in enumerate(per_module):
        spec = pm["spec"]
        params: ag.AgingParams = spec.aging
        soc0 = pm["state"].soc
        coef = pm["soc_coef"]
        upsilon0 = abs(soc0 - pm["anchor"])
        taylor_base = ag.taylor_omega_prime(params, upsilon0, 0.0)
        taylor_slope = (
            ag.taylor_omega_prime(params, upsilon0, 1.0) - taylor_base
        )
        for t in range(horizon):
            ut = int(u[t])
            ji = jx("i_bat", m, t)
            jpb = jx("p_bat", m, t)
            jpm = jx("p_mod", m, t)
            jcp, jcn = jx("con_pos", m, t), jx("con_neg", m, t)
            jsp, jsn = jx("sw_pos", m, t), jx("sw_neg", m, t)
            jo = jx("omega", m, t)
            ja = jx("alpha", m, t)

            # power balance: p_bat = p_mod + con_pos - con_neg + sw_pos - sw_neg
            b.eq(
                [jpb, jpm, jcp, jcn, jsp, jsn],
                [1.0, -1.0, -1.0, 1.0, -1.0, 1.0],
                0.0,
            )
            # frozen-OCV current link: p_bat = v * i / 1000
            b.eq([jpb, ji], [1.0, -pm["v"] / W_PER_KW], 0.0)
            # switching loss: sw_pos + sw_neg = fixed*alpha + dt_coef*i
            b.eq(
                [jsp, jsn, ja, ji],
                [1.0, 1.0, -pm["sw_fixed"] / W_PER_KW, -pm["dt_coef"] / W_PER_KW],
                0.0,
            )
            # activation gating of the current
            b.le([ji, ja], [1.0, -pm["i_max"]], 0.0)
            if pm["i_min"] > 0:
                b.le([ji, ja], [-1.0, pm["i_min"]], 0.0)
            # conduction loss (quadratic, convex)
            b.quad(ji, pm["r_tot"] / W_PER_KW, [jcp, jcn], [-1.0, -1.0], 0.0)

            # SoC band at end of interval t (prefix sum over p_bat)
            pidx = [jx("p_bat", m, tau) for tau in range(t + 1)]
            signs = [(-coef if int(u[tau]) == 1 else coef) for tau in range(t + 1)]
            b.le(pidx, [-s for s in signs], soc0 - spec.pack.soc_min)
            b.le(pidx, list(signs), spec.pack.soc_max - soc0)

            # open-cycle depth substitute: omega >= |soc[t-1] - anchor|
            if t >= 1:
                pprev = [jx("p_bat", m, tau) for tau in range(t)]
                sprev = [(-coef if int(u[tau]) == 1 else coef) for tau in range(t)]
                b.le(pprev + [jo], sprev + [-1.0], pm["anchor"] - soc0)
                b.le(pprev + [jo], [-s for s in sprev] + [-1.0], soc0 - pm["anchor"])

            # objective pieces
            for j in (jcp, jcn, jsp, jsn):
                c_loss[j] += prices.pi_loss * dt_h
            c_penalty[jpm] -= prices.pi_reg * dt_h
            weight = prices.pi_deg * 0.5 * dt_h * params.unit_capacity_cost
            if continuing[t]:
                c_aging[jo] += weight * taylor_slope
                aging_const += weight * taylor_base
            else:
                aging_const += weight * params.xi
            _ = ut

    for t in range(horizon):
        jmods = [jx("p_mod", m, t) for m in range(n_mod)]
        b.le(jmods, [1.0] * n_mod, float(demand[t]))
        penalty_const += prices.pi_reg * dt_h * float(demand[t])

    a_eq, b_eq, a_ub, b_ub = b.matrices()
    return ProblemInstance(
        var_names=b.names,
        lb=np.asarray(b.lb),
        ub=np.asarray(b.ub),
        a_eq=a_eq,
        b_eq=b_eq,
        a_ub=a_ub,
        b_ub=b_ub,
        quads=b.quads,
        c=c_loss + c_penalty + c_aging,
        obj_const=penalty_const + aging_const,
        binary_idx=binary_idx,
        c_loss=c_loss,
        c_penalty=c_penalty,
        c_aging=c_aging,
        penalty_const=penalty_const,
        aging_const=aging_const,
        big_m=big_m,
        meta={
            "index": index,
            "n_modules": n_mod,
            "horizon": horizon,
            "module_ids": [s.id for s in fleet],
            "u": u,
            "demand_kw": demand,
            "dt": dt,
            "binary_labels": {
                index[("alpha", m, t)]: (fleet[m].id, t)
                for m in range(n_mod)
                for t in range(horizon)
            },
        },
    )


def build_offline_problem(
    fleet: Sequence[el.ModuleSpec],
    r: float,
    c_bid: float,
    prices: Prices,
    dt: float,
    reference_soc: float = 0.5,
) -> ProblemInstance:
    """Single-interval allocation problem at a fixed signal value.

    Same constraint set as the realtime horizon; the objective keeps only
    the loss and shortfall terms (a single operating point accrues no
    incremental cycle aging).
    """
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"signal value {r} outside [-1, 1]")
    states = [
        el.ModuleState(soc=reference_soc, tracker=ag.CycleTracker.seeded(reference_soc))
        for _ in fleet
    ]
    offline_prices = Prices(pi_loss=prices.pi_loss, pi_reg=prices.pi_reg, pi_deg=0.0)
    inst = build_realtime_problem(fleet, states, [r], offline_prices, c_bid, dt)
    inst.meta["offline_r"] = float(r)
    return inst


def fix_activations(problem: ProblemInstance, alpha) -> ProblemInstance:
    """Pin every activation binary to a 0/1 constant.

    alpha is an (n_modules, horizon) array or a {(module_id, t): value}
    mapping covering every pair; the result has no binary variables left.
    """
    n_mod = problem.meta["n_modules"]
    horizon = problem.meta["horizon"]
    ids = problem.meta["module_ids"]
    if isinstance(alpha, dict):
        missing = [
            (ids[m], t)
            for m in range(n_mod)
            for t in range(horizon)
            if (ids[m], t) not in alpha
        ]
        if missing:
            raise ValueError(f"activation assignment missing indices: {missing}")
        arr = np.array(
            [[alpha[(ids[m], t)] for t in range(horizon)] for m in range(n_mod)],
            dtype=np.float64,
        )
    else:
        arr = np.asarray(alpha, dtype=np.float64)
        if arr.shape != (n_mod, horizon):
            raise ValueError(
                f"activation array shape {arr.shape} != ({n_mod}, {horizon})"
            )
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("activation values must be 0 or 1")

    lb = problem.lb.copy()
    ub = problem.ub.copy()
    for m in range(n_mod):
        for t in range(horizon):
            j = problem.idx("alpha", m, t)
            lb[j] = arr[m, t]
            ub[j] = arr[m, t]
    fixed = ProblemInstance(
        var_names=problem.var_names,
        lb=lb,
        ub=ub,
        a_eq=problem.a_eq,
        b_eq=problem.b_eq,
        a_ub=problem.a_ub,
        b_ub=problem.b_ub,
        quads=problem.quads,
        c=problem.c,
        obj_const=problem.obj_const,
        binary_idx=[],
        c_loss=problem.c_loss,
        c_penalty=problem.c_penalty,
        c_aging=problem.c_aging,
        penalty_const=problem.penalty_const,
        aging_const=problem.aging_const,
        big_m=problem.big_m,
        meta=dict(problem.meta),
    )
    return fixed
