"""Scenario configuration: JSON schema, fleet construction, fixtures.

A fleet block carries the published module data (nominal power/energy, cycle
life, cell voltage, nominal current, operation efficiency, initial SoC) plus
a converter block and an aging block. The electrical model is derived from
it at load time:

* series cell count = nominal power / (nominal current * cell voltage);
* pack OCV line: k0 = 0.9 and k1 = 0.2 of nominal voltage per cell, so the
  mid-band OCV equals the nominal pack voltage;
* pack resistance is calibrated so the one-way efficiency at nominal
  current and mid SoC matches the module's published operation efficiency
  after subtracting the converter losses.

Converter constants and cost/exponent values in the bundled fixture are
documented placeholders; the published fleet data is authoritative.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

from ffrsim.aging import AgingParams, kappa1_from_cycle_life
from ffrsim.electrical import ConverterParams, ModuleSpec, PackParams
from ffrsim.formulation import Prices
from ffrsim.scheduler import MarketConfig, PredictorConfig, PriorityConfig
from ffrsim.solver import SolverConfig


@dataclass(frozen=True)
class ModuleRow:
    """One fleet entry in the published-data schema."""

    id: str
    nominal_power_kw: float
    energy_kwh: float
    cycle_life: int
    cell_voltage_v: float
    nominal_current_a: float
    operation_efficiency: float
    initial_soc: float
    converter: dict
    aging: dict
    soc_min: float = 0.1
    soc_max: float = 0.9
    i_min_a: float = 0.0


@dataclass(frozen=True)
class SignalConfig:
    file: str | None = None
    synth: dict | None = None

    def __post_init__(self):
        if (self.file is None) == (self.synth is None):
            raise ValueError("signal config needs exactly one of 'file' or 'synth'")


@dataclass
class ScenarioConfig:
    fleet: list[ModuleRow]
    market: MarketConfig
    signal: SignalConfig
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    priority: PriorityConfig = field(default_factory=PriorityConfig)
    method: str = "performance_aware"
    lookup_step: float = 0.005
    seed: int = 1

    def to_dict(self) -> dict:
        return {
            "fleet": [asdict(row) for row in self.fleet],
            "market": {
                "c_bid_kw": self.market.c_bid,
                "dt_s": self.market.dt,
                "horizon": self.market.horizon,
                "prices": asdict(self.market.prices),
            },
            "signal": {"file": self.signal.file, "synth": self.signal.synth},
            "predictor": {
                "order": list(self.predictor.order),
                "window": self.predictor.window,
                "refit_cadence": self.predictor.refit_cadence,
            },
            "solver": asdict(self.solver),
            "priority": asdict(self.priority),
            "method": self.method,
            "lookup_step": self.lookup_step,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        market_raw = dict(raw["market"])
        prices = Prices(**market_raw.pop("prices", {}))
        market = MarketConfig(
            c_bid=float(market_raw["c_bid_kw"]),
            dt=float(market_raw.get("dt_s", 2.0)),
            horizon=int(market_raw.get("horizon", 15)),
            prices=prices,
        )
        pred_raw = dict(raw.get("predictor", {}))
        if "order" in pred_raw:
            pred_raw["order"] = tuple(pred_raw["order"])
        predictor = PredictorConfig(**pred_raw)
        return cls(
            fleet=[ModuleRow(**row) for row in raw["fleet"]],
            market=market,
            signal=SignalConfig(**raw["signal"]),
            predictor=predictor,
            solver=SolverConfig(**raw.get("solver", {})),
            priority=PriorityConfig(**raw.get("priority", {})),
            method=raw.get("method", "performance_aware"),
            lookup_step=float(raw.get("lookup_step", 0.005)),
            seed=int(raw.get("seed", 1)),
        )

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def build_module(row: ModuleRow) -> ModuleSpec:
    """Derive the electrical model of one module from its published data."""
    conv = ConverterParams(**row.converter)
    p_nom_w = row.nominal_power_kw * 1000.0
    n_cells = round(p_nom_w / (row.nominal_current_a * row.cell_voltage_v))
    if n_cells < 1:
        raise ValueError(f"module {row.id}: implausible cell count {n_cells}")
    k0 = n_cells * 0.9 * row.cell_voltage_v
    k1 = n_cells * 0.2 * row.cell_voltage_v
    v_mid = k0 + 0.5 * k1

    transition = conv.t_r + conv.t_f
    sw_fixed = (
        0.5 * (conv.v_dc + conv.v_ds) * conv.f_sw * transition
        + conv.q_rr * conv.v_dc * conv.f_sw
        + conv.c_oss * conv.v_dc**2 * conv.f_sw
        + (conv.q_g1 + conv.q_g2) * conv.v_gs * conv.f_sw
    )
    dt_coef = conv.v_ds * conv.f_sw * transition

    i_nom = row.nominal_current_a
    if not 0.0 < row.operation_efficiency < 1.0:
        raise ValueError(f"module {row.id}: efficiency must be a fraction in (0, 1)")
    loss_target = (1.0 - row.operation_efficiency) * v_mid * i_nom
    conduction_target = loss_target - sw_fixed - dt_coef * i_nom
    if conduction_target <= 0:
        raise ValueError(
            f"module {row.id}: efficiency {row.operation_efficiency} leaves no "
            f"conduction-loss budget below the converter losses"
        )
    r_total = conduction_target / (i_nom * i_nom)
    r_bat = r_total - conv.r_on - conv.dcr
    if r_bat <= 0:
        raise ValueError(
            f"module {row.id}: calibrated pack resistance nonpositive "
            f"({r_bat:.6f} ohm); converter resistances too large"
        )

    aging_raw = dict(row.aging)
    kappa1 = aging_raw.pop("kappa1", None)
    if kappa1 is None:
        kappa1 = kappa1_from_cycle_life(1.0, row.cycle_life)
    aging = AgingParams(
        kappa1=kappa1,
        n_cycles_100=row.cycle_life,
        **aging_raw,
    )
    pack = PackParams(
        r_bat=r_bat,
        energy_capacity=row.energy_kwh,
        k0=k0,
        k1=k1,
        soc_min=row.soc_min,
        soc_max=row.soc_max,
        i_min=row.i_min_a,
        i_max=row.nominal_current_a,
        p_max=row.nominal_power_kw,
    )
    return ModuleSpec(id=row.id, pack=pack, converter=conv, aging=aging)


def build_fleet(config: ScenarioConfig) -> tuple[list[ModuleSpec], list[float]]:
    ids = [row.id for row in config.fleet]
    if len(set(ids)) != len(ids):
        raise ValueError("module ids must be unique within a fleet")
    specs = [build_module(row) for row in config.fleet]
    socs = [row.initial_soc for row in config.fleet]
    return specs, socs


def load_fixture(name: str = "m5bat") -> ScenarioConfig:
    """Bundled scenario (the ten-module heterogeneous test fleet)."""
    path = resources.files("ffrsim.fixtures").joinpath(f"{name}.json")
    with path.open(encoding="utf-8") as fh:
        return ScenarioConfig.from_dict(json.load(fh))
