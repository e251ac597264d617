"""
Deterministic, mass-conservative surrogate of a virtual agricultural landscape.

Provides:
- LandscapeConfig / RateConstants: landscape layout, simulation horizon and
  surrogate rate constants (all explicit, all overridable).
- FactorAssignment: one physical value per factor A-K.
- simulate(assignment, config): daily simulation, spin-up discarded, returning
  outlet series and monthly per-pixel maps (RunOutput).
- mass_balance(output, assignment, config): yearly nitrogen and water budgets.
- write_run_output / read_run_output: RunOutput in the tensor-store format.

This is a test double with the compartment structure of a landscape nitrogen
model (surface layer HS, intermediate layer HI, groundwater, outlet), not a
process-faithful model. Process equations:

- Fertilization on crop calendar dates, split by fertilizer type into NH4,
  NO3 and organic N, scaled by the yearly amount.
- Mineralization organic -> NH4; nitrification NH4 -> NO3 with a gaseous
  fraction lost as N2O and NOx; NH3 volatilization from the top sublayer.
- Seasonal plant uptake of NH4 and NO3 (crops and, reduced, unmanaged land).
- Vertical percolation through sublayers of thickness ~B: macropore water
  drains each day, micropore water is retained; dissolved N moves with it.
- Groundwater lateral flow to the downslope neighbour with transmissivity
  T(z) = C * exp(-z / D), z the saturation deficit depth; the lowest row
  drains to the outlet. Groundwater above capacity exfiltrates to the outlet.

HS/HI columns depend only on land use, so they are integrated once per land-use
class; groundwater is integrated per pixel.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.common.json_util import read_json, write_json

from .errors import NonFiniteState
from .factors import FACTOR_TABLE, FERTILIZER_TYPES, FactorSpec, by_id
from .forcing import DAYS_PER_YEAR, MONTH_OF_DOY, Forcing
from .tensor_store import (
    LAND_USES,
    FARM,
    MAIZE,
    UNMANAGED,
    WHEAT,
    Grid,
    OutcomeTensor,
    TimeAxis,
    read_tensor,
    resample_to_reference,
    write_tensor,
)

logger = logging.getLogger(__name__)


# full-scale layout, hectares
REFERENCE_AREA_HA = 300.0
CROP_AREA_HA = 125.0
FARM_SET_AREA_HA = 1.0
N_FARM_SETS = 2
UNMANAGED_AREA_HA = 48.0
N_UNMANAGED_PLOTS = 4

UNMANAGED_ANCHORS = ((0.10, 0.10), (0.60, 0.30), (0.15, 0.55), (0.65, 0.80))
FARM_ANCHORS = ((0.45, 0.20), (0.45, 0.70))

# day of year -> share of the yearly amount
FERTILIZATION_CALENDAR = {
    MAIZE: ((105, 0.5), (135, 0.5)),
    WHEAT: ((60, 0.5), (84, 0.5)),
}
CROP_AMOUNT_FACTOR = {MAIZE: 1.1, WHEAT: 0.9}

# (NH4, NO3, organic) shares per fertilizer type
FERTILIZER_SPLIT = {
    "OL": (0.6, 0.0, 0.4),
    "OF": (0.2, 0.0, 0.8),
    "INO": (0.3, 0.7, 0.0),
}

# yearly uptake demand kg N/ha, day-of-year peak, spread (days)
UPTAKE_DEMAND = {
    MAIZE: (160.0, 200, 30.0),
    WHEAT: (140.0, 130, 30.0),
    UNMANAGED: (40.0, 160, 50.0),
}

FACTOR_FIELDS = {
    "A": "mesh_width",
    "B": "soil_layer_thickness",
    "C": "transmissivity",
    "D": "decay_depth",
    "E": "hs_depth",
    "F": "hs_porosity",
    "G": "micro_macro_ratio",
    "H": "hi_depth",
    "I": "hi_micro_ratio",
    "J": "fertilizer_type",
    "K": "fertilizer_amount",
}


@dataclass(frozen=True)
class OutcomeInfo:
    kind: str  # outflow | flux | state
    unit: str
    aggregation: str  # sum (extensive) | mean (intensive)
    description: str


OUTCOMES: Dict[str, OutcomeInfo] = {
    "discharge": OutcomeInfo("outflow", "m3/day", "sum", "water discharge at the outlet"),
    "nh4_conc": OutcomeInfo("outflow", "mg N/L", "mean", "NH4 concentration at the outlet"),
    "no3_conc": OutcomeInfo("outflow", "mg N/L", "mean", "NO3 concentration at the outlet"),
    "nh4_load": OutcomeInfo("outflow", "kg N/day", "sum", "NH4 load at the outlet"),
    "no3_load": OutcomeInfo("outflow", "kg N/day", "sum", "NO3 load at the outlet"),
    "evapotranspiration": OutcomeInfo("flux", "mm/month", "mean", "evapo-transpiration"),
    "nh3_emission": OutcomeInfo("flux", "kg N/ha/month", "sum", "NH3 volatilization"),
    "nox_emission": OutcomeInfo("flux", "kg N/ha/month", "sum", "NOx emission from nitrification"),
    "n2o_emission": OutcomeInfo("flux", "kg N/ha/month", "sum", "N2O emission from nitrification"),
    "mineralization": OutcomeInfo("flux", "kg N/ha/month", "sum", "organic N mineralized to NH4"),
    "nitrification": OutcomeInfo("flux", "kg N/ha/month", "sum", "NH4 nitrified"),
    "nh4_uptake": OutcomeInfo("flux", "kg N/ha/month", "sum", "NH4 plant uptake"),
    "no3_uptake": OutcomeInfo("flux", "kg N/ha/month", "sum", "NO3 plant uptake"),
    "leaching": OutcomeInfo("flux", "kg N/ha/month", "sum", "dissolved N leaving the intermediate layer"),
    "hs_nh4": OutcomeInfo("state", "kg N/ha", "mean", "NH4 in the surface layer"),
    "hs_no3": OutcomeInfo("state", "kg N/ha", "mean", "NO3 in the surface layer"),
    "hi_nh4": OutcomeInfo("state", "kg N/ha", "mean", "NH4 in the intermediate layer"),
    "hi_no3": OutcomeInfo("state", "kg N/ha", "mean", "NO3 in the intermediate layer"),
    "gw_depth": OutcomeInfo("state", "m", "mean", "water table depth below surface"),
    "gw_nh4_conc": OutcomeInfo("state", "mg N/L", "mean", "groundwater NH4 concentration"),
    "gw_no3_conc": OutcomeInfo("state", "mg N/L", "mean", "groundwater NO3 concentration"),
}

OUTFLOW_OUTCOMES = tuple(k for k, v in OUTCOMES.items() if v.kind == "outflow")
MAP_OUTCOMES = tuple(k for k, v in OUTCOMES.items() if v.kind != "outflow")
DEFAULT_OUTCOMES = OUTFLOW_OUTCOMES + (
    "evapotranspiration",
    "nh3_emission",
    "nox_emission",
    "n2o_emission",
    "mineralization",
    "nh4_uptake",
    "leaching",
    "hs_nh4",
    "hs_no3",
    "gw_depth",
    "gw_nh4_conc",
    "gw_no3_conc",
)


@dataclass(frozen=True)
class RateConstants:
    """Surrogate-only process constants (per day unless noted)."""

    mineralization: float = 0.01
    nitrification: float = 0.05
    volatilization: float = 0.1
    gaseous_fraction: float = 0.02
    n2o_share: float = 0.4
    q10: float = 2.0
    reference_temp: float = 15.0
    uptake_rate: float = 0.1
    nh4_uptake_share: float = 0.3
    gw_uptake_share: float = 0.2
    root_depth: float = 1.6
    nh4_mobility: float = 0.1
    leaching_rate: float = 1.0
    pet_coefficient: float = 1.2e-4  # m/day/degC
    lateral_cap: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"rate constant {f.name} must be finite and non-negative, got {value}")
        for name in ("gaseous_fraction", "n2o_share", "nh4_uptake_share", "gw_uptake_share",
                     "nh4_mobility", "leaching_rate", "lateral_cap", "volatilization", "uptake_rate"):
            if getattr(self, name) > 1:
                raise ValueError(f"rate constant {name} is a fraction and must be <= 1")

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "RateConstants":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown rate constants: {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class LandscapeConfig:
    """Landscape layout and horizon.

    The land-use map is defined on the reference grid (n_x_ref x n_y_ref pixels
    of reference_mesh metres); a run at mesh width A refines it by
    reference_mesh / A so land-use areas are identical at every resolution.
    Row 0 is the upslope edge; the outlet collects the last row.
    """

    n_x_ref: int = 20
    n_y_ref: int = 20
    reference_mesh: float = 50.0
    slope_drop: float = 50.0
    sim_years: int = 5
    spinup_years: int = 2
    plot_cells: int = 5
    gw_thickness: float = 2.0
    gw_porosity: float = 0.3
    initial_organic_n: float = 100.0
    fertilizer_scale: float = 1.0
    forcing_seed: int = 2007
    forcing_path: Optional[str] = None
    rates: RateConstants = field(default_factory=RateConstants)

    def __post_init__(self):
        if self.n_x_ref < 2 or self.n_y_ref < 2:
            raise ValueError("reference grid needs at least 2 x 2 pixels")
        if self.reference_mesh <= 0 or self.slope_drop < 0:
            raise ValueError("reference_mesh must be positive and slope_drop non-negative")
        if not 0 <= self.spinup_years < self.sim_years:
            raise ValueError("spinup_years must lie in 0..sim_years-1")
        if self.plot_cells < 1:
            raise ValueError("plot_cells must be positive")
        if self.gw_thickness <= 0 or not 0 < self.gw_porosity <= 1:
            raise ValueError("groundwater thickness must be positive and porosity in (0, 1]")
        if self.initial_organic_n < 0 or self.fertilizer_scale < 0:
            raise ValueError("initial_organic_n and fertilizer_scale must be non-negative")

    @property
    def area_ha(self) -> float:
        return self.n_x_ref * self.n_y_ref * self.reference_mesh ** 2 / 1e4

    @property
    def domain_length(self) -> float:
        return self.n_y_ref * self.reference_mesh

    @property
    def slope(self) -> float:
        return self.slope_drop / self.domain_length

    @property
    def n_days(self) -> int:
        return self.sim_years * DAYS_PER_YEAR

    @property
    def spinup_days(self) -> int:
        return self.spinup_years * DAYS_PER_YEAR

    @property
    def retained_years(self) -> int:
        return self.sim_years - self.spinup_years

    def reference_land_use(self) -> np.ndarray:
        return build_land_use(self.n_x_ref, self.n_y_ref, self.plot_cells)

    def reference_grid(self) -> Grid:
        return Grid(self.reference_mesh, self.n_x_ref, self.n_y_ref, self.reference_land_use().ravel())

    def grid(self, mesh_width: float) -> Grid:
        ratio = self.reference_mesh / mesh_width
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9:
            raise ValueError(
                f"mesh width {mesh_width} must divide the reference mesh {self.reference_mesh}"
            )
        return self.reference_grid().refine(factor)

    def load_forcing(self) -> Forcing:
        if self.forcing_path:
            return Forcing.from_csv(self.forcing_path)
        return Forcing.synthetic(self.forcing_seed, years=self.sim_years)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["rates"] = asdict(self.rates)
        return data

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> "LandscapeConfig":
        data = dict(data or {})
        rates = RateConstants.from_dict(data.pop("rates", None))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown landscape settings: {', '.join(unknown)}")
        return cls(rates=rates, **data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "LandscapeConfig":
        return cls.from_dict(read_json(path))


def _fill_block(lu: np.ndarray, anchor: Tuple[float, float], count: int, code: int) -> None:
    """Place `count` cells of `code` in a compact block starting near `anchor`."""
    n_y, n_x = lu.shape
    side = max(1, int(np.ceil(np.sqrt(count))))
    x0 = min(int(anchor[0] * n_x), max(0, n_x - side))
    y0 = min(int(anchor[1] * n_y), max(0, n_y - side))
    placed = 0
    # block first, then any free cell scanning row-major from the anchor
    candidates = [(y, x) for y in range(y0, min(n_y, y0 + side)) for x in range(x0, min(n_x, x0 + side))]
    start = y0 * n_x + x0
    candidates += [divmod((start + i) % (n_x * n_y), n_x) for i in range(n_x * n_y)]
    for y, x in candidates:
        if placed == count:
            return
        if lu[y, x] < 0:
            lu[y, x] = code
            placed += 1
    if placed < count:
        raise ValueError("landscape grid too small for the requested land-use layout")


def build_land_use(n_x: int, n_y: int, plot_cells: int) -> np.ndarray:
    """Land-use map with full-scale proportions: two crops in a checkerboard of
    plots, two farm pixel sets and four scattered unmanaged plots."""
    n = n_x * n_y
    lu = np.full((n_y, n_x), -1, dtype=np.int8)
    n_unmanaged = int(round(n * UNMANAGED_AREA_HA / REFERENCE_AREA_HA))
    plot_sizes = [n_unmanaged // N_UNMANAGED_PLOTS + (1 if i < n_unmanaged % N_UNMANAGED_PLOTS else 0)
                  for i in range(N_UNMANAGED_PLOTS)]
    for anchor, size in zip(UNMANAGED_ANCHORS, plot_sizes):
        if size:
            _fill_block(lu, anchor, size, UNMANAGED)
    farm_size = max(1, int(round(n * FARM_SET_AREA_HA / REFERENCE_AREA_HA)))
    for anchor in FARM_ANCHORS[:N_FARM_SETS]:
        _fill_block(lu, anchor, farm_size, FARM)

    ys, xs = np.nonzero(lu < 0)
    lu[ys, xs] = np.where(((ys // plot_cells) + (xs // plot_cells)) % 2 == 0, MAIZE, WHEAT)

    # balance the crops to within one pixel, flipping from the bottom-right
    flat = lu.ravel()
    while True:
        n_maize = int(np.sum(flat == MAIZE))
        n_wheat = int(np.sum(flat == WHEAT))
        if abs(n_maize - n_wheat) <= 1:
            break
        major, minor = (MAIZE, WHEAT) if n_maize > n_wheat else (WHEAT, MAIZE)
        flat[np.flatnonzero(flat == major)[-1]] = minor
    return flat.reshape(n_y, n_x)


@dataclass(frozen=True)
class FactorAssignment:
    """One physical value per factor A-K."""

    mesh_width: float
    soil_layer_thickness: float
    transmissivity: float
    decay_depth: float
    hs_depth: float
    hs_porosity: float
    micro_macro_ratio: float
    hi_depth: float
    hi_micro_ratio: float
    fertilizer_type: str
    fertilizer_amount: float

    def value(self, factor_id: str):
        return getattr(self, FACTOR_FIELDS[factor_id])

    def values(self) -> Dict[str, object]:
        return {fid: self.value(fid) for fid in FACTOR_FIELDS}

    def validate(self, factors: Sequence[FactorSpec] = FACTOR_TABLE) -> None:
        lookup = by_id(factors)
        for fid, value in self.values().items():
            spec = lookup.get(fid)
            if spec is None:
                raise ValueError(f"no factor spec for {fid}")
            spec.code_of(value)
        if self.fertilizer_type not in FERTILIZER_TYPES:
            raise ValueError(f"unknown fertilizer type {self.fertilizer_type!r}")

    @classmethod
    def from_codes(
        cls,
        codes: Mapping[str, int],
        factors: Sequence[FactorSpec] = FACTOR_TABLE,
        default_code: int = 1,
    ) -> "FactorAssignment":
        """Map level codes to physical values; factors absent from `codes` take `default_code`."""
        lookup = by_id(factors)
        kwargs = {}
        for fid, name in FACTOR_FIELDS.items():
            code = int(codes.get(fid, default_code))
            kwargs[name] = lookup[fid].level(code)
        kwargs["fertilizer_type"] = str(kwargs["fertilizer_type"])
        for name, value in list(kwargs.items()):
            if name != "fertilizer_type":
                kwargs[name] = float(value)
        return cls(**kwargs)

    def with_values(self, **changes) -> "FactorAssignment":
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class YearBudget:
    year: int
    spin_up: bool
    fertilizer_input: float
    nh3: float
    nox: float
    n2o: float
    uptake_nh4: float
    uptake_no3: float
    outlet_nh4: float
    outlet_no3: float
    storage_start: float
    storage_end: float
    precipitation: float
    evapotranspiration: float
    discharge: float
    water_storage_start: float
    water_storage_end: float

    @property
    def n_exports(self) -> float:
        return (self.nh3 + self.nox + self.n2o + self.uptake_nh4 + self.uptake_no3
                + self.outlet_nh4 + self.outlet_no3)

    @property
    def water_exports(self) -> float:
        return self.evapotranspiration + self.discharge

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RunOutput:
    """Post-spin-up outcomes of one simulation.

    outflow: daily outlet series (retained days,).
    maps: monthly per-pixel series (retained months, n_pixels), row-major pixels.
    budget: one YearBudget per simulated year, spin-up included.
    storage_series: landscape N storage (kg) at the end of every simulated day.
    """

    assignment: FactorAssignment
    grid: Grid
    outflow: Dict[str, np.ndarray]
    maps: Dict[str, np.ndarray]
    budget: Tuple[YearBudget, ...]
    storage_series: np.ndarray
    spinup_years: int
    sim_years: int

    @property
    def retained_days(self) -> int:
        return (self.sim_years - self.spinup_years) * DAYS_PER_YEAR

    @property
    def retained_months(self) -> int:
        return (self.sim_years - self.spinup_years) * 12

    def total_exports(self, retained_only: bool = True) -> float:
        return float(sum(b.n_exports for b in self.budget if not (retained_only and b.spin_up)))

    def total_inputs(self, retained_only: bool = True) -> float:
        return float(sum(b.fertilizer_input for b in self.budget if not (retained_only and b.spin_up)))

    def on_grid(self, target_mesh: float) -> "RunOutput":
        """Maps block-averaged onto the nested grid of mesh target_mesh."""
        if self.grid.mesh_width == target_mesh:
            return self
        maps = {}
        target = self.grid
        for name, values in self.maps.items():
            maps[name], target = resample_to_reference(values, self.grid, target_mesh)
        return replace(self, grid=target, maps=maps)

    def to_tensors(self, design_checksum: Optional[str] = None) -> List[OutcomeTensor]:
        tensors = []
        daily = TimeAxis("daily", self.spinup_years * DAYS_PER_YEAR, self.retained_days)
        monthly = TimeAxis("monthly", self.spinup_years * 12, self.retained_months)
        for name, series in self.outflow.items():
            info = OUTCOMES[name]
            tensors.append(OutcomeTensor(name, series[None, :, None], daily, None, info.unit,
                                         info.aggregation, design_checksum))
        for name, values in self.maps.items():
            info = OUTCOMES[name]
            tensors.append(OutcomeTensor(name, values[None, :, :], monthly, self.grid, info.unit,
                                         info.aggregation, design_checksum))
        return tensors


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def _demand_table(rates: RateConstants) -> np.ndarray:
    """Daily uptake demand kg N/ha per land-use class and day of year."""
    doy = np.arange(DAYS_PER_YEAR)
    table = np.zeros((len(LAND_USES), DAYS_PER_YEAR))
    for cls, (annual, peak, spread) in UPTAKE_DEMAND.items():
        curve = np.exp(-0.5 * ((doy - peak) / spread) ** 2)
        table[cls] = annual * curve / curve.sum()
    return table


def _crop_coefficient_table() -> np.ndarray:
    doy = np.arange(DAYS_PER_YEAR)
    table = np.zeros((len(LAND_USES), DAYS_PER_YEAR))
    for cls in (MAIZE, WHEAT):
        _, peak, spread = UPTAKE_DEMAND[cls]
        table[cls] = 0.3 + 0.9 * np.exp(-0.5 * ((doy - peak) / (1.5 * spread)) ** 2)
    table[UNMANAGED] = 1.0
    return table


def fertilization_schedule(assignment: FactorAssignment, config: LandscapeConfig) -> Dict[int, np.ndarray]:
    """Day of year -> kg N/ha applied per land-use class."""
    schedule: Dict[int, np.ndarray] = {}
    amount = assignment.fertilizer_amount * config.fertilizer_scale
    for cls, events in FERTILIZATION_CALENDAR.items():
        for doy, share in events:
            per_class = schedule.setdefault(doy, np.zeros(len(LAND_USES)))
            per_class[cls] += amount * CROP_AMOUNT_FACTOR[cls] * share
    return schedule


def fertilizer_inputs(assignment: FactorAssignment, config: LandscapeConfig) -> float:
    """Landscape-total yearly fertilizer input, kg N."""
    grid = config.grid(assignment.mesh_width)
    class_ha = np.bincount(grid.land_use, minlength=len(LAND_USES)) * grid.pixel_area_ha
    return float(sum((per_class * class_ha).sum() for per_class in fertilization_schedule(assignment, config).values()))


def simulate(
    assignment: FactorAssignment,
    config: LandscapeConfig,
    forcing: Optional[Forcing] = None,
    factors: Optional[Sequence[FactorSpec]] = FACTOR_TABLE,
) -> RunOutput:
    """Run the surrogate landscape for config.sim_years at daily steps.

    Pass factors=None to skip level validation (diagnostic runs with
    off-design values).
    """
    if factors is not None:
        assignment.validate(factors)
    rates = config.rates
    if forcing is None:
        forcing = config.load_forcing()
    n_days = config.n_days
    if forcing.n_days < n_days:
        raise ValueError(f"forcing covers {forcing.n_days} days, simulation needs {n_days}")

    grid = config.grid(assignment.mesh_width)
    w = assignment.mesh_width
    cls_idx = grid.land_use.astype(np.intp)
    n_pix = grid.n_pixels
    pix_ha = grid.pixel_area_ha
    pix_m2 = w * w
    n_cls = len(LAND_USES)
    class_ha = np.bincount(cls_idx, minlength=n_cls) * pix_ha
    class_m2 = class_ha * 1e4
    total_m2 = n_pix * pix_m2

    # vertical discretization
    e_depth, h_depth, b = assignment.hs_depth, assignment.hi_depth, assignment.soil_layer_thickness
    n_hs = max(1, int(round(e_depth / b)))
    n_hi = max(1, int(round(h_depth / b)))
    thickness = np.concatenate([np.full(n_hs, e_depth / n_hs), np.full(n_hi, h_depth / n_hi)])
    ratio = assignment.micro_macro_ratio
    micro_hs = assignment.hs_porosity * ratio / (1.0 + ratio)
    macro = assignment.hs_porosity / (1.0 + ratio)
    micro_hi = assignment.hi_micro_ratio * micro_hs
    micro_cap = thickness * np.concatenate([np.full(n_hs, micro_hs), np.full(n_hi, micro_hi)])
    cap = micro_cap + thickness * macro

    smax = config.gw_thickness * config.gw_porosity
    phi = config.gw_porosity
    slope = config.slope
    transmissivity = assignment.transmissivity
    decay = assignment.decay_depth

    split = FERTILIZER_SPLIT[assignment.fertilizer_type]
    schedule = fertilization_schedule(assignment, config)
    demand = _demand_table(rates)
    kc = _crop_coefficient_table()
    pervious = np.array([1.0, 1.0, 0.0, 1.0])
    vegetated = np.array([True, True, False, True])
    veg_pix = vegetated[cls_idx]
    root_reach = rates.root_depth - e_depth - h_depth

    temp = forcing.temp_c[:n_days]
    rain_m = forcing.precip_mm[:n_days] / 1000.0
    f_temp = rates.q10 ** ((temp - rates.reference_temp) / 10.0)
    pet = rates.pet_coefficient * np.maximum(temp, 0.0)
    leach = rates.leaching_rate
    mob = rates.nh4_mobility
    up_rate = rates.uptake_rate
    nh4_share = rates.nh4_uptake_share
    gw_share = rates.gw_uptake_share

    # state
    water = np.zeros((n_cls, n_hs + n_hi))
    nh4 = np.zeros_like(water)
    no3 = np.zeros_like(water)
    organic = np.where(vegetated, config.initial_organic_n, 0.0)
    gw_water = np.zeros(n_pix)
    gw_nh4 = np.zeros(n_pix)
    gw_no3 = np.zeros(n_pix)

    def n_storage() -> float:
        column = ((organic + nh4.sum(axis=1) + no3.sum(axis=1)) * class_ha).sum()
        return float(column + (gw_nh4.sum() + gw_no3.sum()) * pix_ha)

    def water_storage() -> float:
        return float((water.sum(axis=1) * class_m2).sum() + gw_water.sum() * pix_m2)

    years = config.sim_years
    acc = {k: np.zeros(years) for k in (
        "fertilizer_input", "nh3", "nox", "n2o", "uptake_nh4", "uptake_no3", "outlet_nh4",
        "outlet_no3", "precipitation", "evapotranspiration", "discharge")}
    storage_marks = np.zeros(years + 1)
    water_marks = np.zeros(years + 1)
    storage_series = np.zeros(n_days)

    n_months = config.retained_years * 12
    class_flux = {k: np.zeros((n_months, n_cls)) for k in (
        "evapotranspiration", "nh3_emission", "nox_emission", "n2o_emission", "mineralization",
        "nitrification", "nh4_uptake", "no3_uptake", "leaching")}
    class_state = {k: np.zeros((n_months, n_cls)) for k in ("hs_nh4", "hs_no3", "hi_nh4", "hi_no3")}
    pixel_flux = {k: np.zeros((n_months, n_pix)) for k in ("nh4_uptake", "no3_uptake")}
    pixel_state = {k: np.zeros((n_months, n_pix)) for k in ("gw_depth", "gw_nh4_conc", "gw_no3_conc")}
    month_days = np.zeros(n_months)

    n_retained = n_days - config.spinup_days
    out_q = np.zeros(n_retained)
    out_nh4 = np.zeros(n_retained)
    out_no3 = np.zeros(n_retained)

    storage_marks[0] = n_storage()
    water_marks[0] = water_storage()

    for d in range(n_days):
        year, doy = divmod(d, DAYS_PER_YEAR)

        # fertilization into the top sublayer
        applied = schedule.get(doy)
        if applied is not None:
            nh4[:, 0] += applied * split[0]
            no3[:, 0] += applied * split[1]
            organic += applied * split[2]
            acc["fertilizer_input"][year] += float((applied * class_ha).sum())

        # percolation: macropore water drains one sublayer down, carrying dissolved N
        drain = np.maximum(water - micro_cap, 0.0)
        frac = _safe_div(drain, water)
        mv_no3 = leach * no3 * frac
        mv_nh4 = leach * mob * nh4 * frac
        water -= drain
        no3 -= mv_no3
        nh4 -= mv_nh4
        in_w = np.zeros_like(water)
        in_no3 = np.zeros_like(water)
        in_nh4 = np.zeros_like(water)
        in_w[:, 1:] = drain[:, :-1]
        in_no3[:, 1:] = mv_no3[:, :-1]
        in_nh4[:, 1:] = mv_nh4[:, :-1]
        # HS/HI interface: what the first HI sublayer cannot hold stays in HS
        k = n_hs
        room = np.maximum(cap[k] - water[:, k], 0.0)
        back = in_w[:, k] - np.minimum(in_w[:, k], room)
        back_frac = _safe_div(back, in_w[:, k])
        water[:, k - 1] += back
        no3[:, k - 1] += in_no3[:, k] * back_frac
        nh4[:, k - 1] += in_nh4[:, k] * back_frac
        in_w[:, k] -= back
        in_no3[:, k] -= in_no3[:, k] * back_frac
        in_nh4[:, k] -= in_nh4[:, k] * back_frac
        water += in_w
        no3 += in_no3
        nh4 += in_nh4
        rch_w = drain[:, -1]
        rch_no3 = mv_no3[:, -1]
        rch_nh4 = mv_nh4[:, -1]

        # rain: infiltration into the top sublayer, the rest runs off
        rain = rain_m[d]
        infiltration = np.minimum(rain, np.maximum(cap[0] - water[:, 0], 0.0)) * pervious
        runoff = rain - infiltration
        water[:, 0] += infiltration

        # evapo-transpiration from the surface layer
        available = water[:, :n_hs].sum(axis=1)
        et = np.minimum(pet[d] * kc[:, doy], available)
        water[:, :n_hs] *= (1.0 - _safe_div(et, available))[:, None]

        # nitrogen transformations
        ft = f_temp[d]
        mineralized = rates.mineralization * ft * organic
        organic -= mineralized
        nh4[:, 0] += mineralized
        nh3 = rates.volatilization * nh4[:, 0]
        nh4[:, 0] -= nh3
        nitrified = rates.nitrification * ft * nh4[:, :n_hs]
        gas = rates.gaseous_fraction * nitrified
        nh4[:, :n_hs] -= nitrified
        no3[:, :n_hs] += nitrified - gas
        gas_total = gas.sum(axis=1)
        n2o = rates.n2o_share * gas_total
        nox = gas_total - n2o
        nitrified_total = nitrified.sum(axis=1)

        soil_demand = demand[:, doy] * (1.0 - gw_share)
        tot_nh4 = nh4.sum(axis=1)
        up_nh4 = np.minimum(nh4_share * soil_demand, up_rate * tot_nh4)
        nh4 *= (1.0 - _safe_div(up_nh4, tot_nh4))[:, None]
        tot_no3 = no3.sum(axis=1)
        up_no3 = np.minimum((1.0 - nh4_share) * soil_demand, up_rate * tot_no3)
        no3 *= (1.0 - _safe_div(up_no3, tot_no3))[:, None]

        # groundwater: recharge, exfiltration above capacity, lateral flow downslope
        gw_water += rch_w[cls_idx]
        gw_no3 += rch_no3[cls_idx]
        gw_nh4 += rch_nh4[cls_idx]
        over = np.maximum(gw_water - smax, 0.0)
        f_over = _safe_div(over, gw_water)
        ex_no3 = gw_no3 * f_over
        ex_nh4 = mob * gw_nh4 * f_over
        gw_water -= over
        gw_no3 -= ex_no3
        gw_nh4 -= ex_nh4

        deficit = (smax - gw_water) / phi
        lateral = np.minimum(transmissivity * np.exp(-deficit / decay) * slope / w, rates.lateral_cap * gw_water)
        f_lat = _safe_div(lateral, gw_water)
        lat_no3 = gw_no3 * f_lat
        lat_nh4 = mob * gw_nh4 * f_lat
        gw_water -= lateral
        gw_no3 -= lat_no3
        gw_nh4 -= lat_nh4
        lat2 = lateral.reshape(grid.n_y, grid.n_x)
        lno3_2 = lat_no3.reshape(grid.n_y, grid.n_x)
        lnh4_2 = lat_nh4.reshape(grid.n_y, grid.n_x)
        gw_water.reshape(grid.n_y, grid.n_x)[1:] += lat2[:-1]
        gw_no3.reshape(grid.n_y, grid.n_x)[1:] += lno3_2[:-1]
        gw_nh4.reshape(grid.n_y, grid.n_x)[1:] += lnh4_2[:-1]

        deficit = (smax - gw_water) / phi
        reach = veg_pix & (deficit <= root_reach)
        gw_demand = np.where(reach, gw_share * demand[cls_idx, doy], 0.0)
        gw_up_nh4 = np.minimum(nh4_share * gw_demand, up_rate * gw_nh4)
        gw_up_no3 = np.minimum((1.0 - nh4_share) * gw_demand, up_rate * gw_no3)
        gw_nh4 -= gw_up_nh4
        gw_no3 -= gw_up_no3

        # outlet
        q = float((runoff * class_m2).sum() + (over.sum() + lat2[-1].sum()) * pix_m2)
        load_no3 = float((ex_no3.sum() + lno3_2[-1].sum()) * pix_ha)
        load_nh4 = float((ex_nh4.sum() + lnh4_2[-1].sum()) * pix_ha)

        acc["nh3"][year] += float((nh3 * class_ha).sum())
        acc["nox"][year] += float((nox * class_ha).sum())
        acc["n2o"][year] += float((n2o * class_ha).sum())
        acc["uptake_nh4"][year] += float((up_nh4 * class_ha).sum() + gw_up_nh4.sum() * pix_ha)
        acc["uptake_no3"][year] += float((up_no3 * class_ha).sum() + gw_up_no3.sum() * pix_ha)
        acc["outlet_nh4"][year] += load_nh4
        acc["outlet_no3"][year] += load_no3
        acc["precipitation"][year] += rain * total_m2
        acc["evapotranspiration"][year] += float((et * class_m2).sum())
        acc["discharge"][year] += q

        storage_series[d] = n_storage()
        if not np.isfinite(storage_series[d]) or not np.isfinite(gw_water).all():
            raise NonFiniteState(f"non-finite state on day {d}; check rate constants", day=d)
        if doy == DAYS_PER_YEAR - 1:
            storage_marks[year + 1] = storage_series[d]
            water_marks[year + 1] = water_storage()

        r = d - config.spinup_days
        if r < 0:
            continue
        out_q[r] = q
        out_no3[r] = load_no3
        out_nh4[r] = load_nh4
        m = (year - config.spinup_years) * 12 + MONTH_OF_DOY[doy]
        month_days[m] += 1
        cf = class_flux
        cf["evapotranspiration"][m] += et * 1000.0
        cf["nh3_emission"][m] += nh3
        cf["nox_emission"][m] += nox
        cf["n2o_emission"][m] += n2o
        cf["mineralization"][m] += mineralized
        cf["nitrification"][m] += nitrified_total
        cf["nh4_uptake"][m] += up_nh4
        cf["no3_uptake"][m] += up_no3
        cf["leaching"][m] += rch_no3 + rch_nh4
        cs = class_state
        cs["hs_nh4"][m] += nh4[:, :n_hs].sum(axis=1)
        cs["hs_no3"][m] += no3[:, :n_hs].sum(axis=1)
        cs["hi_nh4"][m] += nh4[:, n_hs:].sum(axis=1)
        cs["hi_no3"][m] += no3[:, n_hs:].sum(axis=1)
        pixel_flux["nh4_uptake"][m] += gw_up_nh4
        pixel_flux["no3_uptake"][m] += gw_up_no3
        pixel_state["gw_depth"][m] += e_depth + h_depth + deficit
        pixel_state["gw_nh4_conc"][m] += 0.1 * _safe_div(gw_nh4, gw_water)
        pixel_state["gw_no3_conc"][m] += 0.1 * _safe_div(gw_no3, gw_water)

    maps: Dict[str, np.ndarray] = {}
    for name, monthly in class_flux.items():
        values = monthly[:, cls_idx]
        if name in pixel_flux:
            values = values + pixel_flux[name]
        maps[name] = values
    for name, monthly in class_state.items():
        maps[name] = monthly[:, cls_idx] / month_days[:, None]
    for name, monthly in pixel_state.items():
        maps[name] = monthly / month_days[:, None]
    maps = {name: maps[name] for name in MAP_OUTCOMES}

    outflow = {
        "discharge": out_q,
        "nh4_conc": 1000.0 * _safe_div(out_nh4, out_q),
        "no3_conc": 1000.0 * _safe_div(out_no3, out_q),
        "nh4_load": out_nh4,
        "no3_load": out_no3,
    }

    budget = tuple(
        YearBudget(
            year=y,
            spin_up=y < config.spinup_years,
            fertilizer_input=float(acc["fertilizer_input"][y]),
            nh3=float(acc["nh3"][y]),
            nox=float(acc["nox"][y]),
            n2o=float(acc["n2o"][y]),
            uptake_nh4=float(acc["uptake_nh4"][y]),
            uptake_no3=float(acc["uptake_no3"][y]),
            outlet_nh4=float(acc["outlet_nh4"][y]),
            outlet_no3=float(acc["outlet_no3"][y]),
            storage_start=float(storage_marks[y]),
            storage_end=float(storage_marks[y + 1]),
            precipitation=float(acc["precipitation"][y]),
            evapotranspiration=float(acc["evapotranspiration"][y]),
            discharge=float(acc["discharge"][y]),
            water_storage_start=float(water_marks[y]),
            water_storage_end=float(water_marks[y + 1]),
        )
        for y in range(years)
    )
    logger.debug(
        "simulated A=%s B=%s J=%s K=%s: %d pixels, %d+%d sublayers",
        w, b, assignment.fertilizer_type, assignment.fertilizer_amount, n_pix, n_hs, n_hi,
    )
    return RunOutput(assignment, grid, outflow, maps, budget, storage_series,
                     config.spinup_years, config.sim_years)


@dataclass(frozen=True)
class BalanceRow:
    year: int
    spin_up: bool
    inputs: float
    exports: float
    storage_change: float
    residual: float
    water_inputs: float
    water_exports: float
    water_storage_change: float
    water_residual: float

    def to_dict(self) -> Dict:
        return asdict(self)


def _relative(residual: float, scale: float) -> float:
    return residual / scale if scale > 0 else residual


def mass_balance(output: RunOutput, assignment: FactorAssignment, config: LandscapeConfig) -> List[BalanceRow]:
    """Yearly nitrogen and water budgets.

    Nitrogen inputs are recomputed from the fertilization schedule, independently
    of the simulator's own counters. Residuals are relative to inputs; when a
    year has no input they are relative to the storage at the start of the year.
    """
    yearly_input = fertilizer_inputs(assignment, config)
    rows = []
    for b in output.budget:
        delta = b.storage_end - b.storage_start
        raw = yearly_input - b.n_exports - delta
        scale = yearly_input if yearly_input > 0 else max(b.storage_start, b.n_exports)
        w_delta = b.water_storage_end - b.water_storage_start
        w_raw = b.precipitation - b.water_exports - w_delta
        w_scale = b.precipitation if b.precipitation > 0 else max(b.water_storage_start, b.water_exports)
        rows.append(BalanceRow(
            year=b.year,
            spin_up=b.spin_up,
            inputs=yearly_input,
            exports=b.n_exports,
            storage_change=delta,
            residual=_relative(raw, scale),
            water_inputs=b.precipitation,
            water_exports=b.water_exports,
            water_storage_change=w_delta,
            water_residual=_relative(w_raw, w_scale),
        ))
    return rows


def write_run_output(output: RunOutput, directory: Union[str, Path], design_checksum: Optional[str] = None) -> Path:
    """Persist one run as one-run OutcomeTensors plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for tensor in output.to_tensors(design_checksum):
        write_tensor(directory / tensor.name, tensor)
    write_json(directory / "run.json", {
        "assignment": output.assignment.to_dict(),
        "budget": [b.to_dict() for b in output.budget],
        "spinup_years": output.spinup_years,
        "sim_years": output.sim_years,
        "storage_series": output.storage_series,
        "design_checksum": design_checksum,
    })
    return directory


def read_run_output(directory: Union[str, Path]) -> RunOutput:
    directory = Path(directory)
    meta = read_json(directory / "run.json")
    checksum = meta.get("design_checksum")
    outflow = {name: read_tensor(directory / name, checksum).values[0, :, 0] for name in OUTFLOW_OUTCOMES}
    maps = {}
    grid = None
    for name in MAP_OUTCOMES:
        tensor = read_tensor(directory / name, checksum)
        maps[name] = tensor.values[0]
        grid = tensor.grid
    return RunOutput(
        FactorAssignment(**meta["assignment"]),
        grid,
        outflow,
        maps,
        tuple(YearBudget(**b) for b in meta["budget"]),
        np.asarray(meta["storage_series"], dtype=np.float64),
        int(meta["spinup_years"]),
        int(meta["sim_years"]),
    )
