"""
Run x time x pixel outcome tensors: data model, aggregation, resampling and storage.

Provides:
- Grid, TimeAxis: spatial and temporal axes of an outcome.
- OutcomeTensor: n_runs x n_time x n_pixels float64 values with metadata.
- AggregationSpec and spatial_aggregate / temporal_aggregate / full_aggregate.
- resample_to_reference / resample_tensor: block means onto a coarser nested grid.
- stack_runs: one-run tensors -> one design-wide tensor.
- write_tensor / read_tensor: `<base>.bin` payload (row-major little-endian
  float64) plus `<base>.json` manifest.
- rain_event_mask / month_mask: time-window predicates for event aggregation.
- matrix_to_csv / map_frame: CSV export with pandas.

Outcomes declare "sum" (extensive, e.g. kg N/ha emissions summed to landscape
kg) or "mean" (intensive, e.g. concentrations) aggregation in their manifest.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.common.json_util import read_json, write_json

from .errors import (
    AggregationModeError,
    EmptyMask,
    ManifestMismatch,
    NonNestedGrids,
    TruncatedPayload,
)
from .forcing import DAYS_PER_YEAR, MONTH_OF_DOY

logger = logging.getLogger(__name__)

MAIZE, WHEAT, FARM, UNMANAGED = 0, 1, 2, 3
LAND_USES = ("maize", "wheat", "farm_building", "unmanaged")

AGGREGATIONS = ("sum", "mean")
TIME_KINDS = ("daily", "monthly")
PAYLOAD_DTYPE = "<f8"

SPATIAL_MODES = ("spatial_mean", "landuse_mean")
TEMPORAL_MODES = ("temporal_mean", "event_window_mean")
AGGREGATION_MODES = SPATIAL_MODES + TEMPORAL_MODES + ("full_mean",)


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular raster; pixel p sits at row p // n_x (0 = upslope) and column p % n_x."""

    mesh_width: float
    n_x: int
    n_y: int
    land_use: np.ndarray

    def __post_init__(self):
        land_use = np.asarray(self.land_use, dtype=np.int8).ravel()
        if self.mesh_width <= 0 or self.n_x < 1 or self.n_y < 1:
            raise ValueError("grid needs a positive mesh width and dimensions")
        if land_use.shape[0] != self.n_x * self.n_y:
            raise ValueError(f"land-use map has {land_use.shape[0]} pixels, grid has {self.n_x * self.n_y}")
        if land_use.size and (land_use.min() < 0 or land_use.max() >= len(LAND_USES)):
            raise ValueError("land-use codes must index LAND_USES")
        land_use.setflags(write=False)
        object.__setattr__(self, "land_use", land_use)
        object.__setattr__(self, "mesh_width", float(self.mesh_width))

    @property
    def n_pixels(self) -> int:
        return self.n_x * self.n_y

    @property
    def pixel_area_ha(self) -> float:
        return self.mesh_width ** 2 / 1e4

    @property
    def area_ha(self) -> float:
        return self.n_pixels * self.pixel_area_ha

    def labels(self) -> Tuple[str, ...]:
        return tuple(LAND_USES[c] for c in self.land_use)

    def land_use_area_ha(self) -> Dict[str, float]:
        counts = np.bincount(self.land_use, minlength=len(LAND_USES))
        return {name: float(counts[i] * self.pixel_area_ha) for i, name in enumerate(LAND_USES)}

    def land_use_mask(self, names: Iterable[str]) -> np.ndarray:
        names = list(names)
        unknown = [n for n in names if n not in LAND_USES]
        if unknown:
            raise ValueError(f"unknown land uses: {', '.join(unknown)}")
        codes = [LAND_USES.index(n) for n in names]
        return np.isin(self.land_use, codes)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates in metres, x across slope and y downslope."""
        idx = np.arange(self.n_pixels)
        return (idx % self.n_x + 0.5) * self.mesh_width, (idx // self.n_x + 0.5) * self.mesh_width

    def refine(self, factor: int) -> "Grid":
        if factor < 1:
            raise ValueError("refinement factor must be a positive integer")
        lu = self.land_use.reshape(self.n_y, self.n_x)
        fine = np.repeat(np.repeat(lu, factor, axis=0), factor, axis=1)
        return Grid(self.mesh_width / factor, self.n_x * factor, self.n_y * factor, fine.ravel())

    def coarsen(self, factor: int) -> "Grid":
        if self.n_x % factor or self.n_y % factor:
            raise NonNestedGrids(f"{self.n_x}x{self.n_y} grid does not split into {factor}x{factor} blocks")
        blocks = _blocks(self.land_use.astype(np.int64), self.n_x, self.n_y, factor)
        # majority label per block, lowest code on ties
        counts = np.stack([(blocks == c).sum(axis=(-3, -1)) for c in range(len(LAND_USES))])
        coarse = counts.argmax(axis=0)
        return Grid(self.mesh_width * factor, self.n_x // factor, self.n_y // factor, coarse.ravel())

    def same_as(self, other: "Grid") -> bool:
        return (
            self.mesh_width == other.mesh_width
            and self.n_x == other.n_x
            and self.n_y == other.n_y
            and np.array_equal(self.land_use, other.land_use)
        )

    def to_dict(self) -> Dict:
        return {
            "mesh_width": self.mesh_width,
            "n_x": self.n_x,
            "n_y": self.n_y,
            "land_use": [int(c) for c in self.land_use],
            "land_use_names": list(LAND_USES),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Grid":
        return cls(float(data["mesh_width"]), int(data["n_x"]), int(data["n_y"]), np.asarray(data["land_use"]))


@dataclass(frozen=True)
class TimeAxis:
    """Sample i is day (or month) start + i since the simulation start."""

    kind: str
    start: int
    n: int

    def __post_init__(self):
        if self.kind not in TIME_KINDS:
            raise ValueError(f"time axis kind must be one of {TIME_KINDS}, got {self.kind!r}")
        if self.n < 1 or self.start < 0:
            raise ValueError("time axis needs n >= 1 and start >= 0")

    def labels(self) -> np.ndarray:
        return self.start + np.arange(self.n)

    def month_of_year(self) -> np.ndarray:
        """Calendar month 1..12 of every sample."""
        if self.kind == "monthly":
            return self.labels() % 12 + 1
        return MONTH_OF_DOY[self.labels() % DAYS_PER_YEAR] + 1

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "start": self.start, "n": self.n}

    @classmethod
    def from_dict(cls, data: Dict) -> "TimeAxis":
        return cls(str(data["kind"]), int(data["start"]), int(data["n"]))


@dataclass(frozen=True, eq=False)
class OutcomeTensor:
    name: str
    values: np.ndarray
    time_axis: TimeAxis
    grid: Optional[Grid]
    unit: str
    aggregation: str = "mean"
    design_checksum: Optional[str] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 3:
            raise ValueError(f"{self.name}: tensor values must be n_runs x n_time x n_pixels")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.name}: tensor values must be finite")
        if values.shape[1] != self.time_axis.n:
            raise ValueError(f"{self.name}: {values.shape[1]} time samples, axis has {self.time_axis.n}")
        n_pixels = 1 if self.grid is None else self.grid.n_pixels
        if values.shape[2] != n_pixels:
            raise ValueError(f"{self.name}: {values.shape[2]} pixels, grid has {n_pixels}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"{self.name}: aggregation must be one of {AGGREGATIONS}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_runs(self) -> int:
        return self.values.shape[0]

    @property
    def n_time(self) -> int:
        return self.values.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.values.shape[2]

    def pixel_area_ha(self) -> float:
        return 1.0 if self.grid is None else self.grid.pixel_area_ha

    def check_runs(self, n_runs: int, design_checksum: Optional[str] = None) -> None:
        if self.n_runs != n_runs:
            raise ManifestMismatch(f"{self.name}: {self.n_runs} runs, design has {n_runs}")
        if design_checksum is not None and self.design_checksum != design_checksum:
            raise ManifestMismatch(f"{self.name}: tensor belongs to design {self.design_checksum}")

    def manifest(self) -> Dict:
        return {
            "name": self.name,
            "dims": list(self.values.shape),
            "dtype": PAYLOAD_DTYPE,
            "order": "C",
            "grid": None if self.grid is None else self.grid.to_dict(),
            "time_axis": self.time_axis.to_dict(),
            "unit": self.unit,
            "aggregation": self.aggregation,
            "design_checksum": self.design_checksum,
        }


@dataclass(frozen=True, eq=False)
class AggregationSpec:
    """Aggregation mode plus an optional pixel mask (spatial modes), land-use
    selection (landuse_mean) or time-window predicate (event_window_mean)."""

    mode: str
    mask: Optional[np.ndarray] = None
    land_uses: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in AGGREGATION_MODES:
            raise AggregationModeError(f"unknown aggregation mode {self.mode!r}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool).ravel()
            if not mask.any():
                raise EmptyMask(f"{self.mode}: mask selects nothing")
            object.__setattr__(self, "mask", mask)
        if self.mode == "landuse_mean" and not self.land_uses:
            raise ValueError("landuse_mean needs at least one land use")
        if self.mode == "event_window_mean" and self.mask is None:
            raise ValueError("event_window_mean needs a time-window mask")
        object.__setattr__(self, "land_uses", tuple(self.land_uses))


def _pixel_mask(t: OutcomeTensor, spec: AggregationSpec) -> np.ndarray:
    if spec.mode == "landuse_mean":
        if t.grid is None:
            raise AggregationModeError(f"{t.name}: landuse_mean needs a gridded tensor")
        mask = t.grid.land_use_mask(spec.land_uses)
        if spec.mask is not None:
            mask = mask & _sized(spec.mask, t.n_pixels, "pixel")
    elif spec.mask is not None:
        mask = _sized(spec.mask, t.n_pixels, "pixel")
    else:
        mask = np.ones(t.n_pixels, dtype=bool)
    if not mask.any():
        raise EmptyMask(f"{t.name}: no pixel selected for {spec.mode}")
    return mask


def _sized(mask: np.ndarray, n: int, what: str) -> np.ndarray:
    if mask.shape[0] != n:
        raise ValueError(f"{what} mask has {mask.shape[0]} entries, expected {n}")
    return mask


def _space_reduce(values: np.ndarray, aggregation: str, area_ha: float) -> np.ndarray:
    # equal-area pixels: the area-weighted mean is the plain mean
    if aggregation == "sum":
        return values.sum(axis=-1) * area_ha
    return values.mean(axis=-1)


def spatial_aggregate(t: OutcomeTensor, spec: AggregationSpec) -> np.ndarray:
    """n_runs x n_time matrix over the selected pixels."""
    if spec.mode not in SPATIAL_MODES:
        raise AggregationModeError(f"spatial_aggregate does not accept mode {spec.mode!r}")
    mask = _pixel_mask(t, spec)
    return _space_reduce(t.values[:, :, mask], t.aggregation, t.pixel_area_ha())


def temporal_aggregate(t: OutcomeTensor, spec: AggregationSpec) -> np.ndarray:
    """n_runs x n_pixels per-pixel time mean over all samples or the event windows."""
    if spec.mode not in TEMPORAL_MODES:
        raise AggregationModeError(f"temporal_aggregate does not accept mode {spec.mode!r}")
    if spec.mask is None:
        return t.values.mean(axis=1)
    mask = _sized(spec.mask, t.n_time, "time")
    return t.values[:, mask, :].mean(axis=1)


def full_aggregate(t: OutcomeTensor) -> np.ndarray:
    """One scalar per run: time mean of the area-weighted spatial mean (or sum)."""
    return _space_reduce(t.values, t.aggregation, t.pixel_area_ha()).mean(axis=1)


def _blocks(values: np.ndarray, n_x: int, n_y: int, factor: int) -> np.ndarray:
    lead = values.shape[:-1]
    return values.reshape(lead + (n_y // factor, factor, n_x // factor, factor))


def _nesting_factor(mesh_width: float, target_mesh: float) -> int:
    ratio = target_mesh / mesh_width
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
        raise NonNestedGrids(f"target mesh {target_mesh} is not an integer multiple of {mesh_width}")
    return factor


def resample_to_reference(values: np.ndarray, grid: Grid, target_mesh: float) -> Tuple[np.ndarray, Grid]:
    """Block-mean values (..., n_pixels) at grid.mesh_width onto the nested coarser grid."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != grid.n_pixels:
        raise ValueError(f"map has {values.shape[-1]} pixels, grid has {grid.n_pixels}")
    factor = _nesting_factor(grid.mesh_width, target_mesh)
    target = grid.coarsen(factor)
    if factor == 1:
        return values.copy(), target
    coarse = _blocks(values, grid.n_x, grid.n_y, factor).mean(axis=(-3, -1))
    return coarse.reshape(values.shape[:-1] + (target.n_pixels,)), target


def resample_tensor(t: OutcomeTensor, target_mesh: float) -> OutcomeTensor:
    if t.grid is None:
        return t
    factor = _nesting_factor(t.grid.mesh_width, target_mesh)
    values, target = resample_to_reference(t.values, t.grid, target_mesh)
    logger.debug("resampled %s by %dx%d blocks", t.name, factor, factor)
    return OutcomeTensor(t.name, values, t.time_axis, target, t.unit, t.aggregation, t.design_checksum)


def stack_runs(tensors: Sequence[OutcomeTensor], design_checksum: Optional[str] = None) -> OutcomeTensor:
    """Concatenate one-run tensors of the same outcome in run order."""
    if not tensors:
        raise ValueError("no tensors to stack")
    first = tensors[0]
    for t in tensors[1:]:
        if t.name != first.name or t.time_axis != first.time_axis or t.unit != first.unit:
            raise ManifestMismatch(f"cannot stack {t.name} with {first.name}: metadata differs")
        if (t.grid is None) != (first.grid is None) or (t.grid is not None and not t.grid.same_as(first.grid)):
            raise ManifestMismatch(f"{t.name}: runs are on different grids; resample first")
    values = np.concatenate([t.values for t in tensors], axis=0)
    return OutcomeTensor(first.name, values, first.time_axis, first.grid, first.unit, first.aggregation,
                         design_checksum)


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".bin", ".json"):
        base = base.with_suffix("")
    return base.with_name(base.name + ".bin"), base.with_name(base.name + ".json")


def write_tensor(path: Union[str, Path], t: OutcomeTensor) -> Path:
    payload_path, manifest_path = _paths(path)
    payload_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(t.values.astype(PAYLOAD_DTYPE, copy=False).tobytes(order="C"))
    write_json(manifest_path, t.manifest())
    return manifest_path


def read_tensor(path: Union[str, Path], expected_checksum: Optional[str] = None) -> OutcomeTensor:
    payload_path, manifest_path = _paths(path)
    manifest = read_json(manifest_path)
    if manifest.get("dtype", PAYLOAD_DTYPE) != PAYLOAD_DTYPE or manifest.get("order", "C") != "C":
        raise ManifestMismatch(f"{manifest_path}: unsupported payload layout")
    if expected_checksum is not None and manifest.get("design_checksum") != expected_checksum:
        raise ManifestMismatch(
            f"{manifest_path}: design checksum {manifest.get('design_checksum')} != {expected_checksum}"
        )
    dims = tuple(int(d) for d in manifest["dims"])
    payload = payload_path.read_bytes()
    expected = int(np.prod(dims)) * np.dtype(PAYLOAD_DTYPE).itemsize
    if len(payload) != expected:
        raise TruncatedPayload(f"{payload_path}: {len(payload)} bytes, manifest expects {expected}")
    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).reshape(dims).astype(np.float64)
    grid = None if manifest.get("grid") is None else Grid.from_dict(manifest["grid"])
    return OutcomeTensor(
        manifest["name"],
        values,
        TimeAxis.from_dict(manifest["time_axis"]),
        grid,
        manifest["unit"],
        manifest.get("aggregation", "mean"),
        manifest.get("design_checksum"),
    )


def rain_event_mask(precip_mm: np.ndarray, threshold_mm: float = 10.0, days_after: int = 2) -> np.ndarray:
    """Days on or within `days_after` days after a day with precipitation >= threshold."""
    precip = np.asarray(precip_mm, dtype=np.float64)
    if days_after < 0:
        raise ValueError("days_after must be non-negative")
    events = precip >= threshold_mm
    mask = events.copy()
    for lag in range(1, days_after + 1):
        mask[lag:] |= events[:-lag]
    return mask


def month_mask(time_axis: TimeAxis, months: Iterable[int]) -> np.ndarray:
    months = set(int(m) for m in months)
    if not months or not months <= set(range(1, 13)):
        raise ValueError("months must be a non-empty subset of 1..12")
    return np.isin(time_axis.month_of_year(), sorted(months))


def matrix_to_csv(
    matrix: np.ndarray,
    path: Union[str, Path],
    column_labels: Optional[Sequence] = None,
    row_label: str = "run",
) -> Path:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    columns = [str(c) for c in (column_labels if column_labels is not None else range(matrix.shape[1]))]
    frame = pd.DataFrame(matrix, columns=columns)
    frame.insert(0, row_label, np.arange(matrix.shape[0]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def map_frame(grid: Grid, layers: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Long-to-wide pixel table: pixel, x, y, land_use and one column per layer."""
    x, y = grid.coordinates()
    frame = pd.DataFrame({"pixel": np.arange(grid.n_pixels), "x": x, "y": y, "land_use": list(grid.labels())})
    for name, values in layers.items():
        values = np.asarray(values)
        if values.shape != (grid.n_pixels,):
            raise ValueError(f"layer {name} has shape {values.shape}, expected ({grid.n_pixels},)")
        frame[name] = values
    return frame
