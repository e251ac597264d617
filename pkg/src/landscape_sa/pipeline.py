"""
End-to-end experiment: design -> simulate -> analyze -> synthesize -> report.

Provides:
- PipelineConfig: the experiment document (JSON) with embedded factor-table
  defaults, per-factor level overrides and a mandatory seed.
- Pipeline: stage runner with content-hash caching under <out>/cache and
  bounded process-level parallelism for the simulation fan-out.

Artifact tree (relative to the output directory):
    design/       design.csv, design_physical.csv, design.json
    forcing-<seed>-<years>y.csv
                  meteorology fixture shared by every run
    tensors/      one OutcomeTensor per outcome (maps on the reference grid)
    simulate/     mass_balance.csv
    analysis/     aggregated, land-use, event-window, dynamic, spatial, PCA and
                  time-series cluster tables
    synthesis/    synthesis.json, dendrogram, explained curves, summary table
    report/       figure-data bundle (see report.py)

Usage:
    config = PipelineConfig.from_file("experiment.json")
    result = Pipeline(config, jobs=4).run()
"""

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.common.json_util import read_json, to_json, write_json

from . import report as report_stage
from .anova_sa import DynamicSI, SensitivityProfile, dynamic_sa, fit_saturated_anova, profiles_frame, spatial_sa
from .clustering import cluster_series, factor_associations, si_feature_matrix, synthesize
from .errors import DegenerateData, EmptyMask, LandscapeSAError, StageFailure
from .factors import FACTOR_IDS, FACTOR_TABLE, FactorSpec, by_id, check_unique_ids, factor_table, select
from .forcing import Forcing
from .gf3design import (
    DEFAULT_CANDIDATE_BUDGET,
    DesignMatrix,
    generate_regular_design,
    verify_strength,
    word_length_pattern,
)
from .landscape_sim import (
    DEFAULT_OUTCOMES,
    OUTCOMES,
    FactorAssignment,
    LandscapeConfig,
    mass_balance,
    simulate,
)
from .mv_sa import DEFAULT_N_KEEP, pc_sensitivity, pca
from .tensor_store import (
    AggregationSpec,
    OutcomeTensor,
    TimeAxis,
    full_aggregate,
    map_frame,
    matrix_to_csv,
    month_mask,
    rain_event_mask,
    read_tensor,
    spatial_aggregate,
    temporal_aggregate,
    write_tensor,
)

logger = logging.getLogger(__name__)

STAGES = ("design", "simulate", "analyze", "synthesize", "report")
BALANCE_TOLERANCE = 1e-6
ANALYSIS_LAND_USES = ("maize", "wheat", "unmanaged")


@dataclass(frozen=True)
class PipelineConfig:
    """Experiment document.

    Only `seed` is mandatory. Factors outside `varied` are held at
    `fixed_levels` (level code, default 1 = middle level).
    """

    seed: int
    factors: Tuple[FactorSpec, ...] = FACTOR_TABLE
    varied: Tuple[str, ...] = FACTOR_IDS
    fixed_levels: Dict[str, int] = field(default_factory=dict)
    n_basic: int = 5
    min_resolution: int = 5
    candidate_budget: int = DEFAULT_CANDIDATE_BUDGET
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    outcomes: Tuple[str, ...] = DEFAULT_OUTCOMES
    n_keep: int = DEFAULT_N_KEEP
    M_max: int = 8
    series_clusters: int = 3
    feature_mode: str = "per_factor"
    n_bootstrap: int = 100
    rain_threshold_mm: float = 10.0
    rain_days_after: int = 2
    fertilization_months: Tuple[int, ...] = (3, 4, 5)
    dynamic_outcome: str = "nox_emission"
    map_outcome: str = "nh4_uptake"
    out_dir: str = "out"
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        check_unique_ids(self.factors)
        lookup = by_id(self.factors)
        unknown = [f for f in self.varied if f not in lookup]
        if unknown:
            raise ValueError(f"varied factors not in the factor table: {', '.join(unknown)}")
        if len(set(self.varied)) != len(self.varied) or len(self.varied) < 3:
            raise ValueError("varied must list at least three distinct factors")
        for fid, code in self.fixed_levels.items():
            if fid not in lookup or code not in (0, 1, 2):
                raise ValueError(f"fixed level {fid}={code!r} is invalid")
        missing = [o for o in self.outcomes if o not in OUTCOMES]
        if missing:
            raise ValueError(f"unknown outcomes: {', '.join(missing)}")
        for name in (self.dynamic_outcome, self.map_outcome):
            if name not in self.outcomes:
                raise ValueError(f"report outcome {name!r} is not in the outcome list")
        if OUTCOMES[self.map_outcome].kind == "outflow":
            raise ValueError("map_outcome must be a map outcome")
        if self.jobs < 1 or self.n_keep < 1 or self.M_max < 2 or self.series_clusters < 2:
            raise ValueError("jobs and n_keep must be positive, M_max and series_clusters at least 2")
        if self.landscape.forcing_path and not Path(self.landscape.forcing_path).exists():
            raise ValueError(f"forcing fixture {self.landscape.forcing_path} does not exist")

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Union[str, Path, None] = None, **overrides) -> "PipelineConfig":
        data = {**dict(data), **{k: v for k, v in overrides.items() if v is not None}}
        if data.get("seed") is None:
            raise ValueError("seed is mandatory: set it in the config or pass --seed")
        base = Path(base_dir) if base_dir is not None else Path(".")

        kwargs: Dict = {"seed": int(data.pop("seed"))}
        kwargs["factors"] = factor_table(data.pop("factor_levels", None))
        if "factors" in data:
            kwargs["varied"] = tuple(data.pop("factors"))

        landscape: Dict = {}
        if "landscape_config" in data:
            path = base / data.pop("landscape_config")
            if not path.exists():
                raise ValueError(f"landscape config {path} does not exist")
            landscape.update(read_json(path))
        landscape.update(data.pop("landscape", {}) or {})
        if "rates" in data:
            landscape["rates"] = {**landscape.get("rates", {}), **data.pop("rates")}
        if landscape.get("forcing_path"):
            landscape["forcing_path"] = str(base / landscape["forcing_path"])
        kwargs["landscape"] = LandscapeConfig.from_dict(landscape)

        for key in ("outcomes", "fertilization_months"):
            if key in data:
                kwargs[key] = tuple(data.pop(key))
        if "fixed_levels" in data:
            kwargs["fixed_levels"] = {str(k): int(v) for k, v in data.pop("fixed_levels").items()}
        known = set(cls.__dataclass_fields__) - set(kwargs)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ValueError(f"config file {path} does not exist")
        return cls.from_dict(read_json(path), base_dir=path.parent, **overrides)

    def to_dict(self) -> Dict:
        return {
            "seed": int(self.seed),
            "factors": [f.to_dict() for f in self.factors],
            "varied": list(self.varied),
            "fixed_levels": dict(sorted(self.fixed_levels.items())),
            "n_basic": self.n_basic,
            "min_resolution": self.min_resolution,
            "candidate_budget": self.candidate_budget,
            "landscape": self.landscape.to_dict(),
            "outcomes": list(self.outcomes),
            "n_keep": self.n_keep,
            "M_max": self.M_max,
            "series_clusters": self.series_clusters,
            "feature_mode": self.feature_mode,
            "n_bootstrap": self.n_bootstrap,
            "rain_threshold_mm": self.rain_threshold_mm,
            "rain_days_after": self.rain_days_after,
            "fertilization_months": list(self.fertilization_months),
            "dynamic_outcome": self.dynamic_outcome,
            "map_outcome": self.map_outcome,
        }

    def assignment(self, codes: Mapping[str, int]) -> FactorAssignment:
        levels = {fid: self.fixed_levels.get(fid, 1) for fid in FACTOR_IDS}
        levels.update({fid: int(c) for fid, c in codes.items()})
        return FactorAssignment.from_codes(levels, self.factors)


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(to_json(part, indent=0).encode("utf-8"))
    return h.hexdigest()


@dataclass
class PipelineResult:
    manifest: List[str]
    stats: Dict[str, int]
    executed: List[str]


SimulateFn = Callable[..., object]


def seasonal_dominance(dyn: DynamicSI, annual: SensitivityProfile, window: np.ndarray) -> Dict:
    """Dominant label over the fertilization window against the annual one.

    Both labels come from the same set (factor ids or "interactions"); shift is
    only reported when both are defined.
    """
    seasonal = dyn.window_dominant(window)
    overall = None if annual.degenerate else annual.dominant_factor()
    return {
        "annual": overall,
        "fertilization": seasonal,
        "shift": seasonal is not None and overall is not None and seasonal != overall,
    }


def _simulate_run(task) -> Tuple[int, Optional[object], Optional[list], Optional[str]]:
    """Worker: one simulation reduced to the reference grid, with its mass balance."""
    index, assignment, landscape, forcing, factors, simulator = task
    try:
        output = simulator(assignment, landscape, forcing, factors)
        balance = mass_balance(output, assignment, landscape)
        return index, output.on_grid(landscape.reference_mesh), balance, None
    except (ValueError, ArithmeticError) as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"


class Pipeline:
    """Stage runner.

    Usage:
        pipeline = Pipeline(config, out_dir="out", jobs=4)
        result = pipeline.run(until="analyze")
        result.stats["simulations"]
    """

    def __init__(
        self,
        config: PipelineConfig,
        out_dir: Union[str, Path, None] = None,
        jobs: Optional[int] = None,
        simulator: SimulateFn = simulate,
    ):
        self.config = config
        self.out = Path(out_dir if out_dir is not None else config.out_dir)
        self.jobs = jobs if jobs is not None else config.jobs
        self.simulator = simulator
        self.stats = {"simulations": 0, "cache_hits": 0}
        self._keys: Dict[str, str] = {}

    # --- caching -----------------------------------------------------------

    def _stage_key(self, stage: str) -> str:
        cfg = self.config.to_dict()
        parts = {
            "design": ("design", cfg["seed"], cfg["factors"], cfg["varied"], cfg["n_basic"],
                       cfg["min_resolution"], cfg["candidate_budget"]),
            "simulate": ("simulate", cfg["landscape"], cfg["outcomes"], cfg["fixed_levels"]),
            "analyze": ("analyze", cfg["n_keep"], cfg["series_clusters"], cfg["rain_threshold_mm"],
                        cfg["rain_days_after"], cfg["fertilization_months"]),
            "synthesize": ("synthesize", cfg["M_max"], cfg["feature_mode"], cfg["n_bootstrap"]),
            "report": ("report", cfg["dynamic_outcome"], cfg["map_outcome"]),
        }[stage]
        upstream = self._keys.get(STAGES[STAGES.index(stage) - 1], "") if stage != "design" else ""
        return _digest(upstream, parts)

    def _cache_path(self, stage: str) -> Path:
        return self.out / "cache" / f"{stage}.json"

    def _cached(self, stage: str, key: str) -> Optional[List[str]]:
        path = self._cache_path(stage)
        if not path.exists():
            return None
        entry = read_json(path)
        if entry.get("key") != key:
            return None
        artifacts = entry.get("artifacts", [])
        if not all((self.out / a).exists() for a in artifacts):
            return None
        return artifacts

    def _store(self, stage: str, key: str, artifacts: Sequence[Path]) -> List[str]:
        rel = sorted(Path(a).relative_to(self.out).as_posix() for a in artifacts)
        write_json(self._cache_path(stage), {"stage": stage, "key": key, "artifacts": rel})
        return rel

    # --- driver ------------------------------------------------------------

    def run(self, until: str = "report", stage_from: Optional[str] = None) -> PipelineResult:
        if until not in STAGES:
            raise ValueError(f"unknown stage {until!r}")
        if stage_from is not None and stage_from not in STAGES:
            raise ValueError(f"unknown stage {stage_from!r}")
        force_from = STAGES.index(stage_from) if stage_from else len(STAGES)
        manifest: List[str] = []
        executed: List[str] = []
        for i, stage in enumerate(STAGES[: STAGES.index(until) + 1]):
            key = self._stage_key(stage)
            self._keys[stage] = key
            cached = None if i >= force_from else self._cached(stage, key)
            if cached is not None:
                logger.info("stage %s: cache hit", stage)
                self.stats["cache_hits"] += 1
                manifest.extend(cached)
                continue
            logger.info("stage %s: running", stage)
            try:
                artifacts = getattr(self, f"_run_{stage}")()
            except StageFailure:
                raise
            except ValueError as exc:
                raise StageFailure(stage, str(exc)) from exc
            manifest.extend(self._store(stage, key, artifacts))
            executed.append(stage)
        write_json(self.out / "manifest.json", {"artifacts": manifest, "stages": list(STAGES[: len(self._keys)])})
        return PipelineResult(manifest, dict(self.stats), executed)

    # --- stages ------------------------------------------------------------

    def load_design(self) -> DesignMatrix:
        path = self.out / "design" / "design.csv"
        if not path.exists():
            raise StageFailure("design", f"{path} is missing; run the design stage first")
        meta = read_json(self.out / "design" / "design.json")
        design = DesignMatrix.from_csv(path)
        generators = meta.get("generators")
        return DesignMatrix(design.codes, design.factor_ids,
                            None if generators is None else np.asarray(generators), meta.get("seed"))

    def _run_design(self) -> List[Path]:
        cfg = self.config
        design = generate_regular_design(
            len(cfg.varied), cfg.n_basic, cfg.min_resolution, seed=cfg.seed,
            factor_ids=cfg.varied, candidate_budget=cfg.candidate_budget,
        )
        report = word_length_pattern(design)
        check = verify_strength(design, min(report.strength, design.n_factors))
        out = self.out / "design"
        paths = design.to_csv(out / "design.csv", select(cfg.factors, cfg.varied))
        meta = {
            "checksum": design.checksum(),
            "n_runs": design.n_runs,
            "factor_ids": list(design.factor_ids),
            "generators": design.generators,
            "seed": cfg.seed,
            "word_length_pattern": report.to_dict(),
            "strength_verified": check.ok,
        }
        paths.append(write_json(out / "design.json", meta))
        return paths

    def forcing_path(self) -> Path:
        """Synthetic forcing fixture, keyed by forcing seed and simulated years."""
        landscape = self.config.landscape
        return self.out / f"forcing-{landscape.forcing_seed}-{landscape.sim_years}y.csv"

    def _forcing(self) -> Tuple[Forcing, LandscapeConfig]:
        landscape = self.config.landscape
        if landscape.forcing_path:
            return Forcing.from_csv(landscape.forcing_path), landscape
        path = self.forcing_path()
        if not path.exists():
            logger.info("writing synthetic forcing %s", path.name)
            Forcing.synthetic(landscape.forcing_seed, years=landscape.sim_years).to_csv(path)
        return Forcing.from_csv(path), landscape

    def _run_simulate(self) -> List[Path]:
        cfg = self.config
        design = self.load_design()
        checksum = design.checksum()
        forcing, landscape = self._forcing()
        tasks = []
        for r in range(design.n_runs):
            codes = dict(zip(design.factor_ids, (int(c) for c in design.codes[r])))
            tasks.append((r, cfg.assignment(codes), landscape, forcing, cfg.factors, self.simulator))

        if self.jobs > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                results = list(pool.map(_simulate_run, tasks, chunksize=max(1, len(tasks) // (4 * self.jobs))))
        else:
            results = [_simulate_run(t) for t in tasks]
        self.stats["simulations"] += len(tasks)

        outputs = []
        rows = []
        for index, output, balance, error in results:
            if error is not None:
                raise StageFailure("simulate", error, run=index)
            outputs.append(output)
            for b in balance:
                rows.append({"run": index, **b.to_dict()})
                if abs(b.residual) > BALANCE_TOLERANCE:
                    raise StageFailure(
                        "simulate",
                        f"year {b.year}: nitrogen balance residual {b.residual:.3e} exceeds {BALANCE_TOLERANCE:g}",
                        run=index,
                    )

        paths = [self.forcing_path()] if self.forcing_path().exists() else []
        first = outputs[0]
        n_days = first.retained_days
        daily = TimeAxis("daily", first.spinup_years * 365, n_days)
        monthly = TimeAxis("monthly", first.spinup_years * 12, first.retained_months)
        for name in cfg.outcomes:
            info = OUTCOMES[name]
            if info.kind == "outflow":
                values = np.stack([o.outflow[name] for o in outputs])[:, :, None]
                tensor = OutcomeTensor(name, values, daily, None, info.unit, info.aggregation, checksum)
            else:
                values = np.stack([o.maps[name] for o in outputs])
                tensor = OutcomeTensor(name, values, monthly, first.grid, info.unit, info.aggregation, checksum)
            write_tensor(self.out / "tensors" / name, tensor)
            paths += [self.out / "tensors" / f"{name}.bin", self.out / "tensors" / f"{name}.json"]

        balance_path = self.out / "simulate" / "mass_balance.csv"
        balance_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(balance_path, index=False)
        paths.append(balance_path)
        return paths

    def load_tensor(self, name: str, design: DesignMatrix) -> OutcomeTensor:
        tensor = read_tensor(self.out / "tensors" / name, design.checksum())
        tensor.check_runs(design.n_runs)
        return tensor

    def _run_analyze(self) -> List[Path]:
        cfg = self.config
        design = self.load_design()
        forcing, landscape = self._forcing()
        out = self.out / "analysis"
        paths: List[Path] = []
        profiles: Dict[str, SensitivityProfile] = {}
        dominance: Dict[str, Dict] = {}

        for name in cfg.outcomes:
            tensor = self.load_tensor(name, design)
            try:
                paths += self._analyze_outcome(name, tensor, design, forcing, landscape, out, profiles, dominance)
            except StageFailure:
                raise
            except LandscapeSAError as exc:
                raise StageFailure("analyze", f"outcome {name}: {exc}") from exc

        frame = profiles_frame(profiles)
        paths.append(_csv(frame, out / "aggregated_si.csv"))
        paths.append(write_json(out / "profiles.json", {k: p.to_dict() for k, p in profiles.items()}))
        paths.append(write_json(out / "dominance.json", dominance))
        return paths

    def _analyze_outcome(self, name, tensor, design, forcing, landscape, out, profiles, dominance) -> List[Path]:
        cfg = self.config
        paths: List[Path] = []
        info = OUTCOMES[name]

        profiles[name] = fit_saturated_anova(design, full_aggregate(tensor))

        if tensor.grid is not None:
            for land_use in ANALYSIS_LAND_USES:
                spec = AggregationSpec("landuse_mean", land_uses=(land_use,))
                try:
                    series = spatial_aggregate(tensor, spec)
                except EmptyMask:
                    continue
                profiles[f"{name}@{land_use}"] = fit_saturated_anova(design, series.mean(axis=1))
            window = month_mask(tensor.time_axis, cfg.fertilization_months)
            series = spatial_aggregate(tensor, AggregationSpec("spatial_mean"))
            profiles[f"{name}@fertilization"] = fit_saturated_anova(design, series[:, window].mean(axis=1))
        else:
            precip = forcing.precip_mm[tensor.time_axis.start: tensor.time_axis.start + tensor.n_time]
            events = rain_event_mask(precip, cfg.rain_threshold_mm, cfg.rain_days_after)
            if events.any():
                spec = AggregationSpec("event_window_mean", mask=events)
                profiles[f"{name}@rain_events"] = fit_saturated_anova(design, temporal_aggregate(tensor, spec)[:, 0])

        # dynamic indexes, PCA of the curves and time-series clusters
        series = spatial_aggregate(tensor, AggregationSpec("spatial_mean"))
        paths.append(matrix_to_csv(series, out / "series" / f"{name}.csv", tensor.time_axis.labels()))
        dyn = dynamic_sa(design, series, tensor.time_axis.labels())
        paths.append(_csv(dyn.to_frame(), out / "dynamic" / f"{name}.csv"))
        paths.append(_csv(dyn.summary(), out / "dynamic" / f"{name}_summary.csv"))
        if tensor.time_axis.kind == "monthly":
            window = month_mask(tensor.time_axis, cfg.fertilization_months)
            dominance[name] = seasonal_dominance(dyn, profiles[name], window)
        paths += self._pca_tables(name, design, series, tensor.time_axis.labels(), out / "pca", "time")

        partition = cluster_series(series, cfg.series_clusters, cfg.seed) if series.std(axis=0).any() else None
        if partition is not None:
            tests = factor_associations(partition, design)
            paths.append(write_json(out / "series_clusters" / f"{name}.json", {
                "partition": partition.to_dict(),
                "association": {fid: t.to_dict() for fid, t in tests.items()},
                "significant": sorted(fid for fid, t in tests.items() if t.significant),
            }))

        # spatial indexes and map PCA on the reference grid
        if tensor.grid is not None:
            maps = temporal_aggregate(tensor, AggregationSpec("temporal_mean"))
            spatial = spatial_sa(design, maps)
            paths.append(_csv(map_frame(tensor.grid, spatial.layers()), out / "spatial" / f"{name}.csv"))
            paths += self._pca_tables(f"{name}_map", design, maps, np.arange(tensor.n_pixels), out / "pca", "pixel")
        logger.debug("analyzed %s (%s)", name, info.kind)
        return paths

    def _pca_tables(self, label, design, data, columns, out, column_name) -> List[Path]:
        try:
            model = pca(data)
        except DegenerateData:
            logger.info("%s: constant across runs, no PCA", label)
            return []
        sens = pc_sensitivity(design, model, self.config.n_keep)
        keep = min(self.config.n_keep, model.n_components)
        loadings = model.loadings_frame(columns).iloc[:, : keep + 1].rename(columns={"column": column_name})
        return [
            _csv(loadings, out / f"{label}_loadings.csv"),
            _csv(model.inertia_frame(), out / f"{label}_inertia.csv"),
            _csv(sens.bars_frame(), out / f"{label}_si.csv"),
            _csv(sens.gsi_frame(), out / f"{label}_gsi.csv"),
        ]

    def load_profiles(self) -> Dict[str, SensitivityProfile]:
        path = self.out / "analysis" / "profiles.json"
        if not path.exists():
            raise StageFailure("synthesize", f"{path} is missing; run the analyze stage first")
        profiles = {}
        for name, data in read_json(path).items():
            factors = tuple(data["factors"])
            i_si = {tuple(k.split(":")): float(v) for k, v in data["iSI"].items()}
            profiles[name] = SensitivityProfile(
                factors, tuple(i_si), {f: float(data["mSI"][f]) for f in factors}, i_si,
                {f: float(data["tSI"][f]) for f in factors}, float(data["iTOT"]), float(data["total_SS"]),
                bool(data["degenerate"]), float(data["residual"]),
            )
        return profiles

    def _run_synthesize(self) -> List[Path]:
        cfg = self.config
        profiles = {k: p for k, p in self.load_profiles().items() if not p.degenerate}
        out = self.out / "synthesis"
        names, features, matrix = si_feature_matrix(profiles, cfg.feature_mode)
        arrows = [f for f in features if f.startswith("mSI_")]
        result = synthesize(matrix, cfg.M_max, cfg.seed, names, features, cfg.n_bootstrap, arrows)

        curves = {"M": list(result.explained), cfg.feature_mode: list(result.explained.values())}
        other = "ensemble" if cfg.feature_mode == "per_factor" else "per_factor"
        _, _, alt = si_feature_matrix(profiles, other)
        alt_result = synthesize(alt, cfg.M_max, cfg.seed, names, None, cfg.n_bootstrap, [])
        curves[other] = [alt_result.explained[m] for m in curves["M"]]

        heat = pd.DataFrame(matrix, columns=features)
        heat.insert(0, "cluster", result.partition.labels)
        heat.insert(0, "outcome", names)
        paths = [
            write_json(out / "synthesis.json", result.to_dict()),
            _csv(result.dendrogram.to_frame(), out / "dendrogram.csv"),
            _csv(pd.DataFrame(curves), out / "explained.csv"),
            _csv(result.cluster_summary(), out / "cluster_summary.csv"),
            _csv(heat, out / "features.csv"),
        ]
        for (a, b), (points, arrow_frame) in result.biplot_frames().items():
            tag = f"PC{a + 1}-PC{b + 1}"
            paths.append(_csv(points, out / f"biplot_{tag}_outcomes.csv"))
            paths.append(_csv(arrow_frame, out / f"biplot_{tag}_arrows.csv"))
        return paths

    def _run_report(self) -> List[Path]:
        return report_stage.report(self.out, self.config.dynamic_outcome, self.config.map_outcome)


def _csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def run_pipeline(config: PipelineConfig, out_dir: Union[str, Path, None] = None, jobs: Optional[int] = None,
                 until: str = "report", stage_from: Optional[str] = None) -> PipelineResult:
    return Pipeline(config, out_dir, jobs).run(until=until, stage_from=stage_from)
