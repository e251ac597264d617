"""
Figure-data bundle: plot-ready CSV/JSON derived from the pipeline artifacts.

Provides:
- report(artifact_dir, dynamic_outcome, map_outcome) -> list of written paths
- FIGURES: the declared figure files, in emission order

Nothing is plotted here; every file is a tidy table a plotting script can
consume directly. The bundle is written under <artifact_dir>/report/ together
with manifest.json (file name -> sha256 of its bytes).
"""

import hashlib
import logging
from pathlib import Path
from typing import Callable, Dict, List, Union

import numpy as np
import pandas as pd

from src.common.json_util import read_json, write_json

from .errors import MissingArtifact

logger = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

FIGURES = (
    "dynamic_runs.csv",
    "dynamic_quantiles.csv",
    "dynamic_cluster_means.csv",
    "dynamic_si.csv",
    "dynamic_pc_curves.csv",
    "dynamic_pc_si.csv",
    "map_mean.csv",
    "map_rsd.csv",
    "map_argmax.csv",
    "synthesis_explained.csv",
    "synthesis_dendrogram.csv",
    "synthesis_heatstrips.csv",
    "synthesis_table.csv",
    "biplot_PC1-PC2.csv",
    "biplot_PC1-PC3.csv",
    "biplot_PC2-PC3.csv",
)


class _Artifacts:
    """Read access to the pipeline tree; missing files raise MissingArtifact."""

    def __init__(self, root: Path):
        self.root = root

    def path(self, relative: str) -> Path:
        path = self.root / relative
        if not path.exists():
            raise MissingArtifact(f"{path} is missing; run the pipeline stages first")
        return path

    def csv(self, relative: str) -> pd.DataFrame:
        return pd.read_csv(self.path(relative))

    def json(self, relative: str):
        return read_json(self.path(relative))


def _runs(art: _Artifacts, outcome: str) -> pd.DataFrame:
    wide = art.csv(f"analysis/series/{outcome}.csv")
    return wide.melt(id_vars="run", var_name="time", value_name="value").astype({"time": int})


def _quantiles(art: _Artifacts, outcome: str) -> pd.DataFrame:
    wide = art.csv(f"analysis/series/{outcome}.csv").drop(columns="run")
    values = wide.to_numpy(dtype=np.float64)
    frame = pd.DataFrame({"time": wide.columns.astype(int)})
    for q in QUANTILES:
        frame[f"q{int(round(q * 100)):02d}"] = np.quantile(values, q, axis=0)
    frame["mean"] = values.mean(axis=0)
    return frame


def _cluster_means(art: _Artifacts, outcome: str) -> pd.DataFrame:
    wide = art.csv(f"analysis/series/{outcome}.csv")
    clusters = art.json(f"analysis/series_clusters/{outcome}.json")
    labels = np.asarray(clusters["partition"]["labels"])
    values = wide.drop(columns="run")
    means = values.groupby(labels).mean()
    long = means.reset_index(names="cluster").melt(id_vars="cluster", var_name="time", value_name="mean")
    sizes = pd.Series(labels).value_counts()
    long["n_runs"] = long["cluster"].map(sizes).astype(int)
    return long.astype({"time": int}).sort_values(["cluster", "time"], kind="stable")


def _dynamic_si(art: _Artifacts, outcome: str) -> pd.DataFrame:
    frame = art.csv(f"analysis/dynamic/{outcome}.csv")
    return frame[frame["index"].isin(["mSI", "iTOT"])].reset_index(drop=True)


def _pc_curves(art: _Artifacts, outcome: str) -> pd.DataFrame:
    loadings = art.csv(f"analysis/pca/{outcome}_loadings.csv")
    inertia = art.csv(f"analysis/pca/{outcome}_inertia.csv").set_index("component")["inertia"]
    long = loadings.melt(id_vars="time", var_name="component", value_name="loading")
    long["inertia"] = long["component"].map(inertia)
    return long


def _pc_si(art: _Artifacts, outcome: str) -> pd.DataFrame:
    return art.csv(f"analysis/pca/{outcome}_si.csv")


def _map_layer(*columns: str) -> Callable[[_Artifacts, str], pd.DataFrame]:
    def build(art: _Artifacts, outcome: str) -> pd.DataFrame:
        frame = art.csv(f"analysis/spatial/{outcome}.csv")
        return frame[["pixel", "x", "y", "land_use", *columns]]
    return build


def _explained(art: _Artifacts, _: str) -> pd.DataFrame:
    return art.csv("synthesis/explained.csv")


def _dendrogram(art: _Artifacts, _: str) -> pd.DataFrame:
    frame = art.csv("synthesis/dendrogram.csv")
    synthesis = art.json("synthesis/synthesis.json")
    frame.insert(0, "step", np.arange(1, len(frame) + 1))
    frame.attrs["leaves"] = synthesis["outcomes"]
    return frame


def _heatstrips(art: _Artifacts, _: str) -> pd.DataFrame:
    features = art.csv("synthesis/features.csv")
    return features.melt(id_vars=["outcome", "cluster"], var_name="feature", value_name="share")


def _table(art: _Artifacts, _: str) -> pd.DataFrame:
    return art.csv("synthesis/cluster_summary.csv")


def _biplot(tag: str) -> Callable[[_Artifacts, str], pd.DataFrame]:
    def build(art: _Artifacts, _: str) -> pd.DataFrame:
        points = art.csv(f"synthesis/biplot_{tag}_outcomes.csv")
        arrows = art.csv(f"synthesis/biplot_{tag}_arrows.csv")
        points.insert(0, "kind", "outcome")
        arrows = arrows.rename(columns={"feature": "outcome"})
        arrows.insert(0, "kind", "arrow")
        return pd.concat([points, arrows], ignore_index=True)
    return build


_BUILDERS: Dict[str, Callable[[_Artifacts, str], pd.DataFrame]] = {
    "dynamic_runs.csv": _runs,
    "dynamic_quantiles.csv": _quantiles,
    "dynamic_cluster_means.csv": _cluster_means,
    "dynamic_si.csv": _dynamic_si,
    "dynamic_pc_curves.csv": _pc_curves,
    "dynamic_pc_si.csv": _pc_si,
    "map_mean.csv": _map_layer("mean"),
    "map_rsd.csv": _map_layer("rsd", "rsd_flag"),
    "map_argmax.csv": _map_layer("argmax", "degenerate"),
    "synthesis_explained.csv": _explained,
    "synthesis_dendrogram.csv": _dendrogram,
    "synthesis_heatstrips.csv": _heatstrips,
    "synthesis_table.csv": _table,
    "biplot_PC1-PC2.csv": _biplot("PC1-PC2"),
    "biplot_PC1-PC3.csv": _biplot("PC1-PC3"),
    "biplot_PC2-PC3.csv": _biplot("PC2-PC3"),
}

_MAP_FIGURES = ("map_mean.csv", "map_rsd.csv", "map_argmax.csv")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def report(
    artifact_dir: Union[str, Path],
    dynamic_outcome: str = "nox_emission",
    map_outcome: str = "nh4_uptake",
) -> List[Path]:
    """Write every declared figure file plus report/manifest.json.

    Raises MissingArtifact before writing anything if the artifact
    directory does not hold the pipeline outputs the bundle is built from.
    """
    root = Path(artifact_dir)
    if not root.is_dir() or not any(root.iterdir()):
        raise MissingArtifact(f"{root} holds no pipeline artifacts")
    art = _Artifacts(root)

    frames = {}
    for name in FIGURES:
        outcome = map_outcome if name in _MAP_FIGURES else dynamic_outcome
        frames[name] = _BUILDERS[name](art, outcome)

    out = root / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in frames.items():
        path = out / name
        frame.to_csv(path, index=False)
        written.append(path)

    dendrogram = frames["synthesis_dendrogram.csv"]
    written.append(write_json(out / "dendrogram_leaves.json", {"leaves": dendrogram.attrs.get("leaves", [])}))
    manifest = {
        "dynamic_outcome": dynamic_outcome,
        "map_outcome": map_outcome,
        "files": {p.name: _sha256(p) for p in written},
    }
    written.append(write_json(out / "manifest.json", manifest))
    logger.info("report: %d figure files in %s", len(written) - 1, out)
    return written
