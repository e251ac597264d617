"""
PCA-based multivariate sensitivity analysis.

Provides:
- pca(data, n_components) -> PCModel: column-centered SVD with a fixed sign convention.
- pc_sensitivity(design, model, n_keep) -> PCSensitivity: saturated ANOVA on the
  kept score columns and inertia-weighted generalized indexes (GSI).
- aggregated_sensitivity(design, data): the same generalized index computed
  directly from summed per-column sums of squares, without PCA.

Columns are centered only, never scaled, so outcomes keep their physical units.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .anova_sa import SensitivityProfile, decompose, fit_many
from .errors import DegenerateData
from .gf3design import DesignMatrix

logger = logging.getLogger(__name__)

DEFAULT_N_KEEP = 3


@dataclass(frozen=True, eq=False)
class PCModel:
    """loadings: n_columns x n_components (orthonormal columns);
    scores: n_runs x n_components = (data - column_means) @ loadings;
    inertia: variance fraction of each component, non-increasing."""

    loadings: np.ndarray
    scores: np.ndarray
    inertia: np.ndarray
    column_means: np.ndarray
    singular_values: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.loadings.shape[1])

    def reconstruct(self) -> np.ndarray:
        return self.column_means + self.scores @ self.loadings.T

    def loadings_frame(self, column_labels: Optional[Sequence] = None) -> pd.DataFrame:
        labels = list(column_labels) if column_labels is not None else list(range(self.loadings.shape[0]))
        frame = pd.DataFrame(self.loadings, columns=[f"PC{c + 1}" for c in range(self.n_components)])
        frame.insert(0, "column", labels)
        return frame

    def scores_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.scores, columns=[f"PC{c + 1}" for c in range(self.n_components)])
        frame.insert(0, "run", np.arange(self.scores.shape[0]))
        return frame

    def inertia_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"component": [f"PC{c + 1}" for c in range(self.n_components)],
                             "inertia": self.inertia})


def pca(data: np.ndarray, n_components: Optional[int] = None) -> PCModel:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("data must be n_runs x n_columns")
    if not np.all(np.isfinite(x)):
        raise ValueError("data must be finite")
    full = min(x.shape)
    if n_components is None:
        n_components = full
    if not 1 <= n_components <= full:
        raise ValueError(f"n_components must lie in 1..{full}, got {n_components}")
    if np.all(np.ptp(x, axis=0) == 0):
        raise DegenerateData("all columns are constant; nothing to decompose")

    means = x.mean(axis=0)
    centered = x - means
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    loadings = vt.T
    # largest-magnitude entry of every loading vector is positive
    pivot = np.argmax(np.abs(loadings), axis=0)
    signs = np.sign(loadings[pivot, np.arange(loadings.shape[1])])
    signs[signs == 0] = 1.0
    loadings = loadings * signs

    power = s ** 2
    inertia = power / power.sum()
    loadings = loadings[:, :n_components]
    scores = centered @ loadings
    logger.debug("PCA %s: first inertias %s", x.shape, np.round(inertia[:3], 4).tolist())
    return PCModel(loadings, scores, inertia[:n_components], means, s[:n_components])


@dataclass(frozen=True, eq=False)
class PCSensitivity:
    profiles: Tuple[SensitivityProfile, ...]
    inertia: np.ndarray
    weights: np.ndarray
    gsi: Dict[str, float]
    gsi_main: Dict[str, float]
    gsi_interactions: float

    @property
    def factors(self) -> Tuple[str, ...]:
        return self.profiles[0].factors

    def bars_frame(self) -> pd.DataFrame:
        """Per-component tSI split into main effect and interaction parts."""
        rows = []
        for c, p in enumerate(self.profiles):
            for f in p.factors:
                rows.append((f"PC{c + 1}", float(self.inertia[c]), f, p.m_si[f], p.t_si[f] - p.m_si[f]))
        return pd.DataFrame(rows, columns=["component", "inertia", "factor", "main", "interaction"])

    def gsi_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "factor": list(self.factors),
            "GSI": [self.gsi[f] for f in self.factors],
            "GSI_main": [self.gsi_main[f] for f in self.factors],
        })


def pc_sensitivity(design: DesignMatrix, model: PCModel, n_keep: int = DEFAULT_N_KEEP) -> PCSensitivity:
    if model.scores.shape[0] != design.n_runs:
        raise ValueError(f"model has {model.scores.shape[0]} score rows, design has {design.n_runs} runs")
    n_keep = min(n_keep, model.n_components)
    if n_keep < 1:
        raise ValueError("n_keep must be positive")
    profiles = tuple(fit_many(design, model.scores[:, :n_keep]))
    inertia = model.inertia[:n_keep]
    total = inertia.sum()
    weights = inertia / total if total > 0 else np.zeros_like(inertia)
    factors = profiles[0].factors
    gsi = {f: float(sum(w * p.t_si[f] for w, p in zip(weights, profiles))) for f in factors}
    gsi_main = {f: float(sum(w * p.m_si[f] for w, p in zip(weights, profiles))) for f in factors}
    gsi_int = float(sum(w * p.i_tot for w, p in zip(weights, profiles)))
    return PCSensitivity(profiles, inertia, weights, gsi, gsi_main, gsi_int)


def aggregated_sensitivity(design: DesignMatrix, data: np.ndarray) -> SensitivityProfile:
    """Indexes of the summed per-column sums of squares: SS_term over all
    columns divided by the total SS over all columns."""
    batch = decompose(design, np.asarray(data, dtype=np.float64))
    total = float(batch.total_ss.sum())
    if total <= 0 or batch.degenerate.all():
        raise DegenerateData("all columns are constant; nothing to decompose")
    ss = np.where(batch.degenerate, 0.0, batch.total_ss)
    main = (batch.m_si * ss).sum(axis=1) / total
    pair = (batch.i_si * ss).sum(axis=1) / total
    total_idx = (batch.t_si * ss).sum(axis=1) / total
    factors = batch.factors
    return SensitivityProfile(
        factors=factors,
        pairs=batch.pairs,
        m_si={f: float(main[i]) for i, f in enumerate(factors)},
        i_si={p: float(pair[i]) for i, p in enumerate(batch.pairs)},
        t_si={f: float(total_idx[i]) for i, f in enumerate(factors)},
        i_tot=float(pair.sum()),
        total_ss=total,
        degenerate=False,
        residual=float(1.0 - main.sum() - pair.sum()),
        clamped=int(batch.clamped.sum()),
    )


def gsi_profile(sens: PCSensitivity) -> SensitivityProfile:
    """PCSensitivity folded into one profile (inertia-weighted per-component indexes)."""
    first = sens.profiles[0]
    i_si = {p: float(sum(w * prof.i_si[p] for w, prof in zip(sens.weights, sens.profiles))) for p in first.pairs}
    residual = 1.0 - sum(sens.gsi_main.values()) - sens.gsi_interactions
    return SensitivityProfile(first.factors, first.pairs, dict(sens.gsi_main), i_si, dict(sens.gsi),
                              sens.gsi_interactions, float(sum(p.total_ss for p in sens.profiles)),
                              all(p.degenerate for p in sens.profiles), residual)


def per_component_table(sens: PCSensitivity) -> List[Dict]:
    return [{"component": c + 1, "inertia": float(sens.inertia[c]), **p.to_dict()}
            for c, p in enumerate(sens.profiles)]
