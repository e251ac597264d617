"""
Saturated ANOVA sensitivity indexes for scalar, dynamic and spatial responses.

Provides:
- fit_saturated_anova(design, response) -> SensitivityProfile
- dynamic_sa(design, series) -> DynamicSI (one decomposition per time step)
- spatial_sa(design, maps) -> SpatialSI (one decomposition per pixel)
- conditional_variance_indexes(codes, response): brute-force Var(E[Y|X]) oracle
- profiles_frame / DynamicSI.to_frame / SpatialSI.to_frame: long CSV tables

Main effects and two-factor interactions are estimated from level and cell
means. On a design of strength >= 4 they are mutually orthogonal, and a
resolution-V design with 3^k runs leaves no residual, so the shares add up to 1.

Usage:
    profile = fit_saturated_anova(design, y)
    profile.t_si["K"], profile.i_tot
"""

import functools
import itertools
import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import InsufficientStrength, LengthMismatch
from .gf3design import FIELD_ORDER, DesignMatrix, design_strength

logger = logging.getLogger(__name__)

MAX_REQUIRED_STRENGTH = 4
DEGENERATE_RTOL = 1e-13
CLAMP_WARN = 1e-9
RSD_EPS = 1e-12
INTERACTIONS = "interactions"

STRENGTH_CACHE_SIZE = 32

Pair = Tuple[str, str]


class _DesignKey:
    """Hashes a design by its checksum so equal designs share one cache entry."""

    __slots__ = ("design", "checksum")

    def __init__(self, design: DesignMatrix):
        self.design = design
        self.checksum = design.checksum()

    def __hash__(self) -> int:
        return hash(self.checksum)

    def __eq__(self, other) -> bool:
        return isinstance(other, _DesignKey) and other.checksum == self.checksum


@functools.lru_cache(maxsize=STRENGTH_CACHE_SIZE)
def _cached_strength(key: _DesignKey, required: int) -> int:
    return design_strength(key.design, required)


def required_strength(design: DesignMatrix) -> int:
    return min(MAX_REQUIRED_STRENGTH, design.n_factors)


def _check_strength(design: DesignMatrix) -> None:
    required = required_strength(design)
    strength = _cached_strength(_DesignKey(design), required)
    if strength < required:
        raise InsufficientStrength(
            f"design strength {strength} < {required}: main effects and two-factor "
            "interactions would be confounded"
        )


@dataclass(frozen=True, eq=False)
class SensitivityProfile:
    """Variance shares of one response.

    m_si / t_si are keyed by factor id, i_si by (f, g) pairs with f before g in
    design order. residual = 1 - sum(mSI) - i_TOT (zero for saturated designs).
    """

    factors: Tuple[str, ...]
    pairs: Tuple[Pair, ...]
    m_si: Dict[str, float]
    i_si: Dict[Pair, float]
    t_si: Dict[str, float]
    i_tot: float
    total_ss: float
    degenerate: bool
    residual: float = 0.0
    clamped: int = 0

    def interaction_share(self, factor_id: str) -> float:
        """Half of the factor's pairwise interaction indexes; shares over all factors sum to i_TOT."""
        return 0.5 * sum(v for (f, g), v in self.i_si.items() if factor_id in (f, g))

    def dominant_factor(self) -> str:
        return _argmax_label(np.array([[self.t_si[f] for f in self.factors]]), np.array([self.i_tot]),
                             self.factors)[0]

    def to_dict(self) -> Dict:
        return {
            "factors": list(self.factors),
            "mSI": dict(self.m_si),
            "iSI": {f"{f}:{g}": v for (f, g), v in self.i_si.items()},
            "tSI": dict(self.t_si),
            "iTOT": self.i_tot,
            "total_SS": self.total_ss,
            "degenerate": self.degenerate,
            "residual": self.residual,
        }


@dataclass(frozen=True, eq=False)
class IndexBatch:
    """Indexes of m responses at once; arrays are (terms, m)."""

    factors: Tuple[str, ...]
    pairs: Tuple[Pair, ...]
    m_si: np.ndarray
    i_si: np.ndarray
    t_si: np.ndarray
    i_tot: np.ndarray
    total_ss: np.ndarray
    degenerate: np.ndarray
    residual: np.ndarray
    clamped: np.ndarray

    def profile(self, j: int) -> SensitivityProfile:
        return SensitivityProfile(
            factors=self.factors,
            pairs=self.pairs,
            m_si={f: float(self.m_si[i, j]) for i, f in enumerate(self.factors)},
            i_si={p: float(self.i_si[i, j]) for i, p in enumerate(self.pairs)},
            t_si={f: float(self.t_si[i, j]) for i, f in enumerate(self.factors)},
            i_tot=float(self.i_tot[j]),
            total_ss=float(self.total_ss[j]),
            degenerate=bool(self.degenerate[j]),
            residual=float(self.residual[j]),
            clamped=int(self.clamped[j]),
        )


def _one_hot(index: np.ndarray, n_cells: int) -> np.ndarray:
    out = np.zeros((index.shape[0], n_cells))
    out[np.arange(index.shape[0]), index] = 1.0
    return out


def _between_ss(indicator: np.ndarray, centered: np.ndarray, n_groups: int) -> np.ndarray:
    """Sum over groups of n_g * (group mean)^2 for centered responses; (blocks, m)."""
    counts = indicator.sum(axis=0)
    sums = indicator.T @ centered
    contrib = np.divide(sums ** 2, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return contrib.reshape(-1, n_groups, centered.shape[1]).sum(axis=1)


def decompose(design: DesignMatrix, responses: np.ndarray) -> IndexBatch:
    """ANOVA on every column of responses (n_runs x m)."""
    _check_strength(design)
    y = np.asarray(responses, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != design.n_runs:
        raise LengthMismatch(f"response has {y.shape[0]} rows, design has {design.n_runs} runs")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")

    codes = design.codes.astype(np.int64)
    n, k = codes.shape
    m = y.shape[1]
    centered = y - y.mean(axis=0)
    total_ss = (centered ** 2).sum(axis=0)
    scale = np.abs(y).max(axis=0) if n else np.zeros(m)
    degenerate = total_ss <= n * (DEGENERATE_RTOL * scale) ** 2

    q = FIELD_ORDER
    main_ind = np.hstack([_one_hot(codes[:, f], q) for f in range(k)])
    ss_main = _between_ss(main_ind, centered, q)

    pair_idx = list(itertools.combinations(range(k), 2))
    if pair_idx:
        cell_ind = np.hstack([_one_hot(codes[:, f] * q + codes[:, g], q * q) for f, g in pair_idx])
        ss_cells = _between_ss(cell_ind, centered, q * q)
        fi = np.array([f for f, _ in pair_idx])
        gi = np.array([g for _, g in pair_idx])
        ss_pair = ss_cells - ss_main[fi] - ss_main[gi]
    else:
        fi = gi = np.zeros(0, dtype=np.int64)
        ss_pair = np.zeros((0, m))

    safe_total = np.where(degenerate, 1.0, total_ss)
    m_si = np.where(degenerate, 0.0, ss_main / safe_total)
    i_si = np.where(degenerate, 0.0, ss_pair / safe_total)

    negative = i_si < 0
    worst = i_si.min() if i_si.size else 0.0
    if worst < -CLAMP_WARN:
        warnings.warn(
            f"clamped interaction index {worst:.3e} to 0; design may not be orthogonal",
            RuntimeWarning,
            stacklevel=3,
        )
    clamped = negative.sum(axis=0)
    i_si = np.maximum(i_si, 0.0)
    m_si = np.maximum(m_si, 0.0)

    t_si = m_si.copy()
    if pair_idx:
        np.add.at(t_si, fi, i_si)
        np.add.at(t_si, gi, i_si)
    i_tot = i_si.sum(axis=0)
    residual = np.where(degenerate, 0.0, 1.0 - m_si.sum(axis=0) - i_tot)

    ids = design.factor_ids
    return IndexBatch(
        factors=ids,
        pairs=tuple((ids[f], ids[g]) for f, g in pair_idx),
        m_si=m_si,
        i_si=i_si,
        t_si=t_si,
        i_tot=i_tot,
        total_ss=total_ss,
        degenerate=degenerate,
        residual=residual,
        clamped=clamped,
    )


def fit_saturated_anova(design: DesignMatrix, response: Sequence[float]) -> SensitivityProfile:
    y = np.asarray(response, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("response must be a vector with one value per run")
    return decompose(design, y).profile(0)


def fit_many(design: DesignMatrix, responses: np.ndarray) -> List[SensitivityProfile]:
    """One profile per column of an n_runs x m response matrix."""
    batch = decompose(design, responses)
    return [batch.profile(j) for j in range(batch.m_si.shape[1])]


def _argmax_label(t_si: np.ndarray, i_tot: np.ndarray, factors: Sequence[str]) -> List[str]:
    """Rows of t_si (cases x factors). Ties go to the lowest factor id;
    interactions win only when i_TOT strictly exceeds every tSI."""
    order = np.argsort(np.asarray(factors), kind="stable")
    ranked = t_si[:, order]
    best = order[np.argmax(ranked, axis=1)]
    best_value = t_si[np.arange(t_si.shape[0]), best]
    return [INTERACTIONS if i_tot[c] > best_value[c] else factors[best[c]] for c in range(t_si.shape[0])]


def _series_frame(batch: IndexBatch, key: str, labels: np.ndarray) -> pd.DataFrame:
    parts = []
    for i, f in enumerate(batch.factors):
        parts.append(pd.DataFrame({key: labels, "term": f, "index": "mSI", "value": batch.m_si[i]}))
        parts.append(pd.DataFrame({key: labels, "term": f, "index": "tSI", "value": batch.t_si[i]}))
    for i, (f, g) in enumerate(batch.pairs):
        parts.append(pd.DataFrame({key: labels, "term": f"{f}:{g}", "index": "iSI", "value": batch.i_si[i]}))
    parts.append(pd.DataFrame({key: labels, "term": INTERACTIONS, "index": "iTOT", "value": batch.i_tot}))
    return pd.concat(parts, ignore_index=True)


@dataclass(frozen=True, eq=False)
class DynamicSI:
    time: np.ndarray
    batch: IndexBatch

    @property
    def factors(self) -> Tuple[str, ...]:
        return self.batch.factors

    @property
    def m_si(self) -> np.ndarray:
        """(n_time, n_factors)"""
        return self.batch.m_si.T

    @property
    def t_si(self) -> np.ndarray:
        return self.batch.t_si.T

    @property
    def i_tot(self) -> np.ndarray:
        return self.batch.i_tot

    @property
    def degenerate(self) -> np.ndarray:
        return self.batch.degenerate

    def profile(self, step: int) -> SensitivityProfile:
        return self.batch.profile(step)

    @property
    def profiles(self) -> List[SensitivityProfile]:
        return [self.batch.profile(j) for j in range(self.time.shape[0])]

    def dominant(self) -> List[str]:
        return _argmax_label(self.t_si, self.i_tot, self.factors)

    def window_dominant(self, mask: np.ndarray) -> Optional[str]:
        """Dominant label of the mean tSI and i_TOT over the masked, non-degenerate
        steps; same label set as SensitivityProfile.dominant_factor. None when
        no step qualifies."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[0] != self.time.shape[0]:
            raise LengthMismatch(f"mask covers {mask.shape[0]} steps, series {self.time.shape[0]}")
        keep = mask & ~self.degenerate
        if not keep.any():
            return None
        t_si = self.t_si[keep].mean(axis=0, keepdims=True)
        return _argmax_label(t_si, np.array([self.i_tot[keep].mean()]), self.factors)[0]

    def summary(self) -> pd.DataFrame:
        """Mean and standard deviation of each main index over the non-degenerate steps."""
        keep = ~self.degenerate
        values = self.m_si[keep] if keep.any() else np.zeros((1, len(self.factors)))
        return pd.DataFrame({
            "term": list(self.factors) + [INTERACTIONS],
            "mean": np.append(values.mean(axis=0), self.i_tot[keep].mean() if keep.any() else 0.0),
            "std": np.append(values.std(axis=0), self.i_tot[keep].std() if keep.any() else 0.0),
        })

    def to_frame(self) -> pd.DataFrame:
        return _series_frame(self.batch, "time", self.time)


def dynamic_sa(design: DesignMatrix, series: np.ndarray, time: Optional[Sequence[int]] = None) -> DynamicSI:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ValueError("series must be n_runs x n_time")
    labels = np.arange(series.shape[1]) if time is None else np.asarray(time)
    if labels.shape[0] != series.shape[1]:
        raise LengthMismatch(f"{labels.shape[0]} time labels for {series.shape[1]} steps")
    batch = decompose(design, series)
    logger.debug("dynamic SA: %d steps, %d degenerate", series.shape[1], int(batch.degenerate.sum()))
    return DynamicSI(labels, batch)


@dataclass(frozen=True, eq=False)
class SpatialSI:
    """Per-pixel maps. argmax holds a factor id or "interactions"; rsd is the
    coefficient of variation across runs, zero where rsd_flag marks |mean| < eps."""

    batch: IndexBatch
    mean: np.ndarray
    rsd: np.ndarray
    rsd_flag: np.ndarray
    argmax: Tuple[str, ...]

    @property
    def factors(self) -> Tuple[str, ...]:
        return self.batch.factors

    @property
    def t_si(self) -> Dict[str, np.ndarray]:
        return {f: self.batch.t_si[i] for i, f in enumerate(self.factors)}

    @property
    def m_si(self) -> Dict[str, np.ndarray]:
        return {f: self.batch.m_si[i] for i, f in enumerate(self.factors)}

    @property
    def i_tot(self) -> np.ndarray:
        return self.batch.i_tot

    @property
    def degenerate(self) -> np.ndarray:
        return self.batch.degenerate

    def layers(self) -> Dict[str, np.ndarray]:
        layers: Dict[str, np.ndarray] = {"mean": self.mean, "rsd": self.rsd, "rsd_flag": self.rsd_flag,
                                         "argmax": np.array(self.argmax, dtype=object),
                                         "degenerate": self.degenerate, "iTOT": self.i_tot}
        for f, values in self.t_si.items():
            layers[f"tSI_{f}"] = values
        return layers

    def to_frame(self) -> pd.DataFrame:
        return _series_frame(self.batch, "pixel", np.arange(self.mean.shape[0]))


def spatial_sa(design: DesignMatrix, maps: np.ndarray) -> SpatialSI:
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 2:
        raise ValueError("maps must be n_runs x n_pixels")
    batch = decompose(design, maps)
    mean = maps.mean(axis=0)
    std = maps.std(axis=0)
    eps = RSD_EPS * np.abs(mean).max()
    flag = np.abs(mean) <= eps
    rsd = np.divide(std, np.abs(mean), out=np.zeros_like(std), where=~flag)
    argmax = tuple(_argmax_label(batch.t_si.T, batch.i_tot, batch.factors))
    logger.debug("spatial SA: %d pixels, %d degenerate", maps.shape[1], int(batch.degenerate.sum()))
    return SpatialSI(batch, mean, rsd, flag, argmax)


def conditional_variance_indexes(codes: np.ndarray, response: Sequence[float],
                                 factor_ids: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Var(E[Y|X_f]) / Var(Y) per factor and the pairwise excess
    Var(E[Y|X_f, X_g]) / Var(Y) - main_f - main_g, computed by grouping."""
    codes = np.asarray(codes)
    y = np.asarray(response, dtype=np.float64)
    ids = list(factor_ids) if factor_ids is not None else [str(j) for j in range(codes.shape[1])]
    frame = pd.DataFrame(codes, columns=ids)
    frame["_y"] = y
    var_y = float(np.var(y))
    if var_y == 0:
        return {}

    def explained(columns: List[str]) -> float:
        grouped = frame.groupby(columns)["_y"]
        cond_mean = grouped.transform("mean").to_numpy()
        return float(np.mean((cond_mean - y.mean()) ** 2)) / var_y

    out = {f: explained([f]) for f in ids}
    for f, g in itertools.combinations(ids, 2):
        out[f"{f}:{g}"] = explained([f, g]) - out[f] - out[g]
    return out


def profiles_frame(profiles: Mapping[str, SensitivityProfile]) -> pd.DataFrame:
    """Long table: response_id, term, index (mSI/iSI/tSI/iTOT), value."""
    rows = []
    for rid, p in profiles.items():
        for f in p.factors:
            rows.append((rid, f, "mSI", p.m_si[f]))
            rows.append((rid, f, "tSI", p.t_si[f]))
        for (f, g), v in p.i_si.items():
            rows.append((rid, f"{f}:{g}", "iSI", v))
        rows.append((rid, INTERACTIONS, "iTOT", p.i_tot))
    return pd.DataFrame(rows, columns=["response_id", "term", "index", "value"])
