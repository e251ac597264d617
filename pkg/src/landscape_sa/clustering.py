"""
Clustering and synthesis of sensitivity results.

Provides:
- kmeans(X, M, seed): k-means++ seeding, Lloyd iterations, best of 10 restarts.
- ward(X) / cut(dendrogram, M): Ward agglomeration and tree cuts.
- elbow(explained): cluster count at the largest curvature drop.
- minimal_agreement_M(X, M_max, seed): cluster count on which k-means and Ward agree
  with the sharpest drop in within-cluster SS.
- adjusted_rand, chi_square_association, bootstrap_stability.
- cluster_series / factor_associations: run-level time-series clusters and
  their association with design factors.
- si_feature_matrix / synthesize: outcome clusters over SI profiles, PCA
  biplot geometry and the cluster summary table.

Usage:
    names, features, X = si_feature_matrix(profiles, mode="per_factor")
    result = synthesize(X, M_max=8, seed=1, outcomes=names, features=features)
    result.cluster_summary()
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster import hierarchy
from scipy.special import gammaincc
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import adjusted_rand_score
from sklearn.preprocessing import StandardScaler

from .anova_sa import SensitivityProfile
from .errors import DegenerateTable, ObjectMismatch, TooFewPoints
from .gf3design import DesignMatrix
from .mv_sa import PCModel, pca

logger = logging.getLogger(__name__)

N_RESTARTS = 10
MAX_ITER = 300
WCSS_RTOL = 1e-9
JACCARD_THRESHOLD = 0.75
MIN_BOOTSTRAP = 100
LOW_EXPECTED = 5.0
SIGNIFICANCE = 0.05
ANGLE_TOLERANCE = 30.0
PROFILE_TOLERANCE = 1e-6
EXACT_FIT = 1e-12
FEATURE_MODES = ("per_factor", "ensemble")
PLANES = ((0, 1), (0, 2), (1, 2))


def canonical_labels(labels: Sequence[int]) -> np.ndarray:
    """Relabel to 1..M in order of first appearance."""
    labels = np.asarray(labels)
    mapping: Dict = {}
    out = np.empty(labels.shape[0], dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out[i] = mapping[lab]
    return out


def _wcss(X: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for lab in np.unique(labels):
        members = X[labels == lab]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def explained_inertia(X: np.ndarray, labels: np.ndarray) -> float:
    """Between-cluster SS / total SS; 0 when the data have no spread."""
    X = np.asarray(X, dtype=np.float64)
    tss = float(((X - X.mean(axis=0)) ** 2).sum())
    if tss <= 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - _wcss(X, labels) / tss)))


@dataclass(frozen=True, eq=False)
class Partition:
    labels: np.ndarray
    M: int
    method: str
    inertia_explained: float
    seed: Optional[int] = None
    repairs: int = 0
    objects: Optional[Tuple[str, ...]] = None

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def to_dict(self) -> Dict:
        return {
            "labels": [int(v) for v in self.labels],
            "M": self.M,
            "method": self.method,
            "inertia_explained": self.inertia_explained,
            "seed": self.seed,
            "repairs": self.repairs,
            "objects": None if self.objects is None else list(self.objects),
        }


def _partition(X: np.ndarray, labels: np.ndarray, method: str, seed: Optional[int], repairs: int = 0,
               objects: Optional[Sequence[str]] = None) -> Partition:
    labels = canonical_labels(labels)
    return Partition(labels, int(labels.max()), method, explained_inertia(X, labels), seed, repairs,
                     None if objects is None else tuple(objects))


def _check_data(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty n x d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    return X


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> Tuple[np.ndarray, float, int]:
    n, M = X.shape[0], centers.shape[0]
    centers = centers.copy()
    labels = None
    prev = np.inf
    repairs = 0
    wcss = np.inf
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assigned = d2.argmin(axis=1)
        counts = np.bincount(assigned, minlength=M)
        for empty in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), assigned]
            movable = counts[assigned] > 1
            far = int(np.argmax(np.where(movable, own, -1.0)))
            counts[assigned[far]] -= 1
            assigned[far] = empty
            counts[empty] = 1
            centers[empty] = X[far]
            repairs += 1
            warnings.warn(f"k-means cluster {empty} emptied; reseeded at the farthest point", RuntimeWarning,
                          stacklevel=3)
        for c in range(M):
            centers[c] = X[assigned == c].mean(axis=0)
        wcss = float(((X - centers[assigned]) ** 2).sum())
        assert wcss <= prev + WCSS_RTOL * max(1.0, prev), "Lloyd iteration increased within-cluster SS"
        prev = wcss
        if labels is not None and np.array_equal(assigned, labels):
            break
        labels = assigned
    return assigned, wcss, repairs


def kmeans(X: np.ndarray, M: int, seed: int, n_init: int = N_RESTARTS, max_iter: int = MAX_ITER,
           objects: Optional[Sequence[str]] = None) -> Partition:
    X = _check_data(X)
    if not 1 <= M <= X.shape[0]:
        raise ValueError(f"M must lie in 1..{X.shape[0]}, got {M}")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        state = int(child.generate_state(1)[0])
        centers, _ = kmeans_plusplus(X, n_clusters=M, random_state=state)
        labels, wcss, repairs = _lloyd(X, centers, max_iter)
        if best is None or wcss < best[1]:
            best = (labels, wcss, repairs)
    labels, wcss, repairs = best
    logger.debug("k-means M=%d: WCSS %.6g after %d restarts", M, wcss, n_init)
    return _partition(X, labels, "kmeans", seed, repairs, objects)


class Merge(NamedTuple):
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Ward merge sequence; height is the within-cluster SS gained by the merge
    (half the squared Ward linkage distance)."""

    linkage: np.ndarray
    data: np.ndarray
    objects: Optional[Tuple[str, ...]] = None

    @property
    def n_leaves(self) -> int:
        return int(self.data.shape[0])

    @property
    def merges(self) -> List[Merge]:
        return [Merge(int(a), int(b), float(d) ** 2 / 2.0, int(s)) for a, b, d, s in self.linkage]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([m._asdict() for m in self.merges], columns=list(Merge._fields))


def ward(X: np.ndarray, objects: Optional[Sequence[str]] = None) -> Dendrogram:
    X = _check_data(X)
    if X.shape[0] < 2:
        raise ValueError("Ward clustering needs at least two objects")
    return Dendrogram(hierarchy.ward(X), X, None if objects is None else tuple(objects))


def cut(dendrogram: Dendrogram, M: int) -> Partition:
    if not 1 <= M <= dendrogram.n_leaves:
        raise ValueError(f"M must lie in 1..{dendrogram.n_leaves}, got {M}")
    labels = hierarchy.cut_tree(dendrogram.linkage, n_clusters=M).ravel()
    return _partition(dendrogram.data, labels, "ward_cut", None, 0, dendrogram.objects)


class ElbowResult(NamedTuple):
    M: int
    has_elbow: bool


def elbow(explained: Sequence[float], m_values: Optional[Sequence[int]] = None) -> ElbowResult:
    """M with the most negative second difference of the explained-variance curve."""
    e = np.asarray(explained, dtype=np.float64)
    if e.shape[0] < 3:
        raise TooFewPoints(f"elbow needs at least 3 cluster counts, got {e.shape[0]}")
    ms = list(m_values) if m_values is not None else list(range(1, e.shape[0] + 1))
    if len(ms) != e.shape[0]:
        raise ValueError("m_values and explained differ in length")
    if np.any(np.diff(e) < -1e-12):
        raise ValueError("explained variance must be non-decreasing in M")
    drop = -(e[:-2] - 2.0 * e[1:-1] + e[2:])
    scale = max(1e-12, float(np.abs(e).max()))
    best = int(np.argmax(drop))
    if drop[best] <= 1e-9 * scale:
        return ElbowResult(ms[0], False)
    return ElbowResult(ms[best + 1], True)


def adjusted_rand(p1: Partition, p2: Partition) -> float:
    if p1.n != p2.n:
        raise ObjectMismatch(f"partitions cover {p1.n} and {p2.n} objects")
    if p1.objects is not None and p2.objects is not None and p1.objects != p2.objects:
        raise ObjectMismatch("partitions cover different objects")
    return float(adjusted_rand_score(p1.labels, p2.labels))


def minimal_agreement_M(X: np.ndarray, M_max: int, seed: int) -> Optional[int]:
    """Cluster count on which k-means and the Ward cut give the same partition.

    On separated data every coarsening of the planted partition is also agreed
    on, and so is a split of one planted cluster. Among the agreeing levels the
    one whose Ward cut removes the largest share of the remaining within-cluster
    SS (ratio WCSS(M-1) / WCSS(M)) is reported, the smallest M on ties. The
    first agreeing level that explains all variance wins outright. Returns None
    when no M in 2..M_max agrees.
    """
    X = _check_data(X)
    if not 2 <= M_max <= X.shape[0]:
        raise ValueError(f"M_max must lie in 2..{X.shape[0]}, got {M_max}")
    tree = ward(X)
    wcss = {1: _wcss(X, np.zeros(X.shape[0], dtype=np.int64))}
    best: Optional[Tuple[float, int]] = None
    for M in range(2, M_max + 1):
        hc = cut(tree, M)
        wcss[M] = _wcss(X, hc.labels)
        km = kmeans(X, M, seed)
        if not np.array_equal(km.labels, hc.labels):
            continue
        if hc.inertia_explained >= 1.0 or wcss[M] <= EXACT_FIT * wcss[1]:
            logger.info("k-means and Ward agree at M=%d with every point explained", M)
            return M
        gain = wcss[M - 1] / wcss[M]
        logger.debug("k-means and Ward agree at M=%d (WCSS ratio %.4g)", M, gain)
        if best is None or gain > best[0]:
            best = (gain, M)
    if best is None:
        logger.info("k-means and Ward disagree for every M in 2..%d", M_max)
        return None
    logger.info("k-means and Ward agree at M=%d", best[1])
    return best[1]


@dataclass(frozen=True, eq=False)
class AssociationTest:
    table: pd.DataFrame
    chi2: float
    df: int
    p_value: float
    low_expected_flag: bool

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE

    def to_dict(self) -> Dict:
        return {
            "table": self.table.to_numpy().tolist(),
            "clusters": [int(c) for c in self.table.index],
            "levels": [str(v) for v in self.table.columns],
            "chi2": self.chi2,
            "df": self.df,
            "p_value": self.p_value,
            "low_expected_flag": self.low_expected_flag,
        }


def chi_square_association(partition: Partition, factor_column: Sequence) -> AssociationTest:
    levels = np.asarray(factor_column)
    if levels.shape[0] != partition.n:
        raise ObjectMismatch(f"factor column has {levels.shape[0]} entries, partition {partition.n}")
    table = pd.crosstab(pd.Series(partition.labels, name="cluster"), pd.Series(levels, name="level"))
    if table.shape[0] < 2 or table.shape[1] < 2:
        raise DegenerateTable(f"contingency table is {table.shape[0]} x {table.shape[1]}")
    observed = table.to_numpy(dtype=np.float64)
    n = observed.sum()
    expected = observed.sum(axis=1, keepdims=True) * observed.sum(axis=0, keepdims=True) / n
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    df = (observed.shape[0] - 1) * (observed.shape[1] - 1)
    p_value = float(gammaincc(df / 2.0, chi2 / 2.0))
    low = bool((expected < LOW_EXPECTED).any())
    if low:
        logger.warning("chi-square table has expected counts below %g", LOW_EXPECTED)
    return AssociationTest(table, chi2, df, p_value, low)


def bootstrap_stability(X: np.ndarray, M: int, B: int, seed: int, method: str = "ward") -> np.ndarray:
    """Share of B bootstrap resamples in which each original cluster reappears
    (best-matching Jaccard >= 0.75 among the resample's clusters)."""
    X = _check_data(X)
    if B < MIN_BOOTSTRAP:
        raise ValueError(f"B must be at least {MIN_BOOTSTRAP}, got {B}")
    if method not in ("ward", "kmeans"):
        raise ValueError(f"method must be 'ward' or 'kmeans', got {method!r}")

    def cluster(data: np.ndarray, m: int) -> np.ndarray:
        if method == "kmeans":
            return kmeans(data, m, seed).labels
        return cut(ward(data), m).labels

    n = X.shape[0]
    original = cluster(X, M)
    hits = np.zeros(M)
    rng = np.random.default_rng(seed)
    for _ in range(B):
        sample = rng.integers(0, n, size=n)
        unique = np.unique(sample)
        m = min(M, unique.shape[0])
        labels = cluster(X[unique], m) if m >= 2 else np.ones(unique.shape[0], dtype=np.int64)
        found = [set(unique[labels == c].tolist()) for c in np.unique(labels)]
        for c in range(1, M + 1):
            present = set(np.flatnonzero(original == c).tolist()) & set(unique.tolist())
            if not present:
                continue
            best = max(len(present & d) / len(present | d) for d in found)
            if best >= JACCARD_THRESHOLD:
                hits[c - 1] += 1
    return hits / B


def cluster_series(series: np.ndarray, M: int = 3, seed: int = 0) -> Partition:
    """k-means over runs on per-step standardized curves."""
    series = _check_data(series)
    return kmeans(StandardScaler().fit_transform(series), M, seed)


def factor_associations(partition: Partition, design: DesignMatrix) -> Dict[str, AssociationTest]:
    if design.n_runs != partition.n:
        raise ObjectMismatch(f"partition has {partition.n} objects, design {design.n_runs} runs")
    out = {}
    for fid in design.factor_ids:
        try:
            out[fid] = chi_square_association(partition, design.column(fid))
        except DegenerateTable:
            logger.debug("factor %s: degenerate contingency table", fid)
    return out


def si_feature_matrix(
    profiles: Mapping[str, SensitivityProfile], mode: str = "per_factor"
) -> Tuple[List[str], List[str], np.ndarray]:
    """Outcomes x features matrix of SI shares.

    per_factor: mSI_f and the interaction share 1/2 * sum_g iSI_fg per factor.
    ensemble: mSI_f per factor and i_TOT.
    A trailing "residual" feature is added when any profile comes from an
    unsaturated design, so rows always sum to 1.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"mode must be one of {FEATURE_MODES}, got {mode!r}")
    names = list(profiles)
    if not names:
        raise ValueError("no profiles to synthesize")
    factors = profiles[names[0]].factors
    if mode == "per_factor":
        features = [f"mSI_{f}" for f in factors] + [f"iSI_{f}" for f in factors]
    else:
        features = [f"mSI_{f}" for f in factors] + ["iTOT"]
    rows = []
    for name in names:
        p = profiles[name]
        if p.factors != factors:
            raise ValueError(f"profile {name} covers factors {p.factors}, expected {factors}")
        row = [p.m_si[f] for f in factors]
        if mode == "per_factor":
            row += [p.interaction_share(f) for f in factors]
        else:
            row.append(p.i_tot)
        rows.append(row)
    residual = [profiles[name].residual for name in names]
    if any(abs(r) > PROFILE_TOLERANCE for r in residual):
        features.append("residual")
        rows = [row + [r] for row, r in zip(rows, residual)]
    return names, features, np.array(rows, dtype=np.float64)


class ArrowPair(NamedTuple):
    first: str
    second: str
    plane: Tuple[int, int]
    angle: Optional[float]
    relation: str


def classify_angle(angle: Optional[float], tolerance: float = ANGLE_TOLERANCE) -> str:
    if angle is None:
        return "undefined"
    if angle < tolerance:
        return "parallel"
    if angle > 180.0 - tolerance:
        return "antiparallel"
    if abs(angle - 90.0) <= tolerance:
        return "orthogonal"
    return "unclassified"


def _angle(u: np.ndarray, v: np.ndarray) -> Optional[float]:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return None
    cos = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return float(np.degrees(np.arccos(cos)))


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    outcomes: Tuple[str, ...]
    features: Tuple[str, ...]
    profiles: np.ndarray
    M: int
    agreement: bool
    partition: Partition
    explained: Dict[int, float]
    elbow: Optional[ElbowResult]
    model: PCModel
    coordinates: np.ndarray
    arrows: np.ndarray
    plane_inertia: Dict[Tuple[int, int], float]
    arrow_pairs: Tuple[ArrowPair, ...]
    stability: np.ndarray
    dendrogram: Dendrogram = field(repr=False)

    def cluster_summary(self, top: int = 3) -> pd.DataFrame:
        """Per cluster: member outcomes and the features with the largest mean share."""
        rows = []
        for c in range(1, self.M + 1):
            idx = self.partition.members(c)
            mean = self.profiles[idx].mean(axis=0)
            order = np.argsort(-mean, kind="stable")[:top]
            rows.append({
                "cluster": c,
                "n_outcomes": int(idx.shape[0]),
                "outcomes": ";".join(self.outcomes[i] for i in idx),
                "dominant": ";".join(f"{self.features[j]}={mean[j]:.3f}" for j in order),
                "stability": float(self.stability[c - 1]) if self.stability.size else None,
            })
        return pd.DataFrame(rows)

    def biplot_frames(self) -> Dict[Tuple[int, int], Tuple[pd.DataFrame, pd.DataFrame]]:
        """Per plane: outcome coordinates (with cluster) and factor arrows."""
        out = {}
        for plane in self.plane_inertia:
            a, b = plane
            points = pd.DataFrame({
                "outcome": list(self.outcomes),
                "cluster": self.partition.labels,
                f"PC{a + 1}": self.coordinates[:, a],
                f"PC{b + 1}": self.coordinates[:, b],
            })
            arrows = pd.DataFrame({
                "feature": list(self.features),
                f"PC{a + 1}": self.arrows[:, a],
                f"PC{b + 1}": self.arrows[:, b],
            })
            out[plane] = (points, arrows)
        return out

    def to_dict(self) -> Dict:
        return {
            "outcomes": list(self.outcomes),
            "features": list(self.features),
            "M": self.M,
            "agreement": self.agreement,
            "partition": self.partition.to_dict(),
            "explained": {str(m): v for m, v in self.explained.items()},
            "elbow": None if self.elbow is None else self.elbow._asdict(),
            "inertia": self.model.inertia,
            "plane_inertia": {f"PC{a + 1}-PC{b + 1}": v for (a, b), v in self.plane_inertia.items()},
            "arrows": {f: self.arrows[i] for i, f in enumerate(self.features)},
            "arrow_pairs": [
                {"first": p.first, "second": p.second, "plane": f"PC{p.plane[0] + 1}-PC{p.plane[1] + 1}",
                 "angle": p.angle, "relation": p.relation}
                for p in self.arrow_pairs
            ],
            "stability": self.stability,
        }


def synthesize(
    profiles: np.ndarray,
    M_max: int,
    seed: int,
    outcomes: Optional[Sequence[str]] = None,
    features: Optional[Sequence[str]] = None,
    n_bootstrap: int = MIN_BOOTSTRAP,
    arrow_features: Optional[Sequence[str]] = None,
) -> SynthesisResult:
    """Cluster outcomes by SI profile and project them with their factor arrows.

    arrow_features restricts the classified arrow pairs (default: all features).
    """
    X = _check_data(profiles)
    n, d = X.shape
    outcomes = tuple(outcomes) if outcomes is not None else tuple(f"outcome_{i}" for i in range(n))
    features = tuple(features) if features is not None else tuple(f"feature_{j}" for j in range(d))
    if len(outcomes) != n or len(features) != d:
        raise ValueError("outcome and feature labels must match the profile matrix")
    sums = X.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROFILE_TOLERANCE):
        raise ValueError(f"profile rows must sum to 1, got range [{sums.min():.6f}, {sums.max():.6f}]")
    if n < 2:
        raise ValueError("synthesis needs at least two outcomes")
    M_max = min(M_max, n)

    Z = StandardScaler().fit_transform(X)
    model = pca(Z)
    n_comp = min(3, model.n_components)
    coordinates = np.zeros((n, 3))
    coordinates[:, :n_comp] = model.scores[:, :n_comp]
    arrows = np.zeros((d, 3))
    arrows[:, :n_comp] = model.loadings[:, :n_comp] * model.singular_values[:n_comp] / np.sqrt(n)
    full_inertia = np.zeros(3)
    full_inertia[:n_comp] = model.inertia[:n_comp]
    plane_inertia = {plane: float(full_inertia[plane[0]] + full_inertia[plane[1]]) for plane in PLANES}

    tree = ward(Z, outcomes)
    explained = {m: cut(tree, m).inertia_explained for m in range(1, M_max + 1)}
    elbow_result = elbow(list(explained.values()), list(explained)) if len(explained) >= 3 else None

    chosen = minimal_agreement_M(Z, M_max, seed) if M_max >= 2 else None
    agreement = chosen is not None
    if chosen is None:
        chosen = elbow_result.M if elbow_result is not None else min(2, M_max)
        logger.warning("no agreeing cluster count; falling back to M=%d", chosen)
    partition = cut(tree, chosen)

    picked = [features.index(f) for f in arrow_features] if arrow_features is not None else range(d)
    pairs = []
    for i, j in itertools.combinations(picked, 2):
        for plane in PLANES:
            angle = _angle(arrows[i, list(plane)], arrows[j, list(plane)])
            pairs.append(ArrowPair(features[i], features[j], plane, angle, classify_angle(angle)))

    stability = (bootstrap_stability(Z, chosen, n_bootstrap, seed)
                 if chosen >= 2 and n > chosen else np.ones(chosen))
    logger.info("synthesis: %d outcomes, M=%d (agreement=%s), PC1-PC2 inertia %.3f",
                n, chosen, agreement, plane_inertia[(0, 1)])
    return SynthesisResult(outcomes, features, X, chosen, agreement, partition, explained, elbow_result,
                           model, coordinates, arrows, plane_inertia, tuple(pairs), stability, tree)
