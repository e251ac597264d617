"""
Regular 3-level fractional factorial designs over GF(3).

Provides:
- generate_regular_design: depth-first generator-column search for a 3^n_basic-run
  design whose defining-contrast subgroup has a given minimum word length.
- word_length_pattern: enumerate the defining-contrast subgroup of a regular design.
- verify_strength: model-free orthogonal-array strength check over all projections.
- rao_bound: minimum run count of a 3-level orthogonal array of given strength.

A run index enumerates the basic columns in lexicographic order (first basic
column varies slowest); an added column with generator g takes the value
<basic_row, g> mod 3.

Usage:
    design = generate_regular_design(11, 5, 5, seed=1)
    report = word_length_pattern(design)        # resolution 5, strength 4
    check = verify_strength(design, 4)          # check.ok is True
"""

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import InfeasibleDesign, NotRegular
from .factors import FACTOR_IDS, FactorSpec, by_id

logger = logging.getLogger(__name__)

FIELD_ORDER = 3
DEFAULT_CANDIDATE_BUDGET = 10 ** 6
DEFAULT_RESTARTS = 8
RESOLUTION_INFINITE = math.inf


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Runs x factors array of level codes in {0, 1, 2}.

    `generators` (n_factors x n_basic) holds, for a regular design, the GF(3)
    exponent vector of every column over the basic columns; basic columns are
    unit vectors.
    """

    codes: np.ndarray
    factor_ids: Tuple[str, ...]
    generators: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"design codes must be 2-D, got shape {codes.shape}")
        if codes.shape[1] != len(self.factor_ids):
            raise ValueError(
                f"design has {codes.shape[1]} columns but {len(self.factor_ids)} factor ids"
            )
        if len(set(self.factor_ids)) != len(self.factor_ids):
            raise ValueError("factor ids must be unique within a design")
        if codes.size and (codes.min() < 0 or codes.max() > 2):
            raise ValueError("design codes must lie in {0, 1, 2}")
        codes = codes.astype(np.int8)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "factor_ids", tuple(self.factor_ids))
        if self.generators is not None:
            gens = np.asarray(self.generators, dtype=np.int8) % FIELD_ORDER
            if gens.shape[0] != codes.shape[1]:
                raise ValueError("generators need one row per design column")
            gens.setflags(write=False)
            object.__setattr__(self, "generators", gens)

    @property
    def n_runs(self) -> int:
        return int(self.codes.shape[0])

    @property
    def n_factors(self) -> int:
        return int(self.codes.shape[1])

    @property
    def n_basic(self) -> Optional[int]:
        return None if self.generators is None else int(self.generators.shape[1])

    @property
    def is_regular(self) -> bool:
        return self.generators is not None

    def column(self, factor_id: str) -> np.ndarray:
        return self.codes[:, self.factor_ids.index(factor_id)]

    def is_balanced(self) -> bool:
        if self.n_runs % FIELD_ORDER:
            return False
        target = self.n_runs // FIELD_ORDER
        return all(
            np.all(np.bincount(self.codes[:, j], minlength=FIELD_ORDER) == target)
            for j in range(self.n_factors)
        )

    def checksum(self) -> str:
        """sha256 over factor ids and codes; ties tensors to the design that produced them."""
        h = hashlib.sha256()
        h.update(",".join(self.factor_ids).encode("utf-8"))
        h.update(str(self.codes.shape).encode("utf-8"))
        h.update(np.ascontiguousarray(self.codes, dtype=np.int8).tobytes())
        return h.hexdigest()

    def permuted(self, order: Sequence[int]) -> "DesignMatrix":
        return DesignMatrix(self.codes[np.asarray(order)], self.factor_ids, self.generators, self.seed)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.codes.astype(int), columns=list(self.factor_ids))

    def to_physical(self, factors: Sequence[FactorSpec]) -> pd.DataFrame:
        """Substitute physical level values for codes (companion export)."""
        lookup = by_id(factors)
        data = {}
        for j, fid in enumerate(self.factor_ids):
            if fid not in lookup:
                raise ValueError(f"no factor spec for design column {fid}")
            levels = lookup[fid].levels
            data[fid] = [levels[c] for c in self.codes[:, j]]
        return pd.DataFrame(data, columns=list(self.factor_ids))

    def to_csv(self, path: Union[str, Path], factors: Optional[Sequence[FactorSpec]] = None) -> List[Path]:
        """Write the code CSV and, when `factors` is given, the physical companion CSV."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        written = [path]
        if factors is not None:
            physical = path.with_name(path.stem + "_physical" + path.suffix)
            self.to_physical(factors).to_csv(physical, index=False)
            written.append(physical)
        return written

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DesignMatrix":
        frame = pd.read_csv(path)
        return cls(frame.to_numpy(dtype=np.int8), tuple(frame.columns))

    def to_dict(self) -> Dict:
        return {
            "n_runs": self.n_runs,
            "n_factors": self.n_factors,
            "factor_ids": list(self.factor_ids),
            "generators": None if self.generators is None else self.generators.tolist(),
            "seed": self.seed,
            "checksum": self.checksum(),
        }


@dataclass(frozen=True)
class StrengthReport:
    strength: int
    resolution: float
    word_length_pattern: Dict[int, int]
    checked_projections: int

    def to_dict(self) -> Dict:
        return {
            "strength": self.strength,
            "resolution": "infinite" if math.isinf(self.resolution) else int(self.resolution),
            "word_length_pattern": {str(k): v for k, v in sorted(self.word_length_pattern.items())},
            "checked_projections": self.checked_projections,
        }


class StrengthViolation(NamedTuple):
    columns: Tuple[int, ...]
    min_count: int
    max_count: int


class StrengthCheck(NamedTuple):
    ok: bool
    violations: List[StrengthViolation]


# GF(3) vector helpers. A vector of length k is encoded as its base-3 integer
# with the first coordinate most significant, which matches product() order.


def _all_vectors(k: int) -> np.ndarray:
    return np.array(list(itertools.product(range(FIELD_ORDER), repeat=k)), dtype=np.int64).reshape(-1, k)


def _powers(k: int) -> np.ndarray:
    return FIELD_ORDER ** np.arange(k - 1, -1, -1, dtype=np.int64)


def _is_normalized(v: Sequence[int]) -> bool:
    for x in v:
        if x:
            return x == 1
    return False


def rao_bound(n_factors: int, strength: int, levels: int = FIELD_ORDER) -> int:
    """Minimum number of runs of an OA(N, n_factors, levels, strength)."""
    if strength < 0 or n_factors < 1:
        raise ValueError("rao_bound needs strength >= 0 and n_factors >= 1")
    u, odd = divmod(strength, 2)
    total = sum(comb(n_factors, i) * (levels - 1) ** i for i in range(u + 1))
    if odd:
        total += comb(n_factors - 1, u) * (levels - 1) ** (u + 1)
    return total


class _GeneratorSearch:
    """Depth-first search for added columns keeping every `strength` columns independent.

    `reach[j]` marks every vector expressible as a combination of at most j of
    the chosen columns; a candidate is admissible iff it is outside
    reach[strength - 1].
    """

    def __init__(self, n_basic: int, n_added: int, strength: int, budget: int):
        self.k = n_basic
        self.n_added = n_added
        self.strength = strength
        self.budget = budget
        self.nodes = 0
        self.vectors = _all_vectors(n_basic)
        self.powers = _powers(n_basic)
        reach = [np.zeros(len(self.vectors), dtype=bool) for _ in range(strength)]
        for r in reach:
            r[0] = True
        for b in range(n_basic):
            unit = np.zeros(n_basic, dtype=np.int64)
            unit[b] = 1
            reach = self._extend(reach, unit)
        self.base_reach = reach

    def _extend(self, reach: List[np.ndarray], column: np.ndarray) -> List[np.ndarray]:
        out = [r.copy() for r in reach]
        for j in range(len(reach) - 1, 0, -1):
            idx = np.flatnonzero(reach[j - 1])
            base = self.vectors[idx]
            for a in (1, 2):
                shifted = (base + a * column) % FIELD_ORDER
                out[j][shifted @ self.powers] = True
        return out

    def run(self, candidates: Sequence[int]) -> Optional[List[int]]:
        self.nodes = 0
        return self._dfs(self.base_reach, list(candidates), 0, [])

    def _dfs(self, reach, candidates, start, chosen) -> Optional[List[int]]:
        if len(chosen) == self.n_added:
            return chosen
        last = self.strength - 1
        for pos in range(start, len(candidates)):
            if len(candidates) - pos < self.n_added - len(chosen):
                return None
            if self.nodes >= self.budget:
                return None
            self.nodes += 1
            c = candidates[pos]
            if reach[last][c]:
                continue
            found = self._dfs(self._extend(reach, self.vectors[c]), candidates, pos + 1, chosen + [c])
            if found is not None:
                return found
        return None


def generate_regular_design(
    n_factors: int,
    n_basic: int,
    min_resolution: int,
    seed: int = 0,
    factor_ids: Optional[Sequence[str]] = None,
    candidate_budget: int = DEFAULT_CANDIDATE_BUDGET,
    restarts: int = DEFAULT_RESTARTS,
) -> DesignMatrix:
    """Build a 3^n_basic-run regular design with minimum defining-word length >= min_resolution.

    Restart 0 scans candidate generator columns in lexicographic order; later
    restarts scan seeded random permutations. The node budget is shared
    evenly between restarts. Raises InfeasibleDesign when the Rao bound rules
    the design out or the budget is exhausted.
    """
    if n_factors < 3:
        raise ValueError(f"n_factors must be at least 3, got {n_factors}")
    if not 1 <= n_basic <= n_factors:
        raise ValueError(f"n_basic must lie in 1..n_factors, got {n_basic}")
    if min_resolution < 3:
        raise ValueError(f"min_resolution must be at least 3, got {min_resolution}")
    if FIELD_ORDER ** n_basic < 1 + 2 * n_factors:
        raise ValueError(
            f"3^{n_basic} runs cannot hold {n_factors} factors at resolution III (Rao bound)"
        )
    if factor_ids is None:
        if n_factors > len(FACTOR_IDS):
            raise ValueError("factor_ids are required beyond the default A-K table")
        factor_ids = FACTOR_IDS[:n_factors]
    if len(factor_ids) != n_factors:
        raise ValueError("factor_ids length must equal n_factors")

    n_runs = FIELD_ORDER ** n_basic
    n_added = n_factors - n_basic
    strength = min_resolution - 1
    basic = _all_vectors(n_basic)

    if n_added == 0:
        gens = np.eye(n_basic, dtype=np.int64)
        logger.info("full factorial: %d runs, %d factors", n_runs, n_factors)
        return DesignMatrix(basic, tuple(factor_ids), gens, seed)

    needed = rao_bound(n_factors, min(strength, n_factors))
    if n_runs < needed:
        raise InfeasibleDesign(
            f"{n_factors} factors at resolution {min_resolution} need at least {needed} runs "
            f"(Rao bound), but 3^{n_basic} = {n_runs}"
        )

    candidates = [
        i for i, v in enumerate(basic)
        if _is_normalized(v) and np.count_nonzero(v) >= 2
    ]
    search = _GeneratorSearch(n_basic, n_added, strength, max(1, candidate_budget // max(1, restarts)))
    rng = np.random.default_rng(seed)
    spent = 0
    for attempt in range(max(1, restarts)):
        order = candidates if attempt == 0 else [candidates[i] for i in rng.permutation(len(candidates))]
        chosen = search.run(order)
        spent += search.nodes
        if chosen is None:
            logger.debug("generator search restart %d exhausted after %d nodes", attempt, search.nodes)
            continue
        added = basic[chosen]
        gens = np.vstack([np.eye(n_basic, dtype=np.int64), added])
        codes = (basic @ gens.T) % FIELD_ORDER
        design = DesignMatrix(codes, tuple(factor_ids), gens, seed)
        report = word_length_pattern(design)
        if report.resolution >= min_resolution:
            logger.info(
                "design %d runs x %d factors, resolution %s after %d search nodes",
                n_runs, n_factors, report.resolution, spent,
            )
            return design
    raise InfeasibleDesign(
        f"no generator set for {n_factors} factors in {n_runs} runs reaches resolution "
        f"{min_resolution} within {spent} search nodes"
    )


def _split_generators(design: DesignMatrix) -> Tuple[List[int], List[int]]:
    """Locate basic columns (unit generators) and added columns."""
    gens = design.generators
    k = gens.shape[1]
    basic_cols: List[int] = []
    for b in range(k):
        unit = np.zeros(k, dtype=np.int8)
        unit[b] = 1
        matches = [j for j in range(gens.shape[0]) if np.array_equal(gens[j], unit)]
        if not matches:
            raise NotRegular(f"no basic column for basic factor {b}")
        basic_cols.append(matches[0])
    added = [j for j in range(gens.shape[0]) if j not in basic_cols]
    return basic_cols, added


def word_length_pattern(design: DesignMatrix) -> StrengthReport:
    """Enumerate the defining-contrast subgroup and report its word length pattern.

    Words w and 2w define the same contrast and are counted once.
    """
    if design.generators is None:
        raise NotRegular("word_length_pattern needs a regular design with generators")
    basic_cols, added = _split_generators(design)
    n = design.n_factors
    p = len(added)
    if p == 0:
        return StrengthReport(n, RESOLUTION_INFINITE, {}, 1)

    basis = np.zeros((p, n), dtype=np.int64)
    for row, j in enumerate(added):
        for b, col in enumerate(basic_cols):
            basis[row, col] = design.generators[j, b]
        basis[row, j] = FIELD_ORDER - 1
    combos = _all_vectors(p)
    words = (combos @ basis) % FIELD_ORDER
    lengths = np.count_nonzero(words, axis=1)[1:]
    counts = np.bincount(lengths, minlength=n + 1)
    pattern = {int(length): int(c // 2) for length, c in enumerate(counts) if c}
    resolution = min(pattern)
    return StrengthReport(resolution - 1, float(resolution), pattern, len(words))


def verify_strength(design: Union[DesignMatrix, np.ndarray], t: int) -> StrengthCheck:
    """Check every t-column projection is a full factorial replicated n_runs/3^t times."""
    codes = np.asarray(design.codes if isinstance(design, DesignMatrix) else design, dtype=np.int64)
    n_runs, n_factors = codes.shape
    if not 1 <= t <= n_factors:
        raise ValueError(f"t must lie in 1..{n_factors}, got {t}")
    cells = FIELD_ORDER ** t
    subsets = np.array(list(itertools.combinations(range(n_factors), t)), dtype=np.int64)
    if n_runs % cells:
        return StrengthCheck(False, [StrengthViolation(tuple(int(c) for c in s), 0, 0) for s in subsets])
    expected = n_runs // cells
    # cell index of every run in every projection, offset per projection for a single bincount
    cell = codes[:, subsets] @ _powers(t)
    offsets = np.arange(len(subsets), dtype=np.int64) * cells
    counts = np.bincount((cell + offsets).ravel(), minlength=len(subsets) * cells).reshape(len(subsets), cells)
    bad = np.flatnonzero(np.any(counts != expected, axis=1))
    violations = [
        StrengthViolation(tuple(int(c) for c in subsets[i]), int(counts[i].min()), int(counts[i].max()))
        for i in bad
    ]
    return StrengthCheck(not violations, violations)


def design_strength(design: Union[DesignMatrix, np.ndarray], max_t: Optional[int] = None) -> int:
    """Largest t (up to max_t) for which verify_strength passes."""
    codes = design.codes if isinstance(design, DesignMatrix) else np.asarray(design)
    limit = codes.shape[1] if max_t is None else min(max_t, codes.shape[1])
    strength = 0
    for t in range(1, limit + 1):
        if not verify_strength(codes, t).ok:
            break
        strength = t
    return strength
