"""
Input factors of the landscape experiment.

Provides:
- FactorSpec: one 3-level input factor (id, description, levels, unit, kind).
- FACTOR_TABLE: the eleven default factors A-K.
- factor_table(overrides): copy of the defaults with per-factor level overrides.

Level codes 0/1/2 map to the listed levels in order. Factor K is the yearly
fertilizer amount X = 180 kg(Nr)/ha discretized to {0.8X, X, 1.2X}.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

Level = Union[float, str]

FACTOR_KINDS = ("resolution", "physical", "management")
FERTILIZER_TYPES = ("OL", "OF", "INO")
BASE_FERTILIZER_AMOUNT = 180.0


@dataclass(frozen=True)
class FactorSpec:
    id: str
    description: str
    levels: Tuple[Level, Level, Level]
    unit: str
    kind: str

    def __post_init__(self):
        if len(self.id) != 1 or not self.id.isalpha() or not self.id.isupper():
            raise ValueError(f"factor id must be a single upper-case letter, got {self.id!r}")
        if len(self.levels) != 3:
            raise ValueError(f"factor {self.id} needs exactly 3 levels, got {len(self.levels)}")
        if len(set(self.levels)) != 3:
            raise ValueError(f"factor {self.id} levels must be pairwise distinct: {self.levels}")
        if self.kind not in FACTOR_KINDS:
            raise ValueError(f"factor {self.id} kind must be one of {FACTOR_KINDS}, got {self.kind!r}")

    def level(self, code: int) -> Level:
        if code not in (0, 1, 2):
            raise ValueError(f"level code must be 0, 1 or 2, got {code}")
        return self.levels[code]

    def code_of(self, value: Level) -> int:
        for code, level in enumerate(self.levels):
            if level == value:
                return code
        raise ValueError(f"{value!r} is not a level of factor {self.id} {self.levels}")

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "description": self.description,
            "levels": list(self.levels),
            "unit": self.unit,
            "kind": self.kind,
        }


FACTOR_TABLE: Tuple[FactorSpec, ...] = (
    FactorSpec("A", "Mesh width (horizontal resolution)", (12.5, 25.0, 50.0), "m", "resolution"),
    FactorSpec("B", "Soil depth (vertical resolution)", (0.02, 0.05, 0.1), "m", "resolution"),
    FactorSpec("C", "Lateral transmissivity of soil", (2.0, 8.0, 15.0), "m2/day", "physical"),
    FactorSpec("D", "Depth of exponential decrease in transmissivity", (0.001, 0.01, 0.1), "m", "physical"),
    FactorSpec("E", "Surface layer (HS) depth", (0.2, 0.3, 0.4), "m", "physical"),
    FactorSpec("F", "Total porosity of surface layer threshold", (0.12, 0.24, 0.48), "-", "physical"),
    FactorSpec("G", "Ratio of microporosity to macroporosity", (0.5, 1.0, 1.2), "-", "physical"),
    FactorSpec("H", "Intermediate layer (HI) depth", (0.6, 0.9, 1.2), "m", "physical"),
    FactorSpec("I", "Ratio of microporosity HI / HS", (1.0, 0.75, 0.5), "-", "physical"),
    FactorSpec("J", "Type of nitrogen fertilization", FERTILIZER_TYPES, "-", "management"),
    FactorSpec(
        "K",
        "Amount of nitrogen in fertilization",
        (0.8 * BASE_FERTILIZER_AMOUNT, BASE_FERTILIZER_AMOUNT, 1.2 * BASE_FERTILIZER_AMOUNT),
        "kg(Nr)/ha",
        "management",
    ),
)

FACTOR_IDS: Tuple[str, ...] = tuple(f.id for f in FACTOR_TABLE)


def check_unique_ids(factors: Sequence[FactorSpec]) -> None:
    seen = set()
    for f in factors:
        if f.id in seen:
            raise ValueError(f"duplicate factor id {f.id!r}")
        seen.add(f.id)


def factor_table(overrides: Optional[Mapping[str, Sequence[Level]]] = None) -> Tuple[FactorSpec, ...]:
    """Return the default table with per-factor level overrides applied."""
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(FACTOR_IDS))
    if unknown:
        raise ValueError(f"level overrides for unknown factors: {', '.join(unknown)}")
    table = []
    for spec in FACTOR_TABLE:
        if spec.id in overrides:
            levels = tuple(overrides[spec.id])
            if spec.id == "J" and set(levels) != set(FERTILIZER_TYPES):
                raise ValueError(f"factor J levels must be a permutation of {FERTILIZER_TYPES}")
            spec = replace(spec, levels=levels)
        table.append(spec)
    return tuple(table)


def by_id(factors: Sequence[FactorSpec]) -> Dict[str, FactorSpec]:
    return {f.id: f for f in factors}


def select(factors: Sequence[FactorSpec], ids: Sequence[str]) -> List[FactorSpec]:
    lookup = by_id(factors)
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise ValueError(f"unknown factor ids: {', '.join(missing)}")
    chosen = [lookup[i] for i in ids]
    check_unique_ids(chosen)
    return chosen
