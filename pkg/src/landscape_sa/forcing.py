"""
Synthetic daily meteorology for the virtual landscape.

Provides:
- Forcing: daily precipitation (mm) and air temperature (degC) series.
- Forcing.synthetic(seed): humid, low-contrast climate; seasonal temperature
  sinusoid plus seeded wet-day occurrence and gamma-distributed rain depths.
- Forcing.to_csv / Forcing.from_csv: fixture file with columns day,precip_mm,temp_C.

The fixture is generated once and reused unchanged by every run of a design,
so factor effects are not mixed with weather variability.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365
MONTH_LENGTHS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
MONTH_OF_DOY = np.repeat(np.arange(12), MONTH_LENGTHS)
FORCING_COLUMNS = ("day", "precip_mm", "temp_C")


@dataclass(frozen=True, eq=False)
class Forcing:
    precip_mm: np.ndarray
    temp_c: np.ndarray

    def __post_init__(self):
        precip = np.asarray(self.precip_mm, dtype=np.float64)
        temp = np.asarray(self.temp_c, dtype=np.float64)
        if precip.ndim != 1 or precip.shape != temp.shape:
            raise ValueError("precipitation and temperature must be 1-D series of equal length")
        if not (np.all(np.isfinite(precip)) and np.all(np.isfinite(temp))):
            raise ValueError("forcing series must be finite")
        if np.any(precip < 0):
            raise ValueError("precipitation must be non-negative")
        precip.setflags(write=False)
        temp.setflags(write=False)
        object.__setattr__(self, "precip_mm", precip)
        object.__setattr__(self, "temp_c", temp)

    @property
    def n_days(self) -> int:
        return int(self.precip_mm.shape[0])

    @classmethod
    def synthetic(
        cls,
        seed: int,
        years: int = 5,
        mean_temp: float = 11.0,
        temp_amplitude: float = 5.5,
        wet_day_probability: float = 0.5,
        mean_wet_depth: float = 4.0,
    ) -> "Forcing":
        rng = np.random.default_rng(seed)
        n = years * DAYS_PER_YEAR
        doy = np.arange(n) % DAYS_PER_YEAR
        temp = mean_temp + temp_amplitude * np.sin(2.0 * np.pi * (doy - 110) / DAYS_PER_YEAR)
        temp = temp + rng.normal(0.0, 1.5, size=n)
        # wetter winters
        p_wet = np.clip(wet_day_probability + 0.12 * np.cos(2.0 * np.pi * (doy - 15) / DAYS_PER_YEAR), 0.05, 0.95)
        wet = rng.random(n) < p_wet
        shape = 0.8
        depth = rng.gamma(shape, mean_wet_depth / shape, size=n)
        precip = np.where(wet, depth, 0.0)
        logger.debug("synthetic forcing seed=%d: %.0f mm over %d days", seed, precip.sum(), n)
        return cls(np.round(precip, 3), np.round(temp, 3))

    @classmethod
    def dry(cls, n_days: int, temp_c: float = 11.0) -> "Forcing":
        return cls(np.zeros(n_days), np.full(n_days, temp_c))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"day": np.arange(self.n_days), "precip_mm": self.precip_mm, "temp_C": self.temp_c},
            columns=list(FORCING_COLUMNS),
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.3f")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Forcing":
        frame = pd.read_csv(path)
        missing = [c for c in FORCING_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"forcing file {path} lacks columns: {', '.join(missing)}")
        frame = frame.sort_values("day")
        return cls(frame["precip_mm"].to_numpy(), frame["temp_C"].to_numpy())
