"""
Runtime settings read from the environment.

Provides:
- RuntimeSettings.from_env() for process-level knobs that do not belong in the
  experiment document (parallelism, log level, default output directory).

Environment variables (all optional):
- LANDSA_JOBS: worker processes for simulation fan-out (positive integer)
- LANDSA_LOG_LEVEL: logging level name (DEBUG, INFO, WARNING, ...)
- LANDSA_OUT_DIR: default artifact directory
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


@dataclass(frozen=True)
class RuntimeSettings:
    """Process-level settings.

    Usage:
        settings = RuntimeSettings.from_env(jobs=args.jobs)
        logging.basicConfig(level=settings.log_level)
    """

    jobs: int = 1
    log_level: str = "INFO"
    out_dir: Optional[str] = None

    @classmethod
    def from_env(
        cls,
        jobs: Optional[int] = None,
        log_level: Optional[str] = None,
        out_dir: Optional[str] = None,
    ) -> "RuntimeSettings":
        """Build settings from explicit arguments, falling back to environment variables."""
        raw_jobs = jobs if jobs is not None else os.getenv("LANDSA_JOBS")
        level = log_level or os.getenv("LANDSA_LOG_LEVEL") or "INFO"
        out = out_dir or os.getenv("LANDSA_OUT_DIR") or None

        if raw_jobs in (None, ""):
            n_jobs = 1
        else:
            try:
                n_jobs = int(raw_jobs)
            except (TypeError, ValueError):
                raise ValueError(f"LANDSA_JOBS must be a positive integer, got {raw_jobs!r}")
        if n_jobs < 1:
            raise ValueError(f"LANDSA_JOBS must be a positive integer, got {n_jobs}")

        level = str(level).upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"LANDSA_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
        return cls(jobs=n_jobs, log_level=level, out_dir=out)

    def configure_logging(self) -> None:
        logging.basicConfig(
            level=getattr(logging, self.log_level),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
