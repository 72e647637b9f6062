"""
ReflectLab - Core Module
========================
Shared configuration, logging, errors and artifact storage for the reflected
random walk toolkit.
"""

import csv
import dataclasses
import io
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

__version__ = "0.3.1"

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]
)
logger = logging.getLogger('reflectlab')


# =============================================================================
# CUSTOM EXCEPTIONS
# =============================================================================

class ReflectLabError(Exception):
    """Base class for every error raised by reflectlab."""
    exit_code = 1


class ValidationError(ReflectLabError, ValueError):
    """Raised when an input violates a precondition.

    Covers bad law masses, degenerate laws, wrong law kinds for an operation
    and invalid experiment configuration. The CLI maps it to exit status 2.
    """
    exit_code = 2


class LawParseError(ValidationError):
    """Raised when a distribution-spec string does not follow the grammar."""


class NumericError(ReflectLabError, ArithmeticError):
    """Raised when a numeric target cannot be met.

    Examples are a quadrature error above target, a non-positive 1 - chf(t)
    on the diagnostic grid, or the ladder progress watchdog firing.
    The CLI maps it to exit status 3.
    """
    exit_code = 3


# =============================================================================
# CONFIGURATION
# =============================================================================

STOCHASTIC_COMMANDS = frozenset({
    "simulate walk", "simulate ensemble", "wiener-hopf verify",
    "contractivity trace", "contractivity vote",
})


@dataclass
class ExperimentConfig:
    """Centralized configuration for a single reflectlab run."""

    command: str = ""
    law: str = ""
    x0: float = 0.0
    y0: Optional[float] = None
    steps: int = 1000
    paths: int = 1
    workers: int = 1
    seed: Optional[int] = None
    output_dir: str = "."

    # Command-specific knobs
    mode: str = "reflected"
    x_max: float = 1e4
    grid_points: int = 512
    bins: int = 100
    window: Optional[List[float]] = None
    interval: Optional[List[float]] = None
    M: Optional[float] = None
    n_max: int = 10_000
    t_min: float = 1e-4
    t_max: float = 1e-2
    points: int = 32
    epochs: int = 10_000
    burn_in: int = 0
    mu0: Optional[str] = None
    thresholds: Optional[List[float]] = None

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ExperimentConfig':
        """Create config from a mapping, rejecting unknown keys."""
        if not isinstance(data, Mapping):
            raise ValidationError("Config document must be a JSON object")

        unknown = sorted(set(data) - set(cls.field_names()))
        if unknown:
            raise ValidationError(f"Unknown config fields: {', '.join(unknown)}")

        return cls(**dict(data))

    @classmethod
    def from_file(cls, filepath: str) -> 'ExperimentConfig':
        """Load configuration from a single JSON document."""
        return cls.from_dict(Storage.load_json(filepath))

    def merged(self, overrides: Mapping[str, Any]) -> 'ExperimentConfig':
        """Return a copy with every non-None override applied (flags win)."""
        unknown = sorted(set(overrides) - set(self.field_names()))
        if unknown:
            raise ValidationError(f"Unknown config fields: {', '.join(unknown)}")

        updates = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **updates)

    def validate(self) -> List[str]:
        """Validate configuration and return the list of problems found."""
        problems: List[str] = []

        for name in ("steps", "paths", "workers", "bins", "n_max", "points", "grid_points", "epochs"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                problems.append(f"{name} must be an integer >= 1 (got {value!r})")

        if self.mode not in ("reflected", "classical"):
            problems.append(f"mode must be reflected or classical (got {self.mode!r})")
        if self.burn_in < 0:
            problems.append(f"burn_in must be >= 0 (got {self.burn_in})")
        if self.x_max <= 0:
            problems.append(f"x_max must be positive (got {self.x_max})")
        if not 0 < self.t_min < self.t_max:
            problems.append(f"need 0 < t_min < t_max (got {self.t_min}, {self.t_max})")

        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            problems.append("seed is required for stochastic commands")
        if self.seed is not None and not 0 <= int(self.seed) < 2 ** 64:
            problems.append("seed must fit in an unsigned 64-bit integer")

        for name in ("window", "interval"):
            value = getattr(self, name)
            if value is not None and (len(value) != 2 or not value[0] < value[1]):
                problems.append(f"{name} must be [lo, hi] with lo < hi (got {value!r})")

        return problems

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


# =============================================================================
# STORAGE
# =============================================================================

def format_value(value: Any) -> str:
    """Render one CSV cell; floats use the shortest round-trip repr."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):  # numpy scalars
        return format_value(value.item())
    return str(value)


class Storage:
    """File-based artifact storage with atomic writes."""

    @staticmethod
    def load_json(filepath: str) -> Any:
        """Load a JSON document; missing, empty or malformed files are validation errors."""
        file_path = Path(filepath)
        if not file_path.exists():
            raise ValidationError(f"File {filepath} does not exist")
        if file_path.stat().st_size == 0:
            raise ValidationError(f"File {filepath} is empty")

        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"File {filepath} is not valid JSON: {e}") from e

        logger.debug(f"Loaded {filepath}")
        return data

    @staticmethod
    def _atomic_write(filepath: str, text: str) -> None:
        """Write text to a temp file, fsync, then rename over the target."""
        file_path = Path(filepath)
        temp_file = file_path.with_suffix(f"{file_path.suffix}.tmp")

        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)

            with open(temp_file, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())

            temp_file.replace(file_path)
            logger.debug(f"Successfully saved {filepath}")

        finally:
            if temp_file.exists():
                try:
                    temp_file.unlink()
                except OSError:
                    pass

    @staticmethod
    def save_json(filepath: str, data: Any) -> None:
        """Save data to a JSON file atomically."""
        text = json.dumps(data, indent=2, ensure_ascii=False, default=_json_default)
        Storage._atomic_write(filepath, text + "\n")

    @staticmethod
    def save_csv(filepath: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        """Save rows to a CSV file atomically (header row, LF line endings)."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValidationError(
                    f"Row has {len(row)} cells but header has {len(header)}: {row!r}"
                )
            writer.writerow([format_value(v) for v in row])
        Storage._atomic_write(filepath, buffer.getvalue())


def _json_default(value: Any) -> Any:
    if hasattr(value, "item"):
        return value.item()
    if hasattr(value, "tolist"):
        return value.tolist()
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


# =============================================================================
# UTILITIES
# =============================================================================

class TimeManager:
    """Time-related utilities."""

    @staticmethod
    def now() -> datetime:
        """Get current datetime in UTC timezone."""
        return datetime.now(timezone.utc)


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run."""
    command: str
    config: Dict[str, Any]
    started_at: str
    version: str = __version__
    wall_clock_seconds: float = 0.0
    artifacts: List[str] = field(default_factory=list)
    calibration: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)
