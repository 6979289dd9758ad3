"""Report model shared by every command, with its JSON and CSV renderings."""
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence
import csv
import hashlib
import json
import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from ..core.config import settings

# Configure logging
logger = logging.getLogger(__name__)

LEDGER_STATES = ("verified", "probed", "overridden", "n/a", "failed")


def plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(value, "to_dict"):
        return plain(value.to_dict())
    return value


class Report(BaseModel):
    schema_version: int = Field(default_factory=lambda: settings.SCHEMA_VERSION)
    command: List[str]
    input_digest: Optional[str] = None
    results: Dict[str, Any] = Field(default_factory=dict)
    ledger: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
    exit_code: int = 0
    timing: Dict[str, float] = Field(default_factory=dict)
    determinism_digest: Optional[str] = None

    def stable_json(self) -> str:
        """Canonical JSON without timing or digest; the determinism digest is its hash."""
        data = plain(self.model_dump(exclude={"timing", "determinism_digest"}))
        return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def finalize(self) -> "Report":
        for key, state in self.ledger.items():
            if state not in LEDGER_STATES:
                raise ValueError(f"ledger entry {key} has unknown state '{state}'")
        self.results = plain(self.results)
        self.determinism_digest = hashlib.sha256(self.stable_json().encode("utf-8")).hexdigest()
        return self

    def to_json(self) -> str:
        return json.dumps(plain(self.model_dump()), sort_keys=True, indent=2, ensure_ascii=False)

    def summary(self) -> str:
        """Human-readable rendering for terminals."""
        lines = [f"varcalc {' '.join(self.command)}  (exit {self.exit_code})"]
        for key, value in self.results.items():
            text = json.dumps(plain(value), sort_keys=True, ensure_ascii=False)
            lines.append(f"  {key}: {text if len(text) <= 400 else text[:397] + '...'}")
        if self.ledger:
            lines.append("  hypotheses: " + ", ".join(f"{k}={v}" for k, v in sorted(self.ledger.items())))
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        return "\n".join(lines)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]]):
    """Comma-separated, `.` decimal point, repr-precision floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    logger.info(f"wrote {len(rows)} rows to {path}")


class WarningCollector(logging.Handler):
    """Copies WARNING records from the package loggers into a report."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord):
        message = record.getMessage()
        if message not in self.messages:
            self.messages.append(message)


@contextmanager
def collect_warnings() -> Iterator[WarningCollector]:
    root = logging.getLogger("varcalc")
    handler = WarningCollector()
    root.addHandler(handler)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
