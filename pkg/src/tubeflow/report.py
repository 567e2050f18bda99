"""Run reports: per-check outcomes with witnesses, JSON and CSV emission."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    value: float | None = None
    detail: str = ""
    witness: dict | None = None


@dataclass
class RunReport:
    config_hash: str
    tau: float | None = None
    constants: dict = field(default_factory=dict)
    checks: list[CheckOutcome] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def record(self, name: str, passed: bool, value=None, detail: str = "",
               witness: dict | None = None) -> CheckOutcome:
        outcome = CheckOutcome(name, bool(passed),
                               None if value is None else float(value),
                               detail, witness)
        self.checks.append(outcome)
        return outcome

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tau": self.tau,
            "passed": self.passed,
            "constants": self.constants,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value,
                 "detail": c.detail, "witness": c.witness}
                for c in self.checks
            ],
            "timings": self.timings,
            "outputs": self.outputs,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    """Deterministic CSV: repr-formatted floats, newline-terminated rows."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
