"""Check reports shared by the verification layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps is stable."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    # bool first: Python bools are ints and would otherwise serialize as 0/1
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


@dataclass
class CheckReport:
    """Outcome of one verification: residuals, certificates, telemetry.

    `hypotheses` records which assumptions of the verified statement held so
    a failure can be read as hypothesis violation rather than a broken rule.
    """

    check: str
    passed: bool
    max_residual: float
    per_direction: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    hypotheses: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return jsonable({
            "check": self.check,
            "pass": self.passed,
            "max_residual": self.max_residual,
            "per_direction": self.per_direction,
            "warnings": self.warnings,
            "hypotheses": self.hypotheses,
            "details": self.details,
        })
